use serde::{Deserialize, Serialize};

use crate::data::preprocess::median;
use crate::data::{CableId, Exclusion, Line, PairId, Scenario, SourceId};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Thresholds {
    /// Relative cut: suspect below `tau_rel * median`.
    pub tau_rel: f64,
    /// Absolute cut; `None` leaves only the relative rule.
    pub tau_abs: Option<f64>,
    /// Minimum test-pre accuracy for a scenario's model to be trusted.
    /// Off by default.
    pub min_pre_accuracy: Option<f64>,
    /// Break ties between both cables of one pair by the direction of the
    /// pair's ratio shift.
    pub use_ratio_direction: bool,
}

impl Default for Thresholds {
    fn default() -> Self {
        Self {
            tau_rel: 0.6,
            tau_abs: Some(0.45),
            min_pre_accuracy: None,
            use_ratio_direction: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SuspectEntry {
    pub class: SourceId,
    pub accuracy: f64,
    /// `(median - accuracy) / median`.
    pub deficit: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SuspectSet {
    pub scenario: Scenario,
    pub median: f64,
    pub threshold: f64,
    /// Ascending by accuracy, then by id.
    pub entries: Vec<SuspectEntry>,
    pub excluded: Vec<Exclusion>,
    /// Every class fell below the threshold: a model-quality problem rather
    /// than a damage signal.
    pub inconclusive: bool,
}

impl SuspectSet {
    pub fn ids(&self) -> Vec<SourceId> {
        self.entries.iter().map(|e| e.class.clone()).collect()
    }

    pub fn contains(&self, id: &SourceId) -> bool {
        self.entries.iter().any(|e| &e.class == id)
    }

    pub fn deficit_of(&self, id: &SourceId) -> Option<f64> {
        self.entries.iter().find(|e| &e.class == id).map(|e| e.deficit)
    }
}

/// Flags classes whose accuracy is far below the rest:
/// `acc < min(tau_abs, tau_rel * median)` where the median runs over the
/// non-excluded classes.
pub fn flag_suspects(
    scenario: Scenario,
    accuracies: &[(SourceId, f64)],
    excluded: &[Exclusion],
    th: &Thresholds,
) -> Result<SuspectSet> {
    let is_excluded = |id: &SourceId| excluded.iter().any(|e| &e.source == id);
    let live: Vec<&(SourceId, f64)> = accuracies.iter().filter(|(id, _)| !is_excluded(id)).collect();
    if live.len() < 3 {
        return Err(Error::Data(format!(
            "{scenario}: need at least 3 non-excluded classes to flag suspects, got {}",
            live.len()
        )));
    }
    if let Some((id, a)) = live.iter().find(|(_, a)| !(0.0..=1.0).contains(a)) {
        return Err(Error::Data(format!("{scenario}: accuracy {a} of {id} is not in [0, 1]")));
    }
    let accs: Vec<f64> = live.iter().map(|(_, a)| *a).collect();
    let med = median(&accs).expect("non-empty");
    let rel = th.tau_rel * med;
    let threshold = th.tau_abs.map_or(rel, |abs| abs.min(rel));
    let mut entries: Vec<SuspectEntry> = live
        .iter()
        .filter(|(_, a)| *a < threshold)
        .map(|(id, a)| SuspectEntry {
            class: id.clone(),
            accuracy: *a,
            deficit: if med > 0.0 { (med - a) / med } else { 0.0 },
        })
        .collect();
    entries.sort_by(|a, b| a.accuracy.total_cmp(&b.accuracy).then_with(|| a.class.cmp(&b.class)));
    let inconclusive = entries.len() == live.len();
    let mut excluded = excluded.to_vec();
    excluded.sort_by(|a, b| a.source.cmp(&b.source));
    Ok(SuspectSet {
        scenario,
        median: med,
        threshold,
        entries,
        excluded,
        inconclusive,
    })
}

/// Median pair ratio before and after the damage date.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RatioShift {
    pub pair: PairId,
    pub pre_median: f64,
    pub post_median: f64,
}

impl RatioShift {
    /// The cable whose force share fell: upriver if the up/down ratio
    /// dropped, downriver if it rose.
    pub fn weakened(&self) -> Option<CableId> {
        let f = self.post_median / self.pre_median;
        if !f.is_finite() || f == 1.0 {
            return None;
        }
        Some(self.pair.cable(if f < 1.0 { Line::Upriver } else { Line::Downriver }))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Confidence {
    High,
    Reduced,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Candidate {
    pub cable: CableId,
    pub forces_deficit: f64,
    pub ratio_deficit: f64,
    pub score: f64,
    /// Set when the pair's ratio shift points at this cable.
    #[serde(default)]
    pub ratio_direction: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "outcome", rename_all = "lowercase")]
pub enum Verdict {
    Conclusive {
        cable: CableId,
        confidence: Confidence,
        /// Ranked, best first.
        candidates: Vec<Candidate>,
    },
    Inconclusive {
        reason: String,
        forces_suspects: Vec<SourceId>,
        ratio_suspects: Vec<SourceId>,
    },
}

impl Verdict {
    pub fn cable(&self) -> Option<&CableId> {
        match self {
            Verdict::Conclusive { cable, .. } => Some(cable),
            Verdict::Inconclusive { .. } => None,
        }
    }
}

/// Intersects cable suspects with pair suspects: candidates are suspect
/// cables whose pair is also suspect, ranked by summed deficit. One
/// candidate gives a high-confidence verdict, several a reduced one.
pub fn combine_scenarios(s1: &SuspectSet, s2: &SuspectSet) -> Verdict {
    combine_with_evidence(s1, s2, &[], false)
}

/// [`combine_scenarios`] with optional ratio-shift evidence. When both
/// cables of one pair are candidates and `use_direction` is set, the cable
/// the shift points at is ranked first within that pair.
pub fn combine_with_evidence(s1: &SuspectSet, s2: &SuspectSet, shifts: &[RatioShift], use_direction: bool) -> Verdict {
    let inconclusive = |reason: String| Verdict::Inconclusive {
        reason,
        forces_suspects: sorted_ids(s1),
        ratio_suspects: sorted_ids(s2),
    };
    if s1.inconclusive || s2.inconclusive {
        return inconclusive("every class fell below the threshold in at least one scenario".into());
    }
    let mut candidates: Vec<Candidate> = s1
        .entries
        .iter()
        .filter_map(|e| {
            let cable = e.class.as_cable()?;
            let pair = SourceId::Pair(cable.pair());
            let ratio_deficit = s2.deficit_of(&pair)?;
            let direction = shifts
                .iter()
                .find(|s| s.pair == cable.pair())
                .and_then(RatioShift::weakened)
                .is_some_and(|w| &w == cable);
            Some(Candidate {
                cable: cable.clone(),
                forces_deficit: e.deficit,
                ratio_deficit,
                score: e.deficit + ratio_deficit,
                ratio_direction: direction,
            })
        })
        .collect();
    if candidates.is_empty() {
        return inconclusive(if s1.entries.is_empty() && s2.entries.is_empty() {
            "no suspects in either scenario: no damage indicated".into()
        } else {
            "no suspect cable belongs to a suspect pair".into()
        });
    }
    candidates.sort_by(|a, b| b.score.total_cmp(&a.score).then_with(|| a.cable.cmp(&b.cable)));
    if use_direction {
        // a pair whose two cables are both candidates: put the indicated
        // cable where the better-ranked of the two stood
        let pairs: Vec<PairId> = candidates.iter().map(|c| c.cable.pair()).collect();
        for i in 0..candidates.len() {
            if let Some(j) = (i + 1..candidates.len()).find(|&j| pairs[j] == pairs[i]) {
                if candidates[j].ratio_direction && !candidates[i].ratio_direction {
                    candidates.swap(i, j);
                }
            }
        }
    }
    let confidence = if candidates.len() == 1 { Confidence::High } else { Confidence::Reduced };
    Verdict::Conclusive {
        cable: candidates[0].cable.clone(),
        confidence,
        candidates,
    }
}

fn sorted_ids(s: &SuspectSet) -> Vec<SourceId> {
    let mut v = s.ids();
    v.sort();
    v
}
