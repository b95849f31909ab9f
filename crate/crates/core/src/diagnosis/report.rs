use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::suspects::{combine_with_evidence, flag_suspects, RatioShift, SuspectSet, Thresholds, Verdict};
use crate::data::{Exclusion, Line, Scenario, SourceId};
use crate::error::{Error, Result};

pub const REPORT_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassAccuracy {
    pub class: SourceId,
    /// `None` when not applicable (excluded or no test segments).
    pub accuracy: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioReport {
    pub scenario: Scenario,
    /// Overall accuracy on held-out pre-damage data.
    pub pre_accuracy: Option<f64>,
    /// Overall accuracy on post-damage data.
    pub post_accuracy: Option<f64>,
    pub per_class: Vec<ClassAccuracy>,
    pub suspects: SuspectSet,
}

impl ScenarioReport {
    /// Flags suspects among the classes with an accuracy; classes without
    /// one that are not already excluded are excluded as not applicable.
    pub fn new(
        scenario: Scenario,
        pre_accuracy: Option<f64>,
        post_accuracy: Option<f64>,
        per_class: Vec<ClassAccuracy>,
        excluded: &[Exclusion],
        th: &Thresholds,
    ) -> Result<Self> {
        let mut excluded = excluded.to_vec();
        for c in &per_class {
            if c.accuracy.is_none() && !excluded.iter().any(|e| e.source == c.class) {
                excluded.push(Exclusion {
                    source: c.class.clone(),
                    reason: "not applicable".into(),
                });
            }
        }
        let accs: Vec<(SourceId, f64)> = per_class
            .iter()
            .filter_map(|c| c.accuracy.map(|a| (c.class.clone(), a)))
            .collect();
        let suspects = flag_suspects(scenario, &accs, &excluded, th)?;
        Ok(Self {
            scenario,
            pre_accuracy,
            post_accuracy,
            per_class,
            suspects,
        })
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ReportProvenance {
    #[serde(default)]
    pub dataset_manifest: Option<String>,
    #[serde(default)]
    pub checkpoints: Vec<String>,
    #[serde(default)]
    pub note: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiagnosisReport {
    pub schema_version: u32,
    pub scenarios: Vec<ScenarioReport>,
    #[serde(default)]
    pub ratio_shifts: Vec<RatioShift>,
    pub thresholds: Thresholds,
    pub verdict: Verdict,
    pub provenance: ReportProvenance,
}

impl DiagnosisReport {
    pub fn scenario(&self, s: Scenario) -> Option<&ScenarioReport> {
        self.scenarios.iter().find(|r| r.scenario == s)
    }
}

/// Assembles the report and its verdict from per-scenario results.
pub fn diagnose(
    scenarios: Vec<ScenarioReport>,
    ratio_shifts: Vec<RatioShift>,
    thresholds: Thresholds,
    provenance: ReportProvenance,
) -> DiagnosisReport {
    let find = |s| scenarios.iter().find(|r| r.scenario == s);
    let ids = |r: Option<&ScenarioReport>| {
        let mut v = r.map(|r| r.suspects.ids()).unwrap_or_default();
        v.sort();
        v
    };
    let (forces, ratios) = (find(Scenario::Forces), find(Scenario::Ratios));
    let untrusted = scenarios.iter().find(|r| {
        thresholds
            .min_pre_accuracy
            .is_some_and(|floor| r.pre_accuracy.is_some_and(|a| a < floor))
    });
    let verdict = match (forces, ratios, untrusted) {
        (_, _, Some(r)) => Verdict::Inconclusive {
            reason: format!(
                "{} model accuracy {:.2} is below the trust floor {:.2}",
                r.scenario,
                r.pre_accuracy.unwrap_or(0.0),
                thresholds.min_pre_accuracy.unwrap_or(0.0)
            ),
            forces_suspects: ids(forces),
            ratio_suspects: ids(ratios),
        },
        (Some(f), Some(r), None) => {
            combine_with_evidence(&f.suspects, &r.suspects, &ratio_shifts, thresholds.use_ratio_direction)
        }
        _ => Verdict::Inconclusive {
            reason: "both scenarios are needed for a cable-level verdict".into(),
            forces_suspects: ids(forces),
            ratio_suspects: ids(ratios),
        },
    };
    DiagnosisReport {
        schema_version: REPORT_SCHEMA_VERSION,
        scenarios,
        ratio_shifts,
        thresholds,
        verdict,
        provenance,
    }
}

#[derive(Deserialize)]
struct TableFixture {
    pre_accuracy: Option<f64>,
    post_accuracy: Option<f64>,
    per_class: BTreeMap<String, Option<f64>>,
}

const PUBLISHED_TABLES: &str = include_str!("../../fixtures/published_tables.json");

/// Runs the decision rule on the bundled published accuracy tables, where
/// `null` entries are the classes whose sensors failed.
pub fn replay_published_tables(th: &Thresholds) -> Result<DiagnosisReport> {
    let tables: BTreeMap<Scenario, TableFixture> = serde_json::from_str(PUBLISHED_TABLES)?;
    let mut scenarios = Vec::new();
    for (scenario, t) in tables {
        let mut per_class = Vec::new();
        let mut excluded = Vec::new();
        for (id, acc) in t.per_class {
            let class: SourceId = id.parse()?;
            if acc.is_none() {
                excluded.push(Exclusion {
                    source: class.clone(),
                    reason: "sensor failure".into(),
                });
            }
            per_class.push(ClassAccuracy { class, accuracy: acc });
        }
        per_class.sort_by(|a, b| a.class.cmp(&b.class));
        scenarios.push(ScenarioReport::new(scenario, t.pre_accuracy, t.post_accuracy, per_class, &excluded, th)?);
    }
    Ok(diagnose(
        scenarios,
        Vec::new(),
        th.clone(),
        ReportProvenance {
            note: "replay of the published accuracy tables".into(),
            ..Default::default()
        },
    ))
}

pub fn render_structured(report: &DiagnosisReport) -> Result<String> {
    let mut s = serde_json::to_string_pretty(report)?;
    s.push('\n');
    Ok(s)
}

pub fn parse_structured(text: &str) -> Result<DiagnosisReport> {
    let r: DiagnosisReport = serde_json::from_str(text)?;
    if r.schema_version != REPORT_SCHEMA_VERSION {
        return Err(Error::Data(format!(
            "report schema version {} is not supported (expected {REPORT_SCHEMA_VERSION})",
            r.schema_version
        )));
    }
    Ok(r)
}

fn fmt_acc(a: Option<f64>) -> String {
    a.map_or_else(|| "-".to_string(), |v| format!("{v:.2}"))
}

fn table_rows(report: &ScenarioReport) -> Vec<Vec<&ClassAccuracy>> {
    let mut rows: BTreeMap<Option<Line>, Vec<&ClassAccuracy>> = BTreeMap::new();
    for c in &report.per_class {
        rows.entry(c.class.as_cable().map(|c| c.line)).or_default().push(c);
    }
    rows.into_values().collect()
}

/// Accuracy tables (one `dataset`/`accuracy` row pair per cable line, `-`
/// for classes that are not applicable) followed by the suspects and the
/// verdict.
pub fn render_human(report: &DiagnosisReport) -> String {
    let mut out = String::new();
    for r in &report.scenarios {
        let _ = writeln!(out, "Scenario: {} ({} classes)", r.scenario, r.per_class.len());
        let mut lines: Vec<Vec<String>> = Vec::new();
        for (i, row) in table_rows(r).into_iter().enumerate() {
            let (pre, post) = if i == 0 {
                ("pre-damage".to_string(), "post-damage".to_string())
            } else {
                ("-".to_string(), "-".to_string())
            };
            let mut head = vec!["dataset".to_string(), pre, post];
            head.extend(row.iter().map(|c| c.class.to_string()));
            let (a_pre, a_post) = if i == 0 {
                (fmt_acc(r.pre_accuracy), fmt_acc(r.post_accuracy))
            } else {
                ("-".to_string(), "-".to_string())
            };
            let mut acc = vec!["accuracy".to_string(), a_pre, a_post];
            acc.extend(row.iter().map(|c| fmt_acc(c.accuracy)));
            lines.push(head);
            lines.push(acc);
        }
        let cols = lines.iter().map(Vec::len).max().unwrap_or(0);
        let widths: Vec<usize> = (0..cols)
            .map(|j| lines.iter().filter_map(|l| l.get(j)).map(String::len).max().unwrap_or(0))
            .collect();
        for l in &lines {
            let cells: Vec<String> = l.iter().enumerate().map(|(j, c)| format!("{c:<w$}", w = widths[j])).collect();
            let _ = writeln!(out, "| {} |", cells.join(" | "));
        }
        let s = &r.suspects;
        let listed: Vec<String> = s.entries.iter().map(|e| format!("{} ({:.2})", e.class, e.accuracy)).collect();
        let _ = writeln!(
            out,
            "median {:.2}, threshold {:.2}; suspects: {}",
            s.median,
            s.threshold,
            if listed.is_empty() { "none".to_string() } else { listed.join(", ") }
        );
        if !s.excluded.is_empty() {
            let ex: Vec<String> = s.excluded.iter().map(|e| format!("{} ({})", e.source, e.reason)).collect();
            let _ = writeln!(out, "excluded: {}", ex.join(", "));
        }
        out.push('\n');
    }
    match &report.verdict {
        Verdict::Conclusive {
            cable,
            confidence,
            candidates,
        } => {
            let _ = writeln!(out, "Verdict: {cable} ({confidence:?} confidence)");
            for c in candidates {
                let _ = writeln!(
                    out,
                    "  candidate {}: forces deficit {:.2}, ratio deficit {:.2}, score {:.2}{}",
                    c.cable,
                    c.forces_deficit,
                    c.ratio_deficit,
                    c.score,
                    if c.ratio_direction { ", ratio shift points here" } else { "" }
                );
            }
        }
        Verdict::Inconclusive {
            reason,
            forces_suspects,
            ratio_suspects,
        } => {
            let list = |v: &[SourceId]| {
                if v.is_empty() {
                    "none".to_string()
                } else {
                    v.iter().map(|s| s.to_string()).collect::<Vec<_>>().join(", ")
                }
            };
            let _ = writeln!(out, "Verdict: inconclusive ({reason})");
            let _ = writeln!(out, "  forces suspects: {}", list(forces_suspects));
            let _ = writeln!(out, "  ratio suspects: {}", list(ratio_suspects));
        }
    }
    out
}
