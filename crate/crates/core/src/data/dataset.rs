use std::collections::BTreeSet;

use chrono::NaiveDate;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::ids::SourceId;
use super::segment::{segment_day, Segment};
use super::series::{DaySeries, SensorStatus};
use super::Scenario;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Split {
    Train,
    Validation,
    TestPre,
    TestPost,
}

impl Split {
    pub const ALL: [Split; 4] = [Split::Train, Split::Validation, Split::TestPre, Split::TestPost];

    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Validation => "validation",
            Split::TestPre => "test-pre",
            Split::TestPost => "test-post",
        }
    }
}

impl std::str::FromStr for Split {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Split::ALL
            .into_iter()
            .find(|x| x.name() == s)
            .ok_or_else(|| Error::Usage(format!("unknown split `{s}` (train, validation, test-pre, test-post)")))
    }
}

/// Bijection between class indices and source ids, in sorted id order.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct LabelMap {
    classes: Vec<SourceId>,
}

impl LabelMap {
    pub fn new(sources: impl IntoIterator<Item = SourceId>) -> Self {
        let set: BTreeSet<SourceId> = sources.into_iter().collect();
        Self {
            classes: set.into_iter().collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.classes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.classes.is_empty()
    }

    pub fn index_of(&self, id: &SourceId) -> Option<usize> {
        self.classes.binary_search(id).ok()
    }

    pub fn id(&self, index: usize) -> &SourceId {
        &self.classes[index]
    }

    pub fn ids(&self) -> &[SourceId] {
        &self.classes
    }

    pub fn names(&self) -> Vec<String> {
        self.classes.iter().map(|c| c.to_string()).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Exclusion {
    pub source: SourceId,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SplitConfig {
    pub seed: u64,
    /// Share of the training half carved off for validation.
    pub val_fraction: f64,
    /// First post-damage date; days from here on form the test-post split.
    pub damage_from: Option<NaiveDate>,
}

impl Default for SplitConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            val_fraction: 0.2,
            damage_from: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub scenario: Scenario,
    pub segment_len: usize,
    pub label_map: LabelMap,
    pub segments: Vec<Segment>,
    /// Split of `segments[i]`.
    pub splits: Vec<Split>,
    /// Sources left out of the post-damage evaluation.
    pub excluded: Vec<Exclusion>,
}

/// Segments preprocessed days into a labeled dataset.
///
/// Pre-damage segments are shuffled under `split.seed` and halved into a
/// training pool and `test-pre`; `val_fraction` of the pool becomes
/// `validation`. Post-damage days form `test-post`. A day whose sensor
/// failed never contributes; a source that failed after the damage date is
/// listed in `excluded` and keeps only its intact pre-damage data.
pub fn build_dataset(days: &[DaySeries], scenario: Scenario, split: &SplitConfig, segment_len: usize) -> Result<Dataset> {
    if !(0.0..1.0).contains(&split.val_fraction) {
        return Err(Error::Config(format!("val_fraction = {} (need 0 <= f < 1)", split.val_fraction)));
    }
    for d in days {
        let kind_ok = match scenario {
            Scenario::Forces => d.source.as_cable().is_some(),
            Scenario::Ratios => d.source.as_pair().is_some(),
        };
        if !kind_ok {
            return Err(Error::Usage(format!("{} is not a {} series", d.source, scenario.name())));
        }
    }
    let mut ordered: Vec<&DaySeries> = days.iter().collect();
    ordered.sort_by(|a, b| (&a.source, a.date).cmp(&(&b.source, b.date)));

    let is_post = |d: &DaySeries| split.damage_from.is_some_and(|from| d.date >= from);
    let label_map = LabelMap::new(ordered.iter().map(|d| d.source.clone()));

    let mut excluded: Vec<Exclusion> = Vec::new();
    for d in &ordered {
        if is_post(d) && d.status == SensorStatus::Failed && !excluded.iter().any(|e| e.source == d.source) {
            excluded.push(Exclusion {
                source: d.source.clone(),
                reason: format!("sensor failure on {}", d.date),
            });
        }
    }

    let mut segments = Vec::new();
    let mut post = Vec::new();
    for d in &ordered {
        if d.status == SensorStatus::Failed {
            log::info!("skipping {} on {}: sensor failure", d.source, d.date);
            continue;
        }
        let label = label_map.index_of(&d.source).expect("label map covers every source");
        let segs = segment_day(d, segment_len, label, scenario)?;
        if is_post(d) {
            if excluded.iter().all(|e| e.source != d.source) {
                post.extend(segs);
            }
        } else {
            segments.extend(segs);
        }
    }

    let mut per_class = vec![0usize; label_map.len()];
    for s in &segments {
        per_class[s.label] += 1;
    }
    if let Some(c) = per_class.iter().position(|&n| n == 0) {
        return Err(Error::Dataset(format!(
            "class {} has no pre-damage segments",
            label_map.id(c)
        )));
    }

    let n = segments.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(split.seed));
    let n_test = n / 2;
    let pool = n - n_test;
    let n_val = (split.val_fraction * pool as f64).round() as usize;
    let mut splits = vec![Split::Train; n];
    for (rank, &i) in order.iter().enumerate() {
        splits[i] = if rank < n_val {
            Split::Validation
        } else if rank < pool {
            Split::Train
        } else {
            Split::TestPre
        };
    }
    splits.extend(std::iter::repeat_n(Split::TestPost, post.len()));
    segments.extend(post);

    Ok(Dataset {
        scenario,
        segment_len,
        label_map,
        segments,
        splits,
        excluded,
    })
}

impl Dataset {
    pub fn num_classes(&self) -> usize {
        self.label_map.len()
    }

    pub fn indices(&self, split: Split) -> Vec<usize> {
        (0..self.segments.len()).filter(|&i| self.splits[i] == split).collect()
    }

    pub fn count(&self, split: Split) -> usize {
        self.splits.iter().filter(|&&s| s == split).count()
    }

    pub fn class_counts(&self, split: Split) -> Vec<usize> {
        let mut c = vec![0; self.num_classes()];
        for (s, sp) in self.segments.iter().zip(&self.splits) {
            if *sp == split {
                c[s.label] += 1;
            }
        }
        c
    }

    pub fn is_excluded(&self, class: usize) -> bool {
        let id = self.label_map.id(class);
        self.excluded.iter().any(|e| &e.source == id)
    }

    /// `(values, labels)` of a split in dataset order.
    pub fn view(&self, split: Split) -> (Vec<&[f64]>, Vec<usize>) {
        self.indices(split)
            .into_iter()
            .map(|i| (self.segments[i].values.as_slice(), self.segments[i].label))
            .unzip()
    }

    /// One `(provenance, split)` line per segment for the run manifest.
    pub fn assignments(&self) -> Vec<(String, Split)> {
        self.segments.iter().zip(&self.splits).map(|(s, sp)| (s.provenance.to_string(), *sp)).collect()
    }
}
