//! End-to-end run configuration and the stage functions shared by the
//! command line and the integration tests.

use std::path::PathBuf;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use crate::data::preprocess::median;
use crate::data::{
    build_dataset, prepare, Dataset, DaySeries, PairId, PreprocessConfig, Prepared, Scenario, SensorStatus, Split,
    SplitConfig, DEFAULT_SAMPLE_RATE_HZ,
};
use crate::diagnosis::{diagnose, ClassAccuracy, DiagnosisReport, RatioShift, ReportProvenance, ScenarioReport, Thresholds};
use crate::error::{Error, Result};
use crate::model::{Checkpoint, LstmFcn, ModelConfig};
use crate::train::{evaluate, train, EvalResult, TrainConfig, TrainOutcome};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Profile {
    /// Scaled-down architecture that trains in minutes on one core.
    #[default]
    Desk,
    /// Full-size architecture and schedule.
    Paper,
}

impl std::str::FromStr for Profile {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "desk" => Ok(Profile::Desk),
            "paper" => Ok(Profile::Paper),
            _ => Err(Error::Usage(format!("unknown profile `{s}` (desk or paper)"))),
        }
    }
}

/// Everything a run needs, resolved before any stage starts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub profile: Profile,
    /// Directory of raw per-(cable, day) CSV files.
    pub data_dir: Option<PathBuf>,
    pub sample_rate: f64,
    /// First day of the period under test.
    pub damage_from: Option<NaiveDate>,
    pub preprocess: PreprocessConfig,
    pub split: SplitConfig,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub thresholds: Thresholds,
    pub scenarios: Vec<Scenario>,
}

impl RunConfig {
    pub fn for_profile(profile: Profile) -> Self {
        let mut cfg = Self {
            profile,
            data_dir: None,
            sample_rate: DEFAULT_SAMPLE_RATE_HZ,
            damage_from: None,
            preprocess: PreprocessConfig::default(),
            split: SplitConfig::default(),
            model: ModelConfig::default(),
            train: TrainConfig::default(),
            thresholds: Thresholds::default(),
            scenarios: Scenario::BOTH.to_vec(),
        };
        if profile == Profile::Desk {
            cfg.model.input_length = 200;
            cfg.model.conv_filters = [16, 32, 16];
            cfg.model.lstm_cells = 4;
            cfg.model.normalize_input = true;
            cfg.train.epochs = 60;
            cfg.train.batch_size = 32;
            cfg.train.lr_initial = 3e-3;
            cfg.train.plateau_window = 10;
            cfg.train.early_stop = Some(25);
        }
        cfg
    }

    /// Sets every seed in the run.
    pub fn set_seed(&mut self, seed: u64) {
        self.split.seed = seed;
        self.train.seed = seed;
    }

    pub fn validate(&self) -> Result<()> {
        crate::data::series::check_sample_rate(self.sample_rate)?;
        self.model.validate()?;
        self.train.validate()?;
        if self.profile == Profile::Desk && self.train.epochs > 200 {
            return Err(Error::Config(format!("desk profile caps epochs at 200, got {}", self.train.epochs)));
        }
        if self.scenarios.is_empty() {
            return Err(Error::Config("no scenarios selected".into()));
        }
        Ok(())
    }

    fn split_config(&self) -> SplitConfig {
        SplitConfig {
            damage_from: self.damage_from,
            ..self.split.clone()
        }
    }

    /// Profile defaults overlaid with a (possibly partial) JSON document.
    pub fn from_json_overlay(base: Profile, overlay: &str) -> Result<Self> {
        let mut value = serde_json::to_value(Self::for_profile(base))?;
        let patch: serde_json::Value = serde_json::from_str(overlay)?;
        merge(&mut value, patch);
        Ok(serde_json::from_value(value)?)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)? + "\n")
    }
}

fn merge(base: &mut serde_json::Value, patch: serde_json::Value) {
    match (base, patch) {
        (serde_json::Value::Object(b), serde_json::Value::Object(p)) => {
            for (k, v) in p {
                merge(b.entry(k).or_insert(serde_json::Value::Null), v);
            }
        }
        (b, p) => *b = p,
    }
}

/// Cleans raw cable days under the run's policy.
pub fn prepare_run(raw: Vec<DaySeries>, cfg: &RunConfig) -> Result<Prepared> {
    prepare(raw, &cfg.preprocess, cfg.damage_from)
}

pub fn build_scenario_dataset(prepared: &Prepared, scenario: Scenario, cfg: &RunConfig) -> Result<Dataset> {
    build_dataset(prepared.days(scenario), scenario, &cfg.split_config(), cfg.model.input_length)
}

/// Median pair ratio before and after the damage date, over intact days.
pub fn ratio_shifts(prepared: &Prepared, damage_from: Option<NaiveDate>) -> Vec<RatioShift> {
    let Some(from) = damage_from else {
        return Vec::new();
    };
    let mut pairs: Vec<PairId> = prepared.ratios.iter().filter_map(|d| d.source.as_pair().cloned()).collect();
    pairs.dedup();
    let values = |pair: &PairId, post: bool| -> Vec<f64> {
        prepared
            .ratios
            .iter()
            .filter(|d| d.source.as_pair() == Some(pair) && d.status == SensorStatus::Ok && (d.date >= from) == post)
            .flat_map(|d| d.valid_values())
            .collect()
    };
    pairs
        .iter()
        .filter_map(|p| {
            let pre = median(&values(p, false))?;
            let post = median(&values(p, true))?;
            Some(RatioShift {
                pair: p.clone(),
                pre_median: pre,
                post_median: post,
            })
        })
        .collect()
}

/// Segment counts, exclusions and the split of every segment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub scenario: Scenario,
    pub segment_len: usize,
    pub classes: Vec<String>,
    /// Segments per class for each split, in class order.
    pub counts: std::collections::BTreeMap<String, Vec<usize>>,
    pub excluded: Vec<crate::data::Exclusion>,
    pub assignments: Vec<(String, Split)>,
}

impl DatasetManifest {
    pub fn of(dataset: &Dataset) -> Self {
        let counts = [Split::Train, Split::Validation, Split::TestPre, Split::TestPost]
            .into_iter()
            .map(|s| (s.name().to_string(), dataset.class_counts(s)))
            .collect();
        Self {
            scenario: dataset.scenario,
            segment_len: dataset.segment_len,
            classes: dataset.label_map.names(),
            counts,
            excluded: dataset.excluded.clone(),
            assignments: dataset.assignments(),
        }
    }
}

pub struct ScenarioRun {
    pub dataset: Dataset,
    pub outcome: TrainOutcome,
    pub test_pre: EvalResult,
    pub test_post: Option<EvalResult>,
}

/// Trains one scenario's classifier and scores it on both test periods.
pub fn train_scenario(dataset: Dataset, cfg: &RunConfig) -> Result<ScenarioRun> {
    let model_cfg = ModelConfig {
        num_classes: dataset.num_classes(),
        input_length: dataset.segment_len,
        ..cfg.model.clone()
    };
    log::info!(
        "{}: {} classes, {} train / {} validation segments",
        dataset.scenario,
        dataset.num_classes(),
        dataset.count(Split::Train),
        dataset.count(Split::Validation)
    );
    let model = LstmFcn::build(model_cfg, cfg.train.seed)?;
    let outcome = train(model, &dataset, &cfg.train)?;
    let (test_pre, test_post) = evaluate_periods(&outcome.model, &dataset)?;
    Ok(ScenarioRun {
        dataset,
        outcome,
        test_pre,
        test_post,
    })
}

pub fn evaluate_periods(model: &LstmFcn, dataset: &Dataset) -> Result<(EvalResult, Option<EvalResult>)> {
    let pre = evaluate(model, dataset, Split::TestPre)?;
    let post = if dataset.count(Split::TestPost) > 0 {
        Some(evaluate(model, dataset, Split::TestPost)?)
    } else {
        None
    };
    Ok((pre, post))
}

/// Checks that a stored model was trained on the classes of `dataset`.
pub fn check_checkpoint(ck: &Checkpoint, dataset: &Dataset) -> Result<()> {
    let names = dataset.label_map.names();
    if ck.meta.classes != names {
        return Err(Error::Usage(format!(
            "checkpoint classes {:?} do not match the {} dataset classes {:?}",
            ck.meta.classes, dataset.scenario, names
        )));
    }
    if ck.config().input_length != dataset.segment_len {
        return Err(Error::Usage(format!(
            "checkpoint expects segments of {} samples, dataset has {}",
            ck.config().input_length,
            dataset.segment_len
        )));
    }
    Ok(())
}

/// Per-class post-period accuracies and suspects for one scenario.
pub fn scenario_report(
    dataset: &Dataset,
    test_pre: &EvalResult,
    test_post: Option<&EvalResult>,
    th: &Thresholds,
) -> Result<ScenarioReport> {
    let post = test_post.ok_or_else(|| {
        Error::Usage(format!("{}: no post-damage segments to diagnose (set damage_from)", dataset.scenario))
    })?;
    let per_class = dataset
        .label_map
        .ids()
        .iter()
        .zip(&post.per_class)
        .map(|(id, acc)| ClassAccuracy {
            class: id.clone(),
            accuracy: *acc,
        })
        .collect();
    ScenarioReport::new(
        dataset.scenario,
        Some(test_pre.overall),
        Some(post.overall),
        per_class,
        &dataset.excluded,
        th,
    )
}

pub struct PipelineResult {
    pub prepared: Prepared,
    pub runs: Vec<ScenarioRun>,
    pub report: DiagnosisReport,
}

/// Prepare, train every selected scenario, and diagnose.
pub fn run_pipeline(raw: Vec<DaySeries>, cfg: &RunConfig) -> Result<PipelineResult> {
    cfg.validate()?;
    let prepared = prepare_run(raw, cfg)?;
    let mut runs = Vec::new();
    let mut reports = Vec::new();
    for &s in &cfg.scenarios {
        let run = train_scenario(build_scenario_dataset(&prepared, s, cfg)?, cfg)?;
        reports.push(scenario_report(&run.dataset, &run.test_pre, run.test_post.as_ref(), &cfg.thresholds)?);
        runs.push(run);
    }
    let shifts = ratio_shifts(&prepared, cfg.damage_from);
    let report = diagnose(reports, shifts, cfg.thresholds.clone(), ReportProvenance::default());
    Ok(PipelineResult {
        prepared,
        runs,
        report,
    })
}
