//! Mini-batch Adam training with step-wise learning-rate decay and
//! best-validation checkpointing.

mod eval;
mod schedule;

pub use eval::{evaluate, score, EvalResult};
pub use schedule::{LrMode, LrScheduler};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{Dataset, Split};
use crate::error::{Error, Result};
use crate::math::{adam_step, AdamConfig, Mode};
use crate::model::{Checkpoint, CheckpointMeta, InputNorm, LstmFcn};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr_initial: f64,
    pub lr_final: f64,
    pub lr_factor: f64,
    pub plateau_window: usize,
    pub lr_mode: LrMode,
    pub seed: u64,
    /// Stop after this many epochs without a new best validation accuracy.
    pub early_stop: Option<usize>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 2000,
            batch_size: 128,
            lr_initial: 1e-3,
            lr_final: 1e-4,
            lr_factor: 2f64.powf(-1.0 / 3.0),
            plateau_window: 100,
            lr_mode: LrMode::Plateau,
            seed: 0,
            early_stop: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let mut v = Vec::new();
        if self.batch_size == 0 {
            v.push("batch_size = 0".to_string());
        }
        if !(self.lr_final > 0.0 && self.lr_final <= self.lr_initial) {
            v.push(format!(
                "lr_final = {} / lr_initial = {} (need 0 < final <= initial)",
                self.lr_final, self.lr_initial
            ));
        }
        if !(self.lr_factor > 0.0 && self.lr_factor < 1.0) {
            v.push(format!("lr_factor = {} (need 0 < f < 1)", self.lr_factor));
        }
        if self.plateau_window == 0 {
            v.push("plateau_window = 0".to_string());
        }
        if v.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(v.join("; ")))
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub lr: f64,
    pub train_loss: f64,
    /// Running accuracy of the training passes (dropout active).
    pub train_acc: f64,
    pub val_loss: f64,
    pub val_acc: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainHistory {
    pub records: Vec<EpochRecord>,
    pub best_epoch: Option<usize>,
    pub best_val_acc: Option<f64>,
    pub stopped_early: bool,
}

impl TrainHistory {
    /// Metrics table with header `epoch,lr,train_loss,train_acc,val_loss,val_acc`.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("epoch,lr,train_loss,train_acc,val_loss,val_acc\n");
        for r in &self.records {
            s.push_str(&format!(
                "{},{},{},{},{},{}\n",
                r.epoch, r.lr, r.train_loss, r.train_acc, r.val_loss, r.val_acc
            ));
        }
        s
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// Parameters from the epoch with the best validation accuracy (the
    /// initial model when no epoch ran).
    pub model: LstmFcn,
    pub history: TrainHistory,
}

impl TrainOutcome {
    pub fn checkpoint(&self, dataset: &Dataset, note: impl Into<String>) -> Checkpoint {
        Checkpoint::from_model(
            &self.model,
            CheckpointMeta {
                epoch: self.history.best_epoch,
                val_accuracy: self.history.best_val_acc,
                classes: dataset.label_map.names(),
                note: note.into(),
            },
        )
    }
}

/// Trains `model` on the train split of `dataset`, validating every epoch.
///
/// An epoch is one shuffled pass in batches of `batch_size` (the last batch
/// may be short) with one Adam step per batch. With `normalize_input` set in
/// the model config, the input standardization is fitted on the train split
/// first. A non-finite loss or gradient halts with
/// [`Error::TrainingHalted`] carrying the best checkpoint so far.
pub fn train(mut model: LstmFcn, dataset: &Dataset, cfg: &TrainConfig) -> Result<TrainOutcome> {
    cfg.validate()?;
    if model.config().num_classes != dataset.num_classes() {
        return Err(Error::Usage(format!(
            "model has {} classes but the dataset has {}",
            model.config().num_classes,
            dataset.num_classes()
        )));
    }
    if model.config().input_length != dataset.segment_len {
        return Err(Error::Usage(format!(
            "model input length {} differs from segment length {}",
            model.config().input_length,
            dataset.segment_len
        )));
    }
    let (train_x, train_y) = dataset.view(Split::Train);
    let (val_x, val_y) = dataset.view(Split::Validation);
    if model.config().normalize_input {
        model.input_norm = InputNorm::fit(train_x.iter().copied());
    }
    let mut history = TrainHistory::default();
    if cfg.epochs == 0 {
        return Ok(TrainOutcome { model, history });
    }
    if train_x.is_empty() || val_x.is_empty() {
        return Err(Error::Usage(format!(
            "training needs non-empty train and validation splits (got {} and {})",
            train_x.len(),
            val_x.len()
        )));
    }

    let adam = AdamConfig::default();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let (baseline, _, _) = score(&model, &val_x, &val_y)?;
    let mut sched = LrScheduler::new(cfg.lr_initial, cfg.lr_final, cfg.lr_factor, cfg.plateau_window, cfg.lr_mode, baseline);
    let mut best: Option<(f64, usize, LstmFcn)> = None;
    let mut order: Vec<usize> = (0..train_x.len()).collect();
    let mut since_best = 0;

    for epoch in 1..=cfg.epochs {
        let lr = sched.lr();
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        let mut correct = 0;
        for batch in order.chunks(cfg.batch_size) {
            let xs: Vec<&[f64]> = batch.iter().map(|&i| train_x[i]).collect();
            let ys: Vec<usize> = batch.iter().map(|&i| train_y[i]).collect();
            let step = model
                .loss_and_grads_counted(&xs, &ys, Mode::Train, &mut rng)
                .and_then(|out| {
                    for block in model.blocks_mut() {
                        adam_step(block, lr, &adam)?;
                    }
                    Ok(out)
                });
            let out = match step {
                Ok(out) => out,
                Err(e @ (Error::NonFiniteLoss { .. } | Error::NonFiniteGradient { .. })) => {
                    let keep = best.map(|b| b.2).unwrap_or(model);
                    let checkpoint = Checkpoint::from_model(
                        &keep,
                        CheckpointMeta {
                            epoch: history.best_epoch,
                            val_accuracy: history.best_val_acc,
                            classes: dataset.label_map.names(),
                            note: "training halted".into(),
                        },
                    );
                    return Err(Error::TrainingHalted {
                        epoch,
                        reason: e.to_string(),
                        checkpoint: Box::new(checkpoint),
                    });
                }
                Err(e) => return Err(e),
            };
            loss_sum += out.loss * xs.len() as f64;
            correct += out.correct;
        }
        let (val_acc, val_loss, _) = score(&model, &val_x, &val_y)?;
        let n = train_x.len() as f64;
        history.records.push(EpochRecord {
            epoch,
            lr,
            train_loss: loss_sum / n,
            train_acc: correct as f64 / n,
            val_loss,
            val_acc,
        });
        log::debug!("epoch {epoch}: lr {lr:.3e} loss {:.4} val_acc {val_acc:.4}", loss_sum / n);
        if best.as_ref().is_none_or(|b| val_acc > b.0) {
            best = Some((val_acc, epoch, model.clone()));
            history.best_epoch = Some(epoch);
            history.best_val_acc = Some(val_acc);
            since_best = 0;
        } else {
            since_best += 1;
        }
        sched.end_epoch(epoch, val_acc);
        if cfg.early_stop.is_some_and(|p| since_best >= p) {
            history.stopped_early = true;
            break;
        }
    }
    let model = best.map(|b| b.2).expect("at least one epoch ran");
    Ok(TrainOutcome { model, history })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{build_dataset, DaySeries, PairId, Scenario, SplitConfig};
    use crate::model::ModelConfig;
    use chrono::NaiveDate;

    /// Three pair-ratio classes that differ in level and frequency.
    fn toy_dataset(len: usize, days: usize) -> Dataset {
        let d0 = NaiveDate::from_ymd_opt(2006, 5, 13).unwrap();
        let mut out = Vec::new();
        for k in 0..3u32 {
            let p = PairId::new("SJ", 8 + k).unwrap();
            for d in 0..days {
                let v = (0..len * 8)
                    .map(|t| 1.0 + 0.3 * k as f64 + 0.1 * ((t as f64) * (0.2 + 0.3 * k as f64) + d as f64).sin())
                    .collect();
                out.push(DaySeries::new(p.clone(), d0 + chrono::Days::new(d as u64), 2.0, v));
            }
        }
        build_dataset(&out, Scenario::Ratios, &SplitConfig { seed: 1, ..Default::default() }, len).unwrap()
    }

    fn small_model(len: usize) -> LstmFcn {
        let cfg = ModelConfig {
            num_classes: 3,
            conv_filters: [4, 8, 4],
            lstm_cells: 4,
            input_length: len,
            ..Default::default()
        };
        LstmFcn::build(cfg, 5).unwrap()
    }

    fn quick(epochs: usize) -> TrainConfig {
        TrainConfig {
            epochs,
            batch_size: 16,
            lr_initial: 1e-2,
            lr_final: 1e-3,
            plateau_window: 5,
            seed: 3,
            ..Default::default()
        }
    }

    #[test]
    fn zero_epochs_returns_initial_model() {
        let ds = toy_dataset(32, 2);
        let m = small_model(32);
        let out = train(m.clone(), &ds, &quick(0)).unwrap();
        assert_eq!(out.model, m);
        assert!(out.history.records.is_empty());
    }

    #[test]
    fn training_is_reproducible_and_consistent() {
        let ds = toy_dataset(32, 3);
        let a = train(small_model(32), &ds, &quick(12)).unwrap();
        let b = train(small_model(32), &ds, &quick(12)).unwrap();
        assert_eq!(a.history, b.history);
        assert_eq!(a.model, b.model);
        assert_eq!(a.history.to_csv(), b.history.to_csv());

        let h = &a.history;
        let best = h.best_val_acc.unwrap();
        assert!(h.records.iter().all(|r| r.val_acc <= best));
        let first_best = h.records.iter().find(|r| r.val_acc == best).unwrap().epoch;
        assert_eq!(h.best_epoch, Some(first_best));
        for w in h.records.windows(2) {
            assert!(w[1].lr <= w[0].lr);
        }
        assert!(h.records.iter().all(|r| r.lr >= 1e-3));
        let (acc, _, _) = score(&a.model, &ds.view(Split::Validation).0, &ds.view(Split::Validation).1).unwrap();
        assert_eq!(acc, best);
    }

    #[test]
    fn separable_classes_are_learned() {
        let ds = toy_dataset(32, 10);
        let out = train(small_model(32), &ds, &quick(30)).unwrap();
        let r = evaluate(&out.model, &ds, Split::TestPre).unwrap();
        assert!(r.overall > 0.9, "{}", r.overall);
    }

    #[test]
    fn evaluation_identities() {
        let ds = toy_dataset(32, 2);
        let r = evaluate(&small_model(32), &ds, Split::TestPre).unwrap();
        let weighted: f64 = (0..3)
            .map(|k| r.per_class[k].unwrap_or(0.0) * r.class_count(k) as f64)
            .sum::<f64>()
            / r.total as f64;
        assert!((weighted - r.overall).abs() < 1e-12);
        assert_eq!(ds.class_counts(Split::TestPre), (0..3).map(|k| r.class_count(k)).collect::<Vec<_>>());
        assert!(evaluate(&small_model(32), &ds, Split::TestPost).is_err());
    }

    #[test]
    fn non_finite_loss_halts_with_checkpoint() {
        let ds = toy_dataset(32, 2);
        let mut m = small_model(32);
        m.head_mut().bias[0] = f64::NAN;
        match train(m, &ds, &quick(3)) {
            Err(Error::TrainingHalted { epoch, checkpoint, .. }) => {
                assert_eq!(epoch, 1);
                assert_eq!(checkpoint.meta.classes.len(), 3);
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn early_stop_and_config_checks() {
        let ds = toy_dataset(32, 2);
        let cfg = TrainConfig { early_stop: Some(2), lr_initial: 1e-9, lr_final: 1e-9, ..quick(50) };
        let out = train(small_model(32), &ds, &cfg).unwrap();
        assert!(out.history.stopped_early);
        assert!(out.history.records.len() < 50);
        let bad = TrainConfig { lr_factor: 1.0, batch_size: 0, ..Default::default() };
        let msg = bad.validate().unwrap_err().to_string();
        assert!(msg.contains("batch_size") && msg.contains("lr_factor"));
    }
}
