use serde::{Deserialize, Serialize};

use crate::data::{Dataset, Split};
use crate::error::{Error, Result};
use crate::math::softmax_cross_entropy;
use crate::model::LstmFcn;

/// Accuracy summary of one split.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalResult {
    pub split: Split,
    pub total: usize,
    pub overall: f64,
    pub mean_loss: f64,
    /// `None` where the class has no segments in the split or its source is
    /// excluded.
    pub per_class: Vec<Option<f64>>,
    /// `confusion[true][predicted]`.
    pub confusion: Vec<Vec<usize>>,
    pub classes: Vec<String>,
}

impl EvalResult {
    pub fn class_count(&self, class: usize) -> usize {
        self.confusion[class].iter().sum()
    }
}

/// Eval-mode accuracy and mean cross-entropy over raw segments.
pub fn score(model: &LstmFcn, xs: &[&[f64]], ys: &[usize]) -> Result<(f64, f64, Vec<usize>)> {
    let mut rng = <rand_chacha::ChaCha8Rng as rand::SeedableRng>::seed_from_u64(0);
    let mut preds = Vec::with_capacity(xs.len());
    let mut loss = 0.0;
    let mut correct = 0;
    for (chunk, labels) in xs.chunks(64).zip(ys.chunks(64)) {
        let pass = model.forward(chunk, crate::math::Mode::Eval, &mut rng, false)?;
        for (p, (logits, &y)) in pass.probabilities.iter().zip(pass.logits.iter().zip(labels)) {
            loss += softmax_cross_entropy(logits, y)?.loss;
            let k = crate::math::argmax(p);
            correct += usize::from(k == y);
            preds.push(k);
        }
    }
    let n = xs.len().max(1) as f64;
    Ok((correct as f64 / n, loss / n, preds))
}

/// Scores `model` on one split of `dataset` in eval mode.
pub fn evaluate(model: &LstmFcn, dataset: &Dataset, split: Split) -> Result<EvalResult> {
    let c = dataset.num_classes();
    if model.config().num_classes != c {
        return Err(Error::Usage(format!(
            "model has {} classes but the dataset has {c}",
            model.config().num_classes
        )));
    }
    let (xs, ys) = dataset.view(split);
    if xs.is_empty() {
        return Err(Error::Usage(format!("split {} is empty", split.name())));
    }
    let (overall, mean_loss, preds) = score(model, &xs, &ys)?;
    let mut confusion = vec![vec![0usize; c]; c];
    for (&y, &p) in ys.iter().zip(&preds) {
        confusion[y][p] += 1;
    }
    let per_class = (0..c)
        .map(|k| {
            let n: usize = confusion[k].iter().sum();
            (n > 0 && !dataset.is_excluded(k)).then(|| confusion[k][k] as f64 / n as f64)
        })
        .collect();
    Ok(EvalResult {
        split,
        total: xs.len(),
        overall,
        mean_loss,
        per_class,
        confusion,
        classes: dataset.label_map.names(),
    })
}
