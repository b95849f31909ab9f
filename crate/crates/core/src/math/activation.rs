//! Elementwise activations, pooling, dropout and the softmax head.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::math::Tensor2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Train,
    Eval,
}

pub fn relu(input: &[f64]) -> Vec<f64> {
    input.iter().map(|&x| if x > 0.0 { x } else { 0.0 }).collect()
}

pub fn relu_in_place(values: &mut [f64]) {
    for v in values {
        if *v <= 0.0 {
            *v = 0.0;
        }
    }
}

/// Subgradient at exactly zero is taken as zero.
pub fn relu_backward(upstream: &[f64], input: &[f64]) -> Vec<f64> {
    upstream
        .iter()
        .zip(input)
        .map(|(&g, &x)| if x > 0.0 { g } else { 0.0 })
        .collect()
}

/// Mean of each row over time.
pub fn global_avg_pool(input: &Tensor2) -> Vec<f64> {
    let len = input.cols() as f64;
    (0..input.rows())
        .map(|c| input.row(c).iter().sum::<f64>() / len)
        .collect()
}

pub fn global_avg_pool_backward(upstream: &[f64], len: usize) -> Result<Tensor2> {
    let scale = 1.0 / len as f64;
    let data = upstream
        .iter()
        .flat_map(|&g| std::iter::repeat_n(g * scale, len))
        .collect();
    Tensor2::from_vec(upstream.len(), len, data)
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Inverted dropout. Returns the output and the per-entry multiplier that the
/// backward pass reuses (0 for dropped entries, `1/(1-rate)` for kept ones).
pub fn dropout<R: Rng + ?Sized>(
    input: &[f64],
    rate: f64,
    mode: Mode,
    rng: &mut R,
) -> Result<(Vec<f64>, Vec<f64>)> {
    check_dropout_rate(rate)?;
    if mode == Mode::Eval || rate == 0.0 {
        return Ok((input.to_vec(), vec![1.0; input.len()]));
    }
    let keep = 1.0 / (1.0 - rate);
    let mask: Vec<f64> = input
        .iter()
        .map(|_| if rng.random::<f64>() < rate { 0.0 } else { keep })
        .collect();
    let out = input.iter().zip(&mask).map(|(x, m)| x * m).collect();
    Ok((out, mask))
}

pub fn dropout_backward(upstream: &[f64], mask: &[f64]) -> Vec<f64> {
    upstream.iter().zip(mask).map(|(g, m)| g * m).collect()
}

pub fn check_dropout_rate(rate: f64) -> Result<()> {
    if !(0.0..1.0).contains(&rate) {
        return Err(Error::Config(format!("dropout rate must lie in [0, 1), got {rate}")));
    }
    Ok(())
}

/// Max-subtracted softmax.
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|&z| (z - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / total).collect()
}

#[derive(Debug, Clone)]
pub struct SoftmaxXent {
    pub probabilities: Vec<f64>,
    pub loss: f64,
    /// d loss / d logits = p - onehot(true_class)
    pub logit_grad: Vec<f64>,
}

pub fn softmax_cross_entropy(logits: &[f64], true_class: usize) -> Result<SoftmaxXent> {
    if logits.len() < 2 {
        return Err(Error::Usage(format!(
            "softmax_cross_entropy needs at least 2 classes, got {}",
            logits.len()
        )));
    }
    if true_class >= logits.len() {
        return Err(Error::Usage(format!(
            "class index {true_class} out of range for {} classes",
            logits.len()
        )));
    }
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let sum_exp: f64 = logits.iter().map(|&z| (z - max).exp()).sum();
    // log-sum-exp form keeps the loss finite even when p[true] underflows
    let loss = max + sum_exp.ln() - logits[true_class];
    let probabilities: Vec<f64> = logits.iter().map(|&z| (z - max).exp() / sum_exp).collect();
    let mut logit_grad = probabilities.clone();
    logit_grad[true_class] -= 1.0;
    Ok(SoftmaxXent {
        probabilities,
        loss,
        logit_grad,
    })
}

/// Index of the largest entry; ties go to the lowest index.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best
}
