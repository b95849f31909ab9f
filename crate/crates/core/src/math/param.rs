//! Trainable parameter blocks, He initialization and the Adam update.

use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::math::Tensor2;

/// Weights plus bias of one layer, with gradient accumulators and Adam
/// moments of matching shapes.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamBlock {
    pub name: String,
    pub weights: Tensor2,
    pub bias: Vec<f64>,
    pub grad_weights: Tensor2,
    pub grad_bias: Vec<f64>,
    m_weights: Vec<f64>,
    v_weights: Vec<f64>,
    m_bias: Vec<f64>,
    v_bias: Vec<f64>,
    step: u64,
}

impl ParamBlock {
    pub fn new(name: impl Into<String>, weights: Tensor2, bias: Vec<f64>) -> Self {
        let (rows, cols) = weights.shape();
        let n = weights.len();
        let nb = bias.len();
        Self {
            name: name.into(),
            weights,
            grad_weights: Tensor2::zeros(rows, cols),
            grad_bias: vec![0.0; nb],
            m_weights: vec![0.0; n],
            v_weights: vec![0.0; n],
            m_bias: vec![0.0; nb],
            v_bias: vec![0.0; nb],
            bias,
            step: 0,
        }
    }

    pub fn step(&self) -> u64 {
        self.step
    }

    pub fn num_values(&self) -> usize {
        self.weights.len() + self.bias.len()
    }

    pub fn zero_grad(&mut self) {
        self.grad_weights.fill(0.0);
        self.grad_bias.iter_mut().for_each(|g| *g = 0.0);
    }

    /// Flat view over weights then bias, used by the gradient checker.
    pub fn value(&self, idx: usize) -> f64 {
        let nw = self.weights.len();
        if idx < nw {
            self.weights.as_slice()[idx]
        } else {
            self.bias[idx - nw]
        }
    }

    pub fn set_value(&mut self, idx: usize, v: f64) {
        let nw = self.weights.len();
        if idx < nw {
            self.weights.as_mut_slice()[idx] = v;
        } else {
            self.bias[idx - nw] = v;
        }
    }

    pub fn grad(&self, idx: usize) -> f64 {
        let nw = self.weights.len();
        if idx < nw {
            self.grad_weights.as_slice()[idx]
        } else {
            self.grad_bias[idx - nw]
        }
    }

    pub fn grads_finite(&self) -> bool {
        self.grad_weights.is_finite() && self.grad_bias.iter().all(|g| g.is_finite())
    }
}

/// Zero-mean Gaussian with variance `2 / fan_in`.
pub fn he_init<R: Rng + ?Sized>(fan_in: usize, rows: usize, cols: usize, rng: &mut R) -> Result<Tensor2> {
    if fan_in == 0 {
        return Err(Error::Config("he_init: fan_in must be >= 1".into()));
    }
    let normal = Normal::new(0.0, (2.0 / fan_in as f64).sqrt())
        .map_err(|e| Error::Config(format!("he_init: {e}")))?;
    let data = (0..rows * cols).map(|_| normal.sample(rng)).collect();
    Tensor2::from_vec(rows, cols, data)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

fn adam_update(values: &mut [f64], grads: &[f64], m: &mut [f64], v: &mut [f64], lr: f64, cfg: &AdamConfig, t: u64) {
    let bc1 = 1.0 - cfg.beta1.powi(t as i32);
    let bc2 = 1.0 - cfg.beta2.powi(t as i32);
    for i in 0..values.len() {
        let g = grads[i];
        m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * g;
        v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * g * g;
        let m_hat = m[i] / bc1;
        let v_hat = v[i] / bc2;
        values[i] -= lr * m_hat / (v_hat.sqrt() + cfg.eps);
    }
}

/// One bias-corrected Adam step. The block is left untouched when any
/// gradient entry is non-finite.
pub fn adam_step(block: &mut ParamBlock, lr: f64, cfg: &AdamConfig) -> Result<()> {
    if !block.grads_finite() {
        return Err(Error::NonFiniteGradient {
            block: block.name.clone(),
        });
    }
    block.step += 1;
    let t = block.step;
    adam_update(
        block.weights.as_mut_slice(),
        block.grad_weights.as_slice(),
        &mut block.m_weights,
        &mut block.v_weights,
        lr,
        cfg,
        t,
    );
    adam_update(
        &mut block.bias,
        &block.grad_bias,
        &mut block.m_bias,
        &mut block.v_bias,
        lr,
        cfg,
        t,
    );
    Ok(())
}
