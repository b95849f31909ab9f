//! The LSTM-FCN classifier.
//!
//! FCN branch: three `conv -> [batch norm] -> ReLU` blocks followed by global
//! average pooling. LSTM branch: the univariate segment is transposed into a
//! single time step of `L` features, run through one LSTM layer and dropout.
//! Both feature vectors are concatenated and mapped to class probabilities by
//! a dense softmax head.

mod checkpoint;
mod config;

pub use checkpoint::{Checkpoint, CheckpointMeta, CHECKPOINT_FORMAT, CHECKPOINT_VERSION};
pub use config::ModelConfig;

use rand::distr::{Distribution, Uniform};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::math::{
    self, argmax, conv1d_backward, conv1d_forward, dropout, dropout_backward, global_avg_pool,
    he_init, lstm_backward, lstm_forward, softmax, softmax_cross_entropy, LstmCache, Mode,
    ParamBlock, Tensor2,
};

const CONV: [usize; 3] = [0, 1, 2];
const LSTM: usize = 3;
const HEAD: usize = 4;
const BN: [usize; 3] = [5, 6, 7];

const BN_EPS: f64 = 1e-3;
const BN_MOMENTUM: f64 = 0.99;
/// Samples processed together when batch norm does not couple them.
const MICRO_BATCH: usize = 32;

/// Affine map applied to raw inputs before the network: `(x - mean) / std`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InputNorm {
    pub mean: f64,
    pub std: f64,
}

impl Default for InputNorm {
    fn default() -> Self {
        Self { mean: 0.0, std: 1.0 }
    }
}

impl InputNorm {
    /// Global mean and standard deviation over every value of every segment.
    pub fn fit<'a>(segments: impl IntoIterator<Item = &'a [f64]>) -> Self {
        let (mut n, mut sum, mut sq) = (0usize, 0.0, 0.0);
        let segs: Vec<&[f64]> = segments.into_iter().collect();
        for s in &segs {
            n += s.len();
            sum += s.iter().sum::<f64>();
        }
        if n == 0 {
            return Self::default();
        }
        let mean = sum / n as f64;
        for s in &segs {
            sq += s.iter().map(|x| (x - mean).powi(2)).sum::<f64>();
        }
        let std = (sq / n as f64).sqrt();
        Self {
            mean,
            std: if std > 0.0 { std } else { 1.0 },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunningStats {
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
}

/// Trainable state of one classifier.
#[derive(Debug, Clone, PartialEq)]
pub struct LstmFcn {
    config: ModelConfig,
    blocks: Vec<ParamBlock>,
    pub input_norm: InputNorm,
    bn_running: Vec<RunningStats>,
    seed: u64,
}

/// Transposes a `1 x L` segment into `L x 1` so the LSTM sees every sample
/// of the window as a feature of a single time step.
pub fn dimension_shuffle(segment: &Tensor2) -> Tensor2 {
    segment.transpose()
}

fn glorot_uniform<R: Rng + ?Sized>(rows: usize, cols: usize, rng: &mut R) -> Result<Tensor2> {
    let limit = (6.0 / (rows + cols) as f64).sqrt();
    let dist = Uniform::new_inclusive(-limit, limit).map_err(|e| Error::Config(e.to_string()))?;
    Tensor2::from_vec(rows, cols, (0..rows * cols).map(|_| dist.sample(rng)).collect())
}

impl LstmFcn {
    /// Allocates and initializes every block: He-normal convolution kernels
    /// and LSTM weights, Glorot-uniform head, zero biases except the forget
    /// gate (1.0).
    pub fn build(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut blocks = Vec::with_capacity(8);
        let mut channels_in = 1;
        for (l, (&f, &k)) in config.conv_filters.iter().zip(&config.conv_kernel_widths).enumerate() {
            let w = he_init(channels_in * k, f, channels_in * k, &mut rng)?;
            blocks.push(ParamBlock::new(format!("conv{}", l + 1), w, vec![0.0; f]));
            channels_in = f;
        }
        let h = config.lstm_cells;
        let fan_in = config.input_length + h;
        let w = he_init(fan_in, 4 * h, fan_in, &mut rng)?;
        let mut b = vec![0.0; 4 * h];
        b[h..2 * h].iter_mut().for_each(|v| *v = 1.0);
        blocks.push(ParamBlock::new("lstm", w, b));
        let w = glorot_uniform(config.num_classes, config.head_inputs(), &mut rng)?;
        blocks.push(ParamBlock::new("head", w, vec![0.0; config.num_classes]));

        let mut bn_running = Vec::new();
        if config.use_batch_norm {
            for (l, &f) in config.conv_filters.iter().enumerate() {
                let gamma = Tensor2::from_vec(1, f, vec![1.0; f])?;
                blocks.push(ParamBlock::new(format!("bn{}", l + 1), gamma, vec![0.0; f]));
                bn_running.push(RunningStats {
                    mean: vec![0.0; f],
                    var: vec![1.0; f],
                });
            }
        }
        Ok(Self {
            config,
            blocks,
            input_norm: InputNorm::default(),
            bn_running,
            seed,
        })
    }

    pub(crate) fn from_parts(
        config: ModelConfig,
        blocks: Vec<ParamBlock>,
        input_norm: InputNorm,
        bn_running: Vec<RunningStats>,
        seed: u64,
    ) -> Result<Self> {
        config.validate()?;
        let reference = Self::build(config.clone(), seed)?;
        if blocks.len() != reference.blocks.len() {
            return Err(Error::dim("LstmFcn::from_parts", "blocks", reference.blocks.len(), blocks.len()));
        }
        for (b, r) in blocks.iter().zip(&reference.blocks) {
            if b.name != r.name || b.weights.shape() != r.weights.shape() || b.bias.len() != r.bias.len() {
                return Err(Error::Data(format!("parameter block `{}` does not match the configuration", b.name)));
            }
        }
        if bn_running.len() != reference.bn_running.len() {
            return Err(Error::Data("batch-norm statistics do not match the configuration".into()));
        }
        Ok(Self {
            config,
            blocks,
            input_norm,
            bn_running,
            seed,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn blocks(&self) -> &[ParamBlock] {
        &self.blocks
    }

    pub fn blocks_mut(&mut self) -> &mut [ParamBlock] {
        &mut self.blocks
    }

    pub fn head(&self) -> &ParamBlock {
        &self.blocks[HEAD]
    }

    pub fn head_mut(&mut self) -> &mut ParamBlock {
        &mut self.blocks[HEAD]
    }

    pub fn bn_running(&self) -> &[RunningStats] {
        &self.bn_running
    }

    pub fn parameter_count(&self) -> usize {
        self.blocks.iter().map(ParamBlock::num_values).sum()
    }

    pub fn zero_grad(&mut self) {
        self.blocks.iter_mut().for_each(ParamBlock::zero_grad);
    }

    fn check_batch(&self, batch: &[&[f64]]) -> Result<()> {
        if batch.is_empty() {
            return Err(Error::Usage("empty batch".into()));
        }
        for (i, s) in batch.iter().enumerate() {
            if s.len() != self.config.input_length {
                return Err(Error::Data(format!(
                    "segment {i} of the batch has length {} but the model expects {}",
                    s.len(),
                    self.config.input_length
                )));
            }
        }
        Ok(())
    }

    /// Runs the network over `batch`. Dropout masks are drawn from `rng` in
    /// batch order. With `keep_cache` the returned pass can be fed to
    /// backpropagation.
    pub fn forward<R: Rng + ?Sized>(
        &self,
        batch: &[&[f64]],
        mode: Mode,
        rng: &mut R,
        keep_cache: bool,
    ) -> Result<ForwardPass> {
        self.check_batch(batch)?;
        let cfg = &self.config;
        let norm = self.input_norm;
        let mut stage: Vec<Tensor2> = batch
            .iter()
            .map(|s| {
                let v = s.iter().map(|x| (x - norm.mean) / norm.std).collect();
                Tensor2::from_vec(1, s.len(), v)
            })
            .collect::<Result<_>>()?;
        let inputs = stage.clone();

        let mut conv_inputs: Vec<Vec<Tensor2>> = Vec::with_capacity(3);
        let mut pre_acts: Vec<Vec<Tensor2>> = Vec::with_capacity(3);
        let mut bn_caches: Vec<Option<BnCache>> = Vec::with_capacity(3);
        let mut batch_stats = Vec::new();
        for l in 0..3 {
            let block = &self.blocks[CONV[l]];
            let mut pre: Vec<Tensor2> = stage
                .iter()
                .map(|x| conv1d_forward(x, &block.weights, &block.bias, cfg.conv_kernel_widths[l]))
                .collect::<Result<_>>()?;
            let bn_cache = if cfg.use_batch_norm {
                let (cache, stats) = self.batch_norm_forward(l, &mut pre, mode);
                if let Some(s) = stats {
                    batch_stats.push(s);
                }
                Some(cache)
            } else {
                None
            };
            let mut act = pre.clone();
            for a in &mut act {
                math::activation::relu_in_place(a.as_mut_slice());
            }
            if keep_cache {
                conv_inputs.push(std::mem::replace(&mut stage, act));
                pre_acts.push(pre);
                bn_caches.push(bn_cache);
            } else {
                stage = act;
            }
        }
        let pooled: Vec<Vec<f64>> = stage.iter().map(global_avg_pool).collect();

        let lstm = &self.blocks[LSTM];
        let h = cfg.lstm_cells;
        let mut features = Vec::with_capacity(batch.len());
        let mut lstm_caches = Vec::with_capacity(batch.len());
        let mut masks = Vec::with_capacity(batch.len());
        let mut probabilities = Vec::with_capacity(batch.len());
        let mut logits_all = Vec::with_capacity(batch.len());
        let head = &self.blocks[HEAD];
        for (x, gap) in inputs.iter().zip(&pooled) {
            let (hidden, lcache) = lstm_forward(&dimension_shuffle(x), &lstm.weights, &lstm.bias, h)?;
            let (dropped, mask) = dropout(hidden.as_slice(), cfg.dropout_rate, mode, rng)?;
            let mut z = gap.clone();
            z.extend_from_slice(&dropped);
            let logits: Vec<f64> = (0..cfg.num_classes)
                .map(|c| head.bias[c] + head.weights.row(c).iter().zip(&z).map(|(w, v)| w * v).sum::<f64>())
                .collect();
            probabilities.push(softmax(&logits));
            logits_all.push(logits);
            if keep_cache {
                lstm_caches.push(lcache);
                masks.push(mask);
                features.push(z);
            }
        }

        let cache = keep_cache.then(|| BatchCache {
            conv_inputs,
            pre_acts,
            bn_caches,
            lstm_caches,
            masks,
            features,
        });
        Ok(ForwardPass {
            probabilities,
            logits: logits_all,
            batch_stats,
            cache,
        })
    }

    fn batch_norm_forward(&self, layer: usize, pre: &mut [Tensor2], mode: Mode) -> (BnCache, Option<RunningStats>) {
        let channels = self.config.conv_filters[layer];
        let gamma = self.blocks[BN[layer]].weights.as_slice();
        let beta = &self.blocks[BN[layer]].bias;
        let (mean, var, stats) = match mode {
            Mode::Eval => {
                let r = &self.bn_running[layer];
                (r.mean.clone(), r.var.clone(), None)
            }
            Mode::Train => {
                let n = (pre.len() * pre[0].cols()) as f64;
                let mut mean = vec![0.0; channels];
                let mut var = vec![0.0; channels];
                for c in 0..channels {
                    mean[c] = pre.iter().map(|t| t.row(c).iter().sum::<f64>()).sum::<f64>() / n;
                    var[c] = pre
                        .iter()
                        .map(|t| t.row(c).iter().map(|x| (x - mean[c]).powi(2)).sum::<f64>())
                        .sum::<f64>()
                        / n;
                }
                let stats = RunningStats {
                    mean: mean.clone(),
                    var: var.clone(),
                };
                (mean, var, Some(stats))
            }
        };
        let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + BN_EPS).sqrt()).collect();
        let mut x_hat = Vec::with_capacity(pre.len());
        for t in pre.iter_mut() {
            let mut xh = t.clone();
            for c in 0..channels {
                for (o, xo) in t.row_mut(c).iter_mut().zip(xh.row_mut(c).iter_mut()) {
                    *xo = (*xo - mean[c]) * inv_std[c];
                    *o = gamma[c] * *xo + beta[c];
                }
            }
            x_hat.push(xh);
        }
        (
            BnCache {
                x_hat,
                inv_std,
                batch_stats: mode == Mode::Train,
            },
            stats,
        )
    }

    /// Mean cross-entropy of `batch` without touching gradients.
    pub fn loss<R: Rng + ?Sized>(&self, batch: &[&[f64]], labels: &[usize], mode: Mode, rng: &mut R) -> Result<f64> {
        let pass = self.forward(batch, mode, rng, false)?;
        let mut total = 0.0;
        for (logits, &y) in pass.logits.iter().zip(labels) {
            total += softmax_cross_entropy(logits, y)?.loss;
        }
        Ok(total / batch.len() as f64)
    }

    /// Zeroes the gradients, then fills every block's gradient with that of
    /// the mean cross-entropy over `batch`. In train mode with batch norm the
    /// running statistics are updated.
    pub fn loss_and_grads<R: Rng + ?Sized>(
        &mut self,
        batch: &[&[f64]],
        labels: &[usize],
        mode: Mode,
        rng: &mut R,
    ) -> Result<f64> {
        Ok(self.loss_and_grads_counted(batch, labels, mode, rng)?.loss)
    }

    /// [`Self::loss_and_grads`] that also counts argmax hits of the pass.
    pub fn loss_and_grads_counted<R: Rng + ?Sized>(
        &mut self,
        batch: &[&[f64]],
        labels: &[usize],
        mode: Mode,
        rng: &mut R,
    ) -> Result<BatchLoss> {
        if labels.len() != batch.len() {
            return Err(Error::dim("loss_and_grads", "labels", batch.len(), labels.len()));
        }
        if let Some((i, &y)) = labels.iter().enumerate().find(|(_, &y)| y >= self.config.num_classes) {
            return Err(Error::Usage(format!(
                "label {y} at batch position {i} is outside [0, {})",
                self.config.num_classes
            )));
        }
        self.zero_grad();
        let total = batch.len();
        let chunk = if self.config.use_batch_norm { total } else { MICRO_BATCH };
        let mut loss_sum = 0.0;
        let mut correct = 0;
        let mut new_stats: Vec<RunningStats> = Vec::new();
        for (k, (xs, ys)) in batch.chunks(chunk).zip(labels.chunks(chunk)).enumerate() {
            let pass = self.forward(xs, mode, rng, true)?;
            let mut dlogits = Vec::with_capacity(xs.len());
            for (i, (logits, &y)) in pass.logits.iter().zip(ys).enumerate() {
                let r = softmax_cross_entropy(logits, y)?;
                if !r.loss.is_finite() {
                    return Err(Error::NonFiniteLoss {
                        loss: r.loss,
                        context: format!("at batch position {} of {total}", k * chunk + i),
                    });
                }
                loss_sum += r.loss;
                correct += usize::from(argmax(logits) == y);
                dlogits.push(r.logit_grad.iter().map(|g| g / total as f64).collect::<Vec<_>>());
            }
            self.backward(&pass, &dlogits)?;
            new_stats = pass.batch_stats;
        }
        if mode == Mode::Train && self.config.use_batch_norm {
            for (run, batch) in self.bn_running.iter_mut().zip(new_stats) {
                for c in 0..run.mean.len() {
                    run.mean[c] = BN_MOMENTUM * run.mean[c] + (1.0 - BN_MOMENTUM) * batch.mean[c];
                    run.var[c] = BN_MOMENTUM * run.var[c] + (1.0 - BN_MOMENTUM) * batch.var[c];
                }
            }
        }
        Ok(BatchLoss {
            loss: loss_sum / total as f64,
            correct,
        })
    }

    /// Accumulates parameter gradients given `dlogits[i] = d loss / d logits`
    /// of sample `i` of the pass.
    pub fn backward(&mut self, pass: &ForwardPass, dlogits: &[Vec<f64>]) -> Result<()> {
        let cache = pass
            .cache
            .as_ref()
            .ok_or_else(|| Error::Usage("backward needs a forward pass run with keep_cache".into()))?;
        let cfg = self.config.clone();
        let f3 = cfg.conv_filters[2];
        let h = cfg.lstm_cells;

        let mut d_pooled = Vec::with_capacity(dlogits.len());
        for (i, dl) in dlogits.iter().enumerate() {
            let z = &cache.features[i];
            let head = &mut self.blocks[HEAD];
            let mut dz = vec![0.0; z.len()];
            for (c, &g) in dl.iter().enumerate() {
                head.grad_bias[c] += g;
                let w_row = head.weights.row(c).to_vec();
                let gw_row = head.grad_weights.row_mut(c);
                for j in 0..z.len() {
                    gw_row[j] += g * z[j];
                    dz[j] += g * w_row[j];
                }
            }
            let d_hidden = dropout_backward(&dz[f3..], &cache.masks[i]);
            let up = Tensor2::from_vec(h, 1, d_hidden)?;
            let lstm = &self.blocks[LSTM];
            let g = lstm_backward(&up, &cache.lstm_caches[i], &lstm.weights, h)?;
            let lstm = &mut self.blocks[LSTM];
            for (a, b) in lstm.grad_weights.as_mut_slice().iter_mut().zip(g.weights.as_slice()) {
                *a += b;
            }
            for (a, b) in lstm.grad_bias.iter_mut().zip(&g.bias) {
                *a += b;
            }
            dz.truncate(f3);
            d_pooled.push(dz);
        }

        // GAP backward then the conv stack in reverse.
        let len = cfg.input_length;
        let mut upstream: Vec<Tensor2> = d_pooled
            .iter()
            .map(|g| math::global_avg_pool_backward(g, len))
            .collect::<Result<_>>()?;
        for l in (0..3).rev() {
            let pre = &cache.pre_acts[l];
            for (u, p) in upstream.iter_mut().zip(pre) {
                for (g, &x) in u.as_mut_slice().iter_mut().zip(p.as_slice()) {
                    if x <= 0.0 {
                        *g = 0.0;
                    }
                }
            }
            if let Some(bn) = &cache.bn_caches[l] {
                upstream = self.batch_norm_backward(l, bn, upstream);
            }
            let width = cfg.conv_kernel_widths[l];
            let want_input = l > 0;
            let mut next = Vec::with_capacity(upstream.len());
            for (u, x) in upstream.iter().zip(&cache.conv_inputs[l]) {
                let block = &self.blocks[CONV[l]];
                let g = conv1d_backward(u, x, &block.weights, width, want_input)?;
                let block = &mut self.blocks[CONV[l]];
                for (a, b) in block.grad_weights.as_mut_slice().iter_mut().zip(g.kernels.as_slice()) {
                    *a += b;
                }
                for (a, b) in block.grad_bias.iter_mut().zip(&g.bias) {
                    *a += b;
                }
                if let Some(gi) = g.input {
                    next.push(gi);
                }
            }
            upstream = next;
        }
        Ok(())
    }

    fn batch_norm_backward(&mut self, layer: usize, cache: &BnCache, upstream: Vec<Tensor2>) -> Vec<Tensor2> {
        let channels = self.config.conv_filters[layer];
        let block = &mut self.blocks[BN[layer]];
        let gamma = block.weights.as_slice().to_vec();
        for c in 0..channels {
            let mut dg = 0.0;
            let mut db = 0.0;
            for (u, xh) in upstream.iter().zip(&cache.x_hat) {
                for (g, x) in u.row(c).iter().zip(xh.row(c)) {
                    dg += g * x;
                    db += g;
                }
            }
            block.grad_weights.as_mut_slice()[c] += dg;
            block.grad_bias[c] += db;
        }
        let mut out = upstream;
        if !cache.batch_stats {
            // running statistics are constants
            for u in &mut out {
                for c in 0..channels {
                    let s = gamma[c] * cache.inv_std[c];
                    u.row_mut(c).iter_mut().for_each(|g| *g *= s);
                }
            }
            return out;
        }
        let n = (out.len() * out[0].cols()) as f64;
        for c in 0..channels {
            let mut sum_dxh = 0.0;
            let mut sum_dxh_xh = 0.0;
            for (u, xh) in out.iter().zip(&cache.x_hat) {
                for (g, x) in u.row(c).iter().zip(xh.row(c)) {
                    let dxh = g * gamma[c];
                    sum_dxh += dxh;
                    sum_dxh_xh += dxh * x;
                }
            }
            let k = cache.inv_std[c] / n;
            for (u, xh) in out.iter_mut().zip(&cache.x_hat) {
                for (g, x) in u.row_mut(c).iter_mut().zip(xh.row(c)) {
                    let dxh = *g * gamma[c];
                    *g = k * (n * dxh - sum_dxh - x * sum_dxh_xh);
                }
            }
        }
        out
    }

    /// Class probabilities for one segment in eval mode.
    pub fn predict_proba(&self, segment: &[f64]) -> Result<Vec<f64>> {
        // eval mode never draws from the generator
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut pass = self.forward(&[segment], Mode::Eval, &mut rng, false)?;
        Ok(pass.probabilities.swap_remove(0))
    }

    /// Most probable class (lowest index on ties) and the probability vector.
    pub fn predict(&self, segment: &[f64]) -> Result<(usize, Vec<f64>)> {
        let p = self.predict_proba(segment)?;
        Ok((argmax(&p), p))
    }

    /// Eval-mode predictions for many segments, processed in chunks.
    pub fn predict_many(&self, segments: &[&[f64]]) -> Result<Vec<usize>> {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut out = Vec::with_capacity(segments.len());
        for chunk in segments.chunks(64) {
            let pass = self.forward(chunk, Mode::Eval, &mut rng, false)?;
            out.extend(pass.probabilities.iter().map(|p| argmax(p)));
        }
        Ok(out)
    }
}

#[derive(Debug, Clone)]
struct BnCache {
    x_hat: Vec<Tensor2>,
    inv_std: Vec<f64>,
    batch_stats: bool,
}

#[derive(Debug, Clone)]
struct BatchCache {
    conv_inputs: Vec<Vec<Tensor2>>,
    pre_acts: Vec<Vec<Tensor2>>,
    bn_caches: Vec<Option<BnCache>>,
    lstm_caches: Vec<LstmCache>,
    masks: Vec<Vec<f64>>,
    features: Vec<Vec<f64>>,
}

/// Mean loss of a batch and how many of its samples the pass got right.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BatchLoss {
    pub loss: f64,
    pub correct: usize,
}

/// Output of [`LstmFcn::forward`].
#[derive(Debug, Clone)]
pub struct ForwardPass {
    /// One probability row per batch entry.
    pub probabilities: Vec<Vec<f64>>,
    pub logits: Vec<Vec<f64>>,
    batch_stats: Vec<RunningStats>,
    cache: Option<BatchCache>,
}

impl ForwardPass {
    pub fn has_cache(&self) -> bool {
        self.cache.is_some()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny(classes: usize) -> ModelConfig {
        ModelConfig {
            num_classes: classes,
            conv_filters: [4, 8, 4],
            conv_kernel_widths: [8, 5, 3],
            lstm_cells: 4,
            dropout_rate: 0.8,
            input_length: 32,
            use_batch_norm: false,
            normalize_input: false,
        }
    }

    fn wave(phase: f64, len: usize) -> Vec<f64> {
        (0..len).map(|t| (t as f64 * 0.3 + phase).sin()).collect()
    }

    #[test]
    fn default_head_shape() {
        let m = LstmFcn::build(ModelConfig::default(), 1).unwrap();
        assert_eq!(m.head().weights.shape(), (14, 136));
        assert_eq!(m.parameter_count(), ModelConfig::default().parameter_count());
    }

    #[test]
    fn minimal_head_shape() {
        let cfg = ModelConfig {
            num_classes: 2,
            conv_filters: [1, 1, 1],
            lstm_cells: 1,
            input_length: 10,
            ..Default::default()
        };
        let m = LstmFcn::build(cfg, 0).unwrap();
        assert_eq!(m.head().weights.shape(), (2, 2));
    }

    #[test]
    fn build_is_seeded_and_validated() {
        let a = LstmFcn::build(tiny(3), 17).unwrap();
        let b = LstmFcn::build(tiny(3), 17).unwrap();
        assert_eq!(a, b);
        let c = LstmFcn::build(tiny(3), 18).unwrap();
        assert_ne!(a.blocks()[0].weights, c.blocks()[0].weights);
        let err = LstmFcn::build(ModelConfig { num_classes: 1, ..tiny(3) }, 0).unwrap_err();
        assert!(err.to_string().contains("num_classes"));
    }

    #[test]
    fn forget_bias_starts_at_one() {
        let m = LstmFcn::build(tiny(3), 0).unwrap();
        let b = &m.blocks()[LSTM].bias;
        assert_eq!(&b[0..4], &[0.0; 4]);
        assert_eq!(&b[4..8], &[1.0; 4]);
        assert_eq!(&b[8..16], &[0.0; 8]);
    }

    #[test]
    fn shuffle_examples() {
        let s = Tensor2::row_vector(&vec![0.5; 1600]).unwrap();
        assert_eq!(dimension_shuffle(&s).shape(), (1600, 1));
        let one = Tensor2::row_vector(&[2.0]).unwrap();
        assert_eq!(dimension_shuffle(&one), one);
        let s = Tensor2::row_vector(&[1., 2., 3.]).unwrap();
        assert_eq!(dimension_shuffle(&dimension_shuffle(&s)), s);
    }

    #[test]
    fn rows_are_distributions() {
        let m = LstmFcn::build(tiny(5), 3).unwrap();
        let xs: Vec<Vec<f64>> = (0..4).map(|i| wave(i as f64, 32)).collect();
        let batch: Vec<&[f64]> = xs.iter().map(|v| v.as_slice()).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for mode in [Mode::Train, Mode::Eval] {
            let pass = m.forward(&batch, mode, &mut rng, false).unwrap();
            for p in &pass.probabilities {
                assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
                assert!(p.iter().all(|&v| v >= 0.0));
            }
        }
    }

    #[test]
    fn zero_weights_give_uniform_probabilities() {
        let mut m = LstmFcn::build(tiny(4), 3).unwrap();
        for b in m.blocks_mut() {
            b.weights.fill(0.0);
            b.bias.iter_mut().for_each(|v| *v = 0.0);
        }
        let (_, p) = m.predict(&wave(0.2, 32)).unwrap();
        for v in p {
            assert!((v - 0.25).abs() < 1e-15);
        }
    }

    #[test]
    fn forward_is_deterministic() {
        let m = LstmFcn::build(tiny(3), 8).unwrap();
        let x = wave(1.0, 32);
        let run = || {
            let mut rng = ChaCha8Rng::seed_from_u64(4);
            m.forward(&[&x], Mode::Train, &mut rng, false).unwrap().probabilities
        };
        assert_eq!(run(), run());
        assert_eq!(m.predict(&x).unwrap(), m.predict(&x).unwrap());
    }

    #[test]
    fn wrong_length_is_a_data_error() {
        let m = LstmFcn::build(tiny(3), 8).unwrap();
        let err = m.predict(&[0.0; 31]).unwrap_err();
        assert!(matches!(err, Error::Data(_)), "{err}");
    }

    #[test]
    fn uniform_predictions_cost_ln_classes() {
        let mut m = LstmFcn::build(tiny(14), 3).unwrap();
        m.head_mut().weights.fill(0.0);
        let xs: Vec<Vec<f64>> = (0..3).map(|i| wave(i as f64, 32)).collect();
        let batch: Vec<&[f64]> = xs.iter().map(|v| v.as_slice()).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let loss = m.loss_and_grads(&batch, &[0, 5, 13], Mode::Train, &mut rng).unwrap();
        assert!((loss - 14f64.ln()).abs() < 1e-12, "{loss}");
    }

    #[test]
    fn engineered_head_gives_near_zero_loss() {
        let mut m = LstmFcn::build(tiny(3), 3).unwrap();
        m.head_mut().weights.fill(0.0);
        m.head_mut().bias = vec![0.0, 40.0, 0.0];
        let x = wave(0.0, 32);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let loss = m.loss_and_grads(&[&x], &[1], Mode::Eval, &mut rng).unwrap();
        assert!(loss < 1e-6, "{loss}");
    }

    #[test]
    fn labels_out_of_range_are_rejected() {
        let mut m = LstmFcn::build(tiny(3), 3).unwrap();
        let x = wave(0.0, 32);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(m.loss_and_grads(&[&x], &[3], Mode::Train, &mut rng).is_err());
    }

    #[test]
    fn backward_without_cache_is_usage_error() {
        let mut m = LstmFcn::build(tiny(3), 3).unwrap();
        let x = wave(0.0, 32);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let pass = m.forward(&[&x], Mode::Eval, &mut rng, false).unwrap();
        assert!(!pass.has_cache());
        let err = m.backward(&pass, &[vec![0.0; 3]]).unwrap_err();
        assert!(matches!(err, Error::Usage(_)));
    }

    #[test]
    fn micro_batching_does_not_change_gradients() {
        // 40 samples span two micro-batches; compare against summing two
        // separate half-batch gradients weighted by size.
        let mut m = LstmFcn::build(tiny(3), 5).unwrap();
        let xs: Vec<Vec<f64>> = (0..40).map(|i| wave(i as f64 * 0.1, 32)).collect();
        let batch: Vec<&[f64]> = xs.iter().map(|v| v.as_slice()).collect();
        let labels: Vec<usize> = (0..40).map(|i| i % 3).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let full = m.loss_and_grads(&batch, &labels, Mode::Eval, &mut rng).unwrap();
        let g_full = m.blocks()[0].grad_weights.clone();

        let mut parts = 0.0;
        let mut g_sum = Tensor2::zeros(g_full.rows(), g_full.cols());
        for (xs, ys) in [(&batch[..10], &labels[..10]), (&batch[10..], &labels[10..])] {
            parts += m.loss_and_grads(xs, ys, Mode::Eval, &mut rng).unwrap() * xs.len() as f64;
            for (a, b) in g_sum.as_mut_slice().iter_mut().zip(m.blocks()[0].grad_weights.as_slice()) {
                *a += b * xs.len() as f64 / 40.0;
            }
        }
        assert!((full - parts / 40.0).abs() < 1e-12);
        for (a, b) in g_full.as_slice().iter().zip(g_sum.as_slice()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    fn grad_check(cfg: ModelConfig, mode: Mode, floor: f64) -> f64 {
        use crate::math::{finite_diff_check, GradCheckOptions};
        let mut m = LstmFcn::build(cfg, 21).unwrap();
        // Zero biases over dead ReLU stretches put pre-activations exactly on
        // the kink, where central differences disagree with the subgradient.
        let mut brng = ChaCha8Rng::seed_from_u64(2);
        for b in m.blocks_mut() {
            b.bias.iter_mut().for_each(|v| *v += brng.random_range(-0.1..0.1));
        }
        let xs: Vec<Vec<f64>> = (0..6).map(|i| wave(i as f64 * 0.7, 32)).collect();
        let batch: Vec<&[f64]> = xs.iter().map(|v| v.as_slice()).collect();
        let labels = [0, 1, 2, 0, 1, 2];
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        m.loss_and_grads(&batch, &labels, mode, &mut rng).unwrap();
        let probe = m.clone();
        let mut blocks = m.blocks().to_vec();
        let report = finite_diff_check(
            &mut blocks,
            |bs| {
                let mut p = probe.clone();
                p.blocks_mut().clone_from_slice(bs);
                let mut rng = ChaCha8Rng::seed_from_u64(9);
                p.loss(&batch, &labels, mode, &mut rng).unwrap()
            },
            GradCheckOptions { floor, ..Default::default() },
        );
        report.max_rel_error()
    }

    #[test]
    fn full_model_gradients_match_finite_differences() {
        let err = grad_check(tiny(3), Mode::Eval, 1e-6);
        assert!(err < 1e-4, "{err}");
    }

    #[test]
    fn gradients_with_dropout_and_batch_norm() {
        let err = grad_check(tiny(3), Mode::Train, 1e-6);
        assert!(err < 1e-4, "{err}");
        let bn = ModelConfig { use_batch_norm: true, ..tiny(3) };
        // Batch statistics cancel the conv biases: their true gradient is 0
        // and the difference quotient is pure rounding noise (~1e-10).
        let err = grad_check(bn.clone(), Mode::Train, 1e-5);
        assert!(err < 1e-4, "train bn {err}");
        let err = grad_check(bn, Mode::Eval, 1e-6);
        assert!(err < 1e-4, "eval bn {err}");
    }
}
