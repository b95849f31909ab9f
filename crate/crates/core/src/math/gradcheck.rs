//! Central finite-difference check of analytic gradients stored in
//! [`ParamBlock`]s.

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::math::ParamBlock;

#[derive(Debug, Clone, Copy)]
pub struct GradCheckOptions {
    pub step: f64,
    /// Coordinates sampled per block; blocks with fewer values are checked
    /// exhaustively.
    pub coords_per_block: usize,
    /// Lower bound on the denominator so near-zero gradients are judged on
    /// absolute error.
    pub floor: f64,
    pub seed: u64,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        Self {
            step: 1e-6,
            coords_per_block: 200,
            floor: 1e-6,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct BlockCheck {
    pub name: String,
    pub checked: usize,
    pub max_rel_error: f64,
    /// Flat index (weights first, then bias) of the worst coordinate.
    pub worst_index: usize,
}

#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub blocks: Vec<BlockCheck>,
}

impl GradCheckReport {
    pub fn max_rel_error(&self) -> f64 {
        self.blocks.iter().map(|b| b.max_rel_error).fold(0.0, f64::max)
    }
}

/// Compares `grad(idx)` of every block against
/// `(L(w + h) - L(w - h)) / 2h`. Relative error is measured against the
/// numerical estimate: `|analytic - numeric| / max(|numeric|, floor)`.
///
/// `loss` must be deterministic in the block values.
pub fn finite_diff_check<F>(blocks: &mut [ParamBlock], mut loss: F, opts: GradCheckOptions) -> GradCheckReport
where
    F: FnMut(&[ParamBlock]) -> f64,
{
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut report = Vec::with_capacity(blocks.len());
    for b in 0..blocks.len() {
        let n = blocks[b].num_values();
        let coords: Vec<usize> = if n <= opts.coords_per_block {
            (0..n).collect()
        } else {
            let mut c = sample(&mut rng, n, opts.coords_per_block).into_vec();
            c.sort_unstable();
            c
        };
        let mut worst = (0.0, 0);
        for &idx in &coords {
            let original = blocks[b].value(idx);
            blocks[b].set_value(idx, original + opts.step);
            let plus = loss(blocks);
            blocks[b].set_value(idx, original - opts.step);
            let minus = loss(blocks);
            blocks[b].set_value(idx, original);
            let numeric = (plus - minus) / (2.0 * opts.step);
            let analytic = blocks[b].grad(idx);
            let rel = (analytic - numeric).abs() / numeric.abs().max(opts.floor);
            if rel > worst.0 || rel.is_nan() {
                worst = (rel, idx);
            }
        }
        report.push(BlockCheck {
            name: blocks[b].name.clone(),
            checked: coords.len(),
            max_rel_error: worst.0,
            worst_index: worst.1,
        });
    }
    GradCheckReport { blocks: report }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::math::Tensor2;

    fn linear_block() -> ParamBlock {
        let w: Vec<f64> = (0..10).map(|i| 0.01 * i as f64 - 0.03).collect();
        let mut b = ParamBlock::new("lin", Tensor2::from_vec(2, 5, w).unwrap(), vec![0.02, -0.01]);
        b.grad_weights.fill(1.0);
        b.grad_bias = vec![1.0, 1.0];
        b
    }

    fn sum_loss(blocks: &[ParamBlock]) -> f64 {
        blocks
            .iter()
            .map(|b| b.weights.as_slice().iter().sum::<f64>() + b.bias.iter().sum::<f64>())
            .sum()
    }

    #[test]
    fn linear_loss_checks_exactly() {
        let mut blocks = vec![linear_block()];
        let r = finite_diff_check(&mut blocks, sum_loss, GradCheckOptions::default());
        assert_eq!(r.blocks[0].checked, 12);
        assert!(r.max_rel_error() < 1e-9, "{}", r.max_rel_error());
        // values restored
        assert_eq!(blocks[0].weights, linear_block().weights);
    }

    #[test]
    fn corrupted_gradient_is_caught() {
        let mut b = linear_block();
        b.grad_weights.fill(2.0);
        b.grad_bias = vec![2.0, 2.0];
        let mut blocks = vec![b];
        let r = finite_diff_check(&mut blocks, sum_loss, GradCheckOptions::default());
        assert!(r.max_rel_error() > 0.5);
    }

    #[test]
    fn subsamples_large_blocks() {
        let mut b = ParamBlock::new("big", Tensor2::zeros(30, 30), vec![0.0; 30]);
        b.grad_weights.fill(1.0);
        b.grad_bias.fill(1.0);
        let mut blocks = vec![b];
        let opts = GradCheckOptions {
            coords_per_block: 250,
            ..Default::default()
        };
        let r = finite_diff_check(&mut blocks, sum_loss, opts);
        assert_eq!(r.blocks[0].checked, 250);
        assert!(r.max_rel_error() < 1e-9);
    }
}
