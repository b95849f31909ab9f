//! Temporal (1-D) convolution with zero "same" padding and stride 1.
//!
//! Kernels are stored as a `C_out x (C_in * K)` tensor: row `c` holds the
//! `C_in` kernels of output channel `c`, each `K` taps long and laid out
//! contiguously. For even `K` the extra padding tap goes on the right, so the
//! output length always equals the input length.

use crate::error::{Error, Result};
use crate::math::Tensor2;

/// Left padding for a kernel of width `width`.
#[inline]
pub fn left_pad(width: usize) -> usize {
    (width - 1) / 2
}

fn check_shapes(
    op: &'static str,
    input: &Tensor2,
    kernels: &Tensor2,
    width: usize,
) -> Result<()> {
    if width == 0 {
        return Err(Error::Usage(format!("{op}: kernel width must be >= 1")));
    }
    if kernels.cols() != input.rows() * width {
        return Err(Error::dim(op, "kernel columns (C_in * K)", input.rows() * width, kernels.cols()));
    }
    Ok(())
}

/// Valid output range `[lo, hi)` for tap offset `shift` over a series of
/// length `len`: those `t` with `0 <= t + shift < len`. `None` when the tap
/// never overlaps the series.
#[inline]
fn tap_range(shift: isize, len: usize) -> Option<(usize, usize)> {
    let lo = (-shift).max(0);
    let hi = (len as isize - shift).min(len as isize);
    (lo < hi).then_some((lo as usize, hi as usize))
}

/// `output[c, t] = bias[c] + sum_{i,k} kernels[c, i, k] * padded_input[i, t + k]`.
pub fn conv1d_forward(
    input: &Tensor2,
    kernels: &Tensor2,
    bias: &[f64],
    width: usize,
) -> Result<Tensor2> {
    check_shapes("conv1d_forward", input, kernels, width)?;
    if bias.len() != kernels.rows() {
        return Err(Error::dim("conv1d_forward", "bias (C_out)", kernels.rows(), bias.len()));
    }
    let len = input.cols();
    let pad = left_pad(width) as isize;
    let mut out = Tensor2::zeros(kernels.rows(), len);
    for (c, &b) in bias.iter().enumerate() {
        let taps = kernels.row(c);
        let out_row = out.row_mut(c);
        out_row.iter_mut().for_each(|v| *v = b);
        for i in 0..input.rows() {
            let in_row = input.row(i);
            for k in 0..width {
                let w = taps[i * width + k];
                if w == 0.0 {
                    continue;
                }
                let shift = k as isize - pad;
                let Some((lo, hi)) = tap_range(shift, len) else {
                    continue;
                };
                let src = &in_row[(lo as isize + shift) as usize..(hi as isize + shift) as usize];
                for (o, &x) in out_row[lo..hi].iter_mut().zip(src) {
                    *o += w * x;
                }
            }
        }
    }
    Ok(out)
}

#[derive(Debug, Clone)]
pub struct ConvGrads {
    /// `None` when the caller did not ask for the input gradient.
    pub input: Option<Tensor2>,
    pub kernels: Tensor2,
    pub bias: Vec<f64>,
}

/// Reverse mode of [`conv1d_forward`]. `input` is the tensor cached from the
/// forward call.
pub fn conv1d_backward(
    upstream: &Tensor2,
    input: &Tensor2,
    kernels: &Tensor2,
    width: usize,
    want_input_grad: bool,
) -> Result<ConvGrads> {
    check_shapes("conv1d_backward", input, kernels, width)?;
    if upstream.rows() != kernels.rows() {
        return Err(Error::dim("conv1d_backward", "upstream rows (C_out)", kernels.rows(), upstream.rows()));
    }
    if upstream.cols() != input.cols() {
        return Err(Error::dim("conv1d_backward", "upstream length", input.cols(), upstream.cols()));
    }
    let len = input.cols();
    let pad = left_pad(width) as isize;
    let mut grad_k = Tensor2::zeros(kernels.rows(), kernels.cols());
    let mut grad_in = want_input_grad.then(|| Tensor2::zeros(input.rows(), len));
    let mut grad_b = vec![0.0; kernels.rows()];

    for c in 0..kernels.rows() {
        let up_row = upstream.row(c);
        grad_b[c] = up_row.iter().sum();
        let taps = kernels.row(c);
        let gk_row = grad_k.row_mut(c);
        for i in 0..input.rows() {
            let in_row = input.row(i);
            for k in 0..width {
                let shift = k as isize - pad;
                let Some((lo, hi)) = tap_range(shift, len) else {
                    continue;
                };
                let src_lo = (lo as isize + shift) as usize;
                let src_hi = (hi as isize + shift) as usize;
                gk_row[i * width + k] = up_row[lo..hi]
                    .iter()
                    .zip(&in_row[src_lo..src_hi])
                    .map(|(g, x)| g * x)
                    .sum();
                if let Some(gi) = grad_in.as_mut() {
                    let w = taps[i * width + k];
                    let dst = &mut gi.row_mut(i)[src_lo..src_hi];
                    for (d, &g) in dst.iter_mut().zip(&up_row[lo..hi]) {
                        *d += w * g;
                    }
                }
            }
        }
    }
    Ok(ConvGrads {
        input: grad_in,
        kernels: grad_k,
        bias: grad_b,
    })
}
