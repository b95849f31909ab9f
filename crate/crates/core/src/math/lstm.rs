//! Single-layer LSTM with analytic backpropagation through time.
//!
//! Weights for all four gates live in one `4H x (F + H)` matrix whose columns
//! are `[input features | previous hidden state]`; rows are grouped by gate in
//! the order input, forget, candidate, output. Initial hidden and cell states
//! are zero.

use crate::error::{Error, Result};
use crate::math::activation::sigmoid;
use crate::math::Tensor2;

#[derive(Debug, Clone)]
struct StepCache {
    input_gate: Vec<f64>,
    forget_gate: Vec<f64>,
    candidate: Vec<f64>,
    output_gate: Vec<f64>,
    cell_prev: Vec<f64>,
    cell_tanh: Vec<f64>,
    hidden_prev: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct LstmCache {
    input: Tensor2,
    steps: Vec<StepCache>,
}

#[derive(Debug, Clone)]
pub struct LstmGrads {
    pub input: Tensor2,
    pub weights: Tensor2,
    pub bias: Vec<f64>,
}

fn check(op: &'static str, features: usize, weights: &Tensor2, bias: &[f64], cells: usize) -> Result<()> {
    if cells == 0 {
        return Err(Error::Usage(format!("{op}: LSTM needs at least one cell")));
    }
    if weights.rows() != 4 * cells {
        return Err(Error::dim(op, "weight rows (4H)", 4 * cells, weights.rows()));
    }
    if weights.cols() != features + cells {
        return Err(Error::dim(op, "weight columns (F + H)", features + cells, weights.cols()));
    }
    if bias.len() != 4 * cells {
        return Err(Error::dim(op, "bias (4H)", 4 * cells, bias.len()));
    }
    Ok(())
}

/// Runs the recurrence over `input` (`F x T`) and returns hidden states as
/// `H x T`.
pub fn lstm_forward(
    input: &Tensor2,
    weights: &Tensor2,
    bias: &[f64],
    cells: usize,
) -> Result<(Tensor2, LstmCache)> {
    let (features, steps) = input.shape();
    check("lstm_forward", features, weights, bias, cells)?;
    let h = cells;
    let mut hidden = vec![0.0; h];
    let mut cell = vec![0.0; h];
    let mut outputs = Tensor2::zeros(h, steps);
    let mut caches = Vec::with_capacity(steps);
    let mut x_t = vec![0.0; features];

    for t in 0..steps {
        for (f, x) in x_t.iter_mut().enumerate() {
            *x = input.get(f, t);
        }
        let mut z = bias.to_vec();
        for (r, zr) in z.iter_mut().enumerate() {
            let row = weights.row(r);
            let (wx, wh) = row.split_at(features);
            *zr += wx.iter().zip(&x_t).map(|(w, x)| w * x).sum::<f64>()
                + wh.iter().zip(&hidden).map(|(w, x)| w * x).sum::<f64>();
        }
        let input_gate: Vec<f64> = z[0..h].iter().map(|&v| sigmoid(v)).collect();
        let forget_gate: Vec<f64> = z[h..2 * h].iter().map(|&v| sigmoid(v)).collect();
        let candidate: Vec<f64> = z[2 * h..3 * h].iter().map(|v| v.tanh()).collect();
        let output_gate: Vec<f64> = z[3 * h..4 * h].iter().map(|&v| sigmoid(v)).collect();

        let cell_prev = cell.clone();
        let hidden_prev = hidden.clone();
        for j in 0..h {
            cell[j] = forget_gate[j] * cell_prev[j] + input_gate[j] * candidate[j];
        }
        let cell_tanh: Vec<f64> = cell.iter().map(|c| c.tanh()).collect();
        for j in 0..h {
            hidden[j] = output_gate[j] * cell_tanh[j];
            outputs.set(j, t, hidden[j]);
        }
        caches.push(StepCache {
            input_gate,
            forget_gate,
            candidate,
            output_gate,
            cell_prev,
            cell_tanh,
            hidden_prev,
        });
    }
    Ok((
        outputs,
        LstmCache {
            input: input.clone(),
            steps: caches,
        },
    ))
}

/// `upstream` is the loss gradient with respect to every hidden output
/// (`H x T`).
pub fn lstm_backward(
    upstream: &Tensor2,
    cache: &LstmCache,
    weights: &Tensor2,
    cells: usize,
) -> Result<LstmGrads> {
    let (features, steps) = cache.input.shape();
    if upstream.shape() != (cells, steps) {
        return Err(Error::dim("lstm_backward", "upstream rows (H)", cells, upstream.rows()));
    }
    if cache.steps.len() != steps {
        return Err(Error::Usage("lstm_backward: cache does not match input".into()));
    }
    let h = cells;
    let mut grad_w = Tensor2::zeros(4 * h, features + h);
    let mut grad_b = vec![0.0; 4 * h];
    let mut grad_in = Tensor2::zeros(features, steps);
    let mut dh_next = vec![0.0; h];
    let mut dc_next = vec![0.0; h];
    let mut dz = vec![0.0; 4 * h];

    for t in (0..steps).rev() {
        let s = &cache.steps[t];
        for j in 0..h {
            let dh = upstream.get(j, t) + dh_next[j];
            let d_out = dh * s.cell_tanh[j];
            let dc = dh * s.output_gate[j] * (1.0 - s.cell_tanh[j] * s.cell_tanh[j]) + dc_next[j];
            let d_in = dc * s.candidate[j];
            let d_cand = dc * s.input_gate[j];
            let d_forget = dc * s.cell_prev[j];
            dc_next[j] = dc * s.forget_gate[j];

            dz[j] = d_in * s.input_gate[j] * (1.0 - s.input_gate[j]);
            dz[h + j] = d_forget * s.forget_gate[j] * (1.0 - s.forget_gate[j]);
            dz[2 * h + j] = d_cand * (1.0 - s.candidate[j] * s.candidate[j]);
            dz[3 * h + j] = d_out * s.output_gate[j] * (1.0 - s.output_gate[j]);
        }
        dh_next.iter_mut().for_each(|v| *v = 0.0);
        for (r, &g) in dz.iter().enumerate() {
            grad_b[r] += g;
            if g == 0.0 {
                continue;
            }
            let w_row = weights.row(r);
            let gw_row = grad_w.row_mut(r);
            for f in 0..features {
                let x = cache.input.get(f, t);
                gw_row[f] += g * x;
                let gi = grad_in.get(f, t) + g * w_row[f];
                grad_in.set(f, t, gi);
            }
            for j in 0..h {
                gw_row[features + j] += g * s.hidden_prev[j];
                dh_next[j] += g * w_row[features + j];
            }
        }
    }
    Ok(LstmGrads {
        input: grad_in,
        weights: grad_w,
        bias: grad_b,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(rng: &mut ChaCha8Rng, rows: usize, cols: usize, scale: f64) -> Tensor2 {
        let data = (0..rows * cols).map(|_| rng.random_range(-scale..scale)).collect();
        Tensor2::from_vec(rows, cols, data).unwrap()
    }

    #[test]
    fn zero_parameters_give_zero_hidden_states() {
        let x = Tensor2::from_vec(2, 4, vec![1., -2., 3., 0.5, 2., 2., -1., 4.]).unwrap();
        let (h, _) = lstm_forward(&x, &Tensor2::zeros(12, 5), &[0.0; 12], 3).unwrap();
        assert!(h.as_slice().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn single_step_recurrence_collapses() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let (features, cells) = (5, 2);
        let x = random(&mut rng, features, 1, 1.0);
        let w = random(&mut rng, 4 * cells, features + cells, 0.5);
        let b: Vec<f64> = (0..4 * cells).map(|_| rng.random_range(-0.5..0.5)).collect();
        let (h, _) = lstm_forward(&x, &w, &b, cells).unwrap();
        let pre = |r: usize| -> f64 {
            b[r] + (0..features).map(|f| w.get(r, f) * x.get(f, 0)).sum::<f64>()
        };
        for j in 0..cells {
            let c1 = sigmoid(pre(j)) * pre(2 * cells + j).tanh();
            let h1 = sigmoid(pre(3 * cells + j)) * c1.tanh();
            assert!((h.get(j, 0) - h1).abs() < 1e-15);
        }
    }

    #[test]
    fn dimension_errors() {
        let x = Tensor2::zeros(3, 2);
        assert!(matches!(
            lstm_forward(&x, &Tensor2::zeros(8, 4), &[0.0; 8], 2),
            Err(Error::Dimension { .. })
        ));
        assert!(lstm_forward(&x, &Tensor2::zeros(8, 5), &[0.0; 7], 2).is_err());
    }

    #[test]
    fn backward_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let (features, steps, cells) = (3, 3, 4);
        let x = random(&mut rng, features, steps, 1.0);
        let w = random(&mut rng, 4 * cells, features + cells, 0.6);
        let b: Vec<f64> = (0..4 * cells).map(|_| rng.random_range(-0.5..0.5)).collect();
        let up = random(&mut rng, cells, steps, 1.0);
        let objective = |x: &Tensor2, w: &Tensor2, b: &[f64]| -> f64 {
            let (h, _) = lstm_forward(x, w, b, cells).unwrap();
            h.as_slice().iter().zip(up.as_slice()).map(|(a, g)| a * g).sum()
        };
        let (_, cache) = lstm_forward(&x, &w, &b, cells).unwrap();
        let g = lstm_backward(&up, &cache, &w, cells).unwrap();
        let eps = 1e-6;
        let rel = |a: f64, n: f64| (a - n).abs() / n.abs().max(1e-7);

        for idx in 0..w.len() {
            let (mut p, mut m) = (w.clone(), w.clone());
            p.as_mut_slice()[idx] += eps;
            m.as_mut_slice()[idx] -= eps;
            let n = (objective(&x, &p, &b) - objective(&x, &m, &b)) / (2.0 * eps);
            assert!(rel(g.weights.as_slice()[idx], n) < 1e-5, "w[{idx}]");
        }
        for idx in 0..b.len() {
            let (mut p, mut m) = (b.clone(), b.clone());
            p[idx] += eps;
            m[idx] -= eps;
            let n = (objective(&x, &w, &p) - objective(&x, &w, &m)) / (2.0 * eps);
            assert!(rel(g.bias[idx], n) < 1e-5, "b[{idx}]");
        }
        for idx in 0..x.len() {
            let (mut p, mut m) = (x.clone(), x.clone());
            p.as_mut_slice()[idx] += eps;
            m.as_mut_slice()[idx] -= eps;
            let n = (objective(&p, &w, &b) - objective(&m, &w, &b)) / (2.0 * eps);
            assert!(rel(g.input.as_slice()[idx], n) < 1e-5, "x[{idx}]");
        }
    }
}
