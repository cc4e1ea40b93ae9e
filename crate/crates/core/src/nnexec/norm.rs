//! Per-channel batch normalization.
//!
//! Train mode normalizes with batch statistics (biased variance over
//! `B·H·W`) and folds them into running averages; eval mode normalizes with
//! the running averages. Frozen mode also uses the running averages but
//! treats them as constants in the backward pass, turning the layer into a
//! per-channel affine map — the configuration used for finite-difference
//! gradient checks, which need batch-independent behavior.

use super::tensor::Tensor;
use crate::par;
use serde::{Deserialize, Serialize};

pub const BN_EPS: f64 = 1e-5;
pub const BN_MOMENTUM: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NormMode {
    Train,
    Eval,
    Frozen,
}

/// Running statistics, one pair per channel.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BnBuffers {
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
}

impl BnBuffers {
    pub fn new(channels: usize) -> Self {
        BnBuffers { mean: vec![0.0; channels], var: vec![1.0; channels] }
    }
}

/// Everything the backward pass needs.
pub struct BnCache {
    pub xhat: Tensor,
    pub inv_std: Vec<f64>,
    pub batch_stats: bool,
}

pub fn bn_forward(
    x: &Tensor,
    gamma: &[f64],
    beta: &[f64],
    buffers: &mut BnBuffers,
    mode: NormMode,
) -> (Tensor, BnCache) {
    let (c_n, hw, batch) = (x.shape.channels, x.shape.height * x.shape.width, x.shape.batch);
    let sample = x.sample_len();
    let count = (batch * hw) as f64;
    let xs = &x.data;

    let (mean, var) = match mode {
        NormMode::Train => {
            let stats = par::map_indexed(c_n, |c| {
                let mut sum = 0.0;
                let mut sumsq = 0.0;
                for b in 0..batch {
                    let x_c = &xs[b * sample + c * hw..b * sample + (c + 1) * hw];
                    for &v in x_c {
                        sum += v;
                        sumsq += v * v;
                    }
                }
                let m = sum / count;
                (m, (sumsq / count - m * m).max(0.0))
            });
            let mean: Vec<f64> = stats.iter().map(|s| s.0).collect();
            let var: Vec<f64> = stats.iter().map(|s| s.1).collect();
            for c in 0..c_n {
                buffers.mean[c] = (1.0 - BN_MOMENTUM) * buffers.mean[c] + BN_MOMENTUM * mean[c];
                buffers.var[c] = (1.0 - BN_MOMENTUM) * buffers.var[c] + BN_MOMENTUM * var[c];
            }
            (mean, var)
        }
        NormMode::Eval | NormMode::Frozen => (buffers.mean.clone(), buffers.var.clone()),
    };

    let inv_std: Vec<f64> = var.iter().map(|&v| 1.0 / (v + BN_EPS).sqrt()).collect();
    let mut xhat = Tensor::zeros(x.shape);
    let mut out = Tensor::zeros(x.shape);
    par::for_each_chunk_mut(&mut xhat.data, sample, |b, xh_s| {
        let x_s = &xs[b * sample..(b + 1) * sample];
        for c in 0..c_n {
            let (m, s) = (mean[c], inv_std[c]);
            for p in 0..hw {
                xh_s[c * hw + p] = (x_s[c * hw + p] - m) * s;
            }
        }
    });
    let xh = &xhat.data;
    par::for_each_chunk_mut(&mut out.data, sample, |b, out_s| {
        let xh_s = &xh[b * sample..(b + 1) * sample];
        for c in 0..c_n {
            let (g, be) = (gamma[c], beta[c]);
            for p in 0..hw {
                out_s[c * hw + p] = g * xh_s[c * hw + p] + be;
            }
        }
    });
    (out, BnCache { xhat, inv_std, batch_stats: mode == NormMode::Train })
}

/// Backward pass: gradients for the input, gamma, and beta.
pub fn bn_backward(cache: &BnCache, gamma: &[f64], gy: &Tensor) -> (Tensor, Vec<f64>, Vec<f64>) {
    let (c_n, hw, batch) = (gy.shape.channels, gy.shape.height * gy.shape.width, gy.shape.batch);
    let sample = gy.sample_len();
    let count = (batch * hw) as f64;
    let gys = &gy.data;
    let xh = &cache.xhat.data;

    // Per-channel sums: Σ gy and Σ gy·x̂.
    let sums = par::map_indexed(c_n, |c| {
        let mut s1 = 0.0;
        let mut s2 = 0.0;
        for b in 0..batch {
            let base = b * sample + c * hw;
            for p in 0..hw {
                s1 += gys[base + p];
                s2 += gys[base + p] * xh[base + p];
            }
        }
        (s1, s2)
    });
    let gbeta: Vec<f64> = sums.iter().map(|s| s.0).collect();
    let ggamma: Vec<f64> = sums.iter().map(|s| s.1).collect();

    let mut gx = Tensor::zeros(gy.shape);
    let batch_stats = cache.batch_stats;
    let inv_std = &cache.inv_std;
    par::for_each_chunk_mut(&mut gx.data, sample, |b, gx_s| {
        let gy_s = &gys[b * sample..(b + 1) * sample];
        let xh_s = &xh[b * sample..(b + 1) * sample];
        for c in 0..c_n {
            let scale = gamma[c] * inv_std[c];
            if batch_stats {
                let (m1, m2) = (gbeta[c] / count, ggamma[c] / count);
                for p in 0..hw {
                    let at = c * hw + p;
                    gx_s[at] = scale * (gy_s[at] - m1 - xh_s[at] * m2);
                }
            } else {
                for p in 0..hw {
                    let at = c * hw + p;
                    gx_s[at] = scale * gy_s[at];
                }
            }
        }
    });
    (gx, ggamma, gbeta)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::assembly::TensorShape;
    use approx::assert_abs_diff_eq;

    #[test]
    fn train_mode_normalizes_to_zero_mean_unit_variance() {
        let shape = TensorShape::new(4, 2, 3, 3);
        let data: Vec<f64> = (0..shape.len()).map(|i| (i as f64) * 0.37 - 5.0).collect();
        let x = Tensor::from_vec(shape, data);
        let mut buffers = BnBuffers::new(2);
        let (y, _) = bn_forward(&x, &[1.0, 1.0], &[0.0, 0.0], &mut buffers, NormMode::Train);
        for c in 0..2 {
            let mut sum = 0.0;
            let mut sumsq = 0.0;
            let mut n = 0.0;
            for b in 0..4 {
                for h in 0..3 {
                    for w in 0..3 {
                        let v = y.at(b, c, h, w);
                        sum += v;
                        sumsq += v * v;
                        n += 1.0;
                    }
                }
            }
            assert_abs_diff_eq!(sum / n, 0.0, epsilon = 1e-9);
            assert_abs_diff_eq!(sumsq / n, 1.0, epsilon = 1e-3); // eps-regularized
        }
    }

    #[test]
    fn frozen_mode_is_a_pure_affine_map() {
        let shape = TensorShape::new(2, 1, 2, 2);
        let x = Tensor::from_vec(shape, vec![1.0; 8]);
        let mut buffers = BnBuffers::new(1);
        buffers.mean[0] = 0.5;
        buffers.var[0] = 4.0;
        let (y, cache) = bn_forward(&x, &[2.0], &[1.0], &mut buffers, NormMode::Frozen);
        let expected = 2.0 * (1.0 - 0.5) / (4.0 + BN_EPS).sqrt() + 1.0;
        assert_abs_diff_eq!(y.data[0], expected, epsilon = 1e-12);
        assert!(!cache.batch_stats);
        assert_eq!(buffers.mean[0], 0.5); // untouched
    }
}
