//! Forward and exact reverse-mode backward passes for the primitive set.
//!
//! Conventions shared by every op: stride 1 unless stated, 3×3 windows use
//! same-padding of one pixel, max-pooling ignores padded positions, and
//! average pooling divides by the count of valid positions (so a constant
//! input is preserved exactly). Batch loops are data-parallel; every
//! floating-point reduction runs in a fixed order, so results do not depend
//! on scheduling.

use super::tensor::Tensor;
use crate::assembly::TensorShape;
use crate::par;

/// 1×1 convolution (pointwise, bias-free). `w` is `[c_out][c_in]` row-major.
pub fn conv1x1_forward(x: &Tensor, w: &[f64], c_out: usize) -> Tensor {
    let (c_in, hw) = (x.shape.channels, x.shape.height * x.shape.width);
    debug_assert_eq!(w.len(), c_out * c_in);
    let mut out = Tensor::zeros(TensorShape { channels: c_out, ..x.shape });
    let xs = &x.data;
    let in_len = x.sample_len();
    par::for_each_chunk_mut(&mut out.data, c_out * hw, |b, out_s| {
        let x_s = &xs[b * in_len..(b + 1) * in_len];
        for o in 0..c_out {
            for c in 0..c_in {
                let wv = w[o * c_in + c];
                let (dst, src) = (o * hw, c * hw);
                for p in 0..hw {
                    out_s[dst + p] += wv * x_s[src + p];
                }
            }
        }
    });
    out
}

/// Backward of [`conv1x1_forward`]: input and weight gradients.
pub fn conv1x1_backward(x: &Tensor, w: &[f64], c_out: usize, gy: &Tensor) -> (Tensor, Vec<f64>) {
    let (c_in, hw) = (x.shape.channels, x.shape.height * x.shape.width);
    let batch = x.shape.batch;
    let mut gx = Tensor::zeros(x.shape);
    let gys = &gy.data;
    let out_len = gy.sample_len();
    par::for_each_chunk_mut(&mut gx.data, c_in * hw, |b, gx_s| {
        let gy_s = &gys[b * out_len..(b + 1) * out_len];
        for o in 0..c_out {
            for c in 0..c_in {
                let wv = w[o * c_in + c];
                let (dst, src) = (c * hw, o * hw);
                for p in 0..hw {
                    gx_s[dst + p] += wv * gy_s[src + p];
                }
            }
        }
    });
    // One task per output channel owns a full gw row.
    let xs = &x.data;
    let in_len = x.sample_len();
    let rows = par::map_indexed(c_out, |o| {
        let mut row = vec![0.0; c_in];
        for b in 0..batch {
            let x_s = &xs[b * in_len..(b + 1) * in_len];
            let gy_s = &gys[b * out_len + o * hw..b * out_len + (o + 1) * hw];
            for (c, r) in row.iter_mut().enumerate() {
                let x_c = &x_s[c * hw..(c + 1) * hw];
                let mut acc = 0.0;
                for p in 0..hw {
                    acc += gy_s[p] * x_c[p];
                }
                *r += acc;
            }
        }
        row
    });
    (gx, rows.concat())
}

fn strided_out(dim: usize, stride: usize) -> usize {
    // kernel 3, padding 1
    (dim + 2 - 3) / stride + 1
}

/// Depthwise 3×3 convolution. `k` is `[channels][3][3]` row-major.
pub fn depthwise3x3_forward(x: &Tensor, k: &[f64], stride: usize) -> Tensor {
    let (c_n, h, w) = (x.shape.channels, x.shape.height, x.shape.width);
    debug_assert_eq!(k.len(), c_n * 9);
    let (oh, ow) = (strided_out(h, stride), strided_out(w, stride));
    let mut out = Tensor::zeros(TensorShape { height: oh, width: ow, ..x.shape });
    let xs = &x.data;
    let in_len = x.sample_len();
    par::for_each_chunk_mut(&mut out.data, c_n * oh * ow, |b, out_s| {
        let x_s = &xs[b * in_len..(b + 1) * in_len];
        for c in 0..c_n {
            let kc = &k[c * 9..(c + 1) * 9];
            let x_c = &x_s[c * h * w..(c + 1) * h * w];
            let o_c = &mut out_s[c * oh * ow..(c + 1) * oh * ow];
            for y in 0..oh {
                for xo in 0..ow {
                    let mut acc = 0.0;
                    for dy in 0..3 {
                        let iy = (y * stride + dy) as isize - 1;
                        if iy < 0 || iy >= h as isize {
                            continue;
                        }
                        for dx in 0..3 {
                            let ix = (xo * stride + dx) as isize - 1;
                            if ix < 0 || ix >= w as isize {
                                continue;
                            }
                            acc += kc[dy * 3 + dx] * x_c[iy as usize * w + ix as usize];
                        }
                    }
                    o_c[y * ow + xo] = acc;
                }
            }
        }
    });
    out
}

/// Backward of [`depthwise3x3_forward`].
pub fn depthwise3x3_backward(
    x: &Tensor,
    k: &[f64],
    stride: usize,
    gy: &Tensor,
) -> (Tensor, Vec<f64>) {
    let (c_n, h, w) = (x.shape.channels, x.shape.height, x.shape.width);
    let (oh, ow) = (gy.shape.height, gy.shape.width);
    let batch = x.shape.batch;
    let mut gx = Tensor::zeros(x.shape);
    let gys = &gy.data;
    let out_len = gy.sample_len();
    par::for_each_chunk_mut(&mut gx.data, c_n * h * w, |b, gx_s| {
        let gy_s = &gys[b * out_len..(b + 1) * out_len];
        for c in 0..c_n {
            let kc = &k[c * 9..(c + 1) * 9];
            let g_c = &gy_s[c * oh * ow..(c + 1) * oh * ow];
            let gx_c = &mut gx_s[c * h * w..(c + 1) * h * w];
            for y in 0..oh {
                for xo in 0..ow {
                    let g = g_c[y * ow + xo];
                    for dy in 0..3 {
                        let iy = (y * stride + dy) as isize - 1;
                        if iy < 0 || iy >= h as isize {
                            continue;
                        }
                        for dx in 0..3 {
                            let ix = (xo * stride + dx) as isize - 1;
                            if ix < 0 || ix >= w as isize {
                                continue;
                            }
                            gx_c[iy as usize * w + ix as usize] += kc[dy * 3 + dx] * g;
                        }
                    }
                }
            }
        }
    });
    let xs = &x.data;
    let in_len = x.sample_len();
    let rows = par::map_indexed(c_n, |c| {
        let mut gk = [0.0; 9];
        for b in 0..batch {
            let x_c = &xs[b * in_len + c * h * w..b * in_len + (c + 1) * h * w];
            let g_c = &gys[b * out_len + c * oh * ow..b * out_len + (c + 1) * oh * ow];
            for y in 0..oh {
                for xo in 0..ow {
                    let g = g_c[y * ow + xo];
                    for dy in 0..3 {
                        let iy = (y * stride + dy) as isize - 1;
                        if iy < 0 || iy >= h as isize {
                            continue;
                        }
                        for dx in 0..3 {
                            let ix = (xo * stride + dx) as isize - 1;
                            if ix < 0 || ix >= w as isize {
                                continue;
                            }
                            gk[dy * 3 + dx] += g * x_c[iy as usize * w + ix as usize];
                        }
                    }
                }
            }
        }
        gk.to_vec()
    });
    (gx, rows.concat())
}

/// Full 3×3 convolution (the model stem). `w` is `[c_out][c_in][3][3]`.
pub fn conv3x3_forward(x: &Tensor, w: &[f64], c_out: usize) -> Tensor {
    let (c_in, h, wd) = (x.shape.channels, x.shape.height, x.shape.width);
    debug_assert_eq!(w.len(), c_out * c_in * 9);
    let mut out = Tensor::zeros(TensorShape { channels: c_out, ..x.shape });
    let xs = &x.data;
    let in_len = x.sample_len();
    par::for_each_chunk_mut(&mut out.data, c_out * h * wd, |b, out_s| {
        let x_s = &xs[b * in_len..(b + 1) * in_len];
        for o in 0..c_out {
            let o_c = &mut out_s[o * h * wd..(o + 1) * h * wd];
            for c in 0..c_in {
                let wk = &w[(o * c_in + c) * 9..(o * c_in + c + 1) * 9];
                let x_c = &x_s[c * h * wd..(c + 1) * h * wd];
                for y in 0..h {
                    for xo in 0..wd {
                        let mut acc = 0.0;
                        for dy in 0..3 {
                            let iy = y as isize + dy as isize - 1;
                            if iy < 0 || iy >= h as isize {
                                continue;
                            }
                            for dx in 0..3 {
                                let ix = xo as isize + dx as isize - 1;
                                if ix < 0 || ix >= wd as isize {
                                    continue;
                                }
                                acc += wk[dy * 3 + dx] * x_c[iy as usize * wd + ix as usize];
                            }
                        }
                        o_c[y * wd + xo] += acc;
                    }
                }
            }
        }
    });
    out
}

/// Backward of [`conv3x3_forward`].
pub fn conv3x3_backward(x: &Tensor, w: &[f64], c_out: usize, gy: &Tensor) -> (Tensor, Vec<f64>) {
    let (c_in, h, wd) = (x.shape.channels, x.shape.height, x.shape.width);
    let batch = x.shape.batch;
    let mut gx = Tensor::zeros(x.shape);
    let gys = &gy.data;
    let out_len = gy.sample_len();
    par::for_each_chunk_mut(&mut gx.data, c_in * h * wd, |b, gx_s| {
        let gy_s = &gys[b * out_len..(b + 1) * out_len];
        for o in 0..c_out {
            let g_c = &gy_s[o * h * wd..(o + 1) * h * wd];
            for c in 0..c_in {
                let wk = &w[(o * c_in + c) * 9..(o * c_in + c + 1) * 9];
                let gx_c = &mut gx_s[c * h * wd..(c + 1) * h * wd];
                for y in 0..h {
                    for xo in 0..wd {
                        let g = g_c[y * wd + xo];
                        for dy in 0..3 {
                            let iy = y as isize + dy as isize - 1;
                            if iy < 0 || iy >= h as isize {
                                continue;
                            }
                            for dx in 0..3 {
                                let ix = xo as isize + dx as isize - 1;
                                if ix < 0 || ix >= wd as isize {
                                    continue;
                                }
                                gx_c[iy as usize * wd + ix as usize] += wk[dy * 3 + dx] * g;
                            }
                        }
                    }
                }
            }
        }
    });
    let xs = &x.data;
    let in_len = x.sample_len();
    let rows = par::map_indexed(c_out, |o| {
        let mut gw = vec![0.0; c_in * 9];
        for b in 0..batch {
            let x_s = &xs[b * in_len..(b + 1) * in_len];
            let g_c = &gys[b * out_len + o * h * wd..b * out_len + (o + 1) * h * wd];
            for c in 0..c_in {
                let x_c = &x_s[c * h * wd..(c + 1) * h * wd];
                let gw_c = &mut gw[c * 9..(c + 1) * 9];
                for y in 0..h {
                    for xo in 0..wd {
                        let g = g_c[y * wd + xo];
                        for dy in 0..3 {
                            let iy = y as isize + dy as isize - 1;
                            if iy < 0 || iy >= h as isize {
                                continue;
                            }
                            for dx in 0..3 {
                                let ix = xo as isize + dx as isize - 1;
                                if ix < 0 || ix >= wd as isize {
                                    continue;
                                }
                                gw_c[dy * 3 + dx] += g * x_c[iy as usize * wd + ix as usize];
                            }
                        }
                    }
                }
            }
        }
        gw
    });
    (gx, rows.concat())
}

/// 3×3 max-pooling, stride 1, same-padding; padded positions are ignored.
/// Returns the pooled tensor and the per-sample argmax index of each output
/// element (for the backward pass).
pub fn maxpool3x3_forward(x: &Tensor) -> (Tensor, Vec<u32>) {
    let (c_n, h, w) = (x.shape.channels, x.shape.height, x.shape.width);
    let sample = x.sample_len();
    let mut argmax = vec![0u32; x.data.len()];
    let xs = &x.data;
    par::for_each_chunk_mut(&mut argmax, sample, |b, am_s| {
        let x_s = &xs[b * sample..(b + 1) * sample];
        for c in 0..c_n {
            let x_c = &x_s[c * h * w..(c + 1) * h * w];
            for y in 0..h {
                for xo in 0..w {
                    let mut best = f64::NEG_INFINITY;
                    let mut best_at = 0usize;
                    for dy in 0..3 {
                        let iy = y as isize + dy - 1;
                        if iy < 0 || iy >= h as isize {
                            continue;
                        }
                        for dx in 0..3 {
                            let ix = xo as isize + dx - 1;
                            if ix < 0 || ix >= w as isize {
                                continue;
                            }
                            let at = iy as usize * w + ix as usize;
                            if x_c[at] > best {
                                best = x_c[at];
                                best_at = at;
                            }
                        }
                    }
                    am_s[c * h * w + y * w + xo] = (c * h * w + best_at) as u32;
                }
            }
        }
    });
    let mut out = Tensor::zeros(x.shape);
    par::for_each_chunk_mut(&mut out.data, sample, |b, out_s| {
        let x_s = &xs[b * sample..(b + 1) * sample];
        let am_s = &argmax[b * sample..(b + 1) * sample];
        for p in 0..sample {
            out_s[p] = x_s[am_s[p] as usize];
        }
    });
    (out, argmax)
}

/// Backward of [`maxpool3x3_forward`]: route each output gradient to the
/// input position that won its window.
pub fn maxpool3x3_backward(shape: TensorShape, argmax: &[u32], gy: &Tensor) -> Tensor {
    let mut gx = Tensor::zeros(shape);
    let sample = gx.sample_len();
    let gys = &gy.data;
    par::for_each_chunk_mut(&mut gx.data, sample, |b, gx_s| {
        let gy_s = &gys[b * sample..(b + 1) * sample];
        let am_s = &argmax[b * sample..(b + 1) * sample];
        for p in 0..sample {
            gx_s[am_s[p] as usize] += gy_s[p];
        }
    });
    gx
}

/// 3×3 average pooling, stride 1, same-padding; each output divides by the
/// number of valid (non-padded) positions in its window, so constants are
/// preserved exactly.
pub fn avgpool3x3_forward(x: &Tensor) -> Tensor {
    let (c_n, h, w) = (x.shape.channels, x.shape.height, x.shape.width);
    let mut out = Tensor::zeros(x.shape);
    let sample = x.sample_len();
    let xs = &x.data;
    par::for_each_chunk_mut(&mut out.data, sample, |b, out_s| {
        let x_s = &xs[b * sample..(b + 1) * sample];
        for c in 0..c_n {
            let x_c = &x_s[c * h * w..(c + 1) * h * w];
            for y in 0..h {
                for xo in 0..w {
                    let mut acc = 0.0;
                    let mut count = 0.0;
                    for dy in 0..3 {
                        let iy = y as isize + dy - 1;
                        if iy < 0 || iy >= h as isize {
                            continue;
                        }
                        for dx in 0..3 {
                            let ix = xo as isize + dx - 1;
                            if ix < 0 || ix >= w as isize {
                                continue;
                            }
                            acc += x_c[iy as usize * w + ix as usize];
                            count += 1.0;
                        }
                    }
                    out_s[c * h * w + y * w + xo] = acc / count;
                }
            }
        }
    });
    out
}

/// Backward of [`avgpool3x3_forward`].
pub fn avgpool3x3_backward(shape: TensorShape, gy: &Tensor) -> Tensor {
    let (c_n, h, w) = (shape.channels, shape.height, shape.width);
    let mut gx = Tensor::zeros(shape);
    let sample = gx.sample_len();
    let gys = &gy.data;
    par::for_each_chunk_mut(&mut gx.data, sample, |b, gx_s| {
        let gy_s = &gys[b * sample..(b + 1) * sample];
        for c in 0..c_n {
            let gx_c = &mut gx_s[c * h * w..(c + 1) * h * w];
            let gy_c = &gy_s[c * h * w..(c + 1) * h * w];
            for y in 0..h {
                for xo in 0..w {
                    let mut count = 0.0;
                    for dy in 0..3 {
                        let iy = y as isize + dy - 1;
                        if iy >= 0 && iy < h as isize {
                            for dx in 0..3 {
                                let ix = xo as isize + dx - 1;
                                if ix >= 0 && ix < w as isize {
                                    count += 1.0;
                                }
                            }
                        }
                    }
                    let g = gy_c[y * w + xo] / count;
                    for dy in 0..3 {
                        let iy = y as isize + dy - 1;
                        if iy < 0 || iy >= h as isize {
                            continue;
                        }
                        for dx in 0..3 {
                            let ix = xo as isize + dx - 1;
                            if ix < 0 || ix >= w as isize {
                                continue;
                            }
                            gx_c[iy as usize * w + ix as usize] += g;
                        }
                    }
                }
            }
        }
    });
    gx
}

/// Global average pooling to `(B, C, 1, 1)`.
pub fn gap_forward(x: &Tensor) -> Tensor {
    let (c_n, hw) = (x.shape.channels, x.shape.height * x.shape.width);
    let mut out = Tensor::zeros(TensorShape { height: 1, width: 1, ..x.shape });
    let sample = x.sample_len();
    let xs = &x.data;
    par::for_each_chunk_mut(&mut out.data, c_n, |b, out_s| {
        let x_s = &xs[b * sample..(b + 1) * sample];
        for (c, o) in out_s.iter_mut().enumerate() {
            let x_c = &x_s[c * hw..(c + 1) * hw];
            *o = x_c.iter().sum::<f64>() / hw as f64;
        }
    });
    out
}

/// Backward of [`gap_forward`].
pub fn gap_backward(shape: TensorShape, gy: &Tensor) -> Tensor {
    let (c_n, hw) = (shape.channels, shape.height * shape.width);
    let mut gx = Tensor::zeros(shape);
    let gys = &gy.data;
    par::for_each_chunk_mut(&mut gx.data, c_n * hw, |b, gx_s| {
        for c in 0..c_n {
            let g = gys[b * c_n + c] / hw as f64;
            for p in 0..hw {
                gx_s[c * hw + p] = g;
            }
        }
    });
    gx
}

/// Fully connected layer on `(B, C, 1, 1)` inputs: `w` is `[classes][c]`,
/// `bias` is `[classes]`. Output is `(B, classes, 1, 1)`.
pub fn linear_forward(x: &Tensor, w: &[f64], bias: &[f64], classes: usize) -> Tensor {
    let c_in = x.shape.channels;
    let mut out = Tensor::zeros(TensorShape { channels: classes, ..x.shape });
    let xs = &x.data;
    par::for_each_chunk_mut(&mut out.data, classes, |b, out_s| {
        let x_s = &xs[b * c_in..(b + 1) * c_in];
        for (k, o) in out_s.iter_mut().enumerate() {
            let row = &w[k * c_in..(k + 1) * c_in];
            *o = bias[k] + row.iter().zip(x_s).map(|(a, b)| a * b).sum::<f64>();
        }
    });
    out
}

/// Backward of [`linear_forward`].
pub fn linear_backward(
    x: &Tensor,
    w: &[f64],
    classes: usize,
    gy: &Tensor,
) -> (Tensor, Vec<f64>, Vec<f64>) {
    let (c_in, batch) = (x.shape.channels, x.shape.batch);
    let mut gx = Tensor::zeros(x.shape);
    let gys = &gy.data;
    par::for_each_chunk_mut(&mut gx.data, c_in, |b, gx_s| {
        let gy_s = &gys[b * classes..(b + 1) * classes];
        for k in 0..classes {
            let row = &w[k * c_in..(k + 1) * c_in];
            for c in 0..c_in {
                gx_s[c] += row[c] * gy_s[k];
            }
        }
    });
    let xs = &x.data;
    let rows = par::map_indexed(classes, |k| {
        let mut gw = vec![0.0; c_in + 1]; // weights then bias
        for b in 0..batch {
            let g = gys[b * classes + k];
            let x_s = &xs[b * c_in..(b + 1) * c_in];
            for c in 0..c_in {
                gw[c] += g * x_s[c];
            }
            gw[c_in] += g;
        }
        gw
    });
    let mut gw = Vec::with_capacity(classes * c_in);
    let mut gb = Vec::with_capacity(classes);
    for row in rows {
        gw.extend_from_slice(&row[..c_in]);
        gb.push(row[c_in]);
    }
    (gx, gw, gb)
}

/// Rectifier.
pub fn relu_forward(x: &Tensor) -> Tensor {
    let mut out = x.clone();
    for v in &mut out.data {
        if *v < 0.0 {
            *v = 0.0;
        }
    }
    out
}

/// Backward of [`relu_forward`] given the pre-activation tensor.
pub fn relu_backward(pre: &Tensor, gy: &Tensor) -> Tensor {
    let mut gx = gy.clone();
    for (g, &z) in gx.data.iter_mut().zip(&pre.data) {
        if z <= 0.0 {
            *g = 0.0;
        }
    }
    gx
}

/// Mean softmax cross-entropy over the batch. Returns the loss and the
/// gradient w.r.t. the logits (`(softmax − one_hot) / batch`).
pub fn softmax_xent(logits: &Tensor, labels: &[usize]) -> (f64, Tensor) {
    let (batch, classes) = (logits.shape.batch, logits.shape.channels);
    assert_eq!(labels.len(), batch);
    let mut grad = Tensor::zeros(logits.shape);
    let mut loss = 0.0;
    for b in 0..batch {
        let z = &logits.data[b * classes..(b + 1) * classes];
        let g = &mut grad.data[b * classes..(b + 1) * classes];
        let zmax = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut denom = 0.0;
        for &v in z {
            denom += (v - zmax).exp();
        }
        let log_denom = denom.ln() + zmax;
        loss += log_denom - z[labels[b]];
        for (k, gv) in g.iter_mut().enumerate() {
            let p = (z[k] - log_denom).exp();
            *gv = (p - if k == labels[b] { 1.0 } else { 0.0 }) / batch as f64;
        }
    }
    (loss / batch as f64, grad)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn filled(shape: TensorShape, f: impl Fn(usize) -> f64) -> Tensor {
        let data = (0..shape.len()).map(f).collect();
        Tensor::from_vec(shape, data)
    }

    #[test]
    fn maxpool_of_a_constant_is_the_constant() {
        let x = filled(TensorShape::new(2, 3, 5, 5), |_| 1.25);
        let (y, _) = maxpool3x3_forward(&x);
        assert!(y.data.iter().all(|&v| v == 1.25));
    }

    #[test]
    fn avgpool_preserves_constants_exactly() {
        let x = filled(TensorShape::new(1, 2, 4, 4), |_| -0.75);
        let y = avgpool3x3_forward(&x);
        assert!(y.data.iter().all(|&v| v == -0.75));
    }

    #[test]
    fn gap_averages_each_channel() {
        let x = filled(TensorShape::new(1, 1, 2, 2), |i| i as f64);
        let y = gap_forward(&x);
        assert_abs_diff_eq!(y.data[0], 1.5);
    }

    #[test]
    fn softmax_gradient_is_probability_minus_onehot() {
        let logits = filled(TensorShape::new(1, 3, 1, 1), |_| 0.0);
        let (loss, grad) = softmax_xent(&logits, &[1]);
        assert_abs_diff_eq!(loss, (3.0f64).ln(), epsilon = 1e-12);
        assert_abs_diff_eq!(grad.data[0], 1.0 / 3.0, epsilon = 1e-12);
        assert_abs_diff_eq!(grad.data[1], 1.0 / 3.0 - 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(grad.data[2], 1.0 / 3.0, epsilon = 1e-12);
    }

    #[test]
    fn conv1x1_matches_a_hand_computation() {
        let x = filled(TensorShape::new(1, 2, 1, 2), |i| i as f64); // ch0: [0,1], ch1: [2,3]
        let w = vec![1.0, 10.0]; // single output channel
        let y = conv1x1_forward(&x, &w, 1);
        assert_eq!(y.data, vec![20.0, 31.0]);
    }
}
