//! Per-layer forward, backward and tangent kernels on row-major buffers.
//!
//! Activations are `[batch, features]` (linear) or `[batch, c, h, w]`
//! (convolutional). Convolutions are 3×3, stride 1, zero padding 1.

use crate::numerics::{gemm, Scalar};

pub(crate) const BN_EPS: f64 = 1e-5;
pub(crate) const BN_MOMENTUM: f64 = 0.1;

/// `y[b, out] = x[b, inp] · Wᵀ + bias`; `bias` may be absent for tangents.
pub(crate) fn linear_forward<F: Scalar>(
    x: &[F],
    batch: usize,
    inp: usize,
    out: usize,
    weight: &[F],
    bias: Option<&[F]>,
    beta: F,
    y: &mut [F],
) {
    gemm(false, true, batch, out, inp, F::one(), x, weight, beta, y);
    if let Some(bias) = bias {
        for row in y.chunks_exact_mut(out) {
            for (v, &b) in row.iter_mut().zip(bias) {
                *v = *v + b;
            }
        }
    }
}

/// `gx = gy · W` (overwrites or accumulates by `beta`).
pub(crate) fn linear_input_grad<F: Scalar>(
    gy: &[F],
    batch: usize,
    inp: usize,
    out: usize,
    weight: &[F],
    beta: F,
    gx: &mut [F],
) {
    gemm(false, false, batch, inp, out, F::one(), gy, weight, beta, gx);
}

/// `gW (+)= gyᵀ · x`, `gb (+)= Σ_b gy`.
pub(crate) fn linear_param_grad<F: Scalar>(
    gy: &[F],
    x: &[F],
    batch: usize,
    inp: usize,
    out: usize,
    beta: F,
    gw: &mut [F],
    gb: Option<&mut [F]>,
) {
    gemm(true, false, out, inp, batch, F::one(), gy, x, beta, gw);
    if let Some(gb) = gb {
        if beta == F::zero() {
            gb.iter_mut().for_each(|v| *v = F::zero());
        }
        for row in gy.chunks_exact(out) {
            for (g, &v) in gb.iter_mut().zip(row) {
                *g = *g + v;
            }
        }
    }
}

/// Unfold one `[c, h, w]` image into `[c*9, h*w]` patch columns.
pub(crate) fn im2col<F: Scalar>(x: &[F], c: usize, h: usize, w: usize, col: &mut [F]) {
    let hw = h * w;
    for ci in 0..c {
        let plane = &x[ci * hw..(ci + 1) * hw];
        for ky in 0..3 {
            for kx in 0..3 {
                let row = &mut col[(ci * 9 + ky * 3 + kx) * hw..(ci * 9 + ky * 3 + kx + 1) * hw];
                for oy in 0..h {
                    let iy = oy as isize + ky as isize - 1;
                    let dst = &mut row[oy * w..(oy + 1) * w];
                    if iy < 0 || iy >= h as isize {
                        dst.iter_mut().for_each(|v| *v = F::zero());
                        continue;
                    }
                    let src = &plane[iy as usize * w..(iy as usize + 1) * w];
                    for (ox, d) in dst.iter_mut().enumerate() {
                        let ix = ox as isize + kx as isize - 1;
                        *d = if ix < 0 || ix >= w as isize { F::zero() } else { src[ix as usize] };
                    }
                }
            }
        }
    }
}

/// Adjoint of [`im2col`]: accumulate columns back into an image.
pub(crate) fn col2im_add<F: Scalar>(col: &[F], c: usize, h: usize, w: usize, x: &mut [F]) {
    let hw = h * w;
    for ci in 0..c {
        let plane = &mut x[ci * hw..(ci + 1) * hw];
        for ky in 0..3 {
            for kx in 0..3 {
                let row = &col[(ci * 9 + ky * 3 + kx) * hw..(ci * 9 + ky * 3 + kx + 1) * hw];
                for oy in 0..h {
                    let iy = oy as isize + ky as isize - 1;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    let src = &row[oy * w..(oy + 1) * w];
                    let dst = &mut plane[iy as usize * w..(iy as usize + 1) * w];
                    for (ox, &v) in src.iter().enumerate() {
                        let ix = ox as isize + kx as isize - 1;
                        if ix >= 0 && ix < w as isize {
                            dst[ix as usize] = dst[ix as usize] + v;
                        }
                    }
                }
            }
        }
    }
}

pub(crate) struct ConvShape {
    pub cin: usize,
    pub cout: usize,
    pub h: usize,
    pub w: usize,
}

impl ConvShape {
    fn in_len(&self) -> usize {
        self.cin * self.h * self.w
    }
    fn out_len(&self) -> usize {
        self.cout * self.h * self.w
    }
    fn col_len(&self) -> usize {
        self.cin * 9 * self.h * self.w
    }
}

/// `y_b (+)= W · col(x_b) + bias` for each sample.
pub(crate) fn conv_forward<F: Scalar>(
    s: &ConvShape,
    x: &[F],
    batch: usize,
    weight: &[F],
    bias: Option<&[F]>,
    beta: F,
    y: &mut [F],
) {
    let hw = s.h * s.w;
    let mut col = vec![F::zero(); s.col_len()];
    for b in 0..batch {
        im2col(&x[b * s.in_len()..(b + 1) * s.in_len()], s.cin, s.h, s.w, &mut col);
        let yb = &mut y[b * s.out_len()..(b + 1) * s.out_len()];
        gemm(false, false, s.cout, hw, s.cin * 9, F::one(), weight, &col, beta, yb);
        if let Some(bias) = bias {
            for (co, plane) in yb.chunks_exact_mut(hw).enumerate() {
                plane.iter_mut().for_each(|v| *v = *v + bias[co]);
            }
        }
    }
}

/// `gx (+)= col2im(Wᵀ · gy)`; `gx` must be zeroed by the caller when not accumulating.
pub(crate) fn conv_input_grad_add<F: Scalar>(s: &ConvShape, gy: &[F], batch: usize, weight: &[F], gx: &mut [F]) {
    let hw = s.h * s.w;
    let mut gcol = vec![F::zero(); s.col_len()];
    for b in 0..batch {
        let gyb = &gy[b * s.out_len()..(b + 1) * s.out_len()];
        gemm(true, false, s.cin * 9, hw, s.cout, F::one(), weight, gyb, F::zero(), &mut gcol);
        col2im_add(&gcol, s.cin, s.h, s.w, &mut gx[b * s.in_len()..(b + 1) * s.in_len()]);
    }
}

/// `gW += Σ_b gy_b · col(x_b)ᵀ`, `gb += Σ gy` (accumulating; zero first).
pub(crate) fn conv_param_grad_add<F: Scalar>(
    s: &ConvShape,
    gy: &[F],
    x: &[F],
    batch: usize,
    gw: &mut [F],
    gb: Option<&mut [F]>,
) {
    let hw = s.h * s.w;
    let mut col = vec![F::zero(); s.col_len()];
    for b in 0..batch {
        im2col(&x[b * s.in_len()..(b + 1) * s.in_len()], s.cin, s.h, s.w, &mut col);
        let gyb = &gy[b * s.out_len()..(b + 1) * s.out_len()];
        gemm(false, true, s.cout, s.cin * 9, hw, F::one(), gyb, &col, F::one(), gw);
    }
    if let Some(gb) = gb {
        for b in 0..batch {
            let gyb = &gy[b * s.out_len()..(b + 1) * s.out_len()];
            for (co, plane) in gyb.chunks_exact(hw).enumerate() {
                let s: f64 = plane.iter().map(|v| v.as_f64()).sum();
                gb[co] = gb[co] + F::from_f64(s);
            }
        }
    }
}

/// Batch statistics normalization: returns per-channel `(mean, biased var)`
/// and writes `y = (x - mean) / sqrt(var + eps)`.
pub(crate) fn batch_norm_train<F: Scalar>(
    x: &[F],
    batch: usize,
    channels: usize,
    plane: usize,
    y: &mut [F],
    invstd: &mut [F],
) -> (Vec<f64>, Vec<f64>) {
    let n = (batch * plane) as f64;
    let mut means = vec![0.0f64; channels];
    let mut vars = vec![0.0f64; channels];
    for c in 0..channels {
        let mut s = 0.0;
        for b in 0..batch {
            let off = (b * channels + c) * plane;
            s += x[off..off + plane].iter().map(|v| v.as_f64()).sum::<f64>();
        }
        let mean = s / n;
        let mut ss = 0.0;
        for b in 0..batch {
            let off = (b * channels + c) * plane;
            ss += x[off..off + plane].iter().map(|v| (v.as_f64() - mean).powi(2)).sum::<f64>();
        }
        let var = ss / n;
        let inv = 1.0 / (var + BN_EPS).sqrt();
        means[c] = mean;
        vars[c] = var;
        invstd[c] = F::from_f64(inv);
        let (m, i) = (F::from_f64(mean), F::from_f64(inv));
        for b in 0..batch {
            let off = (b * channels + c) * plane;
            for (o, &v) in y[off..off + plane].iter_mut().zip(&x[off..off + plane]) {
                *o = (v - m) * i;
            }
        }
    }
    (means, vars)
}

/// Backward through batch-statistics normalization with no affine terms.
/// `xhat` is the layer output.
pub(crate) fn batch_norm_train_backward<F: Scalar>(
    gy: &[F],
    xhat: &[F],
    batch: usize,
    channels: usize,
    plane: usize,
    invstd: &[F],
    gx: &mut [F],
) {
    let n = (batch * plane) as f64;
    for c in 0..channels {
        let (mut sg, mut sgx) = (0.0f64, 0.0f64);
        for b in 0..batch {
            let off = (b * channels + c) * plane;
            for (&g, &xh) in gy[off..off + plane].iter().zip(&xhat[off..off + plane]) {
                sg += g.as_f64();
                sgx += g.as_f64() * xh.as_f64();
            }
        }
        let inv = invstd[c].as_f64();
        for b in 0..batch {
            let off = (b * channels + c) * plane;
            for ((o, &g), &xh) in gx[off..off + plane].iter_mut().zip(&gy[off..off + plane]).zip(&xhat[off..off + plane]) {
                *o = F::from_f64(inv / n * (n * g.as_f64() - sg - xh.as_f64() * sgx));
            }
        }
    }
}

/// Normalization with fixed statistics: `y = (x - mean) * invstd` per channel.
pub(crate) fn channel_affine<F: Scalar>(
    x: &[F],
    batch: usize,
    channels: usize,
    plane: usize,
    shift: Option<&[F]>,
    invstd: &[F],
    y: &mut [F],
) {
    for b in 0..batch {
        for c in 0..channels {
            let off = (b * channels + c) * plane;
            let m = shift.map_or(F::zero(), |s| s[c]);
            let i = invstd[c];
            for (o, &v) in y[off..off + plane].iter_mut().zip(&x[off..off + plane]) {
                *o = (v - m) * i;
            }
        }
    }
}

/// 2×2 max pooling, stride 2. Records the flat input index of each maximum;
/// ties go to the first element in scan order.
pub(crate) fn max_pool_forward<F: Scalar>(
    x: &[F],
    batch: usize,
    channels: usize,
    h: usize,
    w: usize,
    y: &mut [F],
    argmax: &mut [u32],
) {
    let (oh, ow) = (h / 2, w / 2);
    for bc in 0..batch * channels {
        let base = bc * h * w;
        for oy in 0..oh {
            for ox in 0..ow {
                let mut best = base + (2 * oy) * w + 2 * ox;
                for (dy, dx) in [(0, 1), (1, 0), (1, 1)] {
                    let idx = base + (2 * oy + dy) * w + 2 * ox + dx;
                    if x[idx] > x[best] {
                        best = idx;
                    }
                }
                let o = bc * oh * ow + oy * ow + ox;
                y[o] = x[best];
                argmax[o] = best as u32;
            }
        }
    }
}

pub(crate) fn gather<F: Scalar>(x: &[F], argmax: &[u32], y: &mut [F]) {
    for (o, &i) in y.iter_mut().zip(argmax) {
        *o = x[i as usize];
    }
}

pub(crate) fn scatter<F: Scalar>(gy: &[F], argmax: &[u32], gx: &mut [F]) {
    gx.iter_mut().for_each(|v| *v = F::zero());
    for (&g, &i) in gy.iter().zip(argmax) {
        gx[i as usize] = gx[i as usize] + g;
    }
}

/// Multiply by the ReLU derivative evaluated at `pre` (0 at exactly 0).
pub(crate) fn relu_mask<F: Scalar>(pre: &[F], g: &[F], out: &mut [F]) {
    for ((o, &p), &v) in out.iter_mut().zip(pre).zip(g) {
        *o = if p > F::zero() { v } else { F::zero() };
    }
}

/// Mean softmax cross-entropy over rows of `logits`; writes
/// `dL/dlogits` and the softmax probabilities.
pub(crate) fn softmax_cross_entropy<F: Scalar>(
    logits: &[F],
    labels: &[u8],
    classes: usize,
    grad: &mut [F],
    probs: &mut [f64],
) -> f64 {
    let batch = labels.len();
    let inv_b = 1.0 / batch as f64;
    let mut total = 0.0;
    for (b, &label) in labels.iter().enumerate() {
        let row = &logits[b * classes..(b + 1) * classes];
        let max = row.iter().map(|v| v.as_f64()).fold(f64::NEG_INFINITY, f64::max);
        let sum: f64 = row.iter().map(|v| (v.as_f64() - max).exp()).sum();
        let lse = max + sum.ln();
        total += lse - row[label as usize].as_f64();
        for c in 0..classes {
            let p = (row[c].as_f64() - lse).exp();
            probs[b * classes + c] = p;
            let target = if c == label as usize { 1.0 } else { 0.0 };
            grad[b * classes + c] = F::from_f64((p - target) * inv_b);
        }
    }
    total * inv_b
}

/// Directional derivative of the cross-entropy logit gradient along `dlogits`:
/// `(p ⊙ ż − p (p · ż)) / batch`.
pub(crate) fn softmax_cross_entropy_tangent<F: Scalar>(
    probs: &[f64],
    dlogits: &[F],
    batch: usize,
    classes: usize,
    out: &mut [F],
) {
    let inv_b = 1.0 / batch as f64;
    for b in 0..batch {
        let p = &probs[b * classes..(b + 1) * classes];
        let z = &dlogits[b * classes..(b + 1) * classes];
        let pz: f64 = p.iter().zip(z).map(|(&pi, &zi)| pi * zi.as_f64()).sum();
        for c in 0..classes {
            out[b * classes + c] = F::from_f64(p[c] * (z[c].as_f64() - pz) * inv_b);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn naive_conv(x: &[f64], c: usize, h: usize, w: usize, wt: &[f64], cout: usize) -> Vec<f64> {
        let mut y = vec![0.0; cout * h * w];
        for co in 0..cout {
            for oy in 0..h {
                for ox in 0..w {
                    let mut s = 0.0;
                    for ci in 0..c {
                        for ky in 0..3 {
                            for kx in 0..3 {
                                let iy = oy as isize + ky as isize - 1;
                                let ix = ox as isize + kx as isize - 1;
                                if iy >= 0 && ix >= 0 && (iy as usize) < h && (ix as usize) < w {
                                    s += wt[((co * c + ci) * 3 + ky) * 3 + kx]
                                        * x[(ci * h + iy as usize) * w + ix as usize];
                                }
                            }
                        }
                    }
                    y[(co * h + oy) * w + ox] = s;
                }
            }
        }
        y
    }

    #[test]
    fn conv_matches_direct_loops() {
        let (c, h, w, cout) = (2, 4, 6, 3);
        let x: Vec<f64> = (0..c * h * w).map(|i| (i as f64 * 0.7).sin()).collect();
        let wt: Vec<f64> = (0..cout * c * 9).map(|i| (i as f64 * 1.3).cos()).collect();
        let s = ConvShape { cin: c, cout, h, w };
        let mut y = vec![0.0; cout * h * w];
        conv_forward(&s, &x, 1, &wt, None, 0.0, &mut y);
        let want = naive_conv(&x, c, h, w, &wt, cout);
        for (a, b) in y.iter().zip(&want) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn col2im_is_adjoint_of_im2col() {
        // <im2col(x), g> == <x, col2im(g)>
        let (c, h, w) = (2, 4, 4);
        let x: Vec<f64> = (0..c * h * w).map(|i| (i as f64 * 0.3).sin()).collect();
        let g: Vec<f64> = (0..c * 9 * h * w).map(|i| (i as f64 * 0.11).cos()).collect();
        let mut col = vec![0.0; c * 9 * h * w];
        im2col(&x, c, h, w, &mut col);
        let mut back = vec![0.0; c * h * w];
        col2im_add(&g, c, h, w, &mut back);
        let lhs: f64 = col.iter().zip(&g).map(|(a, b)| a * b).sum();
        let rhs: f64 = x.iter().zip(&back).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs).abs() < 1e-10);
    }

    #[test]
    fn max_pool_picks_block_maxima() {
        let x = [1.0, 5.0, 2.0, 0.0, 3.0, 4.0, 7.0, 6.0f64];
        // 1 channel, 2x4 image
        let mut y = [0.0; 2];
        let mut idx = [0u32; 2];
        max_pool_forward(&x, 1, 1, 2, 4, &mut y, &mut idx);
        assert_eq!(y, [5.0, 7.0]);
        assert_eq!(idx, [1, 6]);
    }

    #[test]
    fn uniform_logits_give_log_ten() {
        let logits = vec![0.5f64; 20];
        let mut g = vec![0.0; 20];
        let mut p = vec![0.0; 20];
        let loss = softmax_cross_entropy(&logits, &[3, 7], 10, &mut g, &mut p);
        assert!((loss - 10f64.ln()).abs() < 1e-12);
    }
}
