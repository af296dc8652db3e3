//! Layer kernels with hand-written backward passes.
//!
//! Convolutions are 3x3, stride 1, without padding ("valid"), so every layer
//! shrinks each spatial dimension by two.

use rayon::prelude::*;

use super::tensor::Tensor3;
use crate::scalar::Scalar;

pub const KERNEL: usize = 3;
const TAPS: usize = KERNEL * KERNEL;

#[inline]
fn axpy<T: Scalar>(alpha: T, x: &[T], y: &mut [T]) {
    for (yy, xx) in y.iter_mut().zip(x) {
        *yy = *yy + alpha * *xx;
    }
}

/// Valid 3x3 convolution. `weight` is laid out `[out][in][ky][kx]`.
pub fn conv_forward<T: Scalar>(
    input: &Tensor3<T>,
    weight: &[T],
    bias: &[T],
    out_channels: usize,
) -> Tensor3<T> {
    let (ci, h, w) = (input.channels, input.height, input.width);
    debug_assert_eq!(weight.len(), out_channels * ci * TAPS);
    let (oh, ow) = (h - KERNEL + 1, w - KERNEL + 1);
    let mut out = Tensor3::zeros(out_channels, oh, ow);
    let plane = oh * ow;
    out.data
        .par_chunks_mut(plane)
        .enumerate()
        .for_each(|(o, dst)| {
            dst.iter_mut().for_each(|v| *v = bias[o]);
            for i in 0..ci {
                let src = input.plane(i);
                let k = &weight[(o * ci + i) * TAPS..(o * ci + i + 1) * TAPS];
                for ky in 0..KERNEL {
                    for kx in 0..KERNEL {
                        let wv = k[ky * KERNEL + kx];
                        if wv == T::zero() {
                            continue;
                        }
                        for y in 0..oh {
                            let s = &src[(y + ky) * w + kx..(y + ky) * w + kx + ow];
                            axpy(wv, s, &mut dst[y * ow..(y + 1) * ow]);
                        }
                    }
                }
            }
        });
    out
}

/// Accumulates parameter gradients of a valid convolution and optionally
/// returns the gradient with respect to its input.
pub fn conv_backward<T: Scalar>(
    input: &Tensor3<T>,
    weight: &[T],
    grad_out: &Tensor3<T>,
    grad_weight: &mut [T],
    grad_bias: &mut [T],
    want_input_grad: bool,
) -> Option<Tensor3<T>> {
    let (ci, w) = (input.channels, input.width);
    let (co, oh, ow) = (grad_out.channels, grad_out.height, grad_out.width);
    for o in 0..co {
        let g = grad_out.plane(o);
        grad_bias[o] = grad_bias[o] + g.iter().copied().sum::<T>();
        for i in 0..ci {
            let src = input.plane(i);
            let gw = &mut grad_weight[(o * ci + i) * TAPS..(o * ci + i + 1) * TAPS];
            for ky in 0..KERNEL {
                for kx in 0..KERNEL {
                    let mut acc = T::zero();
                    for y in 0..oh {
                        let s = &src[(y + ky) * w + kx..(y + ky) * w + kx + ow];
                        let gg = &g[y * ow..(y + 1) * ow];
                        for (a, b) in s.iter().zip(gg) {
                            acc = acc + *a * *b;
                        }
                    }
                    gw[ky * KERNEL + kx] = gw[ky * KERNEL + kx] + acc;
                }
            }
        }
    }
    if !want_input_grad {
        return None;
    }
    let mut gin = Tensor3::zeros(ci, input.height, input.width);
    for i in 0..ci {
        let dst = gin.plane_mut(i);
        for o in 0..co {
            let g = grad_out.plane(o);
            let k = &weight[(o * ci + i) * TAPS..(o * ci + i + 1) * TAPS];
            for ky in 0..KERNEL {
                for kx in 0..KERNEL {
                    let wv = k[ky * KERNEL + kx];
                    for y in 0..oh {
                        let d = &mut dst[(y + ky) * w + kx..(y + ky) * w + kx + ow];
                        axpy(wv, &g[y * ow..(y + 1) * ow], d);
                    }
                }
            }
        }
    }
    Some(gin)
}

/// Batch-norm state produced by a training-mode forward pass.
#[derive(Clone, Debug)]
pub struct BatchNormCache<T> {
    pub xhat: Vec<Tensor3<T>>,
    pub inv_std: Vec<T>,
    pub mean: Vec<T>,
    pub var: Vec<T>,
    pub count: usize,
}

/// Training-mode batch normalization over every spatial position of every
/// tensor in the batch. Normalizes `batch` in place and returns the cache.
pub fn batch_norm_train<T: Scalar>(
    batch: &mut [Tensor3<T>],
    gamma: &[T],
    beta: &[T],
    eps: T,
) -> BatchNormCache<T> {
    let channels = gamma.len();
    let count: usize = batch.iter().map(|t| t.plane_len()).sum();
    let n = T::lit(count as f64);
    let mut mean = vec![T::zero(); channels];
    let mut var = vec![T::zero(); channels];
    for c in 0..channels {
        let s: T = batch.iter().map(|t| t.plane(c).iter().copied().sum::<T>()).sum();
        mean[c] = s / n;
        let m = mean[c];
        let v: T = batch
            .iter()
            .map(|t| t.plane(c).iter().map(|x| (*x - m) * (*x - m)).sum::<T>())
            .sum();
        var[c] = v / n;
    }
    let inv_std: Vec<T> = var.iter().map(|v| T::one() / (*v + eps).sqrt()).collect();
    let mut xhat = Vec::with_capacity(batch.len());
    for t in batch.iter_mut() {
        let mut xh = t.clone();
        for c in 0..channels {
            let (m, is, g, b) = (mean[c], inv_std[c], gamma[c], beta[c]);
            for (dst, xv) in t.plane_mut(c).iter_mut().zip(xh.plane_mut(c).iter_mut()) {
                let hat = (*xv - m) * is;
                *xv = hat;
                *dst = g * hat + b;
            }
        }
        xhat.push(xh);
    }
    BatchNormCache {
        xhat,
        inv_std,
        mean,
        var,
        count,
    }
}

/// Backward pass of training-mode batch norm; accumulates `gamma`/`beta`
/// gradients and rewrites `grads` (w.r.t. the output) into gradients w.r.t.
/// the input.
pub fn batch_norm_backward<T: Scalar>(
    cache: &BatchNormCache<T>,
    gamma: &[T],
    grads: &mut [Tensor3<T>],
    grad_gamma: &mut [T],
    grad_beta: &mut [T],
) {
    let n = T::lit(cache.count as f64);
    for c in 0..gamma.len() {
        let mut sum_dy = T::zero();
        let mut sum_dy_xhat = T::zero();
        for (g, xh) in grads.iter().zip(&cache.xhat) {
            for (dy, h) in g.plane(c).iter().zip(xh.plane(c)) {
                sum_dy = sum_dy + *dy;
                sum_dy_xhat = sum_dy_xhat + *dy * *h;
            }
        }
        grad_gamma[c] = grad_gamma[c] + sum_dy_xhat;
        grad_beta[c] = grad_beta[c] + sum_dy;
        let k = gamma[c] * cache.inv_std[c] / n;
        for (g, xh) in grads.iter_mut().zip(&cache.xhat) {
            for (dy, h) in g.plane_mut(c).iter_mut().zip(xh.plane(c)) {
                *dy = k * (n * *dy - sum_dy - *h * sum_dy_xhat);
            }
        }
    }
}

/// Inference-mode batch norm with fixed statistics.
pub fn batch_norm_infer<T: Scalar>(
    t: &mut Tensor3<T>,
    gamma: &[T],
    beta: &[T],
    mean: &[T],
    var: &[T],
    eps: T,
) {
    for c in 0..gamma.len() {
        let scale = gamma[c] / (var[c] + eps).sqrt();
        let shift = beta[c] - mean[c] * scale;
        t.plane_mut(c).iter_mut().for_each(|v| *v = *v * scale + shift);
    }
}

pub fn relu_forward<T: Scalar>(t: &mut Tensor3<T>) {
    t.data.iter_mut().for_each(|v| {
        if *v < T::zero() {
            *v = T::zero()
        }
    });
}

/// Masks `grad` by the positive entries of the ReLU output.
pub fn relu_backward<T: Scalar>(output: &Tensor3<T>, grad: &mut Tensor3<T>) {
    for (g, y) in grad.data.iter_mut().zip(&output.data) {
        if *y <= T::zero() {
            *g = T::zero();
        }
    }
}
