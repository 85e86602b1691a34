//! Per-channel batch normalization over (N, H, W).

use crate::real::Real;
use crate::tensor::Tensor;
use crate::{Error, Result};

/// Batch statistics observed during a training-mode forward pass.
///
/// `var` is the unbiased (n-1) estimate, which is what running averages
/// track.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchStats<T> {
    pub mean: Vec<T>,
    pub var: Vec<T>,
}

pub(crate) struct TrainForward<T> {
    pub output: Tensor<T>,
    pub normalized: Tensor<T>,
    pub inv_std: Vec<T>,
    pub stats: BatchStats<T>,
}

fn check<T: Real>(x: &Tensor<T>, gamma: &Tensor<T>, beta: &Tensor<T>) -> Result<(usize, usize, usize)> {
    let (n, c, h, w) = x.dims4()?;
    if gamma.numel() != c || beta.numel() != c {
        return Err(Error::Shape(format!(
            "batch norm affine params sized {}/{} for {} channels",
            gamma.numel(),
            beta.numel(),
            c
        )));
    }
    Ok((n, c, h * w))
}

pub(crate) fn forward_train<T: Real>(
    x: &Tensor<T>,
    gamma: &Tensor<T>,
    beta: &Tensor<T>,
    eps: T,
) -> Result<TrainForward<T>> {
    let (n, c, hw) = check(x, gamma, beta)?;
    let count = n * hw;
    if count < 2 {
        return Err(Error::Shape(
            "batch norm in training mode needs at least two values per channel".into(),
        ));
    }
    let cnt = T::from_usize(count).unwrap();
    let mut mean = vec![T::zero(); c];
    let mut var = vec![T::zero(); c];
    let mut inv_std = vec![T::zero(); c];
    let data = x.data();
    for ch in 0..c {
        let mut sum = T::zero();
        for s in 0..n {
            sum = sum + x.plane(s, ch).iter().copied().sum::<T>();
        }
        let m = sum / cnt;
        let mut sq = T::zero();
        for s in 0..n {
            for &v in x.plane(s, ch) {
                let d = v - m;
                sq = sq + d * d;
            }
        }
        mean[ch] = m;
        var[ch] = sq / (cnt - T::one());
        inv_std[ch] = T::one() / (sq / cnt + eps).sqrt();
    }
    let mut normalized = vec![T::zero(); data.len()];
    let mut output = vec![T::zero(); data.len()];
    for s in 0..n {
        for ch in 0..c {
            let base = (s * c + ch) * hw;
            let (m, is, g, b) = (mean[ch], inv_std[ch], gamma.data()[ch], beta.data()[ch]);
            for i in base..base + hw {
                let xh = (data[i] - m) * is;
                normalized[i] = xh;
                output[i] = g * xh + b;
            }
        }
    }
    Ok(TrainForward {
        output: Tensor::new(x.shape(), output)?,
        normalized: Tensor::new(x.shape(), normalized)?,
        inv_std,
        stats: BatchStats { mean, var },
    })
}

pub(crate) struct NormGrads<T> {
    pub input: Tensor<T>,
    pub gamma: Tensor<T>,
    pub beta: Tensor<T>,
}

pub(crate) fn backward_train<T: Real>(
    normalized: &Tensor<T>,
    inv_std: &[T],
    gamma: &Tensor<T>,
    grad_out: &Tensor<T>,
) -> Result<NormGrads<T>> {
    let (n, c, h, w) = normalized.dims4()?;
    let hw = h * w;
    let cnt = T::from_usize(n * hw).unwrap();
    let mut gx = vec![T::zero(); normalized.numel()];
    let mut gg = vec![T::zero(); c];
    let mut gb = vec![T::zero(); c];
    let xh = normalized.data();
    let gy = grad_out.data();
    for ch in 0..c {
        let mut sum_gy = T::zero();
        let mut sum_gy_xh = T::zero();
        for s in 0..n {
            let base = (s * c + ch) * hw;
            for i in base..base + hw {
                sum_gy = sum_gy + gy[i];
                sum_gy_xh = sum_gy_xh + gy[i] * xh[i];
            }
        }
        gg[ch] = sum_gy_xh;
        gb[ch] = sum_gy;
        let scale = gamma.data()[ch] * inv_std[ch] / cnt;
        for s in 0..n {
            let base = (s * c + ch) * hw;
            for i in base..base + hw {
                gx[i] = scale * (cnt * gy[i] - sum_gy - xh[i] * sum_gy_xh);
            }
        }
    }
    Ok(NormGrads {
        input: Tensor::new(normalized.shape(), gx)?,
        gamma: Tensor::new(&[c], gg)?,
        beta: Tensor::new(&[c], gb)?,
    })
}

/// Inference-mode normalization with frozen statistics. Returns the output
/// and the per-channel `1/sqrt(var+eps)` used.
pub(crate) fn forward_frozen<T: Real>(
    x: &Tensor<T>,
    gamma: &Tensor<T>,
    beta: &Tensor<T>,
    mean: &[T],
    var: &[T],
    eps: T,
) -> Result<(Tensor<T>, Vec<T>)> {
    let (n, c, hw) = check(x, gamma, beta)?;
    if mean.len() != c || var.len() != c {
        return Err(Error::Shape("running statistics do not match channel count".into()));
    }
    let inv: Vec<T> = var.iter().map(|&v| T::one() / (v + eps).sqrt()).collect();
    let mut out = vec![T::zero(); x.numel()];
    for s in 0..n {
        for ch in 0..c {
            let base = (s * c + ch) * hw;
            let (m, is, g, b) = (mean[ch], inv[ch], gamma.data()[ch], beta.data()[ch]);
            for i in base..base + hw {
                out[i] = g * (x.data()[i] - m) * is + b;
            }
        }
    }
    Ok((Tensor::new(x.shape(), out)?, inv))
}

pub(crate) fn backward_frozen<T: Real>(
    x: &Tensor<T>,
    gamma: &Tensor<T>,
    mean: &[T],
    inv_std: &[T],
    grad_out: &Tensor<T>,
) -> Result<NormGrads<T>> {
    let (n, c, h, w) = x.dims4()?;
    let hw = h * w;
    let mut gx = vec![T::zero(); x.numel()];
    let mut gg = vec![T::zero(); c];
    let mut gb = vec![T::zero(); c];
    for s in 0..n {
        for ch in 0..c {
            let base = (s * c + ch) * hw;
            let k = gamma.data()[ch] * inv_std[ch];
            for i in base..base + hw {
                let gy = grad_out.data()[i];
                gx[i] = gy * k;
                gg[ch] = gg[ch] + gy * (x.data()[i] - mean[ch]) * inv_std[ch];
                gb[ch] = gb[ch] + gy;
            }
        }
    }
    Ok(NormGrads {
        input: Tensor::new(x.shape(), gx)?,
        gamma: Tensor::new(&[c], gg)?,
        beta: Tensor::new(&[c], gb)?,
    })
}
