//! Softmax over the channel axis and the fused losses built on it.
//!
//! Every kernel here sees its input as `(n, k, s)`: batch, channel (the
//! softmax axis) and flattened spatial positions. A 2-D `N×K` tensor is the
//! `s = 1` case.

use crate::real::Real;
use crate::tensor::Tensor;
use crate::{Error, Result};

pub(crate) fn nks(t: &Tensor<impl Real>) -> Result<(usize, usize, usize)> {
    match *t.shape() {
        [n, k] => Ok((n, k, 1)),
        [n, k, h, w] => Ok((n, k, h * w)),
        _ => Err(Error::Shape(format!(
            "softmax input must be N×K or N×K×H×W, got {:?}",
            t.shape()
        ))),
    }
}

pub(crate) fn softmax<T: Real>(x: &Tensor<T>) -> Result<Tensor<T>> {
    let (n, k, s) = nks(x)?;
    if k == 0 {
        return Err(Error::Shape("softmax over an empty axis".into()));
    }
    let xd = x.data();
    let mut out = vec![T::zero(); xd.len()];
    for b in 0..n {
        let base = b * k * s;
        for p in 0..s {
            let mut m = T::neg_infinity();
            for c in 0..k {
                m = m.max(xd[base + c * s + p]);
            }
            let mut z = T::zero();
            for c in 0..k {
                let e = (xd[base + c * s + p] - m).exp();
                out[base + c * s + p] = e;
                z = z + e;
            }
            for c in 0..k {
                out[base + c * s + p] = out[base + c * s + p] / z;
            }
        }
    }
    Tensor::new(x.shape(), out)
}

pub(crate) fn softmax_backward<T: Real>(y: &Tensor<T>, gy: &Tensor<T>) -> Result<Tensor<T>> {
    let (n, k, s) = nks(y)?;
    let yd = y.data();
    let gd = gy.data();
    let mut gx = vec![T::zero(); yd.len()];
    for b in 0..n {
        let base = b * k * s;
        for p in 0..s {
            let mut dot = T::zero();
            for c in 0..k {
                dot = dot + yd[base + c * s + p] * gd[base + c * s + p];
            }
            for c in 0..k {
                let i = base + c * s + p;
                gx[i] = yd[i] * (gd[i] - dot);
            }
        }
    }
    Tensor::new(y.shape(), gx)
}

/// Sample-weighted cross entropy against integer targets, averaged over
/// positions within a sample and then over samples.
pub(crate) fn cross_entropy<T: Real>(
    probs: &Tensor<T>,
    targets: &[u32],
    weights: &[T],
    eps: T,
) -> Result<T> {
    let (n, k, s) = nks(probs)?;
    if targets.len() != n * s {
        return Err(Error::Shape(format!(
            "{} targets for {} positions",
            targets.len(),
            n * s
        )));
    }
    if weights.len() != n {
        return Err(Error::Shape(format!("{} weights for {} samples", weights.len(), n)));
    }
    let pd = probs.data();
    let mut total = T::zero();
    for b in 0..n {
        let mut acc = T::zero();
        for p in 0..s {
            let t = targets[b * s + p] as usize;
            if t >= k {
                return Err(Error::Shape(format!("target class {t} out of range for {k} classes")));
            }
            acc = acc - pd[b * k * s + t * s + p].max(eps).ln();
        }
        total = total + weights[b] * acc / T::from_usize(s).unwrap();
    }
    Ok(total / T::from_usize(n).unwrap())
}

pub(crate) fn cross_entropy_backward<T: Real>(
    probs: &Tensor<T>,
    targets: &[u32],
    weights: &[T],
    eps: T,
    grad: T,
) -> Result<Tensor<T>> {
    let (n, k, s) = nks(probs)?;
    let pd = probs.data();
    let mut gx = vec![T::zero(); pd.len()];
    let norm = T::from_usize(n * s).unwrap();
    for b in 0..n {
        let scale = grad * weights[b] / norm;
        if scale == T::zero() {
            continue;
        }
        let base = b * k * s;
        for p in 0..s {
            let t = targets[b * s + p] as usize;
            if pd[base + t * s + p] < eps {
                // clamped log: flat in the logits
                continue;
            }
            for c in 0..k {
                let i = base + c * s + p;
                let ind = if c == t { T::one() } else { T::zero() };
                gx[i] = scale * (pd[i] - ind);
            }
        }
    }
    Tensor::new(probs.shape(), gx)
}

/// Mean Shannon entropy of the per-position class distribution.
pub(crate) fn entropy<T: Real>(probs: &Tensor<T>, eps: T) -> Result<T> {
    let (n, k, s) = nks(probs)?;
    let pd = probs.data();
    let mut total = T::zero();
    for b in 0..n {
        for p in 0..s {
            for c in 0..k {
                let q = pd[b * k * s + c * s + p];
                total = total - q * q.max(eps).ln();
            }
        }
    }
    Ok(total / T::from_usize(n * s).unwrap())
}

pub(crate) fn entropy_backward<T: Real>(probs: &Tensor<T>, eps: T, grad: T) -> Result<Tensor<T>> {
    let (n, k, s) = nks(probs)?;
    let pd = probs.data();
    let mut gx = vec![T::zero(); pd.len()];
    let scale = grad / T::from_usize(n * s).unwrap();
    let mut dq = vec![T::zero(); k];
    for b in 0..n {
        let base = b * k * s;
        for p in 0..s {
            let mut dot = T::zero();
            for c in 0..k {
                let q = pd[base + c * s + p];
                dq[c] = if q < eps { -eps.ln() } else { -(q.ln() + T::one()) };
                dot = dot + q * dq[c];
            }
            for c in 0..k {
                let i = base + c * s + p;
                gx[i] = scale * pd[i] * (dq[c] - dot);
            }
        }
    }
    Tensor::new(probs.shape(), gx)
}
