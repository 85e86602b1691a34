//! Spatial resampling: 2×2 max pooling and bilinear resizing.

use crate::real::Real;
use crate::tensor::Tensor;
use crate::{Error, Result};

pub(crate) fn max_pool2_forward<T: Real>(x: &Tensor<T>) -> Result<(Tensor<T>, Vec<u32>)> {
    let (n, c, h, w) = x.dims4()?;
    if h % 2 != 0 || w % 2 != 0 {
        return Err(Error::Shape(format!(
            "2x2 max pooling needs even spatial dims, got {h}x{w}"
        )));
    }
    let (ho, wo) = (h / 2, w / 2);
    let mut out = Vec::with_capacity(n * c * ho * wo);
    let mut arg = Vec::with_capacity(n * c * ho * wo);
    for s in 0..n {
        for ch in 0..c {
            let p = x.plane(s, ch);
            for oy in 0..ho {
                for ox in 0..wo {
                    let mut best = (2 * oy) * w + 2 * ox;
                    for idx in [
                        (2 * oy) * w + 2 * ox + 1,
                        (2 * oy + 1) * w + 2 * ox,
                        (2 * oy + 1) * w + 2 * ox + 1,
                    ] {
                        // first maximum wins ties; a NaN always wins
                        if p[idx] > p[best] || (p[idx].is_nan() && !p[best].is_nan()) {
                            best = idx;
                        }
                    }
                    out.push(p[best]);
                    arg.push(best as u32);
                }
            }
        }
    }
    Ok((Tensor::new(&[n, c, ho, wo], out)?, arg))
}

pub(crate) fn max_pool2_backward<T: Real>(
    input_shape: &[usize],
    argmax: &[u32],
    grad_out: &Tensor<T>,
) -> Result<Tensor<T>> {
    let (n, c, h, w) = match input_shape {
        &[n, c, h, w] => (n, c, h, w),
        _ => return Err(Error::Shape("max pool input must be NCHW".into())),
    };
    let out_hw = (h / 2) * (w / 2);
    let mut gx = vec![T::zero(); n * c * h * w];
    for plane in 0..n * c {
        let g = &grad_out.data()[plane * out_hw..(plane + 1) * out_hw];
        let a = &argmax[plane * out_hw..(plane + 1) * out_hw];
        let dst = &mut gx[plane * h * w..(plane + 1) * h * w];
        for (&gv, &idx) in g.iter().zip(a) {
            dst[idx as usize] = dst[idx as usize] + gv;
        }
    }
    Tensor::new(input_shape, gx)
}

/// Per-axis interpolation taps: `(lo, hi, weight_lo, weight_hi)` for each
/// output coordinate, using half-pixel centers (no corner alignment).
pub(crate) fn linear_taps<T: Real>(input: usize, output: usize) -> Vec<(usize, usize, T, T)> {
    let scale = input as f64 / output as f64;
    (0..output)
        .map(|o| {
            let src = ((o as f64 + 0.5) * scale - 0.5).max(0.0);
            let lo = (src.floor() as usize).min(input - 1);
            let hi = (lo + 1).min(input - 1);
            let frac = src - lo as f64;
            let frac = if hi == lo { 0.0 } else { frac };
            (lo, hi, T::from_f64_lossy(1.0 - frac), T::from_f64_lossy(frac))
        })
        .collect()
}

/// Separable: each source row is resized horizontally once, then output
/// rows blend two of those.
pub(crate) fn resize_forward<T: Real>(x: &Tensor<T>, out_h: usize, out_w: usize) -> Result<Tensor<T>> {
    let (n, c, h, w) = x.dims4()?;
    if out_h == 0 || out_w == 0 || h == 0 || w == 0 {
        return Err(Error::Shape("bilinear resize to or from an empty grid".into()));
    }
    let ty = linear_taps::<T>(h, out_h);
    let tx = linear_taps::<T>(w, out_w);
    let mut out = vec![T::zero(); n * c * out_h * out_w];
    let mut rows = vec![T::zero(); h * out_w];
    for (plane, dst) in out.chunks_exact_mut(out_h * out_w).enumerate() {
        let p = &x.data()[plane * h * w..(plane + 1) * h * w];
        for (src, row) in p.chunks_exact(w).zip(rows.chunks_exact_mut(out_w)) {
            for (r, &(x0, x1, wx0, wx1)) in row.iter_mut().zip(&tx) {
                *r = wx0 * src[x0] + wx1 * src[x1];
            }
        }
        for (d, &(y0, y1, wy0, wy1)) in dst.chunks_exact_mut(out_w).zip(&ty) {
            let r0 = &rows[y0 * out_w..(y0 + 1) * out_w];
            let r1 = &rows[y1 * out_w..(y1 + 1) * out_w];
            for ((v, &a), &b) in d.iter_mut().zip(r0).zip(r1) {
                *v = wy0 * a + wy1 * b;
            }
        }
    }
    Tensor::new(&[n, c, out_h, out_w], out)
}

pub(crate) fn resize_backward<T: Real>(input_shape: &[usize], grad_out: &Tensor<T>) -> Result<Tensor<T>> {
    let (n, c, h, w) = match input_shape {
        &[n, c, h, w] => (n, c, h, w),
        _ => return Err(Error::Shape("resize input must be NCHW".into())),
    };
    let (_, _, out_h, out_w) = grad_out.dims4()?;
    let ty = linear_taps::<T>(h, out_h);
    let tx = linear_taps::<T>(w, out_w);
    let mut gx = vec![T::zero(); n * c * h * w];
    let mut rows = vec![T::zero(); h * out_w];
    for (plane, dst) in gx.chunks_exact_mut(h * w).enumerate() {
        let g = &grad_out.data()[plane * out_h * out_w..(plane + 1) * out_h * out_w];
        rows.fill(T::zero());
        for (gr, &(y0, y1, wy0, wy1)) in g.chunks_exact(out_w).zip(&ty) {
            for (r, &v) in rows[y0 * out_w..(y0 + 1) * out_w].iter_mut().zip(gr) {
                *r = *r + wy0 * v;
            }
            for (r, &v) in rows[y1 * out_w..(y1 + 1) * out_w].iter_mut().zip(gr) {
                *r = *r + wy1 * v;
            }
        }
        for (d, row) in dst.chunks_exact_mut(w).zip(rows.chunks_exact(out_w)) {
            for (&v, &(x0, x1, wx0, wx1)) in row.iter().zip(&tx) {
                d[x0] = d[x0] + wx0 * v;
                d[x1] = d[x1] + wx1 * v;
            }
        }
    }
    Tensor::new(input_shape, gx)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_resize_is_exact() {
        let x = Tensor::<f64>::new(&[1, 1, 2, 3], vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap();
        assert_eq!(resize_forward(&x, 2, 3).unwrap(), x);
    }

    #[test]
    fn upsample_matches_half_pixel_reference() {
        // 1-D reference values for [0, 1] upsampled to 4 with half-pixel centers.
        let x = Tensor::<f64>::new(&[1, 1, 1, 2], vec![0.0, 1.0]).unwrap();
        let y = resize_forward(&x, 1, 4).unwrap();
        assert_eq!(y.data(), &[0.0, 0.25, 0.75, 1.0]);
    }

    #[test]
    fn pool_picks_max_and_routes_gradient() {
        let x = Tensor::<f64>::new(&[1, 1, 2, 4], vec![1.0, 5.0, 0.0, 0.0, 2.0, 3.0, 7.0, 0.0]).unwrap();
        let (y, arg) = max_pool2_forward(&x).unwrap();
        assert_eq!(y.data(), &[5.0, 7.0]);
        let g = Tensor::new(&[1, 1, 1, 2], vec![1.0, 2.0]).unwrap();
        let gx = max_pool2_backward(x.shape(), &arg, &g).unwrap();
        assert_eq!(gx.data(), &[0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 2.0, 0.0]);
    }

    #[test]
    fn pool_rejects_odd_dims() {
        let x = Tensor::<f32>::zeros(&[1, 1, 3, 4]);
        assert!(max_pool2_forward(&x).is_err());
    }
}
