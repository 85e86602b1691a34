//! Stride-1 2-D convolution through im2col + gemm.

use crate::real::{matmul, Real};
use crate::tensor::Tensor;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy)]
pub(crate) struct ConvGeometry {
    pub cin: usize,
    pub h: usize,
    pub w: usize,
    pub k: usize,
    pub pad: usize,
    pub ho: usize,
    pub wo: usize,
}

impl ConvGeometry {
    pub fn new(x: &Tensor<impl Real>, weight: &Tensor<impl Real>, pad: usize) -> Result<(usize, usize, Self)> {
        let (n, cin, h, w) = x.dims4()?;
        let (cout, wcin, kh, kw) = weight.dims4()?;
        if wcin != cin {
            return Err(Error::Shape(format!(
                "conv weight expects {wcin} input channels, input has {cin}"
            )));
        }
        if kh != kw {
            return Err(Error::Shape(format!("non-square kernel {kh}x{kw}")));
        }
        if h + 2 * pad < kh || w + 2 * pad < kw {
            return Err(Error::Shape(format!(
                "kernel {kh}x{kw} larger than padded input {h}x{w}"
            )));
        }
        let ho = h + 2 * pad + 1 - kh;
        let wo = w + 2 * pad + 1 - kw;
        Ok((
            n,
            cout,
            Self {
                cin,
                h,
                w,
                k: kh,
                pad,
                ho,
                wo,
            },
        ))
    }

    fn is_pointwise(&self) -> bool {
        self.k == 1 && self.pad == 0
    }

    fn col_rows(&self) -> usize {
        self.cin * self.k * self.k
    }
}

fn im2col<T: Real>(x: &[T], g: &ConvGeometry, col: &mut [T]) {
    let out_hw = g.ho * g.wo;
    let pad = g.pad as isize;
    for ci in 0..g.cin {
        let plane = &x[ci * g.h * g.w..(ci + 1) * g.h * g.w];
        for ky in 0..g.k {
            for kx in 0..g.k {
                let row = (ci * g.k + ky) * g.k + kx;
                let dst = &mut col[row * out_hw..(row + 1) * out_hw];
                let dx = kx as isize - pad;
                // valid ox range: 0 <= ox + dx < w
                let ox_lo = (-dx).max(0) as usize;
                let ox_hi = ((g.w as isize - dx).min(g.wo as isize)).max(0) as usize;
                for oy in 0..g.ho {
                    let iy = oy as isize + ky as isize - pad;
                    let seg = &mut dst[oy * g.wo..(oy + 1) * g.wo];
                    if iy < 0 || iy >= g.h as isize || ox_lo >= ox_hi {
                        seg.fill(T::zero());
                        continue;
                    }
                    let src_row = &plane[iy as usize * g.w..(iy as usize + 1) * g.w];
                    seg[..ox_lo].fill(T::zero());
                    let ix_lo = (ox_lo as isize + dx) as usize;
                    seg[ox_lo..ox_hi].copy_from_slice(&src_row[ix_lo..ix_lo + (ox_hi - ox_lo)]);
                    seg[ox_hi..].fill(T::zero());
                }
            }
        }
    }
}

fn col2im_add<T: Real>(col: &[T], g: &ConvGeometry, x: &mut [T]) {
    let out_hw = g.ho * g.wo;
    let pad = g.pad as isize;
    for ci in 0..g.cin {
        let plane = &mut x[ci * g.h * g.w..(ci + 1) * g.h * g.w];
        for ky in 0..g.k {
            for kx in 0..g.k {
                let row = (ci * g.k + ky) * g.k + kx;
                let src = &col[row * out_hw..(row + 1) * out_hw];
                let dx = kx as isize - pad;
                let ox_lo = (-dx).max(0) as usize;
                let ox_hi = ((g.w as isize - dx).min(g.wo as isize)).max(0) as usize;
                if ox_lo >= ox_hi {
                    continue;
                }
                for oy in 0..g.ho {
                    let iy = oy as isize + ky as isize - pad;
                    if iy < 0 || iy >= g.h as isize {
                        continue;
                    }
                    let ix_lo = (ox_lo as isize + dx) as usize;
                    let dst = &mut plane[iy as usize * g.w + ix_lo..iy as usize * g.w + ix_lo + (ox_hi - ox_lo)];
                    for (d, &s) in dst.iter_mut().zip(&src[oy * g.wo + ox_lo..oy * g.wo + ox_hi]) {
                        *d = *d + s;
                    }
                }
            }
        }
    }
}

pub(crate) fn forward<T: Real>(
    x: &Tensor<T>,
    weight: &Tensor<T>,
    bias: Option<&Tensor<T>>,
    pad: usize,
) -> Result<Tensor<T>> {
    let (n, cout, g) = ConvGeometry::new(x, weight, pad)?;
    if let Some(b) = bias {
        if b.numel() != cout {
            return Err(Error::Shape(format!(
                "bias has {} entries for {} output channels",
                b.numel(),
                cout
            )));
        }
    }
    let in_per = g.cin * g.h * g.w;
    let out_hw = g.ho * g.wo;
    let rows = g.col_rows();
    let mut out = vec![T::zero(); n * cout * out_hw];
    let mut col = if g.is_pointwise() {
        Vec::new()
    } else {
        vec![T::zero(); rows * out_hw]
    };
    for s in 0..n {
        let xs = &x.data()[s * in_per..(s + 1) * in_per];
        let ys = &mut out[s * cout * out_hw..(s + 1) * cout * out_hw];
        let rhs: &[T] = if g.is_pointwise() {
            xs
        } else {
            im2col(xs, &g, &mut col);
            &col
        };
        if let Some(b) = bias {
            for (co, chunk) in ys.chunks_mut(out_hw).enumerate() {
                chunk.fill(b.data()[co]);
            }
        }
        let beta = if bias.is_some() { T::one() } else { T::zero() };
        matmul(cout, rows, out_hw, T::one(), weight.data(), false, rhs, false, beta, ys);
    }
    Tensor::new(&[n, cout, g.ho, g.wo], out)
}

pub(crate) struct ConvGrads<T> {
    pub input: Option<Tensor<T>>,
    pub weight: Option<Tensor<T>>,
    pub bias: Option<Tensor<T>>,
}

pub(crate) fn backward<T: Real>(
    x: &Tensor<T>,
    weight: &Tensor<T>,
    pad: usize,
    grad_out: &Tensor<T>,
    need: [bool; 3],
) -> Result<ConvGrads<T>> {
    let (n, cout, g) = ConvGeometry::new(x, weight, pad)?;
    let in_per = g.cin * g.h * g.w;
    let out_hw = g.ho * g.wo;
    let rows = g.col_rows();
    let mut gx = need[0].then(|| vec![T::zero(); x.numel()]);
    let mut gw = need[1].then(|| vec![T::zero(); weight.numel()]);
    let mut gb = need[2].then(|| vec![T::zero(); cout]);
    let mut col = vec![T::zero(); if g.is_pointwise() { 0 } else { rows * out_hw }];
    for s in 0..n {
        let gy = &grad_out.data()[s * cout * out_hw..(s + 1) * cout * out_hw];
        if let Some(gb) = gb.as_mut() {
            for (co, chunk) in gy.chunks(out_hw).enumerate() {
                gb[co] = gb[co] + chunk.iter().copied().sum::<T>();
            }
        }
        if let Some(gw) = gw.as_mut() {
            let xs = &x.data()[s * in_per..(s + 1) * in_per];
            let rhs: &[T] = if g.is_pointwise() {
                xs
            } else {
                im2col(xs, &g, &mut col);
                &col
            };
            matmul(cout, out_hw, rows, T::one(), gy, false, rhs, true, T::one(), gw);
        }
        if let Some(gx) = gx.as_mut() {
            let gxs = &mut gx[s * in_per..(s + 1) * in_per];
            if g.is_pointwise() {
                matmul(rows, cout, out_hw, T::one(), weight.data(), true, gy, false, T::one(), gxs);
            } else {
                matmul(rows, cout, out_hw, T::one(), weight.data(), true, gy, false, T::zero(), &mut col);
                col2im_add(&col, &g, gxs);
            }
        }
    }
    Ok(ConvGrads {
        input: gx.map(|d| Tensor::new(x.shape(), d)).transpose()?,
        weight: gw.map(|d| Tensor::new(weight.shape(), d)).transpose()?,
        bias: gb.map(|d| Tensor::new(&[cout], d)).transpose()?,
    })
}
