//! Floating point element types the engine can run in.

use std::fmt::{Debug, Display};
use std::iter::Sum;

use num_traits::{Float, FromPrimitive, ToPrimitive};

/// A float element type with a matching gemm kernel.
///
/// Training runs in `f32`; gradient checks run the same graph in `f64`.
pub trait Real:
    Float + FromPrimitive + ToPrimitive + Default + Debug + Display + Sum + Send + Sync + 'static
{
    /// Short dtype tag used in serialized containers.
    const DTYPE: &'static str;

    /// `C <- alpha * A * B + beta * C` on strided row/column layouts.
    ///
    /// # Safety
    /// The pointers and strides must describe valid, non-aliasing (for C)
    /// matrices of the given dimensions.
    #[allow(clippy::too_many_arguments)]
    unsafe fn gemm(
        m: usize,
        k: usize,
        n: usize,
        alpha: Self,
        a: *const Self,
        rsa: isize,
        csa: isize,
        b: *const Self,
        rsb: isize,
        csb: isize,
        beta: Self,
        c: *mut Self,
        rsc: isize,
        csc: isize,
    );

    fn from_f64_lossy(v: f64) -> Self {
        Self::from_f64(v).expect("f64 converts to every Real")
    }

    fn as_f64(self) -> f64 {
        self.to_f64().expect("Real converts to f64")
    }
}

impl Real for f32 {
    const DTYPE: &'static str = "f32";

    unsafe fn gemm(
        m: usize,
        k: usize,
        n: usize,
        alpha: f32,
        a: *const f32,
        rsa: isize,
        csa: isize,
        b: *const f32,
        rsb: isize,
        csb: isize,
        beta: f32,
        c: *mut f32,
        rsc: isize,
        csc: isize,
    ) {
        matrixmultiply::sgemm(m, k, n, alpha, a, rsa, csa, b, rsb, csb, beta, c, rsc, csc);
    }
}

impl Real for f64 {
    const DTYPE: &'static str = "f64";

    unsafe fn gemm(
        m: usize,
        k: usize,
        n: usize,
        alpha: f64,
        a: *const f64,
        rsa: isize,
        csa: isize,
        b: *const f64,
        rsb: isize,
        csb: isize,
        beta: f64,
        c: *mut f64,
        rsc: isize,
        csc: isize,
    ) {
        matrixmultiply::dgemm(m, k, n, alpha, a, rsa, csa, b, rsb, csb, beta, c, rsc, csc);
    }
}

/// Safe row-major matrix product helper: `c = alpha * op(a) * op(b) + beta * c`.
///
/// `a` is `m×k` (or `k×m` when `trans_a`), `b` is `k×n` (or `n×k` when
/// `trans_b`), `c` is `m×n`, all densely packed row-major.
#[allow(clippy::too_many_arguments)]
pub fn matmul<T: Real>(
    m: usize,
    k: usize,
    n: usize,
    alpha: T,
    a: &[T],
    trans_a: bool,
    b: &[T],
    trans_b: bool,
    beta: T,
    c: &mut [T],
) {
    assert_eq!(a.len(), m * k, "lhs size");
    assert_eq!(b.len(), k * n, "rhs size");
    assert_eq!(c.len(), m * n, "out size");
    if m == 0 || n == 0 {
        return;
    }
    if !trans_b && m * k <= SKINNY {
        return skinny_lhs(m, k, n, alpha, a, trans_a, b, beta, c);
    }
    if trans_b && !trans_a && m * n <= SKINNY {
        return skinny_out(m, k, n, alpha, a, b, beta, c);
    }
    let (rsa, csa) = if trans_a { (1, m as isize) } else { (k as isize, 1) };
    let (rsb, csb) = if trans_b { (1, k as isize) } else { (n as isize, 1) };
    // SAFETY: sizes asserted above; c is uniquely borrowed.
    unsafe {
        T::gemm(
            m,
            k,
            n,
            alpha,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

/// Products with at most this many entries in the small operand skip gemm
/// packing, which dominates when one side is a handful of channels.
const SKINNY: usize = 32;
const CHUNK: usize = 512;

fn scale_out<T: Real>(beta: T, c: &mut [T]) {
    if beta == T::zero() {
        c.fill(T::zero());
    } else if beta != T::one() {
        c.iter_mut().for_each(|v| *v = *v * beta);
    }
}

/// `C = βC + α·op(A)·B` for a small `op(A)`: row updates over column
/// blocks of `B`.
#[allow(clippy::too_many_arguments)]
fn skinny_lhs<T: Real>(m: usize, k: usize, n: usize, alpha: T, a: &[T], trans_a: bool, b: &[T], beta: T, c: &mut [T]) {
    scale_out(beta, c);
    let at = |i: usize, p: usize| if trans_a { a[p * m + i] } else { a[i * k + p] };
    let mut start = 0;
    while start < n {
        let end = (start + CHUNK).min(n);
        for i in 0..m {
            let crow = &mut c[i * n + start..i * n + end];
            for p in 0..k {
                let coef = alpha * at(i, p);
                if coef == T::zero() {
                    continue;
                }
                let brow = &b[p * n + start..p * n + end];
                for (cv, &bv) in crow.iter_mut().zip(brow) {
                    *cv = *cv + coef * bv;
                }
            }
        }
        start = end;
    }
}

/// `C = βC + α·A·Bᵀ` with a small output: one long dot product per entry.
#[allow(clippy::too_many_arguments)]
fn skinny_out<T: Real>(m: usize, k: usize, n: usize, alpha: T, a: &[T], b: &[T], beta: T, c: &mut [T]) {
    scale_out(beta, c);
    for i in 0..m {
        let arow = &a[i * k..(i + 1) * k];
        for j in 0..n {
            let brow = &b[j * k..(j + 1) * k];
            c[i * n + j] = c[i * n + j] + alpha * dot(arow, brow);
        }
    }
}

fn dot<T: Real>(x: &[T], y: &[T]) -> T {
    let mut acc = [T::zero(); 8];
    let xc = x.chunks_exact(8);
    let yc = y.chunks_exact(8);
    let (xr, yr) = (xc.remainder(), yc.remainder());
    for (xs, ys) in xc.zip(yc) {
        for l in 0..8 {
            acc[l] = acc[l] + xs[l] * ys[l];
        }
    }
    let mut tail = T::zero();
    for (&u, &v) in xr.iter().zip(yr) {
        tail = tail + u * v;
    }
    ((acc[0] + acc[1]) + (acc[2] + acc[3])) + ((acc[4] + acc[5]) + (acc[6] + acc[7])) + tail
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn matmul_transposes() {
        // a = [[1,2],[3,4]], b = [[5,6],[7,8]]
        let a = [1.0f64, 2.0, 3.0, 4.0];
        let b = [5.0f64, 6.0, 7.0, 8.0];
        let mut c = [0.0f64; 4];
        matmul(2, 2, 2, 1.0, &a, false, &b, false, 0.0, &mut c);
        assert_eq!(c, [19.0, 22.0, 43.0, 50.0]);
        matmul(2, 2, 2, 1.0, &a, true, &b, false, 0.0, &mut c);
        assert_eq!(c, [26.0, 30.0, 38.0, 44.0]);
        matmul(2, 2, 2, 1.0, &a, false, &b, true, 0.0, &mut c);
        assert_eq!(c, [17.0, 23.0, 39.0, 53.0]);
        matmul(2, 2, 2, 1.0, &a, false, &b, true, 1.0, &mut c);
        assert_eq!(c, [34.0, 46.0, 78.0, 106.0]);
    }

    fn naive(m: usize, k: usize, n: usize, a: &[f64], ta: bool, b: &[f64], tb: bool) -> Vec<f64> {
        let mut c = vec![0.0; m * n];
        for i in 0..m {
            for j in 0..n {
                for p in 0..k {
                    let av = if ta { a[p * m + i] } else { a[i * k + p] };
                    let bv = if tb { b[j * k + p] } else { b[p * n + j] };
                    c[i * n + j] += av * bv;
                }
            }
        }
        c
    }

    #[test]
    fn all_paths_match_naive_product() {
        let fill = |len: usize, seed: usize| -> Vec<f64> { (0..len).map(|i| ((i * 37 + seed * 11) % 17) as f64 - 8.0).collect() };
        for &(m, k, n) in &[(2, 4, 1000), (4, 20, 700), (16, 16, 300), (3, 900, 5), (40, 30, 20), (1, 1, 1)] {
            for ta in [false, true] {
                for tb in [false, true] {
                    let a = fill(m * k, 1);
                    let b = fill(k * n, 2);
                    let mut c = fill(m * n, 3);
                    let want: Vec<f64> = naive(m, k, n, &a, ta, &b, tb).iter().zip(&c).map(|(p, c0)| 2.0 * p + 0.5 * c0).collect();
                    matmul(m, k, n, 2.0, &a, ta, &b, tb, 0.5, &mut c);
                    assert_eq!(c, want, "{m}x{k}x{n} ta={ta} tb={tb}");
                }
            }
        }
    }
}
