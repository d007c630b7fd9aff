//! Element types and the GEMM entry point.

use std::fmt::Debug;
use std::iter::Sum;

use num_traits::Float;

pub trait Scalar:
    Float + Default + Debug + Sum + Send + Sync + std::ops::AddAssign + std::ops::SubAssign + std::ops::MulAssign + 'static
{
    fn of(v: f64) -> Self;
    fn as_f64(self) -> f64;
    fn of_f32(v: f32) -> Self;
    fn as_f32(self) -> f32;

    /// `C = alpha A B + beta C` on raw strided matrices.
    ///
    /// # Safety
    /// Strides and extents must describe valid regions of `a`, `b`, `c`.
    #[allow(clippy::too_many_arguments)]
    unsafe fn gemm_raw(
        m: usize, k: usize, n: usize, alpha: Self,
        a: *const Self, rsa: isize, csa: isize,
        b: *const Self, rsb: isize, csb: isize,
        beta: Self, c: *mut Self, rsc: isize, csc: isize,
    );
}

impl Scalar for f32 {
    fn of(v: f64) -> Self {
        v as f32
    }
    fn as_f64(self) -> f64 {
        self as f64
    }
    fn of_f32(v: f32) -> Self {
        v
    }
    fn as_f32(self) -> f32 {
        self
    }
    unsafe fn gemm_raw(
        m: usize, k: usize, n: usize, alpha: f32,
        a: *const f32, rsa: isize, csa: isize,
        b: *const f32, rsb: isize, csb: isize,
        beta: f32, c: *mut f32, rsc: isize, csc: isize,
    ) {
        matrixmultiply::sgemm(m, k, n, alpha, a, rsa, csa, b, rsb, csb, beta, c, rsc, csc)
    }
}

impl Scalar for f64 {
    fn of(v: f64) -> Self {
        v
    }
    fn as_f64(self) -> f64 {
        self
    }
    fn of_f32(v: f32) -> Self {
        v as f64
    }
    fn as_f32(self) -> f32 {
        self as f32
    }
    unsafe fn gemm_raw(
        m: usize, k: usize, n: usize, alpha: f64,
        a: *const f64, rsa: isize, csa: isize,
        b: *const f64, rsb: isize, csb: isize,
        beta: f64, c: *mut f64, rsc: isize, csc: isize,
    ) {
        matrixmultiply::dgemm(m, k, n, alpha, a, rsa, csa, b, rsb, csb, beta, c, rsc, csc)
    }
}

/// Row-major `C (m x n) = alpha op(A) op(B) + beta C`, where `op(A)` is
/// `m x k` (stored `k x m` when `ta`) and `op(B)` is `k x n` (stored `n x k`
/// when `tb`).
#[allow(clippy::too_many_arguments)]
pub fn gemm<T: Scalar>(ta: bool, tb: bool, m: usize, n: usize, k: usize, alpha: T, a: &[T], b: &[T], beta: T, c: &mut [T]) {
    assert!(a.len() >= m * k, "gemm: A too short");
    assert!(b.len() >= k * n, "gemm: B too short");
    assert!(c.len() >= m * n, "gemm: C too short");
    if m == 0 || n == 0 {
        return;
    }
    if k == 0 {
        c[..m * n].iter_mut().for_each(|v| *v = *v * beta);
        return;
    }
    if m <= SMALL_M {
        small_gemm(ta, tb, m, n, k, alpha, a, b, beta, c);
        return;
    }
    let (rsa, csa) = if ta { (1, m as isize) } else { (k as isize, 1) };
    let (rsb, csb) = if tb { (1, k as isize) } else { (n as isize, 1) };
    // SAFETY: extents were checked against the slice lengths above.
    unsafe {
        T::gemm_raw(m, k, n, alpha, a.as_ptr(), rsa, csa, b.as_ptr(), rsb, csb, beta, c.as_mut_ptr(), n as isize, 1);
    }
}

/// Below this many rows the packed kernel loses to plain row loops.
const SMALL_M: usize = 8;

/// Product for skinny `A`, reading each row of `B` once; inference runs
/// at batch one.
#[allow(clippy::too_many_arguments)]
fn small_gemm<T: Scalar>(ta: bool, tb: bool, m: usize, n: usize, k: usize, alpha: T, a: &[T], b: &[T], beta: T, c: &mut [T]) {
    let a_at = |i: usize, l: usize| if ta { a[l * m + i] } else { a[i * k + l] };
    let mut acc = vec![T::zero(); m * n];
    if tb {
        for i in 0..m {
            let a_row: Vec<T> = (0..k).map(|l| a_at(i, l)).collect();
            for (j, out) in acc[i * n..(i + 1) * n].iter_mut().enumerate() {
                *out = dot(&a_row, &b[j * k..(j + 1) * k]);
            }
        }
    } else {
        // four rows of B per pass; the additions keep their sequential order
        let mut l = 0;
        while l + 4 <= k {
            let (b0, b1, b2, b3) = (&b[l * n..(l + 1) * n], &b[(l + 1) * n..(l + 2) * n], &b[(l + 2) * n..(l + 3) * n], &b[(l + 3) * n..(l + 4) * n]);
            for i in 0..m {
                let (a0, a1, a2, a3) = (a_at(i, l), a_at(i, l + 1), a_at(i, l + 2), a_at(i, l + 3));
                let row = &mut acc[i * n..(i + 1) * n];
                for j in 0..n {
                    row[j] = row[j] + a0 * b0[j] + a1 * b1[j] + a2 * b2[j] + a3 * b3[j];
                }
            }
            l += 4;
        }
        for l in l..k {
            let b_row = &b[l * n..(l + 1) * n];
            for i in 0..m {
                let av = a_at(i, l);
                for (o, bv) in acc[i * n..(i + 1) * n].iter_mut().zip(b_row) {
                    *o += av * *bv;
                }
            }
        }
    }
    if beta == T::zero() {
        c[..m * n].iter_mut().zip(&acc).for_each(|(o, v)| *o = alpha * *v);
    } else {
        c[..m * n].iter_mut().zip(&acc).for_each(|(o, v)| *o = beta * *o + alpha * *v);
    }
}

/// Dot product with eight independent partial sums so it vectorises.
fn dot<T: Scalar>(x: &[T], y: &[T]) -> T {
    let mut lanes = [T::zero(); 8];
    let (xc, yc) = (x.chunks_exact(8), y.chunks_exact(8));
    let (xr, yr) = (xc.remainder(), yc.remainder());
    for (xs, ys) in xc.zip(yc) {
        for q in 0..8 {
            lanes[q] += xs[q] * ys[q];
        }
    }
    let mut s = lanes.iter().fold(T::zero(), |s, v| s + *v);
    for (xv, yv) in xr.iter().zip(yr) {
        s += *xv * *yv;
    }
    s
}
