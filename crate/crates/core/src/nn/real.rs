use num_traits::Float;
use std::fmt::Debug;
use std::iter::Sum;
use std::ops::{AddAssign, MulAssign};

/// Scalar type the network runs in. Training uses `f32`; gradient checks
/// use `f64`.
pub trait Real:
    Float + AddAssign + MulAssign + Sum + Default + Debug + Send + Sync + 'static
{
    fn of(v: f64) -> Self;
    fn as_f64(self) -> f64;

    /// `C = A B + beta C` on raw strided buffers.
    ///
    /// # Safety
    /// Every index reachable through the given shapes and strides must be in
    /// bounds of the corresponding pointer; `c` must not alias `a` or `b`.
    #[allow(clippy::too_many_arguments)]
    unsafe fn gemm_raw(
        m: usize,
        k: usize,
        n: usize,
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
}

impl Real for f32 {
    fn of(v: f64) -> Self {
        v as f32
    }
    fn as_f64(self) -> f64 {
        self as f64
    }
    unsafe fn gemm_raw(
        m: usize,
        k: usize,
        n: usize,
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
        matrixmultiply::sgemm(m, k, n, 1.0, a, rsa, csa, b, rsb, csb, beta, c, rsc, csc)
    }
}

impl Real for f64 {
    fn of(v: f64) -> Self {
        v
    }
    fn as_f64(self) -> f64 {
        self
    }
    unsafe fn gemm_raw(
        m: usize,
        k: usize,
        n: usize,
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
        matrixmultiply::dgemm(m, k, n, 1.0, a, rsa, csa, b, rsb, csb, beta, c, rsc, csc)
    }
}

/// `tanh` kept strictly inside `(-1, 1)`; plain `tanh` rounds to 1 once the
/// argument passes about 9 in `f32`.
pub(crate) fn bounded_tanh<R: Real>(x: R) -> R {
    let edge = R::one() - R::epsilon() / (R::one() + R::one());
    x.tanh().max(-edge).min(edge)
}

/// A strided read-only matrix view.
#[derive(Clone, Copy)]
pub(crate) struct View<'a, R> {
    pub data: &'a [R],
    pub rs: usize,
    pub cs: usize,
}

fn span(rows: usize, cols: usize, rs: usize, cs: usize) -> usize {
    if rows == 0 || cols == 0 {
        0
    } else {
        (rows - 1) * rs + (cols - 1) * cs + 1
    }
}

/// Accumulating product `C += A B` with `A: m x k`, `B: k x n` and a
/// row-major `C` with row stride `rsc`. Bounds are checked up front.
pub(crate) fn gemm_acc<R: Real>(m: usize, k: usize, n: usize, a: View<R>, b: View<R>, c: &mut [R], rsc: usize) {
    assert!(span(m, k, a.rs, a.cs) <= a.data.len(), "gemm: A out of bounds");
    assert!(span(k, n, b.rs, b.cs) <= b.data.len(), "gemm: B out of bounds");
    assert!(span(m, n, rsc, 1) <= c.len(), "gemm: C out of bounds");
    if m == 0 || n == 0 {
        return;
    }
    // SAFETY: spans checked above; `c` is a unique borrow so cannot alias.
    unsafe {
        R::gemm_raw(
            m,
            k,
            n,
            a.data.as_ptr(),
            a.rs as isize,
            a.cs as isize,
            b.data.as_ptr(),
            b.rs as isize,
            b.cs as isize,
            R::one(),
            c.as_mut_ptr(),
            rsc as isize,
            1,
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gemm_matches_naive_with_overlapping_rows() {
        // Rows of A overlap: row i starts at i * 2 and spans 3 elements.
        let a: Vec<f64> = (0..12).map(|v| v as f64 * 0.5 - 1.0).collect();
        let b: Vec<f64> = (0..6).map(|v| (v as f64).sin()).collect();
        let (m, k, n) = (4, 3, 2);
        let mut c = vec![1.0; m * n];
        gemm_acc(m, k, n, View { data: &a, rs: 2, cs: 1 }, View { data: &b, rs: n, cs: 1 }, &mut c, n);
        for i in 0..m {
            for j in 0..n {
                let want: f64 = 1.0 + (0..k).map(|p| a[i * 2 + p] * b[p * n + j]).sum::<f64>();
                assert!((c[i * n + j] - want).abs() < 1e-12);
            }
        }
    }

    #[test]
    #[should_panic(expected = "A out of bounds")]
    fn gemm_rejects_short_buffers() {
        let a = vec![0.0f32; 5];
        let b = vec![0.0f32; 6];
        let mut c = vec![0.0f32; 4];
        gemm_acc(2, 3, 2, View { data: &a, rs: 3, cs: 1 }, View { data: &b, rs: 2, cs: 1 }, &mut c, 2);
    }
}
