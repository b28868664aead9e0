//! Dense matrix products over row-major buffers.
//!
//! Products are delegated to `matrixmultiply`. When the current rayon pool
//! has more than one thread, the output rows are split into disjoint blocks
//! computed in parallel; every output element is still produced by a single
//! kernel call with the same accumulation order, so results do not depend on
//! the thread count.

use std::fmt::Debug;
use std::iter::Sum;

use num_traits::Float;
use rayon::prelude::*;

/// Floating-point type the network can be instantiated with.
pub trait Scalar: Float + Sum + Default + Debug + Send + Sync + 'static {
    /// # Safety
    /// Pointers and strides must describe valid `m×k`, `k×n` and `m×n`
    /// matrices; `c` must not alias `a` or `b`.
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
    );

    fn from_f64_lossy(v: f64) -> Self;
}

impl Scalar for f32 {
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
    ) {
        matrixmultiply::sgemm(m, k, n, 1.0, a, rsa, csa, b, rsb, csb, beta, c, rsc, 1);
    }

    fn from_f64_lossy(v: f64) -> Self {
        v as f32
    }
}

impl Scalar for f64 {
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
    ) {
        matrixmultiply::dgemm(m, k, n, 1.0, a, rsa, csa, b, rsb, csb, beta, c, rsc, 1);
    }

    fn from_f64_lossy(v: f64) -> Self {
        v
    }
}

/// Strided read-only view of a `rows × cols` matrix.
#[derive(Clone, Copy)]
pub(crate) struct View<'a, T> {
    data: &'a [T],
    rows: usize,
    cols: usize,
    rs: usize,
    cs: usize,
}

impl<'a, T> View<'a, T> {
    /// Row-major `rows × cols`.
    pub fn rm(data: &'a [T], rows: usize, cols: usize) -> Self {
        Self::new(data, rows, cols, cols, 1)
    }

    /// Transpose of a row-major `cols × rows` buffer.
    pub fn rm_t(data: &'a [T], rows: usize, cols: usize) -> Self {
        Self::new(data, rows, cols, 1, rows)
    }

    fn new(data: &'a [T], rows: usize, cols: usize, rs: usize, cs: usize) -> Self {
        if rows > 0 && cols > 0 {
            let last = (rows - 1) * rs + (cols - 1) * cs;
            assert!(last < data.len(), "view {rows}x{cols} exceeds buffer of {}", data.len());
        }
        Self {
            data,
            rows,
            cols,
            rs,
            cs,
        }
    }
}

const PAR_MIN_ROWS: usize = 256;

/// `c = a·b + beta·c` with `c` row-major and contiguous.
pub(crate) fn gemm<T: Scalar>(a: View<'_, T>, b: View<'_, T>, beta: T, c: &mut [T]) {
    let (m, k, n) = (a.rows, a.cols, b.cols);
    assert_eq!(k, b.rows, "inner dimensions differ");
    assert!(c.len() >= m * n, "output buffer too small");
    let c = &mut c[..m * n];
    if m == 0 || n == 0 {
        return;
    }
    if k == 0 {
        c.iter_mut().for_each(|v| *v = if beta == T::zero() { T::zero() } else { *v * beta });
        return;
    }
    let threads = rayon::current_num_threads();
    if threads > 1 && m >= 2 * PAR_MIN_ROWS {
        let block = m.div_ceil(threads).max(PAR_MIN_ROWS);
        c.par_chunks_mut(block * n).enumerate().for_each(|(i, chunk)| {
            let row0 = i * block;
            let rows = chunk.len() / n;
            block_gemm(&a, row0, rows, &b, beta, chunk);
        });
    } else {
        block_gemm(&a, 0, m, &b, beta, c);
    }
}

fn block_gemm<T: Scalar>(a: &View<'_, T>, row0: usize, rows: usize, b: &View<'_, T>, beta: T, c: &mut [T]) {
    let n = b.cols;
    debug_assert_eq!(c.len(), rows * n);
    // SAFETY: the views were bounds-checked on construction, the row block lies
    // inside `a`, and `c` is an exclusive slice of exactly `rows × n`.
    unsafe {
        T::gemm_raw(
            rows,
            a.cols,
            n,
            a.data.as_ptr().add(row0 * a.rs),
            a.rs as isize,
            a.cs as isize,
            b.data.as_ptr(),
            b.rs as isize,
            b.cs as isize,
            beta,
            c.as_mut_ptr(),
            n as isize,
        );
    }
}
