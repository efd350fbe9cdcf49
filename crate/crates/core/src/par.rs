//! Data-parallel execution helpers.
//!
//! With the `parallel` feature the loops below fan out over the current
//! rayon pool; without it they run sequentially. Work is always split into
//! the same fixed-size pieces, so results are bit-identical regardless of
//! the feature or the number of worker threads.

use crate::scalar::Float;

#[cfg(feature = "parallel")]
use rayon::prelude::*;

/// Column width of one GEMM work item.
const GEMM_COLS: usize = 512;

/// Number of worker threads the helpers will use from the calling context.
pub fn current_threads() -> usize {
    #[cfg(feature = "parallel")]
    {
        rayon::current_num_threads()
    }
    #[cfg(not(feature = "parallel"))]
    {
        1
    }
}

/// Whether the crate was built with the rayon backend.
pub const fn is_parallel_build() -> bool {
    cfg!(feature = "parallel")
}

/// Runs `f` on a pool with exactly `threads` workers (`None` = default pool).
pub fn with_threads<R: Send>(threads: Option<usize>, f: impl FnOnce() -> R + Send) -> R {
    #[cfg(feature = "parallel")]
    {
        match threads {
            Some(n) => rayon::ThreadPoolBuilder::new()
                .num_threads(n.max(1))
                .build()
                .expect("thread pool")
                .install(f),
            None => f(),
        }
    }
    #[cfg(not(feature = "parallel"))]
    {
        let _ = threads;
        f()
    }
}

/// Apply `f(index, chunk)` to consecutive `chunk`-sized pieces of `data`.
pub fn for_each_chunk_mut<T, F>(data: &mut [T], chunk: usize, f: F)
where
    T: Send,
    F: Fn(usize, &mut [T]) + Sync + Send,
{
    let chunk = chunk.max(1);
    #[cfg(feature = "parallel")]
    data.par_chunks_mut(chunk)
        .enumerate()
        .for_each(|(i, c)| f(i, c));
    #[cfg(not(feature = "parallel"))]
    data.chunks_mut(chunk).enumerate().for_each(|(i, c)| f(i, c));
}

/// Ordered `(0..n).map(f).collect()`.
pub fn map_range<R, F>(n: usize, f: F) -> Vec<R>
where
    R: Send,
    F: Fn(usize) -> R + Sync + Send,
{
    #[cfg(feature = "parallel")]
    {
        (0..n).into_par_iter().map(f).collect()
    }
    #[cfg(not(feature = "parallel"))]
    {
        (0..n).map(f).collect()
    }
}

#[derive(Clone, Copy)]
struct SendPtr<T>(*mut T);
unsafe impl<T> Send for SendPtr<T> {}
unsafe impl<T> Sync for SendPtr<T> {}

#[derive(Clone, Copy)]
struct SendConstPtr<T>(*const T);
unsafe impl<T> Send for SendConstPtr<T> {}
unsafe impl<T> Sync for SendConstPtr<T> {}

/// Row-major matrix operand, optionally read transposed.
#[derive(Clone, Copy)]
pub struct MatRef<'a, T> {
    pub data: &'a [T],
    /// Logical rows.
    pub rows: usize,
    /// Logical columns.
    pub cols: usize,
    /// `data` holds the transpose (cols × rows, row-major).
    pub transposed: bool,
}

impl<'a, T> MatRef<'a, T> {
    pub fn new(data: &'a [T], rows: usize, cols: usize) -> Self {
        Self {
            data,
            rows,
            cols,
            transposed: false,
        }
    }

    /// Logical `rows × cols` view of a buffer stored as `cols × rows`.
    pub fn transposed(data: &'a [T], rows: usize, cols: usize) -> Self {
        Self {
            data,
            rows,
            cols,
            transposed: true,
        }
    }

    fn strides(&self) -> (isize, isize) {
        if self.transposed {
            (1, self.rows as isize)
        } else {
            (self.cols as isize, 1)
        }
    }
}

/// `c = alpha · a · b + beta · c` with `c` row-major `a.rows × b.cols`.
///
/// Columns of `c` are processed in fixed-width blocks, in parallel when the
/// `parallel` feature is on.
pub fn gemm<T: Float>(alpha: T, a: MatRef<'_, T>, b: MatRef<'_, T>, beta: T, c: &mut [T]) {
    let (m, k, n) = (a.rows, a.cols, b.cols);
    assert_eq!(b.rows, k, "gemm inner dimension");
    assert_eq!(a.data.len(), m * k, "gemm lhs size");
    assert_eq!(b.data.len(), k * n, "gemm rhs size");
    assert_eq!(c.len(), m * n, "gemm output size");
    let (rsa, csa) = a.strides();
    let (rsb, csb) = b.strides();
    // SAFETY: extents checked above.
    unsafe {
        gemm_strided(
            m,
            k,
            n,
            alpha,
            Strided::new(a.data.as_ptr(), rsa, csa),
            Strided::new(b.data.as_ptr(), rsb, csb),
            beta,
            Strided::new(c.as_mut_ptr(), n as isize, 1),
        );
    }
}

/// Raw strided matrix view.
#[derive(Clone, Copy)]
pub struct Strided<P> {
    pub ptr: P,
    pub rs: isize,
    pub cs: isize,
}

impl<P> Strided<P> {
    pub fn new(ptr: P, rs: isize, cs: isize) -> Self {
        Self { ptr, rs, cs }
    }
}

/// Strided `c = alpha · a · b + beta · c` (`m×k` times `k×n`).
///
/// # Safety
/// Every element addressed through the three views must be in bounds, and
/// distinct `(i, j)` positions of `c` must not alias each other or `a`/`b`.
pub unsafe fn gemm_strided<T: Float>(
    m: usize,
    k: usize,
    n: usize,
    alpha: T,
    a: Strided<*const T>,
    b: Strided<*const T>,
    beta: T,
    c: Strided<*mut T>,
) {
    if m == 0 || n == 0 {
        return;
    }
    if k == 0 {
        for i in 0..m {
            for j in 0..n {
                let p = c.ptr.offset(i as isize * c.rs + j as isize * c.cs);
                *p = if beta == T::zero() { T::zero() } else { *p * beta };
            }
        }
        return;
    }
    let ap = SendConstPtr(a.ptr);
    let bp = SendConstPtr(b.ptr);
    let cp = SendPtr(c.ptr);
    let blocks = n.div_ceil(GEMM_COLS);
    let run = move |blk: usize| {
        let (ap, bp, cp) = (ap, bp, cp);
        let j0 = blk * GEMM_COLS;
        let w = GEMM_COLS.min(n - j0);
        // SAFETY: each block writes a disjoint set of columns of `c`.
        unsafe {
            T::gemm_raw(
                m,
                k,
                w,
                alpha,
                ap.0,
                a.rs,
                a.cs,
                bp.0.offset(j0 as isize * b.cs),
                b.rs,
                b.cs,
                beta,
                cp.0.offset(j0 as isize * c.cs),
                c.rs,
                c.cs,
            );
        }
    };
    #[cfg(feature = "parallel")]
    (0..blocks).into_par_iter().for_each(run);
    #[cfg(not(feature = "parallel"))]
    (0..blocks).for_each(run);
}
