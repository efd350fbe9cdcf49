//! Convolution kernels: im2col + GEMM for square-kernel cross-correlation,
//! and the non-overlapping 2×2/stride-2 transpose convolution.

use crate::error::{Error, Result};
use crate::par::{self, MatRef, Strided};
use crate::scalar::Float;

/// Shape bookkeeping for one `conv2d` call.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvGeom {
    pub batch: usize,
    pub c_in: usize,
    pub h: usize,
    pub w: usize,
    pub c_out: usize,
    pub kernel: usize,
    pub pad: usize,
    pub stride: usize,
    pub h_out: usize,
    pub w_out: usize,
}

impl ConvGeom {
    pub fn new(
        input: [usize; 4],
        weight: &[usize],
        pad: usize,
        stride: usize,
    ) -> Result<Self> {
        let [batch, c_in, h, w] = input;
        let [c_out, wc_in, kh, kw] = *weight else {
            return Err(Error::dim(format!(
                "conv weight must be C_out×C_in×K×K, got {weight:?}"
            )));
        };
        if wc_in != c_in {
            return Err(Error::dim(format!(
                "conv input has {c_in} channels but weight expects {wc_in}"
            )));
        }
        if kh != kw || kh % 2 == 0 {
            return Err(Error::dim(format!("conv kernel must be odd and square, got {kh}×{kw}")));
        }
        if stride == 0 {
            return Err(Error::Parameter("conv stride must be positive".into()));
        }
        if h + 2 * pad < kh || w + 2 * pad < kw {
            return Err(Error::dim("conv kernel larger than padded input"));
        }
        Ok(Self {
            batch,
            c_in,
            h,
            w,
            c_out,
            kernel: kh,
            pad,
            stride,
            h_out: (h + 2 * pad - kh) / stride + 1,
            w_out: (w + 2 * pad - kw) / stride + 1,
        })
    }

    fn is_pointwise(&self) -> bool {
        self.kernel == 1 && self.pad == 0 && self.stride == 1
    }

    fn col_rows(&self) -> usize {
        self.c_in * self.kernel * self.kernel
    }

    fn out_plane(&self) -> usize {
        self.h_out * self.w_out
    }

    fn in_plane(&self) -> usize {
        self.h * self.w
    }

    /// Shifted GEMMs win once there are a few input channels to contract over.
    fn shifted(&self) -> bool {
        self.stride == 1 && !self.is_pointwise() && self.c_in >= 4
    }

    fn padded_w(&self) -> usize {
        self.w + 2 * self.pad
    }

    fn padded_plane(&self) -> usize {
        (self.h + 2 * self.pad) * self.padded_w()
    }

    /// Columns of the padded-grid output, valid entries at `oy·Wp + ox`.
    fn span(&self) -> usize {
        (self.h_out - 1) * self.padded_w() + self.w_out
    }
}

/// Copy one sample into a zero-bordered `C×(H+2p)×(W+2p)` buffer.
fn pad_sample<T: Float>(x: &[T], g: &ConvGeom, out: &mut [T]) {
    let (wp, p) = (g.padded_w(), g.pad);
    par::for_each_chunk_mut(out, g.padded_plane(), |ci, dst| {
        dst.iter_mut().for_each(|v| *v = T::zero());
        let src = &x[ci * g.in_plane()..(ci + 1) * g.in_plane()];
        for (y, row) in src.chunks_exact(g.w).enumerate() {
            let o = (y + p) * wp + p;
            dst[o..o + g.w].copy_from_slice(row);
        }
    });
}

/// Stride-1 forward as a sum of K² shifted GEMMs over the padded input,
/// avoiding the K²-fold im2col buffer.
fn shifted_forward_sample<T: Float>(xp: &[T], w: &[T], g: &ConvGeom, full: &mut [T]) {
    let kk = g.kernel * g.kernel;
    let span = g.span();
    for t in 0..kk {
        let off = (t / g.kernel) * g.padded_w() + t % g.kernel;
        let beta = if t == 0 { T::zero() } else { T::one() };
        // SAFETY: the largest rhs index is off + span - 1 < padded plane,
        // lhs reads stay inside `w`, and `full` is c_out × span.
        unsafe {
            par::gemm_strided(
                g.c_out,
                g.c_in,
                span,
                T::one(),
                Strided::new(w.as_ptr().add(t), (g.c_in * kk) as isize, kk as isize),
                Strided::new(xp.as_ptr().add(off), g.padded_plane() as isize, 1),
                beta,
                Strided::new(full.as_mut_ptr(), span as isize, 1),
            );
        }
    }
}

/// Unfold one sample (`C_in×H×W`) into `col` (`C_in·K·K × H_out·W_out`).
fn im2col<T: Float>(x: &[T], g: &ConvGeom, col: &mut [T]) {
    let k = g.kernel;
    let plane = g.out_plane();
    par::for_each_chunk_mut(col, plane, |row, out| {
        let ci = row / (k * k);
        let ky = (row / k) % k;
        let kx = row % k;
        let src = &x[ci * g.in_plane()..(ci + 1) * g.in_plane()];
        for oy in 0..g.h_out {
            let iy = (oy * g.stride + ky) as isize - g.pad as isize;
            let dst = &mut out[oy * g.w_out..(oy + 1) * g.w_out];
            if iy < 0 || iy >= g.h as isize {
                dst.iter_mut().for_each(|v| *v = T::zero());
                continue;
            }
            let srow = &src[iy as usize * g.w..(iy as usize + 1) * g.w];
            if g.stride == 1 {
                // Contiguous copy with zero borders.
                let shift = kx as isize - g.pad as isize;
                for (ox, d) in dst.iter_mut().enumerate() {
                    let ix = ox as isize + shift;
                    *d = if ix >= 0 && ix < g.w as isize {
                        srow[ix as usize]
                    } else {
                        T::zero()
                    };
                }
            } else {
                for (ox, d) in dst.iter_mut().enumerate() {
                    let ix = (ox * g.stride + kx) as isize - g.pad as isize;
                    *d = if ix >= 0 && ix < g.w as isize {
                        srow[ix as usize]
                    } else {
                        T::zero()
                    };
                }
            }
        }
    });
}

/// Fold `col` back into one sample's input gradient (sum over overlaps).
fn col2im<T: Float>(col: &[T], g: &ConvGeom, dx: &mut [T]) {
    let k = g.kernel;
    let plane = g.out_plane();
    par::for_each_chunk_mut(dx, g.in_plane(), |ci, dst| {
        dst.iter_mut().for_each(|v| *v = T::zero());
        for ky in 0..k {
            for kx in 0..k {
                let row = (ci * k + ky) * k + kx;
                let src = &col[row * plane..(row + 1) * plane];
                for oy in 0..g.h_out {
                    let iy = (oy * g.stride + ky) as isize - g.pad as isize;
                    if iy < 0 || iy >= g.h as isize {
                        continue;
                    }
                    let drow = &mut dst[iy as usize * g.w..(iy as usize + 1) * g.w];
                    let srow = &src[oy * g.w_out..(oy + 1) * g.w_out];
                    for (ox, &v) in srow.iter().enumerate() {
                        let ix = (ox * g.stride + kx) as isize - g.pad as isize;
                        if ix >= 0 && ix < g.w as isize {
                            drow[ix as usize] += v;
                        }
                    }
                }
            }
        }
    });
}

pub fn conv2d_forward<T: Float>(x: &[T], w: &[T], bias: Option<&[T]>, g: &ConvGeom) -> Vec<T> {
    let in_len = g.c_in * g.in_plane();
    let out_len = g.c_out * g.out_plane();
    let mut y = vec![T::zero(); g.batch * out_len];
    if g.shifted() {
        let mut xp = vec![T::zero(); g.c_in * g.padded_plane()];
        let mut full = vec![T::zero(); g.c_out * g.span()];
        for n in 0..g.batch {
            pad_sample(&x[n * in_len..(n + 1) * in_len], g, &mut xp);
            shifted_forward_sample(&xp, w, g, &mut full);
            let (span, wp, wo) = (g.span(), g.padded_w(), g.w_out);
            par::for_each_chunk_mut(&mut y[n * out_len..(n + 1) * out_len], g.out_plane(), |co, dst| {
                let src = &full[co * span..(co + 1) * span];
                let b = bias.map_or(T::zero(), |b| b[co]);
                for (oy, row) in dst.chunks_exact_mut(wo).enumerate() {
                    for (d, &v) in row.iter_mut().zip(&src[oy * wp..oy * wp + wo]) {
                        *d = v + b;
                    }
                }
            });
        }
        return y;
    }
    let mut col = if g.is_pointwise() {
        Vec::new()
    } else {
        vec![T::zero(); g.col_rows() * g.out_plane()]
    };
    for n in 0..g.batch {
        let xn = &x[n * in_len..(n + 1) * in_len];
        let yn = &mut y[n * out_len..(n + 1) * out_len];
        let rhs = if g.is_pointwise() {
            xn
        } else {
            im2col(xn, g, &mut col);
            &col
        };
        par::gemm(
            T::one(),
            MatRef::new(w, g.c_out, g.col_rows()),
            MatRef::new(rhs, g.col_rows(), g.out_plane()),
            T::zero(),
            yn,
        );
        if let Some(b) = bias {
            add_channel_bias(yn, b, g.out_plane());
        }
    }
    y
}

pub(crate) fn add_channel_bias<T: Float>(y: &mut [T], bias: &[T], plane: usize) {
    par::for_each_chunk_mut(y, plane, |c, row| {
        let b = bias[c % bias.len()];
        row.iter_mut().for_each(|v| *v += b);
    });
}

pub(crate) fn channel_sums<T: Float>(dy: &[T], batch: usize, channels: usize, plane: usize) -> Vec<T> {
    let mut out = vec![T::zero(); channels];
    for n in 0..batch {
        for (c, o) in out.iter_mut().enumerate() {
            let off = (n * channels + c) * plane;
            *o += dy[off..off + plane].iter().copied().sum::<T>();
        }
    }
    out
}

/// Gradients of `conv2d`: `(dx if requested, dw, db)`.
pub fn conv2d_backward<T: Float>(
    x: &[T],
    w: &[T],
    dy: &[T],
    g: &ConvGeom,
    need_dx: bool,
) -> (Option<Vec<T>>, Vec<T>, Vec<T>) {
    let in_len = g.c_in * g.in_plane();
    let out_len = g.c_out * g.out_plane();
    let rows = g.col_rows();
    let plane = g.out_plane();
    let mut dw = vec![T::zero(); g.c_out * rows];
    let mut dx = need_dx.then(|| vec![T::zero(); g.batch * in_len]);
    if g.shifted() {
        shifted_backward(x, w, dy, g, &mut dw, dx.as_deref_mut());
        let db = channel_sums(dy, g.batch, g.c_out, plane);
        return (dx, dw, db);
    }
    let mut col = if g.is_pointwise() {
        Vec::new()
    } else {
        vec![T::zero(); rows * plane]
    };
    let mut dcol = if need_dx && !g.is_pointwise() {
        vec![T::zero(); rows * plane]
    } else {
        Vec::new()
    };
    for n in 0..g.batch {
        let xn = &x[n * in_len..(n + 1) * in_len];
        let dyn_ = &dy[n * out_len..(n + 1) * out_len];
        let cols = if g.is_pointwise() {
            xn
        } else {
            im2col(xn, g, &mut col);
            &col
        };
        // dw += dy · colᵀ
        par::gemm(
            T::one(),
            MatRef::new(dyn_, g.c_out, plane),
            MatRef::transposed(cols, plane, rows),
            T::one(),
            &mut dw,
        );
        if let Some(dx) = dx.as_mut() {
            let dxn = &mut dx[n * in_len..(n + 1) * in_len];
            let wt = MatRef::transposed(w, rows, g.c_out);
            let dyv = MatRef::new(dyn_, g.c_out, plane);
            if g.is_pointwise() {
                par::gemm(T::one(), wt, dyv, T::zero(), dxn);
            } else {
                par::gemm(T::one(), wt, dyv, T::zero(), &mut dcol);
                col2im(&dcol, g, dxn);
            }
        }
    }
    let db = channel_sums(dy, g.batch, g.c_out, plane);
    (dx, dw, db)
}

fn shifted_backward<T: Float>(x: &[T], w: &[T], dy: &[T], g: &ConvGeom, dw: &mut [T], mut dx: Option<&mut [T]>) {
    let in_len = g.c_in * g.in_plane();
    let out_len = g.c_out * g.out_plane();
    let kk = g.kernel * g.kernel;
    let (span, wp, pp, wo) = (g.span(), g.padded_w(), g.padded_plane(), g.w_out);
    let mut xp = vec![T::zero(); g.c_in * pp];
    let mut dyf = vec![T::zero(); g.c_out * span];
    let mut dxp = if dx.is_some() { vec![T::zero(); g.c_in * pp] } else { Vec::new() };
    for n in 0..g.batch {
        pad_sample(&x[n * in_len..(n + 1) * in_len], g, &mut xp);
        let dyn_ = &dy[n * out_len..(n + 1) * out_len];
        // Scatter dy onto the padded-grid columns; wrap-around columns stay 0.
        par::for_each_chunk_mut(&mut dyf, span, |co, dst| {
            dst.iter_mut().for_each(|v| *v = T::zero());
            let src = &dyn_[co * g.out_plane()..(co + 1) * g.out_plane()];
            for (oy, row) in src.chunks_exact(wo).enumerate() {
                dst[oy * wp..oy * wp + wo].copy_from_slice(row);
            }
        });
        for t in 0..kk {
            let off = (t / g.kernel) * wp + t % g.kernel;
            // SAFETY: same extents as the forward pass; dw entries
            // (co, ci, t) are distinct for distinct (co, ci).
            unsafe {
                // dw[:, :, t] += dy · shift_t(xp)ᵀ
                par::gemm_strided(
                    g.c_out,
                    span,
                    g.c_in,
                    T::one(),
                    Strided::new(dyf.as_ptr(), span as isize, 1),
                    Strided::new(xp.as_ptr().add(off), 1, pp as isize),
                    T::one(),
                    Strided::new(dw.as_mut_ptr().add(t), (g.c_in * kk) as isize, kk as isize),
                );
            }
        }
        if let Some(dx) = dx.as_deref_mut() {
            dxp.iter_mut().for_each(|v| *v = T::zero());
            for t in 0..kk {
                let off = (t / g.kernel) * wp + t % g.kernel;
                // SAFETY: shift_t(dxp) spans the same padded extent.
                unsafe {
                    par::gemm_strided(
                        g.c_in,
                        g.c_out,
                        span,
                        T::one(),
                        Strided::new(w.as_ptr().add(t), kk as isize, (g.c_in * kk) as isize),
                        Strided::new(dyf.as_ptr(), span as isize, 1),
                        T::one(),
                        Strided::new(dxp.as_mut_ptr().add(off), pp as isize, 1),
                    );
                }
            }
            let p = g.pad;
            par::for_each_chunk_mut(&mut dx[n * in_len..(n + 1) * in_len], g.in_plane(), |ci, dst| {
                let src = &dxp[ci * pp..(ci + 1) * pp];
                for (y, row) in dst.chunks_exact_mut(g.w).enumerate() {
                    let o = (y + p) * wp + p;
                    row.copy_from_slice(&src[o..o + g.w]);
                }
            });
        }
    }
}

/// Shape bookkeeping for a 2×2, stride-2 transpose convolution with
/// weight layout `C_in×C_out×2×2`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct UpGeom {
    pub batch: usize,
    pub c_in: usize,
    pub h: usize,
    pub w: usize,
    pub c_out: usize,
}

impl UpGeom {
    pub fn new(input: [usize; 4], weight: &[usize]) -> Result<Self> {
        let [batch, c_in, h, w] = input;
        let [wc_in, c_out, 2, 2] = *weight else {
            return Err(Error::dim(format!(
                "transpose conv weight must be C_in×C_out×2×2, got {weight:?}"
            )));
        };
        if wc_in != c_in {
            return Err(Error::dim(format!(
                "transpose conv input has {c_in} channels but weight expects {wc_in}"
            )));
        }
        Ok(Self {
            batch,
            c_in,
            h,
            w,
            c_out,
        })
    }

    pub fn out_dims(&self) -> [usize; 4] {
        [self.batch, self.c_out, 2 * self.h, 2 * self.w]
    }
}

pub fn conv_t2x2_forward<T: Float>(x: &[T], w: &[T], bias: Option<&[T]>, g: &UpGeom) -> Vec<T> {
    let plane = g.h * g.w;
    let in_len = g.c_in * plane;
    let out_len = g.c_out * 4 * plane;
    let taps = g.c_out * 4;
    let mut y = vec![T::zero(); g.batch * out_len];
    let mut cols = vec![T::zero(); taps * plane];
    for n in 0..g.batch {
        let xn = &x[n * in_len..(n + 1) * in_len];
        // cols[(co,a,b), (i,j)] = Σ_ci w[ci, (co,a,b)] · x[ci, (i,j)]
        par::gemm(
            T::one(),
            MatRef::transposed(w, taps, g.c_in),
            MatRef::new(xn, g.c_in, plane),
            T::zero(),
            &mut cols,
        );
        let yn = &mut y[n * out_len..(n + 1) * out_len];
        let ow = 2 * g.w;
        par::for_each_chunk_mut(yn, 4 * plane, |co, out| {
            let b = bias.map_or(T::zero(), |b| b[co]);
            for a in 0..2 {
                for bb in 0..2 {
                    let src = &cols[(co * 4 + a * 2 + bb) * plane..][..plane];
                    for i in 0..g.h {
                        let orow = &mut out[(2 * i + a) * ow..(2 * i + a + 1) * ow];
                        for j in 0..g.w {
                            orow[2 * j + bb] = src[i * g.w + j] + b;
                        }
                    }
                }
            }
        });
    }
    y
}

pub fn conv_t2x2_backward<T: Float>(
    x: &[T],
    w: &[T],
    dy: &[T],
    g: &UpGeom,
    need_dx: bool,
) -> (Option<Vec<T>>, Vec<T>, Vec<T>) {
    let plane = g.h * g.w;
    let in_len = g.c_in * plane;
    let out_len = g.c_out * 4 * plane;
    let taps = g.c_out * 4;
    let ow = 2 * g.w;
    let mut dw = vec![T::zero(); g.c_in * taps];
    let mut dx = need_dx.then(|| vec![T::zero(); g.batch * in_len]);
    let mut dcols = vec![T::zero(); taps * plane];
    for n in 0..g.batch {
        let dyn_ = &dy[n * out_len..(n + 1) * out_len];
        par::for_each_chunk_mut(&mut dcols, plane, |row, dst| {
            let co = row / 4;
            let a = (row / 2) % 2;
            let bb = row % 2;
            let src = &dyn_[co * 4 * plane..(co + 1) * 4 * plane];
            for i in 0..g.h {
                let srow = &src[(2 * i + a) * ow..(2 * i + a + 1) * ow];
                for j in 0..g.w {
                    dst[i * g.w + j] = srow[2 * j + bb];
                }
            }
        });
        let xn = &x[n * in_len..(n + 1) * in_len];
        // dw[ci, tap] += Σ_p x[ci, p] · dcols[tap, p]
        par::gemm(
            T::one(),
            MatRef::new(xn, g.c_in, plane),
            MatRef::transposed(&dcols, plane, taps),
            T::one(),
            &mut dw,
        );
        if let Some(dx) = dx.as_mut() {
            par::gemm(
                T::one(),
                MatRef::new(w, g.c_in, taps),
                MatRef::new(&dcols, taps, plane),
                T::zero(),
                &mut dx[n * in_len..(n + 1) * in_len],
            );
        }
    }
    let db = channel_sums(dy, g.batch, g.c_out, 4 * plane);
    (dx, dw, db)
}
