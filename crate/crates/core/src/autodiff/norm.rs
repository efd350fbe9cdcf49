//! Per-channel batch normalization over `N×H×W`.

use crate::error::{Error, Result};
use crate::par;
use crate::scalar::Float;

/// Running mean/variance tracked during training and used in eval mode.
#[derive(Debug, Clone, PartialEq)]
pub struct RunningStats<T> {
    pub mean: Vec<T>,
    pub var: Vec<T>,
}

impl<T: Float> RunningStats<T> {
    pub fn new(channels: usize) -> Self {
        Self {
            mean: vec![T::zero(); channels],
            var: vec![T::one(); channels],
        }
    }
}

pub(crate) struct BnSaved<T> {
    /// Normalized input before the affine transform.
    pub xhat: Vec<T>,
    pub inv_std: Vec<T>,
}

/// Sum of `f(value)` over channel `c` across the batch.
fn channel_reduce<T: Float>(x: &[T], dims: [usize; 4], c: usize, f: impl Fn(T) -> T) -> T {
    let [n, ch, h, w] = dims;
    let plane = h * w;
    let mut acc = T::zero();
    for b in 0..n {
        let off = (b * ch + c) * plane;
        acc += lane_sum(&x[off..off + plane], &f);
    }
    acc
}

/// Eight-lane sum of `f(x)`; splitting the accumulator lets it vectorize.
fn lane_sum<T: Float>(xs: &[T], f: impl Fn(T) -> T) -> T {
    let mut acc = [T::zero(); 8];
    let chunks = xs.chunks_exact(8);
    let rem = chunks.remainder();
    for c in chunks {
        for (a, &v) in acc.iter_mut().zip(c) {
            *a += f(v);
        }
    }
    let mut s = acc.iter().copied().sum::<T>();
    for &v in rem {
        s += f(v);
    }
    s
}

/// Eight-lane `(Σ a, Σ a·b)`.
fn lane_dot<T: Float>(a: &[T], b: &[T]) -> (T, T) {
    let mut sa = [T::zero(); 8];
    let mut sab = [T::zero(); 8];
    let ca = a.chunks_exact(8);
    let cb = b.chunks_exact(8);
    let (ra, rb) = (ca.remainder(), cb.remainder());
    for (x, y) in ca.zip(cb) {
        for i in 0..8 {
            sa[i] += x[i];
            sab[i] += x[i] * y[i];
        }
    }
    let mut s0 = sa.iter().copied().sum::<T>();
    let mut s1 = sab.iter().copied().sum::<T>();
    for (&x, &y) in ra.iter().zip(rb) {
        s0 += x;
        s1 += x * y;
    }
    (s0, s1)
}

/// Train-mode forward: normalize with batch statistics and update `stats`.
pub(crate) fn batch_norm_train<T: Float>(
    x: &[T],
    dims: [usize; 4],
    gamma: &[T],
    beta: &[T],
    stats: &mut RunningStats<T>,
    eps: T,
    momentum: T,
) -> Result<(Vec<T>, BnSaved<T>)> {
    let [n, c, h, w] = dims;
    let count = n * h * w;
    if count == 0 {
        return Err(Error::dim("batch norm over an empty batch"));
    }
    let m = T::from_f64(count as f64);
    let means: Vec<T> = par::map_range(c, |ch| channel_reduce(x, dims, ch, |v| v) / m);
    let vars: Vec<T> = par::map_range(c, |ch| {
        let mu = means[ch];
        channel_reduce(x, dims, ch, |v| (v - mu) * (v - mu)) / m
    });
    let inv_std: Vec<T> = vars.iter().map(|&v| T::one() / (v + eps).sqrt()).collect();
    let unbias = if count > 1 {
        m / (m - T::one())
    } else {
        T::one()
    };
    for ch in 0..c {
        stats.mean[ch] = (T::one() - momentum) * stats.mean[ch] + momentum * means[ch];
        stats.var[ch] = (T::one() - momentum) * stats.var[ch] + momentum * vars[ch] * unbias;
    }
    let (y, xhat) = normalize(x, dims, &means, &inv_std, gamma, beta);
    Ok((y, BnSaved { xhat, inv_std }))
}

/// Eval-mode forward with fixed running statistics.
pub(crate) fn batch_norm_eval<T: Float>(
    x: &[T],
    dims: [usize; 4],
    gamma: &[T],
    beta: &[T],
    stats: &RunningStats<T>,
    eps: T,
) -> (Vec<T>, BnSaved<T>) {
    let inv_std: Vec<T> = stats.var.iter().map(|&v| T::one() / (v + eps).sqrt()).collect();
    let (y, xhat) = normalize(x, dims, &stats.mean, &inv_std, gamma, beta);
    (y, BnSaved { xhat, inv_std })
}

fn normalize<T: Float>(
    x: &[T],
    dims: [usize; 4],
    mean: &[T],
    inv_std: &[T],
    gamma: &[T],
    beta: &[T],
) -> (Vec<T>, Vec<T>) {
    let [_, c, h, w] = dims;
    let plane = h * w;
    let mut xhat = x.to_vec();
    par::for_each_chunk_mut(&mut xhat, plane, |p, row| {
        let ch = p % c;
        let (mu, is) = (mean[ch], inv_std[ch]);
        row.iter_mut().for_each(|v| *v = (*v - mu) * is);
    });
    let mut y = vec![T::zero(); x.len()];
    par::for_each_chunk_mut(&mut y, plane, |p, row| {
        let ch = p % c;
        let (g, b) = (gamma[ch], beta[ch]);
        for (v, &xh) in row.iter_mut().zip(&xhat[p * plane..(p + 1) * plane]) {
            *v = xh * g + b;
        }
    });
    (y, xhat)
}

/// Gradients `(dx, dgamma, dbeta)`. `train` selects the full batch-statistics
/// gradient; otherwise the statistics are constants.
pub(crate) fn batch_norm_backward<T: Float>(
    dy: &[T],
    dims: [usize; 4],
    gamma: &[T],
    saved: &BnSaved<T>,
    train: bool,
    need_dx: bool,
) -> (Option<Vec<T>>, Vec<T>, Vec<T>) {
    let [n, c, h, w] = dims;
    let plane = h * w;
    let m = T::from_f64((n * plane) as f64);
    let sums: Vec<(T, T)> = par::map_range(c, |ch| {
        let mut db = T::zero();
        let mut dg = T::zero();
        for b in 0..n {
            let off = (b * c + ch) * plane;
            let (sb, sg) = lane_dot(&dy[off..off + plane], &saved.xhat[off..off + plane]);
            db += sb;
            dg += sg;
        }
        (db, dg)
    });
    let dbeta: Vec<T> = sums.iter().map(|s| s.0).collect();
    let dgamma: Vec<T> = sums.iter().map(|s| s.1).collect();
    let dx = need_dx.then(|| {
        let mut dx = dy.to_vec();
        par::for_each_chunk_mut(&mut dx, plane, |p, row| {
            let ch = p % c;
            let xh = &saved.xhat[p * plane..(p + 1) * plane];
            let k = gamma[ch] * saved.inv_std[ch];
            if train {
                let (db, dg) = (dbeta[ch], dgamma[ch]);
                for (v, &x) in row.iter_mut().zip(xh) {
                    *v = k / m * (m * *v - db - x * dg);
                }
            } else {
                row.iter_mut().for_each(|v| *v *= k);
            }
        });
        dx
    });
    (dx, dgamma, dbeta)
}
