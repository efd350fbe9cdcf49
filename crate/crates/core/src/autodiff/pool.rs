use crate::error::{Error, Result};
use crate::par;
use crate::scalar::Float;

/// 2×2, stride-2 max pooling. Returns the output and, per output element,
/// the flat input index of the window maximum (first occurrence on ties).
pub fn max_pool2x2_forward<T: Float>(x: &[T], dims: [usize; 4]) -> Result<(Vec<T>, Vec<u32>)> {
    let [n, c, h, w] = dims;
    if h % 2 != 0 || w % 2 != 0 {
        return Err(Error::dim(format!("max-pool needs even H and W, got {h}×{w}")));
    }
    let (oh, ow) = (h / 2, w / 2);
    let planes = n * c;
    let mut arg = vec![0u32; planes * oh * ow];
    par::for_each_chunk_mut(&mut arg, oh * ow, |p, out| {
        let src = &x[p * h * w..(p + 1) * h * w];
        for i in 0..oh {
            for j in 0..ow {
                let mut best_idx = 2 * i * w + 2 * j;
                for (dy, dx) in [(0, 1), (1, 0), (1, 1)] {
                    let idx = (2 * i + dy) * w + 2 * j + dx;
                    if src[idx] > src[best_idx] {
                        best_idx = idx;
                    }
                }
                out[i * ow + j] = (p * h * w + best_idx) as u32;
            }
        }
    });
    let y = arg.iter().map(|&i| x[i as usize]).collect();
    Ok((y, arg))
}

pub fn max_pool2x2_backward<T: Float>(dy: &[T], argmax: &[u32], input_len: usize) -> Vec<T> {
    let mut dx = vec![T::zero(); input_len];
    for (&g, &i) in dy.iter().zip(argmax) {
        dx[i as usize] += g;
    }
    dx
}
