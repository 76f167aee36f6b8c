use crate::error::{Error, Result};
use crate::tensor::{Real, Tensor};

/// For every slot of the `[N, c*p*p]` token matrix, the flat index of the
/// image pixel it holds. Token `i` covers grid cell `(i / (w/p), i % (w/p))`
/// and is flattened channel-major.
pub(crate) fn patch_index(c: usize, h: usize, w: usize, p: usize) -> Vec<usize> {
    let (gh, gw) = (h / p, w / p);
    let mut idx = Vec::with_capacity(c * h * w);
    for gy in 0..gh {
        for gx in 0..gw {
            for ch in 0..c {
                for dy in 0..p {
                    for dx in 0..p {
                        idx.push((ch * h + gy * p + dy) * w + gx * p + dx);
                    }
                }
            }
        }
    }
    idx
}

/// Inverse of [`patch_index`]: for every image pixel, its token-matrix slot.
pub(crate) fn unpatch_index(c: usize, h: usize, w: usize, p: usize) -> Vec<usize> {
    let fwd = patch_index(c, h, w, p);
    let mut inv = vec![0; fwd.len()];
    for (slot, &pix) in fwd.iter().enumerate() {
        inv[pix] = slot;
    }
    inv
}

/// `[c, h, w]` to `[N, c*p*p]`.
pub fn patchify<T: Real>(image: &Tensor<T>, p: usize) -> Result<Tensor<T>> {
    let (c, h, w) = match *image.shape() {
        [c, h, w] => (c, h, w),
        ref s => return Err(Error::dim(format!("patchify expects [c, h, w], got {s:?}"))),
    };
    if p == 0 || h % p != 0 || w % p != 0 {
        return Err(Error::dim(format!("{h}x{w} image is not divisible into {p}-pixel patches")));
    }
    let d = image.data();
    let data = patch_index(c, h, w, p).into_iter().map(|i| d[i]).collect();
    Tensor::new(&[(h / p) * (w / p), c * p * p], data)
}

/// Grid side of a square token sequence, if `n` is a perfect square.
pub(crate) fn grid_side(n: usize) -> Option<usize> {
    let s = (n as f64).sqrt().round() as usize;
    (s * s == n).then_some(s)
}

/// `[N, c*p*p]` back to `[c, side*p, side*p]` with `N = side²`.
pub fn unpatchify<T: Real>(tokens: &Tensor<T>, p: usize, c: usize) -> Result<Tensor<T>> {
    let (n, d) = match *tokens.shape() {
        [n, d] => (n, d),
        ref s => return Err(Error::dim(format!("unpatchify expects [N, d], got {s:?}"))),
    };
    if d != c * p * p {
        return Err(Error::dim(format!("token length {d} is not {c}*{p}*{p}")));
    }
    let side = grid_side(n).ok_or_else(|| Error::dim(format!("{n} tokens do not form a square grid")))?;
    let (h, w) = (side * p, side * p);
    let t = tokens.data();
    let data = unpatch_index(c, h, w, p).into_iter().map(|i| t[i]).collect();
    Tensor::new(&[c, h, w], data)
}

/// Fixed 2D sine-cosine table `[gh*gw, dim]`. The first half of each row
/// encodes the grid row, the second half the grid column.
pub fn sincos_table(dim: usize, gh: usize, gw: usize) -> Result<Tensor<f64>> {
    if dim == 0 || dim % 4 != 0 {
        return Err(Error::dim(format!("positional dim {dim} must be a positive multiple of 4")));
    }
    let quarter = dim / 4;
    let omega: Vec<f64> = (0..quarter)
        .map(|i| 1.0 / 10000f64.powf(i as f64 / quarter as f64))
        .collect();
    let mut data = Vec::with_capacity(gh * gw * dim);
    for y in 0..gh {
        for x in 0..gw {
            for pos in [y as f64, x as f64] {
                data.extend(omega.iter().map(|o| (pos * o).sin()));
                data.extend(omega.iter().map(|o| (pos * o).cos()));
            }
        }
    }
    Tensor::new(&[gh * gw, dim], data)
}
