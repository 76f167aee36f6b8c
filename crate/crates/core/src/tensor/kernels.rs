//! Raw loops shared by the forward and backward passes. All reductions run
//! in row-major order so results are reproducible bit for bit.

use super::Real;

/// `c[m×n] += a[m×k] · b[k×n]`
pub(crate) fn matmul_acc<T: Real>(a: &[T], b: &[T], c: &mut [T], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let c_row = &mut c[i * n..(i + 1) * n];
        let a_row = &a[i * k..(i + 1) * k];
        for (p, &av) in a_row.iter().enumerate() {
            let b_row = &b[p * n..(p + 1) * n];
            for (cv, &bv) in c_row.iter_mut().zip(b_row) {
                *cv = *cv + av * bv;
            }
        }
    }
}

/// `c[m×k] += a[m×n] · b[k×n]ᵀ`
pub(crate) fn matmul_nt_acc<T: Real>(a: &[T], b: &[T], c: &mut [T], m: usize, n: usize, k: usize) {
    for i in 0..m {
        let a_row = &a[i * n..(i + 1) * n];
        for j in 0..k {
            let b_row = &b[j * n..(j + 1) * n];
            let mut acc = T::zero();
            for (&x, &y) in a_row.iter().zip(b_row) {
                acc = acc + x * y;
            }
            c[i * k + j] = c[i * k + j] + acc;
        }
    }
}

/// `c[k×n] += a[m×k]ᵀ · b[m×n]`
pub(crate) fn matmul_tn_acc<T: Real>(a: &[T], b: &[T], c: &mut [T], m: usize, k: usize, n: usize) {
    for p in 0..m {
        let a_row = &a[p * k..(p + 1) * k];
        let b_row = &b[p * n..(p + 1) * n];
        for (i, &av) in a_row.iter().enumerate() {
            let c_row = &mut c[i * n..(i + 1) * n];
            for (cv, &bv) in c_row.iter_mut().zip(b_row) {
                *cv = *cv + av * bv;
            }
        }
    }
}

/// Geometry of a batched 3×3 same-padding convolution.
#[derive(Clone, Copy, Debug)]
pub(crate) struct ConvDims {
    pub batch: usize,
    pub c_in: usize,
    pub c_out: usize,
    pub h: usize,
    pub w: usize,
}

/// Output per pixel is `bias[o]` plus the kernel taps accumulated in
/// `(in_channel, ky, kx)` order, skipping taps that fall in the zero padding.
pub(crate) fn conv3x3_forward<T: Real>(x: &[T], k: &[T], bias: &[T], d: ConvDims) -> Vec<T> {
    let ConvDims {
        batch,
        c_in,
        c_out,
        h,
        w,
    } = d;
    let plane = h * w;
    let mut out = vec![T::zero(); batch * c_out * plane];
    for b in 0..batch {
        let xb = &x[b * c_in * plane..(b + 1) * c_in * plane];
        for o in 0..c_out {
            let ob = &mut out[(b * c_out + o) * plane..(b * c_out + o + 1) * plane];
            ob.fill(bias[o]);
            for i in 0..c_in {
                let xp = &xb[i * plane..(i + 1) * plane];
                for ky in 0..3 {
                    for kx in 0..3 {
                        let kv = k[((o * c_in + i) * 3 + ky) * 3 + kx];
                        for y in 0..h {
                            let sy = y as isize + ky as isize - 1;
                            if sy < 0 || sy >= h as isize {
                                continue;
                            }
                            let sy = sy as usize;
                            for xx in 0..w {
                                let sx = xx as isize + kx as isize - 1;
                                if sx < 0 || sx >= w as isize {
                                    continue;
                                }
                                ob[y * w + xx] = ob[y * w + xx] + kv * xp[sy * w + sx as usize];
                            }
                        }
                    }
                }
            }
        }
    }
    out
}

/// Accumulates the input, kernel and bias gradients of [`conv3x3_forward`].
pub(crate) fn conv3x3_backward<T: Real>(
    x: &[T],
    k: &[T],
    dout: &[T],
    d: ConvDims,
    mut dx: Option<&mut [T]>,
    mut dk: Option<&mut [T]>,
    mut dbias: Option<&mut [T]>,
) {
    let ConvDims {
        batch,
        c_in,
        c_out,
        h,
        w,
    } = d;
    let plane = h * w;
    for b in 0..batch {
        for o in 0..c_out {
            let go = &dout[(b * c_out + o) * plane..(b * c_out + o + 1) * plane];
            if let Some(db) = dbias.as_deref_mut() {
                let mut acc = T::zero();
                for &g in go {
                    acc = acc + g;
                }
                db[o] = db[o] + acc;
            }
            for i in 0..c_in {
                let base = (b * c_in + i) * plane;
                for ky in 0..3 {
                    for kx in 0..3 {
                        let kidx = ((o * c_in + i) * 3 + ky) * 3 + kx;
                        let kv = k[kidx];
                        let mut kacc = T::zero();
                        for y in 0..h {
                            let sy = y as isize + ky as isize - 1;
                            if sy < 0 || sy >= h as isize {
                                continue;
                            }
                            let sy = sy as usize;
                            for xx in 0..w {
                                let sx = xx as isize + kx as isize - 1;
                                if sx < 0 || sx >= w as isize {
                                    continue;
                                }
                                let g = go[y * w + xx];
                                let src = base + sy * w + sx as usize;
                                kacc = kacc + g * x[src];
                                if let Some(dx) = dx.as_deref_mut() {
                                    dx[src] = dx[src] + g * kv;
                                }
                            }
                        }
                        if let Some(dk) = dk.as_deref_mut() {
                            dk[kidx] = dk[kidx] + kacc;
                        }
                    }
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Prng;

    fn naive_matmul(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
        let mut c = vec![0.0; m * n];
        for i in 0..m {
            for j in 0..n {
                let mut acc = 0.0;
                for p in 0..k {
                    acc += a[i * k + p] * b[p * n + j];
                }
                c[i * n + j] = acc;
            }
        }
        c
    }

    fn random(len: usize, rng: &mut Prng) -> Vec<f64> {
        (0..len).map(|_| rng.uniform(-1.0, 1.0)).collect()
    }

    #[test]
    fn transposed_variants_agree_with_plain_product() {
        let mut rng = Prng::seed_from_u64(11);
        let (m, k, n) = (3, 4, 5);
        let a = random(m * k, &mut rng);
        let b = random(k * n, &mut rng);
        let expect = naive_matmul(&a, &b, m, k, n);

        // b transposed into [n×k]
        let mut bt = vec![0.0; n * k];
        for p in 0..k {
            for j in 0..n {
                bt[j * k + p] = b[p * n + j];
            }
        }
        let mut c = vec![0.0; m * n];
        matmul_nt_acc(&a, &bt, &mut c, m, k, n);
        assert_eq!(c, expect);

        // a transposed into [k×m]
        let mut at = vec![0.0; k * m];
        for i in 0..m {
            for p in 0..k {
                at[p * m + i] = a[i * k + p];
            }
        }
        let mut c = vec![0.0; m * n];
        matmul_tn_acc(&at, &b, &mut c, k, m, n);
        for (x, y) in c.iter().zip(&expect) {
            assert!((x - y).abs() < 1e-12);
        }
    }
}
