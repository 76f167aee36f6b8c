use crate::error::{Error, Result};
use crate::tensor::{Prng, Tensor};

fn split_dims(shape: &[usize]) -> Result<(usize, usize, usize)> {
    match *shape {
        [h, w] => Ok((1, h, w)),
        [c, h, w] => Ok((c, h, w)),
        _ => Err(Error::dim(format!("expected [h, w] or [c, h, w], got {shape:?}"))),
    }
}

fn out_shape(shape: &[usize], h: usize, w: usize) -> Vec<usize> {
    let mut s = shape.to_vec();
    let n = s.len();
    s[n - 2] = h;
    s[n - 1] = w;
    s
}

/// Source coordinate sampled by output index `dst` under half-pixel centers.
fn sample_coord(dst: usize, src_len: usize, dst_len: usize) -> (usize, usize, f64) {
    let scale = src_len as f64 / dst_len as f64;
    let pos = ((dst as f64 + 0.5) * scale - 0.5).clamp(0.0, (src_len - 1) as f64);
    let i0 = pos.floor() as usize;
    let i1 = (i0 + 1).min(src_len - 1);
    (i0, i1, pos - i0 as f64)
}

/// `a + t (b - a)`, kept inside `[min(a, b), max(a, b)]`.
fn lerp(a: f64, b: f64, t: f64) -> f64 {
    let v = a + t * (b - a);
    v.clamp(a.min(b), a.max(b))
}

/// Bilinear resize of a `[h, w]` or `[c, h, w]` image with half-pixel
/// centers (no corner alignment). Same-size resizing returns the input bits.
pub fn resize_bilinear(img: &Tensor<f64>, h: usize, w: usize) -> Result<Tensor<f64>> {
    if h == 0 || w == 0 {
        return Err(Error::dim(format!("resize target {h}x{w} has a zero extent")));
    }
    let (c, sh, sw) = split_dims(img.shape())?;
    let ys: Vec<_> = (0..h).map(|y| sample_coord(y, sh, h)).collect();
    let xs: Vec<_> = (0..w).map(|x| sample_coord(x, sw, w)).collect();
    let src = img.data();
    let mut out = Vec::with_capacity(c * h * w);
    for ch in 0..c {
        let plane = &src[ch * sh * sw..(ch + 1) * sh * sw];
        for &(y0, y1, ty) in &ys {
            for &(x0, x1, tx) in &xs {
                let top = lerp(plane[y0 * sw + x0], plane[y0 * sw + x1], tx);
                let bottom = lerp(plane[y1 * sw + x0], plane[y1 * sw + x1], tx);
                out.push(lerp(top, bottom, ty));
            }
        }
    }
    Tensor::new(&out_shape(img.shape(), h, w), out)
}

/// Nearest-neighbour resize with the same half-pixel convention.
pub fn resize_nearest(img: &Tensor<f64>, h: usize, w: usize) -> Result<Tensor<f64>> {
    if h == 0 || w == 0 {
        return Err(Error::dim(format!("resize target {h}x{w} has a zero extent")));
    }
    let (c, sh, sw) = split_dims(img.shape())?;
    let pick = |dst: usize, src_len: usize, dst_len: usize| {
        let pos = (dst as f64 + 0.5) * src_len as f64 / dst_len as f64;
        (pos.floor() as usize).min(src_len - 1)
    };
    let src = img.data();
    let mut out = Vec::with_capacity(c * h * w);
    for ch in 0..c {
        for y in 0..h {
            let sy = pick(y, sh, h);
            for x in 0..w {
                out.push(src[(ch * sh + sy) * sw + pick(x, sw, w)]);
            }
        }
    }
    Tensor::new(&out_shape(img.shape(), h, w), out)
}

/// Mirror about the vertical axis.
pub fn hflip(img: &Tensor<f64>) -> Tensor<f64> {
    let w = img.last_dim();
    let mut data = img.data().to_vec();
    for row in data.chunks_mut(w) {
        row.reverse();
    }
    Tensor::new(img.shape(), data).expect("same shape")
}

/// Flips image and mask together with probability one half. The third
/// element reports whether the flip happened.
pub fn augment_hflip(
    img: &Tensor<f64>,
    mask: &Tensor<f64>,
    rng: &mut Prng,
) -> (Tensor<f64>, Tensor<f64>, bool) {
    if rng.bernoulli(0.5) {
        (hflip(img), hflip(mask), true)
    } else {
        (img.clone(), mask.clone(), false)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn identity_resize_is_bit_exact() {
        let mut rng = Prng::seed_from_u64(1);
        let img = Tensor::from_fn(&[3, 7, 5], |_| rng.next_f64());
        let out = resize_bilinear(&img, 7, 5).unwrap();
        assert!(out.bit_eq(&img));
    }

    #[test]
    fn constant_stays_constant() {
        let img = Tensor::full(&[2, 3, 4], 0.37);
        let out = resize_bilinear(&img, 9, 2).unwrap();
        assert!(out.data().iter().all(|&v| v == 0.37));
    }

    #[test]
    fn upsample_matches_hand_values() {
        // source centers sit at output coordinates 0.5 and 2.5; sampling
        // positions are -0.25, 0.25, 0.75, 1.25 clamped to [0, 1]
        let img = Tensor::new(&[2, 2], vec![1.0, 0.0, 0.0, 0.0]).unwrap();
        let out = resize_bilinear(&img, 4, 4).unwrap();
        let wt = [1.0, 0.75, 0.25, 0.0];
        for y in 0..4 {
            for x in 0..4 {
                assert!((out.at(&[y, x]) - wt[y] * wt[x]).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn zero_target_is_an_error() {
        let img = Tensor::full(&[2, 2], 1.0);
        assert!(matches!(resize_bilinear(&img, 0, 2), Err(Error::Dimension(_))));
    }

    #[test]
    fn nearest_keeps_binary_values() {
        let img = Tensor::new(&[2, 2], vec![1.0, 0.0, 0.0, 1.0]).unwrap();
        let out = resize_nearest(&img, 5, 3).unwrap();
        assert!(out.data().iter().all(|&v| v == 0.0 || v == 1.0));
    }

    #[test]
    fn double_flip_is_identity() {
        let img = Tensor::from_fn(&[3, 2, 5], |i| i as f64);
        assert!(hflip(&hflip(&img)).bit_eq(&img));
        assert_eq!(hflip(&img).at(&[1, 1, 0]), img.at(&[1, 1, 4]));
    }

    #[test]
    fn augmentation_is_joint_and_reproducible() {
        let img = Tensor::from_fn(&[3, 4, 4], |i| i as f64);
        let mask = Tensor::from_fn(&[4, 4], |i| if i % 4 == 0 { 1.0 } else { 0.0 });
        let mut a = Prng::seed_from_u64(3);
        let mut b = Prng::seed_from_u64(3);
        let mut flips = 0;
        for _ in 0..32 {
            let (i1, m1, f1) = augment_hflip(&img, &mask, &mut a);
            let (i2, m2, f2) = augment_hflip(&img, &mask, &mut b);
            assert_eq!(f1, f2);
            assert!(i1.bit_eq(&i2) && m1.bit_eq(&m2));
            assert_eq!(m1.sum(), mask.sum());
            if f1 {
                flips += 1;
                assert!(m1.bit_eq(&hflip(&mask)));
            }
        }
        assert!(flips > 0 && flips < 32);
    }

    proptest! {
        #[test]
        fn bilinear_stays_within_source_range(
            vals in proptest::collection::vec(0.0f64..1.0, 12),
            h in 1usize..10,
            w in 1usize..10,
        ) {
            let img = Tensor::new(&[3, 4], vals).unwrap();
            let out = resize_bilinear(&img, h, w).unwrap();
            prop_assert!(out.min() >= img.min());
            prop_assert!(out.max() <= img.max());
        }
    }
}
