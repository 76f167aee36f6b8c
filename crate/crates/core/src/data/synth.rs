//! Procedural stand-ins for camouflaged and salient object datasets.
//!
//! A sample is a value-noise texture with a blob-shaped target pasted on
//! top. The target's texture is a blend between a second draw of the
//! background texture and a contrasting color; `camo_similarity` sets the
//! blend weight, so high values give camouflaged targets and low values give
//! salient ones.

use serde::{Deserialize, Serialize};

use super::Task;
use crate::error::{Error, Result};
use crate::tensor::{Prng, Tensor};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub size: usize,
    pub seed: u64,
    pub mode: Task,
    /// Target area as a fraction of the image, `[lo, hi]`.
    pub object_scale_range: (f64, f64),
    pub texture_octaves: usize,
    pub camo_similarity: f64,
}

impl SynthConfig {
    pub fn new(mode: Task, size: usize, seed: u64) -> Self {
        SynthConfig {
            size,
            seed,
            mode,
            object_scale_range: (0.01, 0.3),
            texture_octaves: 4,
            camo_similarity: match mode {
                Task::Cod => 0.9,
                Task::Sod => 0.1,
            },
        }
    }

    pub fn validate(&self) -> Result<()> {
        let (lo, hi) = self.object_scale_range;
        if !(0.0 < lo && lo <= hi && hi < 1.0) {
            return Err(Error::contract(format!(
                "object_scale_range ({lo}, {hi}) must lie within (0, 1)"
            )));
        }
        if !(0.0..=1.0).contains(&self.camo_similarity) {
            return Err(Error::contract("camo_similarity must lie in [0, 1]"));
        }
        if self.size < 4 || self.texture_octaves == 0 {
            return Err(Error::contract("size must be >= 4 and texture_octaves >= 1"));
        }
        Ok(())
    }
}

/// Multi-octave lattice value noise in [0, 1].
pub struct ValueNoise {
    seed: u64,
    octaves: usize,
    base_cells: f64,
}

fn hash2(seed: u64, octave: u64, x: i64, y: i64) -> f64 {
    let mut h = seed ^ octave.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    h ^= (x as u64).wrapping_mul(0xC2B2_AE3D_27D4_EB4F);
    h = h.rotate_left(31).wrapping_mul(0x1656_67B1_9E37_79F9);
    h ^= (y as u64).wrapping_mul(0xD6E8_FEB8_6659_FD93);
    h ^= h >> 32;
    h = h.wrapping_mul(0xD6E8_FEB8_6659_FD93);
    h ^= h >> 32;
    (h >> 11) as f64 / (1u64 << 53) as f64
}

fn smoothstep(t: f64) -> f64 {
    t * t * (3.0 - 2.0 * t)
}

impl ValueNoise {
    pub fn new(seed: u64, octaves: usize, base_cells: f64) -> Self {
        ValueNoise {
            seed,
            octaves,
            base_cells,
        }
    }

    /// Noise at normalized coordinates `(u, v)` in `[0, 1)`.
    pub fn sample(&self, u: f64, v: f64) -> f64 {
        let mut total = 0.0;
        let mut amp = 1.0;
        let mut norm = 0.0;
        let mut freq = self.base_cells;
        for o in 0..self.octaves {
            let (x, y) = (u * freq, v * freq);
            let (x0, y0) = (x.floor(), y.floor());
            let (tx, ty) = (smoothstep(x - x0), smoothstep(y - y0));
            let (ix, iy) = (x0 as i64, y0 as i64);
            let o = o as u64;
            let a = hash2(self.seed, o, ix, iy);
            let b = hash2(self.seed, o, ix + 1, iy);
            let c = hash2(self.seed, o, ix, iy + 1);
            let d = hash2(self.seed, o, ix + 1, iy + 1);
            let top = a + (b - a) * tx;
            let bottom = c + (d - c) * tx;
            total += amp * (top + (bottom - top) * ty);
            norm += amp;
            amp *= 0.5;
            freq *= 2.0;
        }
        total / norm
    }
}

struct Ellipse {
    ox: f64,
    oy: f64,
    rx: f64,
    ry: f64,
    cos: f64,
    sin: f64,
}

struct Blob {
    cx: f64,
    cy: f64,
    parts: Vec<Ellipse>,
}

impl Blob {
    fn random(size: usize, rng: &mut Prng) -> Self {
        let n = 3 + rng.below(5) as usize;
        let parts = (0..n)
            .map(|_| {
                let rx = rng.uniform(0.5, 1.0);
                let ry = rng.uniform(0.5, 1.0);
                let theta = rng.uniform(0.0, std::f64::consts::PI);
                // offsets small enough that every ellipse contains the blob
                // center, which keeps the union star-shaped
                let reach = 0.4 * rx.min(ry);
                let phi = rng.uniform(0.0, std::f64::consts::TAU);
                let r = reach * rng.next_f64();
                Ellipse {
                    ox: r * phi.cos(),
                    oy: r * phi.sin(),
                    rx,
                    ry,
                    cos: theta.cos(),
                    sin: theta.sin(),
                }
            })
            .collect();
        let s = size as f64;
        Blob {
            cx: rng.uniform(0.35, 0.65) * s,
            cy: rng.uniform(0.35, 0.65) * s,
            parts,
        }
    }

    fn contains(&self, px: f64, py: f64, scale: f64) -> bool {
        let (u, v) = ((px - self.cx) / scale, (py - self.cy) / scale);
        self.parts.iter().any(|e| {
            let (du, dv) = (u - e.ox, v - e.oy);
            let a = du * e.cos + dv * e.sin;
            let b = -du * e.sin + dv * e.cos;
            (a / e.rx).powi(2) + (b / e.ry).powi(2) <= 1.0
        })
    }

    fn rasterize(&self, size: usize, scale: f64) -> Vec<bool> {
        let mut m = Vec::with_capacity(size * size);
        for y in 0..size {
            for x in 0..size {
                m.push(self.contains(x as f64 + 0.5, y as f64 + 0.5, scale));
            }
        }
        m
    }
}

/// Smallest blob scale whose raster covers at least `target` of the image.
/// Coverage is monotone in the scale because the blob is star-shaped.
fn fit_scale(blob: &Blob, size: usize, target: f64) -> Vec<bool> {
    let total = (size * size) as f64;
    let frac = |m: &[bool]| m.iter().filter(|&&b| b).count() as f64 / total;
    let (mut lo, mut hi) = (0.0, 2.0 * size as f64);
    for _ in 0..48 {
        let mid = 0.5 * (lo + hi);
        if frac(&blob.rasterize(size, mid)) >= target {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    blob.rasterize(size, hi)
}

fn texture(noise: &ValueNoise, base: [f64; 3], amp: f64, size: usize, channel_shift: f64) -> Vec<f64> {
    let mut out = vec![0.0; 3 * size * size];
    for c in 0..3 {
        for y in 0..size {
            for x in 0..size {
                let u = (x as f64 + 0.5) / size as f64;
                let v = (y as f64 + 0.5) / size as f64;
                let n = noise.sample(u + channel_shift * c as f64, v + 0.37 * c as f64);
                out[(c * size + y) * size + x] = (base[c] + amp * (n - 0.5)).clamp(0.0, 1.0);
            }
        }
    }
    out
}

/// One RGB image `[3, size, size]` and its binary mask `[size, size]`.
/// The result is a pure function of `(cfg, index)`.
pub fn generate_sample(cfg: &SynthConfig, index: usize) -> Result<(Tensor<f64>, Tensor<f64>)> {
    cfg.validate()?;
    let size = cfg.size;
    let mut rng = Prng::derive(cfg.seed, &format!("synth/{index}"));

    let base = [
        rng.uniform(0.25, 0.75),
        rng.uniform(0.25, 0.75),
        rng.uniform(0.25, 0.75),
    ];
    let amp = 0.6;
    let bg_noise = ValueNoise::new(rng.next_u64(), cfg.texture_octaves, 4.0);
    let camo_noise = ValueNoise::new(rng.next_u64(), cfg.texture_octaves, 4.0);
    let fill_noise = ValueNoise::new(rng.next_u64(), cfg.texture_octaves, 3.0);
    let contrast = base.map(|b| if b < 0.5 { b + 0.45 } else { b - 0.45 });

    let bg = texture(&bg_noise, base, amp, size, 0.13);
    let camo = texture(&camo_noise, base, amp, size, 0.29);
    let salient = texture(&fill_noise, contrast, 0.2, size, 0.41);

    let (lo, hi) = cfg.object_scale_range;
    let margin = 0.1 * (hi - lo);
    let target = rng.uniform(lo + margin, hi - margin);
    let blob = Blob::random(size, &mut rng);
    let inside = fit_scale(&blob, size, target);

    let s = cfg.camo_similarity;
    let plane = size * size;
    let mut img = bg;
    for c in 0..3 {
        for (i, &m) in inside.iter().enumerate() {
            if m {
                let k = c * plane + i;
                img[k] = s * camo[k] + (1.0 - s) * salient[k];
            }
        }
    }
    let mask = inside.iter().map(|&m| if m { 1.0 } else { 0.0 }).collect();
    Ok((
        Tensor::new(&[3, size, size], img)?,
        Tensor::new(&[size, size], mask)?,
    ))
}
