//! Per-pixel reference implementations of the evaluation metrics, written
//! independently of the library code paths.

use senet_core::tensor::{Prng, Tensor};

pub fn random_pair(rng: &mut Prng) -> (Tensor<f64>, Tensor<f64>) {
    let density = rng.uniform(0.05, 0.6);
    let mut gt = Tensor::from_fn(&[8, 8], |_| if rng.bernoulli(density) { 1.0 } else { 0.0 });
    if gt.sum() == 0.0 {
        gt.data_mut()[rng.below(64) as usize] = 1.0;
    }
    let pred = match rng.below(3) {
        // quantized so thresholds land exactly on values
        0 => Tensor::from_fn(&[8, 8], |_| rng.below(256) as f64 / 255.0),
        1 => {
            let gd = gt.data().to_vec();
            Tensor::from_fn(&[8, 8], |i| (gd[i] * 0.6 + 0.2 + rng.uniform(-0.3, 0.3)).clamp(0.0, 1.0))
        }
        _ => Tensor::from_fn(&[8, 8], |_| rng.next_f64()),
    };
    (pred, gt)
}

pub fn oracle_mae(p: &[f64], g: &[f64]) -> f64 {
    let mut s = 0.0;
    for i in 0..p.len() {
        s += (p[i] - g[i]).abs();
    }
    s / p.len() as f64
}

pub fn oracle_max_f(p: &[f64], g: &[f64]) -> f64 {
    let mut best: f64 = 0.0;
    for t in 0..256 {
        let th = t as f64 / 255.0;
        let (mut tp, mut fp, mut fnn) = (0.0, 0.0, 0.0);
        for i in 0..p.len() {
            let b = p[i] > th;
            if b && g[i] == 1.0 {
                tp += 1.0;
            } else if b {
                fp += 1.0;
            } else if g[i] == 1.0 {
                fnn += 1.0;
            }
        }
        let prec = if tp + fp > 0.0 { tp / (tp + fp) } else { 0.0 };
        let rec = tp / (tp + fnn);
        let f = if prec + rec > 0.0 { 1.3 * prec * rec / (0.3 * prec + rec) } else { 0.0 };
        best = best.max(f);
    }
    best
}

pub fn oracle_e(p: &[f64], g: &[f64]) -> f64 {
    let n = p.len() as f64;
    let mut total = 0.0;
    for t in 0..256 {
        let th = t as f64 / 255.0;
        let fm: Vec<f64> = p.iter().map(|&v| if v > th { 1.0 } else { 0.0 }).collect();
        let sg: f64 = g.iter().sum();
        let mut sum = 0.0;
        if sg == 0.0 {
            for v in &fm {
                sum += 1.0 - v;
            }
        } else if sg == n {
            for v in &fm {
                sum += v;
            }
        } else {
            let mf = fm.iter().sum::<f64>() / n;
            let mg = sg / n;
            for i in 0..p.len() {
                let a = fm[i] - mf;
                let b = g[i] - mg;
                let xi = 2.0 * a * b / (a * a + b * b + f64::EPSILON);
                sum += (xi + 1.0) * (xi + 1.0) / 4.0;
            }
        }
        total += sum / n;
    }
    total / 256.0
}

pub fn oracle_wf(p: &[f64], g: &[f64], h: usize, w: usize) -> f64 {
    let n = h * w;
    let e: Vec<f64> = (0..n).map(|i| (p[i] - g[i]).abs()).collect();
    // brute-force nearest foreground, first in row-major order on ties
    let mut dist = vec![0.0; n];
    let mut et = e.clone();
    for i in 0..n {
        if g[i] == 1.0 {
            continue;
        }
        let (y, x) = ((i / w) as i64, (i % w) as i64);
        let mut best = i64::MAX;
        let mut arg = 0;
        for j in 0..n {
            if g[j] == 1.0 {
                let (yj, xj) = ((j / w) as i64, (j % w) as i64);
                let d = (y - yj).pow(2) + (x - xj).pow(2);
                if d < best {
                    best = d;
                    arg = j;
                }
            }
        }
        dist[i] = (best as f64).sqrt();
        et[i] = e[arg];
    }
    let mut kern = [[0.0; 7]; 7];
    let mut ks = 0.0;
    for (a, row) in kern.iter_mut().enumerate() {
        for (b, v) in row.iter_mut().enumerate() {
            let (dy, dx) = (a as f64 - 3.0, b as f64 - 3.0);
            *v = (-(dy * dy + dx * dx) / 50.0).exp();
            ks += *v;
        }
    }
    let mut ew = vec![0.0; n];
    for i in 0..n {
        let (y, x) = ((i / w) as i64, (i % w) as i64);
        let mut ea = 0.0;
        for (a, row) in kern.iter().enumerate() {
            for (b, v) in row.iter().enumerate() {
                let yy = (y + a as i64 - 3).clamp(0, h as i64 - 1);
                let xx = (x + b as i64 - 3).clamp(0, w as i64 - 1);
                ea += v / ks * et[(yy * w as i64 + xx) as usize];
            }
        }
        ew[i] = if g[i] == 1.0 {
            e[i].min(ea)
        } else {
            e[i] * (2.0 - (0.5f64.ln() / 5.0 * dist[i]).exp())
        };
    }
    let nfg: f64 = g.iter().sum();
    let fg_sum: f64 = (0..n).filter(|&i| g[i] == 1.0).map(|i| ew[i]).sum();
    let bg_sum: f64 = (0..n).filter(|&i| g[i] == 0.0).map(|i| ew[i]).sum();
    let tpw = nfg - fg_sum;
    let r = 1.0 - fg_sum / nfg;
    let pr = tpw / (f64::EPSILON + tpw + bg_sum);
    2.0 * r * pr / (f64::EPSILON + r + pr)
}

pub fn oracle_ssim(p: &[f64], g: &[f64]) -> f64 {
    let n = p.len() as f64;
    let x = p.iter().sum::<f64>() / n;
    let y = g.iter().sum::<f64>() / n;
    let sx = p.iter().map(|v| (v - x).powi(2)).sum::<f64>() / (n - 1.0 + f64::EPSILON);
    let sy = g.iter().map(|v| (v - y).powi(2)).sum::<f64>() / (n - 1.0 + f64::EPSILON);
    let sxy = p.iter().zip(g).map(|(a, b)| (a - x) * (b - y)).sum::<f64>() / (n - 1.0 + f64::EPSILON);
    let al = 4.0 * x * y * sxy;
    let be = (x * x + y * y) * (sx + sy);
    if al != 0.0 {
        al / (be + f64::EPSILON)
    } else if be == 0.0 {
        1.0
    } else {
        0.0
    }
}

pub fn oracle_s(p: &[f64], g: &[f64], h: usize, w: usize) -> f64 {
    let n = (h * w) as f64;
    let mg = g.iter().sum::<f64>() / n;
    if mg == 0.0 {
        return 1.0 - p.iter().sum::<f64>() / n;
    }
    if mg == 1.0 {
        return p.iter().sum::<f64>() / n;
    }
    let obj = |vals: Vec<f64>| {
        let k = vals.len() as f64;
        let m = vals.iter().sum::<f64>() / k;
        let sd = if vals.len() > 1 {
            (vals.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (k - 1.0)).sqrt()
        } else {
            0.0
        };
        2.0 * m / (m * m + 1.0 + sd + f64::EPSILON)
    };
    let fgv = (0..h * w).filter(|&i| g[i] == 1.0).map(|i| p[i]).collect();
    let bgv = (0..h * w).filter(|&i| g[i] == 0.0).map(|i| 1.0 - p[i]).collect();
    let so = mg * obj(fgv) + (1.0 - mg) * obj(bgv);
    // 1-based centroid as in the reference implementation
    let total: f64 = g.iter().sum();
    let mut xs = 0.0;
    let mut ys = 0.0;
    for y in 1..=h {
        for x in 1..=w {
            xs += x as f64 * g[(y - 1) * w + x - 1];
            ys += y as f64 * g[(y - 1) * w + x - 1];
        }
    }
    let cx = (xs / total).round() as usize;
    let cy = (ys / total).round() as usize;
    let quad = |y0: usize, y1: usize, x0: usize, x1: usize| -> f64 {
        if y1 <= y0 || x1 <= x0 {
            return 0.0;
        }
        let mut a = vec![];
        let mut b = vec![];
        for y in y0..y1 {
            for x in x0..x1 {
                a.push(p[y * w + x]);
                b.push(g[y * w + x]);
            }
        }
        (a.len() as f64 / n) * oracle_ssim(&a, &b)
    };
    let sr = quad(0, cy, 0, cx) + quad(0, cy, cx, w) + quad(cy, h, 0, cx) + quad(cy, h, cx, w);
    (0.5 * so + 0.5 * sr).max(0.0)
}

