//! Binary segmentation metrics: MAE, max F-measure, weighted F-measure,
//! S-measure, mean E-measure and their sum-based score.
//!
//! Predictions are maps in `[0, 1]`; ground truths are binarized at 0.5.
//! Threshold sweeps use the 256 levels `t / 255` and count a pixel as
//! positive when `pred > t / 255`.

use serde::{Deserialize, Serialize};

use crate::data::Task;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

const EPS: f64 = f64::EPSILON;
const THRESHOLDS: usize = 256;

fn extents(pred: &Tensor<f64>, gt: &Tensor<f64>) -> Result<(usize, usize)> {
    match (pred.shape(), gt.shape()) {
        (&[h, w], &[gh, gw]) if h == gh && w == gw => Ok((h, w)),
        (p, g) => Err(Error::dim(format!("prediction {p:?} and ground truth {g:?} differ"))),
    }
}

fn binary(gt: &Tensor<f64>) -> Vec<bool> {
    gt.data().iter().map(|&v| v > 0.5).collect()
}

/// Number of thresholds `t` in `0..256` with `p > t / 255`.
fn levels_above(p: f64) -> usize {
    let mut k = ((p * 255.0).floor().max(0.0) as usize).min(THRESHOLDS);
    while k > 0 && !(p > (k - 1) as f64 / 255.0) {
        k -= 1;
    }
    while k < THRESHOLDS && p > k as f64 / 255.0 {
        k += 1;
    }
    k
}

/// Per threshold: (predicted positives, true positives).
fn threshold_counts(pred: &Tensor<f64>, gt: &[bool]) -> Vec<(usize, usize)> {
    let mut hist_all = [0usize; THRESHOLDS + 1];
    let mut hist_fg = [0usize; THRESHOLDS + 1];
    for (&p, &g) in pred.data().iter().zip(gt) {
        let k = levels_above(p);
        hist_all[k] += 1;
        if g {
            hist_fg[k] += 1;
        }
    }
    // a pixel at level k is positive for thresholds 0..k
    let mut out = vec![(0, 0); THRESHOLDS];
    let (mut all, mut fg) = (0, 0);
    for t in (0..THRESHOLDS).rev() {
        all += hist_all[t + 1];
        fg += hist_fg[t + 1];
        out[t] = (all, fg);
    }
    out
}

pub fn mae(pred: &Tensor<f64>, gt: &Tensor<f64>) -> Result<f64> {
    extents(pred, gt)?;
    let g = binary(gt);
    let total: f64 = pred
        .data()
        .iter()
        .zip(&g)
        .map(|(&p, &b)| (p - if b { 1.0 } else { 0.0 }).abs())
        .sum();
    Ok(total / g.len() as f64)
}

fn f_beta(precision: f64, recall: f64, beta2: f64) -> f64 {
    if precision + recall == 0.0 {
        0.0
    } else {
        (1.0 + beta2) * precision * recall / (beta2 * precision + recall)
    }
}

/// F-measure (beta² = 0.3) at each of the 256 thresholds.
pub fn f_measure_curve(pred: &Tensor<f64>, gt: &Tensor<f64>) -> Result<Vec<f64>> {
    extents(pred, gt)?;
    let g = binary(gt);
    let n_fg = g.iter().filter(|&&b| b).count();
    if n_fg == 0 {
        return Err(Error::DegenerateTarget("F-measure needs a foreground pixel".into()));
    }
    Ok(threshold_counts(pred, &g)
        .into_iter()
        .map(|(pos, tp)| {
            let precision = if pos == 0 { 0.0 } else { tp as f64 / pos as f64 };
            f_beta(precision, tp as f64 / n_fg as f64, 0.3)
        })
        .collect())
}

pub fn f_measure_max(pred: &Tensor<f64>, gt: &Tensor<f64>) -> Result<f64> {
    Ok(f_measure_curve(pred, gt)?.into_iter().fold(0.0, f64::max))
}

/// Squared distance to, and flat index of, the nearest foreground pixel.
/// Ties go to the smallest row-major index.
fn nearest_foreground(fg: &[bool], h: usize, w: usize) -> Vec<(usize, usize)> {
    // per column: for each row, the nearest foreground row (upper wins ties)
    let mut col_near = vec![None::<usize>; h * w];
    for x in 0..w {
        let mut last = None;
        for y in 0..h {
            if fg[y * w + x] {
                last = Some(y);
            }
            col_near[y * w + x] = last;
        }
        let mut next = None;
        for y in (0..h).rev() {
            if fg[y * w + x] {
                next = Some(y);
            }
            let best = match (col_near[y * w + x], next) {
                (Some(u), Some(d)) => Some(if y - u <= d - y { u } else { d }),
                (a, b) => a.or(b),
            };
            col_near[y * w + x] = best;
        }
    }
    let mut out = vec![(usize::MAX, usize::MAX); h * w];
    for y in 0..h {
        for x in 0..w {
            let mut best = (usize::MAX, usize::MAX);
            for xc in 0..w {
                if let Some(yc) = col_near[y * w + xc] {
                    let d = y.abs_diff(yc).pow(2) + x.abs_diff(xc).pow(2);
                    let idx = yc * w + xc;
                    if d < best.0 || (d == best.0 && idx < best.1) {
                        best = (d, idx);
                    }
                }
            }
            out[y * w + x] = best;
        }
    }
    out
}

fn gaussian_kernel(size: usize, sigma: f64) -> Vec<f64> {
    let r = (size / 2) as f64;
    let mut k: Vec<f64> = (0..size * size)
        .map(|i| {
            let (y, x) = ((i / size) as f64 - r, (i % size) as f64 - r);
            (-(x * x + y * y) / (2.0 * sigma * sigma)).exp()
        })
        .collect();
    let s: f64 = k.iter().sum();
    k.iter_mut().for_each(|v| *v /= s);
    k
}

/// Weighted F-measure (beta² = 1).
///
/// Errors `|pred - gt|` on background pixels are replaced by the error at the
/// nearest foreground pixel, smoothed with a 7×7 Gaussian (sigma 5,
/// border pixels replicated), the smaller of raw and smoothed error is kept
/// on foreground, and background errors grow with distance by
/// `2 - exp(ln(0.5) / 5 * d)`.
pub fn f_measure_weighted(pred: &Tensor<f64>, gt: &Tensor<f64>) -> Result<f64> {
    let (h, w) = extents(pred, gt)?;
    let g = binary(gt);
    if !g.iter().any(|&b| b) {
        return Err(Error::DegenerateTarget("weighted F-measure needs a foreground pixel".into()));
    }
    let p = pred.data();
    let err: Vec<f64> = (0..h * w)
        .map(|i| (p[i] - if g[i] { 1.0 } else { 0.0 }).abs())
        .collect();
    let near = nearest_foreground(&g, h, w);
    let et: Vec<f64> = (0..h * w)
        .map(|i| if g[i] { err[i] } else { err[near[i].1] })
        .collect();

    let k = gaussian_kernel(7, 5.0);
    let mut ea = vec![0.0; h * w];
    for y in 0..h {
        for x in 0..w {
            let mut acc = 0.0;
            for ky in 0..7 {
                for kx in 0..7 {
                    let yy = (y + ky).saturating_sub(3).min(h - 1);
                    let xx = (x + kx).saturating_sub(3).min(w - 1);
                    acc += k[ky * 7 + kx] * et[yy * w + xx];
                }
            }
            ea[y * w + x] = acc;
        }
    }

    let decay = 0.5f64.ln() / 5.0;
    let (mut fg_err, mut bg_err, mut n_fg) = (0.0, 0.0, 0usize);
    for i in 0..h * w {
        if g[i] {
            fg_err += if ea[i] < err[i] { ea[i] } else { err[i] };
            n_fg += 1;
        } else {
            let dist = (near[i].0 as f64).sqrt();
            bg_err += err[i] * (2.0 - (decay * dist).exp());
        }
    }
    let tp = n_fg as f64 - fg_err;
    let recall = 1.0 - fg_err / n_fg as f64;
    let precision = tp / (EPS + tp + bg_err);
    Ok(2.0 * recall * precision / (EPS + recall + precision))
}

fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

fn s_object(values: &[f64]) -> f64 {
    let (x, sigma) = mean_std(values);
    2.0 * x / (x * x + 1.0 + sigma + EPS)
}

fn ssim(pred: &[f64], gt: &[f64]) -> f64 {
    let n = pred.len() as f64;
    let x = pred.iter().sum::<f64>() / n;
    let y = gt.iter().sum::<f64>() / n;
    let (mut sxx, mut syy, mut sxy) = (0.0, 0.0, 0.0);
    for (&p, &g) in pred.iter().zip(gt) {
        sxx += (p - x) * (p - x);
        syy += (g - y) * (g - y);
        sxy += (p - x) * (g - y);
    }
    let d = n - 1.0 + EPS;
    let (sxx, syy, sxy) = (sxx / d, syy / d, sxy / d);
    let alpha = 4.0 * x * y * sxy;
    let beta = (x * x + y * y) * (sxx + syy);
    if alpha != 0.0 {
        alpha / (beta + EPS)
    } else if beta == 0.0 {
        1.0
    } else {
        0.0
    }
}

fn round_half_away(v: f64) -> usize {
    v.round() as usize
}

/// Structure measure with equal object and region weights.
pub fn s_measure(pred: &Tensor<f64>, gt: &Tensor<f64>) -> Result<f64> {
    let (h, w) = extents(pred, gt)?;
    let g = binary(gt);
    let p = pred.data();
    let n_fg = g.iter().filter(|&&b| b).count();
    if n_fg == 0 {
        return Ok(1.0 - pred.mean());
    }
    if n_fg == h * w {
        return Ok(pred.mean());
    }
    let mu = n_fg as f64 / (h * w) as f64;

    let fg: Vec<f64> = (0..h * w).filter(|&i| g[i]).map(|i| p[i]).collect();
    let bg: Vec<f64> = (0..h * w).filter(|&i| !g[i]).map(|i| 1.0 - p[i]).collect();
    let object = mu * s_object(&fg) + (1.0 - mu) * s_object(&bg);

    // centroid, 1-based, splits rows 0..cy and columns 0..cx into the top-left
    let (mut sy, mut sx) = (0.0, 0.0);
    for i in 0..h * w {
        if g[i] {
            sy += (i / w) as f64;
            sx += (i % w) as f64;
        }
    }
    let cy = round_half_away(sy / n_fg as f64) + 1;
    let cx = round_half_away(sx / n_fg as f64) + 1;
    let gf: Vec<f64> = g.iter().map(|&b| if b { 1.0 } else { 0.0 }).collect();
    let area = (h * w) as f64;
    let mut region = 0.0;
    for (ys, xs) in [(0..cy, 0..cx), (0..cy, cx..w), (cy..h, 0..cx), (cy..h, cx..w)] {
        let mut qp = Vec::new();
        let mut qg = Vec::new();
        for y in ys.clone() {
            for x in xs.clone() {
                qp.push(p[y * w + x]);
                qg.push(gf[y * w + x]);
            }
        }
        if !qp.is_empty() {
            region += qp.len() as f64 / area * ssim(&qp, &qg);
        }
    }
    Ok((0.5 * object + 0.5 * region).max(0.0))
}

/// E-measure of one binarized prediction, averaged over all pixels.
fn e_measure_binary(n: usize, n_gt: usize, n_pred: usize, n_both: usize) -> f64 {
    let nf = n as f64;
    if n_gt == 0 {
        return (n - n_pred) as f64 / nf;
    }
    if n_gt == n {
        return n_pred as f64 / nf;
    }
    let mu_p = n_pred as f64 / nf;
    let mu_g = n_gt as f64 / nf;
    let enhanced = |p: f64, g: f64| {
        let (ap, ag) = (p - mu_p, g - mu_g);
        let xi = 2.0 * ap * ag / (ag * ag + ap * ap + EPS);
        (xi + 1.0).powi(2) / 4.0
    };
    let both = n_both;
    let only_p = n_pred - n_both;
    let only_g = n_gt - n_both;
    let none = n - both - only_p - only_g;
    (both as f64 * enhanced(1.0, 1.0)
        + only_p as f64 * enhanced(1.0, 0.0)
        + only_g as f64 * enhanced(0.0, 1.0)
        + none as f64 * enhanced(0.0, 0.0))
        / nf
}

/// E-measure at each of the 256 thresholds.
pub fn e_measure_curve(pred: &Tensor<f64>, gt: &Tensor<f64>) -> Result<Vec<f64>> {
    extents(pred, gt)?;
    let g = binary(gt);
    let n = g.len();
    let n_gt = g.iter().filter(|&&b| b).count();
    Ok(threshold_counts(pred, &g)
        .into_iter()
        .map(|(pos, tp)| e_measure_binary(n, n_gt, pos, tp))
        .collect())
}

pub fn e_measure_mean(pred: &Tensor<f64>, gt: &Tensor<f64>) -> Result<f64> {
    let curve = e_measure_curve(pred, gt)?;
    Ok(curve.iter().sum::<f64>() / curve.len() as f64)
}

/// `s + e + f + (1 - mae)`.
pub fn score(s: f64, e: f64, f: f64, mae: f64) -> f64 {
    s + e + f + (1.0 - mae)
}

/// All metrics for one image.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ImageMetrics {
    pub name: String,
    pub s_alpha: f64,
    pub e_phi: f64,
    pub f_beta_w: f64,
    pub f_beta_m: f64,
    pub mae: f64,
    /// Ground truth without foreground; both F values are then reported as 0.
    pub degenerate: bool,
}

pub fn image_metrics(name: &str, pred: &Tensor<f64>, gt: &Tensor<f64>) -> Result<ImageMetrics> {
    let or_zero = |r: Result<f64>| match r {
        Ok(v) => Ok(v),
        Err(Error::DegenerateTarget(_)) => Ok(0.0),
        Err(e) => Err(e),
    };
    let degenerate = !gt.data().iter().any(|&v| v > 0.5);
    Ok(ImageMetrics {
        name: name.to_string(),
        s_alpha: s_measure(pred, gt)?,
        e_phi: e_measure_mean(pred, gt)?,
        f_beta_w: or_zero(f_measure_weighted(pred, gt))?,
        f_beta_m: or_zero(f_measure_max(pred, gt))?,
        mae: mae(pred, gt)?,
        degenerate,
    })
}

/// Dataset means in image order. `f_beta` is the weighted F-measure for
/// camouflaged data and the max F-measure for salient data.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub dataset: String,
    pub task: Task,
    pub s_alpha: f64,
    pub e_phi: f64,
    pub f_beta_w: f64,
    pub f_beta_m: f64,
    pub f_beta: f64,
    pub mae: f64,
    pub score: f64,
    pub degenerate: usize,
    pub images: Vec<ImageMetrics>,
}

impl MetricsReport {
    pub fn from_images(dataset: &str, task: Task, images: Vec<ImageMetrics>) -> Result<Self> {
        if images.is_empty() {
            return Err(Error::contract("metrics report over zero images"));
        }
        let n = images.len() as f64;
        let mean = |f: fn(&ImageMetrics) -> f64| images.iter().map(f).sum::<f64>() / n;
        let (s_alpha, e_phi) = (mean(|m| m.s_alpha), mean(|m| m.e_phi));
        let (f_beta_w, f_beta_m, mae) = (mean(|m| m.f_beta_w), mean(|m| m.f_beta_m), mean(|m| m.mae));
        let f_beta = match task {
            Task::Cod => f_beta_w,
            Task::Sod => f_beta_m,
        };
        Ok(MetricsReport {
            dataset: dataset.to_string(),
            task,
            s_alpha,
            e_phi,
            f_beta_w,
            f_beta_m,
            f_beta,
            mae,
            score: score(s_alpha, e_phi, f_beta, mae),
            degenerate: images.iter().filter(|m| m.degenerate).count(),
            images,
        })
    }
}
