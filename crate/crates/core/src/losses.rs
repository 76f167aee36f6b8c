//! Segmentation and reconstruction objectives.
//!
//! The segmentation loss is BCE plus IoU, both weighted per pixel. Pixels in
//! the boundary band of the (soft) target get weight
//! `alpha = l * S_img / S_obj`, so small objects have heavier boundaries;
//! every other pixel has weight one.

use serde::{Deserialize, Serialize};

use crate::data::{resize_bilinear, resize_nearest};
use crate::error::{Error, Result};
use crate::model::MaskPlan;
use crate::tensor::{Graph, Real, Tensor, Var};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ResizeMode {
    Nearest,
    Bilinear,
}

/// How per-pixel loss weights are produced.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Weighting {
    /// Size-adaptive boundary weights.
    Dynamic,
    /// All ones (plain BCE + IoU).
    Uniform,
    /// `1 + 5 |box31(gt) - gt|`, the pixel-position-aware baseline.
    PositionAware,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossConfig {
    /// Weight of the reconstruction term in the total loss.
    pub lambda: f64,
    pub l: f64,
    pub band_lo: f64,
    pub band_hi: f64,
    pub band_dilation: usize,
    pub bce_clamp_eps: f64,
    pub iou_smooth: f64,
    pub alpha_cap: f64,
    pub weighting: Weighting,
    pub gt_resize: ResizeMode,
}

impl Default for LossConfig {
    fn default() -> Self {
        LossConfig {
            lambda: 0.1,
            l: 1.0,
            band_lo: 0.01,
            band_hi: 0.99,
            band_dilation: 1,
            bce_clamp_eps: 1e-7,
            iou_smooth: 1.0,
            alpha_cap: 100.0,
            weighting: Weighting::Dynamic,
            gt_resize: ResizeMode::Bilinear,
        }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.lambda) {
            return Err(Error::contract(format!("lambda {} outside [0, 1]", self.lambda)));
        }
        if self.band_lo >= self.band_hi {
            return Err(Error::contract("band_lo must be below band_hi"));
        }
        if self.l < 0.0 || self.alpha_cap < 1.0 || self.bce_clamp_eps <= 0.0 {
            return Err(Error::contract("l >= 0, alpha_cap >= 1 and bce_clamp_eps > 0 required"));
        }
        Ok(())
    }
}

/// Target map in `[0, 1]` at training resolution.
#[derive(Clone, Debug)]
pub struct SoftGroundTruth {
    pub values: Tensor<f64>,
    pub source: ResizeMode,
}

/// Resizes a binary mask to `h × w`. Bilinear mode yields fractional values
/// along object boundaries; nearest mode keeps the mask hard. Inputs are
/// binarized at 0.5 first.
pub fn soft_gt(mask: &Tensor<f64>, h: usize, w: usize, mode: ResizeMode) -> Result<SoftGroundTruth> {
    if mask.ndim() != 2 {
        return Err(Error::dim(format!("mask must be [h, w], got {:?}", mask.shape())));
    }
    let hard = mask.map(|v| if v > 0.5 { 1.0 } else { 0.0 });
    let values = match mode {
        ResizeMode::Bilinear => resize_bilinear(&hard, h, w)?,
        ResizeMode::Nearest => resize_nearest(&hard, h, w)?,
    };
    Ok(SoftGroundTruth {
        values,
        source: mode,
    })
}

#[derive(Clone, Debug)]
pub struct WeightMatrix {
    pub values: Tensor<f64>,
    pub alpha: f64,
    pub l: f64,
    pub s_img: usize,
    pub s_obj: usize,
}

impl WeightMatrix {
    pub fn uniform(h: usize, w: usize) -> Self {
        WeightMatrix {
            values: Tensor::ones(&[h, w]),
            alpha: 1.0,
            l: 1.0,
            s_img: h * w,
            s_obj: 0,
        }
    }
}

fn dilate(band: &[bool], h: usize, w: usize, radius: usize) -> Vec<bool> {
    if radius == 0 {
        return band.to_vec();
    }
    let r = radius as isize;
    let mut out = vec![false; band.len()];
    for y in 0..h as isize {
        for x in 0..w as isize {
            let hit = (-r..=r).any(|dy| {
                (-r..=r).any(|dx| {
                    let (yy, xx) = (y + dy, x + dx);
                    yy >= 0
                        && xx >= 0
                        && yy < h as isize
                        && xx < w as isize
                        && band[(yy as usize) * w + xx as usize]
                })
            });
            out[y as usize * w + x as usize] = hit;
        }
    }
    out
}

/// Boundary-weighted matrix for one target. Fails when the target has no
/// pixel above 0.5.
pub fn weight_matrix(gt: &SoftGroundTruth, cfg: &LossConfig) -> Result<WeightMatrix> {
    let v = &gt.values;
    let (h, w) = match *v.shape() {
        [h, w] => (h, w),
        ref s => return Err(Error::dim(format!("target must be [h, w], got {s:?}"))),
    };
    let s_img = h * w;
    let s_obj = v.data().iter().filter(|&&x| x > 0.5).count();
    if s_obj == 0 {
        return Err(Error::DegenerateTarget("target has no foreground pixel".into()));
    }
    let alpha = (cfg.l * s_img as f64 / s_obj as f64).min(cfg.alpha_cap);
    let band: Vec<bool> = v
        .data()
        .iter()
        .map(|&x| cfg.band_lo < x && x < cfg.band_hi)
        .collect();
    let band = dilate(&band, h, w, cfg.band_dilation);
    let values = Tensor::new(&[h, w], band.iter().map(|&b| if b { alpha } else { 1.0 }).collect())?;
    Ok(WeightMatrix {
        values,
        alpha,
        l: cfg.l,
        s_img,
        s_obj,
    })
}

/// Pixel-position-aware weights `1 + 5 |mean_31x31(gt) - gt|`, zero padded.
pub fn position_aware_weights(gt: &SoftGroundTruth) -> Result<WeightMatrix> {
    let v = &gt.values;
    let (h, w) = match *v.shape() {
        [h, w] => (h, w),
        ref s => return Err(Error::dim(format!("target must be [h, w], got {s:?}"))),
    };
    // summed-area table for the box filter
    let mut sat = vec![0.0; (h + 1) * (w + 1)];
    for y in 0..h {
        for x in 0..w {
            sat[(y + 1) * (w + 1) + x + 1] = v.data()[y * w + x] + sat[y * (w + 1) + x + 1]
                + sat[(y + 1) * (w + 1) + x]
                - sat[y * (w + 1) + x];
        }
    }
    let r = 15isize;
    let mut out = vec![0.0; h * w];
    for y in 0..h as isize {
        for x in 0..w as isize {
            let y0 = (y - r).max(0) as usize;
            let y1 = ((y + r + 1).min(h as isize)) as usize;
            let x0 = (x - r).max(0) as usize;
            let x1 = ((x + r + 1).min(w as isize)) as usize;
            let s = sat[y1 * (w + 1) + x1] - sat[y0 * (w + 1) + x1] - sat[y1 * (w + 1) + x0]
                + sat[y0 * (w + 1) + x0];
            let i = y as usize * w + x as usize;
            out[i] = 1.0 + 5.0 * (s / 961.0 - v.data()[i]).abs();
        }
    }
    Ok(WeightMatrix {
        values: Tensor::new(&[h, w], out)?,
        alpha: f64::NAN,
        l: 0.0,
        s_img: h * w,
        s_obj: v.data().iter().filter(|&&x| x > 0.5).count(),
    })
}

/// Weights for `gt` under the configured scheme.
pub fn weights_for(gt: &SoftGroundTruth, cfg: &LossConfig) -> Result<WeightMatrix> {
    match cfg.weighting {
        Weighting::Dynamic => weight_matrix(gt, cfg),
        Weighting::Uniform => {
            let s = gt.values.shape();
            Ok(WeightMatrix::uniform(s[0], s[1]))
        }
        Weighting::PositionAware => position_aware_weights(gt),
    }
}

/// Weighted BCE (normalized by the weight sum) plus weighted soft IoU loss.
/// `pred` is an `[h, w]` node with values in `[0, 1]`.
pub fn dw_seg_loss<T: Real>(
    g: &mut Graph<T>,
    pred: Var,
    gt: &SoftGroundTruth,
    w: &WeightMatrix,
    cfg: &LossConfig,
) -> Result<Var> {
    if g.shape(pred) != gt.values.shape() || gt.values.shape() != w.values.shape() {
        return Err(Error::dim(format!(
            "prediction {:?}, target {:?} and weights {:?} must share extents",
            g.shape(pred),
            gt.values.shape(),
            w.values.shape()
        )));
    }
    let gv = g.constant(gt.values.cast());
    let wv = g.constant(w.values.cast());
    let w_total = w.values.sum();

    let bce = g.bce_map(pred, gv, T::of(cfg.bce_clamp_eps))?;
    let wbce = g.mul(bce, wv)?;
    let wbce = g.sum(wbce);
    let wbce = g.scale(wbce, T::of(1.0 / w_total));

    let pg = g.mul(pred, gv)?;
    let inter = g.mul(pg, wv)?;
    let inter = g.sum(inter);
    let union = g.add(pred, gv)?;
    let union = g.sub(union, pg)?;
    let union = g.mul(union, wv)?;
    let union = g.sum(union);
    let s = T::of(cfg.iou_smooth);
    let num = g.add_scalar(inter, s);
    let den = g.add_scalar(union, s);
    let ratio = g.div(num, den)?;
    let neg = g.scale(ratio, -T::one());
    let wiou = g.add_scalar(neg, T::one());

    g.add(wbce, wiou)
}

/// [`dw_seg_loss`] evaluated outside of training.
pub fn dw_seg_loss_value(
    pred: &Tensor<f64>,
    gt: &SoftGroundTruth,
    w: &WeightMatrix,
    cfg: &LossConfig,
) -> Result<f64> {
    let mut g = Graph::new();
    let p = g.constant(pred.clone());
    let l = dw_seg_loss(&mut g, p, gt, w, cfg)?;
    Ok(g.value(l).item())
}

/// Flat indices of every pixel that belongs to a masked patch, in patch order.
pub(crate) fn masked_pixel_indices(
    channels: usize,
    h: usize,
    w: usize,
    patch: usize,
    masked: &[usize],
) -> Vec<usize> {
    let grid_w = w / patch;
    let mut idx = Vec::with_capacity(masked.len() * channels * patch * patch);
    for &m in masked {
        let (pr, pc) = (m / grid_w, m % grid_w);
        for c in 0..channels {
            for y in pr * patch..(pr + 1) * patch {
                for x in pc * patch..(pc + 1) * patch {
                    idx.push((c * h + y) * w + x);
                }
            }
        }
    }
    idx
}

/// Mean squared error over the pixels of masked patches only. With nothing
/// masked the result is a constant zero.
pub fn recon_loss<T: Real>(
    g: &mut Graph<T>,
    recon: Var,
    image: &Tensor<f64>,
    plan: &MaskPlan,
    patch: usize,
) -> Result<Var> {
    let shape = image.shape().to_vec();
    if g.shape(recon) != shape.as_slice() {
        return Err(Error::dim(format!(
            "reconstruction {:?} vs image {shape:?}",
            g.shape(recon)
        )));
    }
    let (c, h, w) = match *shape {
        [c, h, w] => (c, h, w),
        _ => return Err(Error::dim(format!("image must be [c, h, w], got {shape:?}"))),
    };
    if h % patch != 0 || w % patch != 0 || plan.len() != (h / patch) * (w / patch) {
        return Err(Error::dim(format!(
            "mask plan over {} patches does not tile a {h}x{w} image with patch {patch}",
            plan.len()
        )));
    }
    if plan.masked.is_empty() {
        return Ok(g.constant(Tensor::scalar(T::zero())));
    }
    let idx = masked_pixel_indices(c, h, w, patch, &plan.masked);
    let target: Vec<T> = idx.iter().map(|&i| T::of(image.data()[i])).collect();
    let n = idx.len();
    let picked = g.gather(recon, idx, &[n])?;
    let target = g.constant(Tensor::new(&[n], target)?);
    g.mse_mean(picked, target)
}

/// `lambda * l_recon + (1 - lambda) * l_seg`.
pub fn total_loss<T: Real>(g: &mut Graph<T>, l_recon: Var, l_seg: Var, lambda: f64) -> Result<Var> {
    let r = g.scale(l_recon, T::of(lambda));
    let s = g.scale(l_seg, T::of(1.0 - lambda));
    g.add(r, s)
}

pub fn total_loss_value(l_recon: f64, l_seg: f64, lambda: f64) -> f64 {
    lambda * l_recon + (1.0 - lambda) * l_seg
}
