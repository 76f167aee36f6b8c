use super::{decode, encode, DecoderLayout, MaskPlan, ModelConfig, ParamStore, Senet};
use crate::error::Result;
use crate::losses::{dw_seg_loss, recon_loss, soft_gt, total_loss, weight_matrix, LossConfig, ResizeMode};
use crate::tensor::gradcheck::{check_graph_fn, CheckResult};
use crate::tensor::{Graph, Prng, Real, Tensor, Var};

/// Fills every parameter with `N(0, scale²)` noise so no branch is trivially
/// zero (the LICM output layers start at zero).
pub fn randomize_params<T: Real>(store: &mut ParamStore<T>, seed: u64, scale: f64) {
    let mut rng = Prng::seed_from_u64(seed);
    for t in store.tensors_mut() {
        for v in t.data_mut() {
            *v = T::of(rng.normal() * scale);
        }
    }
}

/// Full training objective as a function of parameter `name`, every other
/// parameter held fixed.
fn objective(
    m: &Senet<f64>,
    name: &str,
    g: &mut Graph<f64>,
    v: Var,
    img: &Tensor<f64>,
    mask: &Tensor<f64>,
    plan: &MaskPlan,
) -> Result<Var> {
    let cfg = &m.config;
    let mut b = m.params.bind(g, false);
    b.set(name, v)?;
    let l = encode(g, &b, cfg, img, plan)?;
    let out = decode(g, &b, cfg, l, plan, "dec")?;
    let lc = LossConfig::default();
    let gt = soft_gt(mask, cfg.img_size, cfg.img_size, ResizeMode::Bilinear)?;
    let w = weight_matrix(&gt, &lc)?;
    let seg = dw_seg_loss(g, out.pred, &gt, &w, &lc)?;
    let rec = recon_loss(g, out.recon, img, plan, cfg.patch_size)?;
    total_loss(g, rec, seg, lc.lambda)
}

/// Finite-difference check of the tiny model's total loss (reconstruction
/// plus segmentation, one masked patch) against every parameter tensor.
pub fn end_to_end_gradcheck(seed: u64) -> Result<Vec<CheckResult>> {
    let cfg = ModelConfig::tiny();
    let s = cfg.img_size;
    let mut m = Senet::<f64>::new(cfg, DecoderLayout::Shared)?;
    randomize_params(&mut m.params, seed, 0.3);
    let mut rng = Prng::derive(seed, "gradcheck/image");
    let img = Tensor::from_fn(&[3, s, s], |_| rng.next_f64());
    // 12x12 mask, so the soft target has a real transition band
    let mask = Tensor::from_fn(&[12, 12], |i| if (i / 12 + i % 12) % 5 < 2 { 1.0 } else { 0.0 });
    let plan = MaskPlan {
        visible: vec![0, 1, 3],
        masked: vec![2],
        ratio: 0.25,
    };
    let mut out = Vec::new();
    for name in m.params.names().to_vec() {
        let x = m.params.get(&name)?.clone();
        let err = check_graph_fn(|g, v| objective(&m, &name, g, v, &img, &mask, &plan), &x, 1e-5)?;
        out.push(CheckResult {
            name,
            max_rel_error: err,
            trials: 1,
        });
    }
    Ok(out)
}
