use super::params::Bound;
use super::patch::{patchify, sincos_table, unpatch_index};
use super::{MaskPlan, ModelConfig};
use crate::error::{Error, Result};
use crate::tensor::{Graph, Real, Tensor, Var};

fn linear<T: Real>(g: &mut Graph<T>, b: &Bound<T>, x: Var, prefix: &str) -> Result<Var> {
    let w = b.get(&format!("{prefix}.w"))?;
    let bias = b.get(&format!("{prefix}.b"))?;
    let y = g.matmul(x, w)?;
    g.add_bias(y, bias)
}

fn layer_norm<T: Real>(g: &mut Graph<T>, b: &Bound<T>, x: Var, prefix: &str, eps: f64) -> Result<Var> {
    let gamma = b.get(&format!("{prefix}.g"))?;
    let beta = b.get(&format!("{prefix}.b"))?;
    g.layer_norm(x, gamma, beta, T::of(eps))
}

/// Multi-head scaled dot-product self-attention over `x[n, d]`.
pub fn mhsa<T: Real>(g: &mut Graph<T>, b: &Bound<T>, x: Var, prefix: &str, heads: usize) -> Result<Var> {
    let (n, d) = match *g.shape(x) {
        [n, d] => (n, d),
        ref s => return Err(Error::dim(format!("attention input must be [n, d], got {s:?}"))),
    };
    if heads == 0 || d % heads != 0 {
        return Err(Error::dim(format!("dim {d} not divisible by {heads} heads")));
    }
    let dh = d / heads;
    let qkv = linear(g, b, x, &format!("{prefix}.qkv"))?;
    let qkv = g.reshape(qkv, &[n, 3, heads, dh])?;
    let qkv = g.permute(qkv, &[1, 2, 0, 3])?;
    let q = g.select(qkv, 0)?;
    let k = g.select(qkv, 1)?;
    let v = g.select(qkv, 2)?;
    let kt = g.permute(k, &[0, 2, 1])?;
    let scores = g.matmul(q, kt)?;
    let scores = g.scale(scores, T::of(1.0 / (dh as f64).sqrt()));
    let attn = g.softmax(scores);
    let out = g.matmul(attn, v)?;
    let out = g.permute(out, &[1, 0, 2])?;
    let out = g.reshape(out, &[n, d])?;
    linear(g, b, out, &format!("{prefix}.proj"))
}

fn mlp<T: Real>(g: &mut Graph<T>, b: &Bound<T>, x: Var, prefix: &str) -> Result<Var> {
    let h = linear(g, b, x, &format!("{prefix}.fc1"))?;
    let h = g.gelu(h);
    linear(g, b, h, &format!("{prefix}.fc2"))
}

/// Per-token local branch: linear to `c*p*p`, view as a `c×p×p` patch,
/// 3×3 convolution, linear back to the token width. Tokens never mix.
pub fn licm_forward<T: Real>(g: &mut Graph<T>, b: &Bound<T>, x: Var, prefix: &str, p: usize, c: usize) -> Result<Var> {
    let n = g.shape(x)[0];
    let h = linear(g, b, x, &format!("{prefix}.in"))?;
    let h = g.reshape(h, &[n, c, p, p])?;
    let k = b.get(&format!("{prefix}.conv.k"))?;
    let kb = b.get(&format!("{prefix}.conv.b"))?;
    let h = g.conv3x3(h, k, kb)?;
    let h = g.reshape(h, &[n, c * p * p])?;
    linear(g, b, h, &format!("{prefix}.out"))
}

/// One block with layer norm applied to each branch output:
///
/// ```text
/// x1 = x  + LN(MHSA(x))  + LN(LICM_a(x))
/// x2 = x1 + LN(MLP(x1))  + LN(LICM_b(x1))
/// ```
///
/// The LICM terms are absent when `cfg.licm_enabled` is false.
pub fn block_forward<T: Real>(
    g: &mut Graph<T>,
    b: &Bound<T>,
    x: Var,
    prefix: &str,
    heads: usize,
    cfg: &ModelConfig,
) -> Result<Var> {
    let eps = cfg.ln_eps;
    let a = mhsa(g, b, x, &format!("{prefix}.attn"), heads)?;
    let a = layer_norm(g, b, a, &format!("{prefix}.ln_attn"), eps)?;
    let mut x1 = g.add(x, a)?;
    if cfg.licm_enabled {
        let l = licm_forward(g, b, x, &format!("{prefix}.licm_a"), cfg.patch_size, cfg.licm_channels)?;
        let l = layer_norm(g, b, l, &format!("{prefix}.ln_licm_a"), eps)?;
        x1 = g.add(x1, l)?;
    }
    let m = mlp(g, b, x1, &format!("{prefix}.mlp"))?;
    let m = layer_norm(g, b, m, &format!("{prefix}.ln_mlp"), eps)?;
    let mut x2 = g.add(x1, m)?;
    if cfg.licm_enabled {
        let l = licm_forward(g, b, x1, &format!("{prefix}.licm_b"), cfg.patch_size, cfg.licm_channels)?;
        let l = layer_norm(g, b, l, &format!("{prefix}.ln_licm_b"), eps)?;
        x2 = g.add(x2, l)?;
    }
    Ok(x2)
}

fn pos_rows<T: Real>(dim: usize, grid: usize, rows: &[usize]) -> Result<Tensor<T>> {
    let table = sincos_table(dim, grid, grid)?;
    let mut data = Vec::with_capacity(rows.len() * dim);
    for &r in rows {
        data.extend(table.data()[r * dim..(r + 1) * dim].iter().map(|&v| T::of(v)));
    }
    Tensor::new(&[rows.len(), dim], data)
}

/// Embeds and encodes the visible patches of `image[3, H, W]`. Returns the
/// latent `[|visible|, enc_dim]`.
pub fn encode<T: Real>(
    g: &mut Graph<T>,
    b: &Bound<T>,
    cfg: &ModelConfig,
    image: &Tensor<f64>,
    plan: &MaskPlan,
) -> Result<Var> {
    let s = cfg.img_size;
    if image.shape() != [3, s, s] {
        return Err(Error::dim(format!(
            "encoder input must be [3, {s}, {s}], got {:?}",
            image.shape()
        )));
    }
    let n = cfg.num_tokens();
    if plan.len() != n {
        return Err(Error::contract(format!("mask plan covers {} of {n} tokens", plan.len())));
    }
    // masked patches are dropped before anything touches them
    let tokens = patchify(image, cfg.patch_size)?;
    let d = tokens.shape()[1];
    let mut vis = Vec::with_capacity(plan.visible.len() * d);
    for &i in &plan.visible {
        vis.extend(tokens.data()[i * d..(i + 1) * d].iter().map(|&v| T::of(v)));
    }
    let x = g.constant(Tensor::new(&[plan.visible.len(), d], vis)?);
    let x = linear(g, b, x, "enc.patch_embed")?;
    let pos = g.constant(pos_rows(cfg.enc_dim, cfg.grid(), &plan.visible)?);
    let mut x = g.add(x, pos)?;
    for i in 0..cfg.enc_depth {
        x = block_forward(g, b, x, &format!("enc.blocks.{i}"), cfg.enc_heads, cfg)?;
    }
    Ok(x)
}

/// Decoder outputs: `recon[3, H, W]` and `pred[H, W]` in `[0, 1]`.
#[derive(Clone, Copy, Debug)]
pub struct Decoded {
    pub recon: Var,
    pub pred: Var,
}

/// Runs decoder `dec` on a latent produced under `plan`, restoring the full
/// token order with the learned mask token.
pub fn decode<T: Real>(
    g: &mut Graph<T>,
    b: &Bound<T>,
    cfg: &ModelConfig,
    latent: Var,
    plan: &MaskPlan,
    dec: &str,
) -> Result<Decoded> {
    let nv = plan.visible.len();
    if g.shape(latent) != [nv, cfg.enc_dim] {
        return Err(Error::contract(format!(
            "latent {:?} does not match a plan with {nv} visible tokens",
            g.shape(latent)
        )));
    }
    let dd = cfg.dec_dim;
    let n = cfg.num_tokens();
    let x = linear(g, b, latent, &format!("{dec}.embed"))?;
    let x = if plan.masked.is_empty() {
        x
    } else {
        let mt = b.get(&format!("{dec}.mask_token"))?;
        let nm = plan.masked.len();
        let idx = (0..nm).flat_map(|_| 0..dd).collect();
        let fill = g.gather(mt, idx, &[nm, dd])?;
        let stacked = g.concat(&[x, fill])?;
        let mut rows = vec![0; n];
        for (j, &i) in plan.visible.iter().enumerate() {
            rows[i] = j;
        }
        for (j, &i) in plan.masked.iter().enumerate() {
            rows[i] = nv + j;
        }
        g.gather_rows(stacked, &rows)?
    };
    let all: Vec<usize> = (0..n).collect();
    let pos = g.constant(pos_rows(dd, cfg.grid(), &all)?);
    let mut x = g.add(x, pos)?;
    for i in 0..cfg.dec_depth {
        x = block_forward(g, b, x, &format!("{dec}.blocks.{i}"), cfg.dec_heads, cfg)?;
    }

    let (s, p, ch) = (cfg.img_size, cfg.patch_size, cfg.head_channels);
    let r = linear(g, b, x, &format!("{dec}.recon_head"))?;
    let recon = g.gather(r, unpatch_index(3, s, s, p), &[3, s, s])?;

    let t = linear(g, b, x, &format!("{dec}.seg_trunk"))?;
    // token slots to pixel-major [H*W, c_head] in one gather
    let inv = unpatch_index(ch, s, s, p);
    let plane = s * s;
    let idx = (0..plane)
        .flat_map(|px| (0..ch).map(move |c| c * plane + px))
        .map(|k| inv[k])
        .collect();
    let feat = g.gather(t, idx, &[plane, ch])?;
    let logit = linear(g, b, feat, &format!("{dec}.seg_conv"))?;
    let logit = g.reshape(logit, &[s, s])?;
    let pred = g.sigmoid(logit);
    Ok(Decoded { recon, pred })
}
