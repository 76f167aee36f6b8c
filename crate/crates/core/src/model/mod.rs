//! The segmentation network: patch tokens, random masking, an encoder that
//! only sees visible patches, and a light decoder with reconstruction and
//! segmentation heads.

mod check;
mod mask;
mod net;
mod params;
mod patch;

use serde::{Deserialize, Serialize};

use crate::data::{resize_bilinear, Task};
use crate::error::{Error, Result};
use crate::tensor::{Graph, Real, Tensor};

pub use check::{end_to_end_gradcheck, randomize_params};
pub use mask::{make_mask_plan, MaskPlan};
pub use net::{block_forward, decode, encode, licm_forward, mhsa, Decoded};
pub use params::{param_specs, Bound, Init, ParamSpec, ParamStore};
pub use patch::{patchify, sincos_table, unpatchify};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub img_size: usize,
    pub patch_size: usize,
    pub enc_dim: usize,
    pub enc_depth: usize,
    pub enc_heads: usize,
    pub dec_dim: usize,
    pub dec_depth: usize,
    pub dec_heads: usize,
    pub licm_channels: usize,
    pub head_channels: usize,
    pub licm_enabled: bool,
    pub ln_eps: f64,
    pub seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            img_size: 64,
            patch_size: 8,
            enc_dim: 64,
            enc_depth: 2,
            enc_heads: 4,
            dec_dim: 32,
            dec_depth: 1,
            dec_heads: 4,
            licm_channels: 4,
            head_channels: 8,
            licm_enabled: true,
            ln_eps: 1e-6,
            seed: 0,
        }
    }
}

impl ModelConfig {
    /// 16-pixel images, 8-pixel patches, width 8, one block per stage.
    pub fn tiny() -> Self {
        ModelConfig {
            img_size: 16,
            patch_size: 8,
            enc_dim: 8,
            enc_depth: 1,
            enc_heads: 2,
            dec_dim: 8,
            dec_depth: 1,
            dec_heads: 2,
            ..ModelConfig::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::contract(m));
        if self.patch_size == 0 || self.img_size == 0 || self.img_size % self.patch_size != 0 {
            return bad(format!(
                "img_size {} must be a positive multiple of patch_size {}",
                self.img_size, self.patch_size
            ));
        }
        for (name, dim, heads) in [
            ("enc", self.enc_dim, self.enc_heads),
            ("dec", self.dec_dim, self.dec_heads),
        ] {
            if heads == 0 || dim % heads != 0 {
                return bad(format!("{name}_dim {dim} not divisible by {name}_heads {heads}"));
            }
            if dim % 4 != 0 {
                return bad(format!("{name}_dim {dim} must be a multiple of 4 for the positional table"));
            }
        }
        if self.licm_channels == 0 || self.head_channels == 0 || self.ln_eps <= 0.0 {
            return bad("licm_channels, head_channels and ln_eps must be positive".into());
        }
        Ok(())
    }

    pub fn grid(&self) -> usize {
        self.img_size / self.patch_size
    }

    pub fn num_tokens(&self) -> usize {
        self.grid() * self.grid()
    }
}

/// One decoder for everything, or one per task behind a shared encoder.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DecoderLayout {
    Shared,
    PerTask,
}

impl DecoderLayout {
    pub fn names(self) -> Vec<String> {
        match self {
            DecoderLayout::Shared => vec!["dec".into()],
            DecoderLayout::PerTask => vec!["dec_cod".into(), "dec_sod".into()],
        }
    }
}

/// Configuration plus parameters.
#[derive(Clone, Debug)]
pub struct Senet<T: Real> {
    pub config: ModelConfig,
    pub layout: DecoderLayout,
    pub params: ParamStore<T>,
}

impl<T: Real> Senet<T> {
    pub fn new(config: ModelConfig, layout: DecoderLayout) -> Result<Self> {
        config.validate()?;
        let params = ParamStore::init(&param_specs(&config, &layout.names()), config.seed)?;
        Ok(Senet {
            config,
            layout,
            params,
        })
    }

    /// Decoder prefix that serves `task`.
    pub fn decoder_for(&self, task: Task) -> &'static str {
        match (self.layout, task) {
            (DecoderLayout::Shared, _) => "dec",
            (DecoderLayout::PerTask, Task::Cod) => "dec_cod",
            (DecoderLayout::PerTask, Task::Sod) => "dec_sod",
        }
    }

    /// Prediction at model resolution with nothing masked. Also returns the
    /// number of tokens the encoder processed.
    pub fn forward_inference_counted(&self, image: &Tensor<f64>, task: Task) -> Result<(Tensor<f64>, usize)> {
        let mut g = Graph::new();
        let b = self.params.bind(&mut g, false);
        let plan = MaskPlan::full(self.config.num_tokens());
        let latent = encode(&mut g, &b, &self.config, image, &plan)?;
        let tokens = g.shape(latent)[0];
        let out = decode(&mut g, &b, &self.config, latent, &plan, self.decoder_for(task))?;
        Ok((g.value(out.pred).cast(), tokens))
    }

    pub fn forward_inference(&self, image: &Tensor<f64>, task: Task) -> Result<Tensor<f64>> {
        Ok(self.forward_inference_counted(image, task)?.0)
    }

    /// Resizes `image[3, h, w]` to the model size, predicts, and resizes the
    /// map back to `h × w`.
    pub fn predict(&self, image: &Tensor<f64>, task: Task) -> Result<(Tensor<f64>, usize)> {
        let (h, w) = match *image.shape() {
            [3, h, w] => (h, w),
            ref s => return Err(Error::dim(format!("expected an RGB image [3, h, w], got {s:?}"))),
        };
        let s = self.config.img_size;
        let input = resize_bilinear(image, s, s)?;
        let (pred, tokens) = self.forward_inference_counted(&input, task)?;
        Ok((resize_bilinear(&pred, h, w)?, tokens))
    }
}
