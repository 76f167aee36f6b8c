//! Flat `key = value` run configuration.

use std::fmt::Display;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::de::DeserializeOwned;
use serde::Serialize;

use senet_core::data::{SynthConfig, Task};
use senet_core::model::ModelConfig;
use senet_core::training::{Paradigm, TrainConfig};

/// Everything a run needs. `seed` drives model init, training order and the
/// synthetic data alike.
#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub task: Task,
    pub data_size: usize,
    pub train_count: usize,
    pub test_count: usize,
    pub object_scale_lo: f64,
    pub object_scale_hi: f64,
    pub texture_octaves: usize,
    /// `None` picks the task default.
    pub camo_similarity: Option<f64>,
    pub max_steps: usize,
    pub sweep_ratios: Vec<f64>,
    pub manifest: Option<PathBuf>,
    pub test_manifest: Option<PathBuf>,
    pub cod_manifest: Option<PathBuf>,
    pub sod_manifest: Option<PathBuf>,
    pub out: PathBuf,
    pub ckpt: Option<PathBuf>,
}

impl Default for RunConfig {
    fn default() -> Self {
        let synth = SynthConfig::new(Task::Cod, 64, 0);
        RunConfig {
            model: ModelConfig::default(),
            train: TrainConfig::default(),
            task: Task::Cod,
            data_size: 64,
            train_count: 16,
            test_count: 8,
            object_scale_lo: synth.object_scale_range.0,
            object_scale_hi: synth.object_scale_range.1,
            texture_octaves: synth.texture_octaves,
            camo_similarity: None,
            max_steps: 0,
            sweep_ratios: vec![0.0, 0.05, 0.25, 0.5, 0.75, 0.9],
            manifest: None,
            test_manifest: None,
            cod_manifest: None,
            sod_manifest: None,
            out: PathBuf::from("out"),
            ckpt: None,
        }
    }
}

fn num<T: FromStr>(v: &str) -> Result<T, String>
where
    T::Err: Display,
{
    v.parse().map_err(|e: T::Err| e.to_string())
}

fn flag(v: &str) -> Result<bool, String> {
    match v {
        "true" | "1" | "yes" => Ok(true),
        "false" | "0" | "no" => Ok(false),
        _ => Err("expected true or false".into()),
    }
}

/// Enum values use their serde names.
fn tag<T: DeserializeOwned>(v: &str) -> Result<T, String> {
    serde_json::from_value(serde_json::Value::String(v.into())).map_err(|e| e.to_string())
}

fn tag_name<T: Serialize>(v: &T) -> String {
    match serde_json::to_value(v) {
        Ok(serde_json::Value::String(s)) => s,
        _ => unreachable!("unit enum variants serialize as strings"),
    }
}

fn path(v: &str) -> Option<PathBuf> {
    (!v.is_empty()).then(|| PathBuf::from(v))
}

fn show_path(p: &Option<PathBuf>) -> String {
    p.as_ref().map(|p| p.display().to_string()).unwrap_or_default()
}

impl RunConfig {
    /// Defaults, then the file at `file` if any, then `overrides` in order.
    pub fn resolve(file: Option<&Path>, overrides: &[(String, String)]) -> Result<Self, String> {
        let mut cfg = RunConfig::default();
        if let Some(f) = file {
            let text = std::fs::read_to_string(f).map_err(|e| format!("reading {}: {e}", f.display()))?;
            cfg.apply_text(&text).map_err(|e| format!("{}: {e}", f.display()))?;
        }
        for (k, v) in overrides {
            cfg.set(k, v)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn apply_text(&mut self, text: &str) -> Result<(), String> {
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| format!("line {}: expected key = value", i + 1))?;
            self.set(k.trim(), v.trim()).map_err(|e| format!("line {}: {e}", i + 1))?;
        }
        Ok(())
    }

    pub fn set(&mut self, key: &str, v: &str) -> Result<(), String> {
        let m = &mut self.model;
        let t = &mut self.train;
        let r = match key {
            "seed" => num(v).map(|s| {
                m.seed = s;
                t.seed = s;
            }),
            "img_size" => num(v).map(|x| m.img_size = x),
            "patch_size" => num(v).map(|x| m.patch_size = x),
            "enc_dim" => num(v).map(|x| m.enc_dim = x),
            "enc_depth" => num(v).map(|x| m.enc_depth = x),
            "enc_heads" => num(v).map(|x| m.enc_heads = x),
            "dec_dim" => num(v).map(|x| m.dec_dim = x),
            "dec_depth" => num(v).map(|x| m.dec_depth = x),
            "dec_heads" => num(v).map(|x| m.dec_heads = x),
            "licm_channels" => num(v).map(|x| m.licm_channels = x),
            "head_channels" => num(v).map(|x| m.head_channels = x),
            "licm_enabled" => flag(v).map(|x| m.licm_enabled = x),
            "ln_eps" => num(v).map(|x| m.ln_eps = x),
            "lr0" => num(v).map(|x| t.lr0 = x),
            "poly_power" => num(v).map(|x| t.poly_power = x),
            "epochs" => num(v).map(|x| t.epochs = x),
            "batch_size" => num(v).map(|x| t.batch_size = x),
            "mask_ratio" => num(v).map(|x| t.mask_ratio_train = x),
            "paradigm" => num::<Paradigm>(v).map(|x| t.paradigm = x),
            "augment" => flag(v).map(|x| t.augment = x),
            "joint_recon" => flag(v).map(|x| t.joint_recon = x),
            "lambda" => num(v).map(|x| t.loss.lambda = x),
            "l" => num(v).map(|x| t.loss.l = x),
            "band_lo" => num(v).map(|x| t.loss.band_lo = x),
            "band_hi" => num(v).map(|x| t.loss.band_hi = x),
            "band_dilation" => num(v).map(|x| t.loss.band_dilation = x),
            "bce_clamp_eps" => num(v).map(|x| t.loss.bce_clamp_eps = x),
            "iou_smooth" => num(v).map(|x| t.loss.iou_smooth = x),
            "alpha_cap" => num(v).map(|x| t.loss.alpha_cap = x),
            "weighting" => tag(v).map(|x| t.loss.weighting = x),
            "gt_resize" => tag(v).map(|x| t.loss.gt_resize = x),
            "task" => num(v).map(|x| self.task = x),
            "data_size" => num(v).map(|x| self.data_size = x),
            "train_count" => num(v).map(|x| self.train_count = x),
            "test_count" => num(v).map(|x| self.test_count = x),
            "object_scale_lo" => num(v).map(|x| self.object_scale_lo = x),
            "object_scale_hi" => num(v).map(|x| self.object_scale_hi = x),
            "texture_octaves" => num(v).map(|x| self.texture_octaves = x),
            "camo_similarity" => match v {
                "auto" | "" => {
                    self.camo_similarity = None;
                    Ok(())
                }
                _ => num(v).map(|x| self.camo_similarity = Some(x)),
            },
            "max_steps" => num(v).map(|x| self.max_steps = x),
            "sweep_ratios" => v
                .split(',')
                .map(|s| num::<f64>(s.trim()))
                .collect::<Result<Vec<_>, _>>()
                .map(|x| self.sweep_ratios = x),
            "manifest" => Ok(self.manifest = path(v)),
            "test_manifest" => Ok(self.test_manifest = path(v)),
            "cod_manifest" => Ok(self.cod_manifest = path(v)),
            "sod_manifest" => Ok(self.sod_manifest = path(v)),
            "out" => Ok(self.out = PathBuf::from(v)),
            "ckpt" => Ok(self.ckpt = path(v)),
            _ => return Err(format!("unknown config key {key:?}")),
        };
        r.map_err(|e| format!("{key} = {v:?}: {e}"))
    }

    /// Every key with its value, in a fixed order.
    pub fn entries(&self) -> Vec<(&'static str, String)> {
        let m = &self.model;
        let t = &self.train;
        let l = &t.loss;
        let ratios: Vec<String> = self.sweep_ratios.iter().map(|r| r.to_string()).collect();
        vec![
            ("seed", m.seed.to_string()),
            ("img_size", m.img_size.to_string()),
            ("patch_size", m.patch_size.to_string()),
            ("enc_dim", m.enc_dim.to_string()),
            ("enc_depth", m.enc_depth.to_string()),
            ("enc_heads", m.enc_heads.to_string()),
            ("dec_dim", m.dec_dim.to_string()),
            ("dec_depth", m.dec_depth.to_string()),
            ("dec_heads", m.dec_heads.to_string()),
            ("licm_channels", m.licm_channels.to_string()),
            ("head_channels", m.head_channels.to_string()),
            ("licm_enabled", m.licm_enabled.to_string()),
            ("ln_eps", m.ln_eps.to_string()),
            ("lr0", t.lr0.to_string()),
            ("poly_power", t.poly_power.to_string()),
            ("epochs", t.epochs.to_string()),
            ("batch_size", t.batch_size.to_string()),
            ("mask_ratio", t.mask_ratio_train.to_string()),
            ("paradigm", t.paradigm.to_string()),
            ("augment", t.augment.to_string()),
            ("joint_recon", t.joint_recon.to_string()),
            ("lambda", l.lambda.to_string()),
            ("l", l.l.to_string()),
            ("band_lo", l.band_lo.to_string()),
            ("band_hi", l.band_hi.to_string()),
            ("band_dilation", l.band_dilation.to_string()),
            ("bce_clamp_eps", l.bce_clamp_eps.to_string()),
            ("iou_smooth", l.iou_smooth.to_string()),
            ("alpha_cap", l.alpha_cap.to_string()),
            ("weighting", tag_name(&l.weighting)),
            ("gt_resize", tag_name(&l.gt_resize)),
            ("task", self.task.to_string()),
            ("data_size", self.data_size.to_string()),
            ("train_count", self.train_count.to_string()),
            ("test_count", self.test_count.to_string()),
            ("object_scale_lo", self.object_scale_lo.to_string()),
            ("object_scale_hi", self.object_scale_hi.to_string()),
            ("texture_octaves", self.texture_octaves.to_string()),
            (
                "camo_similarity",
                self.camo_similarity.map_or("auto".into(), |c| c.to_string()),
            ),
            ("max_steps", self.max_steps.to_string()),
            ("sweep_ratios", ratios.join(",")),
            ("manifest", show_path(&self.manifest)),
            ("test_manifest", show_path(&self.test_manifest)),
            ("cod_manifest", show_path(&self.cod_manifest)),
            ("sod_manifest", show_path(&self.sod_manifest)),
            ("out", self.out.display().to_string()),
            ("ckpt", show_path(&self.ckpt)),
        ]
    }

    /// The resolved configuration as re-loadable text.
    pub fn to_text(&self) -> String {
        let mut s = String::from("# resolved senet configuration\n");
        for (k, v) in self.entries() {
            s.push_str(&format!("{k} = {v}\n"));
        }
        s
    }

    pub fn validate(&self) -> Result<(), String> {
        self.model.validate().map_err(|e| e.to_string())?;
        self.train.validate().map_err(|e| e.to_string())?;
        for t in [Task::Cod, Task::Sod] {
            self.synth(t).validate().map_err(|e| e.to_string())?;
        }
        if self.train_count == 0 || self.test_count == 0 {
            return Err("train_count and test_count must be positive".into());
        }
        Ok(())
    }

    pub fn synth(&self, task: Task) -> SynthConfig {
        let mut s = SynthConfig::new(task, self.data_size, self.model.seed);
        s.object_scale_range = (self.object_scale_lo, self.object_scale_hi);
        s.texture_octaves = self.texture_octaves;
        if let Some(c) = self.camo_similarity {
            s.camo_similarity = c;
        }
        s
    }

    pub fn checkpoint_path(&self) -> PathBuf {
        self.ckpt.clone().unwrap_or_else(|| self.out.join("checkpoint.senc"))
    }
}
