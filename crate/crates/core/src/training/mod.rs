//! Optimization: Adam with a poly schedule, single-task and joint training,
//! evaluation, mask-ratio sweeps and checkpoints.

mod checkpoint;
mod eval;
mod optim;

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::data::{hflip, resize_bilinear, Sample, Task};
use crate::error::{Error, Result};
use crate::losses::{
    dw_seg_loss, recon_loss, soft_gt, total_loss, weights_for, LossConfig, SoftGroundTruth,
    WeightMatrix,
};
use crate::model::{decode, encode, make_mask_plan, DecoderLayout, MaskPlan, ModelConfig, Senet};
use crate::tensor::{Graph, Prng, Real, Tensor};

pub use checkpoint::{
    decode_checkpoint, encode_checkpoint, load_checkpoint, save_checkpoint, Checkpoint, CHECKPOINT_VERSION,
};
pub use eval::{evaluate, mask_ratio_sweep, threads_from_env, write_sweep_csv, Evaluation, SweepRow};
pub use optim::{adam_step, poly_lr, OptimizerState};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Paradigm {
    Single,
    /// Both tasks through one shared network.
    Joint1,
    /// Shared encoder, one decoder per task.
    Joint2,
}

impl Paradigm {
    pub fn layout(self) -> DecoderLayout {
        match self {
            Paradigm::Joint2 => DecoderLayout::PerTask,
            _ => DecoderLayout::Shared,
        }
    }
}

impl fmt::Display for Paradigm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Paradigm::Single => "single",
            Paradigm::Joint1 => "joint1",
            Paradigm::Joint2 => "joint2",
        })
    }
}

impl FromStr for Paradigm {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "single" => Ok(Paradigm::Single),
            "joint1" => Ok(Paradigm::Joint1),
            "joint2" => Ok(Paradigm::Joint2),
            o => Err(format!("unknown paradigm {o:?} (expected single, joint1 or joint2)")),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub lr0: f64,
    pub poly_power: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub mask_ratio_train: f64,
    /// Always 0: evaluation never masks.
    pub mask_ratio_eval: f64,
    pub paradigm: Paradigm,
    pub augment: bool,
    /// Whether joint training also applies the reconstruction term.
    pub joint_recon: bool,
    pub seed: u64,
    pub loss: LossConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr0: 1e-4,
            poly_power: 0.9,
            epochs: 30,
            batch_size: 4,
            mask_ratio_train: 0.05,
            mask_ratio_eval: 0.0,
            paradigm: Paradigm::Single,
            augment: true,
            joint_recon: true,
            seed: 0,
            loss: LossConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.mask_ratio_eval != 0.0 {
            return Err(Error::contract("mask_ratio_eval must be 0"));
        }
        if !(0.0..1.0).contains(&self.mask_ratio_train) {
            return Err(Error::contract(format!(
                "mask_ratio_train {} outside [0, 1)",
                self.mask_ratio_train
            )));
        }
        if self.batch_size == 0 || self.epochs == 0 {
            return Err(Error::contract("batch_size and epochs must be positive"));
        }
        if !(self.lr0 >= 0.0) || !(self.poly_power >= 0.0) {
            return Err(Error::contract("lr0 and poly_power must be non-negative"));
        }
        self.loss.validate()
    }
}

/// A sample resized to model resolution.
#[derive(Clone, Debug)]
pub struct Resized {
    pub image: Tensor<f64>,
    pub gt: SoftGroundTruth,
    pub task: Task,
}

pub fn resize_sample(s: &Sample, size: usize, lcfg: &LossConfig) -> Result<Resized> {
    Ok(Resized {
        image: resize_bilinear(&s.image, size, size)?,
        gt: soft_gt(&s.mask, size, size, lcfg.gt_resize)?,
        task: s.task,
    })
}

/// One training example after augmentation and masking.
#[derive(Clone, Debug)]
pub struct Prepared {
    pub image: Tensor<f64>,
    pub gt: SoftGroundTruth,
    pub weights: WeightMatrix,
    pub plan: MaskPlan,
    pub task: Task,
}

/// Draws the flip decision, then the mask plan, from `rng`.
pub fn prepare(r: &Resized, ratio: f64, augment: bool, n_tokens: usize, lcfg: &LossConfig, rng: &mut Prng) -> Result<Prepared> {
    let (mut image, mut gt) = (r.image.clone(), r.gt.clone());
    if augment && rng.bernoulli(0.5) {
        image = hflip(&image);
        gt.values = hflip(&gt.values);
    }
    let plan = make_mask_plan(n_tokens, ratio, rng)?;
    let weights = match weights_for(&gt, lcfg) {
        Err(Error::DegenerateTarget(_)) => {
            let s = gt.values.shape();
            WeightMatrix::uniform(s[0], s[1])
        }
        other => other?,
    };
    Ok(Prepared {
        image,
        gt,
        weights,
        plan,
        task: r.task,
    })
}

/// Gradients (store order) and loss parts of one objective evaluation.
#[derive(Clone, Debug)]
pub struct StepOutput<T: Real> {
    pub grads: Vec<Tensor<T>>,
    pub loss: f64,
    pub l_recon: f64,
    pub l_seg: f64,
    /// `(cod_loss, sod_loss)` for joint steps.
    pub task_losses: Option<(f64, f64)>,
}

struct BatchTerms {
    total: crate::tensor::Var,
    recon: f64,
    seg: f64,
}

fn batch_terms<T: Real>(
    g: &mut Graph<T>,
    b: &crate::model::Bound<T>,
    model: &Senet<T>,
    batch: &[Prepared],
    lcfg: &LossConfig,
    use_recon: bool,
) -> Result<BatchTerms> {
    if batch.is_empty() {
        return Err(Error::contract("empty batch"));
    }
    let cfg = &model.config;
    let mut parts = Vec::with_capacity(batch.len());
    let (mut recon, mut seg) = (0.0, 0.0);
    for p in batch {
        let latent = encode(g, b, cfg, &p.image, &p.plan)?;
        let out = decode(g, b, cfg, latent, &p.plan, model.decoder_for(p.task))?;
        let ls = dw_seg_loss(g, out.pred, &p.gt, &p.weights, lcfg)?;
        let lr = if use_recon {
            recon_loss(g, out.recon, &p.image, &p.plan, cfg.patch_size)?
        } else {
            g.constant(Tensor::scalar(T::zero()))
        };
        recon += g.value(lr).item().f64();
        seg += g.value(ls).item().f64();
        parts.push(total_loss(g, lr, ls, lcfg.lambda)?);
    }
    let n = batch.len() as f64;
    let mut sum = parts[0];
    for &v in &parts[1..] {
        sum = g.add(sum, v)?;
    }
    let total = g.scale(sum, T::of(1.0 / n));
    Ok(BatchTerms {
        total,
        recon: recon / n,
        seg: seg / n,
    })
}

fn collect_grads<T: Real>(g: &Graph<T>, b: &crate::model::Bound<T>, model: &Senet<T>) -> Vec<Tensor<T>> {
    b.vars()
        .iter()
        .zip(model.params.tensors())
        .map(|(&v, t)| g.grad(v).unwrap_or_else(|| Tensor::zeros(t.shape())))
        .collect()
}

/// Gradient of the batch-mean total loss, optionally scaled by `weight`.
pub fn task_gradients<T: Real>(
    model: &Senet<T>,
    batch: &[Prepared],
    lcfg: &LossConfig,
    use_recon: bool,
    weight: f64,
) -> Result<StepOutput<T>> {
    let mut g = Graph::new();
    let b = model.params.bind(&mut g, true);
    let terms = batch_terms(&mut g, &b, model, batch, lcfg, use_recon)?;
    let root = g.scale(terms.total, T::of(weight));
    g.backward(root)?;
    Ok(StepOutput {
        grads: collect_grads(&g, &b, model),
        loss: g.value(terms.total).item().f64(),
        l_recon: terms.recon,
        l_seg: terms.seg,
        task_losses: None,
    })
}

/// `(cod_loss + sod_loss) / 2` through one graph and one backward pass.
pub fn joint_gradients<T: Real>(
    model: &Senet<T>,
    cod: &[Prepared],
    sod: &[Prepared],
    lcfg: &LossConfig,
    use_recon: bool,
) -> Result<StepOutput<T>> {
    if cod.iter().any(|p| p.task != Task::Cod) || sod.iter().any(|p| p.task != Task::Sod) {
        return Err(Error::contract("joint batches must hold cod and sod samples respectively"));
    }
    let mut g = Graph::new();
    let b = model.params.bind(&mut g, true);
    let c = batch_terms(&mut g, &b, model, cod, lcfg, use_recon)?;
    let s = batch_terms(&mut g, &b, model, sod, lcfg, use_recon)?;
    let both = g.add(c.total, s.total)?;
    let root = g.scale(both, T::of(0.5));
    g.backward(root)?;
    let (lc, ls) = (g.value(c.total).item().f64(), g.value(s.total).item().f64());
    Ok(StepOutput {
        grads: collect_grads(&g, &b, model),
        loss: g.value(root).item().f64(),
        l_recon: 0.5 * (c.recon + s.recon),
        l_seg: 0.5 * (c.seg + s.seg),
        task_losses: Some((lc, ls)),
    })
}

/// One row of the loss trace; `step` is 1-based.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub step: usize,
    pub lr: f64,
    pub l_recon: f64,
    pub l_seg: f64,
    pub l_total: f64,
    pub cod_loss: Option<f64>,
    pub sod_loss: Option<f64>,
}

pub fn write_trace_csv(path: &Path, rows: &[TraceRow]) -> Result<()> {
    crate::data::write_text(path, &trace_csv(rows))
}

/// The loss trace as CSV text, header included.
pub fn trace_csv(rows: &[TraceRow]) -> String {
    let joint = rows.iter().any(|r| r.cod_loss.is_some());
    let mut out = String::from("step,lr,l_recon,l_seg,l_total");
    if joint {
        out.push_str(",cod_loss,sod_loss");
    }
    out.push('\n');
    for r in rows {
        out.push_str(&format!("{},{},{},{},{}", r.step, r.lr, r.l_recon, r.l_seg, r.l_total));
        if joint {
            let f = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
            out.push_str(&format!(",{},{}", f(r.cod_loss), f(r.sod_loss)));
        }
        out.push('\n');
    }
    out
}

/// Training data for one run.
#[derive(Clone, Debug)]
pub enum TrainData {
    Single(Vec<Sample>),
    Joint { cod: Vec<Sample>, sod: Vec<Sample> },
}

fn batches(n: usize, b: usize) -> usize {
    n.div_ceil(b)
}

fn epoch_order(seed: u64, label: &str, cycle: usize, n: usize) -> Vec<usize> {
    let mut rng = Prng::derive(seed, &format!("order/{label}/{cycle}"));
    let mut idx: Vec<usize> = (0..n).collect();
    rng.shuffle(&mut idx);
    idx
}

/// Indices of batch `k` of a cyclic stream over `n` samples.
fn cyclic_batch(seed: u64, label: &str, n: usize, bs: usize, k: usize) -> Vec<usize> {
    let per = batches(n, bs);
    let order = epoch_order(seed, label, k / per, n);
    let j = k % per;
    order[j * bs..((j + 1) * bs).min(n)].to_vec()
}

/// Model, optimizer and counters of a training run.
#[derive(Clone, Debug)]
pub struct Trainer<T: Real> {
    pub model: Senet<T>,
    pub opt: OptimizerState<T>,
    pub cfg: TrainConfig,
    /// Drives flips and mask plans.
    pub rng: Prng,
    /// Completed optimizer steps.
    pub step: usize,
    pub trace: Vec<TraceRow>,
}

impl<T: Real> Trainer<T> {
    pub fn new(model_cfg: ModelConfig, cfg: TrainConfig) -> Result<Self> {
        cfg.validate()?;
        let model = Senet::new(model_cfg, cfg.paradigm.layout())?;
        let opt = OptimizerState::new(&model.params);
        Ok(Trainer {
            model,
            opt,
            rng: Prng::derive(cfg.seed, "train"),
            step: 0,
            trace: Vec::new(),
            cfg,
        })
    }

    pub fn steps_per_epoch(&self, data: &TrainData) -> Result<usize> {
        let bs = self.cfg.batch_size;
        match (data, self.cfg.paradigm) {
            (TrainData::Single(s), Paradigm::Single) => {
                if s.is_empty() {
                    return Err(Error::contract("empty training set"));
                }
                if s.iter().any(|x| x.task != s[0].task) {
                    return Err(Error::contract("single-task training needs one task throughout"));
                }
                Ok(batches(s.len(), bs))
            }
            (TrainData::Joint { cod, sod }, Paradigm::Joint1 | Paradigm::Joint2) => {
                if cod.is_empty() || sod.is_empty() {
                    return Err(Error::contract("joint training needs cod and sod samples"));
                }
                Ok(batches(cod.len(), bs).min(batches(sod.len(), bs)))
            }
            (_, p) => Err(Error::contract(format!("training data does not fit paradigm {p}"))),
        }
    }

    pub fn total_steps(&self, data: &TrainData) -> Result<usize> {
        Ok(self.cfg.epochs * self.steps_per_epoch(data)?)
    }

    /// Trains until the schedule ends or `until` steps are complete.
    pub fn run(&mut self, data: &TrainData, until: Option<usize>) -> Result<()> {
        let total = self.total_steps(data)?;
        let end = until.map_or(total, |u| u.min(total));
        let size = self.model.config.img_size;
        let lc = self.cfg.loss.clone();
        let resize = |v: &[Sample]| v.iter().map(|s| resize_sample(s, size, &lc)).collect::<Result<Vec<_>>>();
        let cache = match data {
            TrainData::Single(s) => (resize(s)?, Vec::new()),
            TrainData::Joint { cod, sod } => (resize(cod)?, resize(sod)?),
        };
        while self.step < end {
            self.train_step(&cache, total)?;
        }
        Ok(())
    }

    fn batch_for(&self, samples: &[Resized], label: &str, k: usize) -> Vec<usize> {
        cyclic_batch(self.cfg.seed, label, samples.len(), self.cfg.batch_size, k)
    }

    fn prepare_batch(&mut self, samples: &[Resized], idx: &[usize], use_recon: bool) -> Result<Vec<Prepared>> {
        let ratio = if use_recon { self.cfg.mask_ratio_train } else { 0.0 };
        let n = self.model.config.num_tokens();
        idx.iter()
            .map(|&i| prepare(&samples[i], ratio, self.cfg.augment, n, &self.cfg.loss, &mut self.rng))
            .collect()
    }

    fn train_step(&mut self, cache: &(Vec<Resized>, Vec<Resized>), total: usize) -> Result<()> {
        let s = self.step;
        let lr = poly_lr(s, total, self.cfg.lr0, self.cfg.poly_power)?;
        let out = match self.cfg.paradigm {
            Paradigm::Single => {
                let label = cache.0[0].task.to_string();
                let idx = self.batch_for(&cache.0, &label, s);
                let batch = self.prepare_batch(&cache.0, &idx, true)?;
                task_gradients(&self.model, &batch, &self.cfg.loss, true, 1.0)?
            }
            Paradigm::Joint1 | Paradigm::Joint2 => {
                let use_recon = self.cfg.joint_recon;
                let ci = self.batch_for(&cache.0, "cod", s);
                let si = self.batch_for(&cache.1, "sod", s);
                let cb = self.prepare_batch(&cache.0, &ci, use_recon)?;
                let sb = self.prepare_batch(&cache.1, &si, use_recon)?;
                joint_gradients(&self.model, &cb, &sb, &self.cfg.loss, use_recon)?
            }
        };
        if !out.loss.is_finite() {
            return Err(Error::contract(format!("loss diverged at step {}", s + 1)));
        }
        adam_step(&mut self.model.params, &out.grads, &mut self.opt, lr)?;
        self.step += 1;
        self.trace.push(TraceRow {
            step: self.step,
            lr,
            l_recon: out.l_recon,
            l_seg: out.l_seg,
            l_total: out.loss,
            cod_loss: out.task_losses.map(|t| t.0),
            sod_loss: out.task_losses.map(|t| t.1),
        });
        Ok(())
    }
}

/// Trains one model on single-task data and returns the trainer.
pub fn train_single<T: Real>(model_cfg: ModelConfig, cfg: TrainConfig, samples: Vec<Sample>) -> Result<Trainer<T>> {
    let mut t = Trainer::new(model_cfg, TrainConfig { paradigm: Paradigm::Single, ..cfg })?;
    t.run(&TrainData::Single(samples), None)?;
    Ok(t)
}

/// One joint step on explicit batches: `(cod_loss + sod_loss) / 2`, a single
/// backward pass and a single optimizer step. Returns both task losses.
pub fn joint_train_step<T: Real>(trainer: &mut Trainer<T>, cod: &[Prepared], sod: &[Prepared], lr: f64) -> Result<(f64, f64)> {
    if trainer.cfg.paradigm == Paradigm::Single {
        return Err(Error::contract("joint step under the single paradigm"));
    }
    if cod.is_empty() || sod.is_empty() {
        return Err(Error::contract("joint step needs both batches"));
    }
    let out = joint_gradients(&trainer.model, cod, sod, &trainer.cfg.loss, trainer.cfg.joint_recon)?;
    adam_step(&mut trainer.model.params, &out.grads, &mut trainer.opt, lr)?;
    trainer.step += 1;
    Ok(out.task_losses.expect("joint losses"))
}
