use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{train_single, TrainConfig};
use crate::data::{Sample, Task};
use crate::error::{Error, Result};
use crate::metrics::{image_metrics, MetricsReport};
use crate::model::{ModelConfig, Senet};
use crate::tensor::Real;

/// A report plus the number of tokens the encoder processed per image.
#[derive(Clone, Debug)]
pub struct Evaluation {
    pub report: MetricsReport,
    pub encoder_tokens: Vec<usize>,
}

/// Worker count from `SENET_THREADS`, default 1.
pub fn threads_from_env() -> usize {
    std::env::var("SENET_THREADS")
        .ok()
        .and_then(|v| v.trim().parse().ok())
        .filter(|&n: &usize| n > 0)
        .unwrap_or(1)
}

/// Unmasked inference on every sample, metrics at ground-truth resolution,
/// means in sample order. `task` picks the decoder and the F-measure.
pub fn evaluate<T: Real>(
    model: &Senet<T>,
    samples: &[Sample],
    task: Task,
    dataset: &str,
    threads: usize,
) -> Result<Evaluation> {
    if samples.is_empty() {
        return Err(Error::contract("evaluation over an empty dataset"));
    }
    let one = |s: &Sample| -> Result<(crate::metrics::ImageMetrics, usize)> {
        let (pred, tokens) = model.predict(&s.image, task)?;
        Ok((image_metrics(&s.name, &pred, &s.mask)?, tokens))
    };
    let results: Vec<_> = if threads <= 1 {
        samples.iter().map(one).collect::<Result<_>>()?
    } else {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .map_err(|e| Error::contract(format!("thread pool: {e}")))?;
        pool.install(|| samples.par_iter().map(one).collect::<Result<_>>())?
    };
    let (images, encoder_tokens): (Vec<_>, Vec<_>) = results.into_iter().unzip();
    Ok(Evaluation {
        report: MetricsReport::from_images(dataset, task, images)?,
        encoder_tokens,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub ratio: f64,
    pub report: MetricsReport,
}

/// Trains one model per training mask ratio from the same seed and
/// evaluates each on `test`.
pub fn mask_ratio_sweep<T: Real>(
    model_cfg: &ModelConfig,
    base: &TrainConfig,
    train: &[Sample],
    test: &[Sample],
    ratios: &[f64],
    threads: usize,
) -> Result<Vec<SweepRow>> {
    if let Some(r) = ratios.iter().find(|r| !(0.0..=0.95).contains(*r)) {
        return Err(Error::contract(format!("sweep ratio {r} outside [0, 0.95]")));
    }
    let task = test
        .first()
        .map(|s| s.task)
        .ok_or_else(|| Error::contract("sweep needs test samples"))?;
    ratios
        .iter()
        .map(|&ratio| {
            let cfg = TrainConfig {
                mask_ratio_train: ratio,
                ..base.clone()
            };
            let t = train_single::<T>(model_cfg.clone(), cfg, train.to_vec())?;
            let ev = evaluate(&t.model, test, task, &format!("ratio_{ratio}"), threads)?;
            Ok(SweepRow {
                ratio,
                report: ev.report,
            })
        })
        .collect()
}

/// `ratio,s_alpha,e_phi,f_beta,mae,score`, one row per ratio.
pub fn write_sweep_csv(path: &Path, rows: &[SweepRow]) -> Result<()> {
    let mut out = String::from("ratio,s_alpha,e_phi,f_beta,mae,score\n");
    for r in rows {
        let m = &r.report;
        out.push_str(&format!(
            "{},{},{},{},{},{}\n",
            r.ratio, m.s_alpha, m.e_phi, m.f_beta, m.mae, m.score
        ));
    }
    crate::data::write_text(path, &out)
}
