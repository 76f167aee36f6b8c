use std::fmt;
use std::path::{Path, PathBuf};

use senet_core::data::{self, pnm, synth_dataset, write_dataset, write_text, Sample, Split, Task};
use senet_core::metrics::MetricsReport;
use senet_core::model::end_to_end_gradcheck;
use senet_core::tensor::gradcheck::primitive_suite;
use senet_core::training::{
    evaluate, load_checkpoint, mask_ratio_sweep, save_checkpoint, threads_from_env, trace_csv, write_sweep_csv,
    Paradigm, TrainData, Trainer,
};
use senet_core::Error;

use crate::config::RunConfig;
use crate::report::{csv_field, emit_report, ReportRow};
use crate::{EXIT_RUNTIME, EXIT_USAGE};

/// Primitive operations are checked in `f64` against this bound.
const PRIMITIVE_TOL: f64 = 1e-6;
const END_TO_END_TOL: f64 = 1e-4;

#[derive(Debug)]
pub(crate) enum CmdError {
    Usage(String),
    Runtime(Error),
    Failed(String),
}

impl CmdError {
    pub(crate) fn code(&self) -> i32 {
        match self {
            CmdError::Usage(_) => EXIT_USAGE,
            _ => EXIT_RUNTIME,
        }
    }
}

impl fmt::Display for CmdError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CmdError::Usage(m) | CmdError::Failed(m) => f.write_str(m),
            CmdError::Runtime(e) => write!(f, "{e}"),
        }
    }
}

impl From<Error> for CmdError {
    fn from(e: Error) -> Self {
        CmdError::Runtime(e)
    }
}

type Result<T> = std::result::Result<T, CmdError>;

fn snapshot(cfg: &RunConfig, path: &Path) -> Result<()> {
    Ok(write_text(path, &cfg.to_text())?)
}

fn synth_split(cfg: &RunConfig, task: Task, split: Split) -> Result<Vec<Sample>> {
    let s = cfg.synth(task);
    Ok(match split {
        Split::Train => synth_dataset(&s, 0, cfg.train_count)?,
        Split::Test => synth_dataset(&s, cfg.train_count, cfg.test_count)?,
    })
}

fn load_or_synth(cfg: &RunConfig, manifest: Option<&PathBuf>, task: Task, split: Split) -> Result<Vec<Sample>> {
    match manifest {
        Some(m) => {
            let s = data::load_dataset(m)?;
            if let Some(bad) = s.iter().find(|x| x.task != task) {
                return Err(CmdError::Usage(format!(
                    "{}: sample {} is tagged {}, expected {task}",
                    m.display(),
                    bad.name,
                    bad.task
                )));
            }
            Ok(s)
        }
        None => synth_split(cfg, task, split),
    }
}

fn dataset_name(manifest: Option<&PathBuf>, task: Task) -> String {
    let Some(m) = manifest else {
        return format!("synthetic_{task}");
    };
    let stem = m.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    match m.parent().and_then(|p| p.file_name()) {
        Some(dir) => format!("{}_{stem}", dir.to_string_lossy()),
        None => stem,
    }
}

fn train_data(cfg: &RunConfig) -> Result<TrainData> {
    Ok(match cfg.train.paradigm {
        Paradigm::Single => TrainData::Single(load_or_synth(cfg, cfg.manifest.as_ref(), cfg.task, Split::Train)?),
        Paradigm::Joint1 | Paradigm::Joint2 => TrainData::Joint {
            cod: load_or_synth(cfg, cfg.cod_manifest.as_ref(), Task::Cod, Split::Train)?,
            sod: load_or_synth(cfg, cfg.sod_manifest.as_ref(), Task::Sod, Split::Train)?,
        },
    })
}

pub(crate) fn gen_data(cfg: &RunConfig) -> Result<()> {
    let tasks = match cfg.train.paradigm {
        Paradigm::Single => vec![cfg.task],
        _ => vec![Task::Cod, Task::Sod],
    };
    for task in tasks {
        let dir = cfg.out.join("data").join(task.to_string());
        for split in [Split::Train, Split::Test] {
            let samples = synth_split(cfg, task, split)?;
            let m = write_dataset(&dir, split, &samples)?;
            println!("{task} {split}: {} samples -> {}", samples.len(), m.display());
        }
    }
    snapshot(cfg, &cfg.out.join("config.txt"))
}

pub(crate) fn train(mut cfg: RunConfig, resume: bool) -> Result<()> {
    let ckpt = cfg.checkpoint_path();
    let mut trainer: Trainer<f32> = if resume {
        if cfg.ckpt.is_none() {
            return Err(CmdError::Usage("--resume needs --ckpt".into()));
        }
        let t = load_checkpoint(&ckpt)?;
        // the checkpoint's settings govern the rest of the schedule
        cfg.model = t.model.config.clone();
        cfg.train = t.cfg.clone();
        t
    } else {
        Trainer::new(cfg.model.clone(), cfg.train.clone())?
    };
    let data = train_data(&cfg)?;
    let start = trainer.step;
    let total = trainer.total_steps(&data)?;
    let until = (cfg.max_steps > 0).then_some(cfg.max_steps);
    trainer.run(&data, until)?;

    save_checkpoint(&ckpt, &trainer)?;
    let trace_path = cfg.out.join("trace.csv");
    let fresh = trace_csv(&trainer.trace);
    let text = match std::fs::read_to_string(&trace_path) {
        Ok(old) if resume => {
            let mut kept: Vec<&str> = old.lines().take(1).collect();
            kept.extend(old.lines().skip(1).filter(|l| {
                l.split(',').next().and_then(|s| s.parse::<usize>().ok()).is_some_and(|s| s <= start)
            }));
            let mut t = kept.join("\n");
            t.push('\n');
            for l in fresh.lines().skip(1) {
                t.push_str(l);
                t.push('\n');
            }
            t
        }
        _ => fresh,
    };
    write_text(&trace_path, &text)?;
    snapshot(&cfg, &cfg.out.join("config.txt"))?;
    let last = trainer.trace.last();
    println!(
        "trained steps {}..{} of {total}; last loss {}; checkpoint {}",
        start + 1,
        trainer.step,
        last.map_or("n/a".into(), |r| r.l_total.to_string()),
        ckpt.display()
    );
    Ok(())
}

fn metrics_csv(report: &MetricsReport) -> String {
    let mut s = String::from("name,s_alpha,e_phi,f_beta_w,f_beta_m,f_beta,mae,score,degenerate\n");
    for m in &report.images {
        let f = match report.task {
            Task::Cod => m.f_beta_w,
            Task::Sod => m.f_beta_m,
        };
        let score = senet_core::metrics::score(m.s_alpha, m.e_phi, f, m.mae);
        s.push_str(&format!(
            "{},{},{},{},{},{},{},{},{}\n",
            csv_field(&m.name),
            m.s_alpha,
            m.e_phi,
            m.f_beta_w,
            m.f_beta_m,
            f,
            m.mae,
            score,
            m.degenerate as u8
        ));
    }
    let r = report;
    s.push_str(&format!(
        "MEAN,{},{},{},{},{},{},{},{}\n",
        r.s_alpha, r.e_phi, r.f_beta_w, r.f_beta_m, r.f_beta, r.mae, r.score, r.degenerate
    ));
    s
}

fn require_ckpt(cfg: &RunConfig) -> Result<PathBuf> {
    cfg.ckpt
        .clone()
        .ok_or_else(|| CmdError::Usage("this command needs --ckpt".into()))
}

pub(crate) fn eval(cfg: &RunConfig) -> Result<()> {
    let t: Trainer<f32> = load_checkpoint(&require_ckpt(cfg)?)?;
    let samples = load_or_synth(cfg, cfg.manifest.as_ref(), cfg.task, Split::Test)?;
    let name = dataset_name(cfg.manifest.as_ref(), cfg.task);
    let ev = evaluate(&t.model, &samples, cfg.task, &name, threads_from_env())?;
    let r = &ev.report;
    write_text(&cfg.out.join("metrics.csv"), &metrics_csv(r))?;
    let json = serde_json::to_string_pretty(r).map_err(|e| Error::Format(e.to_string()))?;
    write_text(&cfg.out.join("report.json"), &(json + "\n"))?;
    snapshot(cfg, &cfg.out.join("config.txt"))?;
    println!(
        "{name} ({} images): S {:.4} E {:.4} F {:.4} MAE {:.4} score {:.4}",
        r.images.len(),
        r.s_alpha,
        r.e_phi,
        r.f_beta,
        r.mae,
        r.score
    );
    Ok(())
}

pub(crate) fn predict(cfg: &RunConfig, input: &Path) -> Result<()> {
    let t: Trainer<f32> = load_checkpoint(&require_ckpt(cfg)?)?;
    let img = pnm::read(input)?;
    if img.ndim() != 3 {
        return Err(CmdError::Usage(format!("{} is not an RGB (P6) image", input.display())));
    }
    let out = if cfg.out.extension().is_some_and(|e| e == "pgm") {
        cfg.out.clone()
    } else {
        let stem = input.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
        cfg.out.join(format!("{stem}.pgm"))
    };
    let (pred, _) = t.model.predict(&img, cfg.task)?;
    pnm::write(&out, &pred)?;
    snapshot(cfg, &out.with_extension("config.txt"))?;
    println!("{}", out.display());
    Ok(())
}

pub(crate) fn sweep(cfg: &RunConfig) -> Result<()> {
    if cfg.train.paradigm != Paradigm::Single {
        return Err(CmdError::Usage("sweep trains single-task models; use --paradigm single".into()));
    }
    let train = load_or_synth(cfg, cfg.manifest.as_ref(), cfg.task, Split::Train)?;
    let test = load_or_synth(cfg, cfg.test_manifest.as_ref(), cfg.task, Split::Test)?;
    let rows = mask_ratio_sweep::<f32>(&cfg.model, &cfg.train, &train, &test, &cfg.sweep_ratios, threads_from_env())?;
    write_sweep_csv(&cfg.out.join("sweep.csv"), &rows)?;
    snapshot(cfg, &cfg.out.join("config.txt"))?;
    for r in &rows {
        println!("ratio {:<5} score {:.4}", r.ratio, r.report.score);
    }
    Ok(())
}

pub(crate) fn gradcheck(cfg: &RunConfig) -> Result<()> {
    let seed = cfg.model.seed;
    let mut failed = Vec::new();
    for r in primitive_suite(seed, 3)? {
        let ok = r.max_rel_error < PRIMITIVE_TOL;
        println!("{:<28} {:.3e} {}", r.name, r.max_rel_error, if ok { "ok" } else { "FAIL" });
        if !ok {
            failed.push(r.name);
        }
    }
    for r in end_to_end_gradcheck(seed)? {
        let ok = r.max_rel_error < END_TO_END_TOL;
        let name = format!("model/{}", r.name);
        println!("{name:<28} {:.3e} {}", r.max_rel_error, if ok { "ok" } else { "FAIL" });
        if !ok {
            failed.push(name);
        }
    }
    if failed.is_empty() {
        Ok(())
    } else {
        Err(CmdError::Failed(format!("gradient check failed for {}", failed.join(", "))))
    }
}

pub(crate) fn report(cfg: &RunConfig, inputs: &[PathBuf]) -> Result<()> {
    let mut rows = Vec::new();
    for p in inputs {
        let text = std::fs::read_to_string(p).map_err(|e| Error::Io {
            context: format!("reading {}", p.display()),
            source: e,
        })?;
        let r: MetricsReport = serde_json::from_str(&text)
            .map_err(|e| Error::Format(format!("{}: not an evaluation report: {e}", p.display())))?;
        rows.push(ReportRow::from(&r));
    }
    let (c, j) = emit_report(&rows, &cfg.out)?;
    println!("{}\n{}", c.display(), j.display());
    Ok(())
}
