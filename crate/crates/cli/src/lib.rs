//! The `senet` command line.

pub mod config;
pub mod report;

mod commands;

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

use senet_core::data::Task;
use senet_core::training::Paradigm;

pub use config::RunConfig;
pub use report::{emit_report, ReportRow};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_RUNTIME: i32 = 2;

#[derive(Debug, Parser)]
#[command(name = "senet", version, about = "Train and evaluate the masked ViT segmenter")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    #[command(flatten)]
    flags: Flags,
}

#[derive(Debug, Args)]
struct Flags {
    /// key = value file; flags override it
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[arg(long, global = true, value_name = "N")]
    img_size: Option<usize>,
    #[arg(long, global = true, value_name = "N")]
    patch: Option<usize>,
    #[arg(long, global = true, value_name = "F")]
    mask_ratio: Option<f64>,
    #[arg(long, global = true, value_name = "F")]
    lambda: Option<f64>,
    #[arg(long, global = true)]
    paradigm: Option<Paradigm>,
    #[arg(long, global = true)]
    task: Option<Task>,
    #[arg(long, global = true, value_name = "N")]
    epochs: Option<usize>,
    /// Output directory (output file for `predict`)
    #[arg(long, global = true, value_name = "DIR")]
    out: Option<PathBuf>,
    #[arg(long, global = true, value_name = "PATH")]
    ckpt: Option<PathBuf>,
    #[arg(long, global = true, value_name = "PATH")]
    manifest: Option<PathBuf>,
    /// Any config key, repeatable
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    set: Vec<String>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Write synthetic train/test sets with manifests
    GenData,
    /// Train and save a checkpoint plus the loss trace
    Train {
        /// Continue from --ckpt
        #[arg(long)]
        resume: bool,
    },
    /// Score a checkpoint on a test set
    Eval,
    /// Write a prediction map for one image
    Predict {
        #[arg(long = "in", value_name = "PPM")]
        input: PathBuf,
    },
    /// Train once per mask ratio and compare
    Sweep,
    /// Finite-difference gradient checks
    Gradcheck,
    /// Merge evaluation reports into one table
    Report {
        #[arg(long = "in", value_name = "JSON", required = true)]
        inputs: Vec<PathBuf>,
    },
}

impl Flags {
    fn overrides(&self) -> Result<Vec<(String, String)>, String> {
        let mut o = Vec::new();
        let mut put = |k: &str, v: Option<String>| {
            if let Some(v) = v {
                o.push((k.to_string(), v));
            }
        };
        let s = |v: &Option<PathBuf>| v.as_ref().map(|p| p.display().to_string());
        put("seed", self.seed.map(|v| v.to_string()));
        put("img_size", self.img_size.map(|v| v.to_string()));
        put("patch_size", self.patch.map(|v| v.to_string()));
        put("mask_ratio", self.mask_ratio.map(|v| v.to_string()));
        put("lambda", self.lambda.map(|v| v.to_string()));
        put("paradigm", self.paradigm.map(|v| v.to_string()));
        put("task", self.task.map(|v| v.to_string()));
        put("epochs", self.epochs.map(|v| v.to_string()));
        put("out", s(&self.out));
        put("ckpt", s(&self.ckpt));
        put("manifest", s(&self.manifest));
        for kv in &self.set {
            let (k, v) = kv
                .split_once('=')
                .ok_or_else(|| format!("--set expects KEY=VALUE, got {kv:?}"))?;
            o.push((k.trim().to_string(), v.trim().to_string()));
        }
        Ok(o)
    }
}

/// Runs the command line and returns the process exit code.
pub fn dispatch<I, S>(argv: I) -> i32
where
    I: IntoIterator<Item = S>,
    S: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    let cfg = match cli
        .flags
        .overrides()
        .and_then(|o| RunConfig::resolve(cli.flags.config.as_deref(), &o))
    {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {e}");
            return EXIT_USAGE;
        }
    };
    let r = match cli.command {
        Command::GenData => commands::gen_data(&cfg),
        Command::Train { resume } => commands::train(cfg, resume),
        Command::Eval => commands::eval(&cfg),
        Command::Predict { input } => commands::predict(&cfg, &input),
        Command::Sweep => commands::sweep(&cfg),
        Command::Gradcheck => commands::gradcheck(&cfg),
        Command::Report { inputs } => commands::report(&cfg, &inputs),
    };
    match r {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e}");
            e.code()
        }
    }
}
