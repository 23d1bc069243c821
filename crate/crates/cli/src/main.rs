//! fprobe: train small arithmetic transformers and probe how they spread
//! the work across Fourier components, layers, and modules.

mod cmd_ablate;
mod cmd_analyze;
mod cmd_gen_data;
mod cmd_train;
mod manifest;
mod svg;

use std::path::PathBuf;

use anyhow::{bail, Result};
use clap::{Parser, Subcommand};

use manifest::Manifest;

#[derive(Parser)]
#[command(name = "fprobe", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate an arithmetic question dataset.
    GenData(cmd_gen_data::Args),
    /// Train a model on a generated dataset.
    Train(cmd_train::Args),
    /// Read-only analyses over a trained checkpoint.
    Analyze {
        #[command(subcommand)]
        what: cmd_analyze::What,
    },
    /// Run an ablation sweep described by a run file.
    Ablate(cmd_ablate::Args),
    /// Re-execute a recorded command from its manifest.
    Rerun(RerunArgs),
}

#[derive(clap::Args)]
struct RerunArgs {
    #[arg(long)]
    manifest: PathBuf,
    /// Redirect artifacts to a different directory.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn rerun(args: RerunArgs, threads: Option<usize>) -> Result<()> {
    let m = Manifest::load(&args.manifest)?;
    m.verify_inputs()?;
    let retarget = |v: &serde_json::Value, field: &str| -> Result<serde_json::Value> {
        let mut v = v.clone();
        if let Some(out) = &args.out {
            v[field] = serde_json::Value::String(out.display().to_string());
        }
        Ok(v)
    };
    match m.command.as_str() {
        "gen-data" => cmd_gen_data::run(serde_json::from_value(retarget(&m.args, "out")?)?, threads),
        "train" => cmd_train::run(serde_json::from_value(retarget(&m.args, "out")?)?, threads),
        "ablate" => cmd_ablate::run(serde_json::from_value(retarget(&m.args, "out")?)?, threads),
        cmd => {
            let args = retarget(&m.args, "out")?;
            let what = match cmd {
                "analyze lens-accuracy" => {
                    cmd_analyze::What::LensAccuracy(serde_json::from_value(args)?)
                }
                "analyze heatmap" => cmd_analyze::What::Heatmap(serde_json::from_value(args)?),
                "analyze spectrum" => cmd_analyze::What::Spectrum(serde_json::from_value(args)?),
                "analyze embed-spectrum" => {
                    cmd_analyze::What::EmbedSpectrum(serde_json::from_value(args)?)
                }
                "analyze cluster" => cmd_analyze::What::Cluster(serde_json::from_value(args)?),
                other => bail!("manifest records unknown command {other:?}"),
            };
            cmd_analyze::run(what, threads)
        }
    }
}

fn error_kind(e: &anyhow::Error) -> &'static str {
    use fprobe_core::CoreError as E;
    if let Some(core) = e.downcast_ref::<E>() {
        match core {
            E::BadModulus(_) | E::OutOfRange { .. } | E::BadConfig(_) => "config",
            E::LengthMismatch { .. } | E::ShapeMismatch { .. } => "shape",
            E::AnswerExceedsVocab { .. }
            | E::EmptyDataset
            | E::UnknownToken(_)
            | E::UnknownTokenId(_)
            | E::SequenceTooLong { .. } => "data",
            E::Diverged { .. } => "training",
            E::BadCheckpoint(_) => "checkpoint",
            E::Io(_) => "io",
            E::Json(_) => "parse",
        }
    } else if e.downcast_ref::<std::io::Error>().is_some() {
        "io"
    } else {
        "error"
    }
}

fn main() {
    let threads = std::env::var("FPROBE_THREADS")
        .ok()
        .and_then(|v| v.parse::<usize>().ok());
    if let Some(n) = threads {
        // ignore failure: the global pool may already exist under a test harness
        let _ = rayon::ThreadPoolBuilder::new()
            .num_threads(n.max(1))
            .build_global();
    }
    let cli = Cli::parse();
    let result = match cli.command {
        Command::GenData(a) => cmd_gen_data::run(a, threads),
        Command::Train(a) => cmd_train::run(a, threads),
        Command::Analyze { what } => cmd_analyze::run(what, threads),
        Command::Ablate(a) => cmd_ablate::run(a, threads),
        Command::Rerun(a) => rerun(a, threads),
    };
    if let Err(e) = result {
        let payload = serde_json::json!({
            "error": format!("{e:#}"),
            "kind": error_kind(&e),
        });
        eprintln!("{payload}");
        std::process::exit(1);
    }
}
