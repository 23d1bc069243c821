//! `fprobe ablate`: run every spec in a TOML run file against one checkpoint
//! and emit a combined sweep table plus per-spec error histograms.

use std::path::PathBuf;

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};

use fprobe_core::ablation::{ablate_eval, write_histogram_csv, write_sweep_csv, RunFile};
use fprobe_core::checkpoint::load_model;
use fprobe_core::dataset::NumberDataset;
use fprobe_core::fourier::FourierBasis;

use crate::cmd_analyze::parse_split;
use crate::cmd_train::pairs_for_split;
use crate::manifest::{prepare_out_dir, Manifest};

#[derive(Debug, clap::Args, Serialize, Deserialize)]
pub struct Args {
    #[arg(long)]
    pub ckpt: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    /// TOML file with [[ablation]] tables.
    #[arg(long)]
    pub run_file: PathBuf,
    #[arg(long, default_value = "val")]
    pub split: String,
    #[arg(long)]
    pub out: PathBuf,
}

fn slug(name: &str) -> String {
    name.chars()
        .map(|c| if c.is_ascii_alphanumeric() { c } else { '_' })
        .collect()
}

pub fn run(mut args: Args, threads: Option<usize>) -> Result<()> {
    let out = prepare_out_dir(&args.out)?;
    args.out = out.clone();
    args.ckpt = args.ckpt.canonicalize().context("--ckpt")?;
    args.data = args.data.canonicalize().context("--data")?;
    args.run_file = args.run_file.canonicalize().context("--run-file")?;

    let run_file: RunFile = toml::from_str(
        &std::fs::read_to_string(&args.run_file)
            .with_context(|| format!("read {}", args.run_file.display()))?,
    )
    .with_context(|| format!("parse {}", args.run_file.display()))?;
    if run_file.ablation.is_empty() {
        bail!("{} lists no [[ablation] ] tables", args.run_file.display());
    }

    let model = load_model(&args.ckpt)?.cast::<f64>();
    let ds = NumberDataset::read_dir(&args.data)?;
    if ds.vocab.size() != model.config.vocab_size {
        bail!(
            "dataset vocabulary ({} tokens) does not match the checkpoint ({})",
            ds.vocab.size(),
            model.config.vocab_size
        );
    }
    let pairs = pairs_for_split(&ds, parse_split(&args.split)?);
    if pairs.is_empty() {
        bail!("split {:?} is empty", args.split);
    }
    let basis = FourierBasis::<f64>::new(model.config.n_numbers)?;

    let mut reports = Vec::new();
    let mut outputs = vec!["sweep.csv".to_string()];
    for (i, raw) in run_file.ablation.into_iter().enumerate() {
        let spec = raw.into_spec()?;
        eprintln!("[{}] {} ...", i, spec.name);
        let report = ablate_eval(&model, &basis, &pairs, &spec)?;
        eprintln!(
            "[{}] {}: loss {:.4} acc {:.4}",
            i, spec.name, report.validation_loss, report.accuracy
        );
        let hist_name = format!("hist_{:02}_{}.csv", i, slug(&report.name));
        let mut hist = Vec::new();
        write_histogram_csv(&report, &mut hist)?;
        std::fs::write(out.join(&hist_name), hist)?;
        outputs.push(hist_name);
        reports.push(report);
    }
    let mut sweep = Vec::new();
    write_sweep_csv(&reports, &mut sweep)?;
    std::fs::write(out.join("sweep.csv"), sweep)?;

    let mut manifest = Manifest::new("ablate", &args, threads)?;
    manifest.add_input(&args.ckpt)?;
    manifest.add_input(&args.run_file)?;
    for name in ["dataset.jsonl", "vocab.tsv", "meta.json"] {
        manifest.add_input(&args.data.join(name))?;
    }
    for o in &outputs {
        manifest.add_output(o);
    }
    manifest.write(&out)
}
