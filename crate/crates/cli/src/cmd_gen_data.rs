//! `fprobe gen-data`: enumerate an arithmetic dataset and write it to disk.

use std::path::PathBuf;

use anyhow::{bail, Result};
use serde::{Deserialize, Serialize};

use fprobe_core::dataset::NumberDataset;

use crate::manifest::{prepare_out_dir, Manifest};

#[derive(Debug, clap::Args, Serialize, Deserialize)]
pub struct Args {
    /// Question style: add (five phrasings), rpn ("a,b+"), or mul.
    #[arg(long)]
    pub task: String,
    /// Largest operand for add/rpn (answers go up to twice this).
    #[arg(long)]
    pub max_operand: Option<usize>,
    /// Largest product for mul.
    #[arg(long)]
    pub max_product: Option<usize>,
    /// Largest single-token number; defaults to the largest answer.
    #[arg(long)]
    pub vocab_max: Option<usize>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Directory for dataset.jsonl, vocab.tsv, meta.json, manifest.json.
    #[arg(long)]
    pub out: PathBuf,
}

pub fn run(mut args: Args, threads: Option<usize>) -> Result<()> {
    let out = prepare_out_dir(&args.out)?;
    args.out = out.clone();

    let need_operand = || -> Result<usize> {
        args.max_operand
            .ok_or_else(|| anyhow::anyhow!("--max-operand is required for task {}", args.task))
    };
    let ds = match args.task.as_str() {
        "add" => {
            let m = need_operand()?;
            NumberDataset::gen_addition(m, args.vocab_max.unwrap_or(2 * m), args.seed)?
        }
        "rpn" => {
            let m = need_operand()?;
            NumberDataset::gen_rpn(m, args.vocab_max.unwrap_or(2 * m), args.seed)?
        }
        "mul" => {
            let m = args
                .max_product
                .ok_or_else(|| anyhow::anyhow!("--max-product is required for task mul"))?;
            NumberDataset::gen_multiplication(m, args.vocab_max.unwrap_or(m), args.seed)?
        }
        other => bail!("unknown task {other:?} (expected add, rpn, or mul)"),
    };
    ds.write_dir(&out)?;
    eprintln!(
        "wrote {} examples over {} tokens to {}",
        ds.examples.len(),
        ds.vocab.size(),
        out.display()
    );

    let mut manifest = Manifest::new("gen-data", &args, threads)?;
    for name in ["dataset.jsonl", "vocab.tsv", "meta.json"] {
        manifest.add_output(name);
    }
    manifest.write(&out)
}
