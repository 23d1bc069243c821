//! `fprobe train`: fit a model on a generated dataset and write the
//! checkpoint plus per-epoch metrics. Config file values override built-in
//! defaults; command-line flags override both.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use ndarray::Array2;
use serde::{Deserialize, Serialize};

use fprobe_core::checkpoint::save_model;
use fprobe_core::dataset::{NumberDataset, Split};
use fprobe_core::model::{
    inject_embeddings, synth_fourier_embedding, write_metrics_csv, EmbeddingMode, ModelConfig,
    ModelState, TokenizedExample, TrainHyper,
};

use crate::manifest::{prepare_out_dir, Manifest};
use crate::svg;

#[derive(Debug, Clone, clap::Args, Serialize, Deserialize)]
pub struct Args {
    /// Dataset directory from gen-data.
    #[arg(long)]
    pub data: PathBuf,
    /// TOML config with [model] and [train] tables.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Directory for model.ckpt, metrics.csv, metrics.svg, manifest.json.
    #[arg(long)]
    pub out: PathBuf,
    /// Weight init and shuffle seed.
    #[arg(long)]
    pub seed: Option<u64>,
    /// random | fourier:P1,P2,... (periods) | file:PATH (CSV rows).
    #[arg(long, default_value = "random")]
    pub embedding: String,
    /// Keep the injected token embedding fixed during training.
    #[arg(long, default_value_t = false)]
    pub freeze_embedding: bool,
    /// Coefficient scale for the low-frequency ramp in fourier embeddings.
    #[arg(long)]
    pub embed_low_weight: Option<f64>,

    #[arg(long)]
    pub layers: Option<usize>,
    #[arg(long)]
    pub d_model: Option<usize>,
    #[arg(long)]
    pub heads: Option<usize>,
    #[arg(long)]
    pub d_ff: Option<usize>,

    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub lr_start: Option<f64>,
    #[arg(long)]
    pub lr_end: Option<f64>,
    #[arg(long)]
    pub weight_decay: Option<f64>,
}

/// Built-in reference shape: small enough that a full run fits in minutes
/// on one CPU core, big enough that single-component filters at p = 101
/// leave the stream a usable subspace.
const DEFAULT_LAYERS: usize = 2;
const DEFAULT_D_MODEL: usize = 128;
const DEFAULT_HEADS: usize = 4;
const DEFAULT_D_FF: usize = 256;
const DEFAULT_EMBED_LOW_WEIGHT: f64 = 0.1;

#[derive(Debug, Default, Deserialize)]
struct FileConfig {
    #[serde(default)]
    model: ModelSection,
    #[serde(default)]
    train: TrainSection,
}

#[derive(Debug, Default, Deserialize)]
struct ModelSection {
    layers: Option<usize>,
    d_model: Option<usize>,
    heads: Option<usize>,
    d_ff: Option<usize>,
}

#[derive(Debug, Default, Deserialize)]
struct TrainSection {
    epochs: Option<usize>,
    batch_size: Option<usize>,
    lr_start: Option<f64>,
    lr_end: Option<f64>,
    weight_decay: Option<f64>,
    seed: Option<u64>,
    embedding: Option<String>,
    freeze_embedding: Option<bool>,
    embed_low_weight: Option<f64>,
}

enum EmbedInit {
    Random,
    Fourier(Vec<f64>),
    File(PathBuf),
}

fn parse_embedding(s: &str) -> Result<EmbedInit> {
    if s == "random" {
        return Ok(EmbedInit::Random);
    }
    if let Some(list) = s.strip_prefix("fourier:") {
        let periods = list
            .split(',')
            .map(|t| {
                t.trim()
                    .parse::<f64>()
                    .with_context(|| format!("bad period {t:?} in --embedding"))
            })
            .collect::<Result<Vec<f64>>>()?;
        if periods.is_empty() {
            bail!("--embedding fourier: needs at least one period");
        }
        return Ok(EmbedInit::Fourier(periods));
    }
    if let Some(path) = s.strip_prefix("file:") {
        return Ok(EmbedInit::File(PathBuf::from(path)));
    }
    bail!("--embedding must be random, fourier:PERIODS, or file:PATH, got {s:?}");
}

/// CSV matrix: one row per line, comma-separated floats.
fn read_matrix_csv(path: &Path) -> Result<Array2<f64>> {
    let text =
        std::fs::read_to_string(path).with_context(|| format!("read {}", path.display()))?;
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let row = line
            .split(',')
            .map(|t| {
                t.trim()
                    .parse::<f64>()
                    .with_context(|| format!("{}:{}: bad float {t:?}", path.display(), i + 1))
            })
            .collect::<Result<Vec<f64>>>()?;
        if let Some(first) = rows.first() {
            if row.len() != first.len() {
                bail!("{}:{}: ragged row", path.display(), i + 1);
            }
        }
        rows.push(row);
    }
    if rows.is_empty() {
        bail!("{} holds no rows", path.display());
    }
    let (r, c) = (rows.len(), rows[0].len());
    Array2::from_shape_vec((r, c), rows.into_iter().flatten().collect())
        .map_err(|e| anyhow::anyhow!("{}: {e}", path.display()))
}

pub fn pairs_for_split(ds: &NumberDataset, split: Split) -> Vec<TokenizedExample> {
    ds.split_examples(split)
        .into_iter()
        .map(|e| (e.tokens.clone(), e.answer))
        .collect()
}

pub fn run(mut args: Args, threads: Option<usize>) -> Result<()> {
    let out = prepare_out_dir(&args.out)?;
    args.out = out.clone();
    args.data = args.data.canonicalize().context("--data directory")?;
    if let Some(c) = &args.config {
        args.config = Some(c.canonicalize().context("--config file")?);
    }

    let file: FileConfig = match &args.config {
        Some(path) => toml::from_str(
            &std::fs::read_to_string(path).with_context(|| format!("read {}", path.display()))?,
        )
        .with_context(|| format!("parse {}", path.display()))?,
        None => FileConfig::default(),
    };

    // flags > config file > defaults
    if args.embedding == "random" {
        if let Some(e) = &file.train.embedding {
            args.embedding = e.clone();
        }
    }
    let embed = parse_embedding(&args.embedding)?;
    if let EmbedInit::File(p) = &embed {
        let canon = p.canonicalize().context("--embedding file")?;
        args.embedding = format!("file:{}", canon.display());
    }
    args.freeze_embedding =
        args.freeze_embedding || file.train.freeze_embedding.unwrap_or(false);
    let embed_low_weight = args
        .embed_low_weight
        .or(file.train.embed_low_weight)
        .unwrap_or(DEFAULT_EMBED_LOW_WEIGHT);
    args.embed_low_weight = Some(embed_low_weight);
    let seed = args.seed.or(file.train.seed).unwrap_or(0);
    args.seed = Some(seed);

    let defaults = TrainHyper::default();
    let hyper = TrainHyper {
        epochs: args.epochs.or(file.train.epochs).unwrap_or(defaults.epochs),
        batch_size: args
            .batch_size
            .or(file.train.batch_size)
            .unwrap_or(defaults.batch_size),
        lr_start: args
            .lr_start
            .or(file.train.lr_start)
            .unwrap_or(defaults.lr_start),
        lr_end: args.lr_end.or(file.train.lr_end).unwrap_or(defaults.lr_end),
        weight_decay: args
            .weight_decay
            .or(file.train.weight_decay)
            .unwrap_or(defaults.weight_decay),
        seed,
        ..defaults
    };
    args.epochs = Some(hyper.epochs);
    args.batch_size = Some(hyper.batch_size);
    args.lr_start = Some(hyper.lr_start);
    args.lr_end = Some(hyper.lr_end);
    args.weight_decay = Some(hyper.weight_decay);

    let ds = NumberDataset::read_dir(&args.data)?;
    let config = ModelConfig {
        n_layers: args.layers.or(file.model.layers).unwrap_or(DEFAULT_LAYERS),
        d_model: args
            .d_model
            .or(file.model.d_model)
            .unwrap_or(DEFAULT_D_MODEL),
        n_heads: args.heads.or(file.model.heads).unwrap_or(DEFAULT_HEADS),
        d_ff: args.d_ff.or(file.model.d_ff).unwrap_or(DEFAULT_D_FF),
        vocab_size: ds.vocab.size(),
        n_numbers: ds.vocab.n_numbers(),
        max_seq_len: ds.max_question_len(),
        embedding_mode: EmbeddingMode::Random,
        seed,
    };
    args.layers = Some(config.n_layers);
    args.d_model = Some(config.d_model);
    args.heads = Some(config.n_heads);
    args.d_ff = Some(config.d_ff);

    let mut model = ModelState::<f32>::init(config)?;
    match &embed {
        EmbedInit::Random => {}
        EmbedInit::Fourier(periods) => {
            let w = synth_fourier_embedding(
                model.config.n_numbers,
                model.config.d_model,
                periods,
                embed_low_weight,
                seed,
            )?;
            let w32 = w.mapv(|v| v as f32);
            inject_embeddings(&mut model, w32.view(), args.freeze_embedding)?;
        }
        EmbedInit::File(path) => {
            let w = read_matrix_csv(path)?;
            let w32 = w.mapv(|v| v as f32);
            inject_embeddings(&mut model, w32.view(), args.freeze_embedding)?;
        }
    }

    let train_pairs = pairs_for_split(&ds, Split::Train);
    let val_pairs = pairs_for_split(&ds, Split::Val);
    let pad = ds.vocab.pad_id();
    eprintln!(
        "training {} params on {} examples ({} val), {} epochs",
        model.n_params(),
        train_pairs.len(),
        val_pairs.len(),
        hyper.epochs
    );
    let metrics = fprobe_core::model::train(
        &mut model,
        &train_pairs,
        &val_pairs,
        pad,
        &hyper,
        |m| {
            if m.epoch % 10 == 0 || m.epoch + 1 == hyper.epochs {
                eprintln!(
                    "epoch {:4}  train_loss {:.4}  val_loss {:.4}  val_acc {:.4}",
                    m.epoch, m.train_loss, m.val_loss, m.val_accuracy
                );
            }
        },
    )?;

    save_model(&model, &out.join("model.ckpt"))?;
    let mut csv = Vec::new();
    write_metrics_csv(&metrics, &mut csv)?;
    std::fs::write(out.join("metrics.csv"), csv)?;

    let tl: Vec<f64> = metrics.iter().map(|m| m.train_loss).collect();
    let vl: Vec<f64> = metrics.iter().map(|m| m.val_loss).collect();
    let va: Vec<f64> = metrics.iter().map(|m| m.val_accuracy).collect();
    std::fs::write(
        out.join("metrics.svg"),
        svg::line_plot(
            "training curves",
            "epoch",
            "loss / accuracy",
            &[("train_loss", &tl), ("val_loss", &vl), ("val_acc", &va)],
        ),
    )?;

    let mut manifest = Manifest::new("train", &args, threads)?;
    for name in ["dataset.jsonl", "vocab.tsv", "meta.json"] {
        manifest.add_input(&args.data.join(name))?;
    }
    if let Some(c) = &args.config {
        manifest.add_input(c)?;
    }
    if let EmbedInit::File(_) = &embed {
        if let Some(p) = args.embedding.strip_prefix("file:") {
            manifest.add_input(Path::new(p))?;
        }
    }
    for name in ["model.ckpt", "metrics.csv", "metrics.svg"] {
        manifest.add_output(name);
    }
    manifest.write(&out)
}
