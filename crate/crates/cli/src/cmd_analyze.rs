//! `fprobe analyze`: read-only probes over a trained checkpoint. Each
//! subcommand writes CSV artifacts (plus convenience SVGs) and a manifest.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};

use fprobe_core::checkpoint::load_model;
use fprobe_core::dataset::{NumberDataset, Split};
use fprobe_core::embed::{
    cluster_embeddings, embedding_spectrum, mult10_association, write_clusters_csv,
    write_spectrum_csv,
};
use fprobe_core::fourier::{outlier_components, FourierBasis};
use fprobe_core::lens::{
    accuracy_within, avg_spectrum, default_layer_band, module_heatmap, write_accuracy_csv,
    write_heatmap_csv, Module,
};
use fprobe_core::model::{ModelState, TokenizedExample};

use crate::cmd_train::pairs_for_split;
use crate::manifest::{prepare_out_dir, Manifest};
use crate::svg;

#[derive(Debug, clap::Subcommand)]
pub enum What {
    /// Per-layer lens accuracy within +/-k of the answer.
    LensAccuracy(LensAccuracyArgs),
    /// Module-contribution logits around one example's answer.
    Heatmap(HeatmapArgs),
    /// Average Fourier spectrum of a module's decoded contributions.
    Spectrum(SpectrumArgs),
    /// Fourier spectrum of the number-token embedding matrix.
    EmbedSpectrum(EmbedSpectrumArgs),
    /// k-means clusters of number embeddings with a 2-D projection.
    Cluster(ClusterArgs),
}

#[derive(Debug, clap::Args, Serialize, Deserialize)]
pub struct CommonArgs {
    #[arg(long)]
    pub ckpt: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, clap::Args, Serialize, Deserialize)]
pub struct LensAccuracyArgs {
    #[command(flatten)]
    #[serde(flatten)]
    pub common: CommonArgs,
    #[arg(long)]
    pub data: PathBuf,
    /// Comma-separated ascending tolerances.
    #[arg(long, default_value = "0,1,2,5,10")]
    pub ks: String,
    #[arg(long, default_value = "val")]
    pub split: String,
}

#[derive(Debug, clap::Args, Serialize, Deserialize)]
pub struct HeatmapArgs {
    #[command(flatten)]
    #[serde(flatten)]
    pub common: CommonArgs,
    #[arg(long)]
    pub data: PathBuf,
    /// Index into the chosen split.
    #[arg(long, default_value_t = 0)]
    pub index: usize,
    /// Numbers shown: answer +/- window.
    #[arg(long, default_value_t = 10)]
    pub window: usize,
    /// all | last | band | comma-separated layer ids.
    #[arg(long, default_value = "all")]
    pub layers: String,
    #[arg(long, default_value = "val")]
    pub split: String,
}

#[derive(Debug, clap::Args, Serialize, Deserialize)]
pub struct SpectrumArgs {
    #[command(flatten)]
    #[serde(flatten)]
    pub common: CommonArgs,
    #[arg(long)]
    pub data: PathBuf,
    /// attn or mlp.
    #[arg(long, default_value = "mlp")]
    pub module: String,
    #[arg(long, default_value = "band")]
    pub layers: String,
    #[arg(long, default_value = "val")]
    pub split: String,
}

#[derive(Debug, clap::Args, Serialize, Deserialize)]
pub struct EmbedSpectrumArgs {
    #[command(flatten)]
    #[serde(flatten)]
    pub common: CommonArgs,
}

#[derive(Debug, clap::Args, Serialize, Deserialize)]
pub struct ClusterArgs {
    #[command(flatten)]
    #[serde(flatten)]
    pub common: CommonArgs,
    #[arg(long, default_value_t = 10)]
    pub k: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

pub fn parse_split(s: &str) -> Result<Split> {
    match s {
        "train" => Ok(Split::Train),
        "val" => Ok(Split::Val),
        "test" => Ok(Split::Test),
        other => bail!("unknown split {other:?}"),
    }
}

pub fn parse_layers(spec: &str, n_layers: usize) -> Result<Vec<usize>> {
    match spec {
        "all" => Ok((0..n_layers).collect()),
        "last" => Ok(vec![n_layers - 1]),
        "band" => Ok(default_layer_band(n_layers)),
        list => list
            .split(',')
            .map(|t| {
                let l: usize = t.trim().parse().with_context(|| format!("bad layer {t:?}"))?;
                if l >= n_layers {
                    bail!("layer {l} out of range (model has {n_layers})");
                }
                Ok(l)
            })
            .collect(),
    }
}

fn parse_module(s: &str) -> Result<Module> {
    match s {
        "attn" => Ok(Module::Attn),
        "mlp" => Ok(Module::Mlp),
        other => bail!("--module must be attn or mlp, got {other:?}"),
    }
}

struct Loaded {
    model: ModelState<f64>,
    data: Option<(NumberDataset, Vec<TokenizedExample>)>,
}

fn load(
    common: &mut CommonArgs,
    data: Option<(&mut PathBuf, &str)>,
    manifest: &mut Vec<PathBuf>,
) -> Result<Loaded> {
    common.ckpt = common.ckpt.canonicalize().context("--ckpt")?;
    manifest.push(common.ckpt.clone());
    let model = load_model(&common.ckpt)?.cast::<f64>();
    let data = match data {
        None => None,
        Some((dir, split)) => {
            *dir = dir.canonicalize().context("--data")?;
            for name in ["dataset.jsonl", "vocab.tsv", "meta.json"] {
                manifest.push(dir.join(name));
            }
            let ds = NumberDataset::read_dir(dir)?;
            if ds.vocab.size() != model.config.vocab_size {
                bail!(
                    "dataset vocabulary ({} tokens) does not match the checkpoint ({})",
                    ds.vocab.size(),
                    model.config.vocab_size
                );
            }
            let pairs = pairs_for_split(&ds, parse_split(split)?);
            if pairs.is_empty() {
                bail!("split {split:?} is empty");
            }
            Some((ds, pairs))
        }
    };
    Ok(Loaded { model, data })
}

fn finish(
    command: &str,
    args: impl Serialize,
    threads: Option<usize>,
    inputs: &[PathBuf],
    outputs: &[&str],
    out: &Path,
) -> Result<()> {
    let mut m = Manifest::new(command, args, threads)?;
    for p in inputs {
        m.add_input(p)?;
    }
    for o in outputs {
        m.add_output(o);
    }
    m.write(out)
}

pub fn run(what: What, threads: Option<usize>) -> Result<()> {
    match what {
        What::LensAccuracy(a) => lens_accuracy(a, threads),
        What::Heatmap(a) => heatmap(a, threads),
        What::Spectrum(a) => spectrum(a, threads),
        What::EmbedSpectrum(a) => embed_spectrum(a, threads),
        What::Cluster(a) => cluster(a, threads),
    }
}

fn lens_accuracy(mut args: LensAccuracyArgs, threads: Option<usize>) -> Result<()> {
    let out = prepare_out_dir(&args.common.out)?;
    args.common.out = out.clone();
    let mut inputs = Vec::new();
    let loaded = load(
        &mut args.common,
        Some((&mut args.data, &args.split.clone())),
        &mut inputs,
    )?;
    let (_, pairs) = loaded.data.as_ref().unwrap();
    let ks = args
        .ks
        .split(',')
        .map(|t| t.trim().parse::<usize>().with_context(|| format!("bad k {t:?}")))
        .collect::<Result<Vec<usize>>>()?;
    let table = accuracy_within(&loaded.model, pairs, &ks)?;
    let mut csv = Vec::new();
    write_accuracy_csv(&table, &mut csv)?;
    std::fs::write(out.join("lens_accuracy.csv"), csv)?;
    finish(
        "analyze lens-accuracy",
        &args,
        threads,
        &inputs,
        &["lens_accuracy.csv"],
        &out,
    )
}

fn heatmap(mut args: HeatmapArgs, threads: Option<usize>) -> Result<()> {
    let out = prepare_out_dir(&args.common.out)?;
    args.common.out = out.clone();
    let mut inputs = Vec::new();
    let loaded = load(
        &mut args.common,
        Some((&mut args.data, &args.split.clone())),
        &mut inputs,
    )?;
    let (_, pairs) = loaded.data.as_ref().unwrap();
    if args.index >= pairs.len() {
        bail!("--index {} past the end of the split ({})", args.index, pairs.len());
    }
    let (tokens, answer) = &pairs[args.index];
    let layers = parse_layers(&args.layers, loaded.model.config.n_layers)?;
    let h = module_heatmap(&loaded.model, tokens, *answer, &layers, args.window)?;
    if h.clamped {
        eprintln!(
            "note: window {} around answer {} hits the vocabulary edge; rows truncated",
            args.window, answer
        );
    }
    let mut attn = Vec::new();
    write_heatmap_csv(&h, &h.attn, &mut attn)?;
    std::fs::write(out.join("heatmap_attn.csv"), attn)?;
    let mut mlp = Vec::new();
    write_heatmap_csv(&h, &h.mlp, &mut mlp)?;
    std::fs::write(out.join("heatmap_mlp.csv"), mlp)?;
    finish(
        "analyze heatmap",
        &args,
        threads,
        &inputs,
        &["heatmap_attn.csv", "heatmap_mlp.csv"],
        &out,
    )
}

fn spectrum(mut args: SpectrumArgs, threads: Option<usize>) -> Result<()> {
    let out = prepare_out_dir(&args.common.out)?;
    args.common.out = out.clone();
    let mut inputs = Vec::new();
    let loaded = load(
        &mut args.common,
        Some((&mut args.data, &args.split.clone())),
        &mut inputs,
    )?;
    let (_, pairs) = loaded.data.as_ref().unwrap();
    let model = &loaded.model;
    let layers = parse_layers(&args.layers, model.config.n_layers)?;
    let module = parse_module(&args.module)?;
    let basis = FourierBasis::<f64>::new(model.config.n_numbers)?;
    let spec = avg_spectrum(model, &basis, pairs, &layers, module)?;

    let mut csv = Vec::new();
    write_spectrum_csv(spec.p, &spec.magnitudes, &mut csv)?;
    std::fs::write(out.join("spectrum.csv"), csv)?;

    // top-10 components by magnitude, flagged if the sigma-clipped high-band
    // detector marks them (k >= default tau only)
    let tau = fprobe_core::filters::default_tau(spec.p);
    let outliers = outlier_components(&spec.magnitudes, tau);
    let mut ranked: Vec<usize> = (1..spec.magnitudes.len()).collect();
    ranked.sort_by(|&a, &b| {
        spec.magnitudes[b]
            .partial_cmp(&spec.magnitudes[a])
            .unwrap()
            .then(a.cmp(&b))
    });
    let mut topcsv = String::from("component,period,norm,outlier\n");
    for &k in ranked.iter().take(10) {
        topcsv.push_str(&format!(
            "{},{},{},{}\n",
            k,
            (spec.p - 1) as f64 / k as f64,
            spec.magnitudes[k],
            outliers.contains(&k)
        ));
    }
    std::fs::write(out.join("spectrum_outliers.csv"), topcsv)?;
    std::fs::write(
        out.join("spectrum.svg"),
        svg::line_plot(
            "average module spectrum",
            "component k",
            "magnitude",
            &[("magnitude", &spec.magnitudes)],
        ),
    )?;
    finish(
        "analyze spectrum",
        &args,
        threads,
        &inputs,
        &["spectrum.csv", "spectrum_outliers.csv", "spectrum.svg"],
        &out,
    )
}

fn embed_spectrum(mut args: EmbedSpectrumArgs, threads: Option<usize>) -> Result<()> {
    let out = prepare_out_dir(&args.common.out)?;
    args.common.out = out.clone();
    let mut inputs = Vec::new();
    let loaded = load(&mut args.common, None, &mut inputs)?;
    let model = &loaded.model;
    let basis = FourierBasis::<f64>::new(model.config.n_numbers)?;
    let spec = embedding_spectrum(&basis, model.number_embeddings())?;
    let mut csv = Vec::new();
    write_spectrum_csv(model.config.n_numbers, &spec, &mut csv)?;
    std::fs::write(out.join("embed_spectrum.csv"), csv)?;
    std::fs::write(
        out.join("embed_spectrum.svg"),
        svg::line_plot(
            "number embedding spectrum",
            "component k",
            "norm",
            &[("norm", &spec)],
        ),
    )?;
    finish(
        "analyze embed-spectrum",
        &args,
        threads,
        &inputs,
        &["embed_spectrum.csv", "embed_spectrum.svg"],
        &out,
    )
}

fn cluster(mut args: ClusterArgs, threads: Option<usize>) -> Result<()> {
    let out = prepare_out_dir(&args.common.out)?;
    args.common.out = out.clone();
    let mut inputs = Vec::new();
    let loaded = load(&mut args.common, None, &mut inputs)?;
    let res = cluster_embeddings(loaded.model.number_embeddings(), args.k, args.seed)?;
    let assoc = mult10_association(&res.assignments, args.k);

    let mut csv = Vec::new();
    write_clusters_csv(&res, &mut csv)?;
    std::fs::write(out.join("clusters.csv"), csv)?;
    let stats_json = serde_json::json!({
        "k": args.k,
        "inertia": res.inertia,
        "mult10_chi2": assoc.chi2,
        "mult10_df": assoc.df,
        "mult10_p_value": assoc.p_value,
        "valid": assoc.valid,
    });
    std::fs::write(
        out.join("cluster_stats.json"),
        serde_json::to_string_pretty(&stats_json)? + "\n",
    )?;
    let points: Vec<(f64, f64, usize)> = res
        .assignments
        .iter()
        .enumerate()
        .map(|(i, &c)| (res.coords[(i, 0)], res.coords[(i, 1)], c))
        .collect();
    std::fs::write(
        out.join("clusters.svg"),
        svg::scatter_plot("number embeddings, top-2 PCs", &points),
    )?;
    finish(
        "analyze cluster",
        &args,
        threads,
        &inputs,
        &["clusters.csv", "cluster_stats.json", "clusters.svg"],
        &out,
    )
}
