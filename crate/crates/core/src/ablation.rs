//! Intervention harness: run the model with a Fourier-band filter spliced
//! onto chosen module outputs and tabulate what breaks.
//!
//! The stream update becomes h = h + P(attn_out) + P(mlp_out) for targeted
//! modules at targeted layers and positions; the embedded input h0 is never
//! filtered. A spec with no filter, or a filter that removes nothing, takes
//! the exact unfiltered code path, so its report is bit-identical to plain
//! evaluation. Weights are never touched.

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::Deserialize;

use crate::error::{CoreError, Result};
use crate::filters::{build_projector, FilterSpec};
use crate::fourier::FourierBasis;
use crate::model::{argmax, forward_with_trace, ModelState, ModuleFilter};

#[derive(Debug, Clone, PartialEq)]
pub struct AblationSpec {
    /// Label for reports; defaults to targets + filter label.
    pub name: String,
    /// None = evaluate unfiltered (control row).
    pub filter: Option<FilterSpec>,
    pub attn: bool,
    pub mlp: bool,
    /// Blocks to touch; None = all.
    pub layers: Option<Vec<usize>>,
    /// Sequence positions to touch; None = all.
    pub positions: Option<Vec<usize>>,
}

impl AblationSpec {
    pub fn all_modules(filter: Option<FilterSpec>) -> Self {
        let name = match &filter {
            Some(f) => format!("attn+mlp {}", f.label()),
            None => "attn+mlp none".to_string(),
        };
        Self {
            name,
            filter,
            attn: true,
            mlp: true,
            layers: None,
            positions: None,
        }
    }

    pub fn targets_label(&self) -> String {
        match (self.attn, self.mlp) {
            (true, true) => "attn+mlp".into(),
            (true, false) => "attn".into(),
            (false, true) => "mlp".into(),
            (false, false) => "none".into(),
        }
    }

    pub fn removed_label(&self) -> String {
        self.filter.as_ref().map_or("none".into(), |f| f.label())
    }

    fn validate(&self, n_layers: usize) -> Result<()> {
        if !self.attn && !self.mlp {
            return Err(CoreError::BadConfig(
                "ablation targets must include attn, mlp, or both".into(),
            ));
        }
        if let Some(layers) = &self.layers {
            if layers.is_empty() || layers.iter().any(|&l| l >= n_layers) {
                return Err(CoreError::BadConfig(format!(
                    "ablation layer set out of range (model has {n_layers} layers)"
                )));
            }
        }
        Ok(())
    }
}

/// Signed-error histogram plus the derived fractions the error analysis
/// cares about. Fractions over "errors" mean nonzero errors only; parity is
/// over all examples.
#[derive(Debug, Clone, PartialEq)]
pub struct ErrorStats {
    /// signed (prediction - answer) -> count; zero included.
    pub histogram: BTreeMap<i64, usize>,
    pub n: usize,
    pub n_errors: usize,
    /// Fraction of nonzero errors divisible by 10; NaN when n_errors = 0.
    pub frac_mult10: f64,
    /// Fraction of nonzero errors with |e| <= 6; NaN when n_errors = 0.
    pub frac_within6: f64,
    /// Fraction of all predictions with the answer's parity.
    pub parity_accuracy: f64,
    /// Mean of signed errors over all examples.
    pub mean_signed_error: f64,
}

impl ErrorStats {
    pub fn has_errors(&self) -> bool {
        self.n_errors > 0
    }
}

pub fn error_histogram(predictions: &[u32], answers: &[u32]) -> Result<ErrorStats> {
    if predictions.len() != answers.len() {
        return Err(CoreError::LengthMismatch {
            expected: answers.len(),
            got: predictions.len(),
        });
    }
    let mut histogram = BTreeMap::new();
    let mut n_errors = 0usize;
    let mut mult10 = 0usize;
    let mut within6 = 0usize;
    let mut parity = 0usize;
    let mut signed_sum = 0i64;
    for (&p, &a) in predictions.iter().zip(answers) {
        let e = p as i64 - a as i64;
        *histogram.entry(e).or_insert(0) += 1;
        signed_sum += e;
        if p % 2 == a % 2 {
            parity += 1;
        }
        if e != 0 {
            n_errors += 1;
            if e % 10 == 0 {
                mult10 += 1;
            }
            if e.abs() <= 6 {
                within6 += 1;
            }
        }
    }
    let n = predictions.len();
    let err_frac = |c: usize| {
        if n_errors == 0 {
            f64::NAN
        } else {
            c as f64 / n_errors as f64
        }
    };
    Ok(ErrorStats {
        histogram,
        n,
        n_errors,
        frac_mult10: err_frac(mult10),
        frac_within6: err_frac(within6),
        parity_accuracy: parity as f64 / n as f64,
        mean_signed_error: signed_sum as f64 / n as f64,
    })
}

#[derive(Debug, Clone)]
pub struct AblationReport {
    pub name: String,
    pub targets: String,
    pub removed: String,
    pub validation_loss: f64,
    pub accuracy: f64,
    pub stats: ErrorStats,
    /// round(T_gamma) when a single-component run has an integer period.
    pub modulus: Option<u64>,
    /// Accuracy of prediction mod modulus vs answer mod modulus.
    pub modular_accuracy: Option<f64>,
}

fn layer_mask(n_layers: usize, layers: &Option<Vec<usize>>) -> Vec<bool> {
    match layers {
        None => vec![true; n_layers],
        Some(list) => {
            let mut mask = vec![false; n_layers];
            for &l in list {
                mask[l] = true;
            }
            mask
        }
    }
}

fn position_mask(seq: usize, positions: &Option<Vec<usize>>) -> Option<Vec<bool>> {
    positions.as_ref().map(|list| {
        let mut mask = vec![false; seq];
        for &t in list {
            if t < seq {
                mask[t] = true;
            }
        }
        mask
    })
}

/// Answer cross-entropy of one logit vector.
fn example_loss(logits: &ndarray::Array1<f64>, target: u32) -> f64 {
    let max = logits.iter().fold(f64::NEG_INFINITY, |m, &v| m.max(v));
    let lse = max + logits.iter().map(|&v| (v - max).exp()).sum::<f64>().ln();
    lse - logits[target as usize]
}

/// Predictions and per-example answer losses under one spec.
fn filtered_outputs(
    model: &ModelState<f64>,
    basis: &FourierBasis<f64>,
    examples: &[(Vec<u32>, u32)],
    spec: &AblationSpec,
) -> Result<Vec<(u32, f64)>> {
    let n_layers = model.config.n_layers;
    spec.validate(n_layers)?;
    if examples.is_empty() {
        return Err(CoreError::EmptyDataset);
    }
    // A filter that removes no rows projects with the exact identity; skip
    // it so the no-op report is bit-identical to the plain path.
    let projector = match &spec.filter {
        None => None,
        Some(f) => {
            let p = build_projector(basis, model.w_u.view(), f)?;
            if p.rank_removed == 0 {
                None
            } else {
                Some(p)
            }
        }
    };
    let layers = layer_mask(n_layers, &spec.layers);

    examples
        .par_iter()
        .map(|(tokens, target)| {
            let filter = projector.as_ref().map(|proj| ModuleFilter {
                projection: proj.matrix().view(),
                attn: spec.attn,
                mlp: spec.mlp,
                layers: layers.clone(),
                positions: position_mask(tokens.len(), &spec.positions),
            });
            let (logits, _) = forward_with_trace(model, tokens, filter.as_ref())?;
            Ok((argmax(logits.view()), example_loss(&logits, *target)))
        })
        .collect()
}

fn report_from(
    spec: &AblationSpec,
    examples: &[(Vec<u32>, u32)],
    per_example: &[(u32, f64)],
) -> Result<AblationReport> {
    let predictions: Vec<u32> = per_example.iter().map(|&(p, _)| p).collect();
    let answers: Vec<u32> = examples.iter().map(|&(_, a)| a).collect();
    let stats = error_histogram(&predictions, &answers)?;
    let n = examples.len() as f64;
    let validation_loss = per_example.iter().map(|&(_, l)| l).sum::<f64>() / n;
    let accuracy = predictions
        .iter()
        .zip(&answers)
        .filter(|(p, a)| p == a)
        .count() as f64
        / n;
    Ok(AblationReport {
        name: spec.name.clone(),
        targets: spec.targets_label(),
        removed: spec.removed_label(),
        validation_loss,
        accuracy,
        stats,
        modulus: None,
        modular_accuracy: None,
    })
}

/// Evaluate a split under one ablation spec. A single_pass filter whose
/// kept component has a whole-number period also gets modular scoring
/// (prediction mod T_gamma vs answer mod T_gamma).
pub fn ablate_eval(
    model: &ModelState<f64>,
    basis: &FourierBasis<f64>,
    examples: &[(Vec<u32>, u32)],
    spec: &AblationSpec,
) -> Result<AblationReport> {
    let per = filtered_outputs(model, basis, examples, spec)?;
    let mut report = report_from(spec, examples, &per)?;
    if let Some(FilterSpec::SinglePass { gamma }) = spec.filter {
        let p = basis.p();
        if (p - 1) % gamma == 0 {
            let modulus = ((p - 1) / gamma) as u64;
            let hits = per
                .iter()
                .zip(examples)
                .filter(|((pred, _), (_, ans))| (*pred as u64) % modulus == (*ans as u64) % modulus)
                .count();
            report.modulus = Some(modulus);
            report.modular_accuracy = Some(hits as f64 / examples.len() as f64);
        }
    }
    Ok(report)
}

/// Keep exactly one Fourier component (plus the constant) in both modules
/// everywhere.
pub fn single_component_eval(
    model: &ModelState<f64>,
    basis: &FourierBasis<f64>,
    examples: &[(Vec<u32>, u32)],
    gamma: usize,
) -> Result<AblationReport> {
    let spec = AblationSpec::all_modules(Some(FilterSpec::SinglePass { gamma }));
    ablate_eval(model, basis, examples, &spec)
}

/// One Table-1-style CSV row per report. NaN and absent values print empty.
pub fn write_sweep_csv<W: std::io::Write>(
    reports: &[AblationReport],
    mut w: W,
) -> std::io::Result<()> {
    writeln!(
        w,
        "name,targets,removed,validation_loss,accuracy,parity_accuracy,frac_err_mult10,frac_err_within6,modulus,modular_accuracy"
    )?;
    let opt = |v: Option<f64>| v.map_or(String::new(), |x| x.to_string());
    let nan_empty = |v: f64| if v.is_nan() { String::new() } else { v.to_string() };
    for r in reports {
        writeln!(
            w,
            "{},{},{},{},{},{},{},{},{},{}",
            r.name,
            r.targets,
            r.removed,
            r.validation_loss,
            r.accuracy,
            r.stats.parity_accuracy,
            nan_empty(r.stats.frac_mult10),
            nan_empty(r.stats.frac_within6),
            r.modulus.map_or(String::new(), |m| m.to_string()),
            opt(r.modular_accuracy),
        )?;
    }
    Ok(())
}

/// Signed-error histogram CSV for one report.
pub fn write_histogram_csv<W: std::io::Write>(
    report: &AblationReport,
    mut w: W,
) -> std::io::Result<()> {
    writeln!(w, "error,count")?;
    for (e, c) in &report.stats.histogram {
        writeln!(w, "{e},{c}")?;
    }
    Ok(())
}

/// Serde-facing shape of an ablation run file: a list of `[[ablation]]`
/// tables. `kind = "none"` (or omitting `filter`) gives a control row.
#[derive(Debug, Deserialize)]
pub struct RunFile {
    #[serde(default)]
    pub ablation: Vec<RawSpec>,
}

#[derive(Debug, Deserialize)]
pub struct RawSpec {
    pub name: Option<String>,
    pub targets: Vec<String>,
    #[serde(default)]
    pub filter: Option<RawFilter>,
    #[serde(default)]
    pub layers: Option<Vec<usize>>,
    #[serde(default)]
    pub positions: Option<Vec<usize>>,
}

#[derive(Debug, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum RawFilter {
    None,
    LowPass { tau: usize },
    HighPass { tau: usize },
    SinglePass { gamma: usize },
}

impl RawSpec {
    pub fn into_spec(self) -> Result<AblationSpec> {
        let mut attn = false;
        let mut mlp = false;
        for t in &self.targets {
            match t.as_str() {
                "attn" => attn = true,
                "mlp" => mlp = true,
                other => {
                    return Err(CoreError::BadConfig(format!(
                        "unknown ablation target {other:?} (expected attn or mlp)"
                    )))
                }
            }
        }
        let filter = match self.filter {
            None | Some(RawFilter::None) => None,
            Some(RawFilter::LowPass { tau }) => Some(FilterSpec::LowPass { tau }),
            Some(RawFilter::HighPass { tau }) => Some(FilterSpec::HighPass { tau }),
            Some(RawFilter::SinglePass { gamma }) => Some(FilterSpec::SinglePass { gamma }),
        };
        let mut spec = AblationSpec {
            name: String::new(),
            filter,
            attn,
            mlp,
            layers: self.layers,
            positions: self.positions,
        };
        spec.name = self
            .name
            .unwrap_or_else(|| format!("{} {}", spec.targets_label(), spec.removed_label()));
        Ok(spec)
    }
}
