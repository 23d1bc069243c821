//! Logit-lens analyses over residual traces: decode intermediate stream
//! states and per-module contributions with the unembedding, then ask where
//! in depth the prediction forms, what structure sits near the answer, and
//! which Fourier components the module outputs carry.
//!
//! Everything here is read-only over the model. Batch evaluations fan out
//! across examples with rayon and reduce in example order, so results do
//! not depend on thread count.

use ndarray::{Array1, Array2, ArrayView2};
use rayon::prelude::*;

use crate::error::{CoreError, Result};
use crate::fourier::FourierBasis;
use crate::model::{argmax, forward_with_trace, ModelState, ResidualTrace};
use crate::rng;
use crate::stats;

/// Decoded logits at the final position: the stream state per layer
/// (including layer 0, the embeddings) and each module's additive
/// contribution per layer.
#[derive(Debug, Clone)]
pub struct LayerLogits {
    /// state[l] = W_U h^(l), l = 0..=L.
    pub state: Vec<Array1<f64>>,
    /// attn[l] = W_U Attn^(l+1), length L.
    pub attn: Vec<Array1<f64>>,
    /// mlp[l] = W_U MLP^(l+1), length L.
    pub mlp: Vec<Array1<f64>>,
}

/// Decode a trace at the final position. The unembedding is linear, so
/// state[l] - state[l-1] = attn[l-1] + mlp[l-1] holds to round-off.
pub fn logit_lens(trace: &ResidualTrace, w_u: ArrayView2<f64>) -> Result<LayerLogits> {
    let d = trace.h0.ncols();
    if w_u.ncols() != d {
        return Err(CoreError::ShapeMismatch {
            what: "unembedding",
            expected: format!("(p, {d})"),
            got: format!("({}, {})", w_u.nrows(), w_u.ncols()),
        });
    }
    let last = trace.h0.nrows() - 1;
    let decode = |h: &Array2<f64>| w_u.dot(&h.row(last));
    let mut state = Vec::with_capacity(trace.layers.len() + 1);
    state.push(decode(&trace.h0));
    let mut attn = Vec::with_capacity(trace.layers.len());
    let mut mlp = Vec::with_capacity(trace.layers.len());
    for layer in &trace.layers {
        state.push(decode(&layer.h));
        attn.push(decode(&layer.attn));
        mlp.push(decode(&layer.mlp));
    }
    Ok(LayerLogits { state, attn, mlp })
}

/// Per-layer accuracy within +/-k of the answer, rows l = 0..=L.
#[derive(Debug, Clone)]
pub struct AccuracyTable {
    pub ks: Vec<usize>,
    /// rows[l][i] = fraction with |argmax(state[l]) - answer| <= ks[i].
    pub rows: Vec<Vec<f64>>,
}

pub fn accuracy_within(
    model: &ModelState<f64>,
    examples: &[(Vec<u32>, u32)],
    ks: &[usize],
) -> Result<AccuracyTable> {
    if examples.is_empty() {
        return Err(CoreError::EmptyDataset);
    }
    if ks.is_empty() || ks.windows(2).any(|w| w[0] >= w[1]) {
        return Err(CoreError::BadConfig(
            "ks must be strictly ascending and nonempty".into(),
        ));
    }
    let n_layers = model.config.n_layers;
    let per_example: Vec<Vec<u32>> = examples
        .par_iter()
        .map(|(tokens, _)| {
            let (_, trace) = forward_with_trace(model, tokens, None)?;
            let lens = logit_lens(&trace, model.w_u.view())?;
            Ok(lens.state.iter().map(|v| argmax(v.view())).collect())
        })
        .collect::<Result<_>>()?;
    let mut rows = vec![vec![0.0f64; ks.len()]; n_layers + 1];
    for (preds, (_, answer)) in per_example.iter().zip(examples) {
        for (l, &pred) in preds.iter().enumerate() {
            let err = (pred as i64 - *answer as i64).unsigned_abs() as usize;
            for (i, &k) in ks.iter().enumerate() {
                if err <= k {
                    rows[l][i] += 1.0;
                }
            }
        }
    }
    let n = examples.len() as f64;
    for row in &mut rows {
        for v in row.iter_mut() {
            *v /= n;
        }
    }
    Ok(AccuracyTable {
        ks: ks.to_vec(),
        rows,
    })
}

pub fn write_accuracy_csv<W: std::io::Write>(t: &AccuracyTable, mut w: W) -> std::io::Result<()> {
    write!(w, "layer")?;
    for k in &t.ks {
        write!(w, ",acc_within_{k}")?;
    }
    writeln!(w)?;
    for (l, row) in t.rows.iter().enumerate() {
        write!(w, "{l}")?;
        for v in row {
            write!(w, ",{v}")?;
        }
        writeln!(w)?;
    }
    Ok(())
}

/// Module-contribution logits for the numbers around one example's answer:
/// rows are numbers, columns are the chosen layers.
#[derive(Debug, Clone)]
pub struct ModuleHeatmap {
    /// The numbers labelling the rows (answer-window..=answer+window,
    /// clamped into 0..p).
    pub numbers: Vec<usize>,
    /// Layer indices labelling the columns (0-based blocks).
    pub layers: Vec<usize>,
    pub attn: Array2<f64>,
    pub mlp: Array2<f64>,
    /// True when the window hit the vocabulary edge and was cut short.
    pub clamped: bool,
}

pub fn module_heatmap(
    model: &ModelState<f64>,
    tokens: &[u32],
    answer: u32,
    layers: &[usize],
    window: usize,
) -> Result<ModuleHeatmap> {
    let p = model.config.n_numbers;
    if window > p / 2 {
        return Err(CoreError::OutOfRange {
            what: "heatmap window",
            got: window,
            lo: 0,
            hi: p / 2,
        });
    }
    if layers.is_empty() || layers.iter().any(|&l| l >= model.config.n_layers) {
        return Err(CoreError::BadConfig("bad layer range for heatmap".into()));
    }
    let (_, trace) = forward_with_trace(model, tokens, None)?;
    let lens = logit_lens(&trace, model.w_u.view())?;
    let answer = answer as usize;
    let lo = answer.saturating_sub(window);
    let hi = (answer + window).min(p - 1);
    let clamped = window > answer || answer + window > p - 1;
    let numbers: Vec<usize> = (lo..=hi).collect();
    let mut attn = Array2::zeros((numbers.len(), layers.len()));
    let mut mlp = Array2::zeros((numbers.len(), layers.len()));
    for (c, &l) in layers.iter().enumerate() {
        for (r, &num) in numbers.iter().enumerate() {
            attn[(r, c)] = lens.attn[l][num];
            mlp[(r, c)] = lens.mlp[l][num];
        }
    }
    Ok(ModuleHeatmap {
        numbers,
        layers: layers.to_vec(),
        attn,
        mlp,
        clamped,
    })
}

pub fn write_heatmap_csv<W: std::io::Write>(
    h: &ModuleHeatmap,
    matrix: &Array2<f64>,
    mut w: W,
) -> std::io::Result<()> {
    write!(w, "number")?;
    for l in &h.layers {
        write!(w, ",layer_{l}")?;
    }
    writeln!(w)?;
    for (r, num) in h.numbers.iter().enumerate() {
        write!(w, "{num}")?;
        for c in 0..h.layers.len() {
            write!(w, ",{}", matrix[(r, c)])?;
        }
        writeln!(w)?;
    }
    Ok(())
}

/// Which module's contribution to decode.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Module {
    Attn,
    Mlp,
}

/// The paper-style layer band scaled to a small model: the last
/// max(2, round(15 L / 48)) blocks.
pub fn default_layer_band(n_layers: usize) -> Vec<usize> {
    let m = ((15.0 * n_layers as f64 / 48.0).round() as usize).max(2).min(n_layers);
    (n_layers - m..n_layers).collect()
}

/// Mean of per-example, per-layer magnitude spectra of one module's decoded
/// contribution at the final position. Magnitudes are averaged (not complex
/// coefficients), so phase differences across examples do not cancel.
#[derive(Debug, Clone)]
pub struct AvgSpectrum {
    pub p: usize,
    /// Index 0 = constant component, k = 1..=(p-1)/2.
    pub magnitudes: Vec<f64>,
}

pub fn avg_spectrum(
    model: &ModelState<f64>,
    basis: &FourierBasis<f64>,
    examples: &[(Vec<u32>, u32)],
    layers: &[usize],
    module: Module,
) -> Result<AvgSpectrum> {
    if examples.is_empty() {
        return Err(CoreError::EmptyDataset);
    }
    if layers.is_empty() || layers.iter().any(|&l| l >= model.config.n_layers) {
        return Err(CoreError::BadConfig("bad layer range for spectrum".into()));
    }
    if basis.p() != model.config.n_numbers {
        return Err(CoreError::ShapeMismatch {
            what: "basis size",
            expected: format!("{}", model.config.n_numbers),
            got: format!("{}", basis.p()),
        });
    }
    let per_example: Vec<Vec<f64>> = examples
        .par_iter()
        .map(|(tokens, _)| {
            let (_, trace) = forward_with_trace(model, tokens, None)?;
            let lens = logit_lens(&trace, model.w_u.view())?;
            let mut acc = vec![0.0f64; basis.n_components() + 1];
            for &l in layers {
                let v = match module {
                    Module::Attn => &lens.attn[l],
                    Module::Mlp => &lens.mlp[l],
                };
                let s = basis.dft(v.view())?;
                for (a, m) in acc.iter_mut().zip(s.magnitudes().iter()) {
                    *a += m;
                }
            }
            Ok(acc)
        })
        .collect::<Result<_>>()?;
    let scale = 1.0 / (examples.len() * layers.len()) as f64;
    let mut magnitudes = vec![0.0f64; basis.n_components() + 1];
    for acc in per_example {
        for (m, a) in magnitudes.iter_mut().zip(acc) {
            *m += a * scale;
        }
    }
    Ok(AvgSpectrum {
        p: basis.p(),
        magnitudes,
    })
}

/// Lag-2 autocorrelation of a heatmap column; near +1 means a strong
/// period-2 (parity) stripe along the number axis.
pub fn parity_stripe_score(column: &[f64]) -> f64 {
    let n = column.len();
    if n < 3 {
        return 0.0;
    }
    let m = stats::mean(column);
    let denom: f64 = column.iter().map(|x| (x - m) * (x - m)).sum();
    if denom == 0.0 {
        return 0.0;
    }
    let num: f64 = (0..n - 2).map(|i| (column[i] - m) * (column[i + 2] - m)).sum();
    num / denom
}

/// Whether |lag-2 autocorrelation| beats the 99th percentile of shuffled
/// copies of the same column (the noise control for stripe detection).
pub fn stripe_beats_shuffled_controls(column: &[f64], n_controls: usize, seed: u64) -> bool {
    let observed = parity_stripe_score(column).abs();
    let mut rng = rng::seeded(seed);
    let mut scores: Vec<f64> = (0..n_controls)
        .map(|_| {
            let mut shuffled = column.to_vec();
            rng::shuffle(&mut rng, &mut shuffled);
            parity_stripe_score(&shuffled).abs()
        })
        .collect();
    scores.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let idx = ((n_controls as f64) * 0.99).ceil() as usize - 1;
    observed > scores[idx.min(n_controls - 1)]
}
