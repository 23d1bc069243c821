//! Decoder-only pre-norm transformer sized for desk-scale arithmetic.
//!
//! Residual stream per block: h = h + Attn(LN1(h)); h = h + MLP(LN2(h)).
//! Readout is the raw unembedding of the final residual state (no layer norm
//! between stream and logits), which keeps every per-module logit
//! contribution exactly linear; the analysis side depends on that.
//! Token embedding W_E (vocab x D) and unembedding W_U (p x D, numbers only)
//! are independent matrices; there is no weight tying.

mod forward;
mod train;

pub use forward::{
    argmax, argmax_rows, batch_loss, forward_batch, forward_with_trace, loss_and_grad, Batch,
    ModuleFilter, ResidualTrace, TraceLayer,
};
pub use train::{evaluate, train, write_metrics_csv, EpochMetrics, TokenizedExample, TrainHyper};

use ndarray::{Array1, Array2, ArrayView2, ArrayViewMut2};
use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};
use crate::fourier::FourierBasis;
use crate::rng;
use crate::scalar::Scalar;

/// How the number-token embedding rows were produced.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EmbeddingMode {
    Random,
    InjectedFrozen,
    InjectedTrainable,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub n_layers: usize,
    pub d_model: usize,
    pub n_heads: usize,
    pub d_ff: usize,
    /// Full vocabulary (numbers + words + pad).
    pub vocab_size: usize,
    /// Number tokens p; ids 0..p and the only classes the model predicts.
    pub n_numbers: usize,
    pub max_seq_len: usize,
    pub embedding_mode: EmbeddingMode,
    pub seed: u64,
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_layers == 0 || self.d_model == 0 || self.n_heads == 0 || self.d_ff == 0 {
            return Err(CoreError::BadConfig("zero-sized dimension".into()));
        }
        if self.d_model % self.n_heads != 0 {
            return Err(CoreError::BadConfig(format!(
                "d_model {} not divisible by n_heads {}",
                self.d_model, self.n_heads
            )));
        }
        if self.vocab_size < self.n_numbers {
            return Err(CoreError::BadConfig(format!(
                "vocab_size {} smaller than n_numbers {}",
                self.vocab_size, self.n_numbers
            )));
        }
        if self.max_seq_len == 0 {
            return Err(CoreError::BadConfig("max_seq_len is zero".into()));
        }
        Ok(())
    }

    pub fn head_dim(&self) -> usize {
        self.d_model / self.n_heads
    }
}

/// Weights of one block. Linear weights are stored (in_features,
/// out_features) so activations multiply on the left.
#[derive(Debug, Clone)]
pub struct LayerParams<T: Scalar> {
    pub ln1_g: Array1<T>,
    pub ln1_b: Array1<T>,
    pub wq: Array2<T>,
    pub bq: Array1<T>,
    pub wk: Array2<T>,
    pub bk: Array1<T>,
    pub wv: Array2<T>,
    pub bv: Array1<T>,
    pub wo: Array2<T>,
    pub bo: Array1<T>,
    pub ln2_g: Array1<T>,
    pub ln2_b: Array1<T>,
    pub w_in: Array2<T>,
    pub b_in: Array1<T>,
    pub w_out: Array2<T>,
    pub b_out: Array1<T>,
}

#[derive(Debug, Clone)]
pub struct ModelState<T: Scalar> {
    pub config: ModelConfig,
    /// Token embedding, vocab x D.
    pub w_e: Array2<T>,
    /// Learned absolute positions, max_seq_len x D.
    pub w_pos: Array2<T>,
    pub layers: Vec<LayerParams<T>>,
    /// Unembedding over number tokens, p x D.
    pub w_u: Array2<T>,
    /// Optimizer steps taken so far.
    pub step: u64,
}

/// Borrowed view of one named tensor, for uniform iteration.
pub enum TensorRef<'a, T: Scalar> {
    M(&'a Array2<T>),
    V(&'a Array1<T>),
}

pub enum TensorMut<'a, T: Scalar> {
    M(&'a mut Array2<T>),
    V(&'a mut Array1<T>),
}

impl<T: Scalar> ModelState<T> {
    /// Fresh weights: normal(0, 0.02) for every matrix, zero biases,
    /// unit-gain layer norms. Sampling order is fixed by this function.
    pub fn init(config: ModelConfig) -> Result<Self> {
        config.validate()?;
        let mut rng = rng::seeded(config.seed);
        let mut normal2 =
            |r: usize, c: usize| Array2::from_shape_fn((r, c), |_| sample_init::<T>(&mut rng));
        let w_e = normal2(config.vocab_size, config.d_model);
        let w_pos = normal2(config.max_seq_len, config.d_model);
        let mut layers = Vec::with_capacity(config.n_layers);
        for _ in 0..config.n_layers {
            let d = config.d_model;
            let f = config.d_ff;
            layers.push(LayerParams {
                ln1_g: Array1::from_elem(d, T::one()),
                ln1_b: Array1::zeros(d),
                wq: normal2(d, d),
                bq: Array1::zeros(d),
                wk: normal2(d, d),
                bk: Array1::zeros(d),
                wv: normal2(d, d),
                bv: Array1::zeros(d),
                wo: normal2(d, d),
                bo: Array1::zeros(d),
                ln2_g: Array1::from_elem(d, T::one()),
                ln2_b: Array1::zeros(d),
                w_in: normal2(d, f),
                b_in: Array1::zeros(f),
                w_out: normal2(f, d),
                b_out: Array1::zeros(d),
            });
        }
        let w_u = normal2(config.n_numbers, config.d_model);
        Ok(Self {
            config,
            w_e,
            w_pos,
            layers,
            w_u,
            step: 0,
        })
    }

    /// Same shapes, all zeros; used for gradients and optimizer moments.
    pub fn zeros_like(&self) -> Self {
        let mut out = self.clone();
        out.for_each_tensor_mut(|_, t| match t {
            TensorMut::M(m) => m.fill(T::zero()),
            TensorMut::V(v) => v.fill(T::zero()),
        });
        out.step = 0;
        out
    }

    /// Widen or narrow the scalar type; analysis runs models as f64.
    pub fn cast<U: Scalar>(&self) -> ModelState<U> {
        let conv2 = |m: &Array2<T>| m.mapv(|v| U::from_f64_lossy(v.to_f64_lossy()));
        let conv1 = |m: &Array1<T>| m.mapv(|v| U::from_f64_lossy(v.to_f64_lossy()));
        ModelState {
            config: self.config.clone(),
            w_e: conv2(&self.w_e),
            w_pos: conv2(&self.w_pos),
            layers: self
                .layers
                .iter()
                .map(|l| LayerParams {
                    ln1_g: conv1(&l.ln1_g),
                    ln1_b: conv1(&l.ln1_b),
                    wq: conv2(&l.wq),
                    bq: conv1(&l.bq),
                    wk: conv2(&l.wk),
                    bk: conv1(&l.bk),
                    wv: conv2(&l.wv),
                    bv: conv1(&l.bv),
                    wo: conv2(&l.wo),
                    bo: conv1(&l.bo),
                    ln2_g: conv1(&l.ln2_g),
                    ln2_b: conv1(&l.ln2_b),
                    w_in: conv2(&l.w_in),
                    b_in: conv1(&l.b_in),
                    w_out: conv2(&l.w_out),
                    b_out: conv1(&l.b_out),
                })
                .collect(),
            w_u: conv2(&self.w_u),
            step: self.step,
        }
    }

    /// Number rows of the embedding, p x D.
    pub fn number_embeddings(&self) -> ArrayView2<'_, T> {
        self.w_e.slice(ndarray::s![..self.config.n_numbers, ..])
    }

    pub fn for_each_tensor<'a>(&'a self, mut f: impl FnMut(String, TensorRef<'a, T>)) {
        f("w_e".into(), TensorRef::M(&self.w_e));
        f("w_pos".into(), TensorRef::M(&self.w_pos));
        for (i, l) in self.layers.iter().enumerate() {
            f(format!("layers.{i}.ln1_g"), TensorRef::V(&l.ln1_g));
            f(format!("layers.{i}.ln1_b"), TensorRef::V(&l.ln1_b));
            f(format!("layers.{i}.wq"), TensorRef::M(&l.wq));
            f(format!("layers.{i}.bq"), TensorRef::V(&l.bq));
            f(format!("layers.{i}.wk"), TensorRef::M(&l.wk));
            f(format!("layers.{i}.bk"), TensorRef::V(&l.bk));
            f(format!("layers.{i}.wv"), TensorRef::M(&l.wv));
            f(format!("layers.{i}.bv"), TensorRef::V(&l.bv));
            f(format!("layers.{i}.wo"), TensorRef::M(&l.wo));
            f(format!("layers.{i}.bo"), TensorRef::V(&l.bo));
            f(format!("layers.{i}.ln2_g"), TensorRef::V(&l.ln2_g));
            f(format!("layers.{i}.ln2_b"), TensorRef::V(&l.ln2_b));
            f(format!("layers.{i}.w_in"), TensorRef::M(&l.w_in));
            f(format!("layers.{i}.b_in"), TensorRef::V(&l.b_in));
            f(format!("layers.{i}.w_out"), TensorRef::M(&l.w_out));
            f(format!("layers.{i}.b_out"), TensorRef::V(&l.b_out));
        }
        f("w_u".into(), TensorRef::M(&self.w_u));
    }

    pub fn for_each_tensor_mut<'a>(&'a mut self, mut f: impl FnMut(&str, TensorMut<'a, T>)) {
        f("w_e", TensorMut::M(&mut self.w_e));
        f("w_pos", TensorMut::M(&mut self.w_pos));
        for (i, l) in self.layers.iter_mut().enumerate() {
            f(&format!("layers.{i}.ln1_g"), TensorMut::V(&mut l.ln1_g));
            f(&format!("layers.{i}.ln1_b"), TensorMut::V(&mut l.ln1_b));
            f(&format!("layers.{i}.wq"), TensorMut::M(&mut l.wq));
            f(&format!("layers.{i}.bq"), TensorMut::V(&mut l.bq));
            f(&format!("layers.{i}.wk"), TensorMut::M(&mut l.wk));
            f(&format!("layers.{i}.bk"), TensorMut::V(&mut l.bk));
            f(&format!("layers.{i}.wv"), TensorMut::M(&mut l.wv));
            f(&format!("layers.{i}.bv"), TensorMut::V(&mut l.bv));
            f(&format!("layers.{i}.wo"), TensorMut::M(&mut l.wo));
            f(&format!("layers.{i}.bo"), TensorMut::V(&mut l.bo));
            f(&format!("layers.{i}.ln2_g"), TensorMut::V(&mut l.ln2_g));
            f(&format!("layers.{i}.ln2_b"), TensorMut::V(&mut l.ln2_b));
            f(&format!("layers.{i}.w_in"), TensorMut::M(&mut l.w_in));
            f(&format!("layers.{i}.b_in"), TensorMut::V(&mut l.b_in));
            f(&format!("layers.{i}.w_out"), TensorMut::M(&mut l.w_out));
            f(&format!("layers.{i}.b_out"), TensorMut::V(&mut l.b_out));
        }
        f("w_u", TensorMut::M(&mut self.w_u));
    }

    /// Flat slices of every tensor plus (is_w_e, is_matrix) markers, in the
    /// same order as for_each_tensor. Requires standard layout, which every
    /// constructor here produces.
    pub(crate) fn flat_mut(&mut self) -> Vec<(bool, bool, &mut [T])> {
        let mut out = Vec::new();
        self.for_each_tensor_mut(|name, t| {
            let is_we = name == "w_e";
            match t {
                TensorMut::M(m) => out.push((is_we, true, m.as_slice_mut().expect("layout"))),
                TensorMut::V(v) => out.push((is_we, false, v.as_slice_mut().expect("layout"))),
            }
        });
        out
    }

    pub(crate) fn flat(&self) -> Vec<&[T]> {
        let mut out = Vec::new();
        self.for_each_tensor(|_, t| match t {
            TensorRef::M(m) => out.push(m.as_slice().expect("layout")),
            TensorRef::V(v) => out.push(v.as_slice().expect("layout")),
        });
        out
    }

    /// Total parameter count.
    pub fn n_params(&self) -> usize {
        let mut n = 0;
        self.for_each_tensor(|_, t| {
            n += match t {
                TensorRef::M(m) => m.len(),
                TensorRef::V(v) => v.len(),
            }
        });
        n
    }
}

fn sample_init<T: Scalar>(rng: &mut rng::Rng) -> T {
    T::from_f64_lossy(0.02 * rng::normal(rng))
}

/// Replace embedding rows. `rows` has either p rows (number tokens only) or
/// vocab rows (everything). With freeze, the whole W_E stops training so the
/// matrix is bit-identical after any number of steps.
pub fn inject_embeddings<T: Scalar>(
    state: &mut ModelState<T>,
    rows: ArrayView2<T>,
    freeze: bool,
) -> Result<()> {
    let d = state.config.d_model;
    if rows.ncols() != d {
        return Err(CoreError::ShapeMismatch {
            what: "injected embedding",
            expected: format!("(p or vocab, {d})"),
            got: format!("({}, {})", rows.nrows(), rows.ncols()),
        });
    }
    let p = state.config.n_numbers;
    let vocab = state.config.vocab_size;
    if rows.nrows() == vocab {
        state.w_e.assign(&rows);
    } else if rows.nrows() == p {
        let mut target: ArrayViewMut2<T> = state.w_e.slice_mut(ndarray::s![..p, ..]);
        target.assign(&rows);
    } else {
        return Err(CoreError::ShapeMismatch {
            what: "injected embedding",
            expected: format!("({p} or {vocab}, {d})"),
            got: format!("({}, {})", rows.nrows(), rows.ncols()),
        });
    }
    state.config.embedding_mode = if freeze {
        EmbeddingMode::InjectedFrozen
    } else {
        EmbeddingMode::InjectedTrainable
    };
    Ok(())
}

/// Synthetic number embedding with energy at chosen periods: each column is
/// a random combination of the constant row, a low-frequency ramp
/// (components k <= 5, scaled by low_freq_weight), and the sin/cos rows of
/// the requested periods, normalized to unit column norm.
pub fn synth_fourier_embedding(
    p: usize,
    d: usize,
    periods: &[f64],
    low_freq_weight: f64,
    seed: u64,
) -> Result<Array2<f64>> {
    let basis = FourierBasis::<f64>::new(p)?;
    let kmax = basis.n_components();
    let mut components = Vec::with_capacity(periods.len());
    for &t in periods {
        if !t.is_finite() || t <= 0.0 {
            return Err(CoreError::BadConfig(format!("bad period {t}")));
        }
        let k = ((p - 1) as f64 / t).round() as usize;
        if k < 1 || k > kmax {
            return Err(CoreError::OutOfRange {
                what: "period component",
                got: k,
                lo: 1,
                hi: kmax,
            });
        }
        components.push(k);
    }
    let f = basis.matrix();
    let mut rng = rng::seeded(seed);
    let mut out = Array2::<f64>::zeros((p, d));
    let ramp_top = 5.min(kmax);
    for j in 0..d {
        let mut col = vec![0.0f64; p];
        let c0 = rng::normal(&mut rng);
        for (x, c) in col.iter_mut().enumerate() {
            *c += c0 * f[(0, x)];
        }
        for k in 1..=ramp_top {
            let a = low_freq_weight * rng::normal(&mut rng);
            let b = low_freq_weight * rng::normal(&mut rng);
            for (x, c) in col.iter_mut().enumerate() {
                *c += a * f[(2 * k - 1, x)] + b * f[(2 * k, x)];
            }
        }
        for &k in &components {
            let a = rng::normal(&mut rng);
            let b = rng::normal(&mut rng);
            for (x, c) in col.iter_mut().enumerate() {
                *c += a * f[(2 * k - 1, x)] + b * f[(2 * k, x)];
            }
        }
        let norm = col.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm == 0.0 {
            return Err(CoreError::BadConfig(
                "synthetic embedding column collapsed to zero".into(),
            ));
        }
        for (x, c) in col.iter().enumerate() {
            out[(x, j)] = c / norm;
        }
    }
    Ok(out)
}
