//! Forward and backward passes.
//!
//! Two paths share the same arithmetic but serve different jobs:
//!
//! * a batched path over (batch * seq, d_model) matrices for training and
//!   bulk evaluation, with a cache so the manual backward pass can run;
//! * a single-example path that records the residual stream and the
//!   per-module contributions, and can project attention or MLP outputs
//!   through a filter before they enter the stream.
//!
//! Loss is cross-entropy over the number classes, read at the last question
//! token of each example only.

use ndarray::{s, Array1, Array2, Array3, ArrayView1, ArrayView2, Axis};

use super::{LayerParams, ModelState};
use crate::error::{CoreError, Result};
use crate::scalar::Scalar;

const LN_EPS: f64 = 1e-5;
const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_A: f64 = 0.044_715;

fn gelu<T: Scalar>(x: T) -> T {
    let x = x.to_f64_lossy();
    let u = GELU_C * (x + GELU_A * x * x * x);
    T::from_f64_lossy(0.5 * x * (1.0 + u.tanh()))
}

fn gelu_grad<T: Scalar>(x: T) -> T {
    let x = x.to_f64_lossy();
    let u = GELU_C * (x + GELU_A * x * x * x);
    let t = u.tanh();
    let sech2 = 1.0 - t * t;
    T::from_f64_lossy(0.5 * (1.0 + t) + 0.5 * x * sech2 * GELU_C * (1.0 + 3.0 * GELU_A * x * x))
}

/// A right-padded batch. Every sequence keeps its true last index so loss
/// and predictions ignore the padding entirely.
#[derive(Debug, Clone)]
pub struct Batch {
    /// (n, seq) token ids, padded with pad_id.
    pub tokens: Array2<u32>,
    /// Index of the last real token per sequence; logits are read there.
    pub last_idx: Vec<usize>,
    /// Answer class per sequence (a number token id, < n_numbers).
    pub targets: Vec<u32>,
}

impl Batch {
    pub fn new(seqs: &[&[u32]], targets: &[u32], pad_id: u32) -> Result<Self> {
        if seqs.is_empty() || seqs.len() != targets.len() {
            return Err(CoreError::LengthMismatch {
                expected: seqs.len(),
                got: targets.len(),
            });
        }
        let max = seqs.iter().map(|s| s.len()).max().unwrap();
        if seqs.iter().any(|s| s.is_empty()) {
            return Err(CoreError::EmptyDataset);
        }
        let mut tokens = Array2::from_elem((seqs.len(), max), pad_id);
        let mut last_idx = Vec::with_capacity(seqs.len());
        for (i, s) in seqs.iter().enumerate() {
            for (j, &t) in s.iter().enumerate() {
                tokens[(i, j)] = t;
            }
            last_idx.push(s.len() - 1);
        }
        Ok(Self {
            tokens,
            last_idx,
            targets: targets.to_vec(),
        })
    }

    pub fn len(&self) -> usize {
        self.tokens.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.nrows() == 0
    }
}

fn check_batch<T: Scalar>(state: &ModelState<T>, batch: &Batch) -> Result<()> {
    let c = &state.config;
    if batch.tokens.ncols() > c.max_seq_len {
        return Err(CoreError::SequenceTooLong {
            got: batch.tokens.ncols(),
            max: c.max_seq_len,
        });
    }
    for &t in batch.tokens.iter() {
        if t as usize >= c.vocab_size {
            return Err(CoreError::UnknownTokenId(t));
        }
    }
    for &t in &batch.targets {
        if t as usize >= c.n_numbers {
            return Err(CoreError::UnknownTokenId(t));
        }
    }
    Ok(())
}

fn layernorm_fwd<T: Scalar>(
    x: &Array2<T>,
    g: &Array1<T>,
    b: &Array1<T>,
) -> (Array2<T>, Array2<T>, Array1<T>) {
    let (rows, d) = x.dim();
    let dm = T::from_f64_lossy(d as f64);
    let eps = T::from_f64_lossy(LN_EPS);
    let mut xhat = Array2::zeros((rows, d));
    let mut out = Array2::zeros((rows, d));
    let mut invstd = Array1::zeros(rows);
    for r in 0..rows {
        let row = x.row(r);
        let mean = row.sum() / dm;
        let mut var = T::zero();
        for &v in row.iter() {
            let c = v - mean;
            var = var + c * c;
        }
        var = var / dm;
        let is = T::one() / (var + eps).sqrt();
        invstd[r] = is;
        for j in 0..d {
            let xh = (row[j] - mean) * is;
            xhat[(r, j)] = xh;
            out[(r, j)] = xh * g[j] + b[j];
        }
    }
    (out, xhat, invstd)
}

fn layernorm_bwd<T: Scalar>(
    dy: &Array2<T>,
    xhat: &Array2<T>,
    invstd: &Array1<T>,
    g: &Array1<T>,
) -> (Array2<T>, Array1<T>, Array1<T>) {
    let (rows, d) = dy.dim();
    let dm = T::from_f64_lossy(d as f64);
    let mut dx = Array2::zeros((rows, d));
    let mut dg = Array1::zeros(d);
    let mut db = Array1::zeros(d);
    for r in 0..rows {
        let mut mean_t = T::zero();
        let mut mean_tx = T::zero();
        for j in 0..d {
            let t = dy[(r, j)] * g[j];
            mean_t = mean_t + t;
            mean_tx = mean_tx + t * xhat[(r, j)];
            dg[j] = dg[j] + dy[(r, j)] * xhat[(r, j)];
            db[j] = db[j] + dy[(r, j)];
        }
        mean_t = mean_t / dm;
        mean_tx = mean_tx / dm;
        for j in 0..d {
            let t = dy[(r, j)] * g[j];
            dx[(r, j)] = invstd[r] * (t - mean_t - xhat[(r, j)] * mean_tx);
        }
    }
    (dx, dg, db)
}

fn linear_fwd<T: Scalar>(x: &Array2<T>, w: &Array2<T>, b: &Array1<T>) -> Array2<T> {
    let mut y = x.dot(w);
    y += b;
    y
}

/// In-place causal softmax of a scores matrix: row i is normalized over
/// columns 0..=i and zero beyond.
fn causal_softmax<T: Scalar>(scores: &mut Array2<T>) {
    let n = scores.nrows();
    for i in 0..n {
        let mut row = scores.row_mut(i);
        let mut max = row[0];
        for j in 1..=i {
            if row[j] > max {
                max = row[j];
            }
        }
        let mut sum = T::zero();
        for j in 0..=i {
            let e = (row[j] - max).exp();
            row[j] = e;
            sum = sum + e;
        }
        for j in 0..=i {
            row[j] = row[j] / sum;
        }
        for j in (i + 1)..n {
            row[j] = T::zero();
        }
    }
}

/// Everything the backward pass needs from one block's forward run.
struct LayerCache<T: Scalar> {
    xhat1: Array2<T>,
    invstd1: Array1<T>,
    y1: Array2<T>,
    q: Array2<T>,
    k: Array2<T>,
    v: Array2<T>,
    /// (batch * heads, seq, seq) attention weights.
    probs: Array3<T>,
    ctx: Array2<T>,
    xhat2: Array2<T>,
    invstd2: Array1<T>,
    y2: Array2<T>,
    pre: Array2<T>,
    act: Array2<T>,
}

struct ForwardPass<T: Scalar> {
    layers: Vec<LayerCache<T>>,
    /// (batch, d_model) final residual states at each sequence's last index.
    h_last: Array2<T>,
    /// (batch, n_numbers).
    logits: Array2<T>,
}

fn embed_rows<T: Scalar>(state: &ModelState<T>, batch: &Batch) -> Array2<T> {
    let (b, seq) = batch.tokens.dim();
    let d = state.config.d_model;
    let mut x = Array2::zeros((b * seq, d));
    for i in 0..b {
        for t in 0..seq {
            let tok = batch.tokens[(i, t)] as usize;
            let mut row = x.row_mut(i * seq + t);
            row.assign(&state.w_e.row(tok));
            row += &state.w_pos.row(t);
        }
    }
    x
}

fn attention_fwd<T: Scalar>(
    l: &LayerParams<T>,
    y1: &Array2<T>,
    b: usize,
    seq: usize,
    n_heads: usize,
) -> (Array2<T>, Array2<T>, Array2<T>, Array3<T>, Array2<T>) {
    let d = l.wq.nrows();
    let hd = d / n_heads;
    let scale = T::from_f64_lossy(1.0 / (hd as f64).sqrt());
    let q = linear_fwd(y1, &l.wq, &l.bq);
    let k = linear_fwd(y1, &l.wk, &l.bk);
    let v = linear_fwd(y1, &l.wv, &l.bv);
    let mut probs = Array3::zeros((b * n_heads, seq, seq));
    let mut ctx = Array2::zeros((b * seq, d));
    for bi in 0..b {
        let rows = s![bi * seq..(bi + 1) * seq, ..];
        for h in 0..n_heads {
            let cols = s![.., h * hd..(h + 1) * hd];
            let qh = q.slice(rows).slice_move(cols);
            let kh = k.slice(rows).slice_move(cols);
            let vh = v.slice(rows).slice_move(cols);
            let mut scores = qh.dot(&kh.t());
            scores.map_inplace(|s| *s = *s * scale);
            causal_softmax(&mut scores);
            let out = scores.dot(&vh);
            ctx.slice_mut(rows).slice_move(cols).assign(&out);
            probs.index_axis_mut(Axis(0), bi * n_heads + h).assign(&scores);
        }
    }
    (q, k, v, probs, ctx)
}

fn forward_cached<T: Scalar>(state: &ModelState<T>, batch: &Batch) -> Result<ForwardPass<T>> {
    check_batch(state, batch)?;
    let (b, seq) = batch.tokens.dim();
    let n_heads = state.config.n_heads;
    let mut x = embed_rows(state, batch);
    let mut layers = Vec::with_capacity(state.layers.len());
    for l in &state.layers {
        let x_in = &x;
        let (y1, xhat1, invstd1) = layernorm_fwd(x_in, &l.ln1_g, &l.ln1_b);
        let (q, k, v, probs, ctx) = attention_fwd(l, &y1, b, seq, n_heads);
        let attn_out = linear_fwd(&ctx, &l.wo, &l.bo);
        let x_mid = x_in + &attn_out;
        let (y2, xhat2, invstd2) = layernorm_fwd(&x_mid, &l.ln2_g, &l.ln2_b);
        let pre = linear_fwd(&y2, &l.w_in, &l.b_in);
        let act = pre.mapv(gelu);
        let mlp_out = linear_fwd(&act, &l.w_out, &l.b_out);
        x = &x_mid + &mlp_out;
        layers.push(LayerCache {
            xhat1,
            invstd1,
            y1,
            q,
            k,
            v,
            probs,
            ctx,
            xhat2,
            invstd2,
            y2,
            pre,
            act,
        });
    }
    let d = state.config.d_model;
    let mut h_last = Array2::zeros((b, d));
    for i in 0..b {
        h_last.row_mut(i).assign(&x.row(i * seq + batch.last_idx[i]));
    }
    let logits = h_last.dot(&state.w_u.t());
    Ok(ForwardPass {
        layers,
        h_last,
        logits,
    })
}

/// Logits at each sequence's last position, (n, n_numbers).
pub fn forward_batch<T: Scalar>(state: &ModelState<T>, batch: &Batch) -> Result<Array2<T>> {
    Ok(forward_cached(state, batch)?.logits)
}

/// Mean answer cross-entropy of a logits matrix.
pub fn batch_loss<T: Scalar>(logits: &Array2<T>, targets: &[u32]) -> f64 {
    let n = logits.nrows();
    let mut total = 0.0;
    for i in 0..n {
        let row = logits.row(i);
        let max = row.iter().fold(f64::NEG_INFINITY, |m, &v| m.max(v.to_f64_lossy()));
        let mut lse = 0.0;
        for &v in row.iter() {
            lse += (v.to_f64_lossy() - max).exp();
        }
        let lse = max + lse.ln();
        total += lse - row[targets[i] as usize].to_f64_lossy();
    }
    total / n as f64
}

/// Argmax class per row; ties resolve to the smaller number.
pub fn argmax_rows<T: Scalar>(logits: &Array2<T>) -> Vec<u32> {
    logits
        .rows()
        .into_iter()
        .map(|row| argmax(row))
        .collect()
}

pub fn argmax<T: Scalar>(row: ArrayView1<T>) -> u32 {
    let mut best = 0usize;
    for j in 1..row.len() {
        if row[j] > row[best] {
            best = j;
        }
    }
    best as u32
}

/// Mean loss and gradients for every parameter, via manual backprop.
pub fn loss_and_grad<T: Scalar>(
    state: &ModelState<T>,
    batch: &Batch,
) -> Result<(f64, ModelState<T>)> {
    let fwd = forward_cached(state, batch)?;
    let (b, seq) = batch.tokens.dim();
    let n_heads = state.config.n_heads;
    let d = state.config.d_model;
    let hd = d / n_heads;
    let scale = T::from_f64_lossy(1.0 / (hd as f64).sqrt());
    let loss = batch_loss(&fwd.logits, &batch.targets);

    let mut grads = state.zeros_like();

    // d(mean CE)/d(logits) = (softmax - onehot) / n
    let p = state.config.n_numbers;
    let inv_n = 1.0 / b as f64;
    let mut dlogits = Array2::<T>::zeros((b, p));
    for i in 0..b {
        let row = fwd.logits.row(i);
        let max = row.iter().fold(f64::NEG_INFINITY, |m, &v| m.max(v.to_f64_lossy()));
        let mut exps = vec![0.0f64; p];
        let mut sum = 0.0;
        for (j, &v) in row.iter().enumerate() {
            let e = (v.to_f64_lossy() - max).exp();
            exps[j] = e;
            sum += e;
        }
        for j in 0..p {
            let soft = exps[j] / sum;
            let one = if j == batch.targets[i] as usize { 1.0 } else { 0.0 };
            dlogits[(i, j)] = T::from_f64_lossy((soft - one) * inv_n);
        }
    }

    grads.w_u = dlogits.t().dot(&fwd.h_last);
    let dh_last = dlogits.dot(&state.w_u);
    let mut dx = Array2::<T>::zeros((b * seq, d));
    for i in 0..b {
        dx.row_mut(i * seq + batch.last_idx[i]).assign(&dh_last.row(i));
    }

    for (li, l) in state.layers.iter().enumerate().rev() {
        let c = &fwd.layers[li];
        let g = &mut grads.layers[li];

        // x_out = x_mid + mlp_out
        let dmlp_out = &dx;
        g.w_out = c.act.t().dot(dmlp_out);
        g.b_out = dmlp_out.sum_axis(Axis(0));
        let dact = dmlp_out.dot(&l.w_out.t());
        let mut dpre = dact;
        ndarray::Zip::from(&mut dpre).and(&c.pre).for_each(|dp, &pr| {
            *dp = *dp * gelu_grad(pr);
        });
        g.w_in = c.y2.t().dot(&dpre);
        g.b_in = dpre.sum_axis(Axis(0));
        let dy2 = dpre.dot(&l.w_in.t());
        let (dx_ln2, dg2, db2) = layernorm_bwd(&dy2, &c.xhat2, &c.invstd2, &l.ln2_g);
        g.ln2_g = dg2;
        g.ln2_b = db2;
        let dx_mid = &dx + &dx_ln2;

        // x_mid = x_in + attn_out
        let dattn_out = &dx_mid;
        g.wo = c.ctx.t().dot(dattn_out);
        g.bo = dattn_out.sum_axis(Axis(0));
        let dctx = dattn_out.dot(&l.wo.t());

        let mut dq = Array2::<T>::zeros((b * seq, d));
        let mut dk = Array2::<T>::zeros((b * seq, d));
        let mut dv = Array2::<T>::zeros((b * seq, d));
        for bi in 0..b {
            let rows = s![bi * seq..(bi + 1) * seq, ..];
            for h in 0..n_heads {
                let cols = s![.., h * hd..(h + 1) * hd];
                let probs = fwd.layers[li].probs.index_axis(Axis(0), bi * n_heads + h);
                let dctx_h = dctx.slice(rows).slice_move(cols);
                let vh = c.v.slice(rows).slice_move(cols);
                let qh = c.q.slice(rows).slice_move(cols);
                let kh = c.k.slice(rows).slice_move(cols);
                let dprobs = dctx_h.dot(&vh.t());
                dv.slice_mut(rows)
                    .slice_move(cols)
                    .assign(&probs.t().dot(&dctx_h));
                // softmax backward, rows independent; masked entries have
                // prob zero so they drop out on their own
                let mut dscores = Array2::<T>::zeros((seq, seq));
                for i in 0..seq {
                    let mut dot = T::zero();
                    for j in 0..seq {
                        dot = dot + dprobs[(i, j)] * probs[(i, j)];
                    }
                    for j in 0..seq {
                        dscores[(i, j)] = probs[(i, j)] * (dprobs[(i, j)] - dot);
                    }
                }
                dscores.map_inplace(|v| *v = *v * scale);
                dq.slice_mut(rows).slice_move(cols).assign(&dscores.dot(&kh));
                dk.slice_mut(rows)
                    .slice_move(cols)
                    .assign(&dscores.t().dot(&qh));
            }
        }
        g.wq = c.y1.t().dot(&dq);
        g.bq = dq.sum_axis(Axis(0));
        g.wk = c.y1.t().dot(&dk);
        g.bk = dk.sum_axis(Axis(0));
        g.wv = c.y1.t().dot(&dv);
        g.bv = dv.sum_axis(Axis(0));
        let dy1 = dq.dot(&l.wq.t()) + dk.dot(&l.wk.t()) + dv.dot(&l.wv.t());
        let (dx_ln1, dg1, db1) = layernorm_bwd(&dy1, &c.xhat1, &c.invstd1, &l.ln1_g);
        g.ln1_g = dg1;
        g.ln1_b = db1;
        dx = dx_mid + dx_ln1;
    }

    for i in 0..b {
        for t in 0..seq {
            let tok = batch.tokens[(i, t)] as usize;
            let row = dx.row(i * seq + t);
            let mut we = grads.w_e.row_mut(tok);
            we += &row;
            let mut wp = grads.w_pos.row_mut(t);
            wp += &row;
        }
    }
    Ok((loss, grads))
}

/// Projects chosen module outputs before they enter the residual stream.
/// `projection` is the D x D filter, `layers[i]` says whether block i is
/// touched, and `positions` (by sequence index, None = everywhere) limits
/// which stream positions are filtered.
#[derive(Debug, Clone)]
pub struct ModuleFilter<'a> {
    pub projection: ArrayView2<'a, f64>,
    pub attn: bool,
    pub mlp: bool,
    pub layers: Vec<bool>,
    pub positions: Option<Vec<bool>>,
}

impl ModuleFilter<'_> {
    fn applies(&self, layer: usize) -> bool {
        self.layers.get(layer).copied().unwrap_or(false)
    }

    fn project_rows(&self, out: &mut Array2<f64>) {
        match &self.positions {
            None => {
                let filtered = out.dot(&self.projection);
                out.assign(&filtered);
            }
            Some(mask) => {
                for (t, &on) in mask.iter().enumerate() {
                    if on && t < out.nrows() {
                        let row = out.row(t).to_owned();
                        out.row_mut(t).assign(&row.dot(&self.projection));
                    }
                }
            }
        }
    }
}

/// Residual stream history of one example: the embedded input and, per
/// block, the attention contribution, the MLP contribution, and the stream
/// after the block, all at every position.
#[derive(Debug, Clone)]
pub struct ResidualTrace {
    /// (seq, d_model) stream before any block.
    pub h0: Array2<f64>,
    pub layers: Vec<TraceLayer>,
}

#[derive(Debug, Clone)]
pub struct TraceLayer {
    pub attn: Array2<f64>,
    pub mlp: Array2<f64>,
    pub h: Array2<f64>,
}

impl ResidualTrace {
    /// Stream state entering block `layer` (h0 for layer 0).
    pub fn h_in(&self, layer: usize) -> &Array2<f64> {
        if layer == 0 {
            &self.h0
        } else {
            &self.layers[layer - 1].h
        }
    }
}

/// Runs one example in f64, recording the full residual stream, with an
/// optional module filter. Returns the final-position logits and the trace.
pub fn forward_with_trace(
    state: &ModelState<f64>,
    tokens: &[u32],
    filter: Option<&ModuleFilter<'_>>,
) -> Result<(Array1<f64>, ResidualTrace)> {
    if tokens.is_empty() {
        return Err(CoreError::EmptyDataset);
    }
    let c = &state.config;
    if tokens.len() > c.max_seq_len {
        return Err(CoreError::SequenceTooLong {
            got: tokens.len(),
            max: c.max_seq_len,
        });
    }
    for &t in tokens {
        if t as usize >= c.vocab_size {
            return Err(CoreError::UnknownTokenId(t));
        }
    }
    if let Some(f) = filter {
        let (pr, pc) = f.projection.dim();
        if pr != c.d_model || pc != c.d_model {
            return Err(CoreError::ShapeMismatch {
                what: "module filter projection",
                expected: format!("({}, {})", c.d_model, c.d_model),
                got: format!("({pr}, {pc})"),
            });
        }
    }
    let seq = tokens.len();
    let d = c.d_model;
    let mut x = Array2::<f64>::zeros((seq, d));
    for (t, &tok) in tokens.iter().enumerate() {
        let mut row = x.row_mut(t);
        row.assign(&state.w_e.row(tok as usize));
        row += &state.w_pos.row(t);
    }
    let mut trace = ResidualTrace {
        h0: x.clone(),
        layers: Vec::with_capacity(state.layers.len()),
    };
    for (li, l) in state.layers.iter().enumerate() {
        let (y1, _, _) = layernorm_fwd(&x, &l.ln1_g, &l.ln1_b);
        let (_, _, _, _, ctx) = attention_fwd(l, &y1, 1, seq, c.n_heads);
        let mut attn_out = linear_fwd(&ctx, &l.wo, &l.bo);
        if let Some(f) = filter {
            if f.attn && f.applies(li) {
                f.project_rows(&mut attn_out);
            }
        }
        let x_mid = &x + &attn_out;
        let (y2, _, _) = layernorm_fwd(&x_mid, &l.ln2_g, &l.ln2_b);
        let pre = linear_fwd(&y2, &l.w_in, &l.b_in);
        let act = pre.mapv(gelu);
        let mut mlp_out = linear_fwd(&act, &l.w_out, &l.b_out);
        if let Some(f) = filter {
            if f.mlp && f.applies(li) {
                f.project_rows(&mut mlp_out);
            }
        }
        x = &x_mid + &mlp_out;
        trace.layers.push(TraceLayer {
            attn: attn_out,
            mlp: mlp_out,
            h: x.clone(),
        });
    }
    let logits = state.w_u.dot(&x.row(seq - 1));
    Ok((logits, trace))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{EmbeddingMode, ModelConfig};

    fn small_state() -> ModelState<f64> {
        ModelState::init(ModelConfig {
            n_layers: 2,
            d_model: 16,
            n_heads: 2,
            d_ff: 24,
            vocab_size: 12,
            n_numbers: 7,
            max_seq_len: 6,
            embedding_mode: EmbeddingMode::Random,
            seed: 9,
        })
        .unwrap()
    }

    #[test]
    fn causal_softmax_rows_sum_to_one_and_mask_upper() {
        let mut m = ndarray::array![[1.0f64, 9.0, 9.0], [0.5, 0.25, 9.0], [0.1, 0.2, 0.3]];
        causal_softmax(&mut m);
        assert_eq!(m[(0, 0)], 1.0);
        assert_eq!(m[(0, 1)], 0.0);
        assert_eq!(m[(0, 2)], 0.0);
        assert_eq!(m[(1, 2)], 0.0);
        for i in 0..3 {
            let s: f64 = m.row(i).sum();
            assert!((s - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn batched_and_traced_paths_agree() {
        let state = small_state();
        let seq: Vec<u32> = vec![3, 11, 5, 2];
        let batch = Batch::new(&[&seq, &[1, 2][..]], &[4, 0], 11).unwrap();
        let logits = forward_batch(&state, &batch).unwrap();
        let (l0, _) = forward_with_trace(&state, &seq, None).unwrap();
        for j in 0..7 {
            assert!(
                (logits[(0, j)] - l0[j]).abs() < 1e-12,
                "padding must not leak into real logits"
            );
        }
    }

    #[test]
    fn trace_satisfies_stream_identity() {
        let state = small_state();
        let (_, trace) = forward_with_trace(&state, &[0, 1, 2, 3, 4], None).unwrap();
        for li in 0..2 {
            let resid = trace.layers[li].h.clone()
                - trace.h_in(li)
                - &trace.layers[li].attn
                - &trace.layers[li].mlp;
            let worst = resid.iter().fold(0.0f64, |m, v| m.max(v.abs()));
            assert!(worst < 1e-12, "layer {li} identity broke: {worst}");
        }
    }

    #[test]
    fn identity_filter_is_bitwise_noop() {
        let state = small_state();
        let eye = ndarray::Array2::<f64>::eye(16);
        let f = ModuleFilter {
            projection: eye.view(),
            attn: true,
            mlp: true,
            layers: vec![true, true],
            positions: None,
        };
        let (plain, tr_plain) = forward_with_trace(&state, &[5, 6, 0], None).unwrap();
        let (fil, tr_fil) = forward_with_trace(&state, &[5, 6, 0], Some(&f)).unwrap();
        assert_eq!(plain, fil);
        assert_eq!(tr_plain.layers[1].h, tr_fil.layers[1].h);
    }

    #[test]
    fn zero_projection_kills_module_output() {
        let state = small_state();
        let zero = ndarray::Array2::<f64>::zeros((16, 16));
        let f = ModuleFilter {
            projection: zero.view(),
            attn: false,
            mlp: true,
            layers: vec![false, true],
            positions: None,
        };
        let (_, tr) = forward_with_trace(&state, &[5, 6, 0], Some(&f)).unwrap();
        assert!(tr.layers[1].mlp.iter().all(|&v| v == 0.0));
        assert!(tr.layers[0].mlp.iter().any(|&v| v != 0.0));
    }
}
