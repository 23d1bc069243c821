//! Training loop: decoupled-weight-decay Adam, learning rate walked
//! linearly from lr_start to lr_end over the optimizer steps, no warmup.
//! Each epoch reshuffles with a seed derived from (seed, epoch), so a run
//! is a pure function of (initial state, data, hyperparameters).
//!
//! Weight decay touches only the weight matrices; biases and layer-norm
//! parameters are exempt, the usual transformer recipe.

use super::forward::{argmax_rows, batch_loss, forward_batch, loss_and_grad, Batch};
use super::{EmbeddingMode, ModelState};
use crate::error::{CoreError, Result};
use crate::rng;

#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(default)]
pub struct TrainHyper {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr_start: f64,
    pub lr_end: f64,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
    pub seed: u64,
}

impl Default for TrainHyper {
    fn default() -> Self {
        Self {
            epochs: 200,
            batch_size: 16,
            lr_start: 1e-3,
            lr_end: 0.0,
            weight_decay: 0.01,
            beta1: 0.9,
            beta2: 0.999,
            adam_eps: 1e-8,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    pub val_accuracy: f64,
}

/// One tokenized example: question token ids and the answer class.
pub type TokenizedExample = (Vec<u32>, u32);

struct Adam {
    m: Vec<Vec<f32>>,
    v: Vec<Vec<f32>>,
    t: u64,
}

impl Adam {
    fn new(shapes: &[usize]) -> Self {
        Self {
            m: shapes.iter().map(|&n| vec![0.0; n]).collect(),
            v: shapes.iter().map(|&n| vec![0.0; n]).collect(),
            t: 0,
        }
    }

    fn step(
        &mut self,
        params: &mut ModelState<f32>,
        grads: &ModelState<f32>,
        hyper: &TrainHyper,
        lr: f64,
        freeze_we: bool,
    ) {
        self.t += 1;
        let b1 = hyper.beta1 as f32;
        let b2 = hyper.beta2 as f32;
        let bc1 = 1.0 - (hyper.beta1).powi(self.t as i32);
        let bc2 = 1.0 - (hyper.beta2).powi(self.t as i32);
        let eps = hyper.adam_eps as f32;
        let lr = lr as f32;
        let wd = hyper.weight_decay as f32;
        let g_flat = grads.flat();
        for (ti, (is_we, is_matrix, w)) in params.flat_mut().into_iter().enumerate() {
            if is_we && freeze_we {
                continue;
            }
            let g = g_flat[ti];
            let m = &mut self.m[ti];
            let v = &mut self.v[ti];
            for i in 0..w.len() {
                m[i] = b1 * m[i] + (1.0 - b1) * g[i];
                v[i] = b2 * v[i] + (1.0 - b2) * g[i] * g[i];
                let mh = m[i] / bc1 as f32;
                let vh = v[i] / bc2 as f32;
                w[i] -= lr * (mh / (vh.sqrt() + eps));
                if is_matrix {
                    w[i] -= lr * wd * w[i];
                }
            }
        }
    }
}

/// Loss and exact-match accuracy over a set, evaluated in inference chunks.
pub fn evaluate(
    state: &ModelState<f32>,
    pairs: &[TokenizedExample],
    pad_id: u32,
) -> Result<(f64, f64)> {
    if pairs.is_empty() {
        return Ok((f64::NAN, f64::NAN));
    }
    let chunk = 256;
    let mut loss_sum = 0.0;
    let mut correct = 0usize;
    for group in pairs.chunks(chunk) {
        let seqs: Vec<&[u32]> = group.iter().map(|(s, _)| s.as_slice()).collect();
        let targets: Vec<u32> = group.iter().map(|&(_, t)| t).collect();
        let batch = Batch::new(&seqs, &targets, pad_id)?;
        let logits = forward_batch(state, &batch)?;
        loss_sum += batch_loss(&logits, &targets) * group.len() as f64;
        for (pred, &want) in argmax_rows(&logits).into_iter().zip(&targets) {
            if pred == want {
                correct += 1;
            }
        }
    }
    Ok((loss_sum / pairs.len() as f64, correct as f64 / pairs.len() as f64))
}

/// Trains in place and returns per-epoch metrics. `on_epoch` fires after
/// each epoch's validation pass (use it for progress lines).
pub fn train(
    state: &mut ModelState<f32>,
    train_pairs: &[TokenizedExample],
    val_pairs: &[TokenizedExample],
    pad_id: u32,
    hyper: &TrainHyper,
    mut on_epoch: impl FnMut(&EpochMetrics),
) -> Result<Vec<EpochMetrics>> {
    if train_pairs.is_empty() {
        return Err(CoreError::EmptyDataset);
    }
    if hyper.batch_size == 0 {
        return Err(CoreError::BadConfig("batch_size is zero".into()));
    }
    let freeze_we = state.config.embedding_mode == EmbeddingMode::InjectedFrozen;
    let n = train_pairs.len();
    let steps_per_epoch = n.div_ceil(hyper.batch_size);
    let total_steps = hyper.epochs * steps_per_epoch;
    let shapes: Vec<usize> = state.flat().iter().map(|s| s.len()).collect();
    let mut adam = Adam::new(&shapes);
    let mut metrics = Vec::with_capacity(hyper.epochs);
    let mut step_done = 0usize;
    for epoch in 0..hyper.epochs {
        let mut order: Vec<usize> = (0..n).collect();
        let mut erng = rng::seeded(rng::derive_seed(hyper.seed, epoch as u64));
        rng::shuffle(&mut erng, &mut order);
        let mut loss_weighted = 0.0;
        for chunk in order.chunks(hyper.batch_size) {
            let seqs: Vec<&[u32]> = chunk.iter().map(|&i| train_pairs[i].0.as_slice()).collect();
            let targets: Vec<u32> = chunk.iter().map(|&i| train_pairs[i].1).collect();
            let batch = Batch::new(&seqs, &targets, pad_id)?;
            let (loss, grads) = loss_and_grad(state, &batch)?;
            if !loss.is_finite() {
                return Err(CoreError::Diverged { step: state.step });
            }
            let lr = if total_steps > 1 {
                hyper.lr_start
                    + (hyper.lr_end - hyper.lr_start) * step_done as f64 / (total_steps - 1) as f64
            } else {
                hyper.lr_start
            };
            adam.step(state, &grads, hyper, lr, freeze_we);
            state.step += 1;
            step_done += 1;
            loss_weighted += loss * chunk.len() as f64;
        }
        let (val_loss, val_accuracy) = evaluate(state, val_pairs, pad_id)?;
        let em = EpochMetrics {
            epoch,
            train_loss: loss_weighted / n as f64,
            val_loss,
            val_accuracy,
        };
        on_epoch(&em);
        metrics.push(em);
    }
    Ok(metrics)
}

/// Per-epoch metrics as CSV.
pub fn write_metrics_csv<W: std::io::Write>(metrics: &[EpochMetrics], mut w: W) -> std::io::Result<()> {
    writeln!(w, "epoch,train_loss,val_loss,val_accuracy")?;
    for m in metrics {
        writeln!(w, "{},{},{},{}", m.epoch, m.train_loss, m.val_loss, m.val_accuracy)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{EmbeddingMode, ModelConfig};

    fn tiny_config() -> ModelConfig {
        ModelConfig {
            n_layers: 1,
            d_model: 16,
            n_heads: 2,
            d_ff: 32,
            vocab_size: 9, // numbers 0..6, one word, pad
            n_numbers: 7,
            max_seq_len: 5,
            embedding_mode: EmbeddingMode::Random,
            seed: 3,
        }
    }

    /// a + b mod 7 phrased as tiny token sequences "a b <op>"
    fn toy_pairs() -> Vec<TokenizedExample> {
        let mut out = Vec::new();
        for a in 0..7u32 {
            for b in 0..7u32 {
                out.push((vec![a, b, 7], (a + b) % 7));
            }
        }
        out
    }

    #[test]
    fn zero_epochs_is_identity() {
        let mut state = ModelState::<f32>::init(tiny_config()).unwrap();
        let before = state.clone();
        let hyper = TrainHyper {
            epochs: 0,
            ..TrainHyper::default()
        };
        let metrics = train(&mut state, &toy_pairs(), &[], 8, &hyper, |_| {}).unwrap();
        assert!(metrics.is_empty());
        assert_eq!(state.step, 0);
        for (a, b) in state.flat().iter().zip(before.flat().iter()) {
            assert_eq!(a, b);
        }
    }

    #[test]
    fn loss_falls_and_run_is_reproducible() {
        let hyper = TrainHyper {
            epochs: 150,
            batch_size: 8,
            lr_start: 3e-3,
            lr_end: 1e-4,
            seed: 5,
            ..TrainHyper::default()
        };
        let pairs = toy_pairs();
        let mut s1 = ModelState::<f32>::init(tiny_config()).unwrap();
        let m1 = train(&mut s1, &pairs, &pairs, 8, &hyper, |_| {}).unwrap();
        assert!(m1.last().unwrap().train_loss < 0.25 * m1[0].train_loss,
            "loss should fall on a memorizable set: {} -> {}",
            m1[0].train_loss, m1.last().unwrap().train_loss);
        assert_eq!(s1.step as usize, 150 * pairs.len().div_ceil(8));

        let mut s2 = ModelState::<f32>::init(tiny_config()).unwrap();
        let m2 = train(&mut s2, &pairs, &pairs, 8, &hyper, |_| {}).unwrap();
        assert_eq!(m1, m2);
        for (a, b) in s1.flat().iter().zip(s2.flat().iter()) {
            assert_eq!(a, b, "same seed must give identical weights");
        }
    }

    #[test]
    fn frozen_embedding_is_bit_identical_after_training() {
        let pairs = toy_pairs();
        let hyper = TrainHyper {
            epochs: 3,
            batch_size: 16,
            lr_start: 1e-2,
            seed: 1,
            ..TrainHyper::default()
        };
        let mut state = ModelState::<f32>::init(tiny_config()).unwrap();
        let rows = ndarray::Array2::from_shape_fn((7, 16), |(i, j)| {
            ((i * 31 + j * 7) % 13) as f32 * 0.05 - 0.3
        });
        crate::model::inject_embeddings(&mut state, rows.view(), true).unwrap();
        let before = state.w_e.clone();
        train(&mut state, &pairs, &[], 8, &hyper, |_| {}).unwrap();
        assert_eq!(state.w_e, before);

        // same injection unfrozen: rows move after one step
        let mut state2 = ModelState::<f32>::init(tiny_config()).unwrap();
        crate::model::inject_embeddings(&mut state2, rows.view(), false).unwrap();
        let before2 = state2.w_e.clone();
        let hyper1 = TrainHyper { epochs: 1, ..hyper };
        train(&mut state2, &pairs, &[], 8, &hyper1, |_| {}).unwrap();
        assert_ne!(state2.w_e, before2);
    }

    #[test]
    fn nan_in_weights_reports_divergence_step() {
        let mut state = ModelState::<f32>::init(tiny_config()).unwrap();
        state.w_u[(0, 0)] = f32::NAN;
        let hyper = TrainHyper {
            epochs: 1,
            ..TrainHyper::default()
        };
        match train(&mut state, &toy_pairs(), &[], 8, &hyper, |_| {}) {
            Err(CoreError::Diverged { step }) => assert_eq!(step, 0),
            other => panic!("expected divergence, got {other:?}"),
        }
    }

    #[test]
    fn metrics_csv_shape() {
        let ms = vec![EpochMetrics {
            epoch: 0,
            train_loss: 1.5,
            val_loss: 2.0,
            val_accuracy: 0.25,
        }];
        let mut buf = Vec::new();
        write_metrics_csv(&ms, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text, "epoch,train_loss,val_loss,val_accuracy\n0,1.5,2,0.25\n");
    }
}
