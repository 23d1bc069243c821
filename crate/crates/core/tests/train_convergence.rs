//! End-to-end learning sanity: a 1-layer model must be able to memorize a
//! tiny modular-addition table, and the full pipeline (dataset -> tokenize
//! -> train -> evaluate) must hold its determinism guarantees.

use fprobe_core::model::{
    evaluate, train, EmbeddingMode, ModelConfig, ModelState, TokenizedExample, TrainHyper,
};

fn mod_table(p: u32, op_token: u32) -> Vec<TokenizedExample> {
    let mut out = Vec::new();
    for a in 0..p {
        for b in 0..p {
            out.push((vec![a, b, op_token], (a + b) % p));
        }
    }
    out
}

#[test]
fn one_layer_model_memorizes_mod_seven_addition() {
    let config = ModelConfig {
        n_layers: 1,
        d_model: 32,
        n_heads: 4,
        d_ff: 64,
        vocab_size: 9, // 0..6, op token 7, pad 8
        n_numbers: 7,
        max_seq_len: 4,
        embedding_mode: EmbeddingMode::Random,
        seed: 11,
    };
    let pairs = mod_table(7, 7);
    let hyper = TrainHyper {
        epochs: 300,
        batch_size: 16,
        lr_start: 3e-3,
        lr_end: 3e-4,
        seed: 4,
        ..TrainHyper::default()
    };
    let mut state = ModelState::<f32>::init(config).unwrap();
    let metrics = train(&mut state, &pairs, &pairs, 8, &hyper, |m| {
        if m.epoch % 10 == 0 {
            eprintln!(
                "epoch {:3}  train {:.4}  val {:.4}  acc {:.3}",
                m.epoch, m.train_loss, m.val_loss, m.val_accuracy
            );
        }
    })
    .unwrap();
    let last = metrics.last().unwrap();
    assert!(
        last.val_accuracy > 0.95,
        "memorization failed: accuracy {}",
        last.val_accuracy
    );
    let (_, acc) = evaluate(&state, &pairs, 8).unwrap();
    assert_eq!(acc, last.val_accuracy);
}

/// Wall-clock probe for sizing the reference configuration; run on demand:
/// `cargo test -p fprobe-core --test train_convergence -- --ignored --nocapture`
#[test]
#[ignore]
fn time_reference_shape_steps() {
    for (l, d_ff) in [(2usize, 256usize), (2, 512), (4, 512)] {
        let config = ModelConfig {
            n_layers: l,
            d_model: 128,
            n_heads: 4,
            d_ff,
            vocab_size: 104, // 101 numbers + comma + plus + pad
            n_numbers: 101,
            max_seq_len: 8,
            embedding_mode: EmbeddingMode::Random,
            seed: 1,
        };
        // synthetic RPN-shaped batches: "a , b +"
        let pairs: Vec<TokenizedExample> = (0..1061u32)
            .map(|i| {
                let a = i % 51;
                let b = (i / 51) % 51;
                (vec![a, 101, b, 102], (a + b).min(100))
            })
            .collect();
        let hyper = TrainHyper {
            epochs: 3,
            batch_size: 16,
            lr_start: 1e-3,
            seed: 0,
            ..TrainHyper::default()
        };
        let mut state = ModelState::<f32>::init(config).unwrap();
        let t0 = std::time::Instant::now();
        train(&mut state, &pairs, &pairs[..128], 103, &hyper, |_| {}).unwrap();
        let dt = t0.elapsed().as_secs_f64();
        eprintln!(
            "L={l} d_ff={d_ff}: {:.2}s for 3 epochs -> {:.2}s/epoch, {:.1}ms/step",
            dt,
            dt / 3.0,
            1000.0 * dt / (3.0 * 67.0)
        );
    }
}
