//! Round-trip tests for the dataset files plus an independent count oracle.

use fprobe_core::dataset::{NumberDataset, NumberVocab, Split, TaskFormat};
use proptest::prelude::*;
use std::io::BufReader;

/// Count oracle by plain nested loops, no iterator tricks shared with the
/// generator.
fn count_addition_pairs(max_operand: usize) -> usize {
    let mut n = 0;
    for a in 0..=max_operand {
        for b in 0..=max_operand {
            if a <= b {
                n += 1;
            }
        }
    }
    n
}

fn count_mul_pairs(max_product: usize, max_number: usize) -> usize {
    let mut n = 0;
    for a in 0..=max_number {
        for b in a..=max_number {
            if a * b <= max_product {
                n += 1;
            }
        }
    }
    n
}

#[test]
fn counts_match_loop_oracle() {
    for max_operand in [1usize, 5, 50] {
        let ds = NumberDataset::gen_addition(max_operand, 2 * max_operand, 0).unwrap();
        assert_eq!(ds.examples.len(), count_addition_pairs(max_operand));
    }
    let ds = NumberDataset::gen_multiplication(100, 100, 0).unwrap();
    assert_eq!(ds.examples.len(), count_mul_pairs(100, 100));
}

#[test]
fn dir_round_trip_preserves_everything() {
    let dir = tempfile::tempdir().unwrap();
    for (name, ds) in [
        ("add", NumberDataset::gen_addition(20, 100, 5).unwrap()),
        ("rpn", NumberDataset::gen_rpn(20, 100, 5).unwrap()),
        ("mul", NumberDataset::gen_multiplication(90, 100, 5).unwrap()),
    ] {
        let sub = dir.path().join(name);
        ds.write_dir(&sub).unwrap();
        let back = NumberDataset::read_dir(&sub).unwrap();
        assert_eq!(back.examples.len(), ds.examples.len());
        assert_eq!(back.format, ds.format);
        assert_eq!(back.vocab.size(), ds.vocab.size());
        for (a, b) in ds.examples.iter().zip(back.examples.iter()) {
            assert_eq!(a, b, "dataset {name}");
        }
    }
}

#[test]
fn sidecar_round_trip() {
    let vocab = NumberVocab::for_format(100, TaskFormat::NaturalLanguage);
    let mut buf = Vec::new();
    vocab.write_sidecar(&mut buf).unwrap();
    let back = NumberVocab::read_sidecar(BufReader::new(buf.as_slice())).unwrap();
    assert_eq!(back.size(), vocab.size());
    assert_eq!(back.max_number(), vocab.max_number());
    for id in 0..vocab.size() as u32 {
        assert_eq!(back.token(id).unwrap(), vocab.token(id).unwrap());
    }
}

#[test]
fn rewriting_is_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let ds = NumberDataset::gen_addition(30, 100, 77).unwrap();
    ds.write_dir(&dir.path().join("a")).unwrap();
    ds.write_dir(&dir.path().join("b")).unwrap();
    for f in ["dataset.jsonl", "vocab.tsv", "meta.json"] {
        let a = std::fs::read(dir.path().join("a").join(f)).unwrap();
        let b = std::fs::read(dir.path().join("b").join(f)).unwrap();
        assert_eq!(a, b, "{f}");
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn every_example_is_well_formed(seed in 0u64..10_000) {
        let ds = NumberDataset::gen_addition(12, 30, seed).unwrap();
        for ex in &ds.examples {
            prop_assert_eq!(ex.answer, ex.op_a + ex.op_b);
            prop_assert!(ds.vocab.is_number(ex.answer));
            prop_assert!(ex.template < 5);
            // question round-trips through the tokenizer
            let toks = fprobe_core::dataset::tokenize(&ex.question, ds.format);
            let ids: Vec<u32> = toks.iter().map(|t| ds.vocab.id(t).unwrap()).collect();
            prop_assert_eq!(&ids, &ex.tokens);
        }
        // splits partition positions deterministically
        let n = ds.examples.len();
        let tr = ds.split_indices(Split::Train).len();
        prop_assert!(tr >= 1);
        prop_assert_eq!(
            tr + ds.split_indices(Split::Val).len() + ds.split_indices(Split::Test).len(),
            n
        );
    }
}
