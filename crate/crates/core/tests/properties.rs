mod common;

use std::collections::HashSet;

use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use common::random_tokens;
use styleshift::classifier::{train_classifier, ClassifierConfig};
use styleshift::corpus::{corpus_stats, split, split_sizes, PairExample};
use styleshift::metrics::{bleu, distinct_n, rouge, RougeVariant};
use styleshift::numeric::{grad_check, Tape, Tensor, Var};
use styleshift::Vocab;

fn tensor(rows: usize, cols: usize, seed: u64) -> Tensor<f64> {
    Tensor::randn(&[rows, cols], 1.0, &mut ChaCha8Rng::seed_from_u64(seed))
}

/// Scalar readout with non-uniform weights so every output entry matters.
fn readout(tape: &mut Tape<f64>, y: Var, seed: u64) -> styleshift::Result<Var> {
    let shape = tape.value(y).shape().to_vec();
    let w = Tensor::randn(&shape, 1.0, &mut ChaCha8Rng::seed_from_u64(seed ^ 0x5eed));
    let m = tape.mul_const(y, &w)?;
    tape.sum(m)
}

fn check(op: usize, rows: usize, cols: usize, seed: u64) -> f64 {
    let x = tensor(rows, cols, seed);
    let other = tensor(rows, cols, seed + 1);
    let square = tensor(cols, cols, seed + 2);
    let row = tensor(1, cols, seed + 3);
    let f = |tape: &mut Tape<f64>, v: Var| -> styleshift::Result<Var> {
        let y = match op {
            0 => {
                let b = tape.leaf(square.clone());
                tape.matmul(v, b)?
            }
            1 => {
                let b = tape.leaf(other.clone());
                tape.matmul_nt(v, b)?
            }
            2 => {
                let b = tape.leaf(other.clone());
                tape.mul(v, b)?
            }
            3 => {
                let g = tape.leaf(row.clone());
                let b = tape.leaf(row.map(|x| x * 0.5));
                tape.layer_norm(v, g, b)?
            }
            4 => tape.gelu(v)?,
            5 => tape.softmax_rows(v)?,
            6 => {
                let r = tape.leaf(row.clone());
                tape.add_row(v, r)?
            }
            7 => {
                let ids: Vec<usize> = (0..rows + 2).map(|i| (i * 7 + seed as usize) % rows).collect();
                tape.gather(v, &ids)?
            }
            8 => {
                let t = tape.leaf(other.clone());
                let picked: Vec<usize> = (0..rows).step_by(2).collect();
                return tape.mse_rows(v, t, &picked);
            }
            _ => {
                let picks: Vec<(usize, usize)> = (0..rows).map(|i| (i, (i + seed as usize) % cols)).collect();
                return tape.cross_entropy_rows(v, &picks);
            }
        };
        readout(tape, y, seed)
    };
    grad_check(f, &x, 1e-5).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(120))]

    #[test]
    fn primitive_gradients_match_finite_differences(
        op in 0usize..10, rows in 1usize..5, cols in 2usize..6, seed in 0u64..10_000,
    ) {
        let err = check(op, rows, cols, seed);
        prop_assert!(err < 1e-5, "op {op}: relative error {err}");
    }

    #[test]
    fn softmax_rows_are_distributions(rows in 1usize..6, cols in 1usize..9, seed in 0u64..1000, scale in 0.1f64..50.0) {
        let x = tensor(rows, cols, seed).map(|v| v * scale);
        let s = x.softmax_rows();
        for i in 0..rows {
            let r = s.row(i);
            prop_assert!(r.iter().all(|&p| (0.0..=1.0).contains(&p)));
            prop_assert!((r.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn encode_decode_roundtrip(words in prop::collection::vec("[a-z]{1,6}", 0..10)) {
        let text = words.join(" ");
        let vocab = Vocab::build(&[text.as_str(), "seed"], 1, &["D1".to_string()], true).unwrap();
        let seq = vocab.encode(&text, Some("D1"), words.len() + 3).unwrap();
        prop_assert_eq!(seq.true_length, words.len() + 3);
        prop_assert_eq!(vocab.decode(&seq).unwrap(), text);
    }

    #[test]
    fn metrics_stay_in_range(seed in 0u64..1_000_000) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let c = random_tokens(&mut rng, 10, 6);
        let r = random_tokens(&mut rng, 10, 6);
        let b = bleu(std::slice::from_ref(&c), std::slice::from_ref(&r), 4).unwrap();
        prop_assert!((0.0..=100.0).contains(&b));
        for v in [RougeVariant::One, RougeVariant::Two, RougeVariant::L] {
            let p = rouge(&c, &r, v);
            for x in [p.precision, p.recall, p.f1] {
                prop_assert!((0.0..=1.0).contains(&x));
            }
        }
        let d = distinct_n(&[c, r], 2);
        prop_assert!((0.0..=1.0).contains(&d));
    }
}

fn pairs(n: usize) -> Vec<PairExample> {
    (0..n)
        .map(|i| PairExample {
            src: format!("s{i} {}", "x ".repeat(i % 7)),
            trg: format!("t{i} {}", "y ".repeat(i % 5)),
            style: "D1".into(),
        })
        .collect()
}

proptest! {
    #[test]
    fn split_is_a_partition(n in 3usize..400, seed in any::<u64>(), a in 1u32..20, b in 1u32..20, c in 1u32..20) {
        let all = pairs(n);
        let sizes = split_sizes(n, [a, b, c]).unwrap();
        prop_assert_eq!(sizes.iter().sum::<usize>(), n);
        let total = (a + b + c) as f64;
        for (s, r) in sizes.iter().zip([a, b, c]) {
            prop_assert!((*s as f64 - n as f64 * r as f64 / total).abs() <= 1.0);
        }
        if let Ok(set) = split(&all, [a, b, c], seed) {
            let seen: HashSet<String> =
                set.train.iter().chain(&set.test).chain(&set.validation).map(|p| p.src.clone()).collect();
            prop_assert_eq!(seen.len(), n);
            prop_assert_eq!([set.train.len(), set.test.len(), set.validation.len()], sizes);
        }
    }

    #[test]
    fn stats_ignore_order(n in 1usize..200, seed in any::<u64>()) {
        use rand::seq::SliceRandom;
        let mut all = pairs(n);
        let before = corpus_stats(&all).unwrap();
        all.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        prop_assert_eq!(corpus_stats(&all).unwrap(), before);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(40))]

    #[test]
    fn classifier_ignores_word_order(seed in any::<u64>()) {
        use rand::seq::SliceRandom;
        let data: Vec<PairExample> = (0..60)
            .map(|i| PairExample {
                src: format!("he saw item{} today", i % 4),
                trg: format!("she saw item{} today", i % 4),
                style: "D1".into(),
            })
            .collect();
        let cfg = ClassifierConfig { bigrams: false, min_freq: 1, ..Default::default() };
        let model = train_classifier(&data, &cfg).unwrap();
        let mut words = ["she", "saw", "item2", "he", "today", "she"];
        let base = model.classify(&words.join(" ")).1;
        words.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        prop_assert!((model.classify(&words.join(" ")).1 - base).abs() < 1e-12);
    }
}
