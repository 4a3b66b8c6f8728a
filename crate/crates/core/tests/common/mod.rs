//! Independent reference implementations used by the integration tests.
#![allow(dead_code)]

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use styleshift::ModelConfig;

/// Occurrences of `gram` in `tokens`, by linear scan.
fn occurrences(tokens: &[String], gram: &[String]) -> usize {
    if gram.is_empty() || tokens.len() < gram.len() {
        return 0;
    }
    (0..=tokens.len() - gram.len())
        .filter(|&i| tokens[i..i + gram.len()] == *gram)
        .count()
}

/// Clipped matches and candidate n-gram total, counting each distinct
/// candidate n-gram once without hashing.
fn clipped(cand: &[String], reference: &[String], n: usize) -> (usize, usize) {
    if cand.len() < n {
        return (0, 0);
    }
    let grams: Vec<&[String]> = (0..=cand.len() - n).map(|i| &cand[i..i + n]).collect();
    let mut seen: Vec<&[String]> = Vec::new();
    let mut matches = 0;
    for g in &grams {
        if seen.contains(g) {
            continue;
        }
        seen.push(g);
        matches += occurrences(cand, g).min(occurrences(reference, g));
    }
    (matches, grams.len())
}

pub fn oracle_bleu(cands: &[Vec<String>], refs: &[Vec<String>], max_n: usize) -> f64 {
    let c_len: usize = cands.iter().map(Vec::len).sum();
    let r_len: usize = refs.iter().map(Vec::len).sum();
    let mut precisions = Vec::new();
    for n in 1..=max_n {
        let (mut m, mut t) = (0usize, 0usize);
        for (c, r) in cands.iter().zip(refs) {
            let (a, b) = clipped(c, r, n);
            m += a;
            t += b;
        }
        if n == 1 && m == 0 {
            return 0.0;
        }
        precisions.push(if n >= 2 && m == 0 {
            1.0 / (t as f64 + 1.0)
        } else {
            m as f64 / t as f64
        });
    }
    let bp = if c_len < r_len {
        (1.0 - r_len as f64 / c_len as f64).exp()
    } else {
        1.0
    };
    let geo = precisions.iter().product::<f64>().powf(1.0 / max_n as f64);
    100.0 * bp * geo
}

fn f1(p: f64, r: f64) -> f64 {
    if p + r == 0.0 {
        0.0
    } else {
        2.0 * p * r / (p + r)
    }
}

pub fn oracle_rouge_n(cand: &[String], reference: &[String], n: usize) -> f64 {
    let (m, c) = clipped(cand, reference, n);
    let r = reference.len().saturating_sub(n - 1);
    if c == 0 || r == 0 {
        return 0.0;
    }
    f1(m as f64 / c as f64, m as f64 / r as f64)
}

fn is_subsequence(sub: &[&String], of: &[String]) -> bool {
    let mut it = of.iter();
    sub.iter().all(|w| it.any(|x| x == *w))
}

/// LCS by enumerating every subsequence of `a` (|a| ≤ 16).
pub fn brute_lcs(a: &[String], b: &[String]) -> usize {
    assert!(a.len() <= 16);
    let mut best = 0;
    for mask in 0u32..(1 << a.len()) {
        let k = mask.count_ones() as usize;
        if k <= best {
            continue;
        }
        let sub: Vec<&String> = (0..a.len()).filter(|i| mask & (1 << i) != 0).map(|i| &a[i]).collect();
        if is_subsequence(&sub, b) {
            best = k;
        }
    }
    best
}

pub fn oracle_rouge_l(cand: &[String], reference: &[String]) -> f64 {
    if cand.is_empty() || reference.is_empty() {
        return 0.0;
    }
    let l = brute_lcs(cand, reference) as f64;
    f1(l / cand.len() as f64, l / reference.len() as f64)
}

pub fn random_tokens(rng: &mut ChaCha8Rng, max_len: usize, vocab: usize) -> Vec<String> {
    let n = rng.random_range(0..=max_len);
    (0..n).map(|_| format!("w{}", rng.random_range(0..vocab))).collect()
}

pub fn toks(s: &str) -> Vec<String> {
    s.split_whitespace().map(str::to_string).collect()
}

/// Smallest configuration that exercises every code path.
pub fn tiny_config(vocab_size: usize) -> ModelConfig {
    ModelConfig {
        d_model: 8,
        n_layers: 1,
        heads: 2,
        max_len: 8,
        vocab_size,
        dropout: 0.0,
    }
}

/// JSON run configuration small enough for CLI tests.
pub const TINY_RUN_CONFIG: &str = r#"{
  "model": {"d_model": 8, "n_layers": 1, "heads": 2, "max_len": 16, "dropout": 0.0},
  "train": {"batch_size": 4, "diffusion_steps": 50, "eval_samples": 2, "warmup_steps": 0}
}"#;
