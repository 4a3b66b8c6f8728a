//! Surface overlap (BLEU, ROUGE), embedding similarity, diversity, and the
//! aggregate [`MetricReport`].
//!
//! Conventions: BLEU is corpus-level with add-one smoothing applied to an
//! n ≥ 2 precision only when its match count is zero; ROUGE fields of a
//! report are means of per-pair F1; `embed_score` is greedy cosine matching
//! over the trained token embeddings and is not comparable to scores from a
//! pretrained encoder.

use std::collections::{HashMap, HashSet};
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::classifier::StyleModel;
use crate::error::{Error, Result};
use crate::numeric::{dot, Tensor};
use crate::tokenizer::Vocab;

fn ngram_counts<S: AsRef<str>>(tokens: &[S], n: usize) -> HashMap<Vec<&str>, usize> {
    let mut counts = HashMap::new();
    if n == 0 || tokens.len() < n {
        return counts;
    }
    for w in tokens.windows(n) {
        let key: Vec<&str> = w.iter().map(AsRef::as_ref).collect();
        *counts.entry(key).or_insert(0) += 1;
    }
    counts
}

fn clipped_overlap<S: AsRef<str>>(cand: &[S], reference: &[S], n: usize) -> (usize, usize) {
    let c = ngram_counts(cand, n);
    let r = ngram_counts(reference, n);
    let matches = c
        .iter()
        .map(|(g, &k)| k.min(r.get(g).copied().unwrap_or(0)))
        .sum();
    (matches, cand.len().saturating_sub(n - 1))
}

/// Corpus BLEU in [0, 100].
pub fn bleu<S: AsRef<str>>(candidates: &[Vec<S>], references: &[Vec<S>], max_n: usize) -> Result<f64> {
    if candidates.is_empty() {
        return Err(Error::invalid("BLEU needs a non-empty corpus"));
    }
    if candidates.len() != references.len() {
        return Err(Error::invalid(format!(
            "{} candidates vs {} references",
            candidates.len(),
            references.len()
        )));
    }
    if max_n == 0 {
        return Err(Error::invalid("BLEU max_n must be at least 1"));
    }
    let mut matches = vec![0usize; max_n];
    let mut totals = vec![0usize; max_n];
    let (mut cand_len, mut ref_len) = (0usize, 0usize);
    for (c, r) in candidates.iter().zip(references) {
        cand_len += c.len();
        ref_len += r.len();
        for n in 1..=max_n {
            let (m, t) = clipped_overlap(c, r, n);
            matches[n - 1] += m;
            totals[n - 1] += t;
        }
    }
    if cand_len == 0 || matches[0] == 0 {
        return Ok(0.0);
    }
    let mut log_sum = 0.0;
    for n in 1..=max_n {
        let (m, t) = (matches[n - 1] as f64, totals[n - 1] as f64);
        let p = if n >= 2 && matches[n - 1] == 0 {
            (m + 1.0) / (t + 1.0)
        } else {
            m / t
        };
        log_sum += p.ln();
    }
    let bp = if cand_len < ref_len {
        (1.0 - ref_len as f64 / cand_len as f64).exp()
    } else {
        1.0
    };
    Ok(100.0 * bp * (log_sum / max_n as f64).exp())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum RougeVariant {
    One,
    Two,
    L,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Prf {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

impl Prf {
    fn new(precision: f64, recall: f64) -> Self {
        let f1 = if precision + recall > 0.0 {
            2.0 * precision * recall / (precision + recall)
        } else {
            0.0
        };
        Prf {
            precision,
            recall,
            f1,
        }
    }

    fn zero() -> Self {
        Prf::new(0.0, 0.0)
    }
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

/// Longest common subsequence length.
pub fn lcs_len<S: AsRef<str>>(a: &[S], b: &[S]) -> usize {
    let mut prev = vec![0usize; b.len() + 1];
    let mut cur = vec![0usize; b.len() + 1];
    for x in a {
        for (j, y) in b.iter().enumerate() {
            cur[j + 1] = if x.as_ref() == y.as_ref() {
                prev[j] + 1
            } else {
                cur[j].max(prev[j + 1])
            };
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

pub fn rouge<S: AsRef<str>>(candidate: &[S], reference: &[S], variant: RougeVariant) -> Prf {
    let (overlap, c, r) = match variant {
        RougeVariant::One | RougeVariant::Two => {
            let n = if variant == RougeVariant::One { 1 } else { 2 };
            let (m, c) = clipped_overlap(candidate, reference, n);
            (m, c, reference.len().saturating_sub(n - 1))
        }
        RougeVariant::L => (lcs_len(candidate, reference), candidate.len(), reference.len()),
    };
    if c == 0 || r == 0 {
        return Prf::zero();
    }
    Prf::new(ratio(overlap, c), ratio(overlap, r))
}

/// Greedy-match similarity with a flag set when either side is empty.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EmbedScore {
    pub prf: Prf,
    pub empty: bool,
}

fn unit_rows(ids: &[u32], table: &Tensor) -> Vec<Vec<f32>> {
    ids.iter()
        .map(|&id| {
            let row = table.row(id as usize);
            let n = dot(row, row).sqrt();
            if n > 0.0 {
                row.iter().map(|v| v / n).collect()
            } else {
                vec![0.0; row.len()]
            }
        })
        .collect()
}

/// Recall averages, over reference tokens, the best cosine match among
/// candidate tokens; precision is the mirror image.
pub fn embed_score(candidate: &[u32], reference: &[u32], token_embeddings: &Tensor) -> EmbedScore {
    if candidate.is_empty() || reference.is_empty() {
        return EmbedScore {
            prf: Prf::zero(),
            empty: true,
        };
    }
    let c = unit_rows(candidate, token_embeddings);
    let r = unit_rows(reference, token_embeddings);
    let sims: Vec<Vec<f64>> = c
        .iter()
        .map(|cv| r.iter().map(|rv| dot(cv, rv) as f64).collect())
        .collect();
    let precision = sims
        .iter()
        .map(|row| row.iter().copied().fold(f64::NEG_INFINITY, f64::max))
        .sum::<f64>()
        / c.len() as f64;
    let recall = (0..r.len())
        .map(|j| sims.iter().map(|row| row[j]).fold(f64::NEG_INFINITY, f64::max))
        .sum::<f64>()
        / r.len() as f64;
    EmbedScore {
        prf: Prf::new(precision, recall),
        empty: false,
    }
}

/// Unique n-grams over total n-grams across the corpus.
pub fn distinct_n<S: AsRef<str>>(corpus: &[Vec<S>], n: usize) -> f64 {
    let mut unique: HashSet<Vec<&str>> = HashSet::new();
    let mut total = 0usize;
    for sent in corpus {
        if n == 0 || sent.len() < n {
            continue;
        }
        for w in sent.windows(n) {
            unique.insert(w.iter().map(AsRef::as_ref).collect());
            total += 1;
        }
    }
    ratio(unique.len(), total)
}

/// Evaluation scores for one run. `embed_score` stands in for a
/// pretrained-encoder semantic score.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub rouge1: f64,
    pub rouge2: f64,
    #[serde(rename = "rougeL")]
    pub rouge_l: f64,
    pub bleu: f64,
    pub embed_score: f64,
    pub distinct1: f64,
    pub distinct2: f64,
    pub style_accuracy: f64,
}

impl MetricReport {
    /// Range violations, empty when every field is in bounds.
    pub fn range_violations(&self) -> Vec<String> {
        let mut out = Vec::new();
        let mut check = |name: &str, v: f64, lo: f64, hi: f64| {
            if !(v.is_finite() && (lo..=hi).contains(&v)) {
                out.push(format!("{name}={v} outside [{lo}, {hi}]"));
            }
        };
        check("rouge1", self.rouge1, 0.0, 1.0);
        check("rouge2", self.rouge2, 0.0, 1.0);
        check("rougeL", self.rouge_l, 0.0, 1.0);
        check("bleu", self.bleu, 0.0, 100.0);
        check("embed_score", self.embed_score, -1.0 - 1e-9, 1.0 + 1e-9);
        check("distinct1", self.distinct1, 0.0, 1.0);
        check("distinct2", self.distinct2, 0.0, 1.0);
        check("style_accuracy", self.style_accuracy, 0.0, 1.0);
        out
    }

    pub fn table_header() -> String {
        format!(
            "{:<8} {:>6} {:>6} {:>6} {:>9} {:>7} {:>6} {:>6} {:>6}",
            "Model", "R-1", "R-2", "R-L", "Semantic", "BLEU", "D-1", "D-2", "Style"
        )
    }

    pub fn table_row(&self, label: &str) -> String {
        format!(
            "{:<8} {:>6.3} {:>6.3} {:>6.3} {:>9.3} {:>7.2} {:>6.3} {:>6.3} {:>6.3}",
            label,
            self.rouge1,
            self.rouge2,
            self.rouge_l,
            self.embed_score,
            self.bleu,
            self.distinct1,
            self.distinct2,
            self.style_accuracy
        )
    }
}

impl fmt::Display for MetricReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "{}", Self::table_header())?;
        write!(f, "{}", self.table_row("-"))
    }
}

/// One evaluated item.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalTriple {
    pub src: String,
    pub generated: String,
    pub reference: String,
}

/// What `evaluate` needs from a trained run.
pub struct EvalContext<'a> {
    pub vocab: &'a Vocab,
    pub token_embeddings: &'a Tensor,
    pub style_model: &'a StyleModel,
}

/// Mean embed_score F1 of generations against references under `table`.
pub fn mean_embed_score(triples: &[EvalTriple], vocab: &Vocab, table: &Tensor) -> f64 {
    if triples.is_empty() {
        return 0.0;
    }
    let ids = |text: &str| -> Vec<u32> { vocab.words(text).iter().map(|w| vocab.word_id(w)).collect() };
    triples
        .iter()
        .map(|t| embed_score(&ids(&t.generated), &ids(&t.reference), table).prf.f1)
        .sum::<f64>()
        / triples.len() as f64
}

pub fn evaluate(triples: &[EvalTriple], ctx: &EvalContext<'_>) -> Result<MetricReport> {
    if triples.is_empty() {
        return Err(Error::invalid("evaluation needs at least one item"));
    }
    let generated: Vec<Vec<String>> = triples.iter().map(|t| ctx.vocab.words(&t.generated)).collect();
    let references: Vec<Vec<String>> = triples.iter().map(|t| ctx.vocab.words(&t.reference)).collect();
    let n = triples.len() as f64;
    let mean_rouge = |v: RougeVariant| -> f64 {
        generated
            .iter()
            .zip(&references)
            .map(|(g, r)| rouge(g, r, v).f1)
            .sum::<f64>()
            / n
    };
    let embed = mean_embed_score(triples, ctx.vocab, ctx.token_embeddings);
    let texts: Vec<&str> = triples.iter().map(|t| t.generated.as_str()).collect();
    Ok(MetricReport {
        rouge1: mean_rouge(RougeVariant::One),
        rouge2: mean_rouge(RougeVariant::Two),
        rouge_l: mean_rouge(RougeVariant::L),
        bleu: bleu(&generated, &references, 4)?,
        embed_score: embed,
        distinct1: distinct_n(&generated, 1),
        distinct2: distinct_n(&generated, 2),
        style_accuracy: ctx.style_model.style_accuracy(&texts)?,
    })
}

/// Position-aligned agreement with a substitution rule's expected output.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct RuleFidelity {
    /// Rule-targeted positions carrying the rule-mapped word.
    pub targeted_hits: usize,
    pub targeted_total: usize,
    /// Untouched content positions reproduced unchanged.
    pub preserved_hits: usize,
    pub preserved_total: usize,
}

impl RuleFidelity {
    pub fn targeted_rate(&self) -> f64 {
        ratio(self.targeted_hits, self.targeted_total)
    }

    pub fn preserved_rate(&self) -> f64 {
        ratio(self.preserved_hits, self.preserved_total)
    }

    pub fn add(&mut self, src: &[String], generated: &[String], rule: &crate::corpus::StyleRule) {
        for (i, w) in src.iter().enumerate() {
            let got = generated.get(i).map(String::as_str);
            if rule.substitutions.contains_key(w) {
                self.targeted_total += 1;
                self.targeted_hits += usize::from(got == Some(rule.map_word(w)));
            } else {
                self.preserved_total += 1;
                self.preserved_hits += usize::from(got == Some(w.as_str()));
            }
        }
    }
}
