//! Bag-of-n-grams logistic classifier that tells source-style text from
//! target-style text.

use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::corpus::PairExample;
use crate::error::{Error, Result};
use crate::tokenizer::normalize;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum StyleLabel {
    Source,
    Target,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ClassifierConfig {
    pub min_freq: usize,
    pub bigrams: bool,
    pub learning_rate: f64,
    pub l2: f64,
    pub max_epochs: usize,
    pub tolerance: f64,
}

impl Default for ClassifierConfig {
    fn default() -> Self {
        ClassifierConfig {
            min_freq: 2,
            bigrams: true,
            learning_rate: 0.5,
            l2: 1e-4,
            max_epochs: 200,
            tolerance: 1e-5,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct StyleModel {
    features: Vec<String>,
    index: HashMap<String, usize>,
    weights: Vec<f64>,
    bias: f64,
}

/// Sparse feature counts as `(feature index, count)`, sorted by index.
pub type SparseCounts = Vec<(usize, f64)>;

fn ngrams(text: &str, bigrams: bool) -> Vec<String> {
    let words: Vec<String> = normalize(text, true).split(' ').filter(|w| !w.is_empty()).map(str::to_string).collect();
    let mut out = words.clone();
    if bigrams {
        out.extend(words.windows(2).map(|w| format!("{}_{}", w[0], w[1])));
    }
    out
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

impl StyleModel {
    pub fn features(&self) -> &[String] {
        &self.features
    }

    pub fn bias(&self) -> f64 {
        self.bias
    }

    /// Counts of known unigrams/bigrams; unknown n-grams are ignored.
    pub fn featurize(&self, text: &str) -> SparseCounts {
        let mut counts: BTreeMap<usize, f64> = BTreeMap::new();
        for g in ngrams(text, true) {
            if let Some(&i) = self.index.get(&g) {
                *counts.entry(i).or_default() += 1.0;
            }
        }
        counts.into_iter().collect()
    }

    fn score(&self, x: &SparseCounts) -> f64 {
        self.bias + x.iter().map(|&(i, c)| self.weights[i] * c).sum::<f64>()
    }

    /// Label and probability of TARGET style.
    pub fn classify(&self, text: &str) -> (StyleLabel, f64) {
        let p = sigmoid(self.score(&self.featurize(text)));
        let label = if p > 0.5 {
            StyleLabel::Target
        } else {
            StyleLabel::Source
        };
        (label, p)
    }

    /// Fraction of texts classified as TARGET.
    pub fn style_accuracy<S: AsRef<str>>(&self, texts: &[S]) -> Result<f64> {
        if texts.is_empty() {
            return Err(Error::invalid("style accuracy needs at least one text"));
        }
        let hits = texts
            .iter()
            .filter(|t| self.classify(t.as_ref()).0 == StyleLabel::Target)
            .count();
        Ok(hits as f64 / texts.len() as f64)
    }

    pub fn accuracy(&self, examples: &[(String, StyleLabel)]) -> f64 {
        if examples.is_empty() {
            return 0.0;
        }
        let hits = examples
            .iter()
            .filter(|(t, l)| self.classify(t).0 == *l)
            .count();
        hits as f64 / examples.len() as f64
    }

    /// Writes the feature count, the features, then one weight per feature
    /// and the bias, one value per line.
    pub fn save(&self, path: &Path) -> Result<()> {
        let mut out = format!("{}\n", self.features.len());
        for f in &self.features {
            out.push_str(f);
            out.push('\n');
        }
        for w in &self.weights {
            out.push_str(&format!("{w}\n"));
        }
        out.push_str(&format!("{}\n", self.bias));
        fs::write(path, out).map_err(|e| Error::io(format!("writing {}", path.display()), e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)
            .map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
        Self::parse(&text)
    }

    pub fn parse(text: &str) -> Result<Self> {
        let bad = |m: &str| Error::invalid(format!("style model: {m}"));
        let mut lines = text.lines();
        let n: usize = lines
            .next()
            .and_then(|l| l.trim().parse().ok())
            .ok_or_else(|| bad("missing feature count"))?;
        let features: Vec<String> = lines.by_ref().take(n).map(str::to_string).collect();
        if features.len() != n {
            return Err(bad("truncated feature list"));
        }
        let values: Vec<f64> = lines
            .map(|l| l.trim().parse::<f64>().map_err(|_| bad("invalid weight")))
            .collect::<Result<_>>()?;
        if values.len() != n + 1 || values.iter().any(|v| !v.is_finite()) {
            return Err(bad("expected one finite weight per feature plus a bias"));
        }
        let index = features.iter().enumerate().map(|(i, f)| (f.clone(), i)).collect();
        Ok(StyleModel {
            features,
            index,
            weights: values[..n].to_vec(),
            bias: values[n],
        })
    }
}

/// Expands pairs into one SOURCE and one TARGET example each.
pub fn labeled_examples(pairs: &[PairExample]) -> Vec<(String, StyleLabel)> {
    pairs
        .iter()
        .flat_map(|p| {
            [
                (p.src.clone(), StyleLabel::Source),
                (p.trg.clone(), StyleLabel::Target),
            ]
        })
        .collect()
}

pub fn train_classifier(pairs: &[PairExample], config: &ClassifierConfig) -> Result<StyleModel> {
    if pairs.len() < 50 {
        return Err(Error::invalid(format!(
            "classifier training needs at least 50 pairs, got {}",
            pairs.len()
        )));
    }
    train_labeled(&labeled_examples(pairs), config)
}

/// Full-batch gradient descent on the L2-penalized logistic loss.
pub fn train_labeled(examples: &[(String, StyleLabel)], config: &ClassifierConfig) -> Result<StyleModel> {
    let has = |l: StyleLabel| examples.iter().any(|(_, x)| *x == l);
    if !(has(StyleLabel::Source) && has(StyleLabel::Target)) {
        return Err(Error::invalid("classifier training needs both classes"));
    }
    let mut counts: HashMap<String, usize> = HashMap::new();
    for (text, _) in examples {
        for g in ngrams(text, config.bigrams) {
            *counts.entry(g).or_default() += 1;
        }
    }
    let mut features: Vec<String> = counts
        .into_iter()
        .filter(|(_, c)| *c >= config.min_freq)
        .map(|(g, _)| g)
        .collect();
    features.sort();
    let index: HashMap<String, usize> =
        features.iter().enumerate().map(|(i, f)| (f.clone(), i)).collect();
    let mut model = StyleModel {
        weights: vec![0.0; features.len()],
        features,
        index,
        bias: 0.0,
    };

    let xs: Vec<SparseCounts> = examples.iter().map(|(t, _)| model.featurize(t)).collect();
    let ys: Vec<f64> = examples
        .iter()
        .map(|(_, l)| if *l == StyleLabel::Target { 1.0 } else { 0.0 })
        .collect();
    let n = xs.len() as f64;
    let mut prev_loss = f64::INFINITY;
    for _ in 0..config.max_epochs {
        let mut grad_w = vec![0.0; model.weights.len()];
        let mut grad_b = 0.0;
        let mut loss = 0.0;
        for (x, &y) in xs.iter().zip(&ys) {
            let s = model.score(x);
            let p = sigmoid(s);
            // log(1 + e^s) - y·s, computed stably
            loss += s.max(0.0) + (-s.abs()).exp().ln_1p() - y * s;
            let r = p - y;
            grad_b += r;
            for &(i, c) in x {
                grad_w[i] += r * c;
            }
        }
        loss = loss / n + 0.5 * config.l2 * model.weights.iter().map(|w| w * w).sum::<f64>();
        for (w, g) in model.weights.iter_mut().zip(&grad_w) {
            *w -= config.learning_rate * (g / n + config.l2 * *w);
        }
        model.bias -= config.learning_rate * grad_b / n;
        if ((prev_loss - loss) / loss.max(1e-12)).abs() < config.tolerance {
            break;
        }
        prev_loss = loss;
    }
    Ok(model)
}
