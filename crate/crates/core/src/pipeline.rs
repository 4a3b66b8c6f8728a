//! Glue between the modules: text-level generation, run directories and
//! score tables.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::checkpoint::Checkpoint;
use crate::classifier::StyleModel;
use crate::config::RunConfig;
use crate::corpus::PairExample;
use crate::denoiser::DenoiserParams;
use crate::diffusion::{sample, NoiseSchedule, SampleOptions};
use crate::error::{Error, Result};
use crate::tokenizer::{TokenSeq, Vocab};
use crate::trainer::Scored;

pub const CONFIG_FILE: &str = "config.json";
pub const VOCAB_FILE: &str = "vocab.txt";
pub const STYLE_MODEL_FILE: &str = "style_model.txt";
pub const LOG_FILE: &str = "train_log.jsonl";
pub const BEST_FILE: &str = "best.txt";

pub fn checkpoint_name(step: u64) -> String {
    format!("checkpoint-{step:06}.bin")
}

/// Encodes `src` with its style token, samples, and decodes the target.
pub fn generate_text(
    params: &DenoiserParams,
    vocab: &Vocab,
    schedule: &NoiseSchedule,
    src: &str,
    style: &str,
    opts: &SampleOptions,
) -> Result<String> {
    let seq = vocab.encode(src, Some(style), params.config.src_len())?;
    let out = sample(params, &seq, schedule, opts)?;
    vocab.decode(&TokenSeq::from_ids(out.target.ids))
}

/// A record to generate from; any extra fields (such as `trg`) are ignored.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SourceRecord {
    pub src: String,
    pub style: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GeneratedRecord {
    pub src: String,
    pub generated: String,
    pub style: String,
}

/// Generates for every record; record `i` is sampled with seed `seed + i`.
pub fn generate_all(
    params: &DenoiserParams,
    vocab: &Vocab,
    schedule: &NoiseSchedule,
    sources: &[SourceRecord],
    opts: &SampleOptions,
) -> Result<Vec<GeneratedRecord>> {
    sources
        .iter()
        .enumerate()
        .map(|(i, r)| {
            let o = SampleOptions {
                seed: opts.seed.wrapping_add(i as u64),
                ..opts.clone()
            };
            Ok(GeneratedRecord {
                src: r.src.clone(),
                generated: generate_text(params, vocab, schedule, &r.src, &r.style, &o)?,
                style: r.style.clone(),
            })
        })
        .collect()
}

/// Parses JSONL records of type `T`, reporting every bad line.
pub fn read_jsonl<T: serde::de::DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
    let mut out = Vec::new();
    let mut problems = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        match serde_json::from_str(line) {
            Ok(v) => out.push(v),
            Err(e) => problems.push(format!("line {}: {e}", i + 1)),
        }
    }
    if problems.is_empty() {
        Ok(out)
    } else {
        Err(Error::Dataset {
            path: path.to_path_buf(),
            problems,
        })
    }
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut s = serde_json::to_string_pretty(value)?;
    s.push('\n');
    fs::write(path, s).map_err(|e| Error::io(format!("writing {}", path.display()), e))
}

/// Everything a trained run directory provides.
#[derive(Clone, Debug)]
pub struct Run {
    pub dir: PathBuf,
    pub config: RunConfig,
    pub vocab: Vocab,
    pub style_model: Option<StyleModel>,
}

impl Run {
    pub fn open(dir: &Path) -> Result<Self> {
        let config = RunConfig::load(&dir.join(CONFIG_FILE))?;
        let vocab = Vocab::load(&dir.join(VOCAB_FILE), config.lowercase)?;
        let sm = dir.join(STYLE_MODEL_FILE);
        let style_model = if sm.exists() { Some(StyleModel::load(&sm)?) } else { None };
        Ok(Run {
            dir: dir.to_path_buf(),
            config,
            vocab,
            style_model,
        })
    }

    /// The checkpoint named in `best.txt`.
    pub fn best_checkpoint_path(&self) -> Result<PathBuf> {
        let p = self.dir.join(BEST_FILE);
        let name = fs::read_to_string(&p).map_err(|e| Error::io(format!("reading {}", p.display()), e))?;
        Ok(self.dir.join(name.trim()))
    }

    /// Loads a checkpoint and checks it against this run's vocabulary.
    pub fn load_checkpoint(&self, path: Option<&Path>) -> Result<Checkpoint> {
        let path = match path {
            Some(p) => p.to_path_buf(),
            None => self.best_checkpoint_path()?,
        };
        let ck = Checkpoint::load(&path)?;
        if ck.params.config.vocab_size != self.vocab.len() {
            return Err(Error::Checkpoint(format!(
                "{} was trained with {} tokens but the vocabulary has {}",
                path.display(),
                ck.params.config.vocab_size,
                self.vocab.len()
            )));
        }
        Ok(ck)
    }
}

/// One row of a per-run score table.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunScore {
    pub run: String,
    pub rouge1: f64,
    pub rouge2: f64,
    #[serde(rename = "rougeL")]
    pub rouge_l: f64,
    pub semantic: f64,
    pub bleu: f64,
    #[serde(skip)]
    pub order: u64,
}

impl Scored for RunScore {
    fn semantic_score(&self) -> f64 {
        self.semantic
    }

    fn step(&self) -> u64 {
        self.order
    }
}

pub fn load_run_scores(path: &Path) -> Result<Vec<RunScore>> {
    let mut rows: Vec<RunScore> = read_jsonl(path)?;
    for (i, r) in rows.iter_mut().enumerate() {
        r.order = i as u64;
    }
    Ok(rows)
}

impl RunScore {
    pub fn table_row(&self) -> String {
        format!(
            "{:<8} {:>6.3} {:>6.3} {:>6.3} {:>9.3} {:>7.2}",
            self.run, self.rouge1, self.rouge2, self.rouge_l, self.semantic, self.bleu
        )
    }
}

/// Pairs whose fields were read from a dataset split file.
pub fn sources_of(pairs: &[PairExample]) -> Vec<SourceRecord> {
    pairs
        .iter()
        .map(|p| SourceRecord {
            src: p.src.clone(),
            style: p.style.clone(),
        })
        .collect()
}
