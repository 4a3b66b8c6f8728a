use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::classifier::ClassifierConfig;
use crate::denoiser::ModelConfig;
use crate::diffusion::SampleOptions;
use crate::error::{Error, Result};
use crate::trainer::TrainConfig;

/// Resolved settings for one command. Every field has a default, a JSON
/// file overrides the defaults, and command-line flags override the file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    /// Master seed; copied into `train.seed` and `sample.seed` by [`RunConfig::with_seed`].
    pub seed: u64,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub sample: SampleOptions,
    pub classifier: ClassifierConfig,
    pub vocab_min_freq: usize,
    pub lowercase: bool,
    /// train/test/validation proportions.
    pub ratios: [u32; 3],
    pub style_tags: Vec<String>,
    pub data_dir: Option<PathBuf>,
    pub out_dir: Option<PathBuf>,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 0,
            model: ModelConfig::default(),
            train: TrainConfig::default(),
            sample: SampleOptions::default(),
            classifier: ClassifierConfig::default(),
            vocab_min_freq: 1,
            lowercase: true,
            ratios: [90, 5, 5],
            style_tags: ["D1", "D2", "D3", "D4", "D5"].map(String::from).to_vec(),
            data_dir: None,
            out_dir: None,
        }
    }
}

impl RunConfig {
    /// Reads a config file; missing fields keep their defaults.
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
        serde_json::from_str(&text)
            .map_err(|e| Error::invalid(format!("config {}: {e}", path.display())))
    }

    /// Defaults, or the file when one is given.
    pub fn resolve(path: Option<&Path>) -> Result<Self> {
        match path {
            Some(p) => Self::load(p),
            None => Ok(Self::default()),
        }
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self.train.seed = seed;
        self.sample.seed = seed;
        self
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        crate::pipeline::write_json(&dir.join(crate::pipeline::CONFIG_FILE), self)
    }
}
