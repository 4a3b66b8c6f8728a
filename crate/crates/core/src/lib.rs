//! Pretraining-free conditional text diffusion for sequence-to-sequence
//! style transfer.
//!
//! A pair is laid out as one latent sequence: the source window (style
//! token, BOS, words, EOS) stays clean while Gaussian noise is applied to
//! the target window only. A small transformer learns to predict the clean
//! target embeddings, and generation runs the reverse chain from pure
//! noise with the source held fixed.

pub mod checkpoint;
pub mod classifier;
pub mod cli;
pub mod config;
pub mod corpus;
pub mod denoiser;
pub mod diffusion;
pub mod error;
pub mod metrics;
pub mod numeric;
pub mod pipeline;
pub mod tokenizer;
pub mod trainer;

pub use checkpoint::Checkpoint;
pub use classifier::{StyleLabel, StyleModel};
pub use config::RunConfig;
pub use corpus::{PairExample, SplitSet, StatsReport, StyleRule};
pub use denoiser::{DenoiserParams, ModelConfig, PositionKind};
pub use diffusion::{sample, LengthPolicy, NoiseSchedule, SampleOptions};
pub use error::{Error, Result};
pub use metrics::MetricReport;
pub use tokenizer::{TokenId, TokenSeq, Vocab};
pub use trainer::{TrainConfig, Trainer};
