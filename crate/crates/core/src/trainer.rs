//! Diffusion training objective, optimizer loop, and checkpoint selection.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::checkpoint::Checkpoint;
use crate::classifier::StyleModel;
use crate::corpus::{PairExample, SplitSet};
use crate::denoiser::{forward_on_tape, DenoiserParams, Dropout, ModelConfig, PositionKind};
use crate::diffusion::{standard_normal, LatentState, NoiseSchedule, SampleOptions};
use crate::error::{Error, Result};
use crate::metrics::{evaluate, mean_embed_score, EvalContext, EvalTriple, MetricReport};
use crate::numeric::{Real, Tape, Tensor, Var};
use crate::pipeline::generate_text;
use crate::tokenizer::{TokenId, Vocab};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub steps: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub warmup_steps: usize,
    /// Weight λ of the embedding-anchor cross-entropy; 0 gives the plain
    /// ℓ2 objective.
    pub anchor_weight: f64,
    pub seed: u64,
    pub eval_every: usize,
    /// Validation pairs generated at each evaluation.
    pub eval_samples: usize,
    pub diffusion_steps: usize,
    /// Explicit schedule endpoints; when absent the reference endpoints are
    /// rescaled to `diffusion_steps`.
    pub beta_1: Option<f64>,
    pub beta_t: Option<f64>,
    pub clip_norm: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            steps: 5000,
            batch_size: 32,
            learning_rate: 2e-3,
            warmup_steps: 100,
            anchor_weight: 0.1,
            seed: 0,
            eval_every: 500,
            eval_samples: 32,
            diffusion_steps: 1000,
            beta_1: None,
            beta_t: None,
            clip_norm: 1.0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.steps == 0 || self.batch_size == 0 || self.eval_every == 0 {
            return Err(Error::invalid("steps, batch_size and eval_every must be positive"));
        }
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::invalid(format!("invalid learning rate {}", self.learning_rate)));
        }
        if !(self.anchor_weight >= 0.0) {
            return Err(Error::invalid("anchor_weight must be non-negative"));
        }
        if !(self.clip_norm > 0.0) {
            return Err(Error::invalid("clip_norm must be positive"));
        }
        Ok(())
    }

    pub fn schedule(&self) -> Result<NoiseSchedule> {
        match (self.beta_1, self.beta_t) {
            (Some(b1), Some(bt)) => NoiseSchedule::linear(self.diffusion_steps, b1, bt),
            (None, None) => NoiseSchedule::scaled_linear(self.diffusion_steps),
            _ => Err(Error::invalid("set both beta_1 and beta_t or neither")),
        }
    }
}

/// One pair laid out as a full-length latent sequence.
#[derive(Clone, Debug, PartialEq)]
pub struct PreparedExample {
    /// Source window followed by target window, `max_len` ids.
    pub ids: Vec<TokenId>,
    pub mask: Vec<PositionKind>,
}

impl PreparedExample {
    pub fn new(vocab: &Vocab, config: &ModelConfig, pair: &PairExample) -> Result<Self> {
        let src = vocab.encode(&pair.src, Some(&pair.style), config.src_len())?;
        let trg = vocab.encode(&pair.trg, None, config.trg_len())?;
        let mut mask: Vec<PositionKind> = src
            .ids
            .iter()
            .map(|&id| if id == 0 { PositionKind::Pad } else { PositionKind::Source })
            .collect();
        mask.extend(trg.ids.iter().map(|&id| {
            if id == 0 {
                PositionKind::Pad
            } else {
                PositionKind::Target
            }
        }));
        let mut ids = src.ids;
        ids.extend(trg.ids);
        Ok(PreparedExample { ids, mask })
    }

    pub fn target_rows(&self) -> Vec<usize> {
        rows_of(&self.mask, PositionKind::Target)
    }
}

fn rows_of(mask: &[PositionKind], kind: PositionKind) -> Vec<usize> {
    mask.iter()
        .enumerate()
        .filter(|(_, k)| **k == kind)
        .map(|(i, _)| i)
        .collect()
}

/// Tape handles for the three loss values.
#[derive(Clone, Copy, Debug)]
pub struct LossVars {
    pub total: Var,
    pub l2: Var,
    pub anchor: Var,
}

/// `l2 = mean over TARGET rows of ‖z0 − ẑ0‖²/d`;
/// `anchor = mean CE of softmax(ẑ0·Eᵀ)` against the target ids;
/// `total = l2 + λ·anchor`.
pub fn loss_on_tape<T: Real>(
    tape: &mut Tape<T>,
    z0: Var,
    z0_hat: Var,
    embeddings: Var,
    mask: &[PositionKind],
    ids: &[TokenId],
    anchor_weight: f64,
) -> Result<LossVars> {
    let rows = rows_of(mask, PositionKind::Target);
    if rows.is_empty() {
        return Err(Error::invalid("loss needs at least one TARGET position"));
    }
    if ids.len() != mask.len() {
        return Err(Error::invalid(format!("{} ids for {} positions", ids.len(), mask.len())));
    }
    let l2 = tape.mse_rows(z0_hat, z0, &rows)?;
    let picked = tape.gather(z0_hat, &rows)?;
    let logits = tape.matmul_nt(picked, embeddings)?;
    let picks: Vec<(usize, usize)> = rows.iter().enumerate().map(|(k, &r)| (k, ids[r] as usize)).collect();
    let anchor = tape.cross_entropy_rows(logits, &picks)?;
    let total = if anchor_weight == 0.0 {
        l2
    } else {
        let weighted = tape.scale(anchor, T::of(anchor_weight))?;
        tape.add(l2, weighted)?
    };
    Ok(LossVars { total, l2, anchor })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossParts {
    pub total: f64,
    pub l2: f64,
    pub anchor: f64,
}

/// Evaluates the objective for a given prediction (no gradients).
pub fn loss<T: Real>(
    z0: &LatentState<T>,
    z0_hat: &Tensor<T>,
    ids: &[TokenId],
    token_embeddings: &Tensor<T>,
    anchor_weight: f64,
) -> Result<LossParts> {
    let mut tape = Tape::new();
    let a = tape.leaf(z0.z.clone());
    let b = tape.leaf(z0_hat.clone());
    let e = tape.leaf(token_embeddings.clone());
    let v = loss_on_tape(&mut tape, a, b, e, &z0.mask, ids, anchor_weight)?;
    let get = |x: Var| -> Result<f64> { Ok(tape.value(x).item()?.as_f64()) };
    Ok(LossParts {
        total: get(v.total)?,
        l2: get(v.l2)?,
        anchor: get(v.anchor)?,
    })
}

/// Records the noising, denoising and loss for one example.
///
/// `target` holds the clean embedding rows the ℓ2 term regresses onto. It
/// enters the tape as a constant: if the regression target carried
/// gradient, the ℓ2 term would drag each token's embedding toward the
/// model's prediction and collapse interchangeable words onto one point.
#[allow(clippy::too_many_arguments)]
pub fn example_loss_on_tape<T: Real>(
    tape: &mut Tape<T>,
    vars: &crate::denoiser::ParamVars,
    config: &ModelConfig,
    schedule: &NoiseSchedule,
    example: &PreparedExample,
    target: &Tensor<T>,
    t: usize,
    eps: Var,
    anchor_weight: f64,
    dropout: Option<Dropout<'_>>,
) -> Result<LossVars> {
    let ids: Vec<usize> = example.ids.iter().map(|&i| i as usize).collect();
    let z0 = tape.gather(vars.token_embeddings, &ids)?;
    let ab = schedule.alpha_bar(t);
    let (signal, noise): (Vec<T>, Vec<T>) = example
        .mask
        .iter()
        .map(|k| match k {
            PositionKind::Target => (T::of(ab.sqrt()), T::of((1.0 - ab).sqrt())),
            _ => (T::one(), T::zero()),
        })
        .unzip();
    let kept = tape.scale_rows(z0, &signal)?;
    let added = tape.scale_rows(eps, &noise)?;
    let zt = tape.add(kept, added)?;
    let z0_hat = forward_on_tape(tape, vars, config, zt, &example.mask, t, dropout)?;
    let target = tape.leaf(target.clone());
    loss_on_tape(
        tape,
        target,
        z0_hat,
        vars.token_embeddings,
        &example.mask,
        &example.ids,
        anchor_weight,
    )
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepMetrics {
    pub step: u64,
    pub loss: f64,
    pub l2: f64,
    pub anchor: f64,
    pub grad_norm: f64,
}

/// Adaptive moment estimation with bias correction.
#[derive(Clone, Debug, PartialEq)]
struct Adam {
    m: Vec<Vec<f32>>,
    v: Vec<Vec<f32>>,
    t: i32,
}

const ADAM_B1: f64 = 0.9;
const ADAM_B2: f64 = 0.999;
const ADAM_EPS: f64 = 1e-8;

impl Adam {
    fn new(params: &DenoiserParams) -> Self {
        let zeros: Vec<Vec<f32>> = params
            .named_tensors()
            .iter()
            .map(|(_, t)| vec![0.0; t.numel()])
            .collect();
        Adam {
            m: zeros.clone(),
            v: zeros,
            t: 0,
        }
    }

    fn update(&mut self, params: &mut DenoiserParams, grads: &[Vec<f32>], lr: f64) {
        self.t += 1;
        let bc1 = 1.0 - ADAM_B1.powi(self.t);
        let bc2 = 1.0 - ADAM_B2.powi(self.t);
        let (b1, b2) = (ADAM_B1 as f32, ADAM_B2 as f32);
        let step = (lr / bc1) as f32;
        let bc2 = bc2 as f32;
        for (k, tensor) in params.tensors_mut().into_iter().enumerate() {
            let (m, v, g) = (&mut self.m[k], &mut self.v[k], &grads[k]);
            for (i, p) in tensor.data_mut().iter_mut().enumerate() {
                m[i] = b1 * m[i] + (1.0 - b1) * g[i];
                v[i] = b2 * v[i] + (1.0 - b2) * g[i] * g[i];
                *p -= step * m[i] / ((v[i] / bc2).sqrt() + ADAM_EPS as f32);
            }
        }
    }
}

/// One line of the training log.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LogEntry {
    pub step: u64,
    /// Mean training losses since the previous evaluation.
    pub loss: f64,
    pub l2: f64,
    pub anchor: f64,
    pub grad_norm: f64,
    pub val: MetricReport,
}

impl std::fmt::Display for LogEntry {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "step {:>6}  loss {:.4} (l2 {:.4}, anchor {:.4})  |g| {:.3}  val R-L {:.3} BLEU {:.2} semantic {:.3} style {:.3}",
            self.step,
            self.loss,
            self.l2,
            self.anchor,
            self.grad_norm,
            self.val.rouge_l,
            self.val.bleu,
            self.val.embed_score,
            self.val.style_accuracy
        )
    }
}

/// Owns the parameters and optimizer state of one training run.
#[derive(Clone, Debug)]
pub struct Trainer {
    model_config: ModelConfig,
    config: TrainConfig,
    vocab: Vocab,
    schedule: NoiseSchedule,
    params: DenoiserParams,
    adam: Adam,
    rng: ChaCha8Rng,
    step: u64,
}

impl Trainer {
    pub fn new(vocab: Vocab, model_config: ModelConfig, config: TrainConfig) -> Result<Self> {
        config.validate()?;
        if model_config.vocab_size != vocab.len() {
            return Err(Error::invalid(format!(
                "model vocab_size {} does not match vocabulary of {}",
                model_config.vocab_size,
                vocab.len()
            )));
        }
        let schedule = config.schedule()?;
        if !schedule.reaches_noise() {
            return Err(Error::invalid(format!(
                "schedule ends at alpha_bar_T = {:.4}; training requires < 0.01",
                schedule.alpha_bar(schedule.steps())
            )));
        }
        let params = DenoiserParams::init(&model_config, config.seed)?;
        let adam = Adam::new(&params);
        let rng = ChaCha8Rng::seed_from_u64(config.seed.wrapping_add(1));
        Ok(Trainer {
            model_config,
            config,
            vocab,
            schedule,
            params,
            adam,
            rng,
            step: 0,
        })
    }

    pub fn params(&self) -> &DenoiserParams {
        &self.params
    }

    pub fn schedule(&self) -> &NoiseSchedule {
        &self.schedule
    }

    pub fn vocab(&self) -> &Vocab {
        &self.vocab
    }

    pub fn step(&self) -> u64 {
        self.step
    }

    fn learning_rate(&self) -> f64 {
        let w = self.config.warmup_steps as f64;
        if w > 0.0 {
            self.config.learning_rate * ((self.step + 1) as f64 / w).min(1.0)
        } else {
            self.config.learning_rate
        }
    }

    /// One optimizer update on `batch`.
    pub fn train_step(&mut self, batch: &[PairExample]) -> Result<StepMetrics> {
        if batch.is_empty() {
            return Err(Error::invalid("train_step needs a non-empty batch"));
        }
        let examples: Vec<PreparedExample> = batch
            .iter()
            .map(|p| PreparedExample::new(&self.vocab, &self.model_config, p))
            .collect::<Result<_>>()?;
        let cfg = self.model_config.clone();
        let mut tape = Tape::<f32>::new();
        let vars = self.params.register(&mut tape);
        let mut timesteps = Vec::with_capacity(batch.len());
        let mut sums: Option<(Var, f64, f64)> = None;
        let diverged = |step: u64, timesteps: &[usize], grad_norm: f32| Error::TrainingDiverged {
            step,
            timesteps: timesteps.to_vec(),
            grad_norm,
        };

        for ex in &examples {
            let t = self.rng.random_range(1..=self.schedule.steps());
            timesteps.push(t);
            let eps = tape.leaf(standard_normal(cfg.max_len, cfg.d_model, &mut self.rng));
            let dropout = Some(Dropout {
                rng: &mut self.rng,
                rate: cfg.dropout,
            });
            let target = self.params.token_rows(&ex.ids)?;
            let lv = example_loss_on_tape(
                &mut tape,
                &vars,
                &cfg,
                &self.schedule,
                ex,
                &target,
                t,
                eps,
                self.config.anchor_weight,
                dropout,
            )
            .map_err(|e| match e {
                Error::NonFinite { .. } => diverged(self.step + 1, &timesteps, f32::NAN),
                other => other,
            })?;
            let (l2, anchor) = (
                tape.value(lv.l2).item()? as f64,
                tape.value(lv.anchor).item()? as f64,
            );
            sums = Some(match sums {
                None => (lv.total, l2, anchor),
                Some((acc, a, b)) => (tape.add(acc, lv.total)?, a + l2, b + anchor),
            });
        }
        let (sum, l2_sum, anchor_sum) = sums.expect("non-empty batch");
        let n = batch.len() as f64;
        let mean = tape.scale(sum, 1.0 / n as f32)?;
        let loss_value = tape.value(mean).item()? as f64;
        let mut grads = tape.backward(mean).map_err(|e| match e {
            Error::NonFinite { .. } => diverged(self.step + 1, &timesteps, f32::NAN),
            other => other,
        })?;

        let mut flat: Vec<Vec<f32>> = vars
            .flat
            .iter()
            .zip(self.params.named_tensors())
            .map(|(v, (_, t))| {
                grads
                    .take(*v)
                    .map(Tensor::into_data)
                    .unwrap_or_else(|| vec![0.0; t.numel()])
            })
            .collect();
        // PAD embedding stays at zero.
        let d = cfg.d_model;
        flat[0][..d].fill(0.0);
        let norm = flat
            .iter()
            .flatten()
            .map(|&g| g as f64 * g as f64)
            .sum::<f64>()
            .sqrt();
        if !norm.is_finite() || !loss_value.is_finite() {
            return Err(diverged(self.step + 1, &timesteps, norm as f32));
        }
        if norm > self.config.clip_norm {
            let s = (self.config.clip_norm / norm) as f32;
            flat.iter_mut().flatten().for_each(|g| *g *= s);
        }
        let lr = self.learning_rate();
        self.adam.update(&mut self.params, &flat, lr);
        self.step += 1;
        if !self.params.is_finite() {
            return Err(diverged(self.step, &timesteps, norm as f32));
        }
        Ok(StepMetrics {
            step: self.step,
            loss: loss_value,
            l2: l2_sum / n,
            anchor: anchor_sum / n,
            grad_norm: norm,
        })
    }

    fn sample_options(&self, i: usize) -> SampleOptions {
        SampleOptions {
            seed: self.config.seed.wrapping_mul(1_000_003).wrapping_add(i as u64),
            ..Default::default()
        }
    }

    /// Generations for the first `limit` pairs, paired with their targets.
    pub fn generate_pairs(&self, pairs: &[PairExample], limit: usize) -> Result<Vec<EvalTriple>> {
        let take = pairs.len().min(limit.max(1));
        pairs[..take]
            .iter()
            .enumerate()
            .map(|(i, p)| {
                let generated = generate_text(
                    &self.params,
                    &self.vocab,
                    &self.schedule,
                    &p.src,
                    &p.style,
                    &self.sample_options(i),
                )?;
                Ok(EvalTriple {
                    src: p.src.clone(),
                    generated,
                    reference: p.trg.clone(),
                })
            })
            .collect()
    }

    /// Generates for the first `limit` pairs and scores against their targets.
    pub fn evaluate_pairs(
        &self,
        pairs: &[PairExample],
        style_model: &StyleModel,
        limit: usize,
    ) -> Result<MetricReport> {
        let triples = self.generate_pairs(pairs, limit)?;
        evaluate(
            &triples,
            &EvalContext {
                vocab: &self.vocab,
                token_embeddings: &self.params.token_embeddings,
                style_model,
            },
        )
    }

    /// Runs `steps` updates over shuffled training batches, evaluating on
    /// the validation split every `eval_every` steps and at the last step.
    ///
    /// `on_eval` sees each checkpoint as it is produced, with its semantic
    /// score measured in that checkpoint's own embedding space. Once
    /// training ends, every checkpoint's semantic score is recomputed in
    /// the final embedding space so the returned scores are comparable.
    pub fn fit(
        &mut self,
        splits: &SplitSet,
        style_model: &StyleModel,
        mut on_eval: impl FnMut(&LogEntry, &Checkpoint) -> Result<()>,
    ) -> Result<Vec<Checkpoint>> {
        if splits.train.is_empty() {
            return Err(Error::invalid("training split is empty"));
        }
        if splits.validation.is_empty() {
            return Err(Error::invalid("validation split is empty"));
        }
        let mut order: Vec<usize> = (0..splits.train.len()).collect();
        let mut cursor = order.len();
        let mut checkpoints: Vec<Checkpoint> = Vec::new();
        let mut generations = Vec::new();
        let (mut acc, mut count) = ([0.0f64; 4], 0usize);
        for s in 1..=self.config.steps {
            let mut batch = Vec::with_capacity(self.config.batch_size);
            while batch.len() < self.config.batch_size {
                if cursor == order.len() {
                    order.shuffle(&mut self.rng);
                    cursor = 0;
                }
                batch.push(splits.train[order[cursor]].clone());
                cursor += 1;
            }
            let m = self.train_step(&batch)?;
            for (a, v) in acc.iter_mut().zip([m.loss, m.l2, m.anchor, m.grad_norm]) {
                *a += v;
            }
            count += 1;

            if s % self.config.eval_every == 0 || s == self.config.steps {
                let triples = self.generate_pairs(&splits.validation, self.config.eval_samples)?;
                let val = evaluate(
                    &triples,
                    &EvalContext {
                        vocab: &self.vocab,
                        token_embeddings: &self.params.token_embeddings,
                        style_model,
                    },
                )?;
                generations.push(triples);
                let c = count as f64;
                let entry = LogEntry {
                    step: self.step,
                    loss: acc[0] / c,
                    l2: acc[1] / c,
                    anchor: acc[2] / c,
                    grad_norm: acc[3] / c,
                    val: val.clone(),
                };
                let ckpt = Checkpoint {
                    params: self.params.clone(),
                    step: self.step,
                    val_metrics: val,
                };
                on_eval(&entry, &ckpt)?;
                checkpoints.push(ckpt);
                acc = [0.0; 4];
                count = 0;
            }
        }
        let table = &self.params.token_embeddings;
        for (ck, triples) in checkpoints.iter_mut().zip(&generations) {
            ck.val_metrics.embed_score = mean_embed_score(triples, &self.vocab, table);
        }
        Ok(checkpoints)
    }
}

/// Something ranked by its semantic score.
pub trait Scored {
    fn semantic_score(&self) -> f64;
    fn step(&self) -> u64;
}

impl Scored for Checkpoint {
    fn semantic_score(&self) -> f64 {
        self.val_metrics.embed_score
    }

    fn step(&self) -> u64 {
        self.step
    }
}

/// Highest semantic score; ties go to the later step.
pub fn select_best<C: Scored>(candidates: &[C]) -> Option<&C> {
    candidates.iter().reduce(|best, c| {
        let (a, b) = (c.semantic_score(), best.semantic_score());
        if a > b || (a == b && c.step() >= best.step()) {
            c
        } else {
            best
        }
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    struct S(f64, u64);

    impl Scored for S {
        fn semantic_score(&self) -> f64 {
            self.0
        }
        fn step(&self) -> u64 {
            self.1
        }
    }

    #[test]
    fn select_best_examples() {
        let rows: Vec<S> = [0.930, 0.950, 0.925, 0.949, 0.939]
            .iter()
            .enumerate()
            .map(|(i, &v)| S(v, i as u64))
            .collect();
        assert_eq!(select_best(&rows).unwrap().0, 0.950);
        assert_eq!(select_best(&rows[..1]).unwrap().1, 0);
        let tie = [S(0.5, 100), S(0.5, 200)];
        assert_eq!(select_best(&tie).unwrap().1, 200);
        let tie_rev = [S(0.5, 200), S(0.5, 100)];
        assert_eq!(select_best(&tie_rev).unwrap().1, 200);
        let empty: [S; 0] = [];
        assert!(select_best(&empty).is_none());
    }

    #[test]
    fn config_validation_and_schedule() {
        let mut c = TrainConfig::default();
        assert!(c.validate().is_ok());
        c.batch_size = 0;
        assert!(c.validate().is_err());
        let c = TrainConfig {
            beta_1: Some(1e-4),
            ..Default::default()
        };
        assert!(c.schedule().is_err());
        let c = TrainConfig {
            diffusion_steps: 200,
            ..Default::default()
        };
        assert!(c.schedule().unwrap().reaches_noise());
    }
}
