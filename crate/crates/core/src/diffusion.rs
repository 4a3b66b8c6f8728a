//! Noise schedule, partial forward noising and the reverse sampling chain.
//!
//! Forward process on TARGET rows:
//! `z_t = sqrt(ᾱ_t)·z_0 + sqrt(1−ᾱ_t)·ε`.
//! Reverse step:
//! `z_{t−1} = μ_t + σ_t·noise`, with
//! `μ_t = sqrt(ᾱ_{t−1})·β_t/(1−ᾱ_t)·ẑ_0 + sqrt(1−β_t)·(1−ᾱ_{t−1})/(1−ᾱ_t)·z_t`
//! and `σ_t² = β_t·(1−ᾱ_{t−1})/(1−ᾱ_t)`. SOURCE and PAD rows never change.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::denoiser::{position_mask, DenoiserParams, EmbeddingIndex, PositionKind};
use crate::error::{Error, Result};
use crate::numeric::{Real, Tensor};
use crate::tokenizer::{TokenSeq, EOS, PAD};

/// Conventional endpoints for a 1,000-step linear schedule.
pub const REFERENCE_STEPS: usize = 1000;
pub const REFERENCE_BETA_1: f64 = 1e-4;
pub const REFERENCE_BETA_T: f64 = 0.02;

#[derive(Clone, Debug, PartialEq)]
pub struct NoiseSchedule {
    /// `betas[t-1]` is β_t for t in 1..=T.
    betas: Vec<f64>,
    /// `alpha_bar[t]` for t in 0..=T; `alpha_bar[0] == 1`.
    alpha_bar: Vec<f64>,
}

impl NoiseSchedule {
    /// β linearly interpolated from `beta_1` to `beta_t` over `steps` steps.
    pub fn linear(steps: usize, beta_1: f64, beta_t: f64) -> Result<Self> {
        if steps < 10 {
            return Err(Error::invalid(format!("schedule needs at least 10 steps, got {steps}")));
        }
        if !(0.0 < beta_1 && beta_1 < beta_t && beta_t < 1.0) {
            return Err(Error::invalid(format!(
                "need 0 < beta_1 < beta_T < 1, got beta_1={beta_1} beta_T={beta_t}"
            )));
        }
        let betas: Vec<f64> = (0..steps)
            .map(|i| beta_1 + (beta_t - beta_1) * i as f64 / (steps - 1) as f64)
            .collect();
        let mut alpha_bar = Vec::with_capacity(steps + 1);
        alpha_bar.push(1.0);
        let mut acc = 1.0f64;
        for b in &betas {
            acc *= 1.0 - b;
            alpha_bar.push(acc as f32 as f64);
        }
        Ok(NoiseSchedule { betas, alpha_bar })
    }

    /// Linear schedule whose endpoints are the 1,000-step reference
    /// endpoints rescaled by `1000 / steps`, so shorter chains still end
    /// near pure noise.
    pub fn scaled_linear(steps: usize) -> Result<Self> {
        let scale = REFERENCE_STEPS as f64 / steps.max(1) as f64;
        if REFERENCE_BETA_T * scale >= 1.0 {
            return Err(Error::invalid(format!(
                "scaled linear schedule needs more than {} steps, got {steps}",
                (REFERENCE_BETA_T * REFERENCE_STEPS as f64).floor()
            )));
        }
        Self::linear(steps, REFERENCE_BETA_1 * scale, REFERENCE_BETA_T * scale)
    }

    pub fn steps(&self) -> usize {
        self.betas.len()
    }

    pub fn beta(&self, t: usize) -> f64 {
        self.betas[t - 1]
    }

    pub fn alpha_bar(&self, t: usize) -> f64 {
        self.alpha_bar[t]
    }

    /// Whether the chain ends close enough to pure noise (`ᾱ_T < 0.01`)
    /// for Gaussian initialization to match the forward endpoint.
    pub fn reaches_noise(&self) -> bool {
        self.alpha_bar[self.steps()] < 0.01
    }

    fn check_t(&self, t: usize, op: &str) -> Result<()> {
        if t == 0 || t > self.steps() {
            return Err(Error::invalid(format!(
                "{op}: timestep {t} outside 1..={}",
                self.steps()
            )));
        }
        Ok(())
    }

    /// Posterior coefficients `(coef_z0, coef_zt, sigma)` for step `t`,
    /// with β_t taken as `1 − ᾱ_t/ᾱ_{t−1}` so they agree with the stored ᾱ.
    pub fn posterior(&self, t: usize) -> (f64, f64, f64) {
        let (ab, ab_prev) = (self.alpha_bar[t], self.alpha_bar[t - 1]);
        let beta = 1.0 - ab / ab_prev;
        let c0 = ab_prev.sqrt() * beta / (1.0 - ab);
        let ct = (1.0 - beta).sqrt() * (1.0 - ab_prev) / (1.0 - ab);
        let sigma = if t == 1 {
            0.0
        } else {
            (beta * (1.0 - ab_prev) / (1.0 - ab)).sqrt()
        };
        (c0, ct, sigma)
    }
}

/// Latent matrix with per-position roles at timestep `t`.
#[derive(Clone, Debug, PartialEq)]
pub struct LatentState<T: Real = f32> {
    pub z: Tensor<T>,
    pub mask: Vec<PositionKind>,
    pub t: usize,
}

impl<T: Real> LatentState<T> {
    fn check(&self, other: &Tensor<T>, op: &'static str) -> Result<()> {
        if self.z.shape() != other.shape() || self.z.rows() != self.mask.len() {
            return Err(Error::Shape {
                op,
                detail: format!(
                    "latent {:?} with {} mask entries vs {:?}",
                    self.z.shape(),
                    self.mask.len(),
                    other.shape()
                ),
            });
        }
        Ok(())
    }
}

/// Noises TARGET rows of `z0` to timestep `t`; other rows are copied.
pub fn q_sample<T: Real>(
    schedule: &NoiseSchedule,
    z0: &LatentState<T>,
    t: usize,
    eps: &Tensor<T>,
) -> Result<LatentState<T>> {
    schedule.check_t(t, "q_sample")?;
    z0.check(eps, "q_sample")?;
    let ab = schedule.alpha_bar(t);
    let (signal, noise) = (T::of(ab.sqrt()), T::of((1.0 - ab).sqrt()));
    let mut z = z0.z.clone();
    for (i, kind) in z0.mask.iter().enumerate() {
        if *kind == PositionKind::Target {
            for (v, e) in z.row_mut(i).iter_mut().zip(eps.row(i)) {
                *v = signal * *v + noise * *e;
            }
        }
    }
    Ok(LatentState {
        z,
        mask: z0.mask.clone(),
        t,
    })
}

/// One ancestral step from `z_t` to `z_{t−1}` given the predicted `ẑ_0`.
pub fn reverse_step<T: Real>(
    schedule: &NoiseSchedule,
    z_t: &LatentState<T>,
    z0_hat: &Tensor<T>,
    noise: &Tensor<T>,
) -> Result<LatentState<T>> {
    let t = z_t.t;
    schedule.check_t(t, "reverse_step")?;
    z_t.check(z0_hat, "reverse_step")?;
    z_t.check(noise, "reverse_step")?;
    let (c0, ct, sigma) = schedule.posterior(t);
    let (c0, ct, sigma) = (T::of(c0), T::of(ct), T::of(sigma));
    let mut z = z_t.z.clone();
    for (i, kind) in z_t.mask.iter().enumerate() {
        if *kind != PositionKind::Target {
            continue;
        }
        let (hat, n) = (z0_hat.row(i), noise.row(i));
        for (j, v) in z.row_mut(i).iter_mut().enumerate() {
            let mu = c0 * hat[j] + ct * *v;
            *v = if t == 1 { mu } else { mu + sigma * n[j] };
        }
    }
    Ok(LatentState {
        z,
        mask: z_t.mask.clone(),
        t: t - 1,
    })
}

/// How many target positions generation fills.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LengthPolicy {
    /// As many target positions as the source has content tokens plus
    /// BOS/EOS (the source's true length minus its style token).
    #[default]
    MatchSource,
    /// The whole target window, truncated after the first EOS.
    Full,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SampleOptions {
    pub clamp: bool,
    pub seed: u64,
    pub length: LengthPolicy,
}

impl Default for SampleOptions {
    fn default() -> Self {
        SampleOptions {
            clamp: true,
            seed: 0,
            length: LengthPolicy::MatchSource,
        }
    }
}

pub(crate) fn standard_normal<T: Real>(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Tensor<T> {
    Tensor::randn(&[rows, cols], 1.0, rng)
}

/// Runs the reverse chain from `state` down to `t = 0`, asking `predict`
/// for ẑ0 at every step. With `clamp`, each TARGET row of the prediction is
/// replaced by its nearest token embedding first. `observe` sees the
/// initial state and the state after every step.
pub fn reverse_chain<T: Real>(
    schedule: &NoiseSchedule,
    mut state: LatentState<T>,
    clamp: Option<&EmbeddingIndex<'_, T>>,
    rng: &mut ChaCha8Rng,
    mut predict: impl FnMut(&LatentState<T>) -> Result<Tensor<T>>,
    mut observe: impl FnMut(&LatentState<T>),
) -> Result<LatentState<T>> {
    schedule.check_t(state.t, "reverse_chain")?;
    let (rows, d) = state.z.dims2();
    observe(&state);
    while state.t > 0 {
        let mut z0_hat = predict(&state)?;
        if let Some(index) = clamp {
            for (i, kind) in state.mask.iter().enumerate() {
                if *kind == PositionKind::Target {
                    if let Some(id) = index.nearest(z0_hat.row(i)) {
                        let row = index.row(id).to_vec();
                        z0_hat.row_mut(i).copy_from_slice(&row);
                    }
                }
            }
        }
        let noise = standard_normal(rows, d, rng);
        state = reverse_step(schedule, &state, &z0_hat, &noise)?;
        observe(&state);
    }
    Ok(state)
}

/// Output of [`sample`].
#[derive(Clone, Debug, PartialEq)]
pub struct Generated {
    /// Target window ids (length `trg_len`), PAD after the first EOS.
    pub target: TokenSeq,
    pub zero_norm_rows: usize,
}

/// Generates a target sequence conditioned on `src` with the full
/// `T`-step reverse chain.
pub fn sample<T: Real>(
    params: &DenoiserParams<T>,
    src: &TokenSeq,
    schedule: &NoiseSchedule,
    opts: &SampleOptions,
) -> Result<Generated> {
    sample_with_trace(params, src, schedule, opts, |_| {})
}

/// [`sample`], calling `observe` with the latent state after every step
/// (the initial state included).
pub fn sample_with_trace<T: Real>(
    params: &DenoiserParams<T>,
    src: &TokenSeq,
    schedule: &NoiseSchedule,
    opts: &SampleOptions,
    mut observe: impl FnMut(&LatentState<T>),
) -> Result<Generated> {
    let cfg = &params.config;
    if src.len() != cfg.src_len() {
        return Err(Error::invalid(format!(
            "source has {} positions, model expects {}",
            src.len(),
            cfg.src_len()
        )));
    }
    if let Some(&bad) = src.ids.iter().find(|&&id| id as usize >= cfg.vocab_size) {
        return Err(Error::invalid(format!(
            "source token {bad} outside the model vocabulary of {}",
            cfg.vocab_size
        )));
    }
    let active = match opts.length {
        LengthPolicy::MatchSource => src.true_length.saturating_sub(1).clamp(2, cfg.trg_len()),
        LengthPolicy::Full => cfg.trg_len(),
    };
    let mask = position_mask(cfg, &src.ids, active);
    let src_len = cfg.src_len();
    let d = cfg.d_model;

    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut z = params.token_rows(&src.ids)?.into_data();
    let init: Tensor<T> = standard_normal(cfg.trg_len(), d, &mut rng);
    for (i, kind) in mask[src_len..].iter().enumerate() {
        let row = init.row(i);
        match kind {
            PositionKind::Target => z.extend_from_slice(row),
            _ => z.extend(std::iter::repeat_n(T::zero(), d)),
        }
    }
    let state = LatentState {
        z: Tensor::new(vec![cfg.max_len, d], z)?,
        mask,
        t: schedule.steps(),
    };
    let index = EmbeddingIndex::new(&params.token_embeddings);
    let state = reverse_chain(
        schedule,
        state,
        opts.clamp.then_some(&index),
        &mut rng,
        |s| params.forward(&s.z, &s.mask, s.t),
        &mut observe,
    )?;

    let mut conditioning = src.ids.clone();
    conditioning.extend(std::iter::repeat_n(PAD, cfg.trg_len()));
    let rounded = crate::denoiser::round_to_tokens(&state.z, params, &state.mask, &conditioning)?;
    let mut target: Vec<_> = rounded.seq.ids[src_len..].to_vec();
    if let Some(end) = target.iter().position(|&id| id == EOS) {
        target[end + 1..].fill(PAD);
    }
    Ok(Generated {
        target: TokenSeq::from_ids(target),
        zero_norm_rows: rounded.zero_norm_rows,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn schedule_shape_and_monotonicity() {
        let s = NoiseSchedule::linear(1000, 1e-4, 0.02).unwrap();
        assert_eq!(s.alpha_bar(0), 1.0);
        for t in 1..=1000 {
            assert!(s.alpha_bar(t) < s.alpha_bar(t - 1));
            if t > 1 {
                assert!(s.beta(t) > s.beta(t - 1));
            }
        }
        assert!(s.reaches_noise());
    }

    #[test]
    fn schedule_rejects_bad_parameters() {
        assert!(NoiseSchedule::linear(100, 0.02, 1e-4).is_err());
        assert!(NoiseSchedule::linear(5, 1e-4, 0.02).is_err());
        assert!(NoiseSchedule::linear(100, 1e-4, 1.0).is_err());
        assert!(NoiseSchedule::scaled_linear(10).is_err());
    }

    #[test]
    fn near_constant_schedule() {
        let b = 0.01;
        let s = NoiseSchedule::linear(10, b, b + 1e-9).unwrap();
        assert!((s.alpha_bar(10) - (1.0f64 - b).powi(10)).abs() < 1e-6);
    }

    #[test]
    fn scaled_schedules_reach_noise() {
        for steps in [50, 200, 1000] {
            assert!(NoiseSchedule::scaled_linear(steps).unwrap().reaches_noise(), "{steps}");
        }
    }

    #[test]
    fn q_sample_closed_form() {
        let s = NoiseSchedule::linear(10, 0.1, 0.5).unwrap();
        let z0 = LatentState {
            z: Tensor::from_rows(&[vec![1.0f64, 0.0], vec![3.0, 4.0]]).unwrap(),
            mask: vec![PositionKind::Target, PositionKind::Source],
            t: 0,
        };
        let eps = Tensor::from_rows(&[vec![0.0, 1.0], vec![9.0, 9.0]]).unwrap();
        let out = q_sample(&s, &z0, 3, &eps).unwrap();
        let ab = s.alpha_bar(3);
        assert!((out.z.row(0)[0] - ab.sqrt()).abs() < 1e-12);
        assert!((out.z.row(0)[1] - (1.0 - ab).sqrt()).abs() < 1e-12);
        assert_eq!(out.z.row(1), z0.z.row(1));
        assert!(q_sample(&s, &z0, 0, &eps).is_err());
        assert!(q_sample(&s, &z0, 11, &eps).is_err());
    }

    #[test]
    fn final_step_is_deterministic_mean() {
        let s = NoiseSchedule::linear(10, 0.1, 0.5).unwrap();
        let zt = LatentState {
            z: Tensor::from_rows(&[vec![0.3f64, -0.2]]).unwrap(),
            mask: vec![PositionKind::Target],
            t: 1,
        };
        let hat = Tensor::from_rows(&[vec![1.0, 2.0]]).unwrap();
        let a = reverse_step(&s, &zt, &hat, &Tensor::full(&[1, 2], 5.0)).unwrap();
        let b = reverse_step(&s, &zt, &hat, &Tensor::zeros(&[1, 2])).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.t, 0);
        // ᾱ_0 = 1 makes μ_1 equal to ẑ_0.
        for (x, y) in a.z.row(0).iter().zip(hat.row(0)) {
            assert!((x - y).abs() < 1e-12);
        }
        let z0 = LatentState { t: 0, ..zt };
        assert!(reverse_step(&s, &z0, &hat, &hat).is_err());
    }
}
