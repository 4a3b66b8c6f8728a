//! The diffusion transformer: a pre-norm encoder over the concatenated
//! source and noisy target latents that predicts the clean latent `z0`.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numeric::{dot, Real, Tape, Tensor, Var};
use crate::tokenizer::{TokenId, TokenSeq, UNK};

const INIT_STD: f64 = 0.02;
/// Token embeddings start on the same scale as the unit-variance noise.
const TOKEN_INIT_STD: f64 = 1.0;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    /// Embedding width `d`.
    pub d_model: usize,
    pub n_layers: usize,
    pub heads: usize,
    /// Total sequence length `L`; the first half holds the source, the
    /// second half the target.
    pub max_len: usize,
    pub vocab_size: usize,
    pub dropout: f32,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            d_model: 64,
            n_layers: 2,
            heads: 4,
            max_len: 64,
            vocab_size: 0,
            dropout: 0.1,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::invalid(m));
        if self.d_model == 0 || self.n_layers == 0 || self.heads == 0 || self.vocab_size == 0 {
            return bad(format!("model dimensions must be positive: {self:?}"));
        }
        if !self.d_model.is_multiple_of(self.heads) {
            return bad(format!(
                "d_model {} is not divisible by {} heads",
                self.d_model, self.heads
            ));
        }
        if !self.d_model.is_multiple_of(2) {
            return bad("d_model must be even for the sinusoidal timestep encoding".into());
        }
        if self.max_len < 6 {
            return bad(format!("max_len {} is too short", self.max_len));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad(format!("dropout {} outside [0, 1)", self.dropout));
        }
        Ok(())
    }

    pub fn src_len(&self) -> usize {
        self.max_len / 2
    }

    pub fn trg_len(&self) -> usize {
        self.max_len - self.src_len()
    }

    pub fn head_dim(&self) -> usize {
        self.d_model / self.heads
    }
}

/// Role of one latent position.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum PositionKind {
    Source,
    Target,
    Pad,
}

/// Labels the source window by its tokens and the target window by
/// `target_active` leading TARGET positions.
pub fn position_mask(config: &ModelConfig, src: &[TokenId], target_active: usize) -> Vec<PositionKind> {
    let mut mask: Vec<PositionKind> = src
        .iter()
        .map(|&id| if id == 0 { PositionKind::Pad } else { PositionKind::Source })
        .collect();
    mask.extend((0..config.trg_len()).map(|i| {
        if i < target_active {
            PositionKind::Target
        } else {
            PositionKind::Pad
        }
    }));
    mask
}

#[derive(Clone, Debug, PartialEq)]
pub struct LayerParams<T: Real = f32> {
    pub ln1_gain: Tensor<T>,
    pub ln1_bias: Tensor<T>,
    pub wq: Tensor<T>,
    pub bq: Tensor<T>,
    pub wk: Tensor<T>,
    pub bk: Tensor<T>,
    pub wv: Tensor<T>,
    pub bv: Tensor<T>,
    pub wo: Tensor<T>,
    pub bo: Tensor<T>,
    pub ln2_gain: Tensor<T>,
    pub ln2_bias: Tensor<T>,
    pub ff_w1: Tensor<T>,
    pub ff_b1: Tensor<T>,
    pub ff_w2: Tensor<T>,
    pub ff_b2: Tensor<T>,
}

const LAYER_NAMES: [&str; 16] = [
    "ln1.gain", "ln1.bias", "attn.wq", "attn.bq", "attn.wk", "attn.bk", "attn.wv", "attn.bv",
    "attn.wo", "attn.bo", "ln2.gain", "ln2.bias", "ff.w1", "ff.b1", "ff.w2", "ff.b2",
];

impl<T: Real> LayerParams<T> {
    fn init(d: usize, rng: &mut ChaCha8Rng) -> Self {
        let w = |r: usize, c: usize, rng: &mut ChaCha8Rng| Tensor::randn(&[r, c], INIT_STD, rng);
        LayerParams {
            ln1_gain: Tensor::full(&[d], T::one()),
            ln1_bias: Tensor::zeros(&[d]),
            wq: w(d, d, rng),
            bq: Tensor::zeros(&[d]),
            wk: w(d, d, rng),
            bk: Tensor::zeros(&[d]),
            wv: w(d, d, rng),
            bv: Tensor::zeros(&[d]),
            wo: w(d, d, rng),
            bo: Tensor::zeros(&[d]),
            ln2_gain: Tensor::full(&[d], T::one()),
            ln2_bias: Tensor::zeros(&[d]),
            ff_w1: w(d, 4 * d, rng),
            ff_b1: Tensor::zeros(&[4 * d]),
            ff_w2: w(4 * d, d, rng),
            ff_b2: Tensor::zeros(&[d]),
        }
    }

    fn parts(&self) -> [&Tensor<T>; 16] {
        [
            &self.ln1_gain, &self.ln1_bias, &self.wq, &self.bq, &self.wk, &self.bk, &self.wv,
            &self.bv, &self.wo, &self.bo, &self.ln2_gain, &self.ln2_bias, &self.ff_w1,
            &self.ff_b1, &self.ff_w2, &self.ff_b2,
        ]
    }

    fn parts_mut(&mut self) -> [&mut Tensor<T>; 16] {
        [
            &mut self.ln1_gain, &mut self.ln1_bias, &mut self.wq, &mut self.bq, &mut self.wk,
            &mut self.bk, &mut self.wv, &mut self.bv, &mut self.wo, &mut self.bo,
            &mut self.ln2_gain, &mut self.ln2_bias, &mut self.ff_w1, &mut self.ff_b1,
            &mut self.ff_w2, &mut self.ff_b2,
        ]
    }
}

/// All trainable weights. Token embeddings double as the rounding table.
#[derive(Clone, Debug, PartialEq)]
pub struct DenoiserParams<T: Real = f32> {
    pub config: ModelConfig,
    pub token_embeddings: Tensor<T>,
    pub positional_embeddings: Tensor<T>,
    pub time_w1: Tensor<T>,
    pub time_b1: Tensor<T>,
    pub time_w2: Tensor<T>,
    pub time_b2: Tensor<T>,
    pub layers: Vec<LayerParams<T>>,
    pub final_ln_gain: Tensor<T>,
    pub final_ln_bias: Tensor<T>,
    pub head: Tensor<T>,
}

impl<T: Real> DenoiserParams<T> {
    pub fn init(config: &ModelConfig, seed: u64) -> Result<Self> {
        use rand::SeedableRng;
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (d, v) = (config.d_model, config.vocab_size);
        let mut token_embeddings = Tensor::randn(&[v, d], TOKEN_INIT_STD, &mut rng);
        token_embeddings.row_mut(0).fill(T::zero());
        let positional_embeddings = window_positions(config);
        let time_w1 = Tensor::randn(&[d, d], INIT_STD, &mut rng);
        let time_w2 = Tensor::randn(&[d, d], INIT_STD, &mut rng);
        let layers = (0..config.n_layers)
            .map(|_| LayerParams::init(d, &mut rng))
            .collect();
        let head = Tensor::randn(&[d, d], INIT_STD, &mut rng);
        Ok(DenoiserParams {
            config: config.clone(),
            token_embeddings,
            positional_embeddings,
            time_w1,
            time_b1: Tensor::zeros(&[d]),
            time_w2,
            time_b2: Tensor::zeros(&[d]),
            layers,
            final_ln_gain: Tensor::full(&[d], T::one()),
            final_ln_bias: Tensor::zeros(&[d]),
            head,
        })
    }

    /// Every tensor with a stable name, in serialization order.
    pub fn named_tensors(&self) -> Vec<(String, &Tensor<T>)> {
        let mut out: Vec<(String, &Tensor<T>)> = vec![
            ("token_embeddings".into(), &self.token_embeddings),
            ("positional_embeddings".into(), &self.positional_embeddings),
            ("time.w1".into(), &self.time_w1),
            ("time.b1".into(), &self.time_b1),
            ("time.w2".into(), &self.time_w2),
            ("time.b2".into(), &self.time_b2),
        ];
        for (i, layer) in self.layers.iter().enumerate() {
            for (name, t) in LAYER_NAMES.iter().zip(layer.parts()) {
                out.push((format!("layers.{i}.{name}"), t));
            }
        }
        out.push(("final_ln.gain".into(), &self.final_ln_gain));
        out.push(("final_ln.bias".into(), &self.final_ln_bias));
        out.push(("head".into(), &self.head));
        out
    }

    /// Same order as [`Self::named_tensors`].
    pub fn tensors_mut(&mut self) -> Vec<&mut Tensor<T>> {
        let mut out: Vec<&mut Tensor<T>> = vec![
            &mut self.token_embeddings,
            &mut self.positional_embeddings,
            &mut self.time_w1,
            &mut self.time_b1,
            &mut self.time_w2,
            &mut self.time_b2,
        ];
        for layer in &mut self.layers {
            out.extend(layer.parts_mut());
        }
        out.push(&mut self.final_ln_gain);
        out.push(&mut self.final_ln_bias);
        out.push(&mut self.head);
        out
    }

    pub fn cast<U: Real>(&self) -> DenoiserParams<U> {
        let mut out = DenoiserParams::<U>::init(&self.config, 0).expect("config already validated");
        for (dst, (_, src)) in out.tensors_mut().into_iter().zip(self.named_tensors()) {
            *dst = src.cast();
        }
        out
    }

    pub fn num_parameters(&self) -> usize {
        self.named_tensors().iter().map(|(_, t)| t.numel()).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.named_tensors().iter().all(|(_, t)| t.is_finite())
    }

    /// Registers every tensor as a tape leaf.
    pub fn register(&self, tape: &mut Tape<T>) -> ParamVars {
        let vars: Vec<Var> = self
            .named_tensors()
            .into_iter()
            .map(|(_, t)| tape.leaf(t.clone()))
            .collect();
        ParamVars::from_flat(vars, self.config.n_layers)
    }

    /// Clean latent rows: token embeddings only (PAD is the zero row).
    pub fn token_rows(&self, ids: &[TokenId]) -> Result<Tensor<T>> {
        let (v, d) = self.token_embeddings.dims2();
        let mut data = Vec::with_capacity(ids.len() * d);
        for &id in ids {
            if id as usize >= v {
                return Err(Error::invalid(format!("token id {id} outside vocabulary of {v}")));
            }
            data.extend_from_slice(self.token_embeddings.row(id as usize));
        }
        Tensor::new(vec![ids.len(), d], data)
    }

    /// Token embedding plus positional embedding for each position.
    pub fn embed(&self, seq: &TokenSeq) -> Result<(Tensor<T>, Vec<PositionKind>)> {
        if seq.len() > self.config.max_len {
            return Err(Error::invalid(format!(
                "sequence of {} exceeds max_len {}",
                seq.len(),
                self.config.max_len
            )));
        }
        let mut z = self.token_rows(&seq.ids)?;
        for p in 0..seq.len() {
            let pos = self.positional_embeddings.row(p).to_vec();
            for (a, b) in z.row_mut(p).iter_mut().zip(pos) {
                *a += b;
            }
        }
        let mask = seq
            .ids
            .iter()
            .map(|&id| if id == 0 { PositionKind::Pad } else { PositionKind::Source })
            .collect();
        Ok((z, mask))
    }

    /// Predicts `z0` for every position of `z_t` (no dropout, no gradients).
    pub fn forward(&self, z_t: &Tensor<T>, mask: &[PositionKind], t: usize) -> Result<Tensor<T>> {
        let mut tape = Tape::new();
        let vars = self.register(&mut tape);
        let z = tape.leaf(z_t.clone());
        let out = forward_on_tape(&mut tape, &vars, &self.config, z, mask, t, None)?;
        Ok(tape.value(out).clone())
    }
}

/// Tape handles for one layer.
#[derive(Clone, Debug)]
pub struct LayerVars {
    pub ln1_gain: Var,
    pub ln1_bias: Var,
    pub wq: Var,
    pub bq: Var,
    pub wk: Var,
    pub bk: Var,
    pub wv: Var,
    pub bv: Var,
    pub wo: Var,
    pub bo: Var,
    pub ln2_gain: Var,
    pub ln2_bias: Var,
    pub ff_w1: Var,
    pub ff_b1: Var,
    pub ff_w2: Var,
    pub ff_b2: Var,
}

/// Tape handles mirroring [`DenoiserParams`]; `flat` follows
/// [`DenoiserParams::named_tensors`] order.
#[derive(Clone, Debug)]
pub struct ParamVars {
    pub flat: Vec<Var>,
    pub token_embeddings: Var,
    pub positional_embeddings: Var,
    pub time_w1: Var,
    pub time_b1: Var,
    pub time_w2: Var,
    pub time_b2: Var,
    pub layers: Vec<LayerVars>,
    pub final_ln_gain: Var,
    pub final_ln_bias: Var,
    pub head: Var,
}

impl ParamVars {
    /// Groups registered handles given in [`DenoiserParams::named_tensors`] order.
    pub fn from_flat(flat: Vec<Var>, n_layers: usize) -> Self {
        let layers = (0..n_layers)
            .map(|i| {
                let v = &flat[6 + 16 * i..6 + 16 * (i + 1)];
                LayerVars {
                    ln1_gain: v[0],
                    ln1_bias: v[1],
                    wq: v[2],
                    bq: v[3],
                    wk: v[4],
                    bk: v[5],
                    wv: v[6],
                    bv: v[7],
                    wo: v[8],
                    bo: v[9],
                    ln2_gain: v[10],
                    ln2_bias: v[11],
                    ff_w1: v[12],
                    ff_b1: v[13],
                    ff_w2: v[14],
                    ff_b2: v[15],
                }
            })
            .collect();
        let tail = 6 + 16 * n_layers;
        ParamVars {
            token_embeddings: flat[0],
            positional_embeddings: flat[1],
            time_w1: flat[2],
            time_b1: flat[3],
            time_w2: flat[4],
            time_b2: flat[5],
            layers,
            final_ln_gain: flat[tail],
            final_ln_bias: flat[tail + 1],
            head: flat[tail + 2],
            flat,
        }
    }
}

/// Initial positional table: each window gets the sinusoidal code of the
/// index inside that window, with the target window shifted by one so the
/// k-th target token starts with the same code as the k-th source token
/// after the style token.
pub fn window_positions<T: Real>(config: &ModelConfig) -> Tensor<T> {
    let d = config.d_model;
    let mut data = Vec::with_capacity(config.max_len * d);
    for p in 0..config.src_len() {
        data.extend_from_slice(timestep_encoding::<T>(p, d).data());
    }
    for k in 0..config.trg_len() {
        data.extend_from_slice(timestep_encoding::<T>(k + 1, d).data());
    }
    Tensor::from_parts(vec![config.max_len, d], data)
}

/// Sinusoidal encoding of timestep `t` with `d` features.
pub fn timestep_encoding<T: Real>(t: usize, d: usize) -> Tensor<T> {
    let half = d / 2;
    let mut data = vec![T::zero(); d];
    for i in 0..half {
        let freq = (-(10_000f64.ln()) * i as f64 / half as f64).exp();
        let angle = t as f64 * freq;
        data[i] = T::of(angle.sin());
        data[half + i] = T::of(angle.cos());
    }
    Tensor::from_parts(vec![1, d], data)
}

/// Dropout randomness for a training forward pass.
pub struct Dropout<'a> {
    pub rng: &'a mut ChaCha8Rng,
    pub rate: f32,
}

fn dropout<T: Real>(tape: &mut Tape<T>, x: Var, drop: &mut Option<Dropout<'_>>) -> Result<Var> {
    let Some(d) = drop.as_mut() else {
        return Ok(x);
    };
    if d.rate <= 0.0 {
        return Ok(x);
    }
    let keep_scale = T::of(1.0 / (1.0 - d.rate as f64));
    let shape = tape.value(x).shape().to_vec();
    let n: usize = shape.iter().product();
    let mask: Vec<T> = (0..n)
        .map(|_| {
            if d.rng.random::<f32>() < d.rate {
                T::zero()
            } else {
                keep_scale
            }
        })
        .collect();
    tape.mul_const(x, &Tensor::from_parts(shape, mask))
}

/// Records the denoiser forward pass for latent `z` at timestep `t`.
pub fn forward_on_tape<T: Real>(
    tape: &mut Tape<T>,
    p: &ParamVars,
    config: &ModelConfig,
    z: Var,
    mask: &[PositionKind],
    t: usize,
    mut drop: Option<Dropout<'_>>,
) -> Result<Var> {
    let (l, d) = tape.value(z).dims2();
    if d != config.d_model || l != mask.len() || l > config.max_len {
        return Err(Error::Shape {
            op: "denoiser",
            detail: format!(
                "latent [{l},{d}] with {} mask entries vs config L={} d={}",
                mask.len(),
                config.max_len,
                config.d_model
            ),
        });
    }
    let keep: Vec<bool> = mask.iter().map(|&k| k != PositionKind::Pad).collect();

    let enc = tape.leaf(timestep_encoding(t, d));
    let h1 = tape.matmul(enc, p.time_w1)?;
    let h1 = tape.add_row(h1, p.time_b1)?;
    let h1 = tape.gelu(h1)?;
    let temb = tape.matmul(h1, p.time_w2)?;
    let temb = tape.add_row(temb, p.time_b2)?;

    let pos = if l == config.max_len {
        p.positional_embeddings
    } else {
        let ids: Vec<usize> = (0..l).collect();
        tape.gather(p.positional_embeddings, &ids)?
    };
    let mut h = tape.add(z, pos)?;
    h = tape.add_row(h, temb)?;

    let dh = config.head_dim();
    let inv_sqrt = T::of(1.0 / (dh as f64).sqrt());
    for lp in &p.layers {
        let a = tape.layer_norm(h, lp.ln1_gain, lp.ln1_bias)?;
        let q = tape.matmul(a, lp.wq)?;
        let q = tape.add_row(q, lp.bq)?;
        let k = tape.matmul(a, lp.wk)?;
        let k = tape.add_row(k, lp.bk)?;
        let v = tape.matmul(a, lp.wv)?;
        let v = tape.add_row(v, lp.bv)?;
        let mut heads = Vec::with_capacity(config.heads);
        for hi in 0..config.heads {
            let qh = tape.slice_cols(q, hi * dh, dh)?;
            let kh = tape.slice_cols(k, hi * dh, dh)?;
            let vh = tape.slice_cols(v, hi * dh, dh)?;
            let scores = tape.matmul_nt(qh, kh)?;
            let scores = tape.scale(scores, inv_sqrt)?;
            let weights = tape.masked_softmax_rows(scores, Some(&keep))?;
            heads.push(tape.matmul(weights, vh)?);
        }
        let o = tape.concat_cols(&heads)?;
        let o = tape.matmul(o, lp.wo)?;
        let o = tape.add_row(o, lp.bo)?;
        let o = dropout(tape, o, &mut drop)?;
        h = tape.add(h, o)?;

        let f = tape.layer_norm(h, lp.ln2_gain, lp.ln2_bias)?;
        let f = tape.matmul(f, lp.ff_w1)?;
        let f = tape.add_row(f, lp.ff_b1)?;
        let f = tape.gelu(f)?;
        let f = tape.matmul(f, lp.ff_w2)?;
        let f = tape.add_row(f, lp.ff_b2)?;
        let f = dropout(tape, f, &mut drop)?;
        h = tape.add(h, f)?;
    }
    let out = tape.layer_norm(h, p.final_ln_gain, p.final_ln_bias)?;
    tape.matmul(out, p.head)
}

/// Cosine nearest-neighbour lookup against the token embedding table.
pub struct EmbeddingIndex<'a, T: Real> {
    table: &'a Tensor<T>,
    inv_norms: Vec<T>,
}

impl<'a, T: Real> EmbeddingIndex<'a, T> {
    pub fn new(table: &'a Tensor<T>) -> Self {
        let inv_norms = (0..table.rows())
            .map(|i| {
                let n = dot(table.row(i), table.row(i)).sqrt();
                if n > T::zero() {
                    T::one() / n
                } else {
                    T::zero()
                }
            })
            .collect();
        EmbeddingIndex { table, inv_norms }
    }

    /// Highest-cosine token, lowest id on ties; `None` for a zero query.
    /// Zero-norm table rows (PAD) never match.
    pub fn nearest(&self, query: &[T]) -> Option<TokenId> {
        let qn = dot(query, query).sqrt();
        if qn == T::zero() {
            return None;
        }
        let mut best: Option<(usize, T)> = None;
        for (v, &inv) in self.inv_norms.iter().enumerate() {
            if inv == T::zero() {
                continue;
            }
            let cos = dot(query, self.table.row(v)) * inv / qn;
            if best.is_none_or(|(_, b)| cos > b) {
                best = Some((v, cos));
            }
        }
        best.map(|(v, _)| v as TokenId)
    }

    pub fn row(&self, id: TokenId) -> &[T] {
        self.table.row(id as usize)
    }
}

/// Result of mapping latent rows back to tokens.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Rounded {
    pub seq: TokenSeq,
    /// TARGET rows with zero norm, mapped to UNK.
    pub zero_norm_rows: usize,
}

/// Maps each TARGET row of `z` to its nearest token embedding by cosine
/// similarity; SOURCE and PAD positions are copied from `conditioning`.
pub fn round_to_tokens<T: Real>(
    z: &Tensor<T>,
    params: &DenoiserParams<T>,
    mask: &[PositionKind],
    conditioning: &[TokenId],
) -> Result<Rounded> {
    if z.rows() != mask.len() || conditioning.len() != mask.len() {
        return Err(Error::Shape {
            op: "round_to_tokens",
            detail: format!(
                "{} rows, {} mask entries, {} conditioning ids",
                z.rows(),
                mask.len(),
                conditioning.len()
            ),
        });
    }
    let index = EmbeddingIndex::new(&params.token_embeddings);
    let mut zero_norm_rows = 0;
    let ids = mask
        .iter()
        .enumerate()
        .map(|(i, kind)| match kind {
            PositionKind::Target => index.nearest(z.row(i)).unwrap_or_else(|| {
                zero_norm_rows += 1;
                UNK
            }),
            _ => conditioning[i],
        })
        .collect();
    Ok(Rounded {
        seq: TokenSeq::from_ids(ids),
        zero_norm_rows,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tokenizer::PAD;

    fn tiny() -> ModelConfig {
        ModelConfig {
            d_model: 8,
            n_layers: 1,
            heads: 2,
            max_len: 8,
            vocab_size: 12,
            dropout: 0.0,
        }
    }

    #[test]
    fn config_validation() {
        let mut c = tiny();
        assert!(c.validate().is_ok());
        c.heads = 3;
        assert!(c.validate().is_err());
        c = tiny();
        c.dropout = 1.0;
        assert!(c.validate().is_err());
    }

    #[test]
    fn init_freezes_pad_row_and_names_are_unique() {
        let p = DenoiserParams::<f32>::init(&tiny(), 1).unwrap();
        assert!(p.token_embeddings.row(0).iter().all(|&v| v == 0.0));
        let names: Vec<_> = p.named_tensors().into_iter().map(|(n, _)| n).collect();
        let mut dedup = names.clone();
        dedup.sort();
        dedup.dedup();
        assert_eq!(names.len(), dedup.len());
        assert_eq!(names.len(), 6 + 16 + 3);
    }

    #[test]
    fn embed_examples() {
        let p = DenoiserParams::<f32>::init(&tiny(), 2).unwrap();
        let pads = TokenSeq::from_ids(vec![PAD; 4]);
        let (z, mask) = p.embed(&pads).unwrap();
        for i in 0..4 {
            assert_eq!(z.row(i), p.positional_embeddings.row(i));
        }
        assert!(mask.iter().all(|&k| k == PositionKind::Pad));

        let a = TokenSeq::from_ids(vec![5, 6, 7, 8]);
        let b = TokenSeq::from_ids(vec![5, 6, 9, 8]);
        let (za, _) = p.embed(&a).unwrap();
        let (zb, _) = p.embed(&b).unwrap();
        for i in 0..4 {
            assert_eq!(za.row(i) == zb.row(i), i != 2);
        }
        for (j, v) in za.row(1).iter().enumerate() {
            assert_eq!(*v, p.token_embeddings.row(6)[j] + p.positional_embeddings.row(1)[j]);
        }
        assert!(p.embed(&TokenSeq::from_ids(vec![12])).is_err());
    }

    #[test]
    fn forward_shape_and_determinism() {
        let cfg = tiny();
        let p = DenoiserParams::<f32>::init(&cfg, 3).unwrap();
        let mask = position_mask(&cfg, &[5, 2, 6, 0], 3);
        let z = p.token_rows(&[5, 2, 6, 0, 2, 7, 3, 0]).unwrap();
        let a = p.forward(&z, &mask, 4).unwrap();
        assert_eq!(a.shape(), &[8, 8]);
        assert_eq!(a, p.forward(&z, &mask, 4).unwrap());
        assert!(p.forward(&z, &mask[..7], 4).is_err());
    }

    #[test]
    fn rounding_examples() {
        let p = DenoiserParams::<f32>::init(&tiny(), 4).unwrap();
        let mask = [PositionKind::Source, PositionKind::Target, PositionKind::Target, PositionKind::Target];
        let mut z = Tensor::zeros(&[4, 8]);
        z.row_mut(1).copy_from_slice(p.token_embeddings.row(7));
        let doubled: Vec<f32> = p.token_embeddings.row(5).iter().map(|v| v * 2.0).collect();
        z.row_mut(2).copy_from_slice(&doubled);
        let r = round_to_tokens(&z, &p, &mask, &[9, 0, 0, 0]).unwrap();
        assert_eq!(r.seq.ids, vec![9, 7, 5, UNK]);
        assert_eq!(r.zero_norm_rows, 1);
    }
}
