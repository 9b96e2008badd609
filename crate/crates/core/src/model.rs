//! The set-input transformer that classifies a room and every object's
//! region affordance in one pass.
//!
//! Each object becomes one token: a learned embedding of its label plus a
//! linear projection of its distance to the room centroid. A learned
//! classification token is prepended; after a stack of pre-LN encoder blocks
//! and a final layer norm, row 0 feeds the room head and the object rows feed
//! a shared region head. Padded slots are masked out of attention.
//!
//! The same struct also hosts the per-token MLP baseline (no cross-token
//! mixing), selected through [`Architecture`].

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::math;
use crate::scene::{LabelVocab, TokenizedScene};
use crate::tensor::{ParamStore, Tape, Tensor, Var};

pub const INIT_STD: f64 = 0.02;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Architecture {
    #[default]
    Transformer,
    /// Per-token blocks of linear, QuickGELU, linear, layer norm, dropout.
    Mlp,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DistanceScaling {
    /// Distances in meters.
    #[default]
    Raw,
    /// Distances divided by the scene's largest object distance.
    SceneMax,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    pub dim: usize,
    pub layers: usize,
    pub heads: usize,
    pub mlp_ratio: f64,
    pub dropout: f64,
    pub vocab_size: usize,
    pub n_room_classes: usize,
    pub n_region_classes: usize,
    pub max_objects: usize,
    pub architecture: Architecture,
    pub use_position: bool,
    pub distance_scaling: DistanceScaling,
    /// Width of frozen external label vectors; when set, the semantic
    /// embedding is those vectors times a learned `[S, dim]` projection.
    pub external_dim: Option<usize>,
    pub ln_eps: f64,
    pub init_seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            dim: 384,
            layers: 4,
            heads: 6,
            mlp_ratio: 4.0,
            dropout: 0.1,
            vocab_size: 192,
            n_room_classes: 12,
            n_region_classes: 27,
            max_objects: 77,
            architecture: Architecture::Transformer,
            use_position: true,
            distance_scaling: DistanceScaling::Raw,
            external_dim: None,
            ln_eps: 1e-5,
            init_seed: 0,
        }
    }
}

impl ModelConfig {
    pub fn hidden_dim(&self) -> usize {
        math::round(self.dim as f64 * self.mlp_ratio) as usize
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidConfig(m.into()));
        if self.dim == 0 || self.heads == 0 || !self.dim.is_multiple_of(self.heads) {
            return bad("dim must be a positive multiple of heads");
        }
        if self.vocab_size == 0 || self.n_room_classes == 0 || self.n_region_classes == 0 || self.max_objects == 0 {
            return bad("vocabulary, class counts, and max_objects must be positive");
        }
        if !(self.mlp_ratio > 0.0) || self.hidden_dim() == 0 {
            return bad("mlp_ratio must be positive");
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad("dropout must be in [0, 1)");
        }
        if self.external_dim == Some(0) {
            return bad("external_dim must be positive");
        }
        Ok(())
    }
}

/// Exact number of trainable scalars for `config`.
pub fn count_parameters(config: &ModelConfig) -> usize {
    let d = config.dim;
    let h = config.hidden_dim();
    let semantic = match config.external_dim {
        Some(s) => s * d,
        None => config.vocab_size * d,
    };
    let position = if config.use_position { 2 * d } else { 0 };
    let class_token = d;
    let per_block = match config.architecture {
        Architecture::Transformer => {
            2 * d + (d * 3 * d + 3 * d) + (d * d + d) + 2 * d + (d * h + h) + (h * d + d)
        }
        Architecture::Mlp => (d * h + h) + (h * d + d) + 2 * d,
    };
    let final_ln = match config.architecture {
        Architecture::Transformer => 2 * d,
        Architecture::Mlp => 0,
    };
    let heads = (d * config.n_room_classes + config.n_room_classes) + (d * config.n_region_classes + config.n_region_classes);
    semantic + position + class_token + config.layers * per_block + final_ln + heads
}

/// Frozen per-label vectors from an external text encoder, one row per
/// vocabulary index; the PAD row is zero.
#[derive(Debug, Clone, PartialEq)]
pub struct ExternalEmbeddings {
    table: Tensor,
}

impl ExternalEmbeddings {
    pub fn from_map(map: &BTreeMap<String, Vec<f64>>, vocab: &LabelVocab) -> Result<Self> {
        let dim = match vocab.labels().first() {
            Some(l) => map.get(l).ok_or_else(|| Error::MissingLabel(l.clone()))?.len(),
            None => return Err(Error::EmptyCorpus),
        };
        if dim == 0 {
            return Err(Error::DimensionMismatch { expected: 1, actual: 0 });
        }
        let mut data = Vec::with_capacity(vocab.size() * dim);
        for label in vocab.labels() {
            let v = map.get(label).ok_or_else(|| Error::MissingLabel(label.clone()))?;
            if v.len() != dim {
                return Err(Error::DimensionMismatch { expected: dim, actual: v.len() });
            }
            data.extend_from_slice(v);
        }
        data.extend(core::iter::repeat_n(0.0, dim));
        Ok(Self { table: Tensor::matrix(vocab.size(), dim, data)? })
    }

    pub fn from_table(table: Tensor) -> Result<Self> {
        if table.shape().len() != 2 {
            return Err(Error::ShapeMismatch(format!("external table {:?}", table.shape())));
        }
        Ok(Self { table })
    }

    pub fn dim(&self) -> usize {
        self.table.cols()
    }

    pub fn table(&self) -> &Tensor {
        &self.table
    }

    /// The semantic table these vectors produce under `projection`:
    /// `external · projection`, shape `[vocab, target_dim]`.
    pub fn project(&self, projection: &Tensor) -> Result<Tensor> {
        let store = ParamStore::new();
        let mut tape = Tape::new(&store);
        let e = tape.constant(self.table.clone());
        let w = tape.constant(projection.clone());
        let out = tape.matmul(e, w)?;
        Ok(tape.value(out).clone())
    }
}

/// Room logits and per-slot region logits for one scene.
#[derive(Debug, Clone, PartialEq)]
pub struct PredictionSet {
    pub room_logits: Vec<f64>,
    /// `[slots, n_region_classes]`.
    pub region_logits: Tensor,
    pub mask: Vec<bool>,
}

impl PredictionSet {
    pub fn room_class(&self) -> usize {
        math::argmax(&self.room_logits)
    }

    /// Argmax region class for valid slots, `None` for padding.
    pub fn region_classes(&self) -> Vec<Option<usize>> {
        (0..self.region_logits.rows())
            .map(|i| self.mask[i].then(|| math::argmax(self.region_logits.row(i))))
            .collect()
    }
}

/// Intermediate activations of one forward pass.
#[derive(Debug, Clone, PartialEq)]
pub struct ActivationState {
    pub z0: Tensor,
    /// `(z'_l, z_l)` for each block.
    pub blocks: Vec<(Tensor, Tensor)>,
    pub y: Tensor,
}

/// Tape handles produced by [`Model::forward_on`].
#[derive(Debug, Clone)]
pub struct ForwardVars {
    pub z0: Var,
    pub blocks: Vec<(Var, Var)>,
    pub y: Var,
    pub room_logits: Var,
    pub region_logits: Var,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    config: ModelConfig,
    params: ParamStore,
    external: Option<ExternalEmbeddings>,
}

fn normal_tensor(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
    let dist = Normal::new(0.0, INIT_STD).expect("valid std");
    let mut t = Tensor::zeros(shape);
    for v in t.data_mut() {
        *v = dist.sample(rng);
    }
    t
}

impl Model {
    /// Randomly initialized model: weights ~ N(0, 0.02), biases zero,
    /// layer-norm gains one.
    pub fn new(config: ModelConfig) -> Result<Self> {
        if config.external_dim.is_some() {
            return Err(Error::InvalidConfig("external_dim set; use Model::with_external".into()));
        }
        Self::build(config, None)
    }

    pub fn with_external(mut config: ModelConfig, external: ExternalEmbeddings) -> Result<Self> {
        if external.table.rows() != config.vocab_size {
            return Err(Error::DimensionMismatch { expected: config.vocab_size, actual: external.table.rows() });
        }
        config.external_dim = Some(external.dim());
        Self::build(config, Some(external))
    }

    /// Rebuilds a model from stored parameters (for checkpoints).
    pub fn from_parts(config: ModelConfig, params: ParamStore, external: Option<ExternalEmbeddings>) -> Result<Self> {
        let fresh = Self::build(config.clone(), external.clone())?;
        for (name, t) in fresh.params.iter() {
            let got = params.get(name).ok_or_else(|| Error::UnknownParameter(name.into()))?;
            if got.shape() != t.shape() {
                return Err(Error::ShapeMismatch(format!("{name}: {:?} vs {:?}", got.shape(), t.shape())));
            }
        }
        if params.len() != fresh.params.len() {
            return Err(Error::ShapeMismatch("unexpected extra parameters".into()));
        }
        Ok(Self { config, params, external })
    }

    fn build(config: ModelConfig, external: Option<ExternalEmbeddings>) -> Result<Self> {
        config.validate()?;
        let d = config.dim;
        let h = config.hidden_dim();
        let mut rng = ChaCha8Rng::seed_from_u64(config.init_seed);
        let mut p = ParamStore::new();
        match &external {
            Some(e) => p.insert("embed.projection", normal_tensor(&mut rng, &[e.dim(), d]))?,
            None => p.insert("embed.semantic", normal_tensor(&mut rng, &[config.vocab_size, d]))?,
        };
        if config.use_position {
            p.insert("embed.pos_weight", normal_tensor(&mut rng, &[1, d]))?;
            p.insert("embed.pos_bias", Tensor::zeros(&[d]))?;
        }
        p.insert("embed.class_token", normal_tensor(&mut rng, &[1, d]))?;
        for l in 0..config.layers {
            match config.architecture {
                Architecture::Transformer => {
                    p.insert(format!("blocks.{l}.ln1.gamma"), Tensor::filled(&[d], 1.0))?;
                    p.insert(format!("blocks.{l}.ln1.beta"), Tensor::zeros(&[d]))?;
                    p.insert(format!("blocks.{l}.attn.qkv.weight"), normal_tensor(&mut rng, &[d, 3 * d]))?;
                    p.insert(format!("blocks.{l}.attn.qkv.bias"), Tensor::zeros(&[3 * d]))?;
                    p.insert(format!("blocks.{l}.attn.out.weight"), normal_tensor(&mut rng, &[d, d]))?;
                    p.insert(format!("blocks.{l}.attn.out.bias"), Tensor::zeros(&[d]))?;
                    p.insert(format!("blocks.{l}.ln2.gamma"), Tensor::filled(&[d], 1.0))?;
                    p.insert(format!("blocks.{l}.ln2.beta"), Tensor::zeros(&[d]))?;
                    p.insert(format!("blocks.{l}.mlp.fc1.weight"), normal_tensor(&mut rng, &[d, h]))?;
                    p.insert(format!("blocks.{l}.mlp.fc1.bias"), Tensor::zeros(&[h]))?;
                    p.insert(format!("blocks.{l}.mlp.fc2.weight"), normal_tensor(&mut rng, &[h, d]))?;
                    p.insert(format!("blocks.{l}.mlp.fc2.bias"), Tensor::zeros(&[d]))?;
                }
                Architecture::Mlp => {
                    p.insert(format!("mlp.{l}.fc1.weight"), normal_tensor(&mut rng, &[d, h]))?;
                    p.insert(format!("mlp.{l}.fc1.bias"), Tensor::zeros(&[h]))?;
                    p.insert(format!("mlp.{l}.fc2.weight"), normal_tensor(&mut rng, &[h, d]))?;
                    p.insert(format!("mlp.{l}.fc2.bias"), Tensor::zeros(&[d]))?;
                    p.insert(format!("mlp.{l}.ln.gamma"), Tensor::filled(&[d], 1.0))?;
                    p.insert(format!("mlp.{l}.ln.beta"), Tensor::zeros(&[d]))?;
                }
            }
        }
        if config.architecture == Architecture::Transformer {
            p.insert("final_ln.gamma", Tensor::filled(&[d], 1.0))?;
            p.insert("final_ln.beta", Tensor::zeros(&[d]))?;
        }
        p.insert("head.room.weight", normal_tensor(&mut rng, &[d, config.n_room_classes]))?;
        p.insert("head.room.bias", Tensor::zeros(&[config.n_room_classes]))?;
        p.insert("head.region.weight", normal_tensor(&mut rng, &[d, config.n_region_classes]))?;
        p.insert("head.region.bias", Tensor::zeros(&[config.n_region_classes]))?;
        Ok(Self { config, params: p, external })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.params
    }

    pub fn external(&self) -> Option<&ExternalEmbeddings> {
        self.external.as_ref()
    }

    /// Key mask over the classification token and the object slots.
    pub fn key_mask(tokens: &TokenizedScene) -> Vec<bool> {
        let mut m = Vec::with_capacity(tokens.attention_mask.len() + 1);
        m.push(true);
        m.extend_from_slice(&tokens.attention_mask);
        m
    }

    fn scaled_distances(&self, tokens: &TokenizedScene) -> Vec<f64> {
        match self.config.distance_scaling {
            DistanceScaling::Raw => tokens.distances.clone(),
            DistanceScaling::SceneMax => {
                let max = tokens
                    .distances
                    .iter()
                    .zip(&tokens.attention_mask)
                    .filter(|(_, &m)| m)
                    .map(|(d, _)| *d)
                    .fold(0.0, f64::max);
                let s = if max > 0.0 { 1.0 / max } else { 1.0 };
                tokens.distances.iter().map(|d| d * s).collect()
            }
        }
    }

    /// Records the token embedding `[x_class; E_sem + E_pos]`.
    pub fn embed_on<'p>(&self, tape: &mut Tape<'p>, tokens: &TokenizedScene) -> Result<Var> {
        let n = tokens.token_ids.len();
        if tokens.distances.len() != n || tokens.attention_mask.len() != n {
            return Err(Error::LengthMismatch { expected: n, actual: tokens.distances.len() });
        }
        let vocab = self.config.vocab_size;
        if let Some(&id) = tokens.token_ids.iter().find(|&&id| id >= vocab) {
            return Err(Error::IndexOutOfVocab { id, size: vocab });
        }
        let semantic = match &self.external {
            Some(ext) => {
                let s = ext.dim();
                let mut rows = Vec::with_capacity(n * s);
                for &id in &tokens.token_ids {
                    rows.extend_from_slice(ext.table.row(id));
                }
                let rows = tape.constant(Tensor::from_parts(vec![n, s], rows));
                let w = tape.param_named("embed.projection")?;
                tape.matmul(rows, w)?
            }
            None => {
                let table = tape.param_named("embed.semantic")?;
                tape.gather_rows(table, &tokens.token_ids)?
            }
        };
        let tokens_emb = if self.config.use_position {
            let d = tape.constant(Tensor::from_parts(vec![n, 1], self.scaled_distances(tokens)));
            let w = tape.param_named("embed.pos_weight")?;
            let b = tape.param_named("embed.pos_bias")?;
            let pos = tape.matmul(d, w)?;
            let pos = tape.add_bias(pos, b)?;
            tape.add(semantic, pos)?
        } else {
            semantic
        };
        let class_token = tape.param_named("embed.class_token")?;
        tape.concat_rows(class_token, tokens_emb)
    }

    fn linear<'p>(&self, tape: &mut Tape<'p>, x: Var, prefix: &str) -> Result<Var> {
        let w = tape.param_named(&format!("{prefix}.weight"))?;
        let b = tape.param_named(&format!("{prefix}.bias"))?;
        let y = tape.matmul(x, w)?;
        tape.add_bias(y, b)
    }

    fn norm<'p>(&self, tape: &mut Tape<'p>, x: Var, prefix: &str) -> Result<Var> {
        let g = tape.param_named(&format!("{prefix}.gamma"))?;
        let b = tape.param_named(&format!("{prefix}.beta"))?;
        tape.layer_norm(x, g, b, self.config.ln_eps)
    }

    /// Records the encoder stack over `z0`; returns `(blocks, y)`.
    pub fn encode_on<'p>(
        &self,
        tape: &mut Tape<'p>,
        z0: Var,
        key_mask: &[bool],
        mut rng: Option<&mut dyn RngCore>,
    ) -> Result<(Vec<(Var, Var)>, Var)> {
        let rows = tape.value(z0).rows();
        if key_mask.len() != rows || tape.value(z0).cols() != self.config.dim {
            return Err(Error::ShapeMismatch(format!(
                "encoder input {:?} with mask of {}",
                tape.value(z0).shape(),
                key_mask.len()
            )));
        }
        let rate = if rng.is_some() { self.config.dropout } else { 0.0 };
        let mut z = z0;
        let mut blocks = Vec::with_capacity(self.config.layers);
        for l in 0..self.config.layers {
            match self.config.architecture {
                Architecture::Transformer => {
                    let h = self.norm(tape, z, &format!("blocks.{l}.ln1"))?;
                    let qkv = self.linear(tape, h, &format!("blocks.{l}.attn.qkv"))?;
                    let a = tape.attention(qkv, key_mask, self.config.heads)?;
                    let a = self.linear(tape, a, &format!("blocks.{l}.attn.out"))?;
                    let z_mid = tape.add(z, a)?;
                    let h = self.norm(tape, z_mid, &format!("blocks.{l}.ln2"))?;
                    let h = self.linear(tape, h, &format!("blocks.{l}.mlp.fc1"))?;
                    let h = tape.quick_gelu(h);
                    let h = apply_dropout(tape, h, rate, &mut rng);
                    let h = self.linear(tape, h, &format!("blocks.{l}.mlp.fc2"))?;
                    let h = apply_dropout(tape, h, rate, &mut rng);
                    z = tape.add(z_mid, h)?;
                    blocks.push((z_mid, z));
                }
                Architecture::Mlp => {
                    let h = self.linear(tape, z, &format!("mlp.{l}.fc1"))?;
                    let h = tape.quick_gelu(h);
                    let h = self.linear(tape, h, &format!("mlp.{l}.fc2"))?;
                    let h = self.norm(tape, h, &format!("mlp.{l}.ln"))?;
                    z = apply_dropout(tape, h, rate, &mut rng);
                    blocks.push((z, z));
                }
            }
        }
        let y = match self.config.architecture {
            Architecture::Transformer => self.norm(tape, z, "final_ln")?,
            Architecture::Mlp => z,
        };
        Ok((blocks, y))
    }

    /// Records both heads: room from row 0, regions from rows `1..`.
    pub fn predict_on<'p>(&self, tape: &mut Tape<'p>, y: Var) -> Result<(Var, Var)> {
        let rows = tape.value(y).rows();
        if rows == 0 || tape.value(y).cols() != self.config.dim {
            return Err(Error::ShapeMismatch(format!("head input {:?}", tape.value(y).shape())));
        }
        let cls = tape.slice_rows(y, 0, 1)?;
        let room = self.linear(tape, cls, "head.room")?;
        let objects = tape.slice_rows(y, 1, rows - 1)?;
        let region = self.linear(tape, objects, "head.region")?;
        Ok((room, region))
    }

    /// Full forward pass on `tape`. Dropout is active only when `rng` is given.
    pub fn forward_on<'p>(
        &self,
        tape: &mut Tape<'p>,
        tokens: &TokenizedScene,
        rng: Option<&mut dyn RngCore>,
    ) -> Result<ForwardVars> {
        let z0 = self.embed_on(tape, tokens)?;
        let (blocks, y) = self.encode_on(tape, z0, &Self::key_mask(tokens), rng)?;
        let (room_logits, region_logits) = self.predict_on(tape, y)?;
        Ok(ForwardVars { z0, blocks, y, room_logits, region_logits })
    }

    fn prediction_set(tape: &Tape<'_>, vars: &ForwardVars, mask: &[bool]) -> PredictionSet {
        PredictionSet {
            room_logits: tape.value(vars.room_logits).data().to_vec(),
            region_logits: tape.value(vars.region_logits).clone(),
            mask: mask.to_vec(),
        }
    }

    /// Inference (dropout off).
    pub fn forward(&self, tokens: &TokenizedScene) -> Result<PredictionSet> {
        let mut tape = Tape::new(&self.params);
        let vars = self.forward_on(&mut tape, tokens, None)?;
        Ok(Self::prediction_set(&tape, &vars, &tokens.attention_mask))
    }

    /// Inference that also returns every intermediate activation.
    pub fn trace(&self, tokens: &TokenizedScene) -> Result<(PredictionSet, ActivationState)> {
        let mut tape = Tape::new(&self.params);
        let vars = self.forward_on(&mut tape, tokens, None)?;
        let state = ActivationState {
            z0: tape.value(vars.z0).clone(),
            blocks: vars.blocks.iter().map(|(a, b)| (tape.value(*a).clone(), tape.value(*b).clone())).collect(),
            y: tape.value(vars.y).clone(),
        };
        Ok((Self::prediction_set(&tape, &vars, &tokens.attention_mask), state))
    }

    /// `z0` for `tokens`, shape `[slots + 1, dim]`.
    pub fn embed(&self, tokens: &TokenizedScene) -> Result<Tensor> {
        let mut tape = Tape::new(&self.params);
        let z0 = self.embed_on(&mut tape, tokens)?;
        Ok(tape.value(z0).clone())
    }

    /// Encoder output `y` for a given `z0` and key mask (dropout off).
    pub fn encode(&self, z0: &Tensor, key_mask: &[bool]) -> Result<Tensor> {
        let mut tape = Tape::new(&self.params);
        let z = tape.constant(z0.clone());
        let (_, y) = self.encode_on(&mut tape, z, key_mask, None)?;
        Ok(tape.value(y).clone())
    }

    /// Heads applied to an encoder output; `mask` covers the object rows.
    pub fn predict(&self, y: &Tensor, mask: &[bool]) -> Result<PredictionSet> {
        if mask.len() + 1 != y.rows() {
            return Err(Error::LengthMismatch { expected: y.rows().saturating_sub(1), actual: mask.len() });
        }
        let mut tape = Tape::new(&self.params);
        let yv = tape.constant(y.clone());
        let (room, region) = self.predict_on(&mut tape, yv)?;
        Ok(PredictionSet {
            room_logits: tape.value(room).data().to_vec(),
            region_logits: tape.value(region).clone(),
            mask: mask.to_vec(),
        })
    }
}

fn apply_dropout<'p>(tape: &mut Tape<'p>, x: Var, rate: f64, rng: &mut Option<&mut dyn RngCore>) -> Var {
    match rng {
        Some(r) if rate > 0.0 => tape.dropout(x, rate, &mut **r),
        _ => x,
    }
}
