//! Multi-task training: adaptive λ weighting of the room and region losses,
//! plain SGD, epoch scheduling, and evaluation.

use alloc::string::ToString;

use alloc::vec::Vec;
#[cfg(test)]
use alloc::vec;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::{ConfusionMatrix, MetricsReport};
use crate::model::{Model, ModelConfig, PredictionSet};
use crate::scene::{self, ClassIndex, LabelVocab, SceneRecord, TokenizedScene};
use crate::tensor::softmax_cross_entropy;
use crate::tensor::{Gradients, ParamId, ParamStore, Tape, Var};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StopTarget {
    pub room_accuracy: f64,
    pub region_accuracy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub base_lr: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub dropout: bool,
    /// Stop once test accuracy reaches both targets.
    pub stop_at: Option<StopTarget>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self { base_lr: 1e-3, epochs: 500, batch_size: 8, seed: 0, dropout: true, stop_at: None }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.base_lr > 0.0 && self.base_lr.is_finite()) {
            return Err(Error::InvalidConfig("base_lr must be positive".into()));
        }
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::InvalidConfig("epochs and batch_size must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub l_room: f64,
    pub l_region: f64,
    pub lambda: f64,
    pub total: f64,
}

/// `L_room / (L_room + L_region)`, with 0/0 defined as 0.5.
pub fn lambda(l_room: f64, l_region: f64) -> f64 {
    let sum = l_room + l_region;
    if sum == 0.0 {
        0.5
    } else {
        l_room / sum
    }
}

pub fn combine(l_room: f64, l_region: f64) -> LossBreakdown {
    let lambda = lambda(l_room, l_region);
    LossBreakdown { l_room, l_region, lambda, total: lambda * l_room + (1.0 - lambda) * l_region }
}

fn region_target_options(targets: &[i64]) -> Vec<Option<usize>> {
    targets.iter().map(|&t| usize::try_from(t).ok()).collect()
}

/// Loss of one scene's predictions. A missing room target or an all-padding
/// region list contributes zero to its term.
pub fn multitask_loss(pred: &PredictionSet, room_target: Option<usize>, region_targets: &[i64]) -> Result<LossBreakdown> {
    let rows = pred.region_logits.rows();
    if region_targets.len() != rows {
        return Err(Error::LengthMismatch { expected: rows, actual: region_targets.len() });
    }
    let l_room = match room_target {
        Some(t) => softmax_cross_entropy(&pred.room_logits, t)?.0,
        None => 0.0,
    };
    let mut sum = 0.0;
    let mut n = 0usize;
    for (i, t) in region_target_options(region_targets).into_iter().enumerate() {
        if let Some(t) = t.filter(|_| pred.mask.get(i).copied().unwrap_or(false)) {
            sum += softmax_cross_entropy(pred.region_logits.row(i), t)?.0;
            n += 1;
        }
    }
    if room_target.is_none() && n == 0 {
        return Err(Error::NoValidTargets);
    }
    Ok(combine(l_room, if n == 0 { 0.0 } else { sum / n as f64 }))
}

/// `θ ← θ − lr·g` for every parameter, in store order.
pub fn sgd_step(params: &mut ParamStore, grads: &Gradients, lr: f64) -> Result<()> {
    if grads.len() != params.len() {
        return Err(Error::ShapeMismatch("gradient count differs from parameter count".into()));
    }
    for i in 0..params.len() {
        let id = ParamId(i);
        let g = grads.get(id);
        let p = params.tensor_mut(id);
        if p.shape() != g.shape() {
            return Err(Error::ShapeMismatch(alloc::format!("gradient shape {:?} vs {:?}", g.shape(), p.shape())));
        }
        for (v, d) in p.data_mut().iter_mut().zip(g.data()) {
            *v -= lr * d;
        }
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskScores {
    pub room_accuracy: f64,
    pub room_miou: f64,
    pub region_accuracy: f64,
    pub region_miou: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Means over batches.
    pub train_loss: LossBreakdown,
    /// λ of every batch, in order.
    pub lambdas: Vec<f64>,
    /// Scored from the predictions made during the epoch's updates.
    pub train: TaskScores,
    pub test_loss: Option<LossBreakdown>,
    pub test: Option<TaskScores>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainHistory {
    pub epochs: Vec<EpochRecord>,
    /// Epoch (1-based) whose parameters were kept.
    pub best_epoch: usize,
}

/// A trained model together with the label and class spaces it was fit on.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub model: Model,
    pub vocab: LabelVocab,
    pub room_classes: ClassIndex,
    pub region_classes: ClassIndex,
}

impl Checkpoint {
    /// Tokenizes `scene` in this checkpoint's spaces; unknown labels or
    /// classes become [`Error::VocabMismatch`].
    pub fn tokenize(&self, scene: &SceneRecord) -> Result<TokenizedScene> {
        scene::tokenize_scene(scene, &self.vocab, &self.room_classes, &self.region_classes, self.model.config().max_objects)
            .map_err(vocab_mismatch)
    }

    pub fn tokenize_unlabeled(&self, scene: &SceneRecord) -> Result<TokenizedScene> {
        scene::tokenize_unlabeled(scene, &self.vocab, self.model.config().max_objects).map_err(vocab_mismatch)
    }
}

fn vocab_mismatch(e: Error) -> Error {
    match e {
        Error::UnknownLabel(s) => Error::VocabMismatch(alloc::format!("label {s:?} not in vocabulary")),
        Error::UnknownClass(s) => Error::VocabMismatch(alloc::format!("class {s:?} not in checkpoint")),
        other => other,
    }
}

/// Label and class spaces plus tokenized splits.
#[derive(Debug, Clone)]
pub struct Prepared {
    pub model_config: ModelConfig,
    pub vocab: LabelVocab,
    pub room_classes: ClassIndex,
    pub region_classes: ClassIndex,
    pub train: Vec<TokenizedScene>,
    pub test: Vec<TokenizedScene>,
}

/// Builds vocabulary and class spaces over both splits, sizes the model
/// config to them, and tokenizes.
pub fn prepare(train: &[SceneRecord], test: &[SceneRecord], model_cfg: &ModelConfig) -> Result<Prepared> {
    if train.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    let all: Vec<SceneRecord> = train.iter().chain(test).cloned().collect();
    let vocab = scene::build_vocab(&all)?;
    let room_classes = scene::room_classes(&all);
    let region_classes = scene::region_classes(&all);
    let mut model_config = model_cfg.clone();
    model_config.vocab_size = vocab.size();
    model_config.n_room_classes = room_classes.len();
    model_config.n_region_classes = region_classes.len();
    let tok = |s: &SceneRecord| scene::tokenize_scene(s, &vocab, &room_classes, &region_classes, model_config.max_objects);
    let train = train.iter().map(tok).collect::<Result<Vec<_>>>()?;
    let test = test.iter().map(tok).collect::<Result<Vec<_>>>()?;
    Ok(Prepared { model_config, vocab, room_classes, region_classes, train, test })
}

/// Result of scoring a model on tokenized scenes.
#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    pub loss: LossBreakdown,
    pub room: ConfusionMatrix,
    pub region: ConfusionMatrix,
    /// Per-scene region matrices, for macro averaging.
    pub region_per_scene: Vec<ConfusionMatrix>,
}

impl Evaluation {
    pub fn scores(&self) -> TaskScores {
        TaskScores {
            room_accuracy: self.room.accuracy().unwrap_or(0.0),
            room_miou: self.room.miou().unwrap_or(0.0),
            region_accuracy: self.region.accuracy().unwrap_or(0.0),
            region_miou: self.region.miou().unwrap_or(0.0),
        }
    }

    pub fn reports(&self, rooms: &ClassIndex, regions: &ClassIndex) -> Result<(MetricsReport, MetricsReport)> {
        Ok((
            MetricsReport::from_confusion("room", &self.room, rooms.names())?,
            MetricsReport::from_confusion("region", &self.region, regions.names())?,
        ))
    }
}

struct Scorer {
    room: ConfusionMatrix,
    region: ConfusionMatrix,
    region_per_scene: Vec<ConfusionMatrix>,
}

impl Scorer {
    fn new(n_room: usize, n_region: usize) -> Self {
        Self { room: ConfusionMatrix::new(n_room), region: ConfusionMatrix::new(n_region), region_per_scene: Vec::new() }
    }

    fn add(&mut self, pred: &PredictionSet, tokens: &TokenizedScene) -> Result<()> {
        if let Some(t) = tokens.room_target {
            self.room.accumulate(t, pred.room_class())?;
        }
        let mut scene_cm = ConfusionMatrix::new(self.region.classes());
        for (t, p) in region_target_options(&tokens.region_targets).into_iter().zip(pred.region_classes()) {
            if let (Some(t), Some(p)) = (t, p) {
                scene_cm.accumulate(t, p)?;
            }
        }
        self.region.merge(&scene_cm)?;
        self.region_per_scene.push(scene_cm);
        Ok(())
    }
}

struct LossMeans {
    room: (f64, usize),
    region: (f64, usize),
}

impl LossMeans {
    fn new() -> Self {
        Self { room: (0.0, 0), region: (0.0, 0) }
    }

    fn room(&self) -> f64 {
        if self.room.1 == 0 { 0.0 } else { self.room.0 / self.room.1 as f64 }
    }

    fn region(&self) -> f64 {
        if self.region.1 == 0 { 0.0 } else { self.region.0 / self.region.1 as f64 }
    }
}

/// Scores `model` with dropout off; the loss is λ-combined from the mean
/// room and region losses over all scenes.
pub fn evaluate(model: &Model, scenes: &[TokenizedScene]) -> Result<Evaluation> {
    let cfg = model.config();
    let mut scorer = Scorer::new(cfg.n_room_classes, cfg.n_region_classes);
    let mut means = LossMeans::new();
    for tokens in scenes {
        let tokens = tokens.trimmed();
        let pred = model.forward(&tokens)?;
        scorer.add(&pred, &tokens)?;
        if let Ok(l) = multitask_loss(&pred, tokens.room_target, &tokens.region_targets) {
            if tokens.room_target.is_some() {
                means.room.0 += l.l_room;
                means.room.1 += 1;
            }
            if tokens.region_targets.iter().any(|&t| t >= 0) {
                means.region.0 += l.l_region;
                means.region.1 += 1;
            }
        }
    }
    Ok(Evaluation {
        loss: combine(means.room(), means.region()),
        room: scorer.room,
        region: scorer.region,
        region_per_scene: scorer.region_per_scene,
    })
}

/// Scores a checkpoint on raw scenes.
pub fn evaluate_scenes(checkpoint: &Checkpoint, scenes: &[SceneRecord]) -> Result<Evaluation> {
    let tokens = scenes.iter().map(|s| checkpoint.tokenize(s)).collect::<Result<Vec<_>>>()?;
    evaluate(&checkpoint.model, &tokens)
}

struct SceneTape<'p> {
    tape: Tape<'p>,
    room: Option<Var>,
    region: Option<Var>,
}

/// One pass over `batch`: forward every scene, fix λ from the batch-mean
/// losses, then backpropagate `λ·L_room + (1−λ)·L_region` averaged over
/// the batch and take an SGD step.
fn train_batch(
    model: &mut Model,
    batch: &[&TokenizedScene],
    lr: f64,
    dropout_rng: Option<&mut ChaCha8Rng>,
    scorer: &mut Scorer,
) -> Result<LossBreakdown> {
    let mut grads = model.params().zero_grads();
    let breakdown = {
        let model_ref: &Model = model;
        let mut rng = dropout_rng;
        let mut tapes = Vec::with_capacity(batch.len());
        let mut means = LossMeans::new();
        for tokens in batch {
            let mut tape = Tape::new(model_ref.params());
            let r: Option<&mut dyn rand::RngCore> = match rng.as_mut() {
                Some(r) => Some(&mut **r),
                None => None,
            };
            let vars = model_ref.forward_on(&mut tape, tokens, r)?;
            let pred = PredictionSet {
                room_logits: tape.value(vars.room_logits).data().to_vec(),
                region_logits: tape.value(vars.region_logits).clone(),
                mask: tokens.attention_mask.clone(),
            };
            scorer.add(&pred, tokens)?;
            let room = match tokens.room_target {
                Some(t) => Some(tape.cross_entropy(vars.room_logits, &[Some(t)])?),
                None => None,
            };
            let targets = region_target_options(&tokens.region_targets);
            let region = match tape.cross_entropy(vars.region_logits, &targets) {
                Ok(v) => Some(v),
                Err(Error::NoValidTargets) => None,
                Err(e) => return Err(e),
            };
            if let Some(v) = room {
                means.room.0 += tape.scalar(v);
                means.room.1 += 1;
            }
            if let Some(v) = region {
                means.region.0 += tape.scalar(v);
                means.region.1 += 1;
            }
            tapes.push(SceneTape { tape, room, region });
        }
        if means.room.1 == 0 && means.region.1 == 0 {
            return Err(Error::NoValidTargets);
        }
        let breakdown = combine(means.room(), means.region());
        let w_room = if means.room.1 > 0 { breakdown.lambda / means.room.1 as f64 } else { 0.0 };
        let w_region = if means.region.1 > 0 { (1.0 - breakdown.lambda) / means.region.1 as f64 } else { 0.0 };
        for st in &mut tapes {
            let total = match (st.room, st.region) {
                (Some(r), Some(g)) => {
                    let r = st.tape.scale(r, w_room);
                    let g = st.tape.scale(g, w_region);
                    st.tape.add(r, g)?
                }
                (Some(r), None) => st.tape.scale(r, w_room),
                (None, Some(g)) => st.tape.scale(g, w_region),
                (None, None) => continue,
            };
            st.tape.backward_into(total, 1.0, &mut grads)?;
        }
        breakdown
    };
    sgd_step(model.params_mut(), &grads, lr)?;
    Ok(breakdown)
}

fn mean_breakdown(items: &[LossBreakdown]) -> LossBreakdown {
    let n = items.len().max(1) as f64;
    let sum = |f: fn(&LossBreakdown) -> f64| items.iter().map(f).sum::<f64>() / n;
    LossBreakdown { l_room: sum(|b| b.l_room), l_region: sum(|b| b.l_region), lambda: sum(|b| b.lambda), total: sum(|b| b.total) }
}

/// Trains `model` in place and returns the parameters of the epoch with the
/// lowest test total (train total when there is no test set).
pub fn train_model(
    model: Model,
    train: &[TokenizedScene],
    test: &[TokenizedScene],
    cfg: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochRecord),
) -> Result<(Model, TrainHistory)> {
    cfg.validate()?;
    if train.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    let mut model = model;
    let train: Vec<TokenizedScene> = train.iter().map(TokenizedScene::trimmed).collect();
    let test: Vec<TokenizedScene> = test.iter().map(TokenizedScene::trimmed).collect();
    let mut order_rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut dropout_rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    dropout_rng.set_stream(1);
    let use_dropout = cfg.dropout && model.config().dropout > 0.0;
    let (n_room, n_region) = (model.config().n_room_classes, model.config().n_region_classes);

    let mut history = TrainHistory::default();
    let mut best: Option<(f64, Model)> = None;
    let mut order: Vec<usize> = (0..train.len()).collect();
    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut order_rng);
        let mut scorer = Scorer::new(n_room, n_region);
        let mut batches = Vec::new();
        for chunk in order.chunks(cfg.batch_size) {
            let batch: Vec<&TokenizedScene> = chunk.iter().map(|&i| &train[i]).collect();
            let rng = if use_dropout { Some(&mut dropout_rng) } else { None };
            batches.push(train_batch(&mut model, &batch, cfg.base_lr, rng, &mut scorer)?);
        }
        let train_scores = Evaluation {
            loss: mean_breakdown(&batches),
            room: scorer.room,
            region: scorer.region,
            region_per_scene: Vec::new(),
        }
        .scores();
        let test_eval = if test.is_empty() { None } else { Some(evaluate(&model, &test)?) };
        let record = EpochRecord {
            epoch,
            train_loss: mean_breakdown(&batches),
            lambdas: batches.iter().map(|b| b.lambda).collect(),
            train: train_scores,
            test_loss: test_eval.as_ref().map(|e| e.loss),
            test: test_eval.as_ref().map(Evaluation::scores),
        };
        let score = record.test_loss.unwrap_or(record.train_loss).total;
        if !score.is_finite() {
            return Err(Error::NonFinite);
        }
        if best.as_ref().is_none_or(|(b, _)| score < *b) {
            best = Some((score, model.clone()));
            history.best_epoch = epoch;
        }
        on_epoch(&record);
        let stop = match (cfg.stop_at, &record.test) {
            (Some(t), Some(s)) => s.room_accuracy >= t.room_accuracy && s.region_accuracy >= t.region_accuracy,
            _ => false,
        };
        history.epochs.push(record);
        if stop {
            break;
        }
    }
    let (_, best) = best.expect("at least one epoch ran");
    Ok((best, history))
}

/// Prepares spaces, initializes a model, and trains it.
pub fn fit(
    train: &[SceneRecord],
    test: &[SceneRecord],
    model_cfg: &ModelConfig,
    train_cfg: &TrainConfig,
) -> Result<(Checkpoint, TrainHistory)> {
    fit_with(train, test, model_cfg, train_cfg, |_| {})
}

pub fn fit_with(
    train: &[SceneRecord],
    test: &[SceneRecord],
    model_cfg: &ModelConfig,
    train_cfg: &TrainConfig,
    on_epoch: impl FnMut(&EpochRecord),
) -> Result<(Checkpoint, TrainHistory)> {
    let prepared = prepare(train, test, model_cfg)?;
    let model = Model::new(prepared.model_config.clone())?;
    let (model, history) = train_model(model, &prepared.train, &prepared.test, train_cfg, on_epoch)?;
    Ok((
        Checkpoint { model, vocab: prepared.vocab, room_classes: prepared.room_classes, region_classes: prepared.region_classes },
        history,
    ))
}

/// Which label each object is assigned, by name.
pub fn decode(checkpoint: &Checkpoint, pred: &PredictionSet) -> (alloc::string::String, Vec<Option<alloc::string::String>>) {
    let room = checkpoint.room_classes.name(pred.room_class()).unwrap_or_default().to_string();
    let regions = pred
        .region_classes()
        .into_iter()
        .map(|p| p.and_then(|c| checkpoint.region_classes.name(c)).map(ToString::to_string))
        .collect();
    (room, regions)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::{generate_corpus, SynthConfig};
    use crate::tensor::Tensor;

    #[test]
    fn lambda_arithmetic() {
        let b = combine(2.0, 2.0);
        assert_eq!((b.lambda, b.total), (0.5, 2.0));
        let b = combine(3.0, 1.0);
        assert_eq!((b.lambda, b.total), (0.75, 2.5));
        let b = combine(1.7, 0.0);
        assert_eq!((b.lambda, b.total), (1.0, 1.7));
        let b = combine(0.0, 0.0);
        assert_eq!((b.lambda, b.total), (0.5, 0.0));
    }

    #[test]
    fn sgd_step_cases() {
        let mut p = ParamStore::new();
        let id = p.insert("w", Tensor::vector(vec![1.0]).unwrap()).unwrap();
        let g = Gradients::from_tensors(vec![Tensor::vector(vec![0.5]).unwrap()]);
        sgd_step(&mut p, &g, 0.1).unwrap();
        assert!((p.tensor(id).data()[0] - 0.95).abs() < 1e-15);
        let zero = p.zero_grads();
        sgd_step(&mut p, &zero, 0.1).unwrap();
        assert!((p.tensor(id).data()[0] - 0.95).abs() < 1e-15);
        let bad = Gradients::from_tensors(vec![Tensor::vector(vec![0.5, 0.5]).unwrap()]);
        assert!(matches!(sgd_step(&mut p, &bad, 0.1), Err(Error::ShapeMismatch(_))));
    }

    #[test]
    fn multitask_loss_requires_some_target() {
        let pred = PredictionSet {
            room_logits: vec![0.0, 0.0],
            region_logits: Tensor::matrix(1, 2, vec![0.0, 0.0]).unwrap(),
            mask: vec![false],
        };
        assert!(matches!(multitask_loss(&pred, None, &[-1]), Err(Error::NoValidTargets)));
        let l = multitask_loss(&pred, Some(0), &[-1]).unwrap();
        assert!((l.l_room - core::f64::consts::LN_2).abs() < 1e-12);
        assert_eq!((l.l_region, l.lambda), (0.0, 1.0));
    }

    fn tiny_model_cfg() -> ModelConfig {
        ModelConfig { dim: 16, layers: 1, heads: 2, dropout: 0.0, max_objects: 64, ..ModelConfig::default() }
    }

    #[test]
    fn one_epoch_on_one_scene_reduces_loss() {
        let scenes = generate_corpus(&SynthConfig::default(), 1).unwrap();
        let p = prepare(&scenes, &[], &tiny_model_cfg()).unwrap();
        let model = Model::new(p.model_config.clone()).unwrap();
        let before = evaluate(&model, &p.train).unwrap().loss.total;
        let cfg = TrainConfig { base_lr: 0.01, epochs: 1, batch_size: 1, ..TrainConfig::default() };
        let (trained, _) = train_model(model, &p.train, &[], &cfg, |_| {}).unwrap();
        let after = evaluate(&trained, &p.train).unwrap().loss.total;
        assert!(after < before, "{after} !< {before}");
    }

    #[test]
    fn seeded_runs_are_identical() {
        let scenes = generate_corpus(&SynthConfig::default(), 6).unwrap();
        let cfg = TrainConfig { base_lr: 0.05, epochs: 2, batch_size: 4, ..TrainConfig::default() };
        let mc = ModelConfig { dropout: 0.1, ..tiny_model_cfg() };
        let (a, ha) = fit(&scenes[..4], &scenes[4..], &mc, &cfg).unwrap();
        let (b, hb) = fit(&scenes[..4], &scenes[4..], &mc, &cfg).unwrap();
        assert_eq!(ha, hb);
        assert_eq!(a, b);
        assert_eq!(ha.epochs.len(), 2);
        assert_eq!(ha.epochs[0].lambdas.len(), 1);
    }

    #[test]
    fn batch_gradient_matches_weighted_sum_of_scene_losses() {
        // The two-phase batch update must equal the gradient of
        // λ·mean(L_room) + (1−λ)·mean(L_region) with λ frozen.
        let scenes = generate_corpus(&SynthConfig::default(), 3).unwrap();
        let p = prepare(&scenes, &[], &tiny_model_cfg()).unwrap();
        let model = Model::new(p.model_config.clone()).unwrap();
        let batch: Vec<&TokenizedScene> = p.train.iter().collect();
        let lr = 1.0;
        let mut stepped = model.clone();
        let mut scorer = Scorer::new(p.room_classes.len(), p.region_classes.len());
        let b = train_batch(&mut stepped, &batch, lr, None, &mut scorer).unwrap();

        let mut expected = model.params().zero_grads();
        for t in &batch {
            let mut tape = Tape::new(model.params());
            let v = model.forward_on(&mut tape, t, None).unwrap();
            let r = tape.cross_entropy(v.room_logits, &[t.room_target]).unwrap();
            let g = tape.cross_entropy(v.region_logits, &region_target_options(&t.region_targets)).unwrap();
            tape.backward_into(r, b.lambda / 3.0, &mut expected).unwrap();
            tape.backward_into(g, (1.0 - b.lambda) / 3.0, &mut expected).unwrap();
        }
        for i in 0..model.params().len() {
            let id = ParamId(i);
            let before = model.params().tensor(id).data();
            let after = stepped.params().tensor(id).data();
            for ((a, b0), g) in after.iter().zip(before).zip(expected.get(id).data()) {
                assert!((b0 - a - g).abs() < 1e-12);
            }
        }
    }
}
