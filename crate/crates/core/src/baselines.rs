//! Non-neural region baselines (TF-IDF and Neighbor-Vote), the per-token MLP
//! baseline, and a common predictor interface for scoring any of them.
//!
//! TF-IDF treats each object label as a document whose terms are the region
//! affordances that label was annotated with across the training set.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::Aabb;
use crate::math;
use crate::metrics::{ConfusionMatrix, MetricsReport};
use crate::model::{Architecture, Model, PredictionSet};
use crate::scene::{ClassIndex, SceneRecord, TokenizedScene};
use crate::train::{decode, Checkpoint};

/// What to do with a label that never occurred in training.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum UnknownLabelPolicy {
    #[default]
    Error,
    /// Score as if the label's document held every affordance once.
    UniformPrior,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TfidfModel {
    /// Term order; ties in argmax go to the lower index.
    pub affordances: Vec<String>,
    /// Label → affordance counts (the document).
    pub counts: BTreeMap<String, Vec<u64>>,
    /// Label → TF-IDF score per affordance.
    pub scores: BTreeMap<String, Vec<f64>>,
    pub idf: Vec<f64>,
    #[serde(default)]
    pub unknown: UnknownLabelPolicy,
}

/// Fits over the affordances that occur in `scenes`, in sorted order.
pub fn fit_tfidf(scenes: &[SceneRecord]) -> Result<TfidfModel> {
    let classes = crate::scene::region_classes(scenes);
    fit_tfidf_with_classes(scenes, &classes)
}

/// Fits with an explicit affordance order.
pub fn fit_tfidf_with_classes(scenes: &[SceneRecord], classes: &ClassIndex) -> Result<TfidfModel> {
    let k = classes.len();
    let mut counts: BTreeMap<String, Vec<u64>> = BTreeMap::new();
    for o in scenes.iter().flat_map(|s| &s.objects) {
        let t = classes.require(&o.region_affordance)?;
        counts.entry(o.label.clone()).or_insert_with(|| vec![0; k])[t] += 1;
    }
    if counts.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    let n_docs = counts.len() as f64;
    let idf: Vec<f64> = (0..k)
        .map(|t| {
            let df = counts.values().filter(|c| c[t] > 0).count() as f64;
            math::ln((1.0 + n_docs) / (1.0 + df)) + 1.0
        })
        .collect();
    let scores = counts
        .iter()
        .map(|(label, c)| {
            let len: u64 = c.iter().sum();
            let row = c.iter().zip(&idf).map(|(&n, w)| n as f64 / len as f64 * w).collect();
            (label.clone(), row)
        })
        .collect();
    Ok(TfidfModel { affordances: classes.names().to_vec(), counts, scores, idf, unknown: UnknownLabelPolicy::Error })
}

impl TfidfModel {
    pub fn with_unknown_policy(mut self, policy: UnknownLabelPolicy) -> Self {
        self.unknown = policy;
        self
    }

    /// Score vector for `label`.
    pub fn scores_for(&self, label: &str) -> Result<Vec<f64>> {
        match (self.scores.get(label), self.unknown) {
            (Some(s), _) => Ok(s.clone()),
            (None, UnknownLabelPolicy::UniformPrior) => {
                let k = self.affordances.len() as f64;
                Ok(self.idf.iter().map(|w| w / k).collect())
            }
            (None, UnknownLabelPolicy::Error) => Err(Error::UnknownLabel(label.into())),
        }
    }
}

/// Affordance index with the highest score for `label`.
pub fn predict_tfidf(model: &TfidfModel, label: &str) -> Result<usize> {
    Ok(math::argmax(&model.scores_for(label)?))
}

/// Closed-interval overlap on all three axes.
pub fn aabb_overlap(a: &Aabb, b: &Aabb) -> bool {
    a.overlaps(b)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NeighborVoteConfig {
    pub alpha: f64,
}

impl Default for NeighborVoteConfig {
    fn default() -> Self {
        Self { alpha: 0.8 }
    }
}

/// Per-object blended scores `α·own + (1−α)·mean(neighbors)`; objects
/// without overlapping neighbors keep their own scores.
pub fn neighbor_vote_scores(model: &TfidfModel, scene: &SceneRecord, cfg: &NeighborVoteConfig) -> Result<Vec<Vec<f64>>> {
    if !(0.0..=1.0).contains(&cfg.alpha) {
        return Err(Error::InvalidConfig(format!("alpha {} outside [0, 1]", cfg.alpha)));
    }
    let own: Vec<Vec<f64>> = scene.objects.iter().map(|o| model.scores_for(&o.label)).collect::<Result<_>>()?;
    let k = model.affordances.len();
    let mut out = Vec::with_capacity(own.len());
    for (i, o) in scene.objects.iter().enumerate() {
        let neighbors: Vec<usize> =
            (0..scene.objects.len()).filter(|&j| j != i && aabb_overlap(&o.aabb, &scene.objects[j].aabb)).collect();
        if neighbors.is_empty() {
            out.push(own[i].clone());
            continue;
        }
        let mut mean = vec![0.0; k];
        for &j in &neighbors {
            for (m, s) in mean.iter_mut().zip(&own[j]) {
                *m += s;
            }
        }
        let n = neighbors.len() as f64;
        out.push(own[i].iter().zip(&mean).map(|(s, m)| cfg.alpha * s + (1.0 - cfg.alpha) * (m / n)).collect());
    }
    Ok(out)
}

pub fn predict_neighbor_vote(model: &TfidfModel, scene: &SceneRecord, cfg: &NeighborVoteConfig) -> Result<Vec<usize>> {
    Ok(neighbor_vote_scores(model, scene, cfg)?.iter().map(|s| math::argmax(s)).collect())
}

/// Forward pass of a model built with [`Architecture::Mlp`].
pub fn mlp_baseline_forward(model: &Model, tokens: &TokenizedScene) -> Result<PredictionSet> {
    if model.config().architecture != Architecture::Mlp {
        return Err(Error::InvalidConfig("model is not an MLP baseline".into()));
    }
    model.forward(tokens)
}

/// Predicted room (if the predictor makes one) and one region affordance
/// per object, by name.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenePrediction {
    pub room: Option<String>,
    pub regions: Vec<String>,
}

pub trait ScenePredictor {
    fn predict_scene(&self, scene: &SceneRecord) -> Result<ScenePrediction>;
}

impl ScenePredictor for TfidfModel {
    fn predict_scene(&self, scene: &SceneRecord) -> Result<ScenePrediction> {
        let regions = scene
            .objects
            .iter()
            .map(|o| predict_tfidf(self, &o.label).map(|c| self.affordances[c].clone()))
            .collect::<Result<_>>()?;
        Ok(ScenePrediction { room: None, regions })
    }
}

/// TF-IDF with neighbor blending.
pub struct NeighborVote<'a> {
    pub model: &'a TfidfModel,
    pub config: NeighborVoteConfig,
}

impl ScenePredictor for NeighborVote<'_> {
    fn predict_scene(&self, scene: &SceneRecord) -> Result<ScenePrediction> {
        let regions =
            predict_neighbor_vote(self.model, scene, &self.config)?.into_iter().map(|c| self.model.affordances[c].clone()).collect();
        Ok(ScenePrediction { room: None, regions })
    }
}

impl ScenePredictor for Checkpoint {
    fn predict_scene(&self, scene: &SceneRecord) -> Result<ScenePrediction> {
        let tokens = self.tokenize_unlabeled(scene)?;
        let (room, regions) = decode(self, &self.model.forward(&tokens)?);
        Ok(ScenePrediction { room: Some(room), regions: regions.into_iter().flatten().collect() })
    }
}

/// Room and region reports for any predictor; the room report is absent
/// when the predictor makes no room predictions.
pub fn score_predictor(
    predictor: &dyn ScenePredictor,
    scenes: &[SceneRecord],
    rooms: &ClassIndex,
    regions: &ClassIndex,
) -> Result<(Option<MetricsReport>, MetricsReport)> {
    let mut room_cm = ConfusionMatrix::new(rooms.len());
    let mut region_cm = ConfusionMatrix::new(regions.len());
    let mut any_room = false;
    for scene in scenes {
        let p = predictor.predict_scene(scene)?;
        if p.regions.len() != scene.objects.len() {
            return Err(Error::LengthMismatch { expected: scene.objects.len(), actual: p.regions.len() });
        }
        if let Some(room) = &p.room {
            room_cm.accumulate(rooms.require(&scene.room_type)?, rooms.require(room)?)?;
            any_room = true;
        }
        for (o, r) in scene.objects.iter().zip(&p.regions) {
            region_cm.accumulate(regions.require(&o.region_affordance)?, regions.require(r)?)?;
        }
    }
    let room = if any_room { Some(MetricsReport::from_confusion("room", &room_cm, rooms.names())?) } else { None };
    Ok((room, MetricsReport::from_confusion("region", &region_cm, regions.names())?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::Vec3;
    use crate::scene::SceneObject;

    fn scene(objs: &[(&str, &str)]) -> SceneRecord {
        SceneRecord {
            scan_id: "t".into(),
            room_type: "r".into(),
            objects: objs
                .iter()
                .enumerate()
                .map(|(i, (l, a))| SceneObject::at(i as u64, l, Vec3::new(10.0 * i as f64, 0.0, 0.0), a))
                .collect(),
        }
    }

    #[test]
    fn single_label_single_affordance() {
        let m = fit_tfidf(&[scene(&[("cup", "A")])]).unwrap();
        assert!(m.scores["cup"][0] > 0.0);
        assert_eq!(predict_tfidf(&m, "cup").unwrap(), 0);
    }

    #[test]
    fn term_frequencies() {
        let corpus = [scene(&[("cup", "A"), ("cup", "A"), ("cup", "B")])];
        let m = fit_tfidf(&corpus).unwrap();
        assert_eq!(m.counts["cup"], vec![2, 1]);
        // one document containing both terms: idf = ln(2/2) + 1 = 1
        assert!((m.scores["cup"][0] - 2.0 / 3.0).abs() < 1e-15);
        assert!((m.scores["cup"][1] - 1.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn ties_go_to_lower_index() {
        let m = fit_tfidf(&[scene(&[("cup", "A"), ("cup", "B")])]).unwrap();
        assert_eq!(predict_tfidf(&m, "cup").unwrap(), 0);
    }

    #[test]
    fn unknown_label_policy() {
        let m = fit_tfidf(&[scene(&[("cup", "A"), ("pan", "B")])]).unwrap();
        assert!(matches!(predict_tfidf(&m, "sofa"), Err(Error::UnknownLabel(_))));
        let m = m.with_unknown_policy(UnknownLabelPolicy::UniformPrior);
        let s = m.scores_for("sofa").unwrap();
        assert_eq!(s.len(), 2);
        assert!(s.iter().all(|v| *v > 0.0));
    }

    #[test]
    fn empty_corpus() {
        assert!(matches!(fit_tfidf(&[]), Err(Error::EmptyCorpus)));
    }

    #[test]
    fn overlap_rules() {
        let a = Aabb::new(Vec3::ZERO, Vec3::new(1.0, 1.0, 1.0)).unwrap();
        let touching = Aabb::new(Vec3::new(1.0, 0.0, 0.0), Vec3::new(2.0, 1.0, 1.0)).unwrap();
        let apart = Aabb::new(Vec3::new(1.5, 0.0, 0.0), Vec3::new(2.0, 1.0, 1.0)).unwrap();
        assert!(aabb_overlap(&a, &a));
        assert!(aabb_overlap(&a, &touching) && aabb_overlap(&touching, &a));
        assert!(!aabb_overlap(&a, &apart));
    }

    #[test]
    fn isolated_objects_match_plain_tfidf() {
        let corpus = [scene(&[("cup", "A"), ("pan", "B"), ("cup", "B"), ("pan", "B")])];
        let m = fit_tfidf(&corpus).unwrap();
        let s = &corpus[0];
        let plain: Vec<usize> = s.objects.iter().map(|o| predict_tfidf(&m, &o.label).unwrap()).collect();
        assert_eq!(predict_neighbor_vote(&m, s, &NeighborVoteConfig::default()).unwrap(), plain);
    }

    #[test]
    fn alpha_out_of_range() {
        let corpus = [scene(&[("cup", "A")])];
        let m = fit_tfidf(&corpus).unwrap();
        assert!(predict_neighbor_vote(&m, &corpus[0], &NeighborVoteConfig { alpha: 1.5 }).is_err());
    }

    #[test]
    fn mlp_forward_rejects_transformer() {
        use crate::model::ModelConfig;
        let cfg = ModelConfig { dim: 8, layers: 1, heads: 2, vocab_size: 3, n_room_classes: 2, n_region_classes: 2, max_objects: 4, ..ModelConfig::default() };
        let m = Model::new(cfg).unwrap();
        let t = TokenizedScene {
            token_ids: vec![0],
            distances: vec![0.0],
            attention_mask: vec![true],
            region_targets: vec![0],
            room_target: Some(0),
            n_objects: 1,
        };
        assert!(mlp_baseline_forward(&m, &t).is_err());
    }
}
