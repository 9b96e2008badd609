//! Scene records, label vocabularies, tokenization, and dataset splits.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::string::String;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{self, Aabb, Vec3};

/// Labels dropped before learning; these surfaces carry no region annotation.
pub const STRUCTURAL_LABELS: [&str; 3] = ["wall", "floor", "ceiling"];

/// Reserved target for padded slots.
pub const IGNORE_TARGET: i64 = -1;

pub const PAD_LABEL: &str = "<pad>";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneObject {
    pub id: u64,
    pub label: String,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub points: Vec<Vec3>,
    pub centroid: Vec3,
    pub aabb: Aabb,
    pub region_affordance: String,
    pub object_affordance: String,
    #[serde(default)]
    pub common_rooms: Vec<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub attributes: Vec<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub segment_ids: Vec<u64>,
}

impl SceneObject {
    /// An object known only by its centroid.
    pub fn at(id: u64, label: &str, centroid: Vec3, region_affordance: &str) -> Self {
        Self {
            id,
            label: label.into(),
            points: Vec::new(),
            centroid,
            aabb: Aabb::point(centroid),
            region_affordance: region_affordance.into(),
            object_affordance: String::new(),
            common_rooms: Vec::new(),
            attributes: Vec::new(),
            segment_ids: Vec::new(),
        }
    }

    /// An object from its points; centroid and box are derived.
    pub fn from_points(id: u64, label: &str, points: Vec<Vec3>, region_affordance: &str) -> Result<Self> {
        let centroid = geometry::object_centroid(&points)?;
        let aabb = Aabb::from_points(&points)?;
        Ok(Self { points, centroid, aabb, ..Self::at(id, label, centroid, region_affordance) })
    }

    /// Recomputes centroid and box from the points, if there are any.
    pub fn refresh_geometry(&mut self) -> Result<()> {
        if !self.points.is_empty() {
            self.centroid = geometry::object_centroid(&self.points)?;
            self.aabb = Aabb::from_points(&self.points)?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneRecord {
    pub scan_id: String,
    pub room_type: String,
    pub objects: Vec<SceneObject>,
}

impl SceneRecord {
    /// Applies `f` to every point (or to the centroid of point-less objects)
    /// and recomputes the derived geometry.
    pub fn map_points(&self, f: impl Fn(Vec3) -> Vec3) -> Result<SceneRecord> {
        let mut out = self.clone();
        for o in &mut out.objects {
            if o.points.is_empty() {
                o.centroid = f(o.centroid);
                o.aabb = Aabb::point(o.centroid);
            } else {
                for p in &mut o.points {
                    *p = f(*p);
                }
                o.refresh_geometry()?;
            }
        }
        Ok(out)
    }
}

/// Drops objects whose label is in `excluded`, keeping survivor order.
pub fn filter_structural(scene: &SceneRecord, excluded: &[&str]) -> SceneRecord {
    SceneRecord {
        scan_id: scene.scan_id.clone(),
        room_type: scene.room_type.clone(),
        objects: scene
            .objects
            .iter()
            .filter(|o| !excluded.contains(&o.label.as_str()))
            .cloned()
            .collect(),
    }
}

/// Sorted label vocabulary with a trailing PAD index.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(from = "Vec<String>", into = "Vec<String>")]
pub struct LabelVocab {
    labels: Vec<String>,
    index: BTreeMap<String, usize>,
}

impl LabelVocab {
    /// Builds a vocabulary from the given labels (duplicates ignored).
    pub fn from_labels<I, S>(labels: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let set: BTreeSet<String> = labels.into_iter().map(Into::into).collect();
        let labels: Vec<String> = set.into_iter().collect();
        let index = labels.iter().enumerate().map(|(i, l)| (l.clone(), i)).collect();
        Self { labels, index }
    }

    /// Number of entries including PAD.
    pub fn size(&self) -> usize {
        self.labels.len() + 1
    }

    pub fn pad_index(&self) -> usize {
        self.labels.len()
    }

    pub fn get(&self, label: &str) -> Option<usize> {
        self.index.get(label).copied()
    }

    pub fn label(&self, i: usize) -> Option<&str> {
        if i == self.pad_index() {
            Some(PAD_LABEL)
        } else {
            self.labels.get(i).map(String::as_str)
        }
    }

    /// Labels without PAD, in index order.
    pub fn labels(&self) -> &[String] {
        &self.labels
    }
}

impl From<Vec<String>> for LabelVocab {
    fn from(v: Vec<String>) -> Self {
        LabelVocab::from_labels(v)
    }
}

impl From<LabelVocab> for Vec<String> {
    fn from(v: LabelVocab) -> Self {
        v.labels
    }
}

/// Sorted class names for a classification task.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(from = "Vec<String>", into = "Vec<String>")]
pub struct ClassIndex {
    names: Vec<String>,
    index: BTreeMap<String, usize>,
}

impl ClassIndex {
    pub fn from_names<I, S>(names: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let set: BTreeSet<String> = names.into_iter().map(Into::into).collect();
        Self::ordered(set.into_iter().collect())
    }

    /// Keeps the given order; duplicates after the first are dropped.
    pub fn ordered(names: Vec<String>) -> Self {
        let mut index = BTreeMap::new();
        let mut kept = Vec::with_capacity(names.len());
        for n in names {
            if !index.contains_key(&n) {
                index.insert(n.clone(), kept.len());
                kept.push(n);
            }
        }
        Self { names: kept, index }
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn get(&self, name: &str) -> Option<usize> {
        self.index.get(name).copied()
    }

    pub fn require(&self, name: &str) -> Result<usize> {
        self.get(name).ok_or_else(|| Error::UnknownClass(name.into()))
    }

    pub fn name(&self, i: usize) -> Option<&str> {
        self.names.get(i).map(String::as_str)
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }
}

impl From<Vec<String>> for ClassIndex {
    fn from(v: Vec<String>) -> Self {
        ClassIndex::ordered(v)
    }
}

impl From<ClassIndex> for Vec<String> {
    fn from(v: ClassIndex) -> Self {
        v.names
    }
}

/// Vocabulary over every object label in the corpus.
pub fn build_vocab(scenes: &[SceneRecord]) -> Result<LabelVocab> {
    if scenes.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    Ok(LabelVocab::from_labels(scenes.iter().flat_map(|s| s.objects.iter().map(|o| o.label.as_str()))))
}

pub fn room_classes(scenes: &[SceneRecord]) -> ClassIndex {
    ClassIndex::from_names(scenes.iter().map(|s| s.room_type.as_str()))
}

pub fn region_classes(scenes: &[SceneRecord]) -> ClassIndex {
    ClassIndex::from_names(scenes.iter().flat_map(|s| s.objects.iter().map(|o| o.region_affordance.as_str())))
}

/// Fixed-length model input for one scene.
#[derive(Debug, Clone, PartialEq)]
pub struct TokenizedScene {
    pub token_ids: Vec<usize>,
    pub distances: Vec<f64>,
    pub attention_mask: Vec<bool>,
    pub region_targets: Vec<i64>,
    pub room_target: Option<usize>,
    pub n_objects: usize,
}

impl TokenizedScene {
    pub fn max_objects(&self) -> usize {
        self.token_ids.len()
    }

    /// Same scene with padding removed.
    pub fn trimmed(&self) -> TokenizedScene {
        let n = self.n_objects;
        TokenizedScene {
            token_ids: self.token_ids[..n].to_vec(),
            distances: self.distances[..n].to_vec(),
            attention_mask: self.attention_mask[..n].to_vec(),
            region_targets: self.region_targets[..n].to_vec(),
            room_target: self.room_target,
            n_objects: n,
        }
    }

    /// Same scene padded to `n_max` slots with `pad` tokens.
    pub fn padded(&self, n_max: usize, pad: usize) -> Result<TokenizedScene> {
        if self.n_objects > n_max {
            return Err(Error::TooManyObjects { n: self.n_objects, max: n_max });
        }
        let mut t = self.trimmed();
        t.token_ids.resize(n_max, pad);
        t.distances.resize(n_max, 0.0);
        t.attention_mask.resize(n_max, false);
        t.region_targets.resize(n_max, IGNORE_TARGET);
        Ok(t)
    }

    /// Reorders slots: slot `i` of the result is slot `perm[i]` of `self`.
    pub fn permuted(&self, perm: &[usize]) -> TokenizedScene {
        let mut t = self.clone();
        for (i, &p) in perm.iter().enumerate() {
            t.token_ids[i] = self.token_ids[p];
            t.distances[i] = self.distances[p];
            t.attention_mask[i] = self.attention_mask[p];
            t.region_targets[i] = self.region_targets[p];
        }
        t
    }

    /// Valid `(token id, distance)` pairs in slot order.
    pub fn unpadded_pairs(&self) -> Vec<(usize, f64)> {
        (0..self.token_ids.len())
            .filter(|&i| self.attention_mask[i])
            .map(|i| (self.token_ids[i], self.distances[i]))
            .collect()
    }
}

fn tokenize_inner(
    scene: &SceneRecord,
    vocab: &LabelVocab,
    classes: Option<(&ClassIndex, &ClassIndex)>,
    n_max: usize,
) -> Result<TokenizedScene> {
    let n = scene.objects.len();
    if n == 0 {
        return Err(Error::EmptyScene);
    }
    if n > n_max {
        return Err(Error::TooManyObjects { n, max: n_max });
    }
    let mut token_ids = Vec::with_capacity(n_max);
    for o in &scene.objects {
        token_ids.push(vocab.get(&o.label).ok_or_else(|| Error::UnknownLabel(o.label.clone()))?);
    }
    let centroids: Vec<Vec3> = scene.objects.iter().map(|o| o.centroid).collect();
    let (_, mut distances) = geometry::room_centroid_and_distances(&centroids)?;

    let (room_target, mut region_targets) = match classes {
        Some((rooms, regions)) => {
            let room = rooms.require(&scene.room_type)?;
            let targets = scene
                .objects
                .iter()
                .map(|o| regions.require(&o.region_affordance).map(|i| i as i64))
                .collect::<Result<Vec<_>>>()?;
            (Some(room), targets)
        }
        None => (None, alloc::vec![IGNORE_TARGET; n]),
    };

    token_ids.resize(n_max, vocab.pad_index());
    distances.resize(n_max, 0.0);
    region_targets.resize(n_max, IGNORE_TARGET);
    let mut attention_mask = alloc::vec![true; n];
    attention_mask.resize(n_max, false);
    Ok(TokenizedScene { token_ids, distances, attention_mask, region_targets, room_target, n_objects: n })
}

/// Tokenizes an annotated scene into `n_max` slots.
pub fn tokenize_scene(
    scene: &SceneRecord,
    vocab: &LabelVocab,
    room_classes: &ClassIndex,
    region_classes: &ClassIndex,
    n_max: usize,
) -> Result<TokenizedScene> {
    tokenize_inner(scene, vocab, Some((room_classes, region_classes)), n_max)
}

/// Tokenizes a scene for inference; targets are left unset.
pub fn tokenize_unlabeled(scene: &SceneRecord, vocab: &LabelVocab, n_max: usize) -> Result<TokenizedScene> {
    tokenize_inner(scene, vocab, None, n_max)
}

/// Seeded shuffle, then the first `round(fraction * n)` items go to train.
pub fn split_dataset<T: Clone>(items: &[T], train_fraction: f64, seed: u64) -> Result<(Vec<T>, Vec<T>)> {
    if !(train_fraction > 0.0 && train_fraction < 1.0) {
        return Err(Error::InvalidConfig(alloc::format!("train fraction {train_fraction} not in (0, 1)")));
    }
    let mut order: Vec<usize> = (0..items.len()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    order.shuffle(&mut rng);
    let n_train = crate::math::round(train_fraction * items.len() as f64) as usize;
    let train = order[..n_train].iter().map(|&i| items[i].clone()).collect();
    let test = order[n_train..].iter().map(|&i| items[i].clone()).collect();
    Ok((train, test))
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::string::ToString;
    use alloc::vec;

    fn scene(labels: &[&str]) -> SceneRecord {
        SceneRecord {
            scan_id: "s".into(),
            room_type: "bedroom".into(),
            objects: labels
                .iter()
                .enumerate()
                .map(|(i, l)| SceneObject::at(i as u64, l, Vec3::new(i as f64, 0.0, 0.0), "for sleeping"))
                .collect(),
        }
    }

    #[test]
    fn filter_removes_structural() {
        let s = scene(&["bed", "wall", "floor"]);
        let f = filter_structural(&s, &STRUCTURAL_LABELS);
        assert_eq!(f.objects.len(), 1);
        assert_eq!(f.objects[0].label, "bed");
        let s = scene(&["bed", "lamp"]);
        assert_eq!(filter_structural(&s, &STRUCTURAL_LABELS), s);
        assert!(filter_structural(&scene(&["wall", "ceiling"]), &STRUCTURAL_LABELS).objects.is_empty());
    }

    #[test]
    fn vocab_is_sorted_with_pad_last() {
        let v = build_vocab(&[scene(&["chair", "bed", "chair"])]).unwrap();
        assert_eq!(v.get("bed"), Some(0));
        assert_eq!(v.get("chair"), Some(1));
        assert_eq!(v.pad_index(), 2);
        assert_eq!(v.size(), 3);
        let u = build_vocab(&[scene(&["lamp"]), scene(&["bed"])]).unwrap();
        assert_eq!(u.labels(), &["bed".to_string(), "lamp".to_string()]);
        assert_eq!(build_vocab(&[]), Err(Error::EmptyCorpus));
    }

    #[test]
    fn tokenize_pads_and_masks() {
        let s = scene(&["bed", "lamp"]);
        let v = build_vocab(core::slice::from_ref(&s)).unwrap();
        let t = tokenize_scene(&s, &v, &room_classes(core::slice::from_ref(&s)), &region_classes(core::slice::from_ref(&s)), 4).unwrap();
        assert_eq!(t.attention_mask, vec![true, true, false, false]);
        assert_eq!(t.token_ids[2..], [v.pad_index(), v.pad_index()]);
        assert_eq!(t.region_targets, vec![0, 0, -1, -1]);
        assert_eq!(t.distances[2..], [0.0, 0.0]);
        assert_eq!(t.room_target, Some(0));
    }

    #[test]
    fn tokenize_single_object_has_zero_distance() {
        let s = scene(&["bed"]);
        let v = build_vocab(core::slice::from_ref(&s)).unwrap();
        let t = tokenize_unlabeled(&s, &v, 3).unwrap();
        assert_eq!(t.distances[0], 0.0);
    }

    #[test]
    fn tokenize_errors() {
        let s = scene(&["bed", "lamp", "rug"]);
        let v = build_vocab(core::slice::from_ref(&s)).unwrap();
        assert_eq!(tokenize_unlabeled(&s, &v, 2), Err(Error::TooManyObjects { n: 3, max: 2 }));
        let other = build_vocab(&[scene(&["bed"])]).unwrap();
        assert_eq!(tokenize_unlabeled(&s, &other, 4), Err(Error::UnknownLabel("lamp".into())));
        let rooms = ClassIndex::from_names(["kitchen"]);
        let regions = region_classes(core::slice::from_ref(&s));
        assert_eq!(tokenize_scene(&s, &v, &rooms, &regions, 4), Err(Error::UnknownClass("bedroom".into())));
    }

    #[test]
    fn split_sizes_and_determinism() {
        let items: Vec<u32> = (0..120).collect();
        let (a, b) = split_dataset(&items, 0.8, 7).unwrap();
        assert_eq!((a.len(), b.len()), (96, 24));
        let (a2, _) = split_dataset(&items, 0.8, 7).unwrap();
        assert_eq!(a, a2);
        let (a3, _) = split_dataset(&items, 0.8, 8).unwrap();
        assert_ne!(a, a3);
        let ten: Vec<u32> = (0..10).collect();
        let (a, b) = split_dataset(&ten, 0.8, 1).unwrap();
        assert_eq!((a.len(), b.len()), (8, 2));
        assert!(split_dataset(&ten, 1.0, 1).is_err());
    }
}
