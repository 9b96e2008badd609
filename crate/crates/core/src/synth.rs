//! Synthetic scenes with known room types and region structure.
//!
//! A scene picks a room type, then a few of that room's region affordances.
//! Each region is a Gaussian cluster of objects whose labels come from the
//! catalog entry for (room, affordance). Every scene is a pure function of
//! `(seed, index)`.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::Vec3;
use crate::scene::{SceneObject, SceneRecord};

/// Room type → region affordance → labels. Repeating a label in a list
/// makes it proportionally more likely.
pub type LabelCatalog = BTreeMap<String, BTreeMap<String, Vec<String>>>;

const MAX_PLACEMENT_ATTEMPTS: usize = 10_000;
/// Half-width of the box each object's points are drawn from.
const OBJECT_HALF_SIZE: f64 = 0.1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub n_room_types: usize,
    pub n_region_affordances: usize,
    pub label_catalog: LabelCatalog,
    /// Inclusive range.
    pub objects_per_region: (usize, usize),
    /// Meters.
    pub region_spread: f64,
    /// Meters; side of the square floor area cluster centers fall in.
    pub room_extent: f64,
    pub seed: u64,
    /// Inclusive range, capped by the number of affordances the room has.
    #[serde(default = "default_regions_per_scene")]
    pub regions_per_scene: (usize, usize),
    /// Fixed cluster centers for particular affordances.
    #[serde(default)]
    pub anchors: BTreeMap<String, Vec3>,
    #[serde(default = "default_points_per_object")]
    pub points_per_object: usize,
}

fn default_regions_per_scene() -> (usize, usize) {
    (1, 4)
}

fn default_points_per_object() -> usize {
    8
}

fn catalog(entries: &[(&str, &[(&str, &[&str])])]) -> LabelCatalog {
    entries
        .iter()
        .map(|(room, affs)| {
            let affs = affs
                .iter()
                .map(|(a, labels)| (a.to_string(), labels.iter().map(|l| l.to_string()).collect()))
                .collect();
            (room.to_string(), affs)
        })
        .collect()
}

impl Default for SynthConfig {
    /// Six room types, ten affordances, forty labels; every label belongs to
    /// exactly one (room, affordance) pair.
    fn default() -> Self {
        let label_catalog = catalog(&[
            (
                "kitchen",
                &[
                    ("cooking", &["stove", "oven", "microwave", "range hood"]),
                    ("storing", &["refrigerator", "pantry shelf"]),
                    ("washing", &["dishwasher", "kitchen sink"]),
                ],
            ),
            (
                "bedroom",
                &[
                    ("sleeping", &["bed", "pillow", "nightstand"]),
                    ("dressing", &["wardrobe", "dresser", "full-length mirror"]),
                    ("working", &["writing desk", "desk lamp"]),
                ],
            ),
            (
                "bathroom",
                &[
                    ("washing", &["bathtub", "shower", "sink"]),
                    ("grooming", &["vanity mirror", "hair dryer", "toothbrush holder"]),
                    ("storing", &["towel rack"]),
                ],
            ),
            (
                "living room",
                &[
                    ("relaxing", &["sofa", "armchair", "footstool", "coffee table"]),
                    ("entertaining", &["tv", "speaker", "game console"]),
                ],
            ),
            ("office", &[("working", &["desk", "office chair", "monitor", "keyboard", "filing cabinet"])]),
            (
                "dining room",
                &[
                    ("dining", &["dining table", "dining chair", "chandelier"]),
                    ("entertaining", &["piano", "record player"]),
                ],
            ),
        ]);
        Self {
            n_room_types: 6,
            n_region_affordances: 10,
            label_catalog,
            objects_per_region: (5, 12),
            region_spread: 0.5,
            room_extent: 8.0,
            seed: 0,
            regions_per_scene: default_regions_per_scene(),
            anchors: BTreeMap::new(),
            points_per_object: default_points_per_object(),
        }
    }
}

impl SynthConfig {
    /// One room type with three anchored regions. "chair" is the most common
    /// label in both the dining and working regions, so which region a chair
    /// belongs to is decided only by where it stands.
    pub fn ambiguous() -> Self {
        let label_catalog = catalog(&[(
            "studio",
            &[
                ("dining", &["chair", "chair", "chair", "plate", "cup"]),
                ("working", &["chair", "chair", "chair", "laptop", "lamp"]),
                ("resting", &["sofa", "cushion", "blanket"]),
            ],
        )]);
        let mut anchors = BTreeMap::new();
        anchors.insert("dining".into(), Vec3::new(0.0, 0.0, 0.5));
        anchors.insert("working".into(), Vec3::new(4.0, 0.0, 0.5));
        anchors.insert("resting".into(), Vec3::new(-4.0, 0.0, 0.5));
        Self {
            n_room_types: 1,
            n_region_affordances: 3,
            label_catalog,
            objects_per_region: (6, 6),
            region_spread: 0.5,
            room_extent: 10.0,
            seed: 0,
            regions_per_scene: (3, 3),
            anchors,
            points_per_object: default_points_per_object(),
        }
    }

    pub fn affordances(&self) -> BTreeSet<&str> {
        self.label_catalog.values().flat_map(|m| m.keys().map(String::as_str)).collect()
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        if self.label_catalog.is_empty() {
            return bad("label catalog is empty".into());
        }
        for (room, affs) in &self.label_catalog {
            if affs.is_empty() {
                return bad(format!("room type {room:?} has no region affordances"));
            }
            for (aff, labels) in affs {
                if labels.is_empty() || labels.iter().any(|l| l.is_empty()) {
                    return bad(format!("{room:?}/{aff:?} needs at least one non-empty label"));
                }
            }
        }
        if self.n_room_types != self.label_catalog.len() {
            return bad(format!("n_room_types {} but catalog has {}", self.n_room_types, self.label_catalog.len()));
        }
        let n_aff = self.affordances().len();
        if self.n_region_affordances != n_aff {
            return bad(format!("n_region_affordances {} but catalog has {n_aff}", self.n_region_affordances));
        }
        let (lo, hi) = self.objects_per_region;
        if lo == 0 || lo > hi {
            return bad("objects_per_region must be a non-empty range starting at 1 or more".into());
        }
        let (lo, hi) = self.regions_per_scene;
        if lo == 0 || lo > hi {
            return bad("regions_per_scene must be a non-empty range starting at 1 or more".into());
        }
        if !(self.region_spread > 0.0 && self.region_spread.is_finite()) {
            return bad("region_spread must be positive".into());
        }
        if !(self.room_extent > 0.0 && self.room_extent.is_finite()) {
            return bad("room_extent must be positive".into());
        }
        if self.points_per_object == 0 {
            return bad("points_per_object must be positive".into());
        }
        if self.anchors.values().any(|a| !a.is_finite()) {
            return bad("anchors must be finite".into());
        }
        Ok(())
    }

    fn rng(&self, index: u64) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(index);
        rng
    }
}

fn ball_offset(rng: &mut ChaCha8Rng, radius: f64) -> Vec3 {
    loop {
        let v = Vec3::new(rng.random_range(-1.0..=1.0), rng.random_range(-1.0..=1.0), rng.random_range(-1.0..=1.0));
        if v.dot(v) <= 1.0 {
            return v * radius;
        }
    }
}

fn place_centers(config: &SynthConfig, rng: &mut ChaCha8Rng, affordances: &[&String]) -> Result<Vec<Vec3>> {
    let half = config.room_extent / 2.0;
    let min_gap = 2.0 * config.region_spread;
    let normal = Normal::new(0.0, config.room_extent / 4.0).expect("positive extent");
    let mut centers: Vec<Vec3> = Vec::with_capacity(affordances.len());
    for aff in affordances {
        if let Some(anchor) = config.anchors.get(*aff) {
            centers.push(*anchor);
            continue;
        }
        let mut placed = None;
        for _ in 0..MAX_PLACEMENT_ATTEMPTS {
            let c = Vec3::new(normal.sample(rng), normal.sample(rng), rng.random_range(0.3..=1.2));
            let inside = c.x.abs() <= half && c.y.abs() <= half;
            if inside && centers.iter().all(|o| o.distance(c) >= min_gap) {
                placed = Some(c);
                break;
            }
        }
        centers.push(placed.ok_or_else(|| {
            Error::InvalidConfig(format!(
                "could not place {} clusters {min_gap} m apart in a {} m room",
                affordances.len(),
                config.room_extent
            ))
        })?);
    }
    Ok(centers)
}

/// Scene `index` of the stream defined by `config`.
pub fn generate_scene(config: &SynthConfig, index: u64) -> Result<SceneRecord> {
    config.validate()?;
    let mut rng = config.rng(index);
    let rooms: Vec<&String> = config.label_catalog.keys().collect();
    let room = *rooms.choose(&mut rng).expect("validated non-empty");
    let room_affs = &config.label_catalog[room];
    let available: Vec<&String> = room_affs.keys().collect();
    let lo = config.regions_per_scene.0.min(available.len());
    let hi = config.regions_per_scene.1.min(available.len());
    let k = rng.random_range(lo..=hi);
    let chosen: Vec<&String> = available.choose_multiple(&mut rng, k).copied().collect();
    let centers = place_centers(config, &mut rng, &chosen)?;

    let mut objects = Vec::new();
    for (aff, center) in chosen.iter().zip(&centers) {
        let labels = &room_affs[*aff];
        let n = rng.random_range(config.objects_per_region.0..=config.objects_per_region.1);
        for _ in 0..n {
            let label = labels.choose(&mut rng).expect("validated non-empty");
            let pos = *center + ball_offset(&mut rng, config.region_spread);
            let points: Vec<Vec3> = (0..config.points_per_object)
                .map(|_| {
                    pos + Vec3::new(
                        rng.random_range(-OBJECT_HALF_SIZE..=OBJECT_HALF_SIZE),
                        rng.random_range(-OBJECT_HALF_SIZE..=OBJECT_HALF_SIZE),
                        rng.random_range(-OBJECT_HALF_SIZE..=OBJECT_HALF_SIZE),
                    )
                })
                .collect();
            let mut obj = SceneObject::from_points(0, label, points, aff)?;
            obj.common_rooms = alloc::vec![room.clone()];
            objects.push(obj);
        }
    }
    objects.shuffle(&mut rng);
    for (i, o) in objects.iter_mut().enumerate() {
        o.id = i as u64;
    }
    Ok(SceneRecord { scan_id: format!("synth-{}-{index:05}", config.seed), room_type: room.clone(), objects })
}

/// Scenes `0..n_scenes`.
pub fn generate_corpus(config: &SynthConfig, n_scenes: usize) -> Result<Vec<SceneRecord>> {
    if n_scenes == 0 {
        return Err(Error::InvalidConfig("n_scenes must be at least 1".into()));
    }
    (0..n_scenes as u64).map(|i| generate_scene(config, i)).collect()
}

/// Label → the single (room, affordance) it occurs under, or `None` if some
/// label occurs under more than one pair.
pub fn label_lookup(config: &SynthConfig) -> Option<BTreeMap<&str, (&str, &str)>> {
    let mut map = BTreeMap::new();
    for (room, affs) in &config.label_catalog {
        for (aff, labels) in affs {
            for l in labels {
                let pair = (room.as_str(), aff.as_str());
                if *map.entry(l.as_str()).or_insert(pair) != pair {
                    return None;
                }
            }
        }
    }
    Some(map)
}
