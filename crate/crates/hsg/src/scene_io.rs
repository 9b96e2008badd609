//! Scene JSON files.
//!
//! ```json
//! {"scan_id": "...", "room_type": "...", "objects": [
//!   {"id": 3, "label": "tv", "points": [[x, y, z], ...], "centroid": [x, y, z],
//!    "aabb": {"min": [..], "max": [..]}, "region_affordance": "...",
//!    "object_affordance": "...", "common_rooms": ["..."]}]}
//! ```
//!
//! Each object needs `points` or `centroid`; whatever is missing of
//! centroid and box is derived from the points (or the centroid alone).

use std::path::{Path, PathBuf};

use hsg_core::geometry::{self, Aabb, Vec3};
use hsg_core::scene::{SceneObject, SceneRecord};
use serde::{Deserialize, Serialize};

use crate::error::{self, Error, Result};
use crate::manifest::MANIFEST_FILE;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawObject {
    id: u64,
    label: String,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    points: Vec<Vec3>,
    #[serde(default)]
    centroid: Option<Vec3>,
    #[serde(default)]
    aabb: Option<Aabb>,
    #[serde(default)]
    region_affordance: String,
    #[serde(default)]
    object_affordance: String,
    #[serde(default)]
    common_rooms: Vec<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    attributes: Vec<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    segment_ids: Vec<u64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawScene {
    scan_id: String,
    #[serde(default)]
    room_type: String,
    objects: Vec<RawObject>,
}

fn from_raw(raw: RawScene, path: &Path) -> Result<SceneRecord> {
    let mut objects = Vec::with_capacity(raw.objects.len());
    for o in raw.objects {
        if o.label.is_empty() {
            return Err(Error::parse(path, format!("object {} has an empty label", o.id)));
        }
        let centroid = match (o.centroid, o.points.is_empty()) {
            (Some(c), _) => c,
            (None, false) => geometry::object_centroid(&o.points)?,
            (None, true) => return Err(hsg_core::Error::MissingGeometry(o.id).into()),
        };
        let aabb = match (o.aabb, o.points.is_empty()) {
            (Some(b), _) => b,
            (None, false) => Aabb::from_points(&o.points)?,
            (None, true) => Aabb::point(centroid),
        };
        objects.push(SceneObject {
            id: o.id,
            label: o.label,
            points: o.points,
            centroid,
            aabb,
            region_affordance: o.region_affordance,
            object_affordance: o.object_affordance,
            common_rooms: o.common_rooms,
            attributes: o.attributes,
            segment_ids: o.segment_ids,
        });
    }
    Ok(SceneRecord { scan_id: raw.scan_id, room_type: raw.room_type, objects })
}

fn to_raw(scene: &SceneRecord) -> RawScene {
    RawScene {
        scan_id: scene.scan_id.clone(),
        room_type: scene.room_type.clone(),
        objects: scene
            .objects
            .iter()
            .map(|o| RawObject {
                id: o.id,
                label: o.label.clone(),
                points: o.points.clone(),
                centroid: Some(o.centroid),
                aabb: Some(o.aabb),
                region_affordance: o.region_affordance.clone(),
                object_affordance: o.object_affordance.clone(),
                common_rooms: o.common_rooms.clone(),
                attributes: o.attributes.clone(),
                segment_ids: o.segment_ids.clone(),
            })
            .collect(),
    }
}

pub fn parse_scene(text: &str, path: &Path) -> Result<SceneRecord> {
    let raw: RawScene = serde_json::from_str(text).map_err(|e| Error::parse(path, e))?;
    from_raw(raw, path)
}

pub fn load_scene(path: &Path) -> Result<SceneRecord> {
    parse_scene(&error::read_string(path)?, path)
}

pub fn scene_to_json(scene: &SceneRecord) -> String {
    let mut s = serde_json::to_string_pretty(&to_raw(scene)).expect("scene serializes");
    s.push('\n');
    s
}

pub fn write_scene(path: &Path, scene: &SceneRecord) -> Result<()> {
    error::write(path, scene_to_json(scene))
}

/// Scene files in `dir` (every `*.json` except the run manifest), sorted by
/// file name.
pub fn scene_paths(dir: &Path) -> Result<Vec<PathBuf>> {
    let entries = std::fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    let mut paths = Vec::new();
    for entry in entries {
        let path = entry.map_err(|e| Error::io(dir, e))?.path();
        let is_json = path.extension().is_some_and(|e| e == "json");
        let is_manifest = path.file_name().is_some_and(|n| n == MANIFEST_FILE);
        if is_json && !is_manifest && path.is_file() {
            paths.push(path);
        }
    }
    paths.sort();
    Ok(paths)
}

pub fn load_scenes(dir: &Path) -> Result<Vec<SceneRecord>> {
    scene_paths(dir)?.iter().map(|p| load_scene(p)).collect()
}
