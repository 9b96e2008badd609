//! The three-layer hierarchical scene graph: objects, regions, rooms.
//!
//! Nodes live in three layers. Edges may only join adjacent layers, every
//! node has at most one parent in the layer above, and the child sets of any
//! two nodes in the same layer are disjoint. [`validate_graph`] reports every
//! violation it finds instead of stopping at the first one.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::string::String;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{Aabb, Vec3};
use crate::scene::SceneRecord;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Layer {
    Object = 1,
    Region = 2,
    Room = 3,
}

impl Layer {
    pub fn index(self) -> u8 {
        self as u8
    }

    pub fn from_index(i: u8) -> Option<Layer> {
        match i {
            1 => Some(Layer::Object),
            2 => Some(Layer::Region),
            3 => Some(Layer::Room),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct NodeRef {
    pub layer: Layer,
    pub id: u64,
}

impl NodeRef {
    pub const fn object(id: u64) -> Self {
        Self { layer: Layer::Object, id }
    }
    pub const fn region(id: u64) -> Self {
        Self { layer: Layer::Region, id }
    }
    pub const fn room(id: u64) -> Self {
        Self { layer: Layer::Room, id }
    }
}

/// An undirected edge between two nodes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Edge(pub NodeRef, pub NodeRef);

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObjectNode {
    pub object_id: u64,
    pub semantic_label: String,
    #[serde(default)]
    pub attributes: Vec<String>,
    #[serde(default)]
    pub segment_ids: Vec<u64>,
    /// Region-specific affordance, first element of the affordance pair.
    pub region_affordance: String,
    /// Object-specific affordance, second element of the affordance pair.
    pub object_affordance: String,
    #[serde(default)]
    pub common_rooms: Vec<String>,
    pub centroid: Vec3,
    pub aabb: Aabb,
}

impl ObjectNode {
    pub fn affordance_pair(&self) -> (&str, &str) {
        (&self.region_affordance, &self.object_affordance)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegionNode {
    pub region_id: u64,
    pub child_object_ids: Vec<u64>,
    pub region_affordance: String,
    pub centroid: Vec3,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoomNode {
    pub room_id: u64,
    pub scan_id: String,
    pub child_region_ids: Vec<u64>,
    pub room_type: String,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Hsg {
    pub objects: Vec<ObjectNode>,
    pub regions: Vec<RegionNode>,
    pub rooms: Vec<RoomNode>,
    pub edges: Vec<Edge>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum ViolationKind {
    /// Two nodes in one layer share an id.
    DuplicateId,
    /// An edge endpoint is not in the node sets.
    DanglingEdge,
    /// An edge joins nodes that are not in adjacent layers.
    AdjacentLayersOnly,
    /// A node has more than one parent in the layer above.
    SingleParent,
    /// Two same-layer nodes list a common child.
    DisjointChildren,
    EmptyRegion,
    EmptyRoom,
    /// Children of one region carry different region affordances.
    MixedAffordance,
    /// A region centroid is not the mean of its children's centroids.
    CentroidMismatch,
    /// A node's child list disagrees with the edge set.
    ChildListMismatch,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Violation {
    pub kind: ViolationKind,
    /// Offending nodes as `(layer, id)`; edges contribute both endpoints.
    pub nodes: Vec<(u8, u64)>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn is_valid(&self) -> bool {
        self.violations.is_empty()
    }

    pub fn has(&self, kind: ViolationKind) -> bool {
        self.violations.iter().any(|v| v.kind == kind)
    }

    fn push(&mut self, kind: ViolationKind, nodes: &[NodeRef]) {
        self.violations.push(Violation {
            kind,
            nodes: nodes.iter().map(|n| (n.layer.index(), n.id)).collect(),
        });
    }
}

const CENTROID_TOL: f64 = 1e-9;

/// Checks every structural invariant and reports all violations.
pub fn validate_graph(g: &Hsg) -> ValidationReport {
    let mut report = ValidationReport::default();

    let mut nodes = BTreeSet::new();
    let ids = g
        .objects
        .iter()
        .map(|o| NodeRef::object(o.object_id))
        .chain(g.regions.iter().map(|r| NodeRef::region(r.region_id)))
        .chain(g.rooms.iter().map(|r| NodeRef::room(r.room_id)));
    for node in ids {
        if !nodes.insert(node) {
            report.push(ViolationKind::DuplicateId, &[node]);
        }
    }

    // child -> parents, derived from the edge set
    let mut parents: BTreeMap<NodeRef, BTreeSet<NodeRef>> = BTreeMap::new();
    for edge in &g.edges {
        let Edge(a, b) = *edge;
        let missing: Vec<NodeRef> = [a, b].into_iter().filter(|n| !nodes.contains(n)).collect();
        if !missing.is_empty() {
            report.push(ViolationKind::DanglingEdge, &[a, b]);
        }
        let (lo, hi) = if a.layer <= b.layer { (a, b) } else { (b, a) };
        if hi.layer.index() != lo.layer.index() + 1 {
            report.push(ViolationKind::AdjacentLayersOnly, &[a, b]);
            continue;
        }
        if missing.is_empty() {
            parents.entry(lo).or_default().insert(hi);
        }
    }
    for (child, ps) in &parents {
        if ps.len() > 1 {
            let mut offending = alloc::vec![*child];
            offending.extend(ps.iter().copied());
            report.push(ViolationKind::SingleParent, &offending);
        }
    }

    // Child lists stored on the nodes themselves.
    let region_children: Vec<(NodeRef, Vec<NodeRef>)> = g
        .regions
        .iter()
        .map(|r| {
            let kids = r.child_object_ids.iter().map(|&id| NodeRef::object(id)).collect();
            (NodeRef::region(r.region_id), kids)
        })
        .collect();
    let room_children: Vec<(NodeRef, Vec<NodeRef>)> = g
        .rooms
        .iter()
        .map(|r| {
            let kids = r.child_region_ids.iter().map(|&id| NodeRef::region(id)).collect();
            (NodeRef::room(r.room_id), kids)
        })
        .collect();

    for layer_children in [&region_children, &room_children] {
        let mut owner: BTreeMap<NodeRef, NodeRef> = BTreeMap::new();
        for (node, kids) in layer_children.iter() {
            for kid in kids {
                match owner.get(kid) {
                    Some(prev) if prev != node => {
                        report.push(ViolationKind::DisjointChildren, &[*prev, *node, *kid]);
                    }
                    Some(_) => {}
                    None => {
                        owner.insert(*kid, *node);
                    }
                }
            }
        }
        for (node, kids) in layer_children.iter() {
            let listed: BTreeSet<NodeRef> = kids.iter().copied().collect();
            let from_edges: BTreeSet<NodeRef> = parents
                .iter()
                .filter(|(_, ps)| ps.contains(node))
                .map(|(c, _)| *c)
                .collect();
            if listed != from_edges {
                let mut offending = alloc::vec![*node];
                offending.extend(listed.symmetric_difference(&from_edges).copied());
                report.push(ViolationKind::ChildListMismatch, &offending);
            }
        }
    }

    let objects: BTreeMap<u64, &ObjectNode> = g.objects.iter().map(|o| (o.object_id, o)).collect();
    for region in &g.regions {
        let me = NodeRef::region(region.region_id);
        if region.child_object_ids.is_empty() {
            report.push(ViolationKind::EmptyRegion, &[me]);
            continue;
        }
        let kids: Vec<&ObjectNode> = region
            .child_object_ids
            .iter()
            .filter_map(|id| objects.get(id).copied())
            .collect();
        let mixed: Vec<NodeRef> = kids
            .iter()
            .filter(|o| o.region_affordance != region.region_affordance)
            .map(|o| NodeRef::object(o.object_id))
            .collect();
        if !mixed.is_empty() {
            let mut offending = alloc::vec![me];
            offending.extend(mixed);
            report.push(ViolationKind::MixedAffordance, &offending);
        }
        if kids.len() == region.child_object_ids.len() {
            let centroids: Vec<Vec3> = kids.iter().map(|o| o.centroid).collect();
            let expected = mean_of(&centroids);
            let scale = 1.0 + expected.norm();
            if region.centroid.distance(expected) > CENTROID_TOL * scale {
                report.push(ViolationKind::CentroidMismatch, &[me]);
            }
        }
    }
    for room in &g.rooms {
        if room.child_region_ids.is_empty() {
            report.push(ViolationKind::EmptyRoom, &[NodeRef::room(room.room_id)]);
        }
    }

    report
}

fn mean_of(points: &[Vec3]) -> Vec3 {
    let sum = points.iter().fold(Vec3::ZERO, |acc, p| acc + *p);
    sum / points.len() as f64
}

/// Centroid of a region: the mean of its children's object centroids.
pub fn region_centroid(children: &[ObjectNode]) -> Result<Vec3> {
    if children.is_empty() {
        return Err(Error::EmptyRegion);
    }
    let centroids: Vec<Vec3> = children.iter().map(|o| o.centroid).collect();
    Ok(mean_of(&centroids))
}

/// Builds a graph from a scene and per-object region affordances.
///
/// Objects sharing an affordance form one region. Region ids follow the
/// first occurrence of each affordance in object order; the single room has
/// id 0.
pub fn assemble_graph(scene: &SceneRecord, room_type: &str, region_affordances: &[String]) -> Result<Hsg> {
    if scene.objects.is_empty() {
        return Err(Error::EmptyScene);
    }
    if region_affordances.len() != scene.objects.len() {
        return Err(Error::LengthMismatch {
            expected: scene.objects.len(),
            actual: region_affordances.len(),
        });
    }
    let mut seen = BTreeSet::new();
    for o in &scene.objects {
        if !seen.insert(o.id) {
            return Err(Error::DuplicateObjectId(o.id));
        }
    }

    let objects: Vec<ObjectNode> = scene
        .objects
        .iter()
        .zip(region_affordances)
        .map(|(o, aff)| ObjectNode {
            object_id: o.id,
            semantic_label: o.label.clone(),
            attributes: o.attributes.clone(),
            segment_ids: o.segment_ids.clone(),
            region_affordance: aff.clone(),
            object_affordance: o.object_affordance.clone(),
            common_rooms: o.common_rooms.clone(),
            centroid: o.centroid,
            aabb: o.aabb,
        })
        .collect();

    let mut order: Vec<&str> = Vec::new();
    let mut members: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
    for (i, aff) in region_affordances.iter().enumerate() {
        let slot = members.entry(aff.as_str()).or_default();
        if slot.is_empty() {
            order.push(aff);
        }
        slot.push(i);
    }

    let room_id = 0;
    let mut regions = Vec::with_capacity(order.len());
    let mut edges = Vec::with_capacity(objects.len() + order.len());
    for (region_id, aff) in order.iter().enumerate() {
        let region_id = region_id as u64;
        let idx = &members[aff];
        let kids: Vec<ObjectNode> = idx.iter().map(|&i| objects[i].clone()).collect();
        let centroid = region_centroid(&kids)?;
        for o in &kids {
            edges.push(Edge(NodeRef::object(o.object_id), NodeRef::region(region_id)));
        }
        regions.push(RegionNode {
            region_id,
            child_object_ids: kids.iter().map(|o| o.object_id).collect(),
            region_affordance: String::from(*aff),
            centroid,
        });
    }
    for r in &regions {
        edges.push(Edge(NodeRef::region(r.region_id), NodeRef::room(room_id)));
    }
    let rooms = alloc::vec![RoomNode {
        room_id,
        scan_id: scene.scan_id.clone(),
        child_region_ids: regions.iter().map(|r| r.region_id).collect(),
        room_type: String::from(room_type),
    }];

    Ok(Hsg { objects, regions, rooms, edges })
}

/// Graph from the scene's own annotations.
pub fn ground_truth_graph(scene: &SceneRecord) -> Result<Hsg> {
    let affs: Vec<String> = scene.objects.iter().map(|o| o.region_affordance.clone()).collect();
    assemble_graph(scene, &scene.room_type, &affs)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scene::SceneObject;
    use alloc::string::ToString;
    use alloc::vec;

    fn obj(id: u64, aff: &str, at: Vec3) -> ObjectNode {
        ObjectNode {
            object_id: id,
            semantic_label: "chair".to_string(),
            attributes: vec![],
            segment_ids: vec![],
            region_affordance: aff.to_string(),
            object_affordance: "to sit".to_string(),
            common_rooms: vec![],
            centroid: at,
            aabb: Aabb::point(at),
        }
    }

    fn minimal() -> Hsg {
        let objects = vec![obj(1, "A", Vec3::ZERO), obj(2, "A", Vec3::new(2.0, 0.0, 0.0))];
        Hsg {
            regions: vec![RegionNode {
                region_id: 0,
                child_object_ids: vec![1, 2],
                region_affordance: "A".to_string(),
                centroid: Vec3::new(1.0, 0.0, 0.0),
            }],
            rooms: vec![RoomNode {
                room_id: 0,
                scan_id: "s".to_string(),
                child_region_ids: vec![0],
                room_type: "bedroom".to_string(),
            }],
            edges: vec![
                Edge(NodeRef::object(1), NodeRef::region(0)),
                Edge(NodeRef::object(2), NodeRef::region(0)),
                Edge(NodeRef::region(0), NodeRef::room(0)),
            ],
            objects,
        }
    }

    #[test]
    fn minimal_graph_is_valid() {
        assert!(validate_graph(&minimal()).is_valid());
    }

    #[test]
    fn dual_parent_detected() {
        let mut g = minimal();
        g.regions.push(RegionNode {
            region_id: 1,
            child_object_ids: vec![1],
            region_affordance: "A".to_string(),
            centroid: Vec3::ZERO,
        });
        g.rooms[0].child_region_ids.push(1);
        g.edges.push(Edge(NodeRef::object(1), NodeRef::region(1)));
        g.edges.push(Edge(NodeRef::region(1), NodeRef::room(0)));
        let report = validate_graph(&g);
        let v = report.violations.iter().find(|v| v.kind == ViolationKind::SingleParent).unwrap();
        assert_eq!(v.nodes[0], (1, 1));
    }

    #[test]
    fn skipped_layer_detected() {
        let mut g = minimal();
        g.edges.push(Edge(NodeRef::object(1), NodeRef::room(0)));
        assert!(validate_graph(&g).has(ViolationKind::AdjacentLayersOnly));
    }

    #[test]
    fn dangling_and_empty_detected() {
        let mut g = minimal();
        g.edges.push(Edge(NodeRef::object(99), NodeRef::region(0)));
        assert!(validate_graph(&g).has(ViolationKind::DanglingEdge));

        let mut g = minimal();
        g.regions.push(RegionNode {
            region_id: 5,
            child_object_ids: vec![],
            region_affordance: "B".to_string(),
            centroid: Vec3::ZERO,
        });
        assert!(validate_graph(&g).has(ViolationKind::EmptyRegion));
    }

    #[test]
    fn mixed_affordance_and_centroid_detected() {
        let mut g = minimal();
        g.objects[1].region_affordance = "B".to_string();
        assert!(validate_graph(&g).has(ViolationKind::MixedAffordance));
        let mut g = minimal();
        g.regions[0].centroid = Vec3::new(0.5, 0.0, 0.0);
        assert!(validate_graph(&g).has(ViolationKind::CentroidMismatch));
    }

    #[test]
    fn region_centroid_cases() {
        let one = [obj(1, "A", Vec3::new(1.0, 2.0, 3.0))];
        assert_eq!(region_centroid(&one).unwrap(), Vec3::new(1.0, 2.0, 3.0));
        let two = [obj(1, "A", Vec3::ZERO), obj(2, "A", Vec3::new(2.0, 2.0, 2.0))];
        assert_eq!(region_centroid(&two).unwrap(), Vec3::new(1.0, 1.0, 1.0));
        let three = [
            obj(1, "A", Vec3::new(3.0, 0.0, -3.0)),
            obj(2, "A", Vec3::new(0.0, 6.0, 0.0)),
            obj(3, "A", Vec3::new(0.0, 0.0, 9.0)),
        ];
        assert_eq!(region_centroid(&three).unwrap(), Vec3::new(1.0, 2.0, 2.0));
        assert_eq!(region_centroid(&[]), Err(Error::EmptyRegion));
    }

    fn scene_with(affs: &[&str]) -> SceneRecord {
        let objects = affs
            .iter()
            .enumerate()
            .map(|(i, a)| SceneObject::at(i as u64 + 1, "thing", Vec3::new(i as f64, 0.0, 0.0), a))
            .collect();
        SceneRecord { scan_id: "scan".to_string(), room_type: "bedroom".to_string(), objects }
    }

    #[test]
    fn assemble_groups_by_affordance() {
        let g = assemble_graph(&scene_with(&["S", "S", "S"]), "bedroom", &["S".into(), "S".into(), "S".into()])
            .unwrap();
        assert_eq!(g.regions.len(), 1);
        assert_eq!(g.regions[0].child_object_ids.len(), 3);

        let scene = scene_with(&["A", "A", "B", "C"]);
        let g = ground_truth_graph(&scene).unwrap();
        let sizes: Vec<usize> = g.regions.iter().map(|r| r.child_object_ids.len()).collect();
        assert_eq!(sizes, vec![2, 1, 1]);
        assert_eq!(g.regions[1].region_affordance, "B");
        assert!(validate_graph(&g).is_valid());
    }

    #[test]
    fn assemble_errors() {
        let empty = scene_with(&[]);
        assert_eq!(assemble_graph(&empty, "x", &[]), Err(Error::EmptyScene));
        let s = scene_with(&["A", "B"]);
        assert_eq!(
            assemble_graph(&s, "x", &["A".into()]),
            Err(Error::LengthMismatch { expected: 2, actual: 1 })
        );
    }
}
