//! Graph JSON: `{"rooms": [...], "regions": [...], "objects": [...],
//! "edges": [[layer, id, layer, id], ...]}`, layers numbered 1 (objects)
//! to 3 (rooms).

use std::path::Path;

use hsg_core::graph::{Edge, Hsg, Layer, NodeRef, ObjectNode, RegionNode, RoomNode};
use serde::{Deserialize, Serialize};

use crate::error::{self, Error, Result};

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct GraphFile {
    rooms: Vec<RoomNode>,
    regions: Vec<RegionNode>,
    objects: Vec<ObjectNode>,
    edges: Vec<(u8, u64, u8, u64)>,
}

pub fn graph_to_json(g: &Hsg) -> String {
    let file = GraphFile {
        rooms: g.rooms.clone(),
        regions: g.regions.clone(),
        objects: g.objects.clone(),
        edges: g.edges.iter().map(|e| (e.0.layer.index(), e.0.id, e.1.layer.index(), e.1.id)).collect(),
    };
    let mut s = serde_json::to_string_pretty(&file).expect("graph serializes");
    s.push('\n');
    s
}

pub fn parse_graph(text: &str, path: &Path) -> Result<Hsg> {
    let file: GraphFile = serde_json::from_str(text).map_err(|e| Error::parse(path, e))?;
    let layer = |l: u8| Layer::from_index(l).ok_or_else(|| Error::parse(path, format!("layer {l} is not 1, 2 or 3")));
    let edges = file
        .edges
        .iter()
        .map(|&(la, a, lb, b)| Ok(Edge(NodeRef { layer: layer(la)?, id: a }, NodeRef { layer: layer(lb)?, id: b })))
        .collect::<Result<_>>()?;
    Ok(Hsg { objects: file.objects, regions: file.regions, rooms: file.rooms, edges })
}

pub fn load_graph(path: &Path) -> Result<Hsg> {
    parse_graph(&error::read_string(path)?, path)
}

pub fn write_graph(path: &Path, g: &Hsg) -> Result<()> {
    error::write(path, graph_to_json(g))
}
