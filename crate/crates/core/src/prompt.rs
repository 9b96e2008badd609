//! Plain-text prompts asking a language model to classify a room and the
//! region affordance of each object, with an optional scene-graph context.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;
use core::fmt::Write;

use crate::error::{Error, Result};
use crate::geometry::Vec3;
use crate::graph::Hsg;
use crate::scene::SceneRecord;

pub const DEFAULT_ROOM_TYPES: [&str; 12] = [
    "bedroom", "bathroom", "livingroom", "kitchen", "studio", "kidsroom", "restaurant", "office", "storage",
    "meetingroom", "lobby", "others",
];

pub const DEFAULT_AFFORDANCES: [&str; 27] = [
    "for washing", "for shower", "to enter", "for toileting", "for sleeping", "to store clothing", "for vanity",
    "for viewing", "to store shoes", "for entertainment", "appliance", "for decoration", "for convenience",
    "for lighting", "to rest", "kitchenette", "for dining", "to store", "to work/study", "others",
    "to dine/work/study", "for shelf storage", "for commode storage", "for fireplace", "to support ceiling",
    "to make coffee", "for changing",
];

#[derive(Debug, Clone, PartialEq)]
pub struct PromptOptions {
    /// Print coordinates with three decimals; otherwise the shortest
    /// representation that round-trips.
    pub round: bool,
    pub room_types: Vec<String>,
    pub affordances: Vec<String>,
}

impl Default for PromptOptions {
    fn default() -> Self {
        Self {
            round: true,
            room_types: DEFAULT_ROOM_TYPES.iter().map(|s| String::from(*s)).collect(),
            affordances: DEFAULT_AFFORDANCES.iter().map(|s| String::from(*s)).collect(),
        }
    }
}

fn coord(v: f64, round: bool) -> String {
    if !round {
        return format!("{v}");
    }
    let s = format!("{v:.3}");
    if s == "-0.000" { String::from("0.000") } else { s }
}

/// `"«id»«label» [x y z]"`.
pub fn object_line(id: u64, label: &str, c: Vec3, round: bool) -> String {
    format!("{id}{label} [{} {} {}]", coord(c.x, round), coord(c.y, round), coord(c.z, round))
}

fn json_list(items: &[String]) -> String {
    let quoted: Vec<String> = items.iter().map(|s| format!("\"{}\"", s.replace('\\', "\\\\").replace('"', "\\\""))).collect();
    format!("[{}]", quoted.join(", "))
}

fn template(lines: &[String], opts: &PromptOptions) -> String {
    let mut out = String::from("I am in a room. Here are the objects with their labels and respective positions:\n");
    for l in lines {
        out.push_str(l);
        out.push('\n');
    }
    let _ = write!(
        out,
        "\nQuestion:\nBased on the objects in this room, what is the common type for this room from the following list: {}? \
         Considering the region-specific affordance, what is the individual affordance for each object from the following list: {}?\n",
        json_list(&opts.room_types),
        json_list(&opts.affordances)
    );
    out.push_str(
        "\nPlease provide the answers in JSON format like this:\n{\n  \"Layer1\": \"common_type\",\n  \"Layer2\": {\n    \
         \"Object ID\": \"individual_affordance\",\n    \"Object ID\": \"individual_affordance\",\n    ...\n  }\n}\n",
    );
    out
}

/// Prompt for a scene's objects in file order.
pub fn export_scene_prompt(scene: &SceneRecord, opts: &PromptOptions) -> Result<String> {
    let lines = scene
        .objects
        .iter()
        .map(|o| {
            if o.centroid.is_finite() {
                Ok(object_line(o.id, &o.label, o.centroid, opts.round))
            } else {
                Err(Error::MissingGeometry(o.id))
            }
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(template(&lines, opts))
}

/// Prompt for a graph: a rooms → regions → objects block, then the object
/// lines and question.
pub fn export_graph_prompt(g: &Hsg, opts: &PromptOptions) -> Result<String> {
    let mut out = String::from("Scene graph:\n");
    for room in &g.rooms {
        let _ = writeln!(out, "Room {} ({}):", room.room_id, room.room_type);
        for rid in &room.child_region_ids {
            let Some(region) = g.regions.iter().find(|r| r.region_id == *rid) else { continue };
            let objects: Vec<String> = region
                .child_object_ids
                .iter()
                .filter_map(|oid| g.objects.iter().find(|o| o.object_id == *oid))
                .map(|o| format!("{}{}", o.object_id, o.semantic_label))
                .collect();
            let _ = writeln!(out, "  Region {} ({}): {}", region.region_id, region.region_affordance, objects.join(", "));
        }
    }
    out.push('\n');
    let lines = g
        .objects
        .iter()
        .map(|o| {
            if o.centroid.is_finite() {
                Ok(object_line(o.object_id, &o.semantic_label, o.centroid, opts.round))
            } else {
                Err(Error::MissingGeometry(o.object_id))
            }
        })
        .collect::<Result<Vec<_>>>()?;
    out.push_str(&template(&lines, opts));
    Ok(out)
}
