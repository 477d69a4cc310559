//! Prompt text and the scene description sent in reply to `det_object`.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::OrchestratorError;
use crate::geometry::{NrpTable, ObjectGeometry};
use crate::scene::SceneBundle;

pub const SECTION_TITLES: [&str; 5] = [
    "Available Functions",
    "Environment Description",
    "Collision Avoidance Guidance",
    "Initial Planning",
    "Code Generation",
];

const AVAILABLE_FUNCTIONS: &str = "\
You control a ground robot through the following calls. Each call is made by
replying with one fenced ```json block.
- det_object(): returns every detected object with its caption, center
  (x, y, z), dimensions (l, w, h) and, per drivable region, the nearest
  reachable point (NRP) to that object. Call it before planning.
- plan(segments, regions): submits a trajectory plan. The host then builds the
  value map, runs A_star_plan(start, end) on it, smooths the result and calls
  visual_3D(traj) to export it. You do not call those yourself.";

const ENVIRONMENT_DESCRIPTION: &str = "\
Coordinates are world-frame metres on the ground plane: x and y as listed,
z is height. The robot starts at the vehicle position given with the
detections. Each detection row reads
  id | caption | center (x,y,z) | dims (l,w,h) | NRP {region: (x, y), ...}
and the annotated image labels every object with the same id. Drivable
regions (roads, pavements and similar surfaces) are listed separately; the
robot may only travel on them.";

const COLLISION_GUIDANCE: &str = "\
Keep every waypoint on a drivable region and well clear of other objects; use
their centers and dimensions to estimate their footprint. Never place a
waypoint inside an object. End at an NRP rather than at the object itself,
since objects are not traversable.";

const INITIAL_PLANNING: &str = "\
Before writing the plan, decide which object the instruction refers to, which
drivable regions the route needs, and which intermediate waypoints the
instruction implies (for example passing beside or around an object). Order
the waypoints from the start to the goal.";

const CODE_GENERATION: &str = r#"Reply with exactly one fenced ```json block per turn.
To request the scene description:
```json
{"call": "det_object"}
```
To submit a plan:
```json
{"call": "plan",
 "segments": [
   {"kind": "waypoints", "points": [[x, y], ...]},
   {"kind": "line", "from": [x, y], "to": [x, y]},
   {"kind": "to_nrp", "target_detection": <object id>, "region": <region id>}
 ],
 "regions": [<drivable region ids the route uses>]}
```
Segments are chained in order: each one must start within 0.5 m of where the
previous one ended (a to_nrp segment starts at the previous end
automatically). The first segment is joined to the robot's start position.
If the host reports an error, fix the plan and submit it again."#;

/// The fixed task-agnostic instructions, five titled sections in order.
pub fn system_text() -> String {
    let bodies = [
        AVAILABLE_FUNCTIONS,
        ENVIRONMENT_DESCRIPTION,
        COLLISION_GUIDANCE,
        INITIAL_PLANNING,
        CODE_GENERATION,
    ];
    SECTION_TITLES
        .iter()
        .zip(bodies)
        .enumerate()
        .map(|(i, (title, body))| format!("## {}. {title}\n{body}", i + 1))
        .collect::<Vec<_>>()
        .join("\n\n")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PromptBundle {
    pub system_text: String,
    /// Instruction followed by the scene description.
    pub user_text: String,
    pub scene_text: String,
    pub image_ref: String,
}

fn f3(v: f64) -> String {
    let s = format!("{v:.3}");
    if s == "-0.000" {
        "0.000".into()
    } else {
        s
    }
}

fn one_line(s: &str) -> String {
    s.split_whitespace()
        .collect::<Vec<_>>()
        .join(" ")
        .replace('|', "/")
}

/// Detection listing with vehicle position, drivable regions and the NRP
/// dictionary of every object.
pub fn scene_text(bundle: &SceneBundle, objects: &[ObjectGeometry], nrp: &NrpTable) -> String {
    let geo: BTreeMap<u32, &ObjectGeometry> = objects.iter().map(|o| (o.detection_id, o)).collect();
    let v = bundle.vehicle_position();
    let mut out = format!("Vehicle position: ({}, {})\n", f3(v[0]), f3(v[1]));
    let regions: Vec<String> = bundle
        .detections
        .iter()
        .filter(|d| d.is_drivable_region)
        .map(|d| format!("{} ({})", d.id, one_line(&d.caption)))
        .collect();
    out.push_str("Drivable regions: ");
    out.push_str(if regions.is_empty() { "none" } else { "" });
    out.push_str(&regions.join(", "));
    out.push('\n');
    out.push_str(
        "Detections (id | caption | center (x,y,z) | dims (l,w,h) | NRP {region: (x, y)}):\n",
    );
    for d in &bundle.detections {
        let caption = one_line(&d.caption);
        let Some(o) = geo.get(&d.id) else {
            out.push_str(&format!(
                "{} | {caption} | center n/a | dims n/a | NRP n/a\n",
                d.id
            ));
            continue;
        };
        let c = o.centroid;
        let s = o.dimensions;
        let nrp_text = if d.is_drivable_region {
            "n/a".to_string()
        } else {
            let entries: Vec<String> = nrp
                .row(d.id)
                .iter()
                .map(|(r, p)| format!("{r}: ({}, {})", f3(p[0]), f3(p[1])))
                .collect();
            format!("{{{}}}", entries.join(", "))
        };
        out.push_str(&format!(
            "{} | {caption} | center ({}, {}, {}) | dims ({}, {}, {}) | NRP {nrp_text}\n",
            d.id,
            f3(c[0]),
            f3(c[1]),
            f3(c[2]),
            f3(s[0]),
            f3(s[1]),
            f3(s[2]),
        ));
    }
    out
}

pub fn assemble_prompt(
    instruction: &str,
    bundle: &SceneBundle,
    scene_text: &str,
    annotated_image: &str,
) -> Result<PromptBundle, OrchestratorError> {
    if annotated_image.trim().is_empty() {
        return Err(OrchestratorError::MissingAnnotatedImage {
            scene_id: bundle.scene_id.clone(),
        });
    }
    Ok(PromptBundle {
        system_text: system_text(),
        user_text: format!("{instruction}\n\n{scene_text}"),
        scene_text: scene_text.to_string(),
        image_ref: annotated_image.to_string(),
    })
}

impl PromptBundle {
    /// Text of the opening message: the fixed prompt, then the instruction.
    pub fn initial_text(&self, instruction: &str) -> String {
        format!("{}\n\n## Instruction\n{instruction}", self.system_text)
    }
}
