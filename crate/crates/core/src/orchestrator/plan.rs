//! Reply parsing, the trajectory-plan schema and its interpretation into a
//! coarse polyline.

use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::geometry::NrpTable;
use crate::planner::densify;
use crate::scene::SceneBundle;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Segment {
    Waypoints { points: Vec<[f64; 2]> },
    Line { from: [f64; 2], to: [f64; 2] },
    ToNrp { target_detection: u32, region: u32 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrajectoryPlan {
    pub segments: Vec<Segment>,
    pub regions: Vec<u32>,
}

/// What a model reply asks for.
#[derive(Debug, Clone, PartialEq)]
pub enum Reply {
    DetObject,
    Plan(TrajectoryPlan),
    /// A structured block that could not be understood; the message is fed
    /// back to the model.
    Malformed(String),
    /// No structured block at all.
    FreeForm,
}

/// Contents of the first fenced code block, if any.
pub fn fenced_block(text: &str) -> Option<&str> {
    let open = text.find("```")?;
    let after = &text[open + 3..];
    let body_start = after.find('\n')? + 1;
    let body = &after[body_start..];
    let close = body.find("```")?;
    Some(body[..close].trim())
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct PlanCall {
    #[allow(dead_code)]
    call: String,
    segments: Vec<Segment>,
    regions: Vec<u32>,
}

pub fn parse_reply(text: &str) -> Reply {
    let Some(block) = fenced_block(text) else {
        return Reply::FreeForm;
    };
    let value: Value = match serde_json::from_str(block) {
        Ok(v) => v,
        Err(e) => return Reply::Malformed(format!("the json block is not valid JSON: {e}")),
    };
    match value.get("call").and_then(Value::as_str) {
        Some("det_object") => Reply::DetObject,
        Some("plan") => match serde_json::from_value::<PlanCall>(value) {
            Ok(p) => Reply::Plan(TrajectoryPlan {
                segments: p.segments,
                regions: p.regions,
            }),
            Err(e) => Reply::Malformed(format!("the plan does not match the schema: {e}")),
        },
        Some(other) => Reply::Malformed(format!(
            "unknown call \"{other}\"; expected \"det_object\" or \"plan\""
        )),
        None => Reply::Malformed("the json block has no \"call\" field".into()),
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum InterpretError {
    #[error("the plan has no segments")]
    EmptyPlan,
    #[error("the plan lists no drivable regions in \"regions\"")]
    NoRegions,
    #[error("segment {index} has no points")]
    EmptySegment { index: usize },
    #[error("segment {index} contains a non-finite coordinate")]
    NonFinite { index: usize },
    #[error("detection {id} does not exist; known ids: {known}")]
    UnknownDetection { id: u32, known: String },
    #[error("{id} is not a drivable region; drivable regions: {known}")]
    UnknownRegion { id: u32, known: String },
    #[error("detection {target} has no reachable point on region {region}")]
    NoReachablePoint { target: u32, region: u32 },
    #[error(
        "segment {seam} starts {gap:.3} m from the end of segment {prev}; consecutive segments must connect within {tolerance} m",
        prev = seam - 1
    )]
    DisconnectedSegments {
        seam: usize,
        gap: f64,
        tolerance: f64,
    },
}

/// Interpreted plan: a densified polyline from the vehicle to the goal.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoarsePlan {
    pub polyline: Vec<[f64; 2]>,
    pub regions: Vec<u32>,
}

fn id_list(ids: impl Iterator<Item = u32>) -> String {
    let v: Vec<String> = ids.map(|i| i.to_string()).collect();
    format!("[{}]", v.join(", "))
}

fn dist(a: [f64; 2], b: [f64; 2]) -> f64 {
    (a[0] - b[0]).hypot(a[1] - b[1])
}

/// Schema-level checks that need the scene: ids exist, regions drivable.
pub fn validate_plan(plan: &TrajectoryPlan, scene: &SceneBundle) -> Result<(), InterpretError> {
    if plan.segments.is_empty() {
        return Err(InterpretError::EmptyPlan);
    }
    let drivable = scene.drivable_ids();
    let check_region = |id: u32| {
        if drivable.contains(&id) {
            Ok(())
        } else {
            Err(InterpretError::UnknownRegion {
                id,
                known: id_list(drivable.iter().copied()),
            })
        }
    };
    if plan.regions.is_empty() {
        return Err(InterpretError::NoRegions);
    }
    for &r in &plan.regions {
        check_region(r)?;
    }
    for (index, seg) in plan.segments.iter().enumerate() {
        let pts: Vec<[f64; 2]> = match seg {
            Segment::Waypoints { points } => {
                if points.is_empty() {
                    return Err(InterpretError::EmptySegment { index });
                }
                points.clone()
            }
            Segment::Line { from, to } => vec![*from, *to],
            Segment::ToNrp {
                target_detection,
                region,
            } => {
                if scene.detection(*target_detection).is_none() {
                    return Err(InterpretError::UnknownDetection {
                        id: *target_detection,
                        known: id_list(scene.detections.iter().map(|d| d.id)),
                    });
                }
                check_region(*region)?;
                Vec::new()
            }
        };
        if pts.iter().flatten().any(|c| !c.is_finite()) {
            return Err(InterpretError::NonFinite { index });
        }
    }
    Ok(())
}

/// Resolve, chain and densify the plan's segments into one polyline that
/// starts at the vehicle.
pub fn interpret_plan(
    plan: &TrajectoryPlan,
    scene: &SceneBundle,
    nrp: &NrpTable,
    sample_step: f64,
    chain_tolerance: f64,
) -> Result<CoarsePlan, InterpretError> {
    validate_plan(plan, scene)?;
    let start = scene.vehicle_position();
    let mut vertices: Vec<[f64; 2]> = vec![start];
    for (index, seg) in plan.segments.iter().enumerate() {
        let cursor = *vertices.last().unwrap();
        let pts = match seg {
            Segment::Waypoints { points } => points.clone(),
            Segment::Line { from, to } => vec![*from, *to],
            Segment::ToNrp {
                target_detection,
                region,
            } => {
                let p = nrp.get(*target_detection, *region).ok_or(
                    InterpretError::NoReachablePoint {
                        target: *target_detection,
                        region: *region,
                    },
                )?;
                vec![cursor, p]
            }
        };
        if index > 0 {
            let gap = dist(cursor, pts[0]);
            if gap > chain_tolerance {
                return Err(InterpretError::DisconnectedSegments {
                    seam: index,
                    gap,
                    tolerance: chain_tolerance,
                });
            }
        }
        for p in pts {
            if dist(*vertices.last().unwrap(), p) > 1e-6 {
                vertices.push(p);
            }
        }
    }
    Ok(CoarsePlan {
        polyline: densify(&vertices, sample_step),
        regions: plan.regions.clone(),
    })
}
