//! The tool-calling loop, per-mode refinement and episode export.

use std::collections::BTreeSet;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use serde_json::json;
use thiserror::Error;

use super::client::{ChatClient, ChatMessage, ClientError, MessageKind, Role};
use super::plan::{interpret_plan, parse_reply, CoarsePlan, Reply};
use super::prompt::{assemble_prompt, scene_text};
use crate::bev::{
    build_occupancy, build_semantic, ground_elevation, imprint_corridor, init_value_map, Cell,
    GridSpec, MapError, OccupancyGrid, SemanticGrid, ValueMap,
};
use crate::config::{MapConfig, PipelineConfig};
use crate::geometry::{
    extract_all, nearest_reachable_points, region_footprints, GeometryError, NrpTable,
    ObjectGeometry,
};
use crate::planner::{
    assign_headings, astar, smooth_bspline, smooth_polyline, DenseTrajectory, PlanError,
};
use crate::render;
use crate::scene::SceneBundle;

pub const CONTINUE_TEXT: &str = "Continue.";
pub const NUDGE_TEXT: &str = "Please reply with one fenced ```json block: either {\"call\": \"det_object\"} or a plan following the Code Generation schema.";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Mode {
    /// A* on the initialized value map, no corridor.
    #[serde(rename = "astar_only")]
    AstarOnly,
    /// The interpreted plan smoothed directly, no map refinement.
    #[serde(rename = "vlt_code")]
    VltCode,
    /// Corridor-imprinted value map, A*, smoothing with collision repair.
    #[serde(rename = "opennav")]
    Full,
}

impl Mode {
    pub const ALL: [Mode; 3] = [Mode::AstarOnly, Mode::VltCode, Mode::Full];

    pub fn as_str(self) -> &'static str {
        match self {
            Mode::AstarOnly => "astar_only",
            Mode::VltCode => "vlt_code",
            Mode::Full => "opennav",
        }
    }

    /// Column label used in comparison tables.
    pub fn label(self) -> &'static str {
        match self {
            Mode::AstarOnly => "A*",
            Mode::VltCode => "VLT-Code",
            Mode::Full => "OpenNav",
        }
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Mode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Mode::ALL
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| format!("unknown mode {s:?}; expected astar_only, vlt_code or opennav"))
    }
}

/// Everything derived from a scene once, shared by all episodes on it.
#[derive(Debug, Clone)]
pub struct SceneContext {
    pub bundle: SceneBundle,
    pub objects: Vec<ObjectGeometry>,
    /// Detections whose mask caught no LiDAR point.
    pub unsupported: Vec<u32>,
    pub spec: GridSpec,
    pub occupancy: OccupancyGrid,
    pub semantic: SemanticGrid,
    pub ground_z: f64,
    pub nrp: NrpTable,
    pub blocked_regions: Vec<GeometryError>,
    pub scene_text: String,
}

impl SceneContext {
    pub fn build(bundle: SceneBundle, cfg: &MapConfig) -> Result<Self, MapError> {
        let (objects, errors) = extract_all(&bundle);
        let unsupported = errors
            .iter()
            .filter_map(|e| match e {
                GeometryError::EmptyObjectPoints { detection_id } => Some(*detection_id),
                _ => None,
            })
            .collect();
        let pts = objects
            .iter()
            .flat_map(|o| o.points_world.iter().map(|p| [p[0], p[1]]))
            .chain(std::iter::once(bundle.vehicle_position()));
        let spec = GridSpec::covering(pts, cfg.resolution, cfg.margin)?;
        let occupancy = build_occupancy(&bundle, &objects, spec, cfg.height_band)?;
        let semantic = build_semantic(&bundle, &objects, spec);
        let ground_z = ground_elevation(&bundle, &objects);

        let drivable = bundle.drivable_ids();
        let footprints = region_footprints(&semantic, &drivable);
        let mut nrp = NrpTable::default();
        let mut blocked_regions = Vec::new();
        for obj in objects
            .iter()
            .filter(|o| !drivable.contains(&o.detection_id))
        {
            let row = nearest_reachable_points(obj, &footprints, &occupancy);
            nrp.insert_row(&row);
            blocked_regions.extend(row.blocked);
        }
        let scene_text = scene_text(&bundle, &objects, &nrp);
        Ok(Self {
            bundle,
            objects,
            unsupported,
            spec,
            occupancy,
            semantic,
            ground_z,
            nrp,
            blocked_regions,
            scene_text,
        })
    }

    pub fn value_map(&self, drivable_ids: &BTreeSet<u32>, cfg: &MapConfig) -> ValueMap {
        init_value_map(&self.occupancy, &self.semantic, drivable_ids, cfg.costs)
            .expect("occupancy and semantic grids share one spec")
    }

    pub fn all_drivable(&self) -> BTreeSet<u32> {
        self.bundle.drivable_ids().into_iter().collect()
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum EpisodeFailure {
    #[error("annotated image path is empty for scene {0}")]
    MissingAnnotatedImage(String),
    #[error("retry limit of {max_retries} reached; last error: {last_error}")]
    MaxRetriesExceeded {
        max_retries: u32,
        last_error: String,
    },
    #[error("no plan after {0} turns")]
    TurnLimit(u32),
    #[error("chat client failed: {0}")]
    Client(#[from] ClientError),
    #[error("{0}")]
    NoPath(PlanError),
    #[error("{0}")]
    Planning(PlanError),
}

impl EpisodeFailure {
    pub fn kind(&self) -> &'static str {
        match self {
            EpisodeFailure::MissingAnnotatedImage(_) => "MissingAnnotatedImage",
            EpisodeFailure::MaxRetriesExceeded { .. } => "MaxRetriesExceeded",
            EpisodeFailure::TurnLimit(_) => "TurnLimit",
            EpisodeFailure::Client(_) => "ClientError",
            EpisodeFailure::NoPath(_) => "NoPath",
            EpisodeFailure::Planning(_) => "PlanningError",
        }
    }
}

impl From<PlanError> for EpisodeFailure {
    fn from(e: PlanError) -> Self {
        match e {
            PlanError::StartOutsideMap { .. }
            | PlanError::GoalOutsideMap { .. }
            | PlanError::StartBlocked { .. }
            | PlanError::GoalBlocked { .. }
            | PlanError::NoPath => EpisodeFailure::NoPath(e),
            _ => EpisodeFailure::Planning(e),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "state", rename_all = "snake_case")]
pub enum EpisodeStatus {
    Success,
    Failed { kind: String, reason: String },
}

impl EpisodeStatus {
    fn failed(f: &EpisodeFailure) -> Self {
        EpisodeStatus::Failed {
            kind: f.kind().to_string(),
            reason: f.to_string(),
        }
    }

    pub fn is_success(&self) -> bool {
        matches!(self, EpisodeStatus::Success)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeResult {
    pub scene_id: String,
    pub instruction: String,
    pub mode: Mode,
    pub status: EpisodeStatus,
    pub retry_count: u32,
    pub transcript: Vec<ChatMessage>,
    pub coarse_trajectory: Vec<[f64; 2]>,
    pub regions: Vec<u32>,
    pub final_trajectory: DenseTrajectory,
    pub config_hash: String,
    #[serde(skip)]
    pub value_map: Option<ValueMap>,
}

impl EpisodeResult {
    fn new(ctx: &SceneContext, instruction: &str, mode: Mode, cfg: &PipelineConfig) -> Self {
        Self {
            scene_id: ctx.bundle.scene_id.clone(),
            instruction: instruction.to_string(),
            mode,
            status: EpisodeStatus::Success,
            retry_count: 0,
            transcript: Vec::new(),
            coarse_trajectory: Vec::new(),
            regions: Vec::new(),
            final_trajectory: DenseTrajectory::default(),
            config_hash: cfg.hash(),
            value_map: None,
        }
    }
}

/// `p` itself when its cell is traversable, otherwise the nearest
/// traversable cell center within `radius` (ties to the lower cell).
pub fn snap_start(vm: &ValueMap, p: [f64; 2], radius: f64) -> Result<[f64; 2], PlanError> {
    let spec = vm.spec;
    let cell = spec
        .cell_of(p)
        .ok_or(PlanError::StartOutsideMap { x: p[0], y: p[1] })?;
    if !vm.is_blocked(cell) {
        return Ok(p);
    }
    let blocked = PlanError::StartBlocked { x: p[0], y: p[1] };
    let Some((lo, hi)) = spec.cells_in_box(
        [p[0] - radius, p[1] - radius],
        [p[0] + radius, p[1] + radius],
    ) else {
        return Err(blocked);
    };
    let mut best: Option<(f64, Cell)> = None;
    for r in lo.row..=hi.row {
        for c in lo.col..=hi.col {
            let cell = Cell::new(r, c);
            if vm.is_blocked(cell) {
                continue;
            }
            let q = spec.center(cell);
            let d = (q[0] - p[0]).hypot(q[1] - p[1]);
            if d <= radius && best.is_none_or(|(bd, _)| d < bd) {
                best = Some((d, cell));
            }
        }
    }
    best.map(|(_, c)| spec.center(c)).ok_or(blocked)
}

/// Plan on `vm` from the (snapped) vehicle position to `goal` and smooth.
fn refine_on_map(
    ctx: &SceneContext,
    vm: &ValueMap,
    goal: [f64; 2],
    cfg: &PipelineConfig,
) -> Result<DenseTrajectory, PlanError> {
    let start = snap_start(
        vm,
        ctx.bundle.vehicle_position(),
        cfg.planner.start_snap_radius,
    )?;
    let path = astar(vm, start, goal)?;
    let poly = if path.cells.len() == 1 {
        vec![start, goal]
    } else {
        smooth_bspline(&path, vm, cfg.planner.smoothing)?
    };
    assign_headings(&poly, ctx.ground_z)
}

/// Turn an interpreted plan into the final trajectory for `mode`.
pub fn refine(
    ctx: &SceneContext,
    coarse: &CoarsePlan,
    mode: Mode,
    cfg: &PipelineConfig,
) -> (Result<DenseTrajectory, EpisodeFailure>, ValueMap) {
    let plan_ids: BTreeSet<u32> = coarse.regions.iter().copied().collect();
    let goal = *coarse
        .polyline
        .last()
        .expect("interpreted plans are nonempty");
    match mode {
        Mode::Full => {
            let base = ctx.value_map(&plan_ids, &cfg.map);
            let vm = imprint_corridor(&base, &coarse.polyline, cfg.map.corridor_radius);
            let out = refine_on_map(ctx, &vm, goal, cfg).map_err(EpisodeFailure::from);
            (out, vm)
        }
        Mode::AstarOnly => {
            let vm = ctx.value_map(&ctx.all_drivable(), &cfg.map);
            let out = refine_on_map(ctx, &vm, goal, cfg).map_err(EpisodeFailure::from);
            (out, vm)
        }
        Mode::VltCode => {
            let vm = ctx.value_map(&plan_ids, &cfg.map);
            let poly = smooth_polyline(&coarse.polyline, cfg.planner.smoothing);
            let out = assign_headings(&poly, ctx.ground_z).map_err(EpisodeFailure::from);
            (out, vm)
        }
    }
}

/// Full pipeline episode.
pub fn run_episode(
    ctx: &SceneContext,
    instruction: &str,
    client: &dyn ChatClient,
    cfg: &PipelineConfig,
) -> EpisodeResult {
    run_ablation(ctx, instruction, client, Mode::Full, cfg)
}

/// Drive the conversation until a plan is accepted, then refine it the way
/// `mode` prescribes. Failures end up in the result's status.
pub fn run_ablation(
    ctx: &SceneContext,
    instruction: &str,
    client: &dyn ChatClient,
    mode: Mode,
    cfg: &PipelineConfig,
) -> EpisodeResult {
    let mut result = EpisodeResult::new(ctx, instruction, mode, cfg);
    if let Err(f) = converse(ctx, instruction, client, mode, cfg, &mut result) {
        result.status = EpisodeStatus::failed(&f);
        result.final_trajectory = DenseTrajectory::default();
    }
    result
}

fn converse(
    ctx: &SceneContext,
    instruction: &str,
    client: &dyn ChatClient,
    mode: Mode,
    cfg: &PipelineConfig,
    result: &mut EpisodeResult,
) -> Result<(), EpisodeFailure> {
    let ocfg = &cfg.orchestrator;
    let image = ctx.bundle.prompt_image().to_string();
    let prompt = assemble_prompt(instruction, &ctx.bundle, &ctx.scene_text, &image)
        .map_err(|_| EpisodeFailure::MissingAnnotatedImage(ctx.bundle.scene_id.clone()))?;
    result.transcript.push(
        ChatMessage::user(MessageKind::InitialPrompt, prompt.initial_text(instruction))
            .with_image(prompt.image_ref.clone()),
    );

    let mut schema_free = 0u32;
    let mut turns = 0u32;
    loop {
        if turns >= ocfg.max_turns {
            return Err(EpisodeFailure::TurnLimit(ocfg.max_turns));
        }
        turns += 1;
        let reply = client.complete(&result.transcript)?;
        let parsed = parse_reply(&reply);
        result.transcript.push(ChatMessage::assistant(reply));

        let feedback = match parsed {
            Reply::DetObject => {
                schema_free = 0;
                result.transcript.push(
                    ChatMessage::user(MessageKind::Observation, prompt.scene_text.clone())
                        .with_image(prompt.image_ref.clone())
                        .with_payload(json!({"tool": "det_object"})),
                );
                continue;
            }
            Reply::FreeForm => {
                schema_free += 1;
                if schema_free < ocfg.nudge_after {
                    result
                        .transcript
                        .push(ChatMessage::user(MessageKind::Continue, CONTINUE_TEXT));
                    continue;
                }
                schema_free = 0;
                (MessageKind::Nudge, NUDGE_TEXT.to_string())
            }
            Reply::Malformed(msg) => {
                schema_free = 0;
                (MessageKind::ErrorFeedback, msg)
            }
            Reply::Plan(plan) => {
                schema_free = 0;
                match interpret_plan(
                    &plan,
                    &ctx.bundle,
                    &ctx.nrp,
                    ocfg.sample_step,
                    ocfg.chain_tolerance,
                ) {
                    Ok(coarse) => {
                        result.coarse_trajectory = coarse.polyline.clone();
                        result.regions = coarse.regions.clone();
                        let (traj, vm) = refine(ctx, &coarse, mode, cfg);
                        result.value_map = Some(vm);
                        result.final_trajectory = traj?;
                        return Ok(());
                    }
                    Err(e) => (MessageKind::ErrorFeedback, e.to_string()),
                }
            }
        };
        let (kind, text) = feedback;
        if result.retry_count >= ocfg.max_retries {
            return Err(EpisodeFailure::MaxRetriesExceeded {
                max_retries: ocfg.max_retries,
                last_error: text,
            });
        }
        result.retry_count += 1;
        let mut msg = ChatMessage::user(kind, text.clone());
        if kind == MessageKind::ErrorFeedback {
            msg = msg.with_payload(json!({"error": text}));
        }
        result.transcript.push(msg);
    }
}

/// A* from the vehicle to an explicit goal over all drivable regions; no
/// chat model involved.
pub fn plan_to_goal(ctx: &SceneContext, goal: [f64; 2], cfg: &PipelineConfig) -> EpisodeResult {
    let mut result = EpisodeResult::new(ctx, "", Mode::AstarOnly, cfg);
    let coarse = CoarsePlan {
        polyline: vec![ctx.bundle.vehicle_position(), goal],
        regions: ctx.all_drivable().into_iter().collect(),
    };
    result.coarse_trajectory = coarse.polyline.clone();
    result.regions = coarse.regions.clone();
    let (traj, vm) = refine(ctx, &coarse, Mode::AstarOnly, cfg);
    result.value_map = Some(vm);
    match traj {
        Ok(t) => result.final_trajectory = t,
        Err(f) => result.status = EpisodeStatus::failed(&f),
    }
    result
}

/// Which dispatch arms a transcript exercised.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct TranscriptSummary {
    pub observations: usize,
    pub error_feedback: usize,
    pub continues: usize,
    pub nudges: usize,
    pub plan_completed: bool,
}

/// Check that a transcript alternates user and assistant turns and that each
/// reply was answered by the branch its content calls for.
pub fn lint_transcript(msgs: &[ChatMessage]) -> Result<TranscriptSummary, String> {
    let first = msgs.first().ok_or("empty transcript")?;
    if first.role != Role::User || first.kind != MessageKind::InitialPrompt || first.image.is_none()
    {
        return Err("transcript must open with the initial prompt and image".into());
    }
    let mut s = TranscriptSummary::default();
    for (i, m) in msgs.iter().enumerate() {
        let expected = if i % 2 == 0 {
            Role::User
        } else {
            Role::Assistant
        };
        if m.role != expected {
            return Err(format!(
                "message {i} has role {:?}, expected {expected:?}",
                m.role
            ));
        }
        if m.role == Role::User && i > 0 && m.kind == MessageKind::InitialPrompt {
            return Err(format!("message {i} repeats the initial prompt"));
        }
        if m.role != Role::Assistant {
            continue;
        }
        let reply = parse_reply(&m.text);
        let Some(next) = msgs.get(i + 1) else {
            s.plan_completed = matches!(reply, Reply::Plan(_));
            break;
        };
        let ok = match reply {
            Reply::DetObject => next.kind == MessageKind::Observation && next.image.is_some(),
            Reply::FreeForm => matches!(next.kind, MessageKind::Continue | MessageKind::Nudge),
            Reply::Malformed(_) | Reply::Plan(_) => next.kind == MessageKind::ErrorFeedback,
        };
        if !ok {
            return Err(format!(
                "message {} ({:?}) does not answer reply {i}",
                i + 1,
                next.kind
            ));
        }
        match next.kind {
            MessageKind::Observation => s.observations += 1,
            MessageKind::ErrorFeedback => s.error_feedback += 1,
            MessageKind::Continue => s.continues += 1,
            MessageKind::Nudge => s.nudges += 1,
            _ => {}
        }
    }
    Ok(s)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryFile {
    pub scene_id: String,
    pub mode: String,
    pub config_hash: String,
    pub poses: Vec<[f64; 4]>,
}

impl TrajectoryFile {
    pub fn trajectory(&self) -> DenseTrajectory {
        DenseTrajectory {
            poses: self.poses.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoarseFile {
    pub scene_id: String,
    pub mode: String,
    pub config_hash: String,
    pub points: Vec<[f64; 2]>,
    pub regions: Vec<u32>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValueMapFile {
    pub scene_id: String,
    pub config_hash: String,
    pub value_map: ValueMap,
}

#[derive(Serialize)]
struct EpisodeSummary<'a> {
    scene_id: &'a str,
    instruction: &'a str,
    mode: Mode,
    status: &'a EpisodeStatus,
    retry_count: u32,
    config_hash: &'a str,
    poses: usize,
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> std::io::Result<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(std::io::Error::other)?;
    text.push('\n');
    std::fs::write(path, text)
}

/// Grids stay on one line; pretty-printing puts every cell on its own.
fn write_json_compact<T: Serialize>(path: &Path, value: &T) -> std::io::Result<()> {
    let mut text = serde_json::to_string(value).map_err(std::io::Error::other)?;
    text.push('\n');
    std::fs::write(path, text)
}

/// Write the episode artifacts into `dir` (created if missing).
pub fn write_episode(
    dir: &Path,
    result: &EpisodeResult,
    ctx: &SceneContext,
    cfg: &PipelineConfig,
) -> std::io::Result<()> {
    std::fs::create_dir_all(dir)?;
    let mode = result.mode.as_str().to_string();
    write_json(&dir.join("transcript.json"), &result.transcript)?;
    write_json(
        &dir.join("episode.json"),
        &EpisodeSummary {
            scene_id: &result.scene_id,
            instruction: &result.instruction,
            mode: result.mode,
            status: &result.status,
            retry_count: result.retry_count,
            config_hash: &result.config_hash,
            poses: result.final_trajectory.len(),
        },
    )?;
    write_json(
        &dir.join("coarse.json"),
        &CoarseFile {
            scene_id: result.scene_id.clone(),
            mode: mode.clone(),
            config_hash: result.config_hash.clone(),
            points: result.coarse_trajectory.clone(),
            regions: result.regions.clone(),
        },
    )?;
    write_json(
        &dir.join("trajectory.json"),
        &TrajectoryFile {
            scene_id: result.scene_id.clone(),
            mode,
            config_hash: result.config_hash.clone(),
            poses: result.final_trajectory.poses.clone(),
        },
    )?;
    let vm = result
        .value_map
        .clone()
        .unwrap_or_else(|| ctx.value_map(&ctx.all_drivable(), &cfg.map));
    let img = render::render_map(
        &vm,
        &[
            render::Overlay::coarse(&result.coarse_trajectory),
            render::Overlay::mode(result.mode, &result.final_trajectory.positions_2d()),
        ],
    );
    write_json_compact(
        &dir.join("valuemap.json"),
        &ValueMapFile {
            scene_id: result.scene_id.clone(),
            config_hash: result.config_hash.clone(),
            value_map: vm,
        },
    )?;
    img.save(dir.join("render.png"))
        .map_err(std::io::Error::other)
}
