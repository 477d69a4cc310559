//! Scene bundles: the neutral on-disk format shared by the perception adapter
//! and the planner.
//!
//! A bundle is one JSON document per keyframe. Lengths are meters, angles are
//! radians, pixel coordinates are floats. The camera image is referenced by a
//! path relative to the bundle file and is never decoded here.
//!
//! Loading is strict about structure (missing fields, malformed masks,
//! improper rotations) and returns [`SceneError`]. Semantic problems that a
//! well-formed file can still have (no drivable region, mask vertices outside
//! the image, non-consecutive ids) are reported by [`validate_scene`], which
//! never fails.

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use nalgebra::{Matrix3, Point3, Vector3};
use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

/// Tolerance for `RᵀR = I` and `det R = 1`.
pub const ROTATION_TOLERANCE: f64 = 1e-6;

#[derive(Debug, Error)]
pub enum SceneError {
    #[error("cannot read scene bundle {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("scene bundle is not valid JSON: {0}")]
    Json(#[from] serde_json::Error),
    #[error("missing field `{field}`{}", id_suffix(*.detection_id))]
    MissingField {
        field: String,
        detection_id: Option<u32>,
    },
    #[error("field `{field}` has an invalid value: {reason}")]
    InvalidField { field: String, reason: String },
    #[error("malformed mask in `{field}`{}: {reason}", id_suffix(*.detection_id))]
    MalformedMask {
        field: String,
        detection_id: Option<u32>,
        reason: String,
    },
    #[error("`{field}` is not a proper rotation (orthonormality error {orthonormality_error:.3e}, det {determinant:.6})")]
    NonOrthonormalRotation {
        field: String,
        orthonormality_error: f64,
        determinant: f64,
    },
}

fn id_suffix(id: Option<u32>) -> String {
    id.map(|i| format!(" (detection {i})")).unwrap_or_default()
}

/// A rotation plus translation. Serialized as a row-major 3×3 `rotation` and a
/// `translation` 3-vector.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RigidTransform {
    pub rotation: [[f64; 3]; 3],
    pub translation: [f64; 3],
}

impl RigidTransform {
    pub fn identity() -> Self {
        Self {
            rotation: [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]],
            translation: [0.0; 3],
        }
    }

    pub fn from_translation(t: [f64; 3]) -> Self {
        Self {
            translation: t,
            ..Self::identity()
        }
    }

    /// Rotation about +z by `yaw` radians followed by `translation`.
    pub fn from_yaw(yaw: f64, translation: [f64; 3]) -> Self {
        let (s, c) = yaw.sin_cos();
        Self {
            rotation: [[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]],
            translation,
        }
    }

    pub fn rotation_matrix(&self) -> Matrix3<f64> {
        let r = &self.rotation;
        Matrix3::new(
            r[0][0], r[0][1], r[0][2], r[1][0], r[1][1], r[1][2], r[2][0], r[2][1], r[2][2],
        )
    }

    pub fn translation_vector(&self) -> Vector3<f64> {
        Vector3::from(self.translation)
    }

    pub fn apply(&self, p: [f64; 3]) -> [f64; 3] {
        let q = self.rotation_matrix() * Vector3::from(p) + self.translation_vector();
        [q.x, q.y, q.z]
    }

    pub fn apply_point(&self, p: &Point3<f64>) -> Point3<f64> {
        Point3::from(self.rotation_matrix() * p.coords + self.translation_vector())
    }

    /// Largest entry of `|RᵀR − I|` and the determinant.
    pub fn orthonormality(&self) -> (f64, f64) {
        let r = self.rotation_matrix();
        let err = (r.transpose() * r - Matrix3::identity()).abs().max();
        (err, r.determinant())
    }

    pub fn is_proper_rotation(&self) -> bool {
        let (err, det) = self.orthonormality();
        err <= ROTATION_TOLERANCE && (det - 1.0).abs() <= ROTATION_TOLERANCE
    }

    /// Heading of the transformed +x axis in the xy-plane.
    pub fn yaw(&self) -> f64 {
        self.rotation[1][0].atan2(self.rotation[0][0])
    }
}

/// Pinhole intrinsics. No distortion: bundles carry rectified images.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CameraModel {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: u32,
    pub height: u32,
}

impl CameraModel {
    pub fn is_valid(&self) -> bool {
        self.fx > 0.0
            && self.fy > 0.0
            && self.cx >= 0.0
            && self.cx < f64::from(self.width)
            && self.cy >= 0.0
            && self.cy < f64::from(self.height)
    }

    /// Polygon vertices may sit on the far image border, so the bounds are
    /// closed on both ends.
    pub fn contains_vertex(&self, p: [f64; 2]) -> bool {
        p[0] >= 0.0
            && p[0] <= f64::from(self.width)
            && p[1] >= 0.0
            && p[1] <= f64::from(self.height)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LidarScan {
    pub points: Vec<[f64; 3]>,
    #[serde(default)]
    pub timestamp: f64,
}

/// One closed ring of pixel coordinates. The closing edge is implicit.
pub type Polygon = Vec<[f64; 2]>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Detection {
    pub id: u32,
    pub caption: String,
    /// Rings combined with the even-odd rule, so inner rings cut holes.
    pub mask: Vec<Polygon>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub category_hint: Option<String>,
    pub is_drivable_region: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneBundle {
    pub scene_id: String,
    #[serde(default)]
    pub dataset: String,
    pub image_path: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub annotated_image_path: Option<String>,
    pub camera: CameraModel,
    /// LiDAR frame to camera frame.
    pub extrinsic: RigidTransform,
    /// LiDAR (vehicle) frame to world frame.
    pub vehicle_pose: RigidTransform,
    pub scan: LidarScan,
    pub detections: Vec<Detection>,
}

impl SceneBundle {
    pub fn detection(&self, id: u32) -> Option<&Detection> {
        self.detections.iter().find(|d| d.id == id)
    }

    pub fn drivable_ids(&self) -> Vec<u32> {
        self.detections
            .iter()
            .filter(|d| d.is_drivable_region)
            .map(|d| d.id)
            .collect()
    }

    /// Vehicle position in the world frame, projected to the ground plane.
    pub fn vehicle_position(&self) -> [f64; 2] {
        let t = self.vehicle_pose.translation;
        [t[0], t[1]]
    }

    /// The image the MLLM should see: the annotated copy when present.
    pub fn prompt_image(&self) -> &str {
        self.annotated_image_path
            .as_deref()
            .unwrap_or(&self.image_path)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("scene bundles always serialize")
    }
}

/// Reads and structurally checks a bundle file. Paths inside the bundle are
/// kept as written; see [`resolve_relative`].
pub fn load_scene_bundle(path: &Path) -> Result<SceneBundle, SceneError> {
    let text = fs::read_to_string(path).map_err(|source| SceneError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    parse_scene_bundle(&text)
}

/// Resolves a path stored in a bundle against the bundle file's directory.
pub fn resolve_relative(bundle_file: &Path, stored: &str) -> PathBuf {
    let candidate = Path::new(stored);
    match bundle_file.parent() {
        Some(dir) if !candidate.is_absolute() => dir.join(candidate),
        _ => candidate.to_path_buf(),
    }
}

/// Parses bundle JSON without touching the filesystem.
pub fn parse_scene_bundle(text: &str) -> Result<SceneBundle, SceneError> {
    let root: Value = serde_json::from_str(text)?;
    check_structure(&root)?;
    let bundle: SceneBundle = serde_json::from_value(root)?;
    check_rotation("extrinsic", &bundle.extrinsic)?;
    check_rotation("vehicle_pose", &bundle.vehicle_pose)?;
    Ok(bundle)
}

fn check_rotation(field: &str, t: &RigidTransform) -> Result<(), SceneError> {
    if t.is_proper_rotation() {
        return Ok(());
    }
    let (err, det) = t.orthonormality();
    Err(SceneError::NonOrthonormalRotation {
        field: format!("{field}.rotation"),
        orthonormality_error: err,
        determinant: det,
    })
}

fn missing(field: impl Into<String>, detection_id: Option<u32>) -> SceneError {
    SceneError::MissingField {
        field: field.into(),
        detection_id,
    }
}

/// Walks the raw document so missing fields are reported by path, with the
/// detection id when the field belongs to a detection.
fn check_structure(root: &Value) -> Result<(), SceneError> {
    const TOP: [&str; 7] = [
        "scene_id",
        "image_path",
        "camera",
        "extrinsic",
        "vehicle_pose",
        "scan",
        "detections",
    ];
    for key in TOP {
        if root.get(key).is_none() {
            return Err(missing(key, None));
        }
    }
    for key in ["fx", "fy", "cx", "cy", "width", "height"] {
        if root["camera"].get(key).is_none() {
            return Err(missing(format!("camera.{key}"), None));
        }
    }
    for t in ["extrinsic", "vehicle_pose"] {
        for key in ["rotation", "translation"] {
            if root[t].get(key).is_none() {
                return Err(missing(format!("{t}.{key}"), None));
            }
        }
    }
    if root["scan"].get("points").is_none() {
        return Err(missing("scan.points", None));
    }
    let detections = root["detections"]
        .as_array()
        .ok_or_else(|| SceneError::InvalidField {
            field: "detections".into(),
            reason: "expected an array".into(),
        })?;
    for (i, det) in detections.iter().enumerate() {
        let id = det.get("id").and_then(Value::as_u64).map(|v| v as u32);
        for key in ["id", "caption", "mask", "is_drivable_region"] {
            if det.get(key).is_none() {
                return Err(missing(format!("detections[{i}].{key}"), id));
            }
        }
        check_mask(&format!("detections[{i}].mask"), id, &det["mask"])?;
    }
    Ok(())
}

fn check_mask(field: &str, id: Option<u32>, mask: &Value) -> Result<(), SceneError> {
    let malformed = |reason: String| SceneError::MalformedMask {
        field: field.to_string(),
        detection_id: id,
        reason,
    };
    let rings = mask
        .as_array()
        .ok_or_else(|| malformed("expected a list of polygons".into()))?;
    if rings.is_empty() {
        return Err(malformed("mask has no polygons".into()));
    }
    for (r, ring) in rings.iter().enumerate() {
        let verts = ring
            .as_array()
            .ok_or_else(|| malformed(format!("polygon {r} is not a vertex list")))?;
        if verts.len() < 3 {
            return Err(malformed(format!(
                "polygon {r} has {} vertices, need at least 3",
                verts.len()
            )));
        }
        for (v, vert) in verts.iter().enumerate() {
            let ok = vert.as_array().is_some_and(|xy| {
                xy.len() == 2 && xy.iter().all(|c| c.as_f64().is_some_and(f64::is_finite))
            });
            if !ok {
                return Err(malformed(format!(
                    "polygon {r} vertex {v} is not a finite [x, y] pair"
                )));
            }
        }
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum IssueCode {
    NoDrivableRegion,
    MaskOutOfBounds,
    MalformedMask,
    DuplicateId,
    NonConsecutiveIds,
    InvalidCamera,
    NonOrthonormalRotation,
    NonFinitePoint,
    EmptyScan,
}

impl fmt::Display for IssueCode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let v = serde_json::to_value(self).expect("unit variant");
        f.write_str(v.as_str().unwrap_or("UNKNOWN"))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValidationIssue {
    pub code: IssueCode,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub detection_id: Option<u32>,
    pub message: String,
}

impl fmt::Display for ValidationIssue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.code)?;
        if let Some(id) = self.detection_id {
            write!(f, " (detection {id})")?;
        }
        write!(f, ": {}", self.message)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub issues: Vec<ValidationIssue>,
}

impl ValidationReport {
    pub fn is_empty(&self) -> bool {
        self.issues.is_empty()
    }

    pub fn has(&self, code: IssueCode) -> bool {
        self.issues.iter().any(|i| i.code == code)
    }

    fn push(&mut self, code: IssueCode, detection_id: Option<u32>, message: impl Into<String>) {
        self.issues.push(ValidationIssue {
            code,
            detection_id,
            message: message.into(),
        });
    }
}

/// Lists every violated bundle invariant. An empty report means the bundle is
/// ready for planning.
pub fn validate_scene(bundle: &SceneBundle) -> ValidationReport {
    let mut report = ValidationReport::default();
    let cam = &bundle.camera;
    if !cam.is_valid() {
        report.push(
            IssueCode::InvalidCamera,
            None,
            format!(
                "intrinsics fx={} fy={} cx={} cy={} do not fit a {}x{} image",
                cam.fx, cam.fy, cam.cx, cam.cy, cam.width, cam.height
            ),
        );
    }
    for (name, t) in [
        ("extrinsic", &bundle.extrinsic),
        ("vehicle_pose", &bundle.vehicle_pose),
    ] {
        if !t.is_proper_rotation() {
            let (err, det) = t.orthonormality();
            report.push(
                IssueCode::NonOrthonormalRotation,
                None,
                format!("{name} rotation error {err:.3e}, det {det:.6}"),
            );
        }
    }
    if bundle.scan.points.is_empty() {
        report.push(IssueCode::EmptyScan, None, "scan has no points");
    }
    if let Some(k) = bundle
        .scan
        .points
        .iter()
        .position(|p| p.iter().any(|c| !c.is_finite()))
    {
        report.push(
            IssueCode::NonFinitePoint,
            None,
            format!("scan point {k} has a non-finite coordinate"),
        );
    }

    let mut counts: BTreeMap<u32, usize> = BTreeMap::new();
    for d in &bundle.detections {
        *counts.entry(d.id).or_default() += 1;
    }
    for (&id, &n) in &counts {
        if n > 1 {
            report.push(
                IssueCode::DuplicateId,
                Some(id),
                format!("id appears {n} times"),
            );
        }
    }
    let ids: Vec<u32> = counts.keys().copied().collect();
    if ids.iter().enumerate().any(|(i, &id)| id as usize != i) {
        report.push(
            IssueCode::NonConsecutiveIds,
            None,
            format!("detection ids {ids:?} are not consecutive from 0"),
        );
    }

    for det in &bundle.detections {
        if det.mask.is_empty() || det.mask.iter().any(|ring| ring.len() < 3) {
            report.push(
                IssueCode::MalformedMask,
                Some(det.id),
                "mask needs at least one polygon of 3 or more vertices",
            );
        }
        let outside = det
            .mask
            .iter()
            .flatten()
            .find(|v| !v.iter().all(|c| c.is_finite()) || !cam.contains_vertex(**v));
        if let Some(v) = outside {
            report.push(
                IssueCode::MaskOutOfBounds,
                Some(det.id),
                format!(
                    "vertex ({}, {}) outside the {}x{} image",
                    v[0], v[1], cam.width, cam.height
                ),
            );
        }
    }
    if !bundle.detections.iter().any(|d| d.is_drivable_region) {
        report.push(
            IssueCode::NoDrivableRegion,
            None,
            "no detection is flagged as a drivable region",
        );
    }
    report
}
