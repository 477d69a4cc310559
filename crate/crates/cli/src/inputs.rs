//! Input files owned by the CLI: instruction manifests and ground truth.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use vlnav::scene::{load_scene_bundle, resolve_relative, validate_scene, IssueCode, SceneBundle};

use crate::{CliError, CliResult};

fn default_task() -> String {
    "waypoint".into()
}

/// Ground truth for one episode.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GroundTruth {
    pub scene_id: String,
    #[serde(default = "default_task")]
    pub task_type: String,
    /// `[x, y]` or `[x, y, z]`.
    pub gt_end: Vec<f64>,
    #[serde(default)]
    pub gt_trajectory: Option<Vec<[f64; 2]>>,
}

/// One manifest episode. Paths are relative to the manifest file.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestEntry {
    pub scene: PathBuf,
    pub instruction: String,
    #[serde(default = "default_task")]
    pub task_type: String,
    pub gt_end: Vec<f64>,
    #[serde(default)]
    pub gt_trajectory: Option<Vec<[f64; 2]>>,
    /// Scripted replies for this episode.
    #[serde(default)]
    pub transcript: Option<PathBuf>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub episodes: Vec<ManifestEntry>,
}

impl Manifest {
    /// Loads the manifest and rewrites every path against its directory.
    pub fn load(path: &Path) -> CliResult<Self> {
        let mut m: Manifest = read_json(path, "manifest")?;
        if m.episodes.is_empty() {
            return Err(CliError::Input(format!(
                "manifest {} lists no episodes",
                path.display()
            )));
        }
        for e in &mut m.episodes {
            e.scene = resolve_relative(path, &e.scene.to_string_lossy());
            if let Some(t) = &e.transcript {
                e.transcript = Some(resolve_relative(path, &t.to_string_lossy()));
            }
            check_end(&e.gt_end, path)?;
        }
        Ok(m)
    }
}

pub fn check_end(end: &[f64], path: &Path) -> CliResult<()> {
    if (2..=3).contains(&end.len()) && end.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(CliError::Input(format!(
            "{}: gt_end must be 2 or 3 finite numbers, got {end:?}",
            path.display()
        )))
    }
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path, what: &str) -> CliResult<T> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::Input(format!("cannot read {what} {}: {e}", path.display())))?;
    serde_json::from_str(&text)
        .map_err(|e| CliError::Input(format!("bad {what} {}: {e}", path.display())))
}

/// Loads a bundle and refuses one that is not ready for planning. A missing
/// drivable region is reported with its issue code first on the line.
pub fn load_ready_scene(path: &Path) -> CliResult<SceneBundle> {
    let bundle = load_scene_bundle(path).map_err(|e| CliError::Input(e.to_string()))?;
    let report = validate_scene(&bundle);
    if let Some(issue) = report
        .issues
        .iter()
        .find(|i| i.code == IssueCode::NoDrivableRegion)
    {
        return Err(CliError::Input(format!("{}: {}", path.display(), issue)));
    }
    if !report.is_empty() {
        let lines: Vec<String> = report.issues.iter().map(|i| format!("  {i}")).collect();
        return Err(CliError::Input(format!(
            "{} failed validation:\n{}",
            path.display(),
            lines.join("\n")
        )));
    }
    Ok(bundle)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn manifest_paths_resolve_against_its_directory() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.json");
        std::fs::write(
            &path,
            r#"{"episodes": [{"scene": "s/a.json", "instruction": "go", "gt_end": [1, 2], "transcript": "t.json"}]}"#,
        )
        .unwrap();
        let m = Manifest::load(&path).unwrap();
        assert_eq!(m.episodes[0].scene, dir.path().join("s/a.json"));
        assert_eq!(
            m.episodes[0].transcript.as_deref(),
            Some(dir.path().join("t.json").as_path())
        );
        assert_eq!(m.episodes[0].task_type, "waypoint");
    }

    #[test]
    fn manifest_rejects_bad_endpoints_and_unknown_keys() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.json");
        std::fs::write(
            &path,
            r#"{"episodes": [{"scene": "a", "instruction": "go", "gt_end": [1]}]}"#,
        )
        .unwrap();
        assert!(Manifest::load(&path).is_err());
        std::fs::write(
            &path,
            r#"{"episodes": [{"scene": "a", "instruction": "go", "gt_end": [1, 2], "x": 1}]}"#,
        )
        .unwrap();
        assert!(Manifest::load(&path).is_err());
        std::fs::write(&path, r#"{"episodes": []}"#).unwrap();
        assert!(Manifest::load(&path).is_err());
    }
}
