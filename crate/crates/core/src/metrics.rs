//! Trajectory evaluation: navigation error, success, discrete Fréchet
//! distance, normalized DTW, collision counts and batch reports.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::bev::OccupancyGrid;
use crate::planner::{check_collisions, DenseTrajectory};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum MetricError {
    #[error("predicted trajectory is empty")]
    EmptyTrajectory,
    #[error("polyline input is empty")]
    EmptyInput,
    #[error("ground-truth endpoint must have 2 or 3 coordinates, got {0}")]
    InvalidEndpoint(usize),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    pub success_threshold: f64,
    pub ndtw_dth: f64,
    /// Average NE over unsuccessful episodes only.
    pub ne_failed_only: bool,
    /// Arc-length resampling applied to both polylines before Fréchet and
    /// NDTW; `None` compares the raw vertices.
    pub resample_step: Option<f64>,
    pub collision_radius: f64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            success_threshold: 1.0,
            ndtw_dth: 1.0,
            ne_failed_only: false,
            resample_step: Some(0.1),
            collision_radius: 0.5,
        }
    }
}

fn d2(a: [f64; 2], b: [f64; 2]) -> f64 {
    (a[0] - b[0]).hypot(a[1] - b[1])
}

/// Distance from the last pose to `gt_end`, in 3D when `gt_end` has a `z`.
pub fn navigation_error(pred: &DenseTrajectory, gt_end: &[f64]) -> Result<f64, MetricError> {
    let last = pred.poses.last().ok_or(MetricError::EmptyTrajectory)?;
    match *gt_end {
        [x, y] => Ok((last[0] - x).hypot(last[1] - y)),
        [x, y, z] => {
            let (dx, dy, dz) = (last[0] - x, last[1] - y, last[2] - z);
            Ok((dx * dx + dy * dy + dz * dz).sqrt())
        }
        _ => Err(MetricError::InvalidEndpoint(gt_end.len())),
    }
}

pub fn success(
    pred: &DenseTrajectory,
    gt_end: &[f64],
    cfg: &EvalConfig,
) -> Result<bool, MetricError> {
    Ok(navigation_error(pred, gt_end)? <= cfg.success_threshold)
}

/// Discrete Fréchet distance by the coupling dynamic program.
pub fn discrete_frechet(p: &[[f64; 2]], q: &[[f64; 2]]) -> Result<f64, MetricError> {
    if p.is_empty() || q.is_empty() {
        return Err(MetricError::EmptyInput);
    }
    let m = q.len();
    let mut prev = vec![0.0f64; m];
    let mut cur = vec![0.0f64; m];
    for (i, &a) in p.iter().enumerate() {
        for (j, &b) in q.iter().enumerate() {
            let d = d2(a, b);
            cur[j] = match (i, j) {
                (0, 0) => d,
                (0, _) => cur[j - 1].max(d),
                (_, 0) => prev[0].max(d),
                _ => prev[j].min(prev[j - 1]).min(cur[j - 1]).max(d),
            };
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    Ok(prev[m - 1])
}

/// Dynamic time warping cost with Euclidean point distance and no window.
pub fn dtw(p: &[[f64; 2]], q: &[[f64; 2]]) -> Result<f64, MetricError> {
    if p.is_empty() || q.is_empty() {
        return Err(MetricError::EmptyInput);
    }
    let m = q.len();
    let mut prev = vec![0.0f64; m];
    let mut cur = vec![0.0f64; m];
    for (i, &a) in p.iter().enumerate() {
        for (j, &b) in q.iter().enumerate() {
            let d = d2(a, b);
            cur[j] = d + match (i, j) {
                (0, 0) => 0.0,
                (0, _) => cur[j - 1],
                (_, 0) => prev[0],
                _ => prev[j].min(prev[j - 1]).min(cur[j - 1]),
            };
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    Ok(prev[m - 1])
}

/// `exp(-DTW(P, Q) / (|Q| * dth))`, with `Q` the reference.
pub fn ndtw(p: &[[f64; 2]], q: &[[f64; 2]], cfg: &EvalConfig) -> Result<f64, MetricError> {
    let cost = dtw(p, q)?;
    Ok((-cost / (q.len() as f64 * cfg.ndtw_dth)).exp())
}

/// Points spaced `step` apart along the polyline, plus its last vertex.
pub fn resample(points: &[[f64; 2]], step: f64) -> Vec<[f64; 2]> {
    if points.len() < 2 {
        return points.to_vec();
    }
    let mut out = vec![points[0]];
    let mut next = step;
    let mut travelled = 0.0;
    for w in points.windows(2) {
        let len = d2(w[0], w[1]);
        while len > 0.0 && next <= travelled + len {
            let s = (next - travelled) / len;
            out.push([
                w[0][0] + s * (w[1][0] - w[0][0]),
                w[0][1] + s * (w[1][1] - w[0][1]),
            ]);
            next += step;
        }
        travelled += len;
    }
    let last = *points.last().unwrap();
    if d2(*out.last().unwrap(), last) > 1e-9 {
        out.push(last);
    }
    out
}

/// One episode to score.
#[derive(Debug, Clone)]
pub struct EpisodeInput<'a> {
    pub scene_id: String,
    pub task_type: String,
    pub pred: Option<&'a DenseTrajectory>,
    pub gt_trajectory: Option<&'a [[f64; 2]]>,
    pub gt_end: Vec<f64>,
    pub occupancy: Option<&'a OccupancyGrid>,
    /// Reason the episode produced no trajectory, carried into the row.
    pub failure: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalRow {
    pub scene_id: String,
    pub task_type: String,
    pub ne: Option<f64>,
    pub success: Option<bool>,
    pub frechet: Option<f64>,
    pub ndtw: Option<f64>,
    pub collisions: Option<usize>,
    pub error: Option<String>,
}

impl EvalRow {
    pub fn is_valid(&self) -> bool {
        self.error.is_none()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Aggregates {
    pub episodes: usize,
    pub scored: usize,
    pub mean_ne: Option<f64>,
    pub successes: usize,
    pub sr: f64,
    pub sr_text: String,
    pub mean_frechet: Option<f64>,
    pub mean_ndtw: Option<f64>,
    /// Sum of colliding poses over scored episodes.
    pub total_collisions: usize,
    /// Scored episodes with at least one colliding pose.
    pub colliding_episodes: usize,
    pub collision_text: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub config: EvalConfig,
    pub rows: Vec<EvalRow>,
    pub aggregates: Aggregates,
}

fn score(ep: &EpisodeInput<'_>, cfg: &EvalConfig) -> EvalRow {
    let mut row = EvalRow {
        scene_id: ep.scene_id.clone(),
        task_type: ep.task_type.clone(),
        ne: None,
        success: None,
        frechet: None,
        ndtw: None,
        collisions: None,
        error: None,
    };
    let pred = match (ep.pred, &ep.failure) {
        (_, Some(reason)) => {
            row.error = Some(reason.clone());
            return row;
        }
        (Some(p), None) if !p.is_empty() => p,
        _ => {
            row.error = Some(MetricError::EmptyTrajectory.to_string());
            return row;
        }
    };
    let ne = match navigation_error(pred, &ep.gt_end) {
        Ok(v) => v,
        Err(e) => {
            row.error = Some(e.to_string());
            return row;
        }
    };
    row.ne = Some(ne);
    row.success = Some(ne <= cfg.success_threshold);
    if let Some(gt) = ep.gt_trajectory.filter(|g| !g.is_empty()) {
        let p2 = pred.positions_2d();
        let (p, q) = match cfg.resample_step {
            Some(step) => (resample(&p2, step), resample(gt, step)),
            None => (p2, gt.to_vec()),
        };
        row.frechet = discrete_frechet(&p, &q).ok();
        row.ndtw = ndtw(&p, &q, cfg).ok();
    }
    row.collisions = ep
        .occupancy
        .map(|occ| check_collisions(pred, occ, cfg.collision_radius).count);
    row
}

fn mean(values: impl Iterator<Item = f64>) -> Option<f64> {
    let (sum, n) = values.fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    (n > 0).then(|| sum / n as f64)
}

/// Aggregates recomputed from `rows`; rows carrying an error count toward
/// the episode total but not toward any mean.
pub fn aggregate(rows: &[EvalRow], cfg: &EvalConfig) -> Aggregates {
    let valid: Vec<&EvalRow> = rows.iter().filter(|r| r.is_valid()).collect();
    let successes = valid.iter().filter(|r| r.success == Some(true)).count();
    let ne_rows = valid
        .iter()
        .filter(|r| !cfg.ne_failed_only || r.success != Some(true));
    let with_collisions: Vec<usize> = valid.iter().filter_map(|r| r.collisions).collect();
    let colliding = with_collisions.iter().filter(|&&c| c > 0).count();
    let n = rows.len();
    Aggregates {
        episodes: n,
        scored: valid.len(),
        mean_ne: mean(ne_rows.filter_map(|r| r.ne)),
        successes,
        sr: if n == 0 {
            0.0
        } else {
            successes as f64 / n as f64
        },
        sr_text: format!("{successes}/{n}"),
        mean_frechet: mean(valid.iter().filter_map(|r| r.frechet)),
        mean_ndtw: mean(valid.iter().filter_map(|r| r.ndtw)),
        total_collisions: with_collisions.iter().sum(),
        colliding_episodes: colliding,
        collision_text: format!("{colliding}/{n}"),
    }
}

/// Score each episode in input order.
pub fn evaluate_batch(episodes: &[EpisodeInput<'_>], cfg: &EvalConfig) -> EvalReport {
    let rows: Vec<EvalRow> = episodes.iter().map(|e| score(e, cfg)).collect();
    let aggregates = aggregate(&rows, cfg);
    EvalReport {
        config: cfg.clone(),
        rows,
        aggregates,
    }
}

fn opt(v: Option<f64>, digits: usize) -> String {
    v.map_or_else(|| "-".to_string(), |x| format!("{x:.digits$}"))
}

fn render_table(header: &[&str], rows: &[Vec<String>]) -> String {
    let mut widths: Vec<usize> = header.iter().map(|h| h.chars().count()).collect();
    for r in rows {
        for (w, cell) in widths.iter_mut().zip(r) {
            *w = (*w).max(cell.chars().count());
        }
    }
    let line = |cells: &mut dyn Iterator<Item = &str>| {
        let mut s = String::new();
        for (i, (cell, w)) in cells.zip(&widths).enumerate() {
            if i > 0 {
                s.push_str("  ");
            }
            let pad = w - cell.chars().count();
            if i < 2 {
                s.push_str(cell);
                s.push_str(&" ".repeat(pad));
            } else {
                s.push_str(&" ".repeat(pad));
                s.push_str(cell);
            }
        }
        s.trim_end().to_string()
    };
    let mut out = line(&mut header.iter().copied());
    out.push('\n');
    let total: usize = widths.iter().sum::<usize>() + 2 * (widths.len() - 1);
    out.push_str(&"-".repeat(total));
    out.push('\n');
    for r in rows {
        out.push_str(&line(&mut r.iter().map(String::as_str)));
        out.push('\n');
    }
    out
}

impl EvalReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    /// Aligned per-episode table followed by an aggregate row.
    pub fn to_table(&self) -> String {
        let header = [
            "Scene",
            "Task",
            "NE",
            "Success",
            "Frechet",
            "NDTW",
            "Collision",
            "Error",
        ];
        let mut rows: Vec<Vec<String>> = self
            .rows
            .iter()
            .map(|r| {
                vec![
                    r.scene_id.clone(),
                    r.task_type.clone(),
                    opt(r.ne, 2),
                    r.success
                        .map_or("-".into(), |s| if s { "yes" } else { "no" }.into()),
                    opt(r.frechet, 2),
                    opt(r.ndtw, 2),
                    r.collisions.map_or("-".into(), |c| c.to_string()),
                    r.error.clone().unwrap_or_default(),
                ]
            })
            .collect();
        let a = &self.aggregates;
        rows.push(vec![
            "Total".into(),
            String::new(),
            opt(a.mean_ne, 2),
            format!("{} ({:.0}%)", a.sr_text, 100.0 * a.sr),
            opt(a.mean_frechet, 2),
            opt(a.mean_ndtw, 2),
            a.collision_text.clone(),
            String::new(),
        ]);
        render_table(&header, &rows)
    }
}

/// One row per labelled report with the ablation columns.
pub fn comparison_table(reports: &[(&str, &EvalReport)]) -> String {
    let header = ["Method", "", "Frechet", "NDTW", "Collision", "SR", "NE"];
    let rows: Vec<Vec<String>> = reports
        .iter()
        .map(|(label, r)| {
            let a = &r.aggregates;
            vec![
                label.to_string(),
                String::new(),
                opt(a.mean_frechet, 2),
                opt(a.mean_ndtw, 2),
                a.collision_text.clone(),
                a.sr_text.clone(),
                opt(a.mean_ne, 2),
            ]
        })
        .collect();
    render_table(&header, &rows)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn traj(points: &[[f64; 2]]) -> DenseTrajectory {
        DenseTrajectory {
            poses: points.iter().map(|p| [p[0], p[1], 0.0, 0.0]).collect(),
        }
    }

    #[test]
    fn ne_and_success() {
        let t = traj(&[[0.0, 0.0], [3.0, 4.0]]);
        assert_eq!(navigation_error(&t, &[0.0, 0.0]).unwrap(), 5.0);
        assert_eq!(navigation_error(&t, &[3.0, 4.0, 2.0]).unwrap(), 2.0);
        assert_eq!(
            navigation_error(&traj(&[]), &[0.0, 0.0]),
            Err(MetricError::EmptyTrajectory)
        );
        assert_eq!(
            navigation_error(&t, &[0.0]),
            Err(MetricError::InvalidEndpoint(1))
        );
        let cfg = EvalConfig::default();
        assert!(success(&t, &[3.0, 4.99], &cfg).unwrap());
        assert!(success(&t, &[3.0, 5.0], &cfg).unwrap());
        assert!(!success(&t, &[3.0, 5.01], &cfg).unwrap());
    }

    #[test]
    fn frechet_examples() {
        let p = [[0.0, 0.0], [1.0, 0.0]];
        let q = [[0.0, 1.0], [1.0, 1.0]];
        assert_eq!(discrete_frechet(&p, &q).unwrap(), 1.0);
        assert_eq!(discrete_frechet(&p, &p).unwrap(), 0.0);
        assert_eq!(discrete_frechet(&[], &p), Err(MetricError::EmptyInput));
    }

    #[test]
    fn ndtw_examples() {
        let cfg = EvalConfig::default();
        let v = ndtw(&[[0.0, 0.0]], &[[1.0, 0.0]], &cfg).unwrap();
        assert!((v - (-1.0f64).exp()).abs() < 1e-15);
        let p = [[0.0, 0.0], [1.0, 2.0], [3.0, 1.0]];
        assert_eq!(ndtw(&p, &p, &cfg).unwrap(), 1.0);
        // Repeating a vertex costs nothing under warping.
        let stretched = [[0.0, 0.0], [0.0, 0.0], [1.0, 2.0], [3.0, 1.0]];
        assert_eq!(dtw(&stretched, &p).unwrap(), 0.0);
    }

    #[test]
    fn resampling() {
        let r = resample(&[[0.0, 0.0], [1.0, 0.0], [1.0, 0.25]], 0.5);
        assert_eq!(r, vec![[0.0, 0.0], [0.5, 0.0], [1.0, 0.0], [1.0, 0.25]]);
        assert_eq!(resample(&[[2.0, 2.0]], 0.1), vec![[2.0, 2.0]]);
    }

    #[test]
    fn batch_flags_empty_rows() {
        let good = traj(&[[0.0, 0.0], [1.0, 0.0]]);
        let far = traj(&[[0.0, 0.0], [4.0, 0.0]]);
        let empty = traj(&[]);
        let gt = [[0.0, 0.0], [1.0, 0.0]];
        let mk = |p| EpisodeInput {
            scene_id: "s".into(),
            task_type: "t".into(),
            pred: Some(p),
            gt_trajectory: Some(&gt),
            gt_end: vec![1.0, 0.0],
            occupancy: None,
            failure: None,
        };
        let cfg = EvalConfig::default();
        let rep = evaluate_batch(&[mk(&good), mk(&far)], &cfg);
        assert_eq!(rep.aggregates.sr_text, "1/2");
        assert_eq!(rep.aggregates.mean_ne, Some(1.5));
        let rep = evaluate_batch(&[mk(&good), mk(&empty), mk(&far)], &cfg);
        assert!(rep.rows[1].error.is_some());
        assert_eq!(rep.aggregates.scored, 2);
        assert_eq!(rep.aggregates.mean_ne, Some(1.5));
        let failed_only = EvalConfig {
            ne_failed_only: true,
            ..cfg
        };
        assert_eq!(aggregate(&rep.rows, &failed_only).mean_ne, Some(3.0));
        let table = rep.to_table();
        assert!(table.contains("Frechet") && table.contains("NDTW") && table.contains("Collision"));
        assert!(table.lines().last().unwrap().starts_with("Total"));
        let cmp = comparison_table(&[("A*", &rep), ("OpenNav", &rep)]);
        assert_eq!(cmp.lines().count(), 4);
    }
}
