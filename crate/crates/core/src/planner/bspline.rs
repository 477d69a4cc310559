//! Clamped uniform B-splines and the collision-repairing smoother.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use super::{CellPath, PlanError};
use crate::bev::{Cell, ValueMap};

const MAX_SAMPLES: usize = 1 << 20;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SmoothingParams {
    /// Arc-length spacing between retained control points (m).
    pub control_spacing: f64,
    /// Upper bound on the chord between consecutive samples (m).
    pub sample_spacing: f64,
}

impl Default for SmoothingParams {
    fn default() -> Self {
        Self {
            control_spacing: 1.0,
            sample_spacing: 0.1,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BSpline {
    degree: usize,
    knots: Vec<f64>,
    ctrl: Vec<[f64; 2]>,
}

impl BSpline {
    /// Clamped uniform spline of degree `min(degree, n - 1)`.
    ///
    /// # Panics
    /// If `ctrl` is empty.
    pub fn clamped(ctrl: Vec<[f64; 2]>, degree: usize) -> Self {
        assert!(!ctrl.is_empty(), "B-spline needs a control point");
        let n = ctrl.len() - 1;
        let p = degree.min(n);
        let mut knots = vec![0.0; p + 1];
        let interior = n - p;
        for j in 1..=interior {
            knots.push(j as f64 / (interior + 1) as f64);
        }
        knots.extend(std::iter::repeat_n(1.0, p + 1));
        Self {
            degree: p,
            knots,
            ctrl,
        }
    }

    pub fn degree(&self) -> usize {
        self.degree
    }

    pub fn knots(&self) -> &[f64] {
        &self.knots
    }

    pub fn control_points(&self) -> &[[f64; 2]] {
        &self.ctrl
    }

    /// Knot span `k` with `t[k] <= u < t[k+1]`; `u = 1` maps to the last span.
    pub fn span(&self, u: f64) -> usize {
        let n = self.ctrl.len() - 1;
        let p = self.degree;
        if u >= self.knots[n + 1] {
            return n;
        }
        if u <= self.knots[p] {
            return p;
        }
        // knots[p..=n+1] is sorted; find the last index with knots[k] <= u.
        let slice = &self.knots[p..=n + 1];
        p + slice.partition_point(|&t| t <= u) - 1
    }

    /// de Boor evaluation at `u` in [0, 1].
    pub fn eval(&self, u: f64) -> [f64; 2] {
        let u = u.clamp(0.0, 1.0);
        let p = self.degree;
        if p == 0 {
            return self.ctrl[0];
        }
        let k = self.span(u);
        let t = &self.knots;
        let mut d: Vec<[f64; 2]> = (0..=p).map(|j| self.ctrl[j + k - p]).collect();
        for r in 1..=p {
            for j in (r..=p).rev() {
                let lo = t[j + k - p];
                let hi = t[j + 1 + k - r];
                let alpha = if hi > lo { (u - lo) / (hi - lo) } else { 0.0 };
                d[j] = [
                    (1.0 - alpha) * d[j - 1][0] + alpha * d[j][0],
                    (1.0 - alpha) * d[j - 1][1] + alpha * d[j][1],
                ];
            }
        }
        d[p]
    }

    /// Uniform-in-u samples, doubling the count until every chord is at most
    /// `max_chord`.
    pub fn sample(&self, max_chord: f64) -> Vec<(f64, [f64; 2])> {
        let hull: f64 = self.ctrl.windows(2).map(|w| dist(w[0], w[1])).sum();
        let mut count = ((hull / max_chord).ceil() as usize + 1).max(2);
        loop {
            let samples: Vec<(f64, [f64; 2])> = (0..count)
                .map(|i| {
                    let u = i as f64 / (count - 1) as f64;
                    (u, self.eval(u))
                })
                .collect();
            let ok = samples
                .windows(2)
                .all(|w| dist(w[0].1, w[1].1) <= max_chord);
            if ok || count >= MAX_SAMPLES {
                return samples;
            }
            count = 2 * count - 1;
        }
    }
}

fn dist(a: [f64; 2], b: [f64; 2]) -> f64 {
    (a[0] - b[0]).hypot(a[1] - b[1])
}

/// Indices kept when thinning `points` to roughly one per `spacing` metres
/// of arc length. The first and last index are always kept.
pub fn decimate(points: &[[f64; 2]], spacing: f64) -> Vec<usize> {
    if points.is_empty() {
        return Vec::new();
    }
    let mut kept = vec![0];
    let mut acc = 0.0;
    for i in 1..points.len() {
        acc += dist(points[i - 1], points[i]);
        if acc >= spacing {
            kept.push(i);
            acc = 0.0;
        }
    }
    let last = points.len() - 1;
    if *kept.last().unwrap() != last {
        kept.push(last);
    }
    kept
}

/// Smooth an arbitrary polyline with no collision handling.
pub fn smooth_polyline(points: &[[f64; 2]], params: SmoothingParams) -> Vec<[f64; 2]> {
    if points.len() < 2 {
        return points.to_vec();
    }
    let ctrl: Vec<[f64; 2]> = decimate(points, params.control_spacing)
        .into_iter()
        .map(|i| points[i])
        .collect();
    BSpline::clamped(ctrl, 3)
        .sample(params.sample_spacing)
        .into_iter()
        .map(|(_, p)| p)
        .collect()
}

/// Whether the segment `a`-`b` touches a blocked (or off-map) cell. Cells
/// are walked exactly; passing through a cell corner also tests both
/// side cells.
pub fn segment_blocked(vm: &ValueMap, a: [f64; 2], b: [f64; 2]) -> bool {
    let spec = vm.spec;
    let blocked = |row: i64, col: i64| {
        row < 0
            || col < 0
            || row as usize >= spec.rows
            || col as usize >= spec.cols
            || vm.is_blocked(Cell::new(row as usize, col as usize))
    };
    let gx0 = (a[0] - spec.origin[0]) / spec.resolution;
    let gy0 = (a[1] - spec.origin[1]) / spec.resolution;
    let dx = (b[0] - spec.origin[0]) / spec.resolution - gx0;
    let dy = (b[1] - spec.origin[1]) / spec.resolution - gy0;
    let mut col = gx0.floor() as i64;
    let mut row = gy0.floor() as i64;
    let step_c: i64 = if dx > 0.0 { 1 } else { -1 };
    let step_r: i64 = if dy > 0.0 { 1 } else { -1 };
    let next_boundary = |g: f64, cell: i64, d: f64| {
        if d > 0.0 {
            (cell as f64 + 1.0 - g) / d
        } else if d < 0.0 {
            (g - cell as f64) / -d
        } else {
            f64::INFINITY
        }
    };
    let mut t_x = next_boundary(gx0, col, dx);
    let mut t_y = next_boundary(gy0, row, dy);
    let dt_x = if dx != 0.0 {
        1.0 / dx.abs()
    } else {
        f64::INFINITY
    };
    let dt_y = if dy != 0.0 {
        1.0 / dy.abs()
    } else {
        f64::INFINITY
    };

    loop {
        if blocked(row, col) {
            return true;
        }
        let t = t_x.min(t_y);
        if t > 1.0 {
            return false;
        }
        if t_x < t_y {
            col += step_c;
            t_x += dt_x;
        } else if t_y < t_x {
            row += step_r;
            t_y += dt_y;
        } else {
            if blocked(row, col + step_c) || blocked(row + step_r, col) {
                return true;
            }
            col += step_c;
            row += step_r;
            t_x += dt_x;
            t_y += dt_y;
        }
    }
}

fn polyline_blocked(vm: &ValueMap, pts: &[[f64; 2]]) -> Option<usize> {
    if pts.len() == 1 && vm.is_blocked_at(pts[0]) {
        return Some(0);
    }
    pts.windows(2)
        .position(|w| segment_blocked(vm, w[0], w[1]))
        .map(|i| i + 1)
}

fn densify_to(points: &[[f64; 2]], step: f64) -> Vec<[f64; 2]> {
    let mut out = vec![points[0]];
    for w in points.windows(2) {
        let n = (dist(w[0], w[1]) / step).ceil().max(1.0) as usize;
        for i in 1..=n {
            let s = i as f64 / n as f64;
            out.push([
                w[0][0] + s * (w[1][0] - w[0][0]),
                w[0][1] + s * (w[1][1] - w[0][1]),
            ]);
        }
    }
    out
}

/// Smooth an A* cell path into a dense, collision-free polyline.
///
/// Samples that cross a blocked cell pull the original path cells spanned by
/// the offending control points back into the control polygon, and the
/// spline is refit. If that cannot clear the collision the densified cell
/// path itself is returned.
pub fn smooth_bspline(
    path: &CellPath,
    vm: &ValueMap,
    params: SmoothingParams,
) -> Result<Vec<[f64; 2]>, PlanError> {
    if path.cells.len() < 2 {
        return Err(PlanError::PathTooShort(path.cells.len()));
    }
    let centers: Vec<[f64; 2]> = path.cells.iter().map(|&c| vm.spec.center(c)).collect();
    let mut ctrl_idx: BTreeSet<usize> = decimate(&centers, params.control_spacing)
        .into_iter()
        .collect();

    for _ in 0..centers.len() {
        let idx: Vec<usize> = ctrl_idx.iter().copied().collect();
        let spline = BSpline::clamped(idx.iter().map(|&i| centers[i]).collect(), 3);
        let samples = spline.sample(params.sample_spacing);
        let pts: Vec<[f64; 2]> = samples.iter().map(|s| s.1).collect();
        let Some(hit) = polyline_blocked(vm, &pts) else {
            return Ok(pts);
        };
        let span = spline.span(samples[hit].0);
        let lo = idx[span.saturating_sub(spline.degree())];
        let hi = idx[span.min(idx.len() - 1)];
        let before = ctrl_idx.len();
        ctrl_idx.extend(lo..=hi);
        if ctrl_idx.len() == before {
            // The segment ending at the hit may sit in the preceding span.
            let prev = spline.span(samples[hit - 1].0);
            let lo = idx[prev.saturating_sub(spline.degree())];
            ctrl_idx.extend(lo..=hi);
            if ctrl_idx.len() == before {
                break;
            }
        }
    }

    let raw = densify_to(&centers, params.sample_spacing);
    match polyline_blocked(vm, &raw) {
        None => Ok(raw),
        Some(_) => Err(PlanError::SmoothingCollisionUnresolvable),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bev::{CostLevels, GridSpec};
    use crate::planner::astar;

    #[test]
    fn clamped_knots() {
        let s = BSpline::clamped(vec![[0.0, 0.0]; 6], 3);
        assert_eq!(
            s.knots(),
            &[0.0, 0.0, 0.0, 0.0, 1.0 / 3.0, 2.0 / 3.0, 1.0, 1.0, 1.0, 1.0]
        );
        let s = BSpline::clamped(vec![[0.0, 0.0]; 2], 3);
        assert_eq!(s.degree(), 1);
        assert_eq!(s.knots(), &[0.0, 0.0, 1.0, 1.0]);
    }

    #[test]
    fn endpoints_interpolated() {
        let ctrl = vec![[0.0, 0.0], [1.0, 2.0], [3.0, -1.0], [4.0, 0.5], [6.0, 1.0]];
        let s = BSpline::clamped(ctrl.clone(), 3);
        assert_eq!(s.eval(0.0), ctrl[0]);
        let end = s.eval(1.0);
        assert!((end[0] - 6.0).abs() < 1e-12 && (end[1] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn quadratic_bezier_midpoint() {
        // Three control points give a quadratic Bezier: B(1/2) = P0/4 + P1/2 + P2/4.
        let s = BSpline::clamped(vec![[0.5, 0.5], [1.5, 0.5], [1.5, 1.5]], 3);
        assert_eq!(s.degree(), 2);
        let m = s.eval(0.5);
        assert!((m[0] - 1.25).abs() < 1e-12);
        assert!((m[1] - 0.75).abs() < 1e-12);
    }

    #[test]
    fn cubic_matches_bernstein_form() {
        let p = [[0.0, 0.0], [1.0, 3.0], [4.0, 3.0], [5.0, 0.0]];
        let s = BSpline::clamped(p.to_vec(), 3);
        for i in 0..=20 {
            let u = i as f64 / 20.0;
            let b = [
                (1.0 - u).powi(3),
                3.0 * u * (1.0 - u).powi(2),
                3.0 * u * u * (1.0 - u),
                u.powi(3),
            ];
            let x: f64 = (0..4).map(|j| b[j] * p[j][0]).sum();
            let y: f64 = (0..4).map(|j| b[j] * p[j][1]).sum();
            let e = s.eval(u);
            assert!((e[0] - x).abs() < 1e-12 && (e[1] - y).abs() < 1e-12);
        }
    }

    #[test]
    fn sample_chords_bounded() {
        let s = BSpline::clamped(vec![[0.0, 0.0], [10.0, 0.0], [10.0, 10.0], [0.0, 10.0]], 3);
        let pts = s.sample(0.1);
        assert!(pts.windows(2).all(|w| dist(w[0].1, w[1].1) <= 0.1));
        assert_eq!(pts[0].0, 0.0);
        assert_eq!(pts.last().unwrap().0, 1.0);
    }

    #[test]
    fn decimation_keeps_ends() {
        let pts: Vec<[f64; 2]> = (0..=25).map(|i| [i as f64 * 0.2, 0.0]).collect();
        let idx = decimate(&pts, 1.0);
        assert_eq!(idx.first(), Some(&0));
        assert_eq!(idx.last(), Some(&25));
        assert_eq!(idx, vec![0, 5, 10, 15, 20, 25]);
    }

    #[test]
    fn segment_walk() {
        let spec = GridSpec::new([0.0, 0.0], 1.0, 4, 4).unwrap();
        let mut vm = ValueMap::uniform(spec, CostLevels::default(), 10.0);
        vm.set(Cell::new(1, 2), 1000.0);
        assert!(segment_blocked(&vm, [0.5, 1.5], [3.5, 1.5]));
        assert!(!segment_blocked(&vm, [0.5, 0.5], [3.5, 0.5]));
        // Clips the corner region of cell (1, 2) only on a shallow diagonal.
        assert!(segment_blocked(&vm, [0.5, 0.5], [3.5, 1.9]));
        // Exactly through a corner whose side cell (1, 2) is blocked.
        assert!(segment_blocked(&vm, [1.5, 1.5], [2.5, 0.5]));
        assert!(!segment_blocked(&vm, [0.5, 1.5], [1.5, 2.5]));
        assert!(segment_blocked(&vm, [0.5, 0.5], [2.5, 2.5]));
        assert!(segment_blocked(&vm, [0.5, 0.5], [5.0, 0.5]));
    }

    #[test]
    fn smoothing_avoids_blocked_corner() {
        // L-shaped corridor: the spline would cut the inner corner.
        let spec = GridSpec::new([0.0, 0.0], 0.2, 30, 30).unwrap();
        let mut vm = ValueMap::uniform(spec, CostLevels::default(), 1000.0);
        for c in 0..30 {
            vm.set(Cell::new(0, c), 10.0);
        }
        for r in 0..30 {
            vm.set(Cell::new(r, 29), 10.0);
        }
        let path = astar(&vm, [0.1, 0.1], [5.9, 5.9]).unwrap();
        let out = smooth_bspline(&path, &vm, SmoothingParams::default()).unwrap();
        assert!(polyline_blocked(&vm, &out).is_none());
        assert!(out.windows(2).all(|w| dist(w[0], w[1]) <= 0.1 + 1e-12));
        assert_eq!(out[0], [0.1, 0.1]);
    }

    #[test]
    fn smoothing_rejects_single_cell() {
        let spec = GridSpec::new([0.0, 0.0], 0.2, 3, 3).unwrap();
        let vm = ValueMap::uniform(spec, CostLevels::default(), 10.0);
        let path = CellPath {
            cells: vec![Cell::new(1, 1)],
            total_cost: 0.0,
        };
        assert_eq!(
            smooth_bspline(&path, &vm, SmoothingParams::default()),
            Err(PlanError::PathTooShort(1))
        );
    }
}
