use serde::{Deserialize, Serialize};

use super::PlanError;
use crate::bev::{Cell, Occupancy, OccupancyGrid};

/// Largest gap between consecutive poses of a dense trajectory (m).
pub const MAX_POSE_SPACING: f64 = 0.15;

const DUPLICATE_EPS: f64 = 1e-9;

/// Poses as `[x, y, z, heading]`, heading in radians from +x.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct DenseTrajectory {
    pub poses: Vec<[f64; 4]>,
}

impl DenseTrajectory {
    pub fn len(&self) -> usize {
        self.poses.len()
    }

    pub fn is_empty(&self) -> bool {
        self.poses.is_empty()
    }

    pub fn positions_2d(&self) -> Vec<[f64; 2]> {
        self.poses.iter().map(|p| [p[0], p[1]]).collect()
    }

    pub fn positions_3d(&self) -> Vec<[f64; 3]> {
        self.poses.iter().map(|p| [p[0], p[1], p[2]]).collect()
    }

    pub fn length(&self) -> f64 {
        self.poses
            .windows(2)
            .map(|w| (w[1][0] - w[0][0]).hypot(w[1][1] - w[0][1]))
            .sum()
    }
}

/// Insert evenly spaced points so no gap exceeds `max_step`.
pub fn densify(points: &[[f64; 2]], max_step: f64) -> Vec<[f64; 2]> {
    let Some(&first) = points.first() else {
        return Vec::new();
    };
    let mut out = vec![first];
    for w in points.windows(2) {
        let d = (w[1][0] - w[0][0]).hypot(w[1][1] - w[0][1]);
        let n = (d / max_step).ceil().max(1.0) as usize;
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

/// Turn a 2D polyline into poses at ground height with chord headings.
pub fn assign_headings(polyline: &[[f64; 2]], ground_z: f64) -> Result<DenseTrajectory, PlanError> {
    let mut pts: Vec<[f64; 2]> = Vec::with_capacity(polyline.len());
    for &p in polyline {
        match pts.last() {
            Some(q) if (p[0] - q[0]).hypot(p[1] - q[1]) <= DUPLICATE_EPS => {}
            _ => pts.push(p),
        }
    }
    if pts.len() < 2 {
        return Err(PlanError::TooShort(pts.len()));
    }
    let pts = densify(&pts, MAX_POSE_SPACING);
    let mut poses = Vec::with_capacity(pts.len());
    for k in 0..pts.len() {
        let (a, b) = if k + 1 < pts.len() {
            (pts[k], pts[k + 1])
        } else {
            (pts[k - 1], pts[k])
        };
        let heading = (b[1] - a[1]).atan2(b[0] - a[0]);
        poses.push([pts[k][0], pts[k][1], ground_z, heading]);
    }
    Ok(DenseTrajectory { poses })
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct CollisionReport {
    pub count: usize,
    pub first_index: Option<usize>,
    pub indices: Vec<usize>,
}

impl CollisionReport {
    pub fn is_clear(&self) -> bool {
        self.count == 0
    }
}

fn rect_distance(p: [f64; 2], lo: [f64; 2], hi: [f64; 2]) -> f64 {
    let dx = (lo[0] - p[0]).max(0.0).max(p[0] - hi[0]);
    let dy = (lo[1] - p[1]).max(0.0).max(p[1] - hi[1]);
    dx.hypot(dy)
}

fn pose_collides(p: [f64; 2], occ: &OccupancyGrid, radius: f64) -> bool {
    let spec = occ.spec;
    let Some(cell) = spec.cell_of(p) else {
        return false;
    };
    if occ.get(cell) == Occupancy::Occupied {
        return true;
    }
    if radius <= 0.0 {
        return false;
    }
    let Some((lo, hi)) = spec.cells_in_box(
        [p[0] - radius, p[1] - radius],
        [p[0] + radius, p[1] + radius],
    ) else {
        return false;
    };
    (lo.row..=hi.row).any(|r| {
        (lo.col..=hi.col).any(|c| {
            let cell = Cell::new(r, c);
            if occ.get(cell) != Occupancy::Occupied {
                return false;
            }
            let (a, b) = spec.bounds(cell);
            rect_distance(p, a, b) < radius
        })
    })
}

/// Poses whose footprint disc of `radius` overlaps an occupied cell. With a
/// zero radius only the containing cell matters; poses off the map never
/// collide.
pub fn check_collisions(
    traj: &DenseTrajectory,
    occ: &OccupancyGrid,
    radius: f64,
) -> CollisionReport {
    let indices: Vec<usize> = traj
        .poses
        .iter()
        .enumerate()
        .filter(|(_, p)| pose_collides([p[0], p[1]], occ, radius))
        .map(|(i, _)| i)
        .collect();
    CollisionReport {
        count: indices.len(),
        first_index: indices.first().copied(),
        indices,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bev::GridSpec;
    use std::f64::consts::FRAC_PI_2;

    #[test]
    fn headings_follow_chords() {
        let t = assign_headings(&[[0.0, 0.0], [0.1, 0.0], [0.1, 0.1]], 0.4).unwrap();
        assert_eq!(t.len(), 3);
        assert_eq!(t.poses[0][3], 0.0);
        assert!((t.poses[1][3] - FRAC_PI_2).abs() < 1e-12);
        assert_eq!(t.poses[2][3], t.poses[1][3]);
        assert!(t.poses.iter().all(|p| p[2] == 0.4));
    }

    #[test]
    fn duplicates_dropped_and_gaps_filled() {
        let t = assign_headings(&[[0.0, 0.0], [0.0, 0.0], [1.0, 0.0], [1.0, 0.0]], 0.0).unwrap();
        let xs = t.positions_2d();
        assert!(xs.windows(2).all(|w| {
            let d = (w[1][0] - w[0][0]).hypot(w[1][1] - w[0][1]);
            d > 0.0 && d <= MAX_POSE_SPACING
        }));
        assert_eq!(xs.last(), Some(&[1.0, 0.0]));
        assert!((t.length() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn too_short() {
        assert_eq!(
            assign_headings(&[[1.0, 1.0], [1.0, 1.0]], 0.0),
            Err(PlanError::TooShort(1))
        );
        assert_eq!(assign_headings(&[], 0.0), Err(PlanError::TooShort(0)));
    }

    fn grid() -> OccupancyGrid {
        let spec = GridSpec::new([0.0, 0.0], 1.0, 5, 5).unwrap();
        let mut g = OccupancyGrid::filled(spec, Occupancy::Free);
        g.set(Cell::new(2, 2), Occupancy::Occupied);
        g.set(Cell::new(0, 0), Occupancy::Unknown);
        g
    }

    #[test]
    fn collisions_by_radius() {
        let g = grid();
        let t = DenseTrajectory {
            poses: vec![
                [0.5, 0.5, 0.0, 0.0],
                [2.5, 2.5, 0.0, 0.0],
                [1.7, 2.5, 0.0, 0.0],
                [9.0, 9.0, 0.0, 0.0],
            ],
        };
        let r0 = check_collisions(&t, &g, 0.0);
        assert_eq!(r0.indices, vec![1]);
        assert_eq!(r0.first_index, Some(1));
        let r = check_collisions(&t, &g, 0.5);
        assert_eq!(r.indices, vec![1, 2]);
        // Exactly at the radius does not count.
        let edge = DenseTrajectory {
            poses: vec![[1.5, 2.5, 0.0, 0.0]],
        };
        assert!(check_collisions(&edge, &g, 0.5).is_clear());
        assert_eq!(check_collisions(&edge, &g, 0.5 + 1e-9).count, 1);
    }
}
