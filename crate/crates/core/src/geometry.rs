//! LiDAR-to-mask association and per-object 3D attributes.
//!
//! An object's point set is every scan point whose pinhole projection lands
//! inside the detection mask. Mask membership uses the even-odd rule over all
//! rings with points on an edge counted as inside.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::bev::{Cell, Occupancy, OccupancyGrid, SemanticGrid};
use crate::scene::{CameraModel, Detection, LidarScan, Polygon, RigidTransform, SceneBundle};

#[derive(Debug, Clone, Error, PartialEq, Eq)]
pub enum GeometryError {
    #[error("no LiDAR point projects into the mask of detection {detection_id}")]
    EmptyObjectPoints { detection_id: u32 },
    #[error("every cell of drivable region {region_id} is occupied")]
    RegionFullyBlocked { region_id: u32 },
}

/// Projects a LiDAR-frame point to pixel coordinates. `None` when the point is
/// behind the camera or lands outside `[0, width) × [0, height)`.
pub fn project_point(l: [f64; 3], cam: &CameraModel, ext: &RigidTransform) -> Option<[f64; 2]> {
    let p = ext.apply(l);
    if p[2].is_nan() || p[2] <= 0.0 {
        return None;
    }
    let u = cam.fx * p[0] / p[2] + cam.cx;
    let v = cam.fy * p[1] / p[2] + cam.cy;
    let inside = u >= 0.0 && u < f64::from(cam.width) && v >= 0.0 && v < f64::from(cam.height);
    inside.then_some([u, v])
}

fn on_segment(p: [f64; 2], a: [f64; 2], b: [f64; 2]) -> bool {
    let cross = (b[0] - a[0]) * (p[1] - a[1]) - (b[1] - a[1]) * (p[0] - a[0]);
    cross == 0.0
        && p[0] >= a[0].min(b[0])
        && p[0] <= a[0].max(b[0])
        && p[1] >= a[1].min(b[1])
        && p[1] <= a[1].max(b[1])
}

fn ring_edges(ring: &Polygon) -> impl Iterator<Item = ([f64; 2], [f64; 2])> + '_ {
    let n = ring.len();
    (0..n).map(move |i| (ring[i], ring[(i + 1) % n]))
}

/// Even-odd membership over all rings, boundary-inclusive.
pub fn point_in_mask(p: [f64; 2], mask: &[Polygon]) -> bool {
    if mask
        .iter()
        .flat_map(ring_edges)
        .any(|(a, b)| on_segment(p, a, b))
    {
        return true;
    }
    let mut inside = false;
    for (a, b) in mask.iter().flat_map(ring_edges) {
        if (a[1] > p[1]) != (b[1] > p[1]) {
            let x = a[0] + (p[1] - a[1]) * (b[0] - a[0]) / (b[1] - a[1]);
            if p[0] < x {
                inside = !inside;
            }
        }
    }
    inside
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObjectGeometry {
    pub detection_id: u32,
    pub points_world: Vec<[f64; 3]>,
    pub centroid: [f64; 3],
    /// Axis-aligned extents in the world frame.
    pub dimensions: [f64; 3],
}

impl ObjectGeometry {
    /// Builds centroid and extents from world points. Panics on an empty set.
    pub fn from_points(detection_id: u32, points_world: Vec<[f64; 3]>) -> Self {
        assert!(!points_world.is_empty(), "object needs at least one point");
        let mut lo = [f64::INFINITY; 3];
        let mut hi = [f64::NEG_INFINITY; 3];
        let mut sum = [0.0; 3];
        for p in &points_world {
            for k in 0..3 {
                lo[k] = lo[k].min(p[k]);
                hi[k] = hi[k].max(p[k]);
                sum[k] += p[k];
            }
        }
        let n = points_world.len() as f64;
        // rounding in the mean can step just past the box
        let centroid = std::array::from_fn(|k| (sum[k] / n).clamp(lo[k], hi[k]));
        let dimensions = std::array::from_fn(|k| hi[k] - lo[k]);
        Self {
            detection_id,
            points_world,
            centroid,
            dimensions,
        }
    }

    pub fn centroid_2d(&self) -> [f64; 2] {
        [self.centroid[0], self.centroid[1]]
    }
}

/// Collects the scan points whose projection falls in the detection mask and
/// moves them to the world frame with `pose`.
pub fn extract_object_points(
    scan: &LidarScan,
    det: &Detection,
    cam: &CameraModel,
    ext: &RigidTransform,
    pose: &RigidTransform,
) -> Result<ObjectGeometry, GeometryError> {
    let points: Vec<[f64; 3]> = scan
        .points
        .iter()
        .filter(|&&l| project_point(l, cam, ext).is_some_and(|px| point_in_mask(px, &det.mask)))
        .map(|&l| pose.apply(l))
        .collect();
    if points.is_empty() {
        return Err(GeometryError::EmptyObjectPoints {
            detection_id: det.id,
        });
    }
    Ok(ObjectGeometry::from_points(det.id, points))
}

/// Runs extraction for every detection. Detections without LiDAR support are
/// returned separately rather than failing the scene.
pub fn extract_all(bundle: &SceneBundle) -> (Vec<ObjectGeometry>, Vec<GeometryError>) {
    let mut objects = Vec::new();
    let mut unsupported = Vec::new();
    for det in &bundle.detections {
        match extract_object_points(
            &bundle.scan,
            det,
            &bundle.camera,
            &bundle.extrinsic,
            &bundle.vehicle_pose,
        ) {
            Ok(o) => objects.push(o),
            Err(e) => unsupported.push(e),
        }
    }
    (objects, unsupported)
}

/// Cells of one drivable region on the BEV grid.
#[derive(Debug, Clone, PartialEq)]
pub struct Footprint {
    pub region_id: u32,
    pub cells: Vec<Cell>,
}

/// Footprints of the given regions, taken from the semantic grid. Regions
/// with no labeled cell are omitted.
pub fn region_footprints(sem: &SemanticGrid, region_ids: &[u32]) -> Vec<Footprint> {
    region_ids
        .iter()
        .map(|&id| Footprint {
            region_id: id,
            cells: sem.cells_with(id),
        })
        .filter(|f| !f.cells.is_empty())
        .collect()
}

/// Nearest reachable points of one target, one per drivable region.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct NrpRow {
    pub target_id: u32,
    pub points: BTreeMap<u32, [f64; 2]>,
    pub blocked: Vec<GeometryError>,
}

/// For each region, the free cell center closest to the target's 2D centroid.
/// Ties go to the lower `(row, col)`.
pub fn nearest_reachable_points(
    target: &ObjectGeometry,
    drivable: &[Footprint],
    occ: &OccupancyGrid,
) -> NrpRow {
    let c = target.centroid_2d();
    let mut row = NrpRow {
        target_id: target.detection_id,
        ..Default::default()
    };
    for fp in drivable {
        let mut best: Option<(f64, Cell)> = None;
        for &cell in &fp.cells {
            if occ.get(cell) != Occupancy::Free {
                continue;
            }
            let p = occ.spec.center(cell);
            let d = (p[0] - c[0]).hypot(p[1] - c[1]);
            let better = match best {
                None => true,
                Some((bd, bc)) => d < bd || (d == bd && cell < bc),
            };
            if better {
                best = Some((d, cell));
            }
        }
        match best {
            Some((_, cell)) => {
                row.points.insert(fp.region_id, occ.spec.center(cell));
            }
            None => row.blocked.push(GeometryError::RegionFullyBlocked {
                region_id: fp.region_id,
            }),
        }
    }
    row
}

/// `(target, region) → point` for every target/region pair with a free cell.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct NrpTable {
    pub entries: BTreeMap<(u32, u32), [f64; 2]>,
}

impl NrpTable {
    pub fn insert_row(&mut self, row: &NrpRow) {
        for (&region, &p) in &row.points {
            self.entries.insert((row.target_id, region), p);
        }
    }

    pub fn get(&self, target: u32, region: u32) -> Option<[f64; 2]> {
        self.entries.get(&(target, region)).copied()
    }

    pub fn row(&self, target: u32) -> BTreeMap<u32, [f64; 2]> {
        self.entries
            .range((target, 0)..=(target, u32::MAX))
            .map(|(&(_, r), &p)| (r, p))
            .collect()
    }
}
