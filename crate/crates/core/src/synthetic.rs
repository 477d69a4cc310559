//! Procedural scene bundles: flat drivable rectangles and box obstacles seen
//! by a nadir camera, with exact polygon masks.

use crate::geometry::project_point;
use crate::scene::{CameraModel, Detection, LidarScan, Polygon, RigidTransform, SceneBundle};

const CAMERA_HEIGHT: f64 = 100.0;
const IMAGE_W: u32 = 1200;
const IMAGE_H: u32 = 1000;
const IMAGE_PAD: f64 = 40.0;

#[derive(Debug, Clone, PartialEq)]
enum Item {
    Region {
        caption: String,
        lo: [f64; 2],
        hi: [f64; 2],
    },
    Obstacle {
        caption: String,
        lo: [f64; 2],
        hi: [f64; 2],
        height: f64,
    },
}

/// Builder for a synthetic scene. Detection ids follow insertion order.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticScene {
    pub scene_id: String,
    pub vehicle: [f64; 2],
    /// Spacing of ground and surface samples (m).
    pub spacing: f64,
    items: Vec<Item>,
}

impl SyntheticScene {
    pub fn new(scene_id: impl Into<String>, vehicle: [f64; 2]) -> Self {
        Self {
            scene_id: scene_id.into(),
            vehicle,
            spacing: 0.1,
            items: Vec::new(),
        }
    }

    /// Adds a flat drivable rectangle at z = 0; returns its detection id.
    pub fn region(&mut self, caption: &str, lo: [f64; 2], hi: [f64; 2]) -> u32 {
        self.items.push(Item::Region {
            caption: caption.into(),
            lo,
            hi,
        });
        (self.items.len() - 1) as u32
    }

    /// Adds an axis-aligned box standing on the ground; returns its id.
    pub fn obstacle(
        &mut self,
        caption: &str,
        center: [f64; 2],
        size: [f64; 2],
        height: f64,
    ) -> u32 {
        let h = [size[0] / 2.0, size[1] / 2.0];
        self.items.push(Item::Obstacle {
            caption: caption.into(),
            lo: [center[0] - h[0], center[1] - h[1]],
            hi: [center[0] + h[0], center[1] + h[1]],
            height,
        });
        (self.items.len() - 1) as u32
    }

    fn extent(&self) -> ([f64; 2], [f64; 2], f64) {
        let mut lo = self.vehicle;
        let mut hi = self.vehicle;
        let mut top: f64 = 0.0;
        for it in &self.items {
            let (a, b, h) = match it {
                Item::Region { lo, hi, .. } => (lo, hi, 0.0),
                Item::Obstacle { lo, hi, height, .. } => (lo, hi, *height),
            };
            for k in 0..2 {
                lo[k] = lo[k].min(a[k]);
                hi[k] = hi[k].max(b[k]);
            }
            top = top.max(h);
        }
        (lo, hi, top)
    }

    pub fn build(&self) -> SceneBundle {
        let (lo, hi, top) = self.extent();
        let center = [(lo[0] + hi[0]) / 2.0, (lo[1] + hi[1]) / 2.0];
        let span = [(hi[0] - lo[0]).max(1.0), (hi[1] - lo[1]).max(1.0)];
        let depth = CAMERA_HEIGHT - top.max(0.0) - 1.0;
        // Outermost points sit at half the span from the image center.
        let f = depth
            * ((IMAGE_W as f64 / 2.0 - IMAGE_PAD) / (span[0] / 2.0 + 1.0))
                .min((IMAGE_H as f64 / 2.0 - IMAGE_PAD) / (span[1] / 2.0 + 1.0));
        let camera = CameraModel {
            fx: f,
            fy: f,
            cx: IMAGE_W as f64 / 2.0,
            cy: IMAGE_H as f64 / 2.0,
            width: IMAGE_W,
            height: IMAGE_H,
        };
        // Camera looks straight down: x east, y south, z down.
        let rot = [[1.0, 0.0, 0.0], [0.0, -1.0, 0.0], [0.0, 0.0, -1.0]];
        let offset = [
            self.vehicle[0] - center[0],
            self.vehicle[1] - center[1],
            -CAMERA_HEIGHT,
        ];
        let extrinsic = RigidTransform {
            rotation: rot,
            translation: [offset[0], -offset[1], -offset[2]],
        };
        let vehicle_pose =
            RigidTransform::from_translation([self.vehicle[0], self.vehicle[1], 0.0]);
        let to_lidar = |p: [f64; 3]| [p[0] - self.vehicle[0], p[1] - self.vehicle[1], p[2]];
        let project = |p: [f64; 3]| {
            project_point(to_lidar(p), &camera, &extrinsic).expect("scene lies below the camera")
        };

        let obstacles: Vec<([f64; 2], [f64; 2], f64)> = self
            .items
            .iter()
            .filter_map(|it| match it {
                Item::Obstacle { lo, hi, height, .. } => Some((*lo, *hi, *height)),
                _ => None,
            })
            .collect();
        let under_obstacle = |x: f64, y: f64| {
            obstacles
                .iter()
                .any(|(a, b, _)| x >= a[0] && x <= b[0] && y >= a[1] && y <= b[1])
        };

        let mut points = Vec::new();
        let mut detections = Vec::new();
        for (id, it) in self.items.iter().enumerate() {
            match it {
                Item::Region { caption, lo, hi } => {
                    for [x, y] in grid(*lo, *hi, self.spacing) {
                        if !under_obstacle(x, y) {
                            points.push(to_lidar([x, y, 0.0]));
                        }
                    }
                    let outer: Polygon = rect_corners(*lo, *hi)
                        .iter()
                        .map(|&[x, y]| project([x, y, 0.0]))
                        .collect();
                    let mut mask = vec![outer];
                    for (a, b, h) in &obstacles {
                        let inside = a[0] > lo[0] && a[1] > lo[1] && b[0] < hi[0] && b[1] < hi[1];
                        if inside {
                            mask.push(box_hull(*a, *b, *h, &project));
                        }
                    }
                    detections.push(Detection {
                        id: id as u32,
                        caption: caption.clone(),
                        mask,
                        category_hint: Some("road".into()),
                        is_drivable_region: true,
                    });
                }
                Item::Obstacle {
                    caption,
                    lo,
                    hi,
                    height,
                } => {
                    for p in box_surface(*lo, *hi, *height, self.spacing) {
                        points.push(to_lidar(p));
                    }
                    detections.push(Detection {
                        id: id as u32,
                        caption: caption.clone(),
                        mask: vec![box_hull(*lo, *hi, *height, &project)],
                        category_hint: None,
                        is_drivable_region: false,
                    });
                }
            }
        }

        SceneBundle {
            scene_id: self.scene_id.clone(),
            dataset: "synthetic".into(),
            image_path: format!("{}.png", self.scene_id),
            annotated_image_path: Some(format!("{}_annotated.png", self.scene_id)),
            camera,
            extrinsic,
            vehicle_pose,
            scan: LidarScan {
                points,
                timestamp: 0.0,
            },
            detections,
        }
    }
}

fn steps(lo: f64, hi: f64, spacing: f64) -> impl Iterator<Item = f64> {
    let n = ((hi - lo) / spacing).round().max(1.0) as usize;
    (0..=n).map(move |i| lo + (hi - lo) * i as f64 / n as f64)
}

fn grid(lo: [f64; 2], hi: [f64; 2], spacing: f64) -> Vec<[f64; 2]> {
    steps(lo[1], hi[1], spacing)
        .flat_map(|y| steps(lo[0], hi[0], spacing).map(move |x| [x, y]))
        .collect()
}

fn rect_corners(lo: [f64; 2], hi: [f64; 2]) -> [[f64; 2]; 4] {
    [
        [lo[0], lo[1]],
        [hi[0], lo[1]],
        [hi[0], hi[1]],
        [lo[0], hi[1]],
    ]
}

/// Samples on the top face and the four side faces of a box.
fn box_surface(lo: [f64; 2], hi: [f64; 2], height: f64, spacing: f64) -> Vec<[f64; 3]> {
    let mut out: Vec<[f64; 3]> = grid(lo, hi, spacing)
        .into_iter()
        .map(|[x, y]| [x, y, height])
        .collect();
    for z in steps(0.0, height, spacing) {
        for x in steps(lo[0], hi[0], spacing) {
            out.push([x, lo[1], z]);
            out.push([x, hi[1], z]);
        }
        for y in steps(lo[1], hi[1], spacing) {
            out.push([lo[0], y, z]);
            out.push([hi[0], y, z]);
        }
    }
    out
}

fn box_hull(
    lo: [f64; 2],
    hi: [f64; 2],
    height: f64,
    project: &dyn Fn([f64; 3]) -> [f64; 2],
) -> Polygon {
    let pts: Vec<[f64; 2]> = rect_corners(lo, hi)
        .iter()
        .flat_map(|&[x, y]| [project([x, y, 0.0]), project([x, y, height])])
        .collect();
    convex_hull(pts)
}

/// Counter-clockwise hull by the monotone chain, collinear points dropped.
pub fn convex_hull(mut pts: Vec<[f64; 2]>) -> Vec<[f64; 2]> {
    pts.sort_by(|a, b| a[0].total_cmp(&b[0]).then(a[1].total_cmp(&b[1])));
    pts.dedup();
    if pts.len() < 3 {
        return pts;
    }
    let cross = |o: [f64; 2], a: [f64; 2], b: [f64; 2]| {
        (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0])
    };
    let mut hull: Vec<[f64; 2]> = Vec::with_capacity(2 * pts.len());
    for pass in 0..2 {
        let start = hull.len();
        let iter: Box<dyn Iterator<Item = &[f64; 2]>> = if pass == 0 {
            Box::new(pts.iter())
        } else {
            Box::new(pts.iter().rev())
        };
        for &p in iter {
            while hull.len() >= start + 2
                && cross(hull[hull.len() - 2], hull[hull.len() - 1], p) <= 0.0
            {
                hull.pop();
            }
            hull.push(p);
        }
        hull.pop();
    }
    hull
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::extract_all;
    use crate::scene::validate_scene;

    fn street() -> SceneBundle {
        let mut s = SyntheticScene::new("street", [0.0, 0.0]);
        s.region("road", [-2.0, -3.0], [20.0, 3.0]);
        s.obstacle("red car", [8.0, 0.0], [4.0, 2.0], 1.5);
        s.build()
    }

    #[test]
    fn bundle_is_valid() {
        let b = street();
        let report = validate_scene(&b);
        assert!(report.is_empty(), "{:?}", report.issues);
        assert_eq!(b.detections.len(), 2);
        assert_eq!(b.detections[0].mask.len(), 2);
        assert!(b.extrinsic.is_proper_rotation());
    }

    #[test]
    fn extraction_recovers_the_box() {
        let b = street();
        let (objs, errs) = extract_all(&b);
        assert!(errs.is_empty());
        let car = objs.iter().find(|o| o.detection_id == 1).unwrap();
        assert!((car.dimensions[0] - 4.0).abs() < 0.05);
        assert!((car.dimensions[1] - 2.0).abs() < 0.05);
        assert!((car.dimensions[2] - 1.5).abs() < 0.05);
        assert!((car.centroid[0] - 8.0).abs() < 0.05);
        let road = objs.iter().find(|o| o.detection_id == 0).unwrap();
        // Box points projecting onto the hole's edge count as inside the
        // region mask; all of them lie on the box outline.
        let on_outline = |p: &[f64; 3]| {
            (p[0] - 6.0).abs() < 1e-9
                || (p[0] - 10.0).abs() < 1e-9
                || (p[1] + 1.0).abs() < 1e-9
                || (p[1] - 1.0).abs() < 1e-9
        };
        assert!(road
            .points_world
            .iter()
            .all(|p| p[2] == 0.0 || on_outline(p)));
        assert!(road
            .points_world
            .iter()
            .all(|p| p[2] != 0.0 || !(p[0] > 6.0 && p[0] < 10.0 && p[1] > -1.0 && p[1] < 1.0)));
    }

    #[test]
    fn hull_of_square_with_interior_point() {
        let h = convex_hull(vec![
            [0.0, 0.0],
            [1.0, 0.0],
            [0.5, 0.5],
            [1.0, 1.0],
            [0.0, 1.0],
            [0.5, 0.0],
        ]);
        assert_eq!(h, vec![[0.0, 0.0], [1.0, 0.0], [1.0, 1.0], [0.0, 1.0]]);
    }
}
