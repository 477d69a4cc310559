//! Geometry-compliant refinement: A* over the value map, B-spline smoothing
//! with collision repair, heading assignment, and collision checks.

mod astar;
pub mod bspline;
mod trajectory;

use thiserror::Error;

pub use astar::{astar, neighbors, path_cost, CellPath};
pub use bspline::{smooth_bspline, smooth_polyline, SmoothingParams};
pub use trajectory::{
    assign_headings, check_collisions, densify, CollisionReport, DenseTrajectory, MAX_POSE_SPACING,
};

#[derive(Debug, Clone, Error, PartialEq)]
pub enum PlanError {
    #[error("start ({x:.3}, {y:.3}) is outside the map")]
    StartOutsideMap { x: f64, y: f64 },
    #[error("goal ({x:.3}, {y:.3}) is outside the map")]
    GoalOutsideMap { x: f64, y: f64 },
    #[error("start ({x:.3}, {y:.3}) lies in a blocked cell")]
    StartBlocked { x: f64, y: f64 },
    #[error("goal ({x:.3}, {y:.3}) lies in a blocked cell")]
    GoalBlocked { x: f64, y: f64 },
    #[error("no collision-free path connects start and goal")]
    NoPath,
    #[error("path has {0} cells, smoothing needs at least 2")]
    PathTooShort(usize),
    #[error("even the unsmoothed path crosses a blocked cell")]
    SmoothingCollisionUnresolvable,
    #[error("trajectory needs at least 2 distinct points, got {0}")]
    TooShort(usize),
}
