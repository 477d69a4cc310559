//! Vision-language trajectory planning over bird's-eye-view value maps.
//!
//! The pipeline turns a perception scene bundle into an occupancy grid and
//! semantic grid, asks a chat model for a coarse plan, and refines that
//! plan into a smooth, collision-checked trajectory.

pub mod bev;
pub mod config;
pub mod geometry;
pub mod metrics;
pub mod orchestrator;
pub mod planner;
pub mod render;
pub mod scene;
pub mod synthetic;
