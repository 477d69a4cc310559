//! Tunables for map building, planning, the chat loop and evaluation.

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::bev::CostLevels;
use crate::metrics::EvalConfig;
use crate::planner::SmoothingParams;

/// Edge-cost rule used by A*; recorded so it contributes to the config hash.
pub const EDGE_COST_RULE: &str = "endpoint-mean";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MapConfig {
    /// Cell edge length (m).
    pub resolution: f64,
    /// Padding around the scene extent (m).
    pub margin: f64,
    /// Points with height above ground in `(lo, hi)` mark cells occupied.
    pub height_band: (f64, f64),
    pub costs: CostLevels,
    pub corridor_radius: f64,
}

impl Default for MapConfig {
    fn default() -> Self {
        Self {
            resolution: 0.2,
            margin: 5.0,
            height_band: (0.3, 2.5),
            costs: CostLevels::default(),
            corridor_radius: 2.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PlannerConfig {
    pub edge_cost_rule: String,
    pub smoothing: SmoothingParams,
    pub robot_radius: f64,
    /// A start inside a blocked cell moves to the nearest free cell within
    /// this distance (m); zero disables the move.
    pub start_snap_radius: f64,
}

impl Default for PlannerConfig {
    fn default() -> Self {
        Self {
            edge_cost_rule: EDGE_COST_RULE.to_string(),
            smoothing: SmoothingParams::default(),
            robot_radius: 0.5,
            start_snap_radius: 3.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OrchestratorConfig {
    pub max_retries: u32,
    /// Consecutive replies without a structured block before a nudge.
    pub nudge_after: u32,
    /// Largest gap tolerated between consecutive plan segments (m).
    pub chain_tolerance: f64,
    /// Spacing of the densified coarse polyline (m).
    pub sample_step: f64,
    /// Model replies allowed before the episode gives up.
    pub max_turns: u32,
}

impl Default for OrchestratorConfig {
    fn default() -> Self {
        Self {
            max_retries: 3,
            nudge_after: 2,
            chain_tolerance: 0.5,
            sample_step: 0.1,
            max_turns: 24,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub map: MapConfig,
    pub planner: PlannerConfig,
    pub orchestrator: OrchestratorConfig,
    pub eval: EvalConfig,
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<(), String> {
        let m = &self.map;
        let checks: [(bool, &str); 13] = [
            (
                m.resolution > 0.0 && m.resolution.is_finite(),
                "map.resolution must be > 0",
            ),
            (m.margin >= 0.0, "map.margin must be >= 0"),
            (
                m.height_band.0 < m.height_band.1,
                "map.height_band must be increasing",
            ),
            (
                m.costs.corridor > 0.0
                    && m.costs.corridor <= m.costs.drivable
                    && m.costs.drivable < m.costs.blocked,
                "map.costs must satisfy 0 < corridor <= drivable < blocked",
            ),
            (m.corridor_radius >= 0.0, "map.corridor_radius must be >= 0"),
            (
                self.planner.edge_cost_rule == EDGE_COST_RULE,
                "planner.edge_cost_rule must be \"endpoint-mean\"",
            ),
            (
                self.planner.smoothing.control_spacing > 0.0
                    && self.planner.smoothing.sample_spacing > 0.0,
                "planner.smoothing spacings must be > 0",
            ),
            (
                self.planner.robot_radius >= 0.0,
                "planner.robot_radius must be >= 0",
            ),
            (
                self.planner.start_snap_radius >= 0.0,
                "planner.start_snap_radius must be >= 0",
            ),
            (
                self.orchestrator.chain_tolerance >= 0.0,
                "orchestrator.chain_tolerance must be >= 0",
            ),
            (
                self.orchestrator.sample_step > 0.0,
                "orchestrator.sample_step must be > 0",
            ),
            (
                self.orchestrator.max_turns > 0,
                "orchestrator.max_turns must be > 0",
            ),
            (
                self.eval.success_threshold > 0.0 && self.eval.ndtw_dth > 0.0,
                "eval thresholds must be > 0",
            ),
        ];
        match checks.iter().find(|(ok, _)| !ok) {
            Some((_, msg)) => Err(msg.to_string()),
            None => Ok(()),
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("config serializes")
    }

    /// Hex SHA-256 of the compact JSON serialization.
    pub fn hash(&self) -> String {
        hex::encode(Sha256::digest(self.to_json().as_bytes()))
    }
}
