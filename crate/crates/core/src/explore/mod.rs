//! Frontier-based autonomous exploration over a voxel occupancy grid.
//!
//! The explorer integrates depth frames into an [`OccupancyGrid`], clusters
//! the frontier, proposes viewpoints along each cluster's normal, orders them
//! with an asymmetric TSP over travel time, and flies a rate-limited
//! piecewise-linear trajectory to the first one. Repeats until no frontier
//! cluster remains.

mod explorer;
mod frontier;
mod grid;
mod path;
mod trajectory;
mod tsp;
mod viewpoint;

pub use explorer::{explore_loop, explore_loop_with_grid, ExplorationResult, ExplorationStatus};
pub use frontier::{cluster_frontiers, detect_frontiers, principal_axes, FrontierCluster};
pub use grid::{CellState, OccupancyGrid};
pub use path::{plan_path, raw_grid_distance, PlannedPath};
pub use trajectory::{plan_trajectory, trajectory_rate_limits, Knot};
pub use tsp::{build_tsp_matrix, edge_cost, nearest_neighbor_cost, solve_atsp, tour_cost, AtspMode, TspMatrix, EXACT_LIMIT};
pub use viewpoint::{cell_visible, fallback_viewpoints, generate_viewpoints, in_frustum, score_viewpoint, Viewpoint};

use crate::geom::Vec3;
use crate::simworld::SimError;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ExploreError {
    #[error("camera position {0:?} lies outside the occupancy grid")]
    OutsideGrid(Vec3),
    #[error("depth frame size does not match the camera model")]
    FrameSize,
    #[error("no free path between {0:?} and {1:?}")]
    Unreachable(Vec3, Vec3),
    #[error("invalid exploration config: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Sim(#[from] SimError),
}

#[derive(Clone, Debug, PartialEq)]
pub struct ExplorationConfig {
    /// Linear speed limit, m/s.
    pub v_max: f64,
    /// Yaw rate limit, rad/s.
    pub yaw_max: f64,
    pub sensor_max_range: f64,
    pub min_cluster_size: usize,
    /// Distance from a cluster centroid to its candidate viewpoints, meters.
    pub viewpoint_standoff: f64,
    /// Frames captured per second of flight.
    pub capture_rate: f64,
    pub max_rounds: usize,
}

impl Default for ExplorationConfig {
    fn default() -> Self {
        Self {
            v_max: 1.0,
            yaw_max: 1.0,
            sensor_max_range: 8.0,
            min_cluster_size: 5,
            viewpoint_standoff: 2.0,
            capture_rate: 4.0,
            max_rounds: 200,
        }
    }
}

impl ExplorationConfig {
    pub fn validate(&self) -> Result<(), ExploreError> {
        let bad = |m: &str| Err(ExploreError::InvalidConfig(m.to_string()));
        if !(self.v_max > 0.0) {
            return bad("v_max must be positive");
        }
        if !(self.yaw_max > 0.0) {
            return bad("yaw_max must be positive");
        }
        if !(self.sensor_max_range > 0.0) {
            return bad("sensor_max_range must be positive");
        }
        if !(self.viewpoint_standoff > 0.0) {
            return bad("viewpoint_standoff must be positive");
        }
        if !(self.capture_rate > 0.0) {
            return bad("capture_rate must be positive");
        }
        if self.min_cluster_size == 0 {
            return bad("min_cluster_size must be at least 1");
        }
        Ok(())
    }
}
