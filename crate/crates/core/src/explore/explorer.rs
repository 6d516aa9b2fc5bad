use super::frontier::{cluster_frontiers, detect_frontiers};
use super::grid::{CellState, OccupancyGrid};
use super::path::plan_path;
use super::trajectory::{plan_trajectory, Knot};
use super::tsp::{build_tsp_matrix, solve_atsp, AtspMode};
use super::viewpoint::{fallback_viewpoints, generate_viewpoints, score_viewpoint, Viewpoint};
use super::{ExplorationConfig, ExploreError};
use crate::geom::{wrap_angle, CameraModel, Pose};
use crate::simworld::{capture_at_times, GroundTruthFrame, TimedPose, VoxelScene};
use rayon::prelude::*;
use std::f64::consts::PI;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ExplorationStatus {
    /// No frontier cluster of the minimum size remains.
    Complete,
    /// Two consecutive rounds changed fewer than 0.1% of the cells.
    Stalled,
    /// Frontier clusters remain but none has a reachable viewpoint.
    NoReachableViewpoints,
    MaxRounds,
}

impl ExplorationStatus {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::Complete => "complete",
            Self::Stalled => "stalled",
            Self::NoReachableViewpoints => "no_reachable_viewpoints",
            Self::MaxRounds => "max_rounds",
        }
    }
}

#[derive(Clone, Debug)]
pub struct ExplorationResult {
    pub grid: OccupancyGrid,
    /// Timed poses flown, in order, starting at time 0.
    pub trajectory: Vec<TimedPose>,
    pub frames_emitted: usize,
    pub rounds: usize,
    pub status: ExplorationStatus,
}

impl ExplorationResult {
    /// Fraction of the scene's spawn-reachable empty cells that the grid marks
    /// as known.
    pub fn known_reachable_fraction(&self, scene: &VoxelScene) -> f64 {
        let reach = scene.reachable_from(scene.spawn_cell());
        let total = reach.iter().filter(|&&r| r).count();
        let known = reach.iter().enumerate().filter(|&(i, &r)| r && self.grid.state(i) != CellState::Unknown).count();
        known as f64 / total.max(1) as f64
    }
}

/// Fraction of all cells below which a round counts as making no progress.
const STALL_FRACTION: f64 = 1e-3;

/// Explores `scene` from its spawn point with an all-unknown grid. The drone
/// first spins once in place, then repeatedly flies to the first viewpoint of
/// the ATSP tour over the best viewpoint of each frontier cluster. Every
/// captured frame is integrated into the grid and then handed to `sink`, in
/// capture order.
pub fn explore_loop(
    scene: &VoxelScene,
    cam: &CameraModel,
    cfg: &ExplorationConfig,
    sink: impl FnMut(GroundTruthFrame),
) -> Result<ExplorationResult, ExploreError> {
    let start = Pose::from_position_yaw(scene.spawn_point(), 0.0);
    run(scene, cam, cfg, OccupancyGrid::for_scene(scene), start, true, sink)
}

/// Continues exploration from an existing grid and pose, without the initial
/// spin. A grid with no frontier finishes immediately without capturing.
pub fn explore_loop_with_grid(
    scene: &VoxelScene,
    cam: &CameraModel,
    cfg: &ExplorationConfig,
    grid: OccupancyGrid,
    start: Pose,
    sink: impl FnMut(GroundTruthFrame),
) -> Result<ExplorationResult, ExploreError> {
    run(scene, cam, cfg, grid, start, false, sink)
}

struct Flight<'a, F> {
    scene: &'a VoxelScene,
    cam: &'a CameraModel,
    cfg: &'a ExplorationConfig,
    grid: OccupancyGrid,
    trajectory: Vec<TimedPose>,
    frames: usize,
    sink: F,
}

impl<F: FnMut(GroundTruthFrame)> Flight<'_, F> {
    fn now(&self) -> f64 {
        self.trajectory.last().map_or(0.0, |p| p.time)
    }

    fn pose(&self) -> Pose {
        self.trajectory.last().expect("trajectory starts with the initial pose").pose
    }

    fn capture(&mut self, segment: &[TimedPose], times: &[f64]) -> Result<usize, ExploreError> {
        let frames = capture_at_times(self.scene, segment, self.cam, times, self.frames)?;
        let mut changed = 0;
        for f in frames {
            changed += self.grid.integrate_depth(&f, self.cam, self.cfg.sensor_max_range)?;
            self.frames += 1;
            (self.sink)(f);
        }
        Ok(changed)
    }

    /// Flies through `knots` (the first is the current pose) and captures at
    /// every multiple of the capture period inside the flight plus on arrival.
    fn fly(&mut self, knots: &[Knot]) -> Result<usize, ExploreError> {
        let t0 = self.now();
        let segment = plan_trajectory(knots, t0, self.cfg);
        if segment.len() < 2 {
            return Ok(0);
        }
        let t1 = segment[segment.len() - 1].time;
        let rate = self.cfg.capture_rate;
        let mut times = Vec::new();
        let mut k = (t0 * rate + 1e-9).floor() as u64 + 1;
        while (k as f64) / rate < t1 - 1e-9 {
            times.push(k as f64 / rate);
            k += 1;
        }
        times.push(t1);
        self.trajectory.extend_from_slice(&segment[1..]);
        self.capture(&segment, &times)
    }
}

fn run<F: FnMut(GroundTruthFrame)>(
    scene: &VoxelScene,
    cam: &CameraModel,
    cfg: &ExplorationConfig,
    grid: OccupancyGrid,
    start: Pose,
    spin_first: bool,
    sink: F,
) -> Result<ExplorationResult, ExploreError> {
    cfg.validate()?;
    cam.validate().map_err(ExploreError::InvalidConfig)?;
    let mut fl = Flight { scene, cam, cfg, grid, trajectory: vec![TimedPose { time: 0.0, pose: start }], frames: 0, sink };

    if spin_first {
        fl.capture(&fl.trajectory.clone(), &[0.0])?;
        let p = start.translation;
        let y = start.yaw();
        let knots: Vec<Knot> = (0..=3).map(|k| Knot { position: p, yaw: wrap_angle(y + k as f64 * 2.0 * PI / 3.0) }).collect();
        fl.fly(&knots)?;
    }

    let stall_cells = (STALL_FRACTION * fl.grid.len() as f64).ceil() as usize;
    let mut quiet_rounds = 0;
    let mut rounds = 0;
    let status = loop {
        let clusters = cluster_frontiers(&fl.grid, &detect_frontiers(&fl.grid), cfg.min_cluster_size);
        if clusters.is_empty() {
            break ExplorationStatus::Complete;
        }
        if rounds >= cfg.max_rounds {
            break ExplorationStatus::MaxRounds;
        }
        rounds += 1;

        let here = fl.pose();
        let current = Viewpoint { position: here.translation, yaw: here.yaw(), utility: 0.0, source_cluster: usize::MAX };
        let grid = &fl.grid;
        let best: Vec<Viewpoint> = clusters
            .par_iter()
            .filter_map(|cl| {
                let best_of = |cands: Vec<Viewpoint>| {
                    cands
                        .into_iter()
                        .filter(|vp| !(vp.position == current.position && wrap_angle(vp.yaw - current.yaw) == 0.0))
                        .map(|mut vp| {
                            vp.utility = score_viewpoint(grid, &vp, &cl.cells, cam, cfg);
                            vp
                        })
                        .filter(|vp| vp.utility > 0.0)
                        .reduce(|a, b| if b.utility > a.utility { b } else { a })
                };
                best_of(generate_viewpoints(cl, grid, cfg)).or_else(|| best_of(fallback_viewpoints(cl, grid, cfg)))
            })
            .collect();
        let matrix = build_tsp_matrix(&current, &best, grid, cfg);
        let tour = solve_atsp(&matrix.costs, AtspMode::Auto);
        if tour.len() < 2 {
            break ExplorationStatus::NoReachableViewpoints;
        }
        let target = best[tour[1] - 1];
        let path = plan_path(grid, &current.position, &target.position)?;
        let knots = path_knots(&path.waypoints, current.yaw, target.yaw);
        let changed = fl.fly(&knots)?;

        if changed < stall_cells {
            quiet_rounds += 1;
            if quiet_rounds >= 2 {
                break ExplorationStatus::Stalled;
            }
        } else {
            quiet_rounds = 0;
        }
    };

    Ok(ExplorationResult { grid: fl.grid, trajectory: fl.trajectory, frames_emitted: fl.frames, rounds, status })
}

/// Knots along a waypoint path whose heading turns from `yaw0` to `yaw1`
/// (the short way) in proportion to distance travelled. A pure rotation in
/// place becomes a single leg.
fn path_knots(waypoints: &[crate::geom::Vec3], yaw0: f64, yaw1: f64) -> Vec<Knot> {
    let total: f64 = waypoints.windows(2).map(|w| (w[1] - w[0]).norm()).sum();
    let dyaw = wrap_angle(yaw1 - yaw0);
    let mut knots = vec![Knot { position: waypoints[0], yaw: yaw0 }];
    if waypoints.len() == 1 {
        knots.push(Knot { position: waypoints[0], yaw: yaw1 });
        return knots;
    }
    let mut acc = 0.0;
    for w in waypoints.windows(2) {
        acc += (w[1] - w[0]).norm();
        let s = if total > 0.0 { acc / total } else { 1.0 };
        knots.push(Knot { position: w[1], yaw: wrap_angle(yaw0 + dyaw * s) });
    }
    knots.last_mut().unwrap().yaw = yaw1;
    knots
}
