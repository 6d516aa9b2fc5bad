//! Synthetic textured voxel world with a raycast RGB-D camera.
//!
//! The world is a box of voxels enclosed by solid boundary cells. Interior
//! obstacles are shelf-like boxes standing on the floor. Every solid cell
//! carries one of eight palette albedos picked by hashing its index with the
//! world seed, so walls are textured enough for corner detection.

use crate::geom::{CameraModel, Pose, Vec3};
use crate::image::{DepthMap, RgbImage};
use crate::voxel::{in_bounds, linear_index, unlinear_index, VoxelWalk, NEIGHBORS_6};
use nalgebra::UnitQuaternion;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use std::collections::VecDeque;

#[derive(Debug, thiserror::Error)]
pub enum SimError {
    #[error("invalid world spec: {0}")]
    InvalidSpec(String),
    #[error("camera embedded in geometry")]
    CameraEmbedded,
    #[error("camera outside the scene bounds")]
    CameraOutside,
    #[error("invalid camera: {0}")]
    InvalidCamera(String),
    #[error("trajectory is empty")]
    EmptyTrajectory,
    #[error("capture rate must be positive, got {0}")]
    InvalidRate(f64),
}

pub const PALETTE: [[f64; 3]; 8] = [
    [0.92, 0.90, 0.84],
    [0.80, 0.20, 0.18],
    [0.20, 0.62, 0.26],
    [0.16, 0.26, 0.78],
    [0.96, 0.80, 0.18],
    [0.56, 0.30, 0.66],
    [0.10, 0.10, 0.12],
    [0.46, 0.76, 0.86],
];

/// Direction towards the light, unit length.
pub fn light_direction() -> Vec3 {
    Vec3::new(0.45, 0.55, 0.70).normalize()
}

pub const LAMBERT_FLOOR: f64 = 0.2;
pub const BACKGROUND: [f64; 3] = [0.0, 0.0, 0.0];

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Cell {
    Empty,
    Solid([f64; 3]),
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct WorldSpec {
    pub dims: [usize; 3],
    pub voxel_size: f64,
    pub seed: u64,
    pub obstacle_density: f64,
}

impl Default for WorldSpec {
    fn default() -> Self {
        Self { dims: [12, 12, 12], voxel_size: 0.5, seed: 1, obstacle_density: 0.0 }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct VoxelScene {
    pub dims: [usize; 3],
    pub voxel_size: f64,
    pub seed: u64,
    pub cells: Vec<Cell>,
}

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    let mut z = x;
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Palette albedo of a cell, keyed by its linear index and the world seed.
pub fn texture_albedo(index: usize, seed: u64) -> [f64; 3] {
    let h = splitmix64(splitmix64(seed) ^ index as u64);
    PALETTE[(h % PALETTE.len() as u64) as usize]
}

/// A ray's first solid cell.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RayHit {
    pub cell: [usize; 3],
    pub distance: f64,
    /// Outward normal of the face the ray entered through.
    pub normal: Vec3,
}

impl VoxelScene {
    /// All-empty scene; used for hand-built test geometry.
    pub fn empty(dims: [usize; 3], voxel_size: f64, seed: u64) -> Self {
        Self { dims, voxel_size, seed, cells: vec![Cell::Empty; dims[0] * dims[1] * dims[2]] }
    }

    pub fn len(&self) -> usize {
        self.cells.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cells.is_empty()
    }

    pub fn index(&self, c: [usize; 3]) -> usize {
        linear_index(self.dims, c)
    }

    pub fn coords(&self, idx: usize) -> [usize; 3] {
        unlinear_index(self.dims, idx)
    }

    pub fn cell(&self, c: [usize; 3]) -> Cell {
        self.cells[self.index(c)]
    }

    /// Marks a cell solid with its procedural albedo.
    pub fn set_solid(&mut self, c: [usize; 3]) {
        let i = self.index(c);
        self.cells[i] = Cell::Solid(texture_albedo(i, self.seed));
    }

    pub fn set_empty(&mut self, c: [usize; 3]) {
        let i = self.index(c);
        self.cells[i] = Cell::Empty;
    }

    pub fn is_solid_at(&self, c: [i64; 3]) -> bool {
        in_bounds(self.dims, c)
            && matches!(self.cells[linear_index(self.dims, [c[0] as usize, c[1] as usize, c[2] as usize])], Cell::Solid(_))
    }

    pub fn solid_count(&self) -> usize {
        self.cells.iter().filter(|c| matches!(c, Cell::Solid(_))).count()
    }

    pub fn cell_center(&self, c: [usize; 3]) -> Vec3 {
        Vec3::new(c[0] as f64 + 0.5, c[1] as f64 + 0.5, c[2] as f64 + 0.5) * self.voxel_size
    }

    pub fn cell_of(&self, p: &Vec3) -> Option<[usize; 3]> {
        let c = [(p.x / self.voxel_size).floor() as i64, (p.y / self.voxel_size).floor() as i64, (p.z / self.voxel_size).floor() as i64];
        in_bounds(self.dims, c).then(|| [c[0] as usize, c[1] as usize, c[2] as usize])
    }

    /// Center of the middle interior cell; kept obstacle-free by [`build_world`].
    pub fn spawn_cell(&self) -> [usize; 3] {
        [self.dims[0] / 2, self.dims[1] / 2, self.dims[2] / 2]
    }

    pub fn spawn_point(&self) -> Vec3 {
        self.cell_center(self.spawn_cell())
    }

    /// Empty cells 6-connected to `start` (empty set if `start` is solid).
    pub fn reachable_from(&self, start: [usize; 3]) -> Vec<bool> {
        let mut seen = vec![false; self.cells.len()];
        let s = self.index(start);
        if matches!(self.cells[s], Cell::Solid(_)) {
            return seen;
        }
        seen[s] = true;
        let mut queue = VecDeque::from([start]);
        while let Some(c) = queue.pop_front() {
            for d in NEIGHBORS_6 {
                let n = [c[0] as i64 + d[0], c[1] as i64 + d[1], c[2] as i64 + d[2]];
                if !in_bounds(self.dims, n) {
                    continue;
                }
                let n = [n[0] as usize, n[1] as usize, n[2] as usize];
                let ni = self.index(n);
                if !seen[ni] && self.cells[ni] == Cell::Empty {
                    seen[ni] = true;
                    queue.push_back(n);
                }
            }
        }
        seen
    }

    /// True when every empty cell is reachable from the spawn cell.
    pub fn free_space_connected(&self) -> bool {
        let reach = self.reachable_from(self.spawn_cell());
        self.cells.iter().zip(&reach).all(|(c, r)| *c != Cell::Empty || *r)
    }

    /// Euclidean distance from `p` to the nearest solid cell (as a closed box).
    /// Exact when that cell lies within two cells of `p`'s cell; infinity
    /// otherwise.
    pub fn surface_distance(&self, p: &Vec3) -> f64 {
        let vs = self.voxel_size;
        let base = [0, 1, 2].map(|a| (p[a] / vs).floor() as i64);
        let mut best = f64::INFINITY;
        for dx in -2..=2 {
            for dy in -2..=2 {
                for dz in -2..=2 {
                    let c = [base[0] + dx, base[1] + dy, base[2] + dz];
                    if !self.is_solid_at(c) {
                        continue;
                    }
                    let d2: f64 = (0..3)
                        .map(|a| {
                            let (lo, hi) = (c[a] as f64 * vs, (c[a] + 1) as f64 * vs);
                            let e = (lo - p[a]).max(p[a] - hi).max(0.0);
                            e * e
                        })
                        .sum();
                    best = best.min(d2.sqrt());
                }
            }
        }
        best
    }

    /// First solid cell along a unit-direction ray from `origin`.
    pub fn cast_ray(&self, origin: &Vec3, dir: &Vec3) -> Option<RayHit> {
        for step in VoxelWalk::new(self.dims, self.voxel_size, *origin, *dir) {
            let c = [step.cell[0] as usize, step.cell[1] as usize, step.cell[2] as usize];
            if let Cell::Solid(_) = self.cell(c) {
                let mut normal = Vec3::zeros();
                if let Some(a) = step.entered_axis {
                    normal[a] = -(step.entered_sign as f64);
                }
                return Some(RayHit { cell: c, distance: step.t_enter, normal });
            }
        }
        None
    }

    /// Shaded color of a hit: albedo times a clamped Lambert term.
    pub fn shade(&self, hit: &RayHit) -> [f64; 3] {
        let albedo = match self.cell(hit.cell) {
            Cell::Solid(a) => a,
            Cell::Empty => return BACKGROUND,
        };
        let lambert = hit.normal.dot(&light_direction()).clamp(LAMBERT_FLOOR, 1.0);
        albedo.map(|a| a * lambert)
    }
}

/// Builds an enclosed, seeded world. Obstacles are floor-standing boxes; a box
/// that would disconnect the free space is rejected and another is drawn.
pub fn build_world(spec: &WorldSpec) -> Result<VoxelScene, SimError> {
    if spec.dims.iter().any(|&d| d < 8) {
        return Err(SimError::InvalidSpec(format!("dims {:?} too small: every axis needs at least 8 cells", spec.dims)));
    }
    if !(0.0..=0.3).contains(&spec.obstacle_density) {
        return Err(SimError::InvalidSpec(format!("obstacle_density {} outside [0, 0.3]", spec.obstacle_density)));
    }
    if !(spec.voxel_size > 0.0) {
        return Err(SimError::InvalidSpec(format!("voxel_size {} must be positive", spec.voxel_size)));
    }
    let [dx, dy, dz] = spec.dims;
    let mut scene = VoxelScene::empty(spec.dims, spec.voxel_size, spec.seed);
    for z in 0..dz {
        for y in 0..dy {
            for x in 0..dx {
                if x == 0 || y == 0 || z == 0 || x == dx - 1 || y == dy - 1 || z == dz - 1 {
                    scene.set_solid([x, y, z]);
                }
            }
        }
    }

    let interior = (dx - 2) * (dy - 2) * (dz - 2);
    let target = (spec.obstacle_density * interior as f64).round() as usize;
    if target == 0 {
        return Ok(scene);
    }
    let spawn = scene.spawn_cell();
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut placed = 0usize;
    let max_attempts = 200 + 50 * target;
    for _ in 0..max_attempts {
        if placed >= target {
            break;
        }
        let sx = rng.random_range(1..=2usize);
        let sy = rng.random_range(1..=2usize);
        let sz = rng.random_range(1..=dz - 3);
        let x0 = rng.random_range(1..=dx - 1 - sx);
        let y0 = rng.random_range(1..=dy - 1 - sy);
        let mut added = Vec::new();
        for z in 1..=sz {
            for y in y0..y0 + sy {
                for x in x0..x0 + sx {
                    let near_spawn = (x as i64 - spawn[0] as i64).abs() <= 1 && (y as i64 - spawn[1] as i64).abs() <= 1;
                    if near_spawn || scene.cell([x, y, z]) != Cell::Empty {
                        continue;
                    }
                    scene.set_solid([x, y, z]);
                    added.push([x, y, z]);
                }
            }
        }
        if added.is_empty() {
            continue;
        }
        if scene.free_space_connected() {
            placed += added.len();
        } else {
            for c in added {
                scene.set_empty(c);
            }
        }
    }
    Ok(scene)
}

/// Renders color and range (distance along the ray, 0 = no hit) for every pixel.
pub fn raycast_rgbd(scene: &VoxelScene, pose: &Pose, cam: &CameraModel) -> Result<(RgbImage, DepthMap), SimError> {
    cam.validate().map_err(SimError::InvalidCamera)?;
    let origin = pose.translation;
    let cell = scene.cell_of(&origin).ok_or(SimError::CameraOutside)?;
    if matches!(scene.cell(cell), Cell::Solid(_)) {
        return Err(SimError::CameraEmbedded);
    }
    let (w, h) = (cam.width, cam.height);
    let rows: Vec<(Vec<[f64; 3]>, Vec<f64>)> = (0..h)
        .into_par_iter()
        .map(|v| {
            let mut colors = Vec::with_capacity(w);
            let mut depths = Vec::with_capacity(w);
            for u in 0..w {
                let dir = (pose.rotation * cam.pixel_ray(u as f64, v as f64)).normalize();
                match scene.cast_ray(&origin, &dir) {
                    Some(hit) => {
                        colors.push(scene.shade(&hit));
                        depths.push(hit.distance);
                    }
                    None => {
                        colors.push(BACKGROUND);
                        depths.push(0.0);
                    }
                }
            }
            (colors, depths)
        })
        .collect();
    let mut rgb = RgbImage::new(w, h);
    let mut depth = DepthMap::new(w, h);
    for (v, (colors, depths)) in rows.into_iter().enumerate() {
        rgb.data[v * w..(v + 1) * w].copy_from_slice(&colors);
        depth.data[v * w..(v + 1) * w].copy_from_slice(&depths);
    }
    Ok((rgb, depth))
}

#[derive(Clone, Debug, PartialEq)]
pub struct GroundTruthFrame {
    pub frame_id: usize,
    pub rgb: RgbImage,
    pub depth: DepthMap,
    pub pose: Pose,
    pub timestamp: f64,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TimedPose {
    pub time: f64,
    pub pose: Pose,
}

/// Pose at time `t`: linear in position, shortest-arc in rotation. Times
/// outside the trajectory clamp to its ends.
pub fn sample_pose(trajectory: &[TimedPose], t: f64) -> Pose {
    let first = &trajectory[0];
    let last = &trajectory[trajectory.len() - 1];
    if t <= first.time {
        return first.pose;
    }
    if t >= last.time {
        return last.pose;
    }
    let seg = trajectory.partition_point(|p| p.time <= t).saturating_sub(1);
    let (a, b) = (&trajectory[seg], &trajectory[seg + 1]);
    let span = b.time - a.time;
    if span <= 0.0 {
        return b.pose;
    }
    let s = (t - a.time) / span;
    let translation =
        if a.pose.translation == b.pose.translation { a.pose.translation } else { a.pose.translation * (1.0 - s) + b.pose.translation * s };
    if a.pose.rotation == b.pose.rotation {
        return Pose::new(a.pose.rotation, translation);
    }
    let qa = UnitQuaternion::from_matrix(&a.pose.rotation);
    let qb = UnitQuaternion::from_matrix(&b.pose.rotation);
    let q = qa.try_slerp(&qb, s, 1e-12).unwrap_or_else(|| {
        // Antipodal endpoints: fall back to the axis-angle of the relative rotation.
        let rel = qa.inverse() * qb;
        qa * UnitQuaternion::from_scaled_axis(rel.scaled_axis() * s)
    });
    Pose::new(*q.to_rotation_matrix().matrix(), translation)
}

/// Samples the trajectory at `rate` Hz from its first timestamp, inclusive
/// of the endpoint, and renders one frame per sample.
pub fn capture_sequence(
    scene: &VoxelScene,
    trajectory: &[TimedPose],
    cam: &CameraModel,
    rate: f64,
) -> Result<Vec<GroundTruthFrame>, SimError> {
    if trajectory.is_empty() {
        return Err(SimError::EmptyTrajectory);
    }
    if !(rate > 0.0) {
        return Err(SimError::InvalidRate(rate));
    }
    let t0 = trajectory[0].time;
    let duration = trajectory[trajectory.len() - 1].time - t0;
    let n = (duration * rate + 1e-9).floor().max(0.0) as usize + 1;
    let times: Vec<f64> = (0..n).map(|i| t0 + i as f64 / rate).collect();
    capture_at_times(scene, trajectory, cam, &times, 0)
}

/// Renders frames at explicit timestamps, numbering them from `first_id`.
pub fn capture_at_times(
    scene: &VoxelScene,
    trajectory: &[TimedPose],
    cam: &CameraModel,
    times: &[f64],
    first_id: usize,
) -> Result<Vec<GroundTruthFrame>, SimError> {
    if trajectory.is_empty() {
        return Err(SimError::EmptyTrajectory);
    }
    times
        .iter()
        .enumerate()
        .map(|(i, &t)| {
            let pose = sample_pose(trajectory, t);
            let (rgb, depth) = raycast_rgbd(scene, &pose, cam)?;
            Ok(GroundTruthFrame { frame_id: first_id + i, rgb, depth, pose, timestamp: t })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    #[test]
    fn empty_world_is_boundary_only() {
        let spec = WorldSpec { dims: [8, 8, 8], voxel_size: 0.5, seed: 1, obstacle_density: 0.0 };
        let s = build_world(&spec).unwrap();
        assert_eq!(s.solid_count(), 8 * 8 * 8 - 6 * 6 * 6);
        assert_eq!(s.solid_count(), 296);
        assert_eq!(build_world(&spec).unwrap(), s);
    }

    #[test]
    fn rejects_bad_specs() {
        let mut spec = WorldSpec { dims: [7, 8, 8], ..Default::default() };
        assert!(matches!(build_world(&spec), Err(SimError::InvalidSpec(_))));
        spec.dims = [8, 8, 8];
        spec.obstacle_density = 0.31;
        assert!(matches!(build_world(&spec), Err(SimError::InvalidSpec(_))));
        spec.obstacle_density = -0.01;
        assert!(build_world(&spec).is_err());
    }

    #[test]
    fn albedos_are_in_range_and_varied() {
        let s = build_world(&WorldSpec::default()).unwrap();
        let mut distinct = std::collections::HashSet::new();
        for c in &s.cells {
            if let Cell::Solid(a) = c {
                assert!(a.iter().all(|v| (0.0..=1.0).contains(v)));
                distinct.insert(a.map(|v| (v * 100.0) as i32));
            }
        }
        assert_eq!(distinct.len(), 8);
    }

    #[test]
    fn axis_ray_depth_to_wall() {
        // Camera on a cell boundary 2 m (4 cells) in front of the +x wall face.
        let s = build_world(&WorldSpec { dims: [12, 12, 12], voxel_size: 0.5, ..Default::default() }).unwrap();
        let pos = Vec3::new(3.5, 3.25, 3.25);
        let cam = CameraModel::centered(32, 32, 16.0);
        let (_, depth) = raycast_rgbd(&s, &Pose::from_position_yaw(pos, 0.0), &cam).unwrap();
        let d = depth.get(16, 16);
        assert!((d - 2.0).abs() <= 0.5, "{d}");
        assert!((d - 2.0).abs() < 1e-12);
    }

    #[test]
    fn open_scene_has_no_hit() {
        let mut s = VoxelScene::empty([8, 8, 8], 1.0, 0);
        s.set_solid([0, 4, 4]);
        let cam = CameraModel::centered(32, 32, 16.0);
        let (rgb, depth) = raycast_rgbd(&s, &Pose::from_position_yaw(Vec3::new(4.5, 4.5, 4.5), 0.0), &cam).unwrap();
        assert_eq!(depth.get(16, 16), 0.0);
        assert_eq!(rgb.get(16, 16), BACKGROUND);
    }

    #[test]
    fn embedded_camera_is_rejected() {
        let s = build_world(&WorldSpec { dims: [8, 8, 8], ..Default::default() }).unwrap();
        let cam = CameraModel::centered(32, 32, 16.0);
        let err = raycast_rgbd(&s, &Pose::from_position_yaw(Vec3::new(0.1, 0.1, 0.1), 0.0), &cam).unwrap_err();
        assert_eq!(err.to_string(), "camera embedded in geometry");
    }

    #[test]
    fn capture_counts_and_interpolation() {
        let s = build_world(&WorldSpec::default()).unwrap();
        let cam = CameraModel::centered(32, 32, 16.0);
        let p = s.spawn_point();
        let traj = [
            TimedPose { time: 0.0, pose: Pose::from_position_yaw(p, 0.0) },
            TimedPose { time: 10.0, pose: Pose::from_position_yaw(p, PI / 2.0) },
        ];
        let frames = capture_sequence(&s, &traj, &cam, 2.0).unwrap();
        assert_eq!(frames.len(), 21);
        assert!(frames.iter().enumerate().all(|(i, f)| f.frame_id == i));
        assert!((sample_pose(&traj, 5.0).yaw() - PI / 4.0).abs() < 1e-12);

        let still = [
            TimedPose { time: 0.0, pose: Pose::from_position_yaw(p, 0.3) },
            TimedPose { time: 2.0, pose: Pose::from_position_yaw(p, 0.3) },
        ];
        let frames = capture_sequence(&s, &still, &cam, 2.0).unwrap();
        assert!(frames.windows(2).all(|w| w[0].rgb == w[1].rgb && w[0].depth == w[1].depth));

        let short = [
            TimedPose { time: 0.0, pose: Pose::from_position_yaw(p, 0.0) },
            TimedPose { time: 0.2, pose: Pose::from_position_yaw(p, 0.1) },
        ];
        assert_eq!(capture_sequence(&s, &short, &cam, 2.0).unwrap().len(), 1);
    }

    #[test]
    fn slerp_takes_shortest_arc_across_wrap() {
        let p = Vec3::zeros();
        let traj = [
            TimedPose { time: 0.0, pose: Pose::from_position_yaw(p, 3.0) },
            TimedPose { time: 1.0, pose: Pose::from_position_yaw(p, -3.0) },
        ];
        let mid = sample_pose(&traj, 0.5).yaw();
        assert!((mid.abs() - PI).abs() < 1e-9, "{mid}");
    }
}
