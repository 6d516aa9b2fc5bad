use super::frontier::FrontierCluster;
use super::grid::{CellState, OccupancyGrid};
use super::ExplorationConfig;
use crate::geom::{yaw_towards, CameraModel, Pose, Vec3};
use crate::voxel::linear_index;

/// Candidate camera pose for observing a frontier cluster.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Viewpoint {
    pub position: Vec3,
    /// Heading in (−π, π].
    pub yaw: f64,
    pub utility: f64,
    pub source_cluster: usize,
}

impl Viewpoint {
    pub fn pose(&self) -> Pose {
        Pose::from_position_yaw(self.position, self.yaw)
    }
}

/// Normals closer to vertical than this (|n_z| above cos 45°) cannot be looked
/// along by a gravity-aligned camera.
const STEEP_NORMAL_Z: f64 = std::f64::consts::FRAC_1_SQRT_2;

/// Candidate viewpoints for a cluster.
///
/// Candidates sit `viewpoint_standoff` from the centroid along ± the cluster's
/// least-spread principal axis (the patch normal). For floor- or ceiling-like
/// patches whose normal is steep, the standoff is instead taken along the
/// horizontal projections of the two in-plane axes, so the level camera views
/// the patch obliquely from the side. A candidate survives when its cell is
/// known free and the segment to the centroid crosses no occupied cell. Each
/// survivor is snapped to its cell center and faces the centroid.
pub fn generate_viewpoints(cluster: &FrontierCluster, grid: &OccupancyGrid, cfg: &ExplorationConfig) -> Vec<Viewpoint> {
    let normal = cluster.normal();
    let mut dirs = Vec::new();
    if normal.z.abs() <= STEEP_NORMAL_Z {
        dirs.push(normal);
        dirs.push(-normal);
    } else {
        for axis in &cluster.axes[..2] {
            let h = Vec3::new(axis.x, axis.y, 0.0);
            if h.norm() > 1e-6 {
                let h = h.normalize();
                dirs.push(h);
                dirs.push(-h);
            }
        }
    }
    let mut out: Vec<Viewpoint> = Vec::new();
    for d in dirs {
        let raw = cluster.centroid + d * cfg.viewpoint_standoff;
        let Some(cell) = grid.cell_of(&raw) else { continue };
        if grid.state(grid.index(cell)) != CellState::Free {
            continue;
        }
        let position = grid.cell_center(cell);
        if out.iter().any(|v| v.position == position) {
            continue;
        }
        if !grid.segment_clear(&position, &cluster.centroid, |s| s != CellState::Occupied) {
            continue;
        }
        out.push(Viewpoint { position, yaw: yaw_towards(&position, &cluster.centroid), utility: 0.0, source_cluster: cluster.id });
    }
    out
}

/// Wider candidate set for clusters whose [`generate_viewpoints`] candidates
/// all fail (standoff point inside an obstacle, centroid hidden behind one).
///
/// Tries eight horizontal headings around the centroid at the full and half
/// standoff, at the centroid's height and one standoff higher. A candidate
/// needs a known-free cell and a clear line of sight to its nearest cluster
/// cell; it faces the centroid.
pub fn fallback_viewpoints(cluster: &FrontierCluster, grid: &OccupancyGrid, cfg: &ExplorationConfig) -> Vec<Viewpoint> {
    let mut out: Vec<Viewpoint> = Vec::new();
    for lift in [0.0, 1.0] {
        for dist in [1.0, 0.5] {
            for k in 0..8 {
                let a = k as f64 * std::f64::consts::FRAC_PI_4;
                let r = cfg.viewpoint_standoff * dist;
                let raw = cluster.centroid + Vec3::new(a.cos() * r, a.sin() * r, lift * cfg.viewpoint_standoff);
                let Some(cell) = grid.cell_of(&raw) else { continue };
                if grid.state(grid.index(cell)) != CellState::Free {
                    continue;
                }
                let position = grid.cell_center(cell);
                if out.iter().any(|v| v.position == position) {
                    continue;
                }
                let nearest = cluster
                    .cells
                    .iter()
                    .map(|&i| grid.index_center(i))
                    .min_by(|p, q| (p - position).norm().total_cmp(&(q - position).norm()))
                    .expect("clusters are nonempty");
                if !grid.segment_clear(&position, &nearest, |s| s != CellState::Occupied) {
                    continue;
                }
                let d = cluster.centroid - position;
                let yaw = if d.x == 0.0 && d.y == 0.0 { a + std::f64::consts::PI } else { d.y.atan2(d.x) };
                out.push(Viewpoint { position, yaw: crate::geom::wrap_angle(yaw), utility: 0.0, source_cluster: cluster.id });
            }
        }
    }
    out
}

/// True when a cell center lies inside the camera frustum at `pose` within
/// `max_range`.
pub fn in_frustum(pose: &Pose, cam: &CameraModel, max_range: f64, p: &Vec3) -> bool {
    let rel = p - pose.translation;
    if rel.norm() > max_range {
        return false;
    }
    let pc = pose.inverse_transform_point(p);
    match cam.project_camera_point(&pc) {
        Some((u, v)) => cam.contains(u, v),
        None => false,
    }
}

/// True when the segment from `from` to the center of `target` crosses no
/// occupied cell before reaching `target`.
pub fn cell_visible(grid: &OccupancyGrid, from: &Vec3, target: usize) -> bool {
    let to = grid.index_center(target);
    let d = to - from;
    let len = d.norm();
    if len < 1e-12 {
        return true;
    }
    let dir = d / len;
    for step in grid.walk(from, &dir) {
        let idx = linear_index(grid.dims, step.cell.map(|c| c as usize));
        if idx == target {
            return true;
        }
        if grid.state(idx) == CellState::Occupied {
            return false;
        }
        if step.t_enter > len {
            break;
        }
    }
    false
}

/// Utility of a viewpoint: unknown cells visible inside its frustum plus the
/// source cluster's frontier cells visible inside its frustum, weighted 1 each.
/// `cluster_cells` must be ascending.
pub fn score_viewpoint(grid: &OccupancyGrid, vp: &Viewpoint, cluster_cells: &[usize], cam: &CameraModel, cfg: &ExplorationConfig) -> f64 {
    let pose = vp.pose();
    let r = cfg.sensor_max_range;
    let lo = clamped_cell(grid, &(vp.position - Vec3::repeat(r)));
    let hi = clamped_cell(grid, &(vp.position + Vec3::repeat(r)));
    let mut count = 0usize;
    for z in lo[2]..=hi[2] {
        for y in lo[1]..=hi[1] {
            for x in lo[0]..=hi[0] {
                let idx = grid.index([x, y, z]);
                let counts = match grid.state(idx) {
                    CellState::Unknown => true,
                    CellState::Free => cluster_cells.binary_search(&idx).is_ok(),
                    CellState::Occupied => false,
                };
                if !counts {
                    continue;
                }
                let center = grid.index_center(idx);
                if in_frustum(&pose, cam, r, &center) && cell_visible(grid, &vp.position, idx) {
                    count += 1;
                }
            }
        }
    }
    count as f64
}

fn clamped_cell(grid: &OccupancyGrid, p: &Vec3) -> [usize; 3] {
    let q = (p - grid.origin) / grid.voxel_size;
    [0, 1, 2].map(|a| (q[a].floor().max(0.0) as usize).min(grid.dims[a] - 1))
}

#[cfg(test)]
mod tests {
    use super::super::frontier::{cluster_frontiers, detect_frontiers};
    use super::*;
    use std::f64::consts::PI;

    fn cfg() -> ExplorationConfig {
        ExplorationConfig { viewpoint_standoff: 2.0, sensor_max_range: 6.0, ..ExplorationConfig::default() }
    }

    /// 12³ grid of 0.5 m cells: free for x < 8, unknown beyond.
    fn half_known() -> OccupancyGrid {
        let mut g = OccupancyGrid::new([12, 12, 12], 0.5, Vec3::zeros());
        for i in 0..g.len() {
            if g.coords(i)[0] < 8 {
                g.set(i, CellState::Free);
            }
        }
        g
    }

    #[test]
    fn wall_patch_gets_one_viewpoint_facing_it() {
        let g = half_known();
        let f = detect_frontiers(&g);
        assert!(f.iter().all(|&i| g.coords(i)[0] == 7));
        let clusters = cluster_frontiers(&g, &f, 5);
        assert_eq!(clusters.len(), 1);
        let vps = generate_viewpoints(&clusters[0], &g, &cfg());
        assert_eq!(vps.len(), 1);
        let vp = vps[0];
        assert!(vp.position.x < clusters[0].centroid.x, "viewpoint on the free side");
        assert!(vp.yaw.cos() > 0.95, "faces +x, towards the unknown region; yaw {}", vp.yaw);
    }

    #[test]
    fn blocked_normal_gives_no_viewpoint() {
        let mut g = half_known();
        for i in 0..g.len() {
            let c = g.coords(i);
            if c[0] < 6 {
                g.set(i, CellState::Occupied);
            }
        }
        let clusters = cluster_frontiers(&g, &detect_frontiers(&g), 5);
        assert!(generate_viewpoints(&clusters[0], &g, &cfg()).is_empty());
    }

    #[test]
    fn yaw_faces_centroid() {
        assert!((yaw_towards(&Vec3::new(0.0, -2.0, 0.0), &Vec3::zeros()) - PI / 2.0).abs() < 1e-15);
    }

    #[test]
    fn known_free_view_scores_zero_unknown() {
        let mut g = OccupancyGrid::new([12, 12, 12], 0.5, Vec3::zeros());
        for i in 0..g.len() {
            g.set(i, CellState::Free);
        }
        let vp = Viewpoint { position: g.cell_center([6, 6, 6]), yaw: 0.0, utility: 0.0, source_cluster: 0 };
        let cam = CameraModel::centered(64, 48, 32.0);
        assert_eq!(score_viewpoint(&g, &vp, &[], &cam, &cfg()), 0.0);
    }

    #[test]
    fn wider_frustum_never_scores_less() {
        let g = half_known();
        let clusters = cluster_frontiers(&g, &detect_frontiers(&g), 5);
        let vp = generate_viewpoints(&clusters[0], &g, &cfg())[0];
        let narrow = CameraModel::centered(64, 48, 48.0);
        let wide = CameraModel::centered(64, 48, 24.0);
        let a = score_viewpoint(&g, &vp, &clusters[0].cells, &narrow, &cfg());
        let b = score_viewpoint(&g, &vp, &clusters[0].cells, &wide, &cfg());
        assert!(a > 0.0 && b >= a, "{a} {b}");
    }
}
