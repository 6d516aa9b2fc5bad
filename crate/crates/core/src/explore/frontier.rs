use super::grid::{CellState, OccupancyGrid};
use crate::geom::{Mat3, Vec3};
use crate::voxel::{neighbors_26, NEIGHBORS_6};
use nalgebra::SymmetricEigen;
use std::collections::VecDeque;

/// A 26-connected set of frontier cells with the PCA of their centers.
#[derive(Clone, Debug, PartialEq)]
pub struct FrontierCluster {
    pub id: usize,
    /// Grid indices, ascending.
    pub cells: Vec<usize>,
    pub centroid: Vec3,
    /// Orthonormal principal axes, ordered by descending eigenvalue.
    pub axes: [Vec3; 3],
    pub eigenvalues: [f64; 3],
}

impl FrontierCluster {
    /// Axis of least spread; the normal of a planar patch.
    pub fn normal(&self) -> Vec3 {
        self.axes[2]
    }
}

/// Free cells with at least one unknown 6-neighbor, ascending by index.
pub fn detect_frontiers(grid: &OccupancyGrid) -> Vec<usize> {
    (0..grid.len()).filter(|&i| grid.state(i) == CellState::Free && is_frontier(grid, i)).collect()
}

fn is_frontier(grid: &OccupancyGrid, idx: usize) -> bool {
    let c = grid.coords(idx);
    NEIGHBORS_6.iter().any(|d| grid.state_at([c[0] as i64 + d[0], c[1] as i64 + d[1], c[2] as i64 + d[2]]) == Some(CellState::Unknown))
}

/// Groups frontier cells into 26-connected components, drops components
/// smaller than `min_cluster_size`, and runs PCA on each survivor's cell
/// centers. Clusters are numbered in order of their lowest cell index.
pub fn cluster_frontiers(grid: &OccupancyGrid, cells: &[usize], min_cluster_size: usize) -> Vec<FrontierCluster> {
    let mut is_member = vec![false; grid.len()];
    for &c in cells {
        is_member[c] = true;
    }
    let mut visited = vec![false; grid.len()];
    let mut sorted = cells.to_vec();
    sorted.sort_unstable();
    let mut clusters = Vec::new();
    for &seed in &sorted {
        if visited[seed] {
            continue;
        }
        visited[seed] = true;
        let mut members = vec![seed];
        let mut queue = VecDeque::from([seed]);
        while let Some(idx) = queue.pop_front() {
            let c = grid.coords(idx);
            for d in neighbors_26() {
                let n = [c[0] as i64 + d[0], c[1] as i64 + d[1], c[2] as i64 + d[2]];
                if grid.state_at(n).is_none() {
                    continue;
                }
                let ni = grid.index([n[0] as usize, n[1] as usize, n[2] as usize]);
                if is_member[ni] && !visited[ni] {
                    visited[ni] = true;
                    members.push(ni);
                    queue.push_back(ni);
                }
            }
        }
        if members.len() < min_cluster_size {
            continue;
        }
        members.sort_unstable();
        let points: Vec<Vec3> = members.iter().map(|&i| grid.index_center(i)).collect();
        let (centroid, axes, eigenvalues) = principal_axes(&points);
        clusters.push(FrontierCluster { id: clusters.len(), cells: members, centroid, axes, eigenvalues });
    }
    clusters
}

/// Mean, principal axes and eigenvalues (descending, clamped at zero) of the
/// population covariance of `points`.
pub fn principal_axes(points: &[Vec3]) -> (Vec3, [Vec3; 3], [f64; 3]) {
    let n = points.len().max(1) as f64;
    let centroid = points.iter().fold(Vec3::zeros(), |a, p| a + p) / n;
    let mut cov = Mat3::zeros();
    for p in points {
        let d = p - centroid;
        cov += d * d.transpose();
    }
    cov /= n;
    let eig = SymmetricEigen::new(cov);
    let mut order = [0usize, 1, 2];
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]).then(a.cmp(&b)));
    let axes = order.map(|i| eig.eigenvectors.column(i).into_owned());
    let eigenvalues = order.map(|i| eig.eigenvalues[i].max(0.0));
    (centroid, axes, eigenvalues)
}
