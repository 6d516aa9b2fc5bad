use super::grid::{CellState, OccupancyGrid};
use super::ExploreError;
use crate::geom::Vec3;
use crate::voxel::{in_bounds, neighbors_26};
use std::cmp::Ordering;
use std::collections::BinaryHeap;

#[derive(Clone, Debug, PartialEq)]
pub struct PlannedPath {
    /// Starts at `a`, ends at `b`.
    pub waypoints: Vec<Vec3>,
    /// Sum of segment lengths after smoothing.
    pub length: f64,
    /// Graph distance between the start and goal cells before smoothing.
    pub raw_length: f64,
}

#[derive(PartialEq)]
struct Entry {
    f: f64,
    idx: usize,
}

impl Eq for Entry {}

impl Ord for Entry {
    // Min-heap on f, then on index.
    fn cmp(&self, o: &Self) -> Ordering {
        o.f.total_cmp(&self.f).then(o.idx.cmp(&self.idx))
    }
}

impl PartialOrd for Entry {
    fn partial_cmp(&self, o: &Self) -> Option<Ordering> {
        Some(self.cmp(o))
    }
}

/// Free-cell neighbors of `idx` under 26-connectivity with edge lengths in
/// meters. A diagonal move is allowed only when every cell it sweeps past
/// (all axis-subsets of the offset) is free, so paths never cut a corner.
pub(crate) fn free_neighbors(grid: &OccupancyGrid, idx: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
    let c = grid.coords(idx);
    let c = [c[0] as i64, c[1] as i64, c[2] as i64];
    neighbors_26().filter_map(move |d| {
        for mask in 1..8u8 {
            let sub: [i64; 3] = [0, 1, 2].map(|a| if mask >> a & 1 == 1 { d[a] } else { 0 });
            if (0..3).any(|a| mask >> a & 1 == 1 && d[a] == 0) {
                continue;
            }
            let n = [c[0] + sub[0], c[1] + sub[1], c[2] + sub[2]];
            if grid.state_at(n) != Some(CellState::Free) {
                return None;
            }
        }
        let n = [c[0] + d[0], c[1] + d[1], c[2] + d[2]];
        debug_assert!(in_bounds(grid.dims, n));
        let len = ((d[0] * d[0] + d[1] * d[1] + d[2] * d[2]) as f64).sqrt() * grid.voxel_size;
        Some((grid.index([n[0] as usize, n[1] as usize, n[2] as usize]), len))
    })
}

/// A* over free cells; returns the cell sequence and its graph length.
fn astar(grid: &OccupancyGrid, start: usize, goal: usize) -> Option<(Vec<usize>, f64)> {
    let goal_p = grid.index_center(goal);
    let h = |i: usize| (grid.index_center(i) - goal_p).norm();
    let mut g = vec![f64::INFINITY; grid.len()];
    let mut parent = vec![usize::MAX; grid.len()];
    let mut closed = vec![false; grid.len()];
    let mut open = BinaryHeap::new();
    g[start] = 0.0;
    open.push(Entry { f: h(start), idx: start });
    while let Some(Entry { idx, .. }) = open.pop() {
        if closed[idx] {
            continue;
        }
        if idx == goal {
            let mut cells = vec![goal];
            let mut cur = goal;
            while cur != start {
                cur = parent[cur];
                cells.push(cur);
            }
            cells.reverse();
            return Some((cells, g[goal]));
        }
        closed[idx] = true;
        for (n, w) in free_neighbors(grid, idx) {
            let cand = g[idx] + w;
            if cand < g[n] {
                g[n] = cand;
                parent[n] = idx;
                open.push(Entry { f: cand + h(n), idx: n });
            }
        }
    }
    None
}

/// Shortest free-space graph distance between the cells containing `a` and
/// `b`, or `None` when unreachable.
pub fn raw_grid_distance(grid: &OccupancyGrid, a: &Vec3, b: &Vec3) -> Option<f64> {
    let sa = free_index(grid, a)?;
    let sb = free_index(grid, b)?;
    astar(grid, sa, sb).map(|(_, d)| d)
}

fn free_index(grid: &OccupancyGrid, p: &Vec3) -> Option<usize> {
    grid.index_of(p).filter(|&i| grid.state(i) == CellState::Free)
}

/// Collision-free path from `a` to `b` through known-free cells: A* over the
/// 26-connected cell graph, then greedy line-of-sight shortcutting.
pub fn plan_path(grid: &OccupancyGrid, a: &Vec3, b: &Vec3) -> Result<PlannedPath, ExploreError> {
    let unreachable = || ExploreError::Unreachable(*a, *b);
    if a == b {
        free_index(grid, a).ok_or_else(unreachable)?;
        return Ok(PlannedPath { waypoints: vec![*a], length: 0.0, raw_length: 0.0 });
    }
    let sa = free_index(grid, a).ok_or_else(unreachable)?;
    let sb = free_index(grid, b).ok_or_else(unreachable)?;
    let (cells, raw_length) = astar(grid, sa, sb).ok_or_else(unreachable)?;

    let mut pts = Vec::with_capacity(cells.len() + 2);
    pts.push(*a);
    if cells.len() > 2 {
        pts.extend(cells[1..cells.len() - 1].iter().map(|&i| grid.index_center(i)));
    }
    pts.push(*b);

    let free = |s: CellState| s == CellState::Free;
    let mut waypoints = vec![*a];
    let mut i = 0;
    while i + 1 < pts.len() {
        let mut j = pts.len() - 1;
        while j > i + 1 && !grid.segment_clear(&pts[i], &pts[j], free) {
            j -= 1;
        }
        waypoints.push(pts[j]);
        i = j;
    }
    let length = waypoints.windows(2).map(|w| (w[1] - w[0]).norm()).sum();
    Ok(PlannedPath { waypoints, length, raw_length })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn corridor() -> OccupancyGrid {
        let mut g = OccupancyGrid::new([12, 3, 3], 0.5, Vec3::zeros());
        for x in 0..12 {
            let i = g.index([x, 1, 1]);
            g.set(i, CellState::Free);
        }
        g
    }

    #[test]
    fn same_point_is_zero_length() {
        let g = corridor();
        let a = g.cell_center([2, 1, 1]);
        let p = plan_path(&g, &a, &a).unwrap();
        assert_eq!(p.waypoints, vec![a]);
        assert_eq!(p.length, 0.0);
    }

    #[test]
    fn straight_corridor() {
        let g = corridor();
        let a = g.cell_center([1, 1, 1]);
        let b = g.cell_center([9, 1, 1]);
        let p = plan_path(&g, &a, &b).unwrap();
        assert!((p.length - 4.0).abs() < 1e-12);
        assert!((p.raw_length - 4.0).abs() < 1e-12);
        assert_eq!(p.waypoints, vec![a, b]);
    }

    #[test]
    fn blocked_is_unreachable() {
        let mut g = corridor();
        let i = g.index([5, 1, 1]);
        g.set(i, CellState::Occupied);
        let r = plan_path(&g, &g.cell_center([1, 1, 1]), &g.cell_center([9, 1, 1]));
        assert!(matches!(r, Err(ExploreError::Unreachable(..))));
    }

    #[test]
    fn no_corner_cutting() {
        // L-shaped free region: (0,0) (1,0) (1,1). The diagonal (0,0)→(1,1)
        // would clip the unknown cell (0,1).
        let mut g = OccupancyGrid::new([2, 2, 1], 1.0, Vec3::zeros());
        for c in [[0, 0, 0], [1, 0, 0], [1, 1, 0]] {
            let i = g.index(c);
            g.set(i, CellState::Free);
        }
        let p = plan_path(&g, &g.cell_center([0, 0, 0]), &g.cell_center([1, 1, 0])).unwrap();
        assert!((p.raw_length - 2.0).abs() < 1e-12);
    }
}
