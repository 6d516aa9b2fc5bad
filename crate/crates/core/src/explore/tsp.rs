use super::grid::OccupancyGrid;
use super::path::plan_path;
use super::viewpoint::Viewpoint;
use super::ExplorationConfig;
use crate::geom::yaw_distance;

/// Travel-time cost matrix over `[current, candidates...]`. Entry `(i, j)` is
/// the time to fly from node `i` to node `j`; column 0 is zero (open tour) and
/// `f64::INFINITY` marks unreachable pairs.
#[derive(Clone, Debug, PartialEq)]
pub struct TspMatrix {
    pub costs: Vec<Vec<f64>>,
    /// Candidate indices (0-based into the candidate list) with no free path
    /// from the current pose.
    pub unreachable: Vec<usize>,
}

impl TspMatrix {
    pub fn len(&self) -> usize {
        self.costs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.costs.is_empty()
    }
}

/// Time to cover `dis` meters and turn from `yaw1` to `yaw2`, whichever limit
/// binds. The heading change is wrapped into [0, π].
pub fn edge_cost(dis: f64, yaw1: f64, yaw2: f64, cfg: &ExplorationConfig) -> f64 {
    (dis / cfg.v_max).max(yaw_distance(yaw1, yaw2) / cfg.yaw_max)
}

/// Builds the open-tour ATSP matrix. Path lengths come from [`plan_path`],
/// computed once per unordered pair.
pub fn build_tsp_matrix(current: &Viewpoint, candidates: &[Viewpoint], grid: &OccupancyGrid, cfg: &ExplorationConfig) -> TspMatrix {
    let nodes: Vec<&Viewpoint> = std::iter::once(current).chain(candidates).collect();
    let n = nodes.len();
    let mut dis = vec![vec![f64::INFINITY; n]; n];
    for i in 0..n {
        dis[i][i] = 0.0;
        for j in i + 1..n {
            if let Ok(p) = plan_path(grid, &nodes[i].position, &nodes[j].position) {
                dis[i][j] = p.length;
                dis[j][i] = p.length;
            }
        }
    }
    let mut costs = vec![vec![0.0; n]; n];
    for i in 0..n {
        for j in 1..n {
            costs[i][j] = if dis[i][j].is_finite() { edge_cost(dis[i][j], nodes[i].yaw, nodes[j].yaw, cfg) } else { f64::INFINITY };
        }
    }
    let unreachable = (1..n).filter(|&j| !dis[0][j].is_finite()).map(|j| j - 1).collect();
    TspMatrix { costs, unreachable }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum AtspMode {
    /// Held-Karp up to 10 candidates, heuristic beyond.
    #[default]
    Auto,
    Exact,
    Heuristic,
}

/// Largest candidate count solved exactly in [`AtspMode::Auto`].
pub const EXACT_LIMIT: usize = 10;

/// Cost of the open path `tour` (edges between consecutive nodes).
pub fn tour_cost(costs: &[Vec<f64>], tour: &[usize]) -> f64 {
    tour.windows(2).map(|w| costs[w[0]][w[1]]).sum()
}

/// Orders the candidates reachable from node 0 into an open tour starting at
/// 0. Returns an empty tour when none is reachable.
pub fn solve_atsp(costs: &[Vec<f64>], mode: AtspMode) -> Vec<usize> {
    let n = costs.len();
    if n == 0 {
        return Vec::new();
    }
    let nodes: Vec<usize> = (1..n).filter(|&j| costs[0][j].is_finite()).collect();
    if nodes.is_empty() {
        return Vec::new();
    }
    let exact = match mode {
        AtspMode::Exact => true,
        AtspMode::Heuristic => false,
        AtspMode::Auto => nodes.len() <= EXACT_LIMIT,
    };
    if exact {
        held_karp(costs, &nodes)
    } else {
        let mut tour = nearest_neighbor(costs, &nodes);
        improve(costs, &mut tour);
        tour
    }
}

/// Exact open-path ATSP by dynamic programming over subsets. Ties go to the
/// lower node index.
fn held_karp(costs: &[Vec<f64>], nodes: &[usize]) -> Vec<usize> {
    let m = nodes.len();
    let full = 1usize << m;
    let mut best = vec![f64::INFINITY; full * m];
    let mut prev = vec![usize::MAX; full * m];
    for k in 0..m {
        best[(1 << k) * m + k] = costs[0][nodes[k]];
    }
    for set in 1..full {
        for last in 0..m {
            if set >> last & 1 == 0 {
                continue;
            }
            let cur = best[set * m + last];
            if !cur.is_finite() {
                continue;
            }
            for next in 0..m {
                if set >> next & 1 == 1 {
                    continue;
                }
                let ns = set | 1 << next;
                let c = cur + costs[nodes[last]][nodes[next]];
                if c < best[ns * m + next] {
                    best[ns * m + next] = c;
                    prev[ns * m + next] = last;
                }
            }
        }
    }
    let all = full - 1;
    let mut end = 0;
    for k in 1..m {
        if best[all * m + k] < best[all * m + end] {
            end = k;
        }
    }
    let mut order = Vec::with_capacity(m + 1);
    let (mut set, mut k) = (all, end);
    while k != usize::MAX {
        order.push(nodes[k]);
        let p = prev[set * m + k];
        set &= !(1 << k);
        k = p;
    }
    order.push(0);
    order.reverse();
    order
}

fn nearest_neighbor(costs: &[Vec<f64>], nodes: &[usize]) -> Vec<usize> {
    let mut tour = vec![0];
    let mut left: Vec<usize> = nodes.to_vec();
    while !left.is_empty() {
        let cur = *tour.last().unwrap();
        let mut pick = 0;
        for k in 1..left.len() {
            if costs[cur][left[k]] < costs[cur][left[pick]] {
                pick = k;
            }
        }
        tour.push(left.remove(pick));
    }
    tour
}

/// Or-opt (segment moves of length 1 to 3) and 2-opt (segment reversal)
/// until neither finds a strictly improving move. Node 0 stays first.
fn improve(costs: &[Vec<f64>], tour: &mut Vec<usize>) {
    let n = tour.len();
    let mut best = tour_cost(costs, tour);
    loop {
        let mut improved = false;
        for len in 1..=3.min(n - 1) {
            for i in 1..=n - len {
                for j in 1..=n - len {
                    if j == i {
                        continue;
                    }
                    let mut t = tour.clone();
                    let seg: Vec<usize> = t.drain(i..i + len).collect();
                    t.splice(j..j, seg);
                    let c = tour_cost(costs, &t);
                    if c < best - 1e-12 {
                        *tour = t;
                        best = c;
                        improved = true;
                    }
                }
            }
        }
        for i in 1..n {
            for j in i + 1..n {
                let mut t = tour.clone();
                t[i..=j].reverse();
                let c = tour_cost(costs, &t);
                if c < best - 1e-12 {
                    *tour = t;
                    best = c;
                    improved = true;
                }
            }
        }
        if !improved {
            break;
        }
    }
}

/// Cost of the nearest-neighbor tour alone, for comparing against the
/// improved heuristic.
pub fn nearest_neighbor_cost(costs: &[Vec<f64>]) -> f64 {
    let nodes: Vec<usize> = (1..costs.len()).filter(|&j| costs[0][j].is_finite()).collect();
    tour_cost(costs, &nearest_neighbor(costs, &nodes))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::explore::CellState;
    use crate::geom::Vec3;
    use std::f64::consts::PI;

    #[test]
    fn edge_cost_examples() {
        let cfg = ExplorationConfig::default();
        assert_eq!(edge_cost(2.0, 0.0, 1.0, &cfg), 2.0);
        assert_eq!(edge_cost(0.5, 0.0, PI, &cfg), PI);
        assert_eq!(edge_cost(0.0, 0.3, 0.3, &cfg), 0.0);
        // Wrapped: 3.0 to −3.0 is a 0.283 rad turn, not 6 rad.
        assert!((edge_cost(0.0, 3.0, -3.0, &cfg) - (2.0 * PI - 6.0)).abs() < 1e-12);
    }

    #[test]
    fn single_candidate() {
        let c = vec![vec![0.0, 3.0], vec![0.0, 0.0]];
        assert_eq!(solve_atsp(&c, AtspMode::Auto), vec![0, 1]);
        assert_eq!(solve_atsp(&c, AtspMode::Heuristic), vec![0, 1]);
    }

    #[test]
    fn collinear_visits_near_then_far() {
        // A=0 at x=0, B at 1, C at 2.
        let x = [0.0f64, 1.0, 2.0];
        let c: Vec<Vec<f64>> = (0..3).map(|i| (0..3).map(|j| if j == 0 { 0.0 } else { (x[i] - x[j]).abs() }).collect()).collect();
        assert_eq!(solve_atsp(&c, AtspMode::Exact), vec![0, 1, 2]);
        assert_eq!(solve_atsp(&c, AtspMode::Heuristic), vec![0, 1, 2]);
    }

    #[test]
    fn all_unreachable_is_empty() {
        let inf = f64::INFINITY;
        let c = vec![vec![0.0, inf, inf], vec![0.0, 0.0, 1.0], vec![0.0, 1.0, 0.0]];
        assert!(solve_atsp(&c, AtspMode::Auto).is_empty());
    }

    #[test]
    fn unreachable_candidate_skipped() {
        let inf = f64::INFINITY;
        let c = vec![vec![0.0, 2.0, inf], vec![0.0, 0.0, inf], vec![0.0, inf, 0.0]];
        assert_eq!(solve_atsp(&c, AtspMode::Auto), vec![0, 1]);
    }

    #[test]
    fn matrix_diagonal_zero_and_unreachable_flagged() {
        let mut g = OccupancyGrid::new([8, 3, 3], 0.5, Vec3::zeros());
        for x in 0..5 {
            let i = g.index([x, 1, 1]);
            g.set(i, CellState::Free);
        }
        let i = g.index([7, 1, 1]);
        g.set(i, CellState::Free);
        let vp = |x: usize, yaw: f64| Viewpoint { position: g.cell_center([x, 1, 1]), yaw, utility: 1.0, source_cluster: 0 };
        let cfg = ExplorationConfig::default();
        let m = build_tsp_matrix(&vp(0, 0.0), &[vp(4, 1.0), vp(0, 0.0), vp(7, 0.0)], &g, &cfg);
        assert_eq!(m.unreachable, vec![2]);
        for i in 0..4 {
            assert_eq!(m.costs[i][i], 0.0);
            assert_eq!(m.costs[i][0], 0.0);
        }
        assert_eq!(m.costs[0][2], 0.0, "same pose costs nothing");
        assert!((m.costs[0][1] - 2.0).abs() < 1e-12);
        assert!(m.costs[0][3].is_infinite());
    }
}
