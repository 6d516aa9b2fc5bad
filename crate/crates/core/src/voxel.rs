//! Integer-stepping voxel traversal (Amanatides–Woo) over a bounded grid.

use crate::geom::Vec3;

/// One cell visited by a [`VoxelWalk`]; distances are in world units along
/// the unit ray direction.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct WalkStep {
    pub cell: [i64; 3],
    pub t_enter: f64,
    pub t_exit: f64,
    /// Axis crossed to enter this cell; `None` for the starting cell.
    pub entered_axis: Option<usize>,
    /// Direction of the step that entered this cell (±1 on `entered_axis`).
    pub entered_sign: i64,
}

/// Iterator over the grid cells pierced by a ray, in order. Ends when the ray
/// leaves the grid. When the ray crosses several cell faces at the same
/// parameter, the step is taken along the smallest axis index first.
#[derive(Clone, Debug)]
pub struct VoxelWalk {
    dims: [i64; 3],
    voxel_size: f64,
    cell: [i64; 3],
    step: [i64; 3],
    t_max: [f64; 3],
    t_delta: [f64; 3],
    t_enter: f64,
    entered_axis: Option<usize>,
    entered_sign: i64,
    done: bool,
}

impl VoxelWalk {
    /// `origin` is a world position relative to the grid's (0,0,0) corner;
    /// `dir` must be unit length.
    pub fn new(dims: [usize; 3], voxel_size: f64, origin: Vec3, dir: Vec3) -> Self {
        let o = origin / voxel_size;
        let mut cell = [0i64; 3];
        let mut step = [0i64; 3];
        let mut t_max = [f64::INFINITY; 3];
        let mut t_delta = [f64::INFINITY; 3];
        for a in 0..3 {
            cell[a] = o[a].floor() as i64;
            if dir[a] > 0.0 {
                step[a] = 1;
                t_delta[a] = voxel_size / dir[a];
                t_max[a] = ((cell[a] + 1) as f64 - o[a]) * voxel_size / dir[a];
            } else if dir[a] < 0.0 {
                step[a] = -1;
                t_delta[a] = -voxel_size / dir[a];
                t_max[a] = (cell[a] as f64 - o[a]) * voxel_size / dir[a];
            }
        }
        let dims_i = [dims[0] as i64, dims[1] as i64, dims[2] as i64];
        let inside = (0..3).all(|a| cell[a] >= 0 && cell[a] < dims_i[a]);
        Self { dims: dims_i, voxel_size, cell, step, t_max, t_delta, t_enter: 0.0, entered_axis: None, entered_sign: 0, done: !inside }
    }

    pub fn voxel_size(&self) -> f64 {
        self.voxel_size
    }

    fn next_axis(&self) -> usize {
        let mut axis = 0;
        for a in 1..3 {
            if self.t_max[a] < self.t_max[axis] {
                axis = a;
            }
        }
        axis
    }
}

impl Iterator for VoxelWalk {
    type Item = WalkStep;

    fn next(&mut self) -> Option<WalkStep> {
        if self.done {
            return None;
        }
        let axis = self.next_axis();
        let t_exit = self.t_max[axis];
        let out =
            WalkStep { cell: self.cell, t_enter: self.t_enter, t_exit, entered_axis: self.entered_axis, entered_sign: self.entered_sign };
        if !t_exit.is_finite() {
            self.done = true;
            return Some(out);
        }
        self.cell[axis] += self.step[axis];
        self.t_enter = t_exit;
        self.t_max[axis] += self.t_delta[axis];
        self.entered_axis = Some(axis);
        self.entered_sign = self.step[axis];
        if self.cell[axis] < 0 || self.cell[axis] >= self.dims[axis] {
            self.done = true;
        }
        Some(out)
    }
}

#[inline]
pub fn in_bounds(dims: [usize; 3], c: [i64; 3]) -> bool {
    (0..3).all(|a| c[a] >= 0 && (c[a] as usize) < dims[a])
}

#[inline]
pub fn linear_index(dims: [usize; 3], c: [usize; 3]) -> usize {
    (c[2] * dims[1] + c[1]) * dims[0] + c[0]
}

#[inline]
pub fn unlinear_index(dims: [usize; 3], idx: usize) -> [usize; 3] {
    let x = idx % dims[0];
    let y = (idx / dims[0]) % dims[1];
    let z = idx / (dims[0] * dims[1]);
    [x, y, z]
}

pub const NEIGHBORS_6: [[i64; 3]; 6] = [[-1, 0, 0], [1, 0, 0], [0, -1, 0], [0, 1, 0], [0, 0, -1], [0, 0, 1]];

/// The 26 offsets of the full 3×3×3 neighborhood, in lexicographic order.
pub fn neighbors_26() -> impl Iterator<Item = [i64; 3]> {
    (-1..=1i64).flat_map(|dz| (-1..=1i64).flat_map(move |dy| (-1..=1i64).map(move |dx| [dx, dy, dz]))).filter(|d| *d != [0, 0, 0])
}
