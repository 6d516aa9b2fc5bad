use super::ExploreError;
use crate::geom::{CameraModel, Vec3};
use crate::simworld::{GroundTruthFrame, VoxelScene};
use crate::voxel::{in_bounds, linear_index, unlinear_index, VoxelWalk};
use std::io::{self, Read, Write};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
#[repr(u8)]
pub enum CellState {
    Unknown = 0,
    Free = 1,
    Occupied = 2,
}

impl CellState {
    fn from_byte(b: u8) -> io::Result<Self> {
        match b {
            0 => Ok(Self::Unknown),
            1 => Ok(Self::Free),
            2 => Ok(Self::Occupied),
            _ => Err(io::Error::new(io::ErrorKind::InvalidData, format!("bad cell state byte {b}"))),
        }
    }
}

/// Dense voxel occupancy map. Cell `(i, j, k)` spans
/// `origin + [i, i+1) × [j, j+1) × [k, k+1) · voxel_size`.
#[derive(Clone, Debug, PartialEq)]
pub struct OccupancyGrid {
    pub dims: [usize; 3],
    pub voxel_size: f64,
    pub origin: Vec3,
    states: Vec<CellState>,
}

impl OccupancyGrid {
    pub fn new(dims: [usize; 3], voxel_size: f64, origin: Vec3) -> Self {
        Self { dims, voxel_size, origin, states: vec![CellState::Unknown; dims[0] * dims[1] * dims[2]] }
    }

    /// All-unknown grid covering a scene cell-for-cell.
    pub fn for_scene(scene: &VoxelScene) -> Self {
        Self::new(scene.dims, scene.voxel_size, Vec3::zeros())
    }

    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    pub fn states(&self) -> &[CellState] {
        &self.states
    }

    pub fn index(&self, c: [usize; 3]) -> usize {
        linear_index(self.dims, c)
    }

    pub fn coords(&self, idx: usize) -> [usize; 3] {
        unlinear_index(self.dims, idx)
    }

    pub fn state(&self, idx: usize) -> CellState {
        self.states[idx]
    }

    pub fn state_at(&self, c: [i64; 3]) -> Option<CellState> {
        in_bounds(self.dims, c).then(|| self.states[linear_index(self.dims, [c[0] as usize, c[1] as usize, c[2] as usize])])
    }

    /// Sets a cell's state. Returns whether it changed. Cells never return to
    /// `Unknown`; such requests are ignored.
    pub fn set(&mut self, idx: usize, s: CellState) -> bool {
        if s == CellState::Unknown || self.states[idx] == s {
            return false;
        }
        self.states[idx] = s;
        true
    }

    pub fn count(&self, s: CellState) -> usize {
        self.states.iter().filter(|&&x| x == s).count()
    }

    pub fn cell_center(&self, c: [usize; 3]) -> Vec3 {
        self.origin + Vec3::new(c[0] as f64 + 0.5, c[1] as f64 + 0.5, c[2] as f64 + 0.5) * self.voxel_size
    }

    pub fn index_center(&self, idx: usize) -> Vec3 {
        self.cell_center(self.coords(idx))
    }

    pub fn cell_of(&self, p: &Vec3) -> Option<[usize; 3]> {
        let q = (p - self.origin) / self.voxel_size;
        let c = [q.x.floor() as i64, q.y.floor() as i64, q.z.floor() as i64];
        in_bounds(self.dims, c).then(|| [c[0] as usize, c[1] as usize, c[2] as usize])
    }

    pub fn index_of(&self, p: &Vec3) -> Option<usize> {
        self.cell_of(p).map(|c| self.index(c))
    }

    pub fn is_free_at(&self, p: &Vec3) -> bool {
        self.index_of(p).is_some_and(|i| self.states[i] == CellState::Free)
    }

    /// Cells pierced by the ray from `from` with unit direction `dir`.
    pub fn walk(&self, from: &Vec3, dir: &Vec3) -> VoxelWalk {
        VoxelWalk::new(self.dims, self.voxel_size, from - self.origin, *dir)
    }

    /// True when the straight segment `a → b` crosses no cell failing `pass`.
    /// The cell containing `b` is included.
    pub fn segment_clear(&self, a: &Vec3, b: &Vec3, pass: impl Fn(CellState) -> bool) -> bool {
        let d = b - a;
        let len = d.norm();
        if len < 1e-12 {
            return self.index_of(a).is_some_and(|i| pass(self.states[i]));
        }
        let dir = d / len;
        let mut reached = false;
        for step in self.walk(a, &dir) {
            if step.t_enter > len {
                reached = true;
                break;
            }
            let s = self.states[linear_index(self.dims, step.cell.map(|v| v as usize))];
            if !pass(s) {
                return false;
            }
            if step.t_exit >= len {
                reached = true;
                break;
            }
        }
        reached
    }

    /// Marks the cells a depth frame observed: cells before each return become
    /// free and the returning cell occupied; rays without a return (range 0 or
    /// beyond `max_range`) clear cells out to `max_range`. Returns the number of
    /// cells whose state changed.
    pub fn integrate_depth(&mut self, frame: &GroundTruthFrame, cam: &CameraModel, max_range: f64) -> Result<usize, ExploreError> {
        let origin = frame.pose.translation;
        if self.cell_of(&origin).is_none() {
            return Err(ExploreError::OutsideGrid(origin));
        }
        if frame.depth.width != cam.width || frame.depth.height != cam.height {
            return Err(ExploreError::FrameSize);
        }
        let eps = 1e-3 * self.voxel_size;
        let mut changed = 0;
        for v in 0..cam.height {
            for u in 0..cam.width {
                let d = frame.depth.get(u, v);
                let dir = (frame.pose.rotation * cam.pixel_ray(u as f64, v as f64)).normalize();
                let hit = d > 0.0 && d <= max_range;
                for step in self.walk(&origin, &dir) {
                    let idx = linear_index(self.dims, step.cell.map(|c| c as usize));
                    if hit {
                        if step.t_enter >= d - eps {
                            changed += self.set(idx, CellState::Occupied) as usize;
                            break;
                        }
                    } else if step.t_enter >= max_range {
                        break;
                    }
                    changed += self.set(idx, CellState::Free) as usize;
                }
            }
        }
        Ok(changed)
    }

    /// `grid.bin`: dims (3 × u32 LE), voxel_size (f64 LE), origin (3 × f64 LE),
    /// then one byte per cell (0 unknown, 1 free, 2 occupied) in x-fastest order.
    pub fn write_bin<W: Write>(&self, mut w: W) -> io::Result<()> {
        for d in self.dims {
            w.write_all(&(d as u32).to_le_bytes())?;
        }
        w.write_all(&self.voxel_size.to_le_bytes())?;
        for a in 0..3 {
            w.write_all(&self.origin[a].to_le_bytes())?;
        }
        let body: Vec<u8> = self.states.iter().map(|&s| s as u8).collect();
        w.write_all(&body)
    }

    pub fn read_bin<R: Read>(mut r: R) -> io::Result<Self> {
        let mut b4 = [0u8; 4];
        let mut b8 = [0u8; 8];
        let mut dims = [0usize; 3];
        for d in &mut dims {
            r.read_exact(&mut b4)?;
            *d = u32::from_le_bytes(b4) as usize;
        }
        r.read_exact(&mut b8)?;
        let voxel_size = f64::from_le_bytes(b8);
        let mut origin = Vec3::zeros();
        for a in 0..3 {
            r.read_exact(&mut b8)?;
            origin[a] = f64::from_le_bytes(b8);
        }
        let mut body = vec![0u8; dims[0] * dims[1] * dims[2]];
        r.read_exact(&mut body)?;
        let states = body.into_iter().map(CellState::from_byte).collect::<io::Result<_>>()?;
        Ok(Self { dims, voxel_size, origin, states })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geom::Pose;
    use crate::image::{DepthMap, RgbImage};

    fn single_ray_frame(pos: Vec3, depth: f64) -> (GroundTruthFrame, CameraModel) {
        // 1×1 camera whose only pixel looks along the optical axis (+x at yaw 0).
        let cam = CameraModel { width: 1, height: 1, fx: 1.0, fy: 1.0, cx: 0.0, cy: 0.0 };
        let mut d = DepthMap::new(1, 1);
        d.data[0] = depth;
        let frame =
            GroundTruthFrame { frame_id: 0, rgb: RgbImage::new(1, 1), depth: d, pose: Pose::from_position_yaw(pos, 0.0), timestamp: 0.0 };
        (frame, cam)
    }

    #[test]
    fn wall_hit_at_two_meters() {
        // Camera on the x = 0.25 cell boundary, return at 2 m: cells 1..=8 are
        // traversed (8 free), cell 9 holds the return.
        let mut g = OccupancyGrid::new([16, 3, 3], 0.25, Vec3::zeros());
        let (frame, cam) = single_ray_frame(Vec3::new(0.25, 0.375, 0.375), 2.0);
        g.integrate_depth(&frame, &cam, 5.0).unwrap();
        let states: Vec<_> = (0..16).map(|x| g.state(g.index([x, 1, 1]))).collect();
        assert_eq!(states[0], CellState::Unknown);
        assert!(states[1..=8].iter().all(|&s| s == CellState::Free));
        assert_eq!(states[9], CellState::Occupied);
        assert!(states[10..].iter().all(|&s| s == CellState::Unknown));
        assert_eq!(g.count(CellState::Free), 8);
        assert_eq!(g.count(CellState::Occupied), 1);
    }

    #[test]
    fn no_return_clears_to_max_range() {
        let mut g = OccupancyGrid::new([16, 3, 3], 0.25, Vec3::zeros());
        let (frame, cam) = single_ray_frame(Vec3::new(0.125, 0.375, 0.375), 0.0);
        g.integrate_depth(&frame, &cam, 1.0).unwrap();
        // Cells entered before 1 m: t_enter = 0, .125, .375, .625, .875.
        assert_eq!(g.count(CellState::Free), 5);
        assert_eq!(g.count(CellState::Occupied), 0);
    }

    #[test]
    fn integration_is_idempotent_and_grid_roundtrips() {
        let mut g = OccupancyGrid::new([16, 3, 3], 0.25, Vec3::new(1.0, 2.0, 3.0));
        let (frame, cam) = single_ray_frame(Vec3::new(1.3, 2.375, 3.375), 1.7);
        assert!(g.integrate_depth(&frame, &cam, 5.0).unwrap() > 0);
        let once = g.clone();
        assert_eq!(g.integrate_depth(&frame, &cam, 5.0).unwrap(), 0);
        assert_eq!(g, once);

        let mut buf = Vec::new();
        g.write_bin(&mut buf).unwrap();
        assert_eq!(buf.len(), 12 + 8 + 24 + 16 * 9);
        assert_eq!(OccupancyGrid::read_bin(&buf[..]).unwrap(), g);
    }

    #[test]
    fn frame_outside_grid_is_an_error() {
        let mut g = OccupancyGrid::new([4, 4, 4], 0.25, Vec3::zeros());
        let (frame, cam) = single_ray_frame(Vec3::new(5.0, 0.1, 0.1), 1.0);
        assert!(matches!(g.integrate_depth(&frame, &cam, 5.0), Err(ExploreError::OutsideGrid(_))));
    }

    #[test]
    fn never_returns_to_unknown() {
        let mut g = OccupancyGrid::new([2, 2, 2], 1.0, Vec3::zeros());
        assert!(g.set(0, CellState::Free));
        assert!(!g.set(0, CellState::Unknown));
        assert!(g.set(0, CellState::Occupied));
        assert_eq!(g.state(0), CellState::Occupied);
    }
}
