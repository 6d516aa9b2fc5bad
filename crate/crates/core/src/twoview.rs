//! Two-view geometry backends and intrinsics recovery.
//!
//! A backend turns an image pair into per-pixel pointmaps for both views,
//! expressed in the first view's camera frame, with depth, confidence and
//! validity per pixel. The oracle backend derives them from the synthetic
//! scene; the external backend runs a program over a working directory.

use crate::geom::{CameraModel, Pose, Vec3};
use crate::image::RgbImage;
use crate::simworld::{raycast_rgbd, GroundTruthFrame, SimError, VoxelScene};
use nalgebra::Vector2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use std::io::{self, Read, Write};
use std::path::{Path, PathBuf};
use std::process::{Command, Stdio};
use std::time::{Duration, Instant};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum TwoViewError {
    #[error("frames differ in size: {0}x{1} vs {2}x{3}")]
    SizeMismatch(usize, usize, usize, usize),
    #[error("invalid backend parameters: {0}")]
    InvalidParams(String),
    #[error("backend failed: {0}")]
    Backend(String),
    #[error("underconstrained intrinsics: {0} valid pixels, need at least {1}")]
    Underconstrained(usize, usize),
    #[error("prediction file: {0}")]
    Format(String),
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    Io(#[from] io::Error),
}

/// Per-pixel prediction for one view of a pair, row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct ViewPrediction {
    /// Points in the pair's first camera frame.
    pub pointmap: Vec<Vec3>,
    /// Camera-frame depth Z of this view's own pixels.
    pub depth: Vec<f64>,
    pub confidence: Vec<f64>,
    pub valid: Vec<bool>,
}

impl ViewPrediction {
    fn invalid(n: usize) -> Self {
        Self { pointmap: vec![Vec3::zeros(); n], depth: vec![0.0; n], confidence: vec![0.0; n], valid: vec![false; n] }
    }

    pub fn valid_count(&self) -> usize {
        self.valid.iter().filter(|&&v| v).count()
    }
}

/// Prediction for pair `(i, k)`; `views[0]` is frame `i`, `views[1]` frame `k`.
#[derive(Clone, Debug, PartialEq)]
pub struct PairPrediction {
    pub i: usize,
    pub k: usize,
    pub width: usize,
    pub height: usize,
    pub views: [ViewPrediction; 2],
}

impl PairPrediction {
    pub fn all_invalid(i: usize, k: usize, width: usize, height: usize) -> Self {
        let n = width * height;
        Self { i, k, width, height, views: [ViewPrediction::invalid(n), ViewPrediction::invalid(n)] }
    }

    pub fn is_all_invalid(&self) -> bool {
        self.views.iter().all(|v| v.valid_count() == 0)
    }

    /// Checks the per-pixel invariants: finite points and positive depth
    /// where valid, zero confidence where not, confidence in [0, 1].
    pub fn check(&self) -> Result<(), String> {
        let n = self.width * self.height;
        for (vi, v) in self.views.iter().enumerate() {
            if v.pointmap.len() != n || v.depth.len() != n || v.confidence.len() != n || v.valid.len() != n {
                return Err(format!("view {vi}: array length mismatch"));
            }
            for p in 0..n {
                let q = v.confidence[p];
                if !(0.0..=1.0).contains(&q) {
                    return Err(format!("view {vi} pixel {p}: confidence {q} outside [0, 1]"));
                }
                if v.valid[p] {
                    if !v.pointmap[p].iter().all(|c| c.is_finite()) || !(v.depth[p] > 0.0) {
                        return Err(format!("view {vi} pixel {p}: valid but non-finite point or non-positive depth"));
                    }
                } else if q != 0.0 {
                    return Err(format!("view {vi} pixel {p}: confidence on an invalid pixel"));
                }
            }
        }
        Ok(())
    }

    /// Binary prediction file: magic `EGSP`, u32 H, u32 W, then little-endian
    /// f64 arrays pointmap_i (H·W·3), pointmap_k, depth_i, depth_k,
    /// confidence_i, confidence_k, then the valid masks of view i and view k
    /// as one packed bit string (LSB first, zero-padded to a byte).
    pub fn write_to<W: Write>(&self, mut w: W) -> io::Result<()> {
        w.write_all(b"EGSP")?;
        w.write_all(&(self.height as u32).to_le_bytes())?;
        w.write_all(&(self.width as u32).to_le_bytes())?;
        let mut buf = Vec::with_capacity(self.width * self.height * 8 * 10);
        for v in &self.views {
            for p in &v.pointmap {
                for c in p.iter() {
                    buf.extend_from_slice(&c.to_le_bytes());
                }
            }
        }
        for arr in [&self.views[0].depth, &self.views[1].depth, &self.views[0].confidence, &self.views[1].confidence] {
            for x in arr.iter() {
                buf.extend_from_slice(&x.to_le_bytes());
            }
        }
        let bits: Vec<bool> = self.views[0].valid.iter().chain(&self.views[1].valid).copied().collect();
        buf.extend(bits.chunks(8).map(|c| c.iter().enumerate().fold(0u8, |acc, (j, &b)| acc | ((b as u8) << j))));
        w.write_all(&buf)
    }

    /// Reads a prediction file; the pair ids are not stored in it.
    pub fn read_from<R: Read>(mut r: R, i: usize, k: usize) -> Result<Self, TwoViewError> {
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)?;
        if &magic != b"EGSP" {
            return Err(TwoViewError::Format("bad magic".into()));
        }
        let mut b4 = [0u8; 4];
        r.read_exact(&mut b4)?;
        let height = u32::from_le_bytes(b4) as usize;
        r.read_exact(&mut b4)?;
        let width = u32::from_le_bytes(b4) as usize;
        let n = width * height;
        if n == 0 {
            return Err(TwoViewError::Format("empty prediction".into()));
        }
        let mut read_f64s = |count: usize| -> io::Result<Vec<f64>> {
            let mut bytes = vec![0u8; count * 8];
            r.read_exact(&mut bytes)?;
            Ok(bytes.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect())
        };
        let to_points = |v: Vec<f64>| v.chunks_exact(3).map(|c| Vec3::new(c[0], c[1], c[2])).collect::<Vec<_>>();
        let pm_i = to_points(read_f64s(3 * n)?);
        let pm_k = to_points(read_f64s(3 * n)?);
        let d_i = read_f64s(n)?;
        let d_k = read_f64s(n)?;
        let q_i = read_f64s(n)?;
        let q_k = read_f64s(n)?;
        let mut mask = vec![0u8; (2 * n).div_ceil(8)];
        r.read_exact(&mut mask)?;
        let bit = |j: usize| mask[j / 8] >> (j % 8) & 1 == 1;
        let valid_i = (0..n).map(bit).collect();
        let valid_k = (n..2 * n).map(bit).collect();
        let pred = Self {
            i,
            k,
            width,
            height,
            views: [
                ViewPrediction { pointmap: pm_i, depth: d_i, confidence: q_i, valid: valid_i },
                ViewPrediction { pointmap: pm_k, depth: d_k, confidence: q_k, valid: valid_k },
            ],
        };
        pred.check().map_err(TwoViewError::Format)?;
        Ok(pred)
    }

    pub fn save(&self, path: &Path) -> io::Result<()> {
        let mut w = io::BufWriter::new(std::fs::File::create(path)?);
        self.write_to(&mut w)?;
        w.flush()
    }

    pub fn load(path: &Path, i: usize, k: usize) -> Result<Self, TwoViewError> {
        Self::read_from(io::BufReader::new(std::fs::File::open(path)?), i, k)
    }
}

/// Synthetic backend that reads geometry straight from the scene.
#[derive(Clone, Debug)]
pub struct OracleBackend<'a> {
    pub scene: &'a VoxelScene,
    pub cam: CameraModel,
    /// Standard deviation of isotropic point noise, meters.
    pub noise_sigma: f64,
    /// Fraction of pixels randomly invalidated.
    pub dropout: f64,
    pub seed: u64,
}

/// Runs `executable <workdir>` on `a.ppm`/`b.ppm` and reads back `pred.bin`.
#[derive(Clone, Debug)]
pub struct ExternalBackend {
    pub executable: PathBuf,
    /// One subdirectory per pair is created under this root.
    pub work_root: PathBuf,
    pub timeout: Duration,
}

#[derive(Clone, Debug)]
pub enum Backend<'a> {
    Oracle(OracleBackend<'a>),
    External(ExternalBackend),
}

impl Backend<'_> {
    pub fn infer(&self, a: &GroundTruthFrame, b: &GroundTruthFrame) -> Result<PairPrediction, TwoViewError> {
        if (a.rgb.width, a.rgb.height) != (b.rgb.width, b.rgb.height) {
            return Err(TwoViewError::SizeMismatch(a.rgb.width, a.rgb.height, b.rgb.width, b.rgb.height));
        }
        match self {
            Backend::Oracle(o) => o.infer(a.frame_id, &a.pose, b.frame_id, &b.pose),
            Backend::External(e) => e.infer(a.frame_id, &a.rgb, b.frame_id, &b.rgb),
        }
    }
}

/// Camera-frame point seen at pixel `p` of a range image.
fn camera_point(cam: &CameraModel, p: usize, range: f64) -> Vec3 {
    let (u, v) = ((p % cam.width) as f64, (p / cam.width) as f64);
    cam.pixel_ray(u, v).normalize() * range
}

fn pair_rng(seed: u64, i: usize, k: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(((i as u64) << 32) ^ k as u64);
    rng
}

impl OracleBackend<'_> {
    pub fn validate(&self) -> Result<(), TwoViewError> {
        if !(self.noise_sigma >= 0.0 && self.noise_sigma.is_finite()) {
            return Err(TwoViewError::InvalidParams(format!("noise sigma {} must be finite and >= 0", self.noise_sigma)));
        }
        if !(0.0..=1.0).contains(&self.dropout) {
            return Err(TwoViewError::InvalidParams(format!("dropout {} outside [0, 1]", self.dropout)));
        }
        self.cam.validate().map_err(TwoViewError::InvalidParams)
    }

    /// Raycasts both views, maps view k's points into camera i with the true
    /// relative pose, then applies dropout and noise. A pair whose views see
    /// no common surface comes back all-invalid.
    pub fn infer(&self, i: usize, pose_i: &Pose, k: usize, pose_k: &Pose) -> Result<PairPrediction, TwoViewError> {
        self.validate()?;
        let cam = &self.cam;
        let n = cam.pixel_count();
        let (_, range_i) = raycast_rgbd(self.scene, pose_i, cam)?;
        let (_, range_k) = raycast_rgbd(self.scene, pose_k, cam)?;
        // Identical poses map exactly, without a round trip through world.
        let rel = if pose_i == pose_k { Pose::identity() } else { pose_i.inverse().compose(pose_k) };

        let mut pts = [vec![Vec3::zeros(); n], vec![Vec3::zeros(); n]];
        let mut depth = [vec![0.0; n], vec![0.0; n]];
        let mut hit = [vec![false; n], vec![false; n]];
        for p in 0..n {
            if range_i.data[p] > 0.0 {
                let y = camera_point(cam, p, range_i.data[p]);
                pts[0][p] = y;
                depth[0][p] = y.z;
                hit[0][p] = true;
            }
            if range_k.data[p] > 0.0 {
                let y = camera_point(cam, p, range_k.data[p]);
                pts[1][p] = rel.transform_point(&y);
                depth[1][p] = y.z;
                hit[1][p] = true;
            }
        }
        if !self.covisible(&pts[1], &hit[1], &range_i.data) {
            return Ok(PairPrediction::all_invalid(i, k, cam.width, cam.height));
        }

        let mut rng = pair_rng(self.seed, i, k);
        let normal = Normal::new(0.0, self.noise_sigma.max(f64::MIN_POSITIVE)).expect("finite sigma");
        let views = [0, 1].map(|v| {
            let mut out = ViewPrediction::invalid(n);
            for p in 0..n {
                if !hit[v][p] {
                    continue;
                }
                if self.dropout > 0.0 && rng.random::<f64>() < self.dropout {
                    continue;
                }
                let mut x = pts[v][p];
                let mut q = 1.0;
                if self.noise_sigma > 0.0 {
                    let e = Vec3::new(normal.sample(&mut rng), normal.sample(&mut rng), normal.sample(&mut rng));
                    x += e;
                    q = (-e.norm_squared() / (2.0 * self.noise_sigma * self.noise_sigma)).exp();
                }
                out.pointmap[p] = x;
                out.depth[p] = depth[v][p];
                out.confidence[p] = q;
                out.valid[p] = true;
            }
            out
        });
        Ok(PairPrediction { i, k, width: cam.width, height: cam.height, views })
    }

    /// True when some surface point of view k (in camera i coordinates) is
    /// also the first surface camera i sees along that pixel.
    fn covisible(&self, pts_k_in_i: &[Vec3], hit_k: &[bool], range_i: &[f64]) -> bool {
        let tol = self.scene.voxel_size;
        pts_k_in_i.iter().zip(hit_k).any(|(x, &h)| {
            if !h {
                return false;
            }
            let Some((u, v)) = self.cam.project_camera_point(x) else { return false };
            if !self.cam.contains(u, v) {
                return false;
            }
            let p = v.round() as usize * self.cam.width + u.round() as usize;
            range_i[p] > 0.0 && (range_i[p] - x.norm()).abs() <= tol
        })
    }
}

impl ExternalBackend {
    pub fn infer(&self, i: usize, a: &RgbImage, k: usize, b: &RgbImage) -> Result<PairPrediction, TwoViewError> {
        let dir = self.work_root.join(format!("pair_{i}_{k}"));
        std::fs::create_dir_all(&dir)?;
        a.save(&dir.join("a.ppm"))?;
        b.save(&dir.join("b.ppm"))?;
        let pred_path = dir.join("pred.bin");
        if pred_path.exists() {
            std::fs::remove_file(&pred_path)?;
        }
        let mut child = Command::new(&self.executable)
            .arg(&dir)
            .current_dir(&dir)
            .stdout(Stdio::piped())
            .stderr(Stdio::piped())
            .spawn()
            .map_err(|e| TwoViewError::Backend(format!("cannot start {}: {e}", self.executable.display())))?;
        let start = Instant::now();
        let status = loop {
            if let Some(s) = child.try_wait()? {
                break s;
            }
            if start.elapsed() > self.timeout {
                let _ = child.kill();
                let _ = child.wait();
                return Err(TwoViewError::Backend(format!("pair ({i}, {k}) timed out after {:?}", self.timeout)));
            }
            std::thread::sleep(Duration::from_millis(5));
        };
        let out = child.wait_with_output()?;
        if !status.success() {
            return Err(TwoViewError::Backend(format!(
                "pair ({i}, {k}) exited with {status}: {}",
                String::from_utf8_lossy(&out.stderr).trim()
            )));
        }
        let pred = PairPrediction::load(&pred_path, i, k)?;
        if (pred.width, pred.height) != (a.width, a.height) {
            return Err(TwoViewError::SizeMismatch(pred.width, pred.height, a.width, a.height));
        }
        Ok(pred)
    }
}

/// Result of a Weiszfeld run.
#[derive(Clone, Debug)]
pub struct WeiszfeldResult {
    pub point: Vector2<f64>,
    pub iterations: usize,
    /// Objective Σ wᵢ‖x − pᵢ‖ at the start and after every iteration.
    pub objectives: Vec<f64>,
}

fn weighted_objective(x: &Vector2<f64>, points: &[Vector2<f64>], weights: &[f64]) -> f64 {
    points.iter().zip(weights).map(|(p, w)| w * (x - p).norm()).sum()
}

/// Unweighted geometric median of 2D points.
pub fn weiszfeld_median(points: &[Vector2<f64>], tol: f64, max_iter: usize) -> Vector2<f64> {
    weiszfeld_weighted(points, &vec![1.0; points.len()], tol, max_iter).point
}

/// Weighted geometric median by iteratively reweighted averaging, starting
/// from the weighted mean. When an iterate lands on data points, it stops
/// there if the subgradient condition certifies the median, and otherwise
/// steps `tol` along the descent direction.
///
/// Panics on an empty point set or non-positive total weight.
pub fn weiszfeld_weighted(points: &[Vector2<f64>], weights: &[f64], tol: f64, max_iter: usize) -> WeiszfeldResult {
    assert!(!points.is_empty() && points.len() == weights.len());
    let total: f64 = weights.iter().sum();
    assert!(total > 0.0, "weights must have positive sum");
    let mut x = points.iter().zip(weights).map(|(p, w)| p * *w).sum::<Vector2<f64>>() / total;
    let mut objectives = vec![weighted_objective(&x, points, weights)];
    let mut iterations = 0;
    while iterations < max_iter {
        iterations += 1;
        let mut num = Vector2::zeros();
        let mut den = 0.0;
        let mut coincident = 0.0;
        // Sum of unit vectors towards the non-coincident points.
        let mut pull = Vector2::zeros();
        for (p, &w) in points.iter().zip(weights) {
            let d = (p - x).norm();
            if d < 1e-12 {
                coincident += w;
                continue;
            }
            num += p * (w / d);
            den += w / d;
            pull += (p - x) * (w / d);
        }
        let next = if coincident > 0.0 {
            let r = pull.norm();
            if r <= coincident {
                objectives.push(objectives[objectives.len() - 1]);
                break;
            }
            x + pull * (tol / r)
        } else {
            num / den
        };
        let step = (next - x).norm();
        x = next;
        objectives.push(weighted_objective(&x, points, weights));
        if step < tol {
            break;
        }
    }
    WeiszfeldResult { point: x, iterations, objectives }
}

/// Minimum number of valid pixels for intrinsics recovery.
pub const MIN_INTRINSICS_PIXELS: usize = 100;

/// Focal-length votes `(f, weight)` from the first view of a prediction,
/// assuming square pixels and a principal point at the image center. Each
/// valid pixel votes `(u − cx)·z/x` and `(v − cy)·z/y` where defined.
pub fn focal_votes(pred: &PairPrediction) -> Vec<(f64, f64)> {
    let (cx, cy) = (pred.width as f64 / 2.0, pred.height as f64 / 2.0);
    let view = &pred.views[0];
    let mut votes = Vec::new();
    for p in 0..pred.width * pred.height {
        if !view.valid[p] {
            continue;
        }
        let pt = view.pointmap[p];
        if !(pt.z > 0.0) {
            continue;
        }
        let (du, dv) = ((p % pred.width) as f64 - cx, (p / pred.width) as f64 - cy);
        let q = view.confidence[p];
        if pt.x != 0.0 && du != 0.0 {
            votes.push((du * pt.z / pt.x, q));
        }
        if pt.y != 0.0 && dv != 0.0 {
            votes.push((dv * pt.z / pt.y, q));
        }
    }
    votes
}

/// Confidence-weighted median focal length over the votes of several
/// predictions of one camera.
pub fn estimate_intrinsics_multi(preds: &[&PairPrediction]) -> Result<CameraModel, TwoViewError> {
    let first = preds.first().ok_or(TwoViewError::Underconstrained(0, MIN_INTRINSICS_PIXELS))?;
    let valid: usize = preds.iter().map(|p| p.views[0].valid_count()).sum();
    if valid < MIN_INTRINSICS_PIXELS {
        return Err(TwoViewError::Underconstrained(valid, MIN_INTRINSICS_PIXELS));
    }
    let votes: Vec<(f64, f64)> = preds.iter().flat_map(|p| focal_votes(p)).filter(|v| v.0.is_finite() && v.1 > 0.0).collect();
    if votes.is_empty() {
        return Err(TwoViewError::Underconstrained(0, MIN_INTRINSICS_PIXELS));
    }
    let points: Vec<Vector2<f64>> = votes.iter().map(|v| Vector2::new(v.0, 0.0)).collect();
    let weights: Vec<f64> = votes.iter().map(|v| v.1).collect();
    let scale = votes.iter().map(|v| v.0.abs()).fold(0.0, f64::max).max(1.0);
    let f = weiszfeld_weighted(&points, &weights, 1e-12 * scale, 10_000).point.x;
    Ok(CameraModel::centered(first.width, first.height, f))
}

/// Square-pixel, centered-principal-point intrinsics from one prediction.
pub fn estimate_intrinsics(pred: &PairPrediction) -> Result<CameraModel, TwoViewError> {
    estimate_intrinsics_multi(&[pred])
}
