//! Gaussian-splat scenes: initialization from a fused point cloud, EWA
//! projection, front-to-back alpha compositing and PSNR.

use crate::align::WorldPointCloud;
use crate::geom::{CameraModel, Pose, Vec3};
use crate::image::RgbImage;
use nalgebra::{Matrix2, Matrix3, Quaternion, UnitQuaternion, Vector2};
use rayon::prelude::*;
use std::collections::HashMap;
use std::fs::File;
use std::io::{self, BufReader, BufWriter, Read, Write};
use std::path::Path;
use thiserror::Error;

/// Degree-0 real spherical-harmonic basis constant, `1 / (2√π)`.
pub const SH0: f64 = 0.28209479177387814;
/// Added to the projected covariance diagonal (pixels²).
pub const AA_FLOOR: f64 = 0.3;
pub const MAX_ALPHA: f64 = 0.999;
/// Compositing stops once transmittance drops below this.
pub const MIN_TRANSMITTANCE: f64 = 1e-4;
/// Per-pixel contributions with a smaller α′ are skipped; it also sets each
/// splat's screen footprint.
pub const MIN_ALPHA: f64 = 1e-5;
/// PSNR reported for identical images.
pub const PSNR_CAP: f64 = 99.0;
/// Splats whose projected center lies further from the principal point
/// than this multiple of the image half-extent are culled. Points just beside
/// the camera plane otherwise project to enormous footprints.
pub const GUARD_BAND: f64 = 1.3;
const TILE: usize = 16;

#[derive(Debug, Error)]
pub enum SplatError {
    #[error("cannot initialize splats from an empty point cloud")]
    EmptyCloud,
    #[error("covariance is not positive definite")]
    NotPositiveDefinite,
    #[error("image size mismatch: {0}x{1} vs {2}x{3}")]
    SizeMismatch(usize, usize, usize, usize),
    #[error("invalid parameter: {0}")]
    InvalidParams(String),
    #[error("malformed scene file: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] io::Error),
}

pub fn rgb_to_sh0(rgb: [f64; 3]) -> [f64; 3] {
    rgb.map(|c| c / SH0)
}

pub fn sh0_to_rgb(sh: [f64; 3]) -> [f64; 3] {
    sh.map(|c| c * SH0)
}

#[derive(Clone, Debug, PartialEq)]
pub struct GaussianSplat {
    pub mean: Vec3,
    /// Standard deviations along the rotated axes.
    pub scale: Vec3,
    pub rotation: UnitQuaternion<f64>,
    pub opacity: f64,
    pub sh: [f64; 3],
}

impl GaussianSplat {
    pub fn isotropic(mean: Vec3, s: f64, opacity: f64, rgb: [f64; 3]) -> Self {
        Self { mean, scale: Vec3::repeat(s), rotation: UnitQuaternion::identity(), opacity, sh: rgb_to_sh0(rgb) }
    }

    pub fn covariance(&self) -> Matrix3<f64> {
        let r = self.rotation.to_rotation_matrix().into_inner();
        r * Matrix3::from_diagonal(&self.scale.component_mul(&self.scale)) * r.transpose()
    }

    pub fn color(&self) -> [f64; 3] {
        sh0_to_rgb(self.sh)
    }

    pub fn is_valid(&self) -> bool {
        self.scale.iter().all(|&s| s > 0.0 && s.is_finite())
            && self.opacity > 0.0
            && self.opacity <= 1.0
            && self.sh.iter().all(|c| c.is_finite())
            && self.mean.iter().all(|c| c.is_finite())
    }
}

/// Normalized Gaussian density `G(x)` of a splat's covariance.
pub fn eval_gaussian(g: &GaussianSplat, x: &Vec3) -> Result<f64, SplatError> {
    eval_density(&g.mean, &g.covariance(), x)
}

pub fn eval_density(mean: &Vec3, cov: &Matrix3<f64>, x: &Vec3) -> Result<f64, SplatError> {
    let chol = cov.cholesky().ok_or(SplatError::NotPositiveDefinite)?;
    let d = x - mean;
    let m = d.dot(&chol.solve(&d));
    let det = chol.determinant();
    if det <= 0.0 {
        return Err(SplatError::NotPositiveDefinite);
    }
    Ok((2.0 * std::f64::consts::PI).powf(-1.5) / det.sqrt() * (-0.5 * m).exp())
}

#[derive(Clone, Debug, PartialEq)]
pub struct ProjectedSplat {
    pub mean: Vector2<f64>,
    pub cov: Matrix2<f64>,
    /// Camera-frame z of the mean.
    pub depth: f64,
}

/// Screen-space footprint of a splat; `None` when its mean is not in front
/// of the camera.
pub fn project_splat(g: &GaussianSplat, cam: &CameraModel, pose: &Pose) -> Option<ProjectedSplat> {
    project_covariance(&g.mean, &g.covariance(), cam, pose)
}

pub fn project_covariance(mean: &Vec3, cov: &Matrix3<f64>, cam: &CameraModel, pose: &Pose) -> Option<ProjectedSplat> {
    let p = pose.inverse_transform_point(mean);
    if p.z <= 1e-9 {
        return None;
    }
    let (x, y, z) = (p.x, p.y, p.z);
    let j = nalgebra::Matrix2x3::new(cam.fx / z, 0.0, -cam.fx * x / (z * z), 0.0, cam.fy / z, -cam.fy * y / (z * z));
    let rc = pose.rotation;
    let cam_cov = rc.transpose() * cov * rc;
    let mut c2 = j * cam_cov * j.transpose();
    // Exact symmetry regardless of rounding in the products above.
    let off = 0.5 * (c2[(0, 1)] + c2[(1, 0)]);
    c2[(0, 1)] = off;
    c2[(1, 0)] = off;
    c2[(0, 0)] += AA_FLOOR;
    c2[(1, 1)] += AA_FLOOR;
    Some(ProjectedSplat { mean: Vector2::new(cam.fx * x / z + cam.cx, cam.fy * y / z + cam.cy), cov: c2, depth: z })
}

#[derive(Clone, Debug, PartialEq)]
pub struct SplatScene {
    pub splats: Vec<GaussianSplat>,
    /// Axis-aligned box `(min, max)` containing every mean.
    pub bounds: (Vec3, Vec3),
}

impl SplatScene {
    pub fn new(splats: Vec<GaussianSplat>) -> Self {
        let mut lo = Vec3::repeat(f64::INFINITY);
        let mut hi = Vec3::repeat(f64::NEG_INFINITY);
        for s in &splats {
            lo = lo.inf(&s.mean);
            hi = hi.sup(&s.mean);
        }
        if splats.is_empty() {
            lo = Vec3::zeros();
            hi = Vec3::zeros();
        }
        Self { splats, bounds: (lo, hi) }
    }

    pub fn len(&self) -> usize {
        self.splats.len()
    }

    pub fn is_empty(&self) -> bool {
        self.splats.is_empty()
    }

    /// Binary layout: `"EGSS"`, u32 count, then per splat mean (3 f64), scale
    /// (3 f64), quaternion w x y z (4 f64), opacity (f64), SH0 rgb (3 f64).
    /// Little-endian throughout.
    pub fn write_to<W: Write>(&self, mut w: W) -> io::Result<()> {
        w.write_all(b"EGSS")?;
        w.write_all(&(self.splats.len() as u32).to_le_bytes())?;
        for s in &self.splats {
            let q = s.rotation.quaternion();
            let vals =
                [s.mean.x, s.mean.y, s.mean.z, s.scale.x, s.scale.y, s.scale.z, q.w, q.i, q.j, q.k, s.opacity, s.sh[0], s.sh[1], s.sh[2]];
            for v in vals {
                w.write_all(&v.to_le_bytes())?;
            }
        }
        Ok(())
    }

    pub fn read_from<R: Read>(mut r: R) -> Result<Self, SplatError> {
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)?;
        if &magic != b"EGSS" {
            return Err(SplatError::Format("bad magic".into()));
        }
        let mut b4 = [0u8; 4];
        r.read_exact(&mut b4)?;
        let n = u32::from_le_bytes(b4) as usize;
        let mut splats = Vec::with_capacity(n.min(1 << 20));
        let mut b8 = [0u8; 8];
        for i in 0..n {
            let mut v = [0.0; 14];
            for x in v.iter_mut() {
                r.read_exact(&mut b8)?;
                *x = f64::from_le_bytes(b8);
            }
            let q = Quaternion::new(v[6], v[7], v[8], v[9]);
            if !(q.norm() > 0.0) {
                return Err(SplatError::Format(format!("splat {i}: zero quaternion")));
            }
            let s = GaussianSplat {
                mean: Vec3::new(v[0], v[1], v[2]),
                scale: Vec3::new(v[3], v[4], v[5]),
                rotation: UnitQuaternion::new_unchecked(q),
                opacity: v[10],
                sh: [v[11], v[12], v[13]],
            };
            if !s.is_valid() {
                return Err(SplatError::Format(format!("splat {i}: invalid attributes")));
            }
            splats.push(s);
        }
        let mut extra = [0u8; 1];
        if r.read(&mut extra)? != 0 {
            return Err(SplatError::Format("trailing bytes".into()));
        }
        Ok(Self::new(splats))
    }

    pub fn save(&self, path: &Path) -> io::Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        self.write_to(&mut w)?;
        w.flush()
    }

    pub fn load(path: &Path) -> Result<Self, SplatError> {
        Self::read_from(BufReader::new(File::open(path)?))
    }
}

/// Mean distance from every point to its three nearest neighbors (fewer
/// when the cloud is smaller), searched out to `max_radius`; neighbors
/// beyond it count as `max_radius`. `None` for a point with no neighbor at all.
fn mean_knn_distance(points: &[Vec3], cell: f64, max_radius: f64) -> Vec<Option<f64>> {
    const K: usize = 3;
    let key = |p: &Vec3| [(p.x / cell).floor() as i64, (p.y / cell).floor() as i64, (p.z / cell).floor() as i64];
    let mut grid: HashMap<[i64; 3], Vec<usize>> = HashMap::new();
    for (i, p) in points.iter().enumerate() {
        grid.entry(key(p)).or_default().push(i);
    }
    let want = K.min(points.len().saturating_sub(1));
    let rings = (max_radius / cell).ceil() as i64 + 1;
    points
        .par_iter()
        .enumerate()
        .map(|(i, p)| {
            if want == 0 {
                return None;
            }
            let c = key(p);
            let mut best: Vec<f64> = Vec::with_capacity(K + 1);
            for r in 0..=rings {
                for dx in -r..=r {
                    for dy in -r..=r {
                        for dz in -r..=r {
                            if dx.abs().max(dy.abs()).max(dz.abs()) != r {
                                continue;
                            }
                            let Some(ids) = grid.get(&[c[0] + dx, c[1] + dy, c[2] + dz]) else { continue };
                            for &j in ids {
                                if j == i {
                                    continue;
                                }
                                let d = (points[j] - p).norm();
                                let at = best.partition_point(|&b| b <= d);
                                if at < want {
                                    best.insert(at, d);
                                    best.truncate(want);
                                }
                            }
                        }
                    }
                }
                // Everything outside ring r is farther than r·cell.
                if best.len() == want && best[want - 1] <= r as f64 * cell {
                    break;
                }
            }
            let sum: f64 = (0..want).map(|n| best.get(n).copied().unwrap_or(max_radius).min(max_radius)).sum();
            Some(sum / want as f64)
        })
        .collect()
}

/// One isotropic splat per cloud point. The standard deviation is the mean
/// distance to the three nearest neighbors clamped to
/// `[0.5, 3] × base_scale`, or `base_scale` for a lone point.
pub fn init_gaussians(cloud: &WorldPointCloud, base_scale: f64) -> Result<SplatScene, SplatError> {
    if cloud.points.is_empty() {
        return Err(SplatError::EmptyCloud);
    }
    if !(base_scale > 0.0 && base_scale.is_finite()) {
        return Err(SplatError::InvalidParams(format!("base_scale must be positive, got {base_scale}")));
    }
    let pts: Vec<Vec3> = cloud.points.iter().map(|p| p.xyz).collect();
    let (lo, hi) = (0.5 * base_scale, 3.0 * base_scale);
    // A mean above `hi` needs some neighbor beyond 3·hi.
    let knn = mean_knn_distance(&pts, base_scale, 3.0 * hi);
    let splats = cloud
        .points
        .iter()
        .zip(knn)
        .map(|(p, d)| {
            let s = d.map_or(base_scale, |d| d.clamp(lo, hi));
            GaussianSplat::isotropic(p.xyz, s, p.confidence.clamp(0.05, 1.0), p.rgb.map(|c| c as f64 / 255.0))
        })
        .collect();
    Ok(SplatScene::new(splats))
}

/// Screen-space splat ready for compositing.
struct Footprint {
    index: usize,
    depth: f64,
    mean: Vector2<f64>,
    /// Inverse 2D covariance (conic).
    inv: Matrix2<f64>,
    opacity: f64,
    color: [f64; 3],
    /// Inclusive pixel bounding box.
    bbox: [i64; 4],
}

impl Footprint {
    fn alpha_at(&self, u: f64, v: f64) -> f64 {
        let d = Vector2::new(u, v) - self.mean;
        let m = d.dot(&(self.inv * d));
        (self.opacity * (-0.5 * m).exp()).min(MAX_ALPHA)
    }
}

fn footprints(scene: &SplatScene, cam: &CameraModel, pose: &Pose) -> Vec<Footprint> {
    let mut fps: Vec<Footprint> = scene
        .splats
        .par_iter()
        .enumerate()
        .filter_map(|(index, g)| {
            let p = project_splat(g, cam, pose)?;
            let (du, dv) = ((p.mean.x - cam.cx).abs(), (p.mean.y - cam.cy).abs());
            if du > GUARD_BAND * 0.5 * cam.width as f64 || dv > GUARD_BAND * 0.5 * cam.height as f64 {
                return None;
            }
            let inv = p.cov.try_inverse()?;
            if g.opacity <= MIN_ALPHA {
                return None;
            }
            // Radius (in standard deviations) beyond which α′ < MIN_ALPHA,
            // never smaller than the 3σ ellipse.
            let k = (2.0 * (g.opacity / MIN_ALPHA).ln()).sqrt().max(3.0);
            let (ru, rv) = (k * p.cov[(0, 0)].sqrt(), k * p.cov[(1, 1)].sqrt());
            let bbox = [
                (p.mean.x - ru).floor() as i64,
                (p.mean.y - rv).floor() as i64,
                (p.mean.x + ru).ceil() as i64,
                (p.mean.y + rv).ceil() as i64,
            ];
            if bbox[2] < 0 || bbox[3] < 0 || bbox[0] >= cam.width as i64 || bbox[1] >= cam.height as i64 {
                return None;
            }
            Some(Footprint { index, depth: p.depth, mean: p.mean, inv, opacity: g.opacity, color: g.color(), bbox })
        })
        .collect();
    fps.sort_by(|a, b| a.depth.total_cmp(&b.depth).then(a.index.cmp(&b.index)));
    fps
}

/// Rendered colors plus the accumulated alpha `Σ α′ᵢ Tᵢ` of every pixel.
pub fn render_with_alpha(scene: &SplatScene, cam: &CameraModel, pose: &Pose) -> (RgbImage, Vec<f64>) {
    let fps = footprints(scene, cam, pose);
    let (w, h) = (cam.width, cam.height);
    let (tx, ty) = (w.div_ceil(TILE), h.div_ceil(TILE));
    let tiles: Vec<(usize, Vec<[f64; 3]>, Vec<f64>)> = (0..tx * ty)
        .into_par_iter()
        .map(|t| {
            let (x0, y0) = ((t % tx) * TILE, (t / tx) * TILE);
            let (x1, y1) = ((x0 + TILE).min(w), (y0 + TILE).min(h));
            let local: Vec<&Footprint> = fps
                .iter()
                .filter(|f| f.bbox[0] < x1 as i64 && f.bbox[2] >= x0 as i64 && f.bbox[1] < y1 as i64 && f.bbox[3] >= y0 as i64)
                .collect();
            let mut colors = Vec::with_capacity((x1 - x0) * (y1 - y0));
            let mut alphas = Vec::with_capacity(colors.capacity());
            for y in y0..y1 {
                for x in x0..x1 {
                    let (xi, yi) = (x as i64, y as i64);
                    let mut c = [0.0; 3];
                    let mut trans = 1.0;
                    for f in &local {
                        if xi < f.bbox[0] || xi > f.bbox[2] || yi < f.bbox[1] || yi > f.bbox[3] {
                            continue;
                        }
                        let a = f.alpha_at(x as f64, y as f64);
                        if a < MIN_ALPHA {
                            continue;
                        }
                        for ch in 0..3 {
                            c[ch] += f.color[ch] * a * trans;
                        }
                        trans *= 1.0 - a;
                        if trans < MIN_TRANSMITTANCE {
                            break;
                        }
                    }
                    colors.push(c);
                    alphas.push(1.0 - trans);
                }
            }
            (t, colors, alphas)
        })
        .collect();
    let mut img = RgbImage::new(w, h);
    let mut alpha = vec![0.0; w * h];
    for (t, colors, alphas) in tiles {
        let (x0, y0) = ((t % tx) * TILE, (t / tx) * TILE);
        let x1 = (x0 + TILE).min(w);
        let tw = x1 - x0;
        for (n, (c, a)) in colors.into_iter().zip(alphas).enumerate() {
            let (x, y) = (x0 + n % tw, y0 + n / tw);
            img.data[y * w + x] = c;
            alpha[y * w + x] = a;
        }
    }
    (img, alpha)
}

/// Front-to-back composite of the scene seen from `pose` over a black background.
pub fn render(scene: &SplatScene, cam: &CameraModel, pose: &Pose) -> RgbImage {
    render_with_alpha(scene, cam, pose).0
}

/// Per-pixel compositing weights `α′ᵢ Tᵢ` as `(splat, weight)` lists.
fn composite_weights(scene: &SplatScene, cam: &CameraModel, pose: &Pose) -> Vec<Vec<(usize, f64)>> {
    let fps = footprints(scene, cam, pose);
    let w = cam.width;
    (0..cam.pixel_count())
        .into_par_iter()
        .map(|px| {
            let (x, y) = ((px % w) as i64, (px / w) as i64);
            let mut out = Vec::new();
            let mut trans = 1.0;
            for f in &fps {
                if x < f.bbox[0] || x > f.bbox[2] || y < f.bbox[1] || y > f.bbox[3] {
                    continue;
                }
                let a = f.alpha_at(x as f64, y as f64);
                if a < MIN_ALPHA {
                    continue;
                }
                out.push((f.index, a * trans));
                trans *= 1.0 - a;
                if trans < MIN_TRANSMITTANCE {
                    break;
                }
            }
            out
        })
        .collect()
}

/// Color-only least-squares refinement against posed reference images.
/// Rendered colors are linear in the splat colors, so each step is a
/// steepest-descent step with exact line search. Returns the squared error
/// before the first and after every step.
pub fn refine_colors(scene: &mut SplatScene, cam: &CameraModel, views: &[(Pose, RgbImage)], steps: usize) -> Result<Vec<f64>, SplatError> {
    for (_, img) in views {
        if (img.width, img.height) != (cam.width, cam.height) {
            return Err(SplatError::SizeMismatch(img.width, img.height, cam.width, cam.height));
        }
    }
    let weights: Vec<Vec<Vec<(usize, f64)>>> = views.iter().map(|(p, _)| composite_weights(scene, cam, p)).collect();
    let n = scene.len();
    let mut colors: Vec<[f64; 3]> = scene.splats.iter().map(|s| s.color()).collect();
    let apply = |cols: &[[f64; 3]], w: &[(usize, f64)]| {
        let mut c = [0.0; 3];
        for &(i, a) in w {
            for ch in 0..3 {
                c[ch] += cols[i][ch] * a;
            }
        }
        c
    };
    let loss = |cols: &[[f64; 3]]| -> f64 {
        let mut l = 0.0;
        for (wv, (_, img)) in weights.iter().zip(views) {
            for (px, w) in wv.iter().enumerate() {
                let c = apply(cols, w);
                for ch in 0..3 {
                    l += (c[ch] - img.data[px][ch]).powi(2);
                }
            }
        }
        l
    };
    let mut history = vec![loss(&colors)];
    for _ in 0..steps {
        // Half-gradient g = Wᵀ(Wc − b).
        let mut g = vec![[0.0; 3]; n];
        for (wv, (_, img)) in weights.iter().zip(views) {
            for (px, w) in wv.iter().enumerate() {
                let c = apply(&colors, w);
                for &(i, a) in w {
                    for ch in 0..3 {
                        g[i][ch] += a * (c[ch] - img.data[px][ch]);
                    }
                }
            }
        }
        let gg: f64 = g.iter().flatten().map(|x| x * x).sum();
        let mut wg = 0.0;
        for wv in &weights {
            for w in wv {
                let c = apply(&g, w);
                wg += c.iter().map(|x| x * x).sum::<f64>();
            }
        }
        if gg == 0.0 || wg == 0.0 {
            break;
        }
        let step = gg / wg;
        for (c, gi) in colors.iter_mut().zip(&g) {
            for ch in 0..3 {
                c[ch] -= step * gi[ch];
            }
        }
        history.push(loss(&colors));
    }
    for (s, c) in scene.splats.iter_mut().zip(&colors) {
        s.sh = rgb_to_sh0(*c);
    }
    Ok(history)
}

/// `10·log10(1 / MSE)` over all channels, capped at [`PSNR_CAP`].
pub fn psnr(a: &RgbImage, b: &RgbImage) -> Result<f64, SplatError> {
    if (a.width, a.height) != (b.width, b.height) {
        return Err(SplatError::SizeMismatch(a.width, a.height, b.width, b.height));
    }
    let n = (a.data.len() * 3).max(1) as f64;
    let mse: f64 = a.data.iter().zip(&b.data).map(|(p, q)| (0..3).map(|c| (p[c] - q[c]).powi(2)).sum::<f64>()).sum::<f64>() / n;
    if mse == 0.0 {
        return Ok(PSNR_CAP);
    }
    Ok((10.0 * (1.0 / mse).log10()).min(PSNR_CAP))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sh0_roundtrip() {
        let rgb = [0.1, 0.5, 0.93];
        let back = sh0_to_rgb(rgb_to_sh0(rgb));
        for c in 0..3 {
            assert!((back[c] - rgb[c]).abs() < 1e-9);
        }
    }

    #[test]
    fn density_examples() {
        let g = GaussianSplat::isotropic(Vec3::zeros(), 1.0, 1.0, [0.0; 3]);
        let peak = eval_gaussian(&g, &Vec3::zeros()).unwrap();
        assert!((peak - 0.0634936359342410).abs() < 1e-12);
        let one = eval_gaussian(&g, &Vec3::new(0.0, 1.0, 0.0)).unwrap();
        assert!((one - peak * (-0.5f64).exp()).abs() < 1e-15);
        let bad = Matrix3::from_diagonal(&Vec3::new(1.0, -1.0, 1.0));
        assert!(matches!(eval_density(&Vec3::zeros(), &bad, &Vec3::zeros()), Err(SplatError::NotPositiveDefinite)));
    }

    #[test]
    fn psnr_examples() {
        let a = RgbImage::filled(8, 6, [0.3; 3]);
        let b = RgbImage::filled(8, 6, [0.4; 3]);
        assert_eq!(psnr(&a, &a).unwrap(), PSNR_CAP);
        assert!((psnr(&a, &b).unwrap() - 20.0).abs() < 1e-9);
        assert_eq!(psnr(&a, &b).unwrap(), psnr(&b, &a).unwrap());
        assert!(matches!(psnr(&a, &RgbImage::new(6, 8)), Err(SplatError::SizeMismatch(..))));
    }
}
