//! Camera geometry with a per-image scale and global alignment of pairwise
//! pointmap predictions into one world point cloud.
//!
//! Every image carries a pose (world-from-camera) and a scale σ; a camera-frame
//! point `y` lands in the world at `R·y/σ + t`. For each pair `(i, k)` and each
//! valid pixel of view k, alignment asks that the pixel's own backprojected
//! point, mapped through image k's variables, coincide with the predicted
//! pointmap (expressed in camera i) mapped through image i's variables.

use crate::geom::{orthonormalize, skew, so3_exp, CameraModel, Pose, Vec3};
use crate::image::RgbImage;
use crate::twoview::PairPrediction;
use nalgebra::{DMatrix, DVector, Matrix3, SMatrix, SVector};
use rayon::prelude::*;
use std::collections::{BTreeMap, BTreeSet};
use std::io::{self, BufRead, Write};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum AlignError {
    #[error("point is behind the camera (depth {0})")]
    BehindCamera(f64),
    #[error("depth must be positive, got {0}")]
    NonPositiveDepth(f64),
    #[error("edge graph is disconnected; components: {0:?}")]
    Disconnected(Vec<Vec<usize>>),
    #[error("no usable edges")]
    NoEdges,
    #[error("optimization diverged (non-finite energy)")]
    Diverged,
    #[error("prediction size {0}x{1} does not match the camera")]
    SizeMismatch(usize, usize),
    #[error("invalid initial variables: {0}")]
    InvalidInit(String),
}

/// Pixel and camera-frame depth of world point `x` seen by a camera with
/// pose `pose` and scale `sigma`.
pub fn project(cam: &CameraModel, pose: &Pose, sigma: f64, x: &Vec3) -> Result<(f64, f64, f64), AlignError> {
    let y = pose.rotation.transpose() * (x - pose.translation) * sigma;
    if y.z <= 0.0 {
        return Err(AlignError::BehindCamera(y.z));
    }
    Ok((cam.fx * y.x / y.z + cam.cx, cam.fy * y.y / y.z + cam.cy, y.z))
}

/// Camera-frame point at pixel `(u, v)` with depth `z`.
pub fn camera_point(cam: &CameraModel, z: f64, u: f64, v: f64) -> Vec3 {
    cam.pixel_ray(u, v) * z
}

/// World point seen at pixel `(u, v)` with depth `z`; inverse of [`project`].
pub fn backproject(sigma: f64, cam: &CameraModel, pose: &Pose, z: f64, u: f64, v: f64) -> Result<Vec3, AlignError> {
    if !(z > 0.0) {
        return Err(AlignError::NonPositiveDepth(z));
    }
    Ok(pose.rotation * camera_point(cam, z, u, v) / sigma + pose.translation)
}

/// Optimization variables of one image.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ImageVars {
    pub log_scale: f64,
    pub pose: Pose,
}

impl ImageVars {
    pub fn identity() -> Self {
        Self { log_scale: 0.0, pose: Pose::identity() }
    }

    pub fn scale(&self) -> f64 {
        self.log_scale.exp()
    }

    pub fn to_world(&self, y: &Vec3) -> Vec3 {
        self.pose.rotation * y / self.scale() + self.pose.translation
    }

    /// Applies a tangent step `[Δlog σ, ω (local), Δt]`.
    pub fn retract(&self, d: &[f64; 7]) -> Self {
        let w = Vec3::new(d[1], d[2], d[3]);
        Self {
            log_scale: self.log_scale + d[0],
            pose: Pose::new(orthonormalize(&(self.pose.rotation * so3_exp(&w))), self.pose.translation + Vec3::new(d[4], d[5], d[6])),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ResidualNorm {
    /// `q·‖r‖²` per pixel.
    Squared,
    /// `q·‖r‖` per pixel.
    Unsquared,
}

#[derive(Clone, Debug, PartialEq)]
pub struct AlignOptions {
    pub max_iters: usize,
    pub step_tol: f64,
    pub grad_tol: f64,
    pub norm: ResidualNorm,
    /// Step along the Gauss-Newton direction of all non-gauge images jointly;
    /// plain gradient descent otherwise.
    pub precondition: bool,
}

impl Default for AlignOptions {
    fn default() -> Self {
        Self { max_iters: 500, step_tol: 1e-10, grad_tol: 1e-8, norm: ResidualNorm::Squared, precondition: true }
    }
}

/// Residual terms of one edge: view-k pixels with their own camera point `y`,
/// the predicted point `z` in camera i, and confidence `q`.
struct Evaluation {
    energy: f64,
    grad: Vec<[f64; 7]>,
    blocks: Vec<SMatrix<f64, 7, 7>>,
    /// `(a, b, J_aᵀ J_b)` per edge.
    cross: Vec<(usize, usize, SMatrix<f64, 7, 7>)>,
}

impl Evaluation {
    /// Gauss-Newton direction `−H⁻¹g` over the non-gauge images, or `−g` if
    /// `H` is not positive definite.
    fn newton_direction(&self) -> Vec<[f64; 7]> {
        let n = self.grad.len();
        let dim = 7 * (n - 1);
        let mut h = DMatrix::<f64>::zeros(dim, dim);
        for (img, b) in self.blocks.iter().enumerate().skip(1) {
            let o = 7 * (img - 1);
            h.view_mut((o, o), (7, 7)).copy_from(b);
        }
        for &(a, b, ref hab) in &self.cross {
            if a == 0 || b == 0 {
                continue;
            }
            let (oa, ob) = (7 * (a - 1), 7 * (b - 1));
            let mut blk = h.view_mut((oa, ob), (7, 7));
            blk += hab;
            let mut blk = h.view_mut((ob, oa), (7, 7));
            blk += hab.transpose();
        }
        let damp = 1e-12 * h.trace().max(f64::MIN_POSITIVE) / dim.max(1) as f64;
        for d in 0..dim {
            h[(d, d)] += damp;
        }
        let g = DVector::from_iterator(dim, self.grad.iter().skip(1).flatten().copied());
        let mut out = vec![[0.0; 7]; n];
        match h.cholesky() {
            Some(c) => {
                let d = c.solve(&g);
                for (img, o) in out.iter_mut().enumerate().skip(1) {
                    *o = std::array::from_fn(|k| -d[7 * (img - 1) + k]);
                }
            }
            None => {
                for (o, g) in out.iter_mut().zip(&self.grad).skip(1) {
                    *o = g.map(|x| -x);
                }
            }
        }
        out
    }
}

#[derive(Clone, Debug)]
struct EdgeTerms {
    pair: (usize, usize),
    /// Image indices (into `AlignProblem::images`) of frames i and k.
    a: usize,
    b: usize,
    y: Vec<Vec3>,
    z: Vec<Vec3>,
    q: Vec<f64>,
}

#[derive(Clone, Debug)]
pub struct AlignProblem {
    pub cam: CameraModel,
    /// Frame ids, ascending; index 0 is the gauge image.
    pub images: Vec<usize>,
    /// Requested frames with no usable edge.
    pub excluded: Vec<usize>,
    edges: Vec<EdgeTerms>,
}

/// Connected components of the graph whose edges are the pairs with at least
/// one valid pixel. Each component is sorted; components are ordered by their
/// smallest frame id.
pub fn connected_components(images: &[usize], preds: &[PairPrediction]) -> Vec<Vec<usize>> {
    let mut adj: BTreeMap<usize, BTreeSet<usize>> = images.iter().map(|&i| (i, BTreeSet::new())).collect();
    for p in preds.iter().filter(|p| !p.is_all_invalid()) {
        adj.entry(p.i).or_default().insert(p.k);
        adj.entry(p.k).or_default().insert(p.i);
    }
    let mut seen = BTreeSet::new();
    let mut comps = Vec::new();
    for &start in adj.keys() {
        if !seen.insert(start) {
            continue;
        }
        let mut comp = vec![start];
        let mut stack = vec![start];
        while let Some(n) = stack.pop() {
            for &m in &adj[&n] {
                if seen.insert(m) {
                    comp.push(m);
                    stack.push(m);
                }
            }
        }
        comp.sort_unstable();
        comps.push(comp);
    }
    comps
}

impl AlignProblem {
    /// Builds the problem over `images` from pair predictions. Pairs with no
    /// valid pixel are dropped; images left without edges are excluded.
    /// Fails when the remaining graph is disconnected.
    pub fn new(cam: CameraModel, images: &[usize], preds: &[PairPrediction]) -> Result<Self, AlignError> {
        let usable: Vec<&PairPrediction> = preds.iter().filter(|p| !p.is_all_invalid()).collect();
        if usable.is_empty() {
            return Err(AlignError::NoEdges);
        }
        for p in &usable {
            if (p.width, p.height) != (cam.width, cam.height) {
                return Err(AlignError::SizeMismatch(p.width, p.height));
            }
        }
        let touched: BTreeSet<usize> = usable.iter().flat_map(|p| [p.i, p.k]).collect();
        let excluded: Vec<usize> = images.iter().copied().filter(|i| !touched.contains(i)).collect();
        let node_list: Vec<usize> = touched.iter().copied().collect();
        let comps = connected_components(&node_list, preds);
        if comps.len() > 1 {
            return Err(AlignError::Disconnected(comps));
        }
        let index: BTreeMap<usize, usize> = node_list.iter().enumerate().map(|(n, &f)| (f, n)).collect();
        let edges = usable
            .iter()
            .map(|p| {
                let view = &p.views[1];
                let mut t = EdgeTerms { pair: (p.i, p.k), a: index[&p.i], b: index[&p.k], y: vec![], z: vec![], q: vec![] };
                for px in 0..cam.pixel_count() {
                    if view.valid[px] && view.confidence[px] > 0.0 {
                        let (u, v) = ((px % cam.width) as f64, (px / cam.width) as f64);
                        t.y.push(camera_point(&cam, view.depth[px], u, v));
                        t.z.push(view.pointmap[px]);
                        t.q.push(view.confidence[px]);
                    }
                }
                t
            })
            .filter(|t| !t.q.is_empty())
            .collect();
        Ok(Self { cam, images: node_list, excluded, edges })
    }

    pub fn edge_count(&self) -> usize {
        self.edges.len()
    }

    pub fn residual_count(&self) -> usize {
        self.edges.iter().map(|e| e.q.len()).sum()
    }

    pub fn energy(&self, vars: &[ImageVars], norm: ResidualNorm) -> f64 {
        let per_edge: Vec<f64> = self
            .edges
            .par_iter()
            .map(|e| {
                let (va, vb) = (&vars[e.a], &vars[e.b]);
                let mut sum = 0.0;
                for j in 0..e.q.len() {
                    let r = vb.to_world(&e.y[j]) - va.to_world(&e.z[j]);
                    sum += e.q[j]
                        * match norm {
                            ResidualNorm::Squared => r.norm_squared(),
                            ResidualNorm::Unsquared => r.norm(),
                        };
                }
                sum
            })
            .collect();
        per_edge.iter().sum()
    }

    /// Energy, gradient per image (`[log σ, ω, t]`, zero for the gauge image)
    /// and the Gauss-Newton matrix as per-image diagonal blocks plus one
    /// `J_aᵀ J_b` block per edge.
    fn evaluate(&self, vars: &[ImageVars], norm: ResidualNorm) -> Evaluation {
        type Acc = (f64, Vec<(usize, SVector<f64, 7>, SMatrix<f64, 7, 7>)>, SMatrix<f64, 7, 7>);
        let per_edge: Vec<Acc> = self
            .edges
            .par_iter()
            .map(|e| {
                let (va, vb) = (&vars[e.a], &vars[e.b]);
                let (sa, sb) = (va.scale(), vb.scale());
                let (ra, rb) = (&va.pose.rotation, &vb.pose.rotation);
                let mut energy = 0.0;
                let mut ga = SVector::<f64, 7>::zeros();
                let mut gb = SVector::<f64, 7>::zeros();
                let mut ha = SMatrix::<f64, 7, 7>::zeros();
                let mut hb = SMatrix::<f64, 7, 7>::zeros();
                let mut hab = SMatrix::<f64, 7, 7>::zeros();
                for j in 0..e.q.len() {
                    let ub = rb * e.y[j] / sb;
                    let ua = ra * e.z[j] / sa;
                    let r = ub + vb.pose.translation - ua - va.pose.translation;
                    let (cost, w) = match norm {
                        ResidualNorm::Squared => (e.q[j] * r.norm_squared(), 2.0 * e.q[j]),
                        ResidualNorm::Unsquared => {
                            let n = r.norm();
                            (e.q[j] * n, if n > 0.0 { e.q[j] / n } else { 0.0 })
                        }
                    };
                    energy += cost;
                    // Jacobians of r (3×7) with respect to each image's step.
                    let mut jb = SMatrix::<f64, 3, 7>::zeros();
                    jb.fixed_view_mut::<3, 1>(0, 0).copy_from(&(-ub));
                    jb.fixed_view_mut::<3, 3>(0, 1).copy_from(&(-(rb * skew(&e.y[j])) / sb));
                    jb.fixed_view_mut::<3, 3>(0, 4).copy_from(&Matrix3::identity());
                    let mut ja = SMatrix::<f64, 3, 7>::zeros();
                    ja.fixed_view_mut::<3, 1>(0, 0).copy_from(&ua);
                    ja.fixed_view_mut::<3, 3>(0, 1).copy_from(&((ra * skew(&e.z[j])) / sa));
                    ja.fixed_view_mut::<3, 3>(0, 4).copy_from(&(-Matrix3::identity()));
                    gb += jb.transpose() * r * w;
                    ga += ja.transpose() * r * w;
                    hb += jb.transpose() * jb * w;
                    ha += ja.transpose() * ja * w;
                    hab += ja.transpose() * jb * w;
                }
                (energy, vec![(e.a, ga, ha), (e.b, gb, hb)], hab)
            })
            .collect();
        let n = self.images.len();
        let mut energy = 0.0;
        let mut grad = vec![SVector::<f64, 7>::zeros(); n];
        let mut blocks = vec![SMatrix::<f64, 7, 7>::zeros(); n];
        let mut cross = Vec::with_capacity(self.edges.len());
        for ((en, parts, hab), e) in per_edge.into_iter().zip(&self.edges) {
            energy += en;
            for (img, g, h) in parts {
                grad[img] += g;
                blocks[img] += h;
            }
            cross.push((e.a, e.b, hab));
        }
        grad[0] = SVector::zeros();
        let grad = grad.iter().map(|g| std::array::from_fn(|c| g[c])).collect();
        Evaluation { energy, grad, blocks, cross }
    }

    /// Energy and its gradient with respect to each image's tangent step
    /// `[Δlog σ, ω, Δt]`; the gauge image's gradient is zero.
    pub fn gradient(&self, vars: &[ImageVars], norm: ResidualNorm) -> (f64, Vec<[f64; 7]>) {
        let ev = self.evaluate(vars, norm);
        (ev.energy, ev.grad)
    }

    /// Initial variables by chaining per-edge similarity transforms along a
    /// maximum spanning tree (edge weight = residual count) from the gauge.
    pub fn initialize(&self) -> Vec<ImageVars> {
        let n = self.images.len();
        let mut vars = vec![ImageVars::identity(); n];
        let mut known = vec![false; n];
        known[0] = true;
        let fits: Vec<Similarity> = self.edges.iter().map(|e| umeyama(&e.y, &e.z, &e.q)).collect();
        for _ in 1..n {
            // Heaviest edge with exactly one known endpoint; ties to the lower index.
            let best = self
                .edges
                .iter()
                .enumerate()
                .filter(|(_, e)| known[e.a] != known[e.b])
                .max_by(|(i1, e1), (i2, e2)| e1.q.len().cmp(&e2.q.len()).then(i2.cmp(i1)));
            let Some((ei, e)) = best else { break };
            let f = &fits[ei];
            if known[e.a] {
                vars[e.b] = chain(&vars[e.a], f);
                known[e.b] = true;
            } else {
                vars[e.a] = chain(&vars[e.b], &f.inverse());
                known[e.a] = true;
            }
        }
        vars
    }

    pub fn pairs(&self) -> Vec<(usize, usize)> {
        self.edges.iter().map(|e| e.pair).collect()
    }
}

/// `z ≈ s·R·y + t`.
#[derive(Clone, Copy, Debug)]
struct Similarity {
    s: f64,
    r: Matrix3<f64>,
    t: Vec3,
}

impl Similarity {
    fn inverse(&self) -> Self {
        let rt = self.r.transpose();
        Self { s: 1.0 / self.s, r: rt, t: -(rt * self.t) / self.s }
    }
}

/// Variables of the image whose camera points `y` relate to the known image's
/// points by `f`.
fn chain(known: &ImageVars, f: &Similarity) -> ImageVars {
    let s_known = known.scale();
    ImageVars {
        log_scale: (s_known / f.s).ln(),
        pose: Pose::new(orthonormalize(&(known.pose.rotation * f.r)), known.pose.translation + known.pose.rotation * f.t / s_known),
    }
}

/// Weighted least-squares similarity mapping `src` onto `dst`.
fn umeyama(src: &[Vec3], dst: &[Vec3], w: &[f64]) -> Similarity {
    let total: f64 = w.iter().sum();
    let mu_s = src.iter().zip(w).map(|(p, &q)| p * q).sum::<Vec3>() / total;
    let mu_d = dst.iter().zip(w).map(|(p, &q)| p * q).sum::<Vec3>() / total;
    let mut cov = Matrix3::zeros();
    let mut var_s = 0.0;
    for ((s, d), &q) in src.iter().zip(dst).zip(w) {
        let (a, b) = (s - mu_s, d - mu_d);
        cov += b * a.transpose() * q;
        var_s += q * a.norm_squared();
    }
    cov /= total;
    var_s /= total;
    let svd = cov.svd(true, true);
    let (u, vt) = (svd.u.unwrap(), svd.v_t.unwrap());
    let mut d = Matrix3::identity();
    if (u * vt).determinant() < 0.0 {
        d[(2, 2)] = -1.0;
    }
    let r = u * d * vt;
    let s = if var_s > 0.0 { (svd.singular_values.component_mul(&d.diagonal())).sum() / var_s } else { 1.0 };
    Similarity { s, r, t: mu_d - r * mu_s * s }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Termination {
    GradientTolerance,
    StepTolerance,
    MaxIterations,
}

#[derive(Clone, Debug)]
pub struct AlignSolution {
    pub vars: Vec<ImageVars>,
    /// Accepted steps.
    pub iterations: usize,
    pub energy: f64,
    /// Energy before the first step and after every accepted step.
    pub energies: Vec<f64>,
    pub termination: Termination,
}

const ARMIJO_C: f64 = 1e-4;
const MAX_HALVINGS: usize = 60;

/// Minimizes the alignment energy from `init` by (optionally block-
/// preconditioned) gradient descent with Armijo backtracking. The gauge
/// image keeps its initial variables.
pub fn global_align(problem: &AlignProblem, init: Vec<ImageVars>, opts: &AlignOptions) -> Result<AlignSolution, AlignError> {
    if init.len() != problem.images.len() {
        return Err(AlignError::InvalidInit(format!("{} variable sets for {} images", init.len(), problem.images.len())));
    }
    let mut vars = init;
    let mut ev = problem.evaluate(&vars, opts.norm);
    if !ev.energy.is_finite() {
        return Err(AlignError::Diverged);
    }
    let mut energies = vec![ev.energy];
    let mut iterations = 0;
    let termination = loop {
        let gnorm = ev.grad.iter().flatten().map(|g| g * g).sum::<f64>().sqrt();
        if gnorm < opts.grad_tol {
            break Termination::GradientTolerance;
        }
        if iterations >= opts.max_iters {
            break Termination::MaxIterations;
        }
        let dir: Vec<[f64; 7]> = if opts.precondition { ev.newton_direction() } else { ev.grad.iter().map(|g| g.map(|x| -x)).collect() };
        let (energy, grad) = (ev.energy, &ev.grad);
        let slope: f64 = grad.iter().flatten().zip(dir.iter().flatten()).map(|(g, d)| g * d).sum();
        let dnorm = dir.iter().flatten().map(|d| d * d).sum::<f64>().sqrt();
        let mut alpha = 1.0;
        let mut accepted = None;
        for _ in 0..MAX_HALVINGS {
            if alpha * dnorm < opts.step_tol {
                break;
            }
            let trial: Vec<ImageVars> =
                vars.iter().zip(&dir).enumerate().map(|(n, (v, d))| if n == 0 { *v } else { v.retract(&d.map(|x| x * alpha)) }).collect();
            let e = problem.energy(&trial, opts.norm);
            if e.is_finite() && e <= energy + ARMIJO_C * alpha * slope {
                accepted = Some(trial);
                break;
            }
            alpha *= 0.5;
        }
        let Some(next) = accepted else { break Termination::StepTolerance };
        vars = next;
        iterations += 1;
        ev = problem.evaluate(&vars, opts.norm);
        if !ev.energy.is_finite() {
            return Err(AlignError::Diverged);
        }
        energies.push(ev.energy);
        if alpha * dnorm < opts.step_tol {
            break Termination::StepTolerance;
        }
    };
    Ok(AlignSolution { vars, iterations, energy: ev.energy, energies, termination })
}

/// Colored world point with its confidence and source pixel.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct WorldPoint {
    pub xyz: Vec3,
    pub rgb: [u8; 3],
    pub confidence: f64,
    /// `(frame_id, pixel index)`.
    pub source: (usize, usize),
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct WorldPointCloud {
    pub points: Vec<WorldPoint>,
}

fn to_u8(c: f64) -> u8 {
    (c.clamp(0.0, 1.0) * 255.0).round() as u8
}

/// Maps every valid pixel of every aligned image to the world. Each image
/// contributes the view from the first pair (in `preds` order) containing
/// it. With `voxel > 0`, keeps only the most confident point per voxel
/// (earliest on ties). Points come out ordered by frame id, then pixel.
pub fn merge_pointclouds(
    problem: &AlignProblem,
    vars: &[ImageVars],
    preds: &[PairPrediction],
    rgb: &BTreeMap<usize, RgbImage>,
    voxel: f64,
) -> WorldPointCloud {
    let cam = &problem.cam;
    let mut points = Vec::new();
    for (n, &frame) in problem.images.iter().enumerate() {
        let Some((pred, v)) = preds.iter().filter(|p| !p.is_all_invalid()).find_map(|p| {
            if p.i == frame {
                Some((p, 0))
            } else if p.k == frame {
                Some((p, 1))
            } else {
                None
            }
        }) else {
            continue;
        };
        let view = &pred.views[v];
        let image = rgb.get(&frame);
        for px in 0..cam.pixel_count() {
            if !view.valid[px] || !(view.confidence[px] > 0.0) {
                continue;
            }
            let (u, vv) = (px % cam.width, px / cam.width);
            let y = camera_point(cam, view.depth[px], u as f64, vv as f64);
            let color = image.map_or([0; 3], |im| im.get(u, vv).map(to_u8));
            points.push(WorldPoint { xyz: vars[n].to_world(&y), rgb: color, confidence: view.confidence[px], source: (frame, px) });
        }
    }
    if voxel > 0.0 {
        let mut best: BTreeMap<[i64; 3], usize> = BTreeMap::new();
        for (idx, p) in points.iter().enumerate() {
            let key = [0, 1, 2].map(|c| (p.xyz[c] / voxel).floor() as i64);
            best.entry(key)
                .and_modify(|b| {
                    if p.confidence > points[*b].confidence {
                        *b = idx;
                    }
                })
                .or_insert(idx);
        }
        let mut keep: Vec<usize> = best.into_values().collect();
        keep.sort_unstable();
        points = keep.into_iter().map(|i| points[i]).collect();
    }
    WorldPointCloud { points }
}

impl WorldPointCloud {
    /// ASCII PLY with per-vertex `x y z` (double), `red green blue` (uchar)
    /// and `confidence` (double).
    pub fn write_ply<W: Write>(&self, mut w: W) -> io::Result<()> {
        writeln!(w, "ply\nformat ascii 1.0\nelement vertex {}", self.points.len())?;
        for p in ["x", "y", "z"] {
            writeln!(w, "property double {p}")?;
        }
        for p in ["red", "green", "blue"] {
            writeln!(w, "property uchar {p}")?;
        }
        writeln!(w, "property double confidence\nend_header")?;
        for p in &self.points {
            writeln!(w, "{} {} {} {} {} {} {}", p.xyz.x, p.xyz.y, p.xyz.z, p.rgb[0], p.rgb[1], p.rgb[2], p.confidence)?;
        }
        Ok(())
    }

    /// Reads the layout written by [`write_ply`](Self::write_ply). Source
    /// pixels are not stored and come back as `(0, vertex index)`.
    pub fn read_ply<R: BufRead>(r: R) -> io::Result<Self> {
        let bad = |m: &str| io::Error::new(io::ErrorKind::InvalidData, m.to_string());
        let mut lines = r.lines();
        let mut count = None;
        let mut props = Vec::new();
        loop {
            let line = lines.next().ok_or_else(|| bad("truncated PLY header"))??;
            let f: Vec<&str> = line.split_whitespace().collect();
            match f.as_slice() {
                ["end_header"] => break,
                ["element", "vertex", n] => count = Some(n.parse::<usize>().map_err(|_| bad("bad vertex count"))?),
                ["property", _, name] => props.push(name.to_string()),
                _ => {}
            }
        }
        if props != ["x", "y", "z", "red", "green", "blue", "confidence"] {
            return Err(bad("unexpected PLY vertex properties"));
        }
        let n = count.ok_or_else(|| bad("missing vertex element"))?;
        let mut points = Vec::with_capacity(n);
        for idx in 0..n {
            let line = lines.next().ok_or_else(|| bad("truncated PLY body"))??;
            let f: Vec<&str> = line.split_whitespace().collect();
            if f.len() != 7 {
                return Err(bad("PLY vertex needs 7 values"));
            }
            let num = |s: &str| s.parse::<f64>().map_err(|_| bad("bad number"));
            let byte = |s: &str| s.parse::<u8>().map_err(|_| bad("bad color"));
            points.push(WorldPoint {
                xyz: Vec3::new(num(f[0])?, num(f[1])?, num(f[2])?),
                rgb: [byte(f[3])?, byte(f[4])?, byte(f[5])?],
                confidence: num(f[6])?,
                source: (0, idx),
            });
        }
        Ok(Self { points })
    }
}
