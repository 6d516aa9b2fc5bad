//! End-to-end runs: explore, select pairs, infer pointmaps, align, build and
//! render the splat scene, evaluate. Every stage reads and writes files in
//! one output directory so each can be rerun on its own.
//!
//! Output layout:
//!
//! ```text
//! config.cfg         effective configuration
//! vocab.bin          vocabulary used by the selector
//! frames/            frame_NNNNN.ppm, depth_NNNNN.pgm, poses.txt, timestamps.txt
//! grid.bin           final occupancy grid
//! trajectory.txt     flown trajectory
//! pairs.txt          selected image pairs
//! preds/             pred_i_k.bin per pair
//! cloud.ply          fused point cloud (frame of the first aligned image)
//! poses_est.txt      estimated poses and scales of the aligned images
//! scene.egss         splat scene
//! renders/           render_NNNNN.ppm at the estimated poses
//! metrics.txt        per-frame PSNR against the ground-truth frames
//! report.txt         run summary
//! ```

mod config;
mod files;

pub use config::{AlignConfig, BackendConfig, BackendKind, ConfigError, PipelineConfig, SelectorConfig, SplatConfig};
pub use files::*;

use crate::align::{connected_components, global_align, merge_pointclouds, AlignProblem, AlignSolution, WorldPointCloud};
use crate::bow::{
    complete_pair_count, format_pairs, parse_pairs, quantize, sliding_window_pair_count, train_vocabulary, Admission, BowVector, ImagePair,
    MatchDatabase, SelectorParams, Vocabulary,
};
use crate::explore::{explore_loop, ExplorationResult};
use crate::features::{extract, BriefDescriptor, BriefPattern, FeatureConfig, GrayImage};
use crate::geom::CameraModel;
use crate::image::DepthMap;
use crate::image::RgbImage;
use crate::simworld::{build_world, GroundTruthFrame, VoxelScene};
use crate::splat::{init_gaussians, psnr, refine_colors, render, SplatScene};
use crate::twoview::{estimate_intrinsics_multi, Backend, ExternalBackend, OracleBackend, PairPrediction};
use rayon::prelude::*;
use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Display;
use std::fs;
use std::path::Path;
use std::sync::mpsc::sync_channel;
use std::time::{Duration, Instant};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("stage `{stage}` failed: {message}")]
    Stage { stage: &'static str, message: String },
}

impl PipelineError {
    pub fn is_config(&self) -> bool {
        matches!(self, Self::Config(_))
    }
}

fn fail<E: Display>(stage: &'static str) -> impl Fn(E) -> PipelineError {
    move |e| PipelineError::Stage { stage, message: e.to_string() }
}

/// BRIEF descriptors of one frame.
pub fn frame_descriptors(rgb: &RgbImage, features: &FeatureConfig, pattern: &BriefPattern) -> Result<Vec<BriefDescriptor>, String> {
    let gray = GrayImage::from_rgb(rgb).map_err(|e| e.to_string())?;
    Ok(extract(&gray, features, pattern).into_iter().map(|(_, d)| d).collect())
}

/// Streaming keyframe selector: features, BoW quantization and the match
/// database behind one `observe` call per frame.
pub struct Selector {
    pub vocab: Vocabulary,
    pub features: FeatureConfig,
    pattern: BriefPattern,
    pub db: MatchDatabase,
    pub pairs: Vec<ImagePair>,
}

impl Selector {
    /// Uses the vocabulary's stored BRIEF pattern when it has one.
    pub fn new(vocab: Vocabulary, features: FeatureConfig, params: SelectorParams) -> Result<Self, String> {
        let pattern = vocab.pattern.clone().unwrap_or_else(|| BriefPattern::from_config(&features));
        if pattern.bits() != vocab.bits {
            return Err(format!("BRIEF pattern has {} tests but the vocabulary expects {} bits", pattern.bits(), vocab.bits));
        }
        Ok(Self { vocab, features, pattern, db: MatchDatabase::new(params), pairs: Vec::new() })
    }

    pub fn bow(&self, rgb: &RgbImage) -> Result<BowVector, String> {
        let d = frame_descriptors(rgb, &self.features, &self.pattern)?;
        quantize(&self.vocab, &d).map_err(|e| e.to_string())
    }

    pub fn observe(&mut self, frame_id: usize, rgb: &RgbImage, timestamp: f64) -> Result<Admission, String> {
        let v = self.bow(rgb)?;
        let (adm, pairs) = self.db.process(frame_id, v, timestamp);
        self.pairs.extend(pairs);
        Ok(adm)
    }

    pub fn frames_seen(&self) -> usize {
        self.db.entries.len()
    }

    pub fn keyframes(&self) -> Vec<usize> {
        self.db.keyframes().map(|e| e.frame_id).collect()
    }
}

/// Explores a separate training world and trains the vocabulary on the
/// descriptors of every captured frame.
pub fn train_vocabulary_on_world(cfg: &PipelineConfig) -> Result<Vocabulary, PipelineError> {
    let sel = &cfg.selector;
    let spec = crate::simworld::WorldSpec { seed: sel.training_seed, obstacle_density: sel.training_density, ..cfg.world };
    let scene = build_world(&spec).map_err(fail("vocabulary"))?;
    let pattern = BriefPattern::from_config(&sel.features);
    let mut descs = Vec::new();
    let mut err = None;
    explore_loop(&scene, &cfg.camera, &cfg.explore, |f| match frame_descriptors(&f.rgb, &sel.features, &pattern) {
        Ok(d) => descs.push(d),
        Err(e) => err = Some(e),
    })
    .map_err(fail("vocabulary"))?;
    if let Some(e) = err {
        return Err(fail("vocabulary")(e));
    }
    let mut vocab = train_vocabulary(&descs, sel.vocab_k, sel.vocab_depth, sel.vocab_seed).map_err(fail("vocabulary"))?;
    vocab.pattern_seed = sel.features.pattern_seed;
    vocab.pattern = Some(pattern);
    Ok(vocab)
}

/// The configured vocabulary file, or a freshly trained one.
pub fn prepare_vocabulary(cfg: &PipelineConfig) -> Result<Vocabulary, PipelineError> {
    match &cfg.selector.vocab {
        Some(path) => Vocabulary::load(path).map_err(fail("vocabulary")),
        None => train_vocabulary_on_world(cfg),
    }
}

fn write_exploration(result: &ExplorationResult, dir: &Path) -> std::io::Result<()> {
    let mut grid = std::io::BufWriter::new(fs::File::create(dir.join("grid.bin"))?);
    result.grid.write_bin(&mut grid)?;
    fs::write(dir.join("trajectory.txt"), format_trajectory(&result.trajectory))
}

/// Explores `scene`, writing frames to `frames_dir` and `grid.bin` plus
/// `trajectory.txt` to `meta_dir`, and hands each frame to `selector` (when
/// given) as it is captured. The explorer runs on its own thread; frames
/// reach the consumer through a bounded ordered queue.
pub fn explore_stage(
    cfg: &PipelineConfig,
    scene: &VoxelScene,
    frames_dir: &Path,
    meta_dir: &Path,
    mut selector: Option<&mut Selector>,
) -> Result<ExplorationResult, PipelineError> {
    let mut writer = FrameWriter::create(frames_dir).map_err(fail("explore"))?;
    let (result, consumer_err) = std::thread::scope(|s| {
        let (tx, rx) = sync_channel::<GroundTruthFrame>(16);
        let explorer = s.spawn(move || {
            explore_loop(scene, &cfg.camera, &cfg.explore, |f| {
                // A closed queue means the consumer already failed; keep flying.
                let _ = tx.send(f);
            })
        });
        let mut err: Option<PipelineError> = None;
        for f in rx {
            if err.is_some() {
                continue;
            }
            if let Err(e) = writer.write(&f) {
                err = Some(fail("explore")(e));
                continue;
            }
            if let Some(sel) = selector.as_deref_mut() {
                if let Err(e) = sel.observe(f.frame_id, &f.rgb, f.timestamp) {
                    err = Some(fail("select-pairs")(e));
                }
            }
        }
        (explorer.join().expect("explorer thread panicked"), err)
    });
    let result = result.map_err(fail("explore"))?;
    if let Some(e) = consumer_err {
        return Err(e);
    }
    writer.finish().map_err(fail("explore"))?;
    fs::create_dir_all(meta_dir).map_err(fail("explore"))?;
    write_exploration(&result, meta_dir).map_err(fail("explore"))?;
    Ok(result)
}

/// Replays a recorded frame directory through a fresh selector.
pub fn select_pairs_batch(frames_dir: &Path, selector: &mut Selector) -> Result<(), PipelineError> {
    for (id, t) in list_frames(frames_dir).map_err(fail("select-pairs"))? {
        let rgb = load_rgb(frames_dir, id).map_err(fail("select-pairs"))?;
        selector.observe(id, &rgb, t).map_err(fail("select-pairs"))?;
    }
    Ok(())
}

pub fn write_pairs(path: &Path, pairs: &[ImagePair]) -> std::io::Result<()> {
    fs::write(path, format_pairs(pairs))
}

pub fn read_pairs(path: &Path) -> Result<Vec<ImagePair>, String> {
    parse_pairs(&fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?)
}

/// Backend described by the config. The oracle needs the scene it reads
/// geometry from.
pub fn make_backend<'a>(cfg: &PipelineConfig, scene: &'a VoxelScene, work_root: &Path) -> Backend<'a> {
    let b = &cfg.backend;
    match b.kind {
        BackendKind::Oracle => {
            Backend::Oracle(OracleBackend { scene, cam: cfg.camera, noise_sigma: b.noise_sigma, dropout: b.dropout, seed: b.seed })
        }
        BackendKind::External => Backend::External(ExternalBackend {
            executable: b.executable.clone().expect("validated config has an executable"),
            work_root: work_root.to_path_buf(),
            timeout: Duration::from_secs_f64(b.timeout),
        }),
    }
}

/// Runs the backend on every pair (in parallel) and saves
/// `preds_dir/pred_i_k.bin`. Predictions come back in `pairs` order.
pub fn infer_stage(
    pairs: &[ImagePair],
    frames_dir: &Path,
    backend: &Backend,
    preds_dir: &Path,
) -> Result<Vec<PairPrediction>, PipelineError> {
    fs::create_dir_all(preds_dir).map_err(fail("infer"))?;
    let poses = read_poses(&frames_dir.join(POSES_FILE)).map_err(fail("infer"))?;
    let stamps: BTreeMap<usize, f64> = list_frames(frames_dir).map_err(fail("infer"))?.into_iter().collect();
    let ids: BTreeSet<usize> = pairs.iter().flat_map(|p| [p.i, p.k]).collect();
    let frames: BTreeMap<usize, GroundTruthFrame> = ids
        .into_par_iter()
        .map(|id| {
            let pose = poses.iter().find(|p| p.frame_id == id).ok_or_else(|| format!("no pose for frame {id}"))?.pose;
            let rgb = load_rgb(frames_dir, id).map_err(|e| format!("frame {id}: {e}"))?;
            let (w, h) = (rgb.width, rgb.height);
            let timestamp = stamps.get(&id).copied().unwrap_or(0.0);
            Ok((id, GroundTruthFrame { frame_id: id, rgb, depth: DepthMap::new(w, h), pose, timestamp }))
        })
        .collect::<Result<_, String>>()
        .map_err(fail("infer"))?;
    pairs
        .par_iter()
        .map(|p| {
            let pred = backend.infer(&frames[&p.i], &frames[&p.k]).map_err(|e| format!("pair ({}, {}): {e}", p.i, p.k))?;
            pred.save(&pred_path(preds_dir, p.i, p.k)).map_err(|e| format!("pair ({}, {}): {e}", p.i, p.k))?;
            Ok(pred)
        })
        .collect::<Result<Vec<_>, String>>()
        .map_err(fail("infer"))
}

pub fn load_predictions(pairs: &[ImagePair], preds_dir: &Path) -> Result<Vec<PairPrediction>, PipelineError> {
    pairs
        .iter()
        .map(|p| PairPrediction::load(&pred_path(preds_dir, p.i, p.k), p.i, p.k).map_err(|e| format!("pair ({}, {}): {e}", p.i, p.k)))
        .collect::<Result<_, _>>()
        .map_err(fail("align"))
}

pub struct AlignOutcome {
    /// Intrinsics recovered from the predictions.
    pub cam: CameraModel,
    pub problem: AlignProblem,
    pub solution: AlignSolution,
    pub cloud: WorldPointCloud,
    /// Connected components of the usable pair graph; the largest is aligned.
    pub components: Vec<Vec<usize>>,
}

impl AlignOutcome {
    pub fn pose_records(&self) -> Vec<PoseRecord> {
        self.problem
            .images
            .iter()
            .zip(&self.solution.vars)
            .map(|(&frame_id, v)| PoseRecord { frame_id, pose: v.pose, scale: v.scale() })
            .collect()
    }
}

/// Aligns the largest connected component of the pair graph (ties to the
/// one with the smallest frame id) and fuses its points, colored from the
/// frames in `frames_dir`.
pub fn align_stage(preds: &[PairPrediction], frames_dir: &Path, cfg: &AlignConfig) -> Result<AlignOutcome, PipelineError> {
    let usable: Vec<&PairPrediction> = preds.iter().filter(|p| !p.is_all_invalid()).collect();
    if usable.is_empty() {
        return Err(fail("align")("no pair has a valid prediction"));
    }
    let nodes: Vec<usize> = usable.iter().flat_map(|p| [p.i, p.k]).collect::<BTreeSet<_>>().into_iter().collect();
    let components = connected_components(&nodes, preds);
    let largest = components.iter().fold(&components[0], |best, c| if c.len() > best.len() { c } else { best }).clone();
    let members: BTreeSet<usize> = largest.iter().copied().collect();
    let sub: Vec<PairPrediction> =
        usable.iter().filter(|p| members.contains(&p.i) && members.contains(&p.k)).map(|p| (*p).clone()).collect();
    let refs: Vec<&PairPrediction> = sub.iter().collect();
    let cam = estimate_intrinsics_multi(&refs).map_err(fail("align"))?;
    let problem = AlignProblem::new(cam, &largest, &sub).map_err(fail("align"))?;
    let solution = global_align(&problem, problem.initialize(), &cfg.options).map_err(fail("align"))?;
    let rgb: BTreeMap<usize, RgbImage> =
        problem.images.iter().map(|&id| load_rgb(frames_dir, id).map(|im| (id, im))).collect::<Result<_, _>>().map_err(fail("align"))?;
    let cloud = merge_pointclouds(&problem, &solution.vars, &sub, &rgb, cfg.merge_voxel);
    Ok(AlignOutcome { cam, problem, solution, cloud, components })
}

/// Renders the scene at every pose into `out_dir/render_NNNNN.ppm`.
pub fn render_stage(scene: &SplatScene, cam: &CameraModel, poses: &[PoseRecord], out_dir: &Path) -> Result<(), PipelineError> {
    fs::create_dir_all(out_dir).map_err(fail("render"))?;
    for p in poses {
        render(scene, cam, &p.pose).save(&render_path(out_dir, p.frame_id)).map_err(fail("render"))?;
    }
    Ok(())
}

/// PSNR of every `render_NNNNN.ppm` against `frame_NNNNN.ppm` of the truth
/// directory, with the constant mean-color image of each truth frame as the
/// baseline.
pub fn eval_stage(renders_dir: &Path, truth_dir: &Path) -> Result<Vec<FrameMetric>, PipelineError> {
    let mut ids: Vec<usize> = fs::read_dir(renders_dir)
        .map_err(fail("eval"))?
        .filter_map(|e| e.ok())
        .filter_map(|e| {
            let name = e.file_name().into_string().ok()?;
            name.strip_prefix("render_")?.strip_suffix(".ppm")?.parse().ok()
        })
        .collect();
    ids.sort_unstable();
    if ids.is_empty() {
        return Err(fail("eval")(format!("no render_*.ppm files in {}", renders_dir.display())));
    }
    ids.into_iter()
        .map(|id| {
            let r = RgbImage::load(&render_path(renders_dir, id)).map_err(|e| format!("render {id}: {e}"))?;
            let t = load_rgb(truth_dir, id).map_err(|e| format!("truth frame {id}: {e}"))?;
            let baseline = RgbImage::filled(t.width, t.height, t.mean_color());
            Ok(FrameMetric {
                frame_id: id,
                psnr: psnr(&r, &t).map_err(|e| e.to_string())?,
                baseline_psnr: psnr(&baseline, &t).map_err(|e| e.to_string())?,
            })
        })
        .collect::<Result<_, String>>()
        .map_err(fail("eval"))
}

/// Run summary, written as `key = value` lines.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct RunReport {
    pub frames_captured: usize,
    pub keyframes_selected: usize,
    pub pairs_emitted: usize,
    /// Ordered pairs among all captured frames, n(n−1).
    pub complete_pairs: usize,
    pub reduction_percent: f64,
    pub exploration_status: String,
    /// Fraction of reachable cells the final grid knows.
    pub known_fraction: f64,
    pub aligned_images: usize,
    pub pair_components: usize,
    pub focal_estimate: f64,
    pub align_iterations: usize,
    pub final_residual: f64,
    pub cloud_points: usize,
    /// Cloud points within one scene voxel of the true surface.
    pub surface_fraction: f64,
    /// Worst pose errors of the aligned images against ground truth, in the
    /// frame of the first aligned image.
    pub max_rotation_error: f64,
    pub max_translation_error: f64,
    pub max_scale_error: f64,
    pub splats: usize,
    pub mean_psnr: f64,
    pub mean_baseline_psnr: f64,
    pub frames_above_baseline: usize,
    /// Wall-clock seconds per stage.
    pub wall_times: Vec<(String, f64)>,
}

/// `100·(1 − pairs / complete)`; 0 when there are no complete pairs.
pub fn reduction_percent(pairs: usize, complete: usize) -> f64 {
    if complete == 0 {
        0.0
    } else {
        100.0 * (1.0 - pairs as f64 / complete as f64)
    }
}

impl RunReport {
    pub fn to_text(&self) -> String {
        let mut lines = vec![
            format!("frames_captured = {}", self.frames_captured),
            format!("keyframes_selected = {}", self.keyframes_selected),
            format!("pairs_emitted = {}", self.pairs_emitted),
            format!("complete_pairs = {}", self.complete_pairs),
            format!("reduction_percent = {}", self.reduction_percent),
            format!("exploration_status = {}", self.exploration_status),
            format!("known_fraction = {}", self.known_fraction),
            format!("aligned_images = {}", self.aligned_images),
            format!("pair_components = {}", self.pair_components),
            format!("focal_estimate = {}", self.focal_estimate),
            format!("align_iterations = {}", self.align_iterations),
            format!("final_residual = {}", self.final_residual),
            format!("cloud_points = {}", self.cloud_points),
            format!("surface_fraction = {}", self.surface_fraction),
            format!("max_rotation_error = {}", self.max_rotation_error),
            format!("max_translation_error = {}", self.max_translation_error),
            format!("max_scale_error = {}", self.max_scale_error),
            format!("splats = {}", self.splats),
            format!("mean_psnr = {}", self.mean_psnr),
            format!("mean_baseline_psnr = {}", self.mean_baseline_psnr),
            format!("frames_above_baseline = {}", self.frames_above_baseline),
        ];
        for (stage, secs) in &self.wall_times {
            lines.push(format!("wall_time_{stage} = {secs}"));
        }
        lines.join("\n") + "\n"
    }

    pub fn parse(text: &str) -> Result<Self, String> {
        let mut r = Self::default();
        for (n, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| format!("line {}: expected `key = value`", n + 1))?;
            let (key, value) = (key.trim(), value.trim());
            let bad = |e: &dyn Display| format!("line {}: {key}: {e}", n + 1);
            macro_rules! set {
                ($field:ident) => {
                    r.$field = value.parse().map_err(|e| bad(&e))?
                };
            }
            match key {
                "frames_captured" => set!(frames_captured),
                "keyframes_selected" => set!(keyframes_selected),
                "pairs_emitted" => set!(pairs_emitted),
                "complete_pairs" => set!(complete_pairs),
                "reduction_percent" => set!(reduction_percent),
                "exploration_status" => r.exploration_status = value.to_string(),
                "known_fraction" => set!(known_fraction),
                "aligned_images" => set!(aligned_images),
                "pair_components" => set!(pair_components),
                "focal_estimate" => set!(focal_estimate),
                "align_iterations" => set!(align_iterations),
                "final_residual" => set!(final_residual),
                "cloud_points" => set!(cloud_points),
                "surface_fraction" => set!(surface_fraction),
                "max_rotation_error" => set!(max_rotation_error),
                "max_translation_error" => set!(max_translation_error),
                "max_scale_error" => set!(max_scale_error),
                "splats" => set!(splats),
                "mean_psnr" => set!(mean_psnr),
                "mean_baseline_psnr" => set!(mean_baseline_psnr),
                "frames_above_baseline" => set!(frames_above_baseline),
                _ => match key.strip_prefix("wall_time_") {
                    Some(stage) => r.wall_times.push((stage.to_string(), value.parse().map_err(|e| bad(&e))?)),
                    None => return Err(format!("line {}: unknown report key `{key}`", n + 1)),
                },
            }
        }
        Ok(r)
    }
}

/// Ground-truth accuracy of an alignment: fraction of cloud points within
/// one voxel of the scene surface, and the worst rotation, translation and
/// scale errors. Estimates live in the frame of the first aligned image.
fn alignment_accuracy(scene: &VoxelScene, frames_dir: &Path, outcome: &AlignOutcome) -> Result<(f64, f64, f64, f64), String> {
    let poses = read_poses(&frames_dir.join(POSES_FILE)).map_err(|e| e.to_string())?;
    let truth = |id: usize| poses.iter().find(|p| p.frame_id == id).map(|p| p.pose).ok_or(format!("no pose for frame {id}"));
    let gauge = truth(outcome.problem.images[0])?;
    let near = outcome.cloud.points.iter().filter(|p| scene.surface_distance(&gauge.transform_point(&p.xyz)) <= scene.voxel_size).count();
    let fraction = near as f64 / outcome.cloud.points.len().max(1) as f64;
    let (mut rot, mut trans, mut scale) = (0.0f64, 0.0f64, 0.0f64);
    for (&id, v) in outcome.problem.images.iter().zip(&outcome.solution.vars) {
        let rel = gauge.inverse().compose(&truth(id)?);
        rot = rot.max(v.pose.rotation_angle_to(&rel));
        trans = trans.max((v.pose.translation - rel.translation).norm());
        scale = scale.max((v.scale() - 1.0).abs());
    }
    Ok((fraction, rot, trans, scale))
}

/// Runs every stage in order into `out_dir` and writes `report.txt`. The
/// selector consumes frames while the explorer is still flying.
pub fn run_pipeline(cfg: &PipelineConfig, out_dir: &Path) -> Result<RunReport, PipelineError> {
    cfg.validate()?;
    fs::create_dir_all(out_dir).map_err(fail("setup"))?;
    fs::write(out_dir.join("config.cfg"), cfg.to_ini_string()).map_err(fail("setup"))?;
    let mut report = RunReport::default();
    let mut clock = Instant::now();
    let mut lap = |report: &mut RunReport, stage: &str| {
        report.wall_times.push((stage.to_string(), clock.elapsed().as_secs_f64()));
        clock = Instant::now();
    };

    let scene = build_world(&cfg.world).map_err(fail("world"))?;
    let vocab = prepare_vocabulary(cfg)?;
    vocab.save(&out_dir.join("vocab.bin")).map_err(fail("vocabulary"))?;
    lap(&mut report, "vocabulary");

    let mut selector = Selector::new(vocab, cfg.selector.features.clone(), cfg.selector.params.clone()).map_err(fail("select-pairs"))?;
    let frames_dir = out_dir.join("frames");
    let exploration = explore_stage(cfg, &scene, &frames_dir, out_dir, Some(&mut selector))?;
    write_pairs(&out_dir.join("pairs.txt"), &selector.pairs).map_err(fail("select-pairs"))?;
    report.frames_captured = selector.frames_seen();
    report.keyframes_selected = selector.keyframes().len();
    report.pairs_emitted = selector.pairs.len();
    report.complete_pairs = complete_pair_count(report.frames_captured);
    report.reduction_percent = reduction_percent(report.pairs_emitted, report.complete_pairs);
    report.exploration_status = exploration.status.as_str().to_string();
    report.known_fraction = exploration.known_reachable_fraction(&scene);
    lap(&mut report, "explore_select");

    let backend = make_backend(cfg, &scene, &out_dir.join("backend_work"));
    let preds = infer_stage(&selector.pairs, &frames_dir, &backend, &out_dir.join("preds"))?;
    lap(&mut report, "infer");

    let outcome = align_stage(&preds, &frames_dir, &cfg.align)?;
    let cloud_file = fs::File::create(out_dir.join("cloud.ply")).map_err(fail("align"))?;
    outcome.cloud.write_ply(std::io::BufWriter::new(cloud_file)).map_err(fail("align"))?;
    let records = outcome.pose_records();
    write_poses(&out_dir.join("poses_est.txt"), &records).map_err(fail("align"))?;
    report.aligned_images = outcome.problem.images.len();
    report.pair_components = outcome.components.len();
    report.focal_estimate = outcome.cam.fx;
    report.align_iterations = outcome.solution.iterations;
    report.final_residual = outcome.solution.energy;
    report.cloud_points = outcome.cloud.points.len();
    let (fraction, rot, trans, scale) = alignment_accuracy(&scene, &frames_dir, &outcome).map_err(fail("align"))?;
    report.surface_fraction = fraction;
    report.max_rotation_error = rot;
    report.max_translation_error = trans;
    report.max_scale_error = scale;
    lap(&mut report, "align");

    let mut splats = init_gaussians(&outcome.cloud, cfg.base_scale()).map_err(fail("splat"))?;
    if cfg.splat.refine_steps > 0 {
        let views: Vec<_> = records
            .iter()
            .map(|r| load_rgb(&frames_dir, r.frame_id).map(|im| (r.pose, im)))
            .collect::<Result<_, _>>()
            .map_err(fail("splat"))?;
        refine_colors(&mut splats, &cfg.camera, &views, cfg.splat.refine_steps).map_err(fail("splat"))?;
    }
    splats.save(&out_dir.join("scene.egss")).map_err(fail("splat"))?;
    report.splats = splats.len();
    render_stage(&splats, &cfg.camera, &records, &out_dir.join("renders"))?;
    lap(&mut report, "splat_render");

    let metrics = eval_stage(&out_dir.join("renders"), &frames_dir)?;
    fs::write(out_dir.join("metrics.txt"), format_metrics(&metrics)).map_err(fail("eval"))?;
    let n = metrics.len() as f64;
    report.mean_psnr = metrics.iter().map(|m| m.psnr).sum::<f64>() / n;
    report.mean_baseline_psnr = metrics.iter().map(|m| m.baseline_psnr).sum::<f64>() / n;
    report.frames_above_baseline = metrics.iter().filter(|m| m.psnr > m.baseline_psnr).count();
    lap(&mut report, "eval");

    fs::write(out_dir.join("report.txt"), report.to_text()).map_err(fail("report"))?;
    Ok(report)
}

/// Pair counts on the first `n` frames of a sequence.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Table1Row {
    pub n: usize,
    /// Every ordered pair, n(n−1).
    pub complete: usize,
    /// Cyclic window of 5 following frames, 5n.
    pub swin: usize,
    /// Pairs emitted by the selector.
    pub ours: usize,
    pub keyframes: usize,
}

impl Table1Row {
    pub fn within_bound(&self) -> bool {
        self.ours < 3 * self.n
    }

    pub fn reduction_percent(&self) -> f64 {
        reduction_percent(self.ours, self.complete)
    }
}

/// Replays the first `n` frames of `vectors` (BoW vector and timestamp per
/// frame, in capture order) through a fresh selector for each `n`.
pub fn eval_table1(vectors: &[(BowVector, f64)], ns: &[usize], params: &SelectorParams) -> Result<Vec<Table1Row>, PipelineError> {
    let need = ns.iter().copied().max().unwrap_or(0);
    if vectors.len() < need {
        return Err(fail("table1")(format!("{} frames available, {need} needed", vectors.len())));
    }
    Ok(ns
        .iter()
        .map(|&n| {
            let mut db = MatchDatabase::new(params.clone());
            let mut ours = 0;
            for (id, (v, t)) in vectors[..n].iter().enumerate() {
                ours += db.process(id, v.clone(), *t).1.len();
            }
            Table1Row {
                n,
                complete: complete_pair_count(n),
                swin: sliding_window_pair_count(n, 5),
                ours,
                keyframes: db.keyframes().count(),
            }
        })
        .collect())
}

pub fn format_table1(rows: &[Table1Row]) -> String {
    let mut s = String::from("# n complete swin ours keyframes reduction_percent\n");
    for r in rows {
        s.push_str(&format!("{} {} {} {} {} {:.2}\n", r.n, r.complete, r.swin, r.ours, r.keyframes, r.reduction_percent()));
    }
    s
}

/// BoW vectors and timestamps of a recorded frame directory.
pub fn frame_bow_vectors(frames_dir: &Path, selector: &Selector) -> Result<Vec<(BowVector, f64)>, PipelineError> {
    list_frames(frames_dir)
        .map_err(fail("table1"))?
        .into_par_iter()
        .map(|(id, t)| {
            let rgb = load_rgb(frames_dir, id).map_err(|e| e.to_string())?;
            Ok((selector.bow(&rgb)?, t))
        })
        .collect::<Result<_, String>>()
        .map_err(fail("table1"))
}
