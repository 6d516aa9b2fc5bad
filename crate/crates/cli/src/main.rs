//! `exploregs` command line. Each subcommand runs one pipeline stage on
//! files written by the previous one; `pipeline` runs them all.
//!
//! Exit codes: 0 success, 2 configuration or usage error, 3 stage failure.

use anyhow::{anyhow, bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};
use exploregs::bow::{SelectorParams, Vocabulary};
use exploregs::pipeline::{self as pl, BackendKind, ConfigError, PipelineConfig, PipelineError, Selector};
use exploregs::simworld::build_world;
use exploregs::splat::{init_gaussians, SplatScene};
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

#[derive(Parser)]
#[command(name = "exploregs", version, about = "Autonomous exploration to Gaussian splatting on simulated scenes")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Explore the configured world and record frames, poses, grid and trajectory.
    Explore {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out_dir: PathBuf,
    },
    /// Select keyframe pairs from a recorded frame directory.
    SelectPairs {
        #[arg(long)]
        images: PathBuf,
        /// Vocabulary file; trained on a separate world and saved here when missing.
        #[arg(long)]
        vocab: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        tau: Option<f64>,
        #[arg(long)]
        thr_in: Option<f64>,
    },
    /// Predict pointmaps for every pair.
    Infer {
        #[arg(long, value_enum)]
        backend: BackendArg,
        #[arg(long)]
        pairs: PathBuf,
        #[arg(long)]
        out_dir: PathBuf,
        /// World, camera and backend settings.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Frame directory [default: `frames/` next to the pairs file].
        #[arg(long)]
        frames: Option<PathBuf>,
    },
    /// Globally align the predictions and write the fused cloud and poses.
    Align {
        #[arg(long)]
        preds: PathBuf,
        #[arg(long)]
        pairs: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        poses: PathBuf,
        /// Frame directory for point colors [default: `frames/` next to the pairs file].
        #[arg(long)]
        frames: Option<PathBuf>,
        #[arg(long)]
        config: Option<PathBuf>,
        /// Splat scene built from the cloud [default: `scene.egss` next to the cloud].
        #[arg(long)]
        scene: Option<PathBuf>,
    },
    /// Render a splat scene at every pose of a poses file.
    Render {
        #[arg(long)]
        scene: PathBuf,
        #[arg(long)]
        poses: PathBuf,
        /// Config file whose [world] width, height and focal set the camera.
        #[arg(long)]
        cam: PathBuf,
        #[arg(long)]
        out_dir: PathBuf,
    },
    /// PSNR of renders against ground-truth frames.
    Eval {
        #[arg(long)]
        renders: PathBuf,
        #[arg(long)]
        truth: PathBuf,
        #[arg(long)]
        report: PathBuf,
    },
    /// Pair counts on prefixes of a recorded sequence.
    Table1 {
        #[arg(long)]
        images: PathBuf,
        #[arg(long)]
        vocab: PathBuf,
        #[arg(long, value_delimiter = ',', default_value = "20,40,60")]
        n: Vec<usize>,
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Run every stage into one output directory.
    Pipeline {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out_dir: PathBuf,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum BackendArg {
    Oracle,
    External,
}

fn load_config(path: Option<&Path>) -> Result<PipelineConfig> {
    match path {
        Some(p) => Ok(PipelineConfig::from_file(p)?),
        None => Ok(PipelineConfig::default()),
    }
}

fn sibling_frames(pairs: &Path) -> PathBuf {
    pairs.parent().unwrap_or(Path::new(".")).join("frames")
}

fn selector(vocab_path: &Path, cfg: &PipelineConfig, params: SelectorParams) -> Result<Selector> {
    let vocab = if vocab_path.exists() {
        Vocabulary::load(vocab_path).with_context(|| format!("loading {}", vocab_path.display()))?
    } else {
        eprintln!("{} not found; training a vocabulary on a separate world", vocab_path.display());
        let v = pl::train_vocabulary_on_world(cfg)?;
        v.save(vocab_path).with_context(|| format!("writing {}", vocab_path.display()))?;
        v
    };
    Selector::new(vocab, cfg.selector.features.clone(), params).map_err(|e| anyhow!(e))
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Explore { config, out_dir } => {
            let cfg = load_config(config.as_deref())?;
            let scene = build_world(&cfg.world)?;
            let result = pl::explore_stage(&cfg, &scene, &out_dir, &out_dir, None)?;
            println!("{} frames, status {}", result.frames_emitted, result.status.as_str());
        }
        Command::SelectPairs { images, vocab, out, tau, thr_in } => {
            let cfg = PipelineConfig::default();
            let mut params = cfg.selector.params.clone();
            if let Some(t) = tau {
                params.tau = t;
            }
            if let Some(t) = thr_in {
                params.thr_in = t;
            }
            if !(params.tau.is_finite() && params.thr_in.is_finite()) {
                return Err(ConfigError::Invalid("--tau and --thr-in must be finite".into()).into());
            }
            let mut sel = selector(&vocab, &cfg, params)?;
            pl::select_pairs_batch(&images, &mut sel)?;
            pl::write_pairs(&out, &sel.pairs).with_context(|| format!("writing {}", out.display()))?;
            println!("{} frames, {} keyframes, {} pairs", sel.frames_seen(), sel.keyframes().len(), sel.pairs.len());
        }
        Command::Infer { backend, pairs, out_dir, config, frames } => {
            let mut cfg = load_config(config.as_deref())?;
            cfg.backend.kind = match backend {
                BackendArg::Oracle => BackendKind::Oracle,
                BackendArg::External => BackendKind::External,
            };
            cfg.validate()?;
            let scene = build_world(&cfg.world)?;
            let pairs_list = pl::read_pairs(&pairs).map_err(|e| anyhow!(e))?;
            let frames = frames.unwrap_or_else(|| sibling_frames(&pairs));
            let b = pl::make_backend(&cfg, &scene, &out_dir.join("work"));
            let preds = pl::infer_stage(&pairs_list, &frames, &b, &out_dir)?;
            println!("{} predictions", preds.len());
        }
        Command::Align { preds, pairs, out, poses, frames, config, scene } => {
            let cfg = load_config(config.as_deref())?;
            let pairs_list = pl::read_pairs(&pairs).map_err(|e| anyhow!(e))?;
            let frames = frames.unwrap_or_else(|| sibling_frames(&pairs));
            let loaded = pl::load_predictions(&pairs_list, &preds)?;
            let outcome = pl::align_stage(&loaded, &frames, &cfg.align)?;
            let file = fs::File::create(&out).with_context(|| format!("writing {}", out.display()))?;
            outcome.cloud.write_ply(std::io::BufWriter::new(file))?;
            pl::write_poses(&poses, &outcome.pose_records()).with_context(|| format!("writing {}", poses.display()))?;
            let scene_path = scene.unwrap_or_else(|| out.with_file_name("scene.egss"));
            init_gaussians(&outcome.cloud, cfg.base_scale())?
                .save(&scene_path)
                .with_context(|| format!("writing {}", scene_path.display()))?;
            println!(
                "{} images aligned in {} iterations, energy {:e}, {} points",
                outcome.problem.images.len(),
                outcome.solution.iterations,
                outcome.solution.energy,
                outcome.cloud.points.len()
            );
        }
        Command::Render { scene, poses, cam, out_dir } => {
            let cfg = PipelineConfig::from_file(&cam)?;
            let splats = SplatScene::load(&scene).with_context(|| format!("loading {}", scene.display()))?;
            let records = pl::read_poses(&poses).with_context(|| format!("reading {}", poses.display()))?;
            pl::render_stage(&splats, &cfg.camera, &records, &out_dir)?;
            println!("{} renders", records.len());
        }
        Command::Eval { renders, truth, report } => {
            let metrics = pl::eval_stage(&renders, &truth)?;
            fs::write(&report, pl::format_metrics(&metrics)).with_context(|| format!("writing {}", report.display()))?;
            let above = metrics.iter().filter(|m| m.psnr > m.baseline_psnr).count();
            let mean = metrics.iter().map(|m| m.psnr).sum::<f64>() / metrics.len() as f64;
            println!("mean PSNR {mean:.3} dB, {above}/{} frames above the mean-color baseline", metrics.len());
        }
        Command::Table1 { images, vocab, n, config } => {
            let cfg = load_config(config.as_deref())?;
            if n.iter().any(|&n| n < 2) {
                return Err(ConfigError::Invalid("--n values must be at least 2".into()).into());
            }
            let sel = selector(&vocab, &cfg, cfg.selector.params.clone())?;
            let vectors = pl::frame_bow_vectors(&images, &sel)?;
            let rows = pl::eval_table1(&vectors, &n, &cfg.selector.params)?;
            print!("{}", pl::format_table1(&rows));
            if let Some(r) = rows.iter().find(|r| !r.within_bound()) {
                bail!(PipelineError::Stage { stage: "table1", message: format!("{} pairs at n = {} is not below 3n", r.ours, r.n) });
            }
        }
        Command::Pipeline { config, out_dir } => {
            let cfg = PipelineConfig::from_file(&config)?;
            let report = pl::run_pipeline(&cfg, &out_dir)?;
            print!("{}", report.to_text());
        }
    }
    Ok(())
}

fn is_config_error(e: &anyhow::Error) -> bool {
    e.chain().any(|c| c.downcast_ref::<ConfigError>().is_some() || c.downcast_ref::<PipelineError>().is_some_and(PipelineError::is_config))
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(if is_config_error(&e) { 2 } else { 3 })
        }
    }
}
