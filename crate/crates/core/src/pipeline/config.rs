//! `run.cfg`: INI sections of `key = value` lines. Unknown sections and keys
//! are rejected by name.

use crate::align::{AlignOptions, ResidualNorm};
use crate::bow::SelectorParams;
use crate::explore::ExplorationConfig;
use crate::features::FeatureConfig;
use crate::geom::CameraModel;
use crate::simworld::WorldSpec;
use ini::{Ini, ParseOption};
use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("config syntax: {0}")]
    Syntax(String),
    #[error("unknown config section [{0}]")]
    UnknownSection(String),
    #[error("unknown config key `{key}` in [{section}]")]
    UnknownKey { section: String, key: String },
    #[error("duplicate config key `{key}` in [{section}]")]
    DuplicateKey { section: String, key: String },
    #[error("bad value for `{key}` in [{section}]: {msg}")]
    BadValue { section: String, key: String, msg: String },
    #[error("invalid config: {0}")]
    Invalid(String),
    #[error("referenced file does not exist: {0}")]
    MissingFile(PathBuf),
    #[error("cannot read config {0}: {1}")]
    Io(PathBuf, std::io::Error),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BackendKind {
    Oracle,
    External,
}

impl BackendKind {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::Oracle => "oracle",
            Self::External => "external",
        }
    }
}

impl FromStr for BackendKind {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "oracle" => Ok(Self::Oracle),
            "external" => Ok(Self::External),
            _ => Err(format!("expected oracle or external, got `{s}`")),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SelectorConfig {
    pub params: SelectorParams,
    pub features: FeatureConfig,
    /// Pretrained vocabulary; when absent one is trained on a separate
    /// training world before exploration starts.
    pub vocab: Option<PathBuf>,
    pub vocab_k: usize,
    pub vocab_depth: usize,
    pub vocab_seed: u64,
    /// World seed and obstacle density of the training world.
    pub training_seed: u64,
    pub training_density: f64,
}

impl Default for SelectorConfig {
    fn default() -> Self {
        Self {
            params: SelectorParams::default(),
            features: FeatureConfig::default(),
            vocab: None,
            vocab_k: 10,
            vocab_depth: 3,
            vocab_seed: 1,
            training_seed: 1001,
            training_density: 0.15,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct BackendConfig {
    pub kind: BackendKind,
    pub noise_sigma: f64,
    pub dropout: f64,
    pub seed: u64,
    pub executable: Option<PathBuf>,
    /// Per-pair timeout of the external backend, seconds.
    pub timeout: f64,
}

impl Default for BackendConfig {
    fn default() -> Self {
        Self { kind: BackendKind::Oracle, noise_sigma: 0.0, dropout: 0.0, seed: 7, executable: None, timeout: 300.0 }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct AlignConfig {
    pub options: AlignOptions,
    /// Voxel edge for merging the aligned cloud, meters; 0 keeps every point.
    pub merge_voxel: f64,
}

impl Default for AlignConfig {
    fn default() -> Self {
        Self { options: AlignOptions::default(), merge_voxel: 0.03 }
    }
}

#[derive(Clone, Debug, PartialEq, Default)]
pub struct SplatConfig {
    /// Splat size unit, meters; defaults to the merge voxel.
    pub base_scale: Option<f64>,
    /// Color-only refinement steps against the keyframes; 0 disables it.
    pub refine_steps: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct PipelineConfig {
    pub world: WorldSpec,
    pub camera: CameraModel,
    pub explore: ExplorationConfig,
    pub selector: SelectorConfig,
    pub backend: BackendConfig,
    pub align: AlignConfig,
    pub splat: SplatConfig,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            world: WorldSpec::default(),
            camera: CameraModel::centered(128, 96, 48.0),
            explore: ExplorationConfig::default(),
            selector: SelectorConfig::default(),
            backend: BackendConfig::default(),
            align: AlignConfig::default(),
            splat: SplatConfig::default(),
        }
    }
}

const SECTIONS: [(&str, &[&str]); 6] = [
    ("world", &["dims", "voxel_size", "seed", "obstacle_density", "width", "height", "focal"]),
    ("explore", &["v_max", "yaw_max", "sensor_max_range", "min_cluster_size", "viewpoint_standoff", "capture_rate", "max_rounds"]),
    (
        "selector",
        &[
            "tau",
            "thr_in",
            "t_max",
            "max_pairs_per_frame",
            "vocab",
            "vocab_k",
            "vocab_depth",
            "vocab_seed",
            "training_seed",
            "training_density",
            "fast_threshold",
            "max_keypoints",
            "brief_window",
            "brief_tests",
            "pattern_seed",
        ],
    ),
    ("backend", &["kind", "noise_sigma", "dropout", "seed", "executable", "timeout"]),
    ("align", &["max_iters", "step_tol", "grad_tol", "norm", "precondition", "merge_voxel"]),
    ("splat", &["base_scale", "refine_steps"]),
];

/// Key/value pairs of one section, consumed by typed lookups.
struct Section<'a> {
    name: &'a str,
    entries: Vec<(&'a str, &'a str)>,
}

impl Section<'_> {
    fn raw(&self, key: &str) -> Option<&str> {
        self.entries.iter().find(|(k, _)| *k == key).map(|(_, v)| *v)
    }

    fn bad(&self, key: &str, msg: impl Into<String>) -> ConfigError {
        ConfigError::BadValue { section: self.name.into(), key: key.into(), msg: msg.into() }
    }

    fn get<T: FromStr>(&self, key: &str, target: &mut T) -> Result<(), ConfigError>
    where
        T::Err: std::fmt::Display,
    {
        if let Some(v) = self.raw(key) {
            *target = v.parse().map_err(|e: T::Err| self.bad(key, e.to_string()))?;
        }
        Ok(())
    }

    fn get_bool(&self, key: &str, target: &mut bool) -> Result<(), ConfigError> {
        if let Some(v) = self.raw(key) {
            *target = match v {
                "true" | "yes" | "1" => true,
                "false" | "no" | "0" => false,
                _ => return Err(self.bad(key, format!("expected true or false, got `{v}`"))),
            };
        }
        Ok(())
    }
}

impl PipelineConfig {
    pub fn from_file(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|e| ConfigError::Io(path.to_path_buf(), e))?;
        let base = path.parent().unwrap_or(Path::new("."));
        Self::parse(&text, base)
    }

    /// Parses config text; relative file paths resolve against `base`.
    pub fn parse(text: &str, base: &Path) -> Result<Self, ConfigError> {
        let opt = ParseOption { enabled_quote: false, enabled_escape: false, ..ParseOption::default() };
        let ini = Ini::load_from_str_opt(text, opt).map_err(|e| ConfigError::Syntax(e.to_string()))?;
        let mut seen_sections = BTreeSet::new();
        let mut sections: Vec<Section> = Vec::new();
        for (name, props) in ini.iter() {
            let Some(name) = name else {
                if let Some((k, _)) = props.iter().next() {
                    return Err(ConfigError::Invalid(format!("key `{k}` appears before any section")));
                }
                continue;
            };
            let Some((_, known)) = SECTIONS.iter().find(|(s, _)| *s == name) else {
                return Err(ConfigError::UnknownSection(name.into()));
            };
            if !seen_sections.insert(name) {
                return Err(ConfigError::Invalid(format!("section [{name}] appears twice")));
            }
            let mut keys = BTreeSet::new();
            let mut entries = Vec::new();
            for (k, v) in props.iter() {
                if !known.contains(&k) {
                    return Err(ConfigError::UnknownKey { section: name.into(), key: k.into() });
                }
                if !keys.insert(k) {
                    return Err(ConfigError::DuplicateKey { section: name.into(), key: k.into() });
                }
                entries.push((k, v.trim()));
            }
            sections.push(Section { name, entries });
        }
        let empty = |name: &'static str| Section { name, entries: Vec::new() };
        let section = |name: &'static str| sections.iter().find(|s| s.name == name);

        let mut cfg = Self::default();
        let binding = empty("world");
        let w = section("world").unwrap_or(&binding);
        if let Some(v) = w.raw("dims") {
            let parts: Vec<usize> =
                v.split_whitespace().map(|p| p.parse::<usize>()).collect::<Result<_, _>>().map_err(|e| w.bad("dims", e.to_string()))?;
            let dims: [usize; 3] = parts.try_into().map_err(|_| w.bad("dims", "expected three integers"))?;
            cfg.world.dims = dims;
        }
        w.get("voxel_size", &mut cfg.world.voxel_size)?;
        w.get("seed", &mut cfg.world.seed)?;
        w.get("obstacle_density", &mut cfg.world.obstacle_density)?;
        let (mut width, mut height, mut focal) = (cfg.camera.width, cfg.camera.height, cfg.camera.fx);
        w.get("width", &mut width)?;
        w.get("height", &mut height)?;
        w.get("focal", &mut focal)?;
        cfg.camera = CameraModel::centered(width, height, focal);

        let binding = empty("explore");
        let e = section("explore").unwrap_or(&binding);
        e.get("v_max", &mut cfg.explore.v_max)?;
        e.get("yaw_max", &mut cfg.explore.yaw_max)?;
        e.get("sensor_max_range", &mut cfg.explore.sensor_max_range)?;
        e.get("min_cluster_size", &mut cfg.explore.min_cluster_size)?;
        e.get("viewpoint_standoff", &mut cfg.explore.viewpoint_standoff)?;
        e.get("capture_rate", &mut cfg.explore.capture_rate)?;
        e.get("max_rounds", &mut cfg.explore.max_rounds)?;

        let binding = empty("selector");
        let s = section("selector").unwrap_or(&binding);
        let sel = &mut cfg.selector;
        s.get("tau", &mut sel.params.tau)?;
        s.get("thr_in", &mut sel.params.thr_in)?;
        s.get("t_max", &mut sel.params.t_max)?;
        s.get("max_pairs_per_frame", &mut sel.params.max_pairs_per_frame)?;
        if let Some(v) = s.raw("vocab") {
            sel.vocab = Some(base.join(v));
        }
        s.get("vocab_k", &mut sel.vocab_k)?;
        s.get("vocab_depth", &mut sel.vocab_depth)?;
        s.get("vocab_seed", &mut sel.vocab_seed)?;
        s.get("training_seed", &mut sel.training_seed)?;
        s.get("training_density", &mut sel.training_density)?;
        s.get("fast_threshold", &mut sel.features.fast_threshold)?;
        s.get("max_keypoints", &mut sel.features.max_keypoints)?;
        s.get("brief_window", &mut sel.features.brief_window)?;
        s.get("brief_tests", &mut sel.features.brief_tests)?;
        s.get("pattern_seed", &mut sel.features.pattern_seed)?;

        let binding = empty("backend");
        let b = section("backend").unwrap_or(&binding);
        b.get("kind", &mut cfg.backend.kind)?;
        b.get("noise_sigma", &mut cfg.backend.noise_sigma)?;
        b.get("dropout", &mut cfg.backend.dropout)?;
        b.get("seed", &mut cfg.backend.seed)?;
        if let Some(v) = b.raw("executable") {
            cfg.backend.executable = Some(base.join(v));
        }
        b.get("timeout", &mut cfg.backend.timeout)?;

        let binding = empty("align");
        let a = section("align").unwrap_or(&binding);
        a.get("max_iters", &mut cfg.align.options.max_iters)?;
        a.get("step_tol", &mut cfg.align.options.step_tol)?;
        a.get("grad_tol", &mut cfg.align.options.grad_tol)?;
        if let Some(v) = a.raw("norm") {
            cfg.align.options.norm = match v {
                "squared" => ResidualNorm::Squared,
                "unsquared" => ResidualNorm::Unsquared,
                _ => return Err(a.bad("norm", format!("expected squared or unsquared, got `{v}`"))),
            };
        }
        a.get_bool("precondition", &mut cfg.align.options.precondition)?;
        a.get("merge_voxel", &mut cfg.align.merge_voxel)?;

        let binding = empty("splat");
        let sp = section("splat").unwrap_or(&binding);
        if let Some(v) = sp.raw("base_scale") {
            cfg.splat.base_scale = Some(v.parse().map_err(|e: std::num::ParseFloatError| sp.bad("base_scale", e.to_string()))?);
        }
        sp.get("refine_steps", &mut cfg.splat.refine_steps)?;

        cfg.validate()?;
        Ok(cfg)
    }

    /// Range checks per module, and existence of referenced files.
    pub fn validate(&self) -> Result<(), ConfigError> {
        let invalid = |m: String| Err(ConfigError::Invalid(m));
        let w = &self.world;
        if w.dims.iter().any(|&d| d < 8) {
            return invalid(format!("world dims {:?}: every axis needs at least 8 cells", w.dims));
        }
        if !(w.voxel_size > 0.0) {
            return invalid(format!("world voxel_size must be positive, got {}", w.voxel_size));
        }
        if !(0.0..=0.3).contains(&w.obstacle_density) {
            return invalid(format!("world obstacle_density must lie in [0, 0.3], got {}", w.obstacle_density));
        }
        self.camera.validate().map_err(ConfigError::Invalid)?;
        self.explore.validate().map_err(|e| ConfigError::Invalid(e.to_string()))?;
        let sel = &self.selector;
        let p = &sel.params;
        if !(p.tau > 0.0 && p.tau < 1.0) {
            return invalid(format!("selector tau must lie in (0, 1), got {}", p.tau));
        }
        if !(p.thr_in > 0.0) {
            return invalid(format!("selector thr_in must be positive, got {}", p.thr_in));
        }
        if !(p.t_max > 0.0) {
            return invalid(format!("selector t_max must be positive, got {}", p.t_max));
        }
        if p.max_pairs_per_frame == 0 {
            return invalid("selector max_pairs_per_frame must be at least 1".into());
        }
        if sel.vocab_k < 2 || sel.vocab_depth < 1 {
            return invalid(format!("vocabulary needs k >= 2 and depth >= 1, got k={} depth={}", sel.vocab_k, sel.vocab_depth));
        }
        if !(0.0..=0.3).contains(&sel.training_density) {
            return invalid(format!("selector training_density must lie in [0, 0.3], got {}", sel.training_density));
        }
        sel.features.validate().map_err(|e| ConfigError::Invalid(e.to_string()))?;
        if let Some(v) = &sel.vocab {
            if !v.is_file() {
                return Err(ConfigError::MissingFile(v.clone()));
            }
        }
        let b = &self.backend;
        if !(b.noise_sigma >= 0.0 && b.noise_sigma.is_finite()) {
            return invalid(format!("backend noise_sigma must be non-negative, got {}", b.noise_sigma));
        }
        if !(0.0..=1.0).contains(&b.dropout) {
            return invalid(format!("backend dropout must lie in [0, 1], got {}", b.dropout));
        }
        if !(b.timeout > 0.0) {
            return invalid(format!("backend timeout must be positive, got {}", b.timeout));
        }
        match (&b.kind, &b.executable) {
            (BackendKind::External, None) => return invalid("external backend needs `executable`".into()),
            (BackendKind::External, Some(exe)) if !exe.is_file() => return Err(ConfigError::MissingFile(exe.clone())),
            _ => {}
        }
        let a = &self.align;
        if a.options.max_iters == 0 {
            return invalid("align max_iters must be at least 1".into());
        }
        if !(a.options.step_tol >= 0.0 && a.options.grad_tol >= 0.0) {
            return invalid("align tolerances must be non-negative".into());
        }
        if !(a.merge_voxel >= 0.0 && a.merge_voxel.is_finite()) {
            return invalid(format!("align merge_voxel must be non-negative, got {}", a.merge_voxel));
        }
        if !(self.base_scale() > 0.0) {
            return invalid("splat base_scale must be positive (set it when merge_voxel is 0)".into());
        }
        Ok(())
    }

    pub fn base_scale(&self) -> f64 {
        self.splat.base_scale.unwrap_or(self.align.merge_voxel)
    }

    /// Effective configuration in the same format, every key spelled out.
    pub fn to_ini_string(&self) -> String {
        let mut s = String::new();
        let w = &self.world;
        let _ = writeln!(s, "[world]");
        let _ = writeln!(s, "dims = {} {} {}", w.dims[0], w.dims[1], w.dims[2]);
        let _ = writeln!(s, "voxel_size = {}\nseed = {}\nobstacle_density = {}", w.voxel_size, w.seed, w.obstacle_density);
        let _ = writeln!(s, "width = {}\nheight = {}\nfocal = {}", self.camera.width, self.camera.height, self.camera.fx);
        let e = &self.explore;
        let _ = writeln!(s, "\n[explore]");
        let _ = writeln!(s, "v_max = {}\nyaw_max = {}\nsensor_max_range = {}", e.v_max, e.yaw_max, e.sensor_max_range);
        let _ = writeln!(s, "min_cluster_size = {}\nviewpoint_standoff = {}", e.min_cluster_size, e.viewpoint_standoff);
        let _ = writeln!(s, "capture_rate = {}\nmax_rounds = {}", e.capture_rate, e.max_rounds);
        let sel = &self.selector;
        let _ = writeln!(s, "\n[selector]");
        let _ = writeln!(s, "tau = {}\nthr_in = {}\nt_max = {}", sel.params.tau, sel.params.thr_in, sel.params.t_max);
        let _ = writeln!(s, "max_pairs_per_frame = {}", sel.params.max_pairs_per_frame);
        if let Some(v) = &sel.vocab {
            let _ = writeln!(s, "vocab = {}", v.display());
        }
        let _ = writeln!(s, "vocab_k = {}\nvocab_depth = {}\nvocab_seed = {}", sel.vocab_k, sel.vocab_depth, sel.vocab_seed);
        let _ = writeln!(s, "training_seed = {}\ntraining_density = {}", sel.training_seed, sel.training_density);
        let f = &sel.features;
        let _ = writeln!(s, "fast_threshold = {}\nmax_keypoints = {}", f.fast_threshold, f.max_keypoints);
        let _ = writeln!(s, "brief_window = {}\nbrief_tests = {}\npattern_seed = {}", f.brief_window, f.brief_tests, f.pattern_seed);
        let b = &self.backend;
        let _ = writeln!(s, "\n[backend]");
        let _ = writeln!(s, "kind = {}\nnoise_sigma = {}\ndropout = {}\nseed = {}", b.kind.as_str(), b.noise_sigma, b.dropout, b.seed);
        if let Some(exe) = &b.executable {
            let _ = writeln!(s, "executable = {}", exe.display());
        }
        let _ = writeln!(s, "timeout = {}", b.timeout);
        let a = &self.align;
        let _ = writeln!(s, "\n[align]");
        let _ = writeln!(s, "max_iters = {}\nstep_tol = {}\ngrad_tol = {}", a.options.max_iters, a.options.step_tol, a.options.grad_tol);
        let norm = match a.options.norm {
            ResidualNorm::Squared => "squared",
            ResidualNorm::Unsquared => "unsquared",
        };
        let _ = writeln!(s, "norm = {norm}\nprecondition = {}\nmerge_voxel = {}", a.options.precondition, a.merge_voxel);
        let _ = writeln!(s, "\n[splat]");
        if let Some(bs) = self.splat.base_scale {
            let _ = writeln!(s, "base_scale = {bs}");
        }
        let _ = writeln!(s, "refine_steps = {}", self.splat.refine_steps);
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_text_gives_defaults() {
        assert_eq!(PipelineConfig::parse("", Path::new(".")).unwrap(), PipelineConfig::default());
    }

    #[test]
    fn unknown_key_is_named() {
        let err = PipelineConfig::parse("[explore]\nv_max = 1\nwarp_speed = 9\n", Path::new(".")).unwrap_err();
        assert!(matches!(&err, ConfigError::UnknownKey { section, key } if section == "explore" && key == "warp_speed"));
        assert!(err.to_string().contains("warp_speed"));
    }

    #[test]
    fn defaults_roundtrip_through_text() {
        let cfg = PipelineConfig::default();
        assert_eq!(PipelineConfig::parse(&cfg.to_ini_string(), Path::new(".")).unwrap(), cfg);
    }
}
