//! FAST-16 corners and BRIEF binary descriptors on 8-bit grayscale images.

use crate::image::RgbImage;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use std::fmt::Write as _;
use thiserror::Error;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum FeatureError {
    #[error("image {0}x{1} is smaller than the 32x32 minimum")]
    ImageTooSmall(usize, usize),
    #[error("descriptor length mismatch: {0} vs {1} bits")]
    LengthMismatch(usize, usize),
    #[error("invalid feature config: {0}")]
    InvalidConfig(String),
}

pub const MIN_IMAGE_SIDE: usize = 32;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct GrayImage {
    pub width: usize,
    pub height: usize,
    pub data: Vec<u8>,
}

impl GrayImage {
    pub fn new(width: usize, height: usize, data: Vec<u8>) -> Result<Self, FeatureError> {
        assert_eq!(data.len(), width * height, "pixel buffer size");
        if width < MIN_IMAGE_SIDE || height < MIN_IMAGE_SIDE {
            return Err(FeatureError::ImageTooSmall(width, height));
        }
        Ok(Self { width, height, data })
    }

    pub fn filled(width: usize, height: usize, v: u8) -> Result<Self, FeatureError> {
        Self::new(width, height, vec![v; width * height])
    }

    /// Luma `0.299 R + 0.587 G + 0.114 B` of the 8-bit channel values, rounded.
    pub fn from_rgb(img: &RgbImage) -> Result<Self, FeatureError> {
        let to8 = |c: f64| (c.clamp(0.0, 1.0) * 255.0).round();
        let data =
            img.data.iter().map(|p| (0.299 * to8(p[0]) + 0.587 * to8(p[1]) + 0.114 * to8(p[2])).round().clamp(0.0, 255.0) as u8).collect();
        Self::new(img.width, img.height, data)
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> u8 {
        self.data[y * self.width + x]
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Keypoint {
    pub x: usize,
    pub y: usize,
    /// Sum of |I − I_p| over the qualifying contiguous arc.
    pub score: u32,
}

#[derive(Clone, Debug, PartialEq)]
pub struct FeatureConfig {
    pub fast_threshold: u8,
    pub max_keypoints: usize,
    /// Side of the BRIEF sampling window, odd.
    pub brief_window: usize,
    /// Number of BRIEF tests, a multiple of 8.
    pub brief_tests: usize,
    pub pattern_seed: u64,
}

impl Default for FeatureConfig {
    fn default() -> Self {
        Self { fast_threshold: 10, max_keypoints: 500, brief_window: 31, brief_tests: 256, pattern_seed: 0x5eed }
    }
}

impl FeatureConfig {
    pub fn validate(&self) -> Result<(), FeatureError> {
        let bad = |m: &str| Err(FeatureError::InvalidConfig(m.to_string()));
        if self.fast_threshold == 0 {
            return bad("fast_threshold must be positive");
        }
        if self.brief_window.is_multiple_of(2) || self.brief_window < 3 {
            return bad("brief_window must be odd and at least 3");
        }
        if self.brief_tests == 0 || !self.brief_tests.is_multiple_of(8) {
            return bad("brief_tests must be a positive multiple of 8");
        }
        Ok(())
    }
}

/// Radius-3 Bresenham circle, clockwise from the top.
pub const CIRCLE: [(i32, i32); 16] = [
    (0, -3),
    (1, -3),
    (2, -2),
    (3, -1),
    (3, 0),
    (3, 1),
    (2, 2),
    (1, 3),
    (0, 3),
    (-1, 3),
    (-2, 2),
    (-3, 1),
    (-3, 0),
    (-3, -1),
    (-2, -2),
    (-1, -3),
];

/// Minimum contiguous arc length for a corner.
pub const ARC_LENGTH: usize = 12;
const BORDER: usize = 3;

/// FAST response at `(x, y)`: the largest sum of |I − I_p| over a cyclic run of
/// at least 12 circle pixels that are all brighter than `I_p + t` or all darker
/// than `I_p − t`. `None` when no such run exists.
fn corner_score(img: &GrayImage, x: usize, y: usize, t: u8) -> Option<u32> {
    let p = img.get(x, y) as i32;
    let t = t as i32;
    let mut vals = [0i32; 16];
    let mut bright = 0u16;
    let mut dark = 0u16;
    for (k, &(dx, dy)) in CIRCLE.iter().enumerate() {
        let v = img.get((x as i32 + dx) as usize, (y as i32 + dy) as usize) as i32;
        vals[k] = v;
        if v > p + t {
            bright |= 1 << k;
        } else if v < p - t {
            dark |= 1 << k;
        }
    }
    let mut best = None;
    for mask in [bright, dark] {
        if (mask.count_ones() as usize) < ARC_LENGTH {
            continue;
        }
        if mask == 0xffff {
            let s = vals.iter().map(|v| (v - p).unsigned_abs()).sum::<u32>();
            best = best.max(Some(s));
            continue;
        }
        // Walk runs starting just after a gap so none wraps unseen.
        let start = (0..16).find(|&k| mask >> k & 1 == 0).unwrap();
        let mut run_len = 0;
        let mut run_sum = 0u32;
        for step in 1..=16 {
            let k = (start + step) % 16;
            if mask >> k & 1 == 1 {
                run_len += 1;
                run_sum += (vals[k] - p).unsigned_abs();
            } else {
                if run_len >= ARC_LENGTH {
                    best = best.max(Some(run_sum));
                }
                run_len = 0;
                run_sum = 0;
            }
        }
    }
    best
}

/// Every pixel passing the FAST arc test, in raster order, before
/// non-maximum suppression.
pub fn fast_candidates(img: &GrayImage, t: u8) -> Vec<Keypoint> {
    let mut out = Vec::new();
    if img.width <= 2 * BORDER || img.height <= 2 * BORDER {
        return out;
    }
    for y in BORDER..img.height - BORDER {
        for x in BORDER..img.width - BORDER {
            if let Some(score) = corner_score(img, x, y, t) {
                out.push(Keypoint { x, y, score });
            }
        }
    }
    out
}

/// FAST-16 corners after 3×3 non-maximum suppression, strongest first (ties
/// in (y, x) order), at most `max_keypoints`. Among equal-score neighbors the
/// earliest in raster order survives.
pub fn fast_detect(img: &GrayImage, cfg: &FeatureConfig) -> Vec<Keypoint> {
    let cands = fast_candidates(img, cfg.fast_threshold);
    let mut score_map = vec![0u32; img.width * img.height];
    let mut present = vec![false; img.width * img.height];
    for k in &cands {
        score_map[k.y * img.width + k.x] = k.score;
        present[k.y * img.width + k.x] = true;
    }
    let mut kept: Vec<Keypoint> = cands
        .iter()
        .copied()
        .filter(|k| {
            for dy in -1i32..=1 {
                for dx in -1i32..=1 {
                    if dx == 0 && dy == 0 {
                        continue;
                    }
                    let (nx, ny) = ((k.x as i32 + dx) as usize, (k.y as i32 + dy) as usize);
                    let i = ny * img.width + nx;
                    if !present[i] {
                        continue;
                    }
                    let earlier = (dy, dx) < (0, 0);
                    if score_map[i] > k.score || (score_map[i] == k.score && earlier) {
                        return false;
                    }
                }
            }
            true
        })
        .collect();
    kept.sort_by(|a, b| b.score.cmp(&a.score).then((a.y, a.x).cmp(&(b.y, b.x))));
    kept.truncate(cfg.max_keypoints);
    kept
}

/// BRIEF sampling pattern: pixel offsets `(x1, y1, x2, y2)` from the keypoint,
/// each within ±(S−1)/2.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BriefPattern {
    pub window: usize,
    pub pairs: Vec<[i8; 4]>,
}

impl BriefPattern {
    /// `n` test pairs with coordinates drawn from N(0, (S/5)²), rounded and
    /// redrawn until inside the window, using ChaCha8 seeded with `seed`.
    /// Pairs whose two points coincide are redrawn.
    pub fn generate(window: usize, n: usize, seed: u64) -> Self {
        let half = ((window - 1) / 2) as i32;
        let normal = Normal::new(0.0, window as f64 / 5.0).expect("positive sigma");
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let coord = |rng: &mut ChaCha8Rng| loop {
            let v = normal.sample(rng).round() as i32;
            if v.abs() <= half {
                return v as i8;
            }
        };
        let mut pairs = Vec::with_capacity(n);
        while pairs.len() < n {
            let p = [coord(&mut rng), coord(&mut rng), coord(&mut rng), coord(&mut rng)];
            if p[0] != p[2] || p[1] != p[3] {
                pairs.push(p);
            }
        }
        Self { window, pairs }
    }

    pub fn from_config(cfg: &FeatureConfig) -> Self {
        Self::generate(cfg.brief_window, cfg.brief_tests, cfg.pattern_seed)
    }

    pub fn margin(&self) -> usize {
        (self.window - 1) / 2
    }

    pub fn bits(&self) -> usize {
        self.pairs.len()
    }
}

/// Packed N-bit binary descriptor; bit `i` is bit `i % 64` of word `i / 64`.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct BriefDescriptor {
    pub bits: usize,
    pub words: Vec<u64>,
}

impl BriefDescriptor {
    pub fn zeros(bits: usize) -> Self {
        Self { bits, words: vec![0; bits.div_ceil(64)] }
    }

    pub fn bit(&self, i: usize) -> bool {
        self.words[i / 64] >> (i % 64) & 1 == 1
    }

    pub fn set_bit(&mut self, i: usize, v: bool) {
        if v {
            self.words[i / 64] |= 1 << (i % 64);
        } else {
            self.words[i / 64] &= !(1 << (i % 64));
        }
    }

    pub fn complement(&self) -> Self {
        let mut out = Self::zeros(self.bits);
        for i in 0..self.bits {
            out.set_bit(i, !self.bit(i));
        }
        out
    }

    /// Little-endian bytes, `bits / 8` of them.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out: Vec<u8> = self.words.iter().flat_map(|w| w.to_le_bytes()).collect();
        out.truncate(self.bits.div_ceil(8));
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Self {
        let bits = bytes.len() * 8;
        let mut words = vec![0u64; bits.div_ceil(64)];
        for (i, &b) in bytes.iter().enumerate() {
            words[i / 8] |= (b as u64) << (8 * (i % 8));
        }
        Self { bits, words }
    }

    pub fn to_hex(&self) -> String {
        self.to_bytes().iter().fold(String::new(), |mut s, b| {
            let _ = write!(s, "{b:02x}");
            s
        })
    }
}

pub fn hamming(a: &BriefDescriptor, b: &BriefDescriptor) -> Result<u32, FeatureError> {
    if a.bits != b.bits {
        return Err(FeatureError::LengthMismatch(a.bits, b.bits));
    }
    Ok(a.words.iter().zip(&b.words).map(|(x, y)| (x ^ y).count_ones()).sum())
}

/// 5×5 box sums (not divided; comparisons are scale-free) with clamped
/// borders.
pub fn box_sums_5x5(img: &GrayImage) -> Vec<u32> {
    let (w, h) = (img.width, img.height);
    let clamp = |v: i64, n: usize| v.clamp(0, n as i64 - 1) as usize;
    let mut rows = vec![0u32; w * h];
    for y in 0..h {
        for x in 0..w {
            rows[y * w + x] = (-2..=2).map(|d| img.get(clamp(x as i64 + d, w), y) as u32).sum();
        }
    }
    let mut out = vec![0u32; w * h];
    for y in 0..h {
        for x in 0..w {
            out[y * w + x] = (-2..=2).map(|d| rows[clamp(y as i64 + d, h) * w + x]).sum();
        }
    }
    out
}

/// Keypoints whose full BRIEF window lies inside the image, order preserved.
pub fn filter_for_brief(img: &GrayImage, kps: &[Keypoint], pattern: &BriefPattern) -> Vec<Keypoint> {
    let m = pattern.margin();
    kps.iter().copied().filter(|k| k.x >= m && k.y >= m && k.x + m < img.width && k.y + m < img.height).collect()
}

/// BRIEF descriptors of the keypoints that respect the window margin, in
/// input order; bit i is 1 iff the smoothed intensity at the first point of
/// test i is strictly below the second.
pub fn brief_describe_with(img: &GrayImage, kps: &[Keypoint], pattern: &BriefPattern) -> Vec<(Keypoint, BriefDescriptor)> {
    let smooth = box_sums_5x5(img);
    let at = |x: i32, y: i32| smooth[y as usize * img.width + x as usize];
    filter_for_brief(img, kps, pattern)
        .into_iter()
        .map(|k| {
            let (kx, ky) = (k.x as i32, k.y as i32);
            let mut d = BriefDescriptor::zeros(pattern.bits());
            for (i, p) in pattern.pairs.iter().enumerate() {
                let a = at(kx + p[0] as i32, ky + p[1] as i32);
                let b = at(kx + p[2] as i32, ky + p[3] as i32);
                d.set_bit(i, a < b);
            }
            (k, d)
        })
        .collect()
}

pub fn brief_describe(img: &GrayImage, kps: &[Keypoint], cfg: &FeatureConfig) -> Vec<(Keypoint, BriefDescriptor)> {
    brief_describe_with(img, kps, &BriefPattern::from_config(cfg))
}

/// Detection followed by description with a precomputed pattern.
pub fn extract(img: &GrayImage, cfg: &FeatureConfig, pattern: &BriefPattern) -> Vec<(Keypoint, BriefDescriptor)> {
    brief_describe_with(img, &fast_detect(img, cfg), pattern)
}

/// One `features.txt` line: `frame_id x y score hex(descriptor)`.
pub fn feature_line(frame_id: usize, k: &Keypoint, d: &BriefDescriptor) -> String {
    format!("{frame_id} {} {} {} {}", k.x, k.y, k.score, d.to_hex())
}
