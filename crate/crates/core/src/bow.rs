//! Hierarchical bag-of-words vocabulary over BRIEF descriptors and the
//! keyframe/pair selector built on it.
//!
//! Frames are summarized as sparse tf-idf word histograms. A frame becomes a
//! keyframe when its similarity to the last keyframe, normalized by its
//! similarity to the best recent frame, falls below `thr_in`. Each new keyframe
//! is paired with up to three earlier keyframes whose normalized score
//! exceeds `tau`.

use crate::features::{hamming, BriefDescriptor, BriefPattern};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::collections::{BTreeMap, VecDeque};
use std::io::{self, Read, Write};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum BowError {
    #[error("need at least {needed} descriptors to train, got {got}")]
    TooFewDescriptors { needed: usize, got: usize },
    #[error("invalid vocabulary parameters: {0}")]
    InvalidParams(String),
    #[error("descriptor length {0} does not match the vocabulary's {1} bits")]
    LengthMismatch(usize, usize),
    #[error("zero similarity to the reference frame")]
    ZeroReference,
    #[error("vocabulary file: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] io::Error),
}

#[derive(Clone, Debug, PartialEq)]
pub struct VocabNode {
    pub centroid: BriefDescriptor,
    /// Child node indices; empty for a leaf.
    pub children: Vec<usize>,
}

/// Vocabulary tree. Nodes are stored breadth-first with the root at index 0;
/// words are the leaves, numbered in that same order.
#[derive(Clone, Debug, PartialEq)]
pub struct Vocabulary {
    pub k: usize,
    pub depth: usize,
    pub bits: usize,
    pub pattern_seed: u64,
    pub nodes: Vec<VocabNode>,
    /// Word id of each node, `None` for internal nodes.
    pub word_of_node: Vec<Option<usize>>,
    pub idf: Vec<f64>,
    /// BRIEF pattern the training descriptors were computed with.
    pub pattern: Option<BriefPattern>,
}

const KMEDIANS_ITERS: usize = 25;

impl Vocabulary {
    pub fn word_count(&self) -> usize {
        self.idf.len()
    }

    /// Leaf reached by greedy descent: at every level step to the child with
    /// the smallest Hamming distance, ties to the lowest child index.
    pub fn word_of(&self, d: &BriefDescriptor) -> Result<usize, BowError> {
        if d.bits != self.bits {
            return Err(BowError::LengthMismatch(d.bits, self.bits));
        }
        let mut node = 0;
        loop {
            let n = &self.nodes[node];
            if n.children.is_empty() {
                return Ok(self.word_of_node[node].expect("leaves carry word ids"));
            }
            let mut best = n.children[0];
            let mut best_d = u32::MAX;
            for &c in &n.children {
                let dist = hamming(&self.nodes[c].centroid, d).expect("length checked");
                if dist < best_d {
                    best_d = dist;
                    best = c;
                }
            }
            node = best;
        }
    }

    /// Binary vocabulary file: magic `EGSV`, then little-endian u32 k, u32 L,
    /// u32 N (descriptor bits), u64 pattern seed, u32 word count; nodes in BFS
    /// order as N/8 descriptor bytes plus a u32 child count; f64 idf per word;
    /// finally the BRIEF pattern as u32 window, u32 pair count and four i8
    /// offsets per pair (pair count 0 when absent).
    pub fn write_to<W: Write>(&self, mut w: W) -> io::Result<()> {
        w.write_all(b"EGSV")?;
        for v in [self.k as u32, self.depth as u32, self.bits as u32] {
            w.write_all(&v.to_le_bytes())?;
        }
        w.write_all(&self.pattern_seed.to_le_bytes())?;
        w.write_all(&(self.word_count() as u32).to_le_bytes())?;
        for n in &self.nodes {
            w.write_all(&n.centroid.to_bytes())?;
            w.write_all(&(n.children.len() as u32).to_le_bytes())?;
        }
        for v in &self.idf {
            w.write_all(&v.to_le_bytes())?;
        }
        match &self.pattern {
            Some(p) => {
                w.write_all(&(p.window as u32).to_le_bytes())?;
                w.write_all(&(p.pairs.len() as u32).to_le_bytes())?;
                for pair in &p.pairs {
                    w.write_all(&pair.map(|v| v as u8))?;
                }
            }
            None => w.write_all(&[0u8; 8])?,
        }
        Ok(())
    }

    pub fn read_from<R: Read>(mut r: R) -> Result<Self, BowError> {
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)?;
        if &magic != b"EGSV" {
            return Err(BowError::Format("bad magic".into()));
        }
        let k = read_u32(&mut r)? as usize;
        let depth = read_u32(&mut r)? as usize;
        let bits = read_u32(&mut r)? as usize;
        if bits == 0 || !bits.is_multiple_of(8) {
            return Err(BowError::Format(format!("descriptor bits {bits} not a positive multiple of 8")));
        }
        let mut b8 = [0u8; 8];
        r.read_exact(&mut b8)?;
        let pattern_seed = u64::from_le_bytes(b8);
        let word_count = read_u32(&mut r)? as usize;
        // Children of BFS-ordered nodes are consecutive and in parent order,
        // so the node count follows from the child counts read so far.
        let mut nodes: Vec<VocabNode> = Vec::new();
        let mut declared = 1;
        let mut buf = vec![0u8; bits / 8];
        while nodes.len() < declared {
            r.read_exact(&mut buf)?;
            let centroid = BriefDescriptor::from_bytes(&buf);
            let c = read_u32(&mut r)? as usize;
            if c == 1 || c > k.max(2) {
                return Err(BowError::Format(format!("node with {c} children")));
            }
            nodes.push(VocabNode { centroid, children: (declared..declared + c).collect() });
            declared += c;
        }
        let (word_of_node, leaves) = number_leaves(&nodes);
        if leaves != word_count {
            return Err(BowError::Format(format!("{leaves} leaves but {word_count} words declared")));
        }
        let mut idf = Vec::with_capacity(word_count);
        for _ in 0..word_count {
            r.read_exact(&mut b8)?;
            idf.push(f64::from_le_bytes(b8));
        }
        let window = read_u32(&mut r)? as usize;
        let n_pairs = read_u32(&mut r)? as usize;
        let pattern = if n_pairs == 0 {
            None
        } else {
            let mut pairs = Vec::with_capacity(n_pairs);
            for _ in 0..n_pairs {
                let mut p = [0u8; 4];
                r.read_exact(&mut p)?;
                pairs.push(p.map(|v| v as i8));
            }
            Some(BriefPattern { window, pairs })
        };
        Ok(Self { k, depth, bits, pattern_seed, nodes, word_of_node, idf, pattern })
    }

    pub fn save(&self, path: &std::path::Path) -> io::Result<()> {
        let mut w = io::BufWriter::new(std::fs::File::create(path)?);
        self.write_to(&mut w)?;
        w.flush()
    }

    pub fn load(path: &std::path::Path) -> Result<Self, BowError> {
        Self::read_from(io::BufReader::new(std::fs::File::open(path)?))
    }
}

fn read_u32<R: Read>(r: &mut R) -> io::Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn number_leaves(nodes: &[VocabNode]) -> (Vec<Option<usize>>, usize) {
    let mut next = 0;
    let ids = nodes
        .iter()
        .map(|n| {
            n.children.is_empty().then(|| {
                next += 1;
                next - 1
            })
        })
        .collect();
    (ids, next)
}

/// Per-bit majority vote; ties give 0.
fn majority(members: &[&BriefDescriptor], bits: usize) -> BriefDescriptor {
    let mut out = BriefDescriptor::zeros(bits);
    for i in 0..bits {
        let ones = members.iter().filter(|d| d.bit(i)).count();
        out.set_bit(i, 2 * ones > members.len());
    }
    out
}

fn nearest(centers: &[BriefDescriptor], d: &BriefDescriptor) -> usize {
    let mut best = 0;
    let mut best_d = u32::MAX;
    for (i, c) in centers.iter().enumerate() {
        let dist = hamming(c, d).expect("uniform length");
        if dist < best_d {
            best_d = dist;
            best = i;
        }
    }
    best
}

/// Seeded k-means++ initial centers under Hamming distance. Returns fewer than
/// `k` centers when the remaining members all coincide with chosen ones.
fn seed_centers(members: &[&BriefDescriptor], k: usize, rng: &mut ChaCha8Rng) -> Vec<BriefDescriptor> {
    let mut centers = vec![members[rng.random_range(0..members.len())].clone()];
    let mut dist: Vec<f64> = members.iter().map(|d| hamming(&centers[0], d).unwrap() as f64).collect();
    while centers.len() < k {
        let total: f64 = dist.iter().map(|d| d * d).sum();
        if total == 0.0 {
            break;
        }
        let mut pick = rng.random::<f64>() * total;
        let mut chosen = members.len() - 1;
        for (i, d) in dist.iter().enumerate() {
            pick -= d * d;
            if pick < 0.0 && *d > 0.0 {
                chosen = i;
                break;
            }
        }
        if dist[chosen] == 0.0 {
            chosen = dist.iter().rposition(|&d| d > 0.0).expect("total > 0");
        }
        let c = members[chosen].clone();
        for (i, d) in members.iter().enumerate() {
            dist[i] = dist[i].min(hamming(&c, d).unwrap() as f64);
        }
        centers.push(c);
    }
    centers
}

/// Splits `members` into at most `k` groups: k-means++ seeding, then
/// alternating nearest-center assignment and majority-vote centers until the
/// assignment is stable. Empty groups are dropped. Every returned member is
/// nearest (ties to lower index) to its own group's center among the
/// returned centers.
fn kmedians(members: &[&BriefDescriptor], k: usize, bits: usize, rng: &mut ChaCha8Rng) -> Vec<(BriefDescriptor, Vec<usize>)> {
    let mut centers = seed_centers(members, k, rng);
    let mut assign: Vec<usize> = members.iter().map(|d| nearest(&centers, d)).collect();
    for _ in 0..KMEDIANS_ITERS {
        let mut next_centers = Vec::with_capacity(centers.len());
        for c in 0..centers.len() {
            let group: Vec<&BriefDescriptor> = members.iter().zip(&assign).filter(|(_, &a)| a == c).map(|(d, _)| *d).collect();
            if group.is_empty() {
                continue;
            }
            next_centers.push(majority(&group, bits));
        }
        let next_assign: Vec<usize> = members.iter().map(|d| nearest(&next_centers, d)).collect();
        let stable = next_centers == centers && next_assign == assign;
        centers = next_centers;
        assign = next_assign;
        if stable {
            break;
        }
    }
    let mut groups: Vec<(BriefDescriptor, Vec<usize>)> = centers.into_iter().map(|c| (c, Vec::new())).collect();
    for (i, &a) in assign.iter().enumerate() {
        groups[a].1.push(i);
    }
    // Dropping an empty group cannot change anyone's nearest center, since no
    // member was nearest to it.
    groups.retain(|g| !g.1.is_empty());
    groups
}

/// Trains a vocabulary tree with branching `k` and depth `depth` from the
/// descriptors of a set of training frames, and weights each word by
/// `ln(frames / frames containing the word)`.
///
/// A node stops splitting at depth `depth`, when it holds fewer than `k`
/// descriptors, or when clustering yields fewer than two nonempty groups.
pub fn train_vocabulary(frames: &[Vec<BriefDescriptor>], k: usize, depth: usize, seed: u64) -> Result<Vocabulary, BowError> {
    if k < 2 {
        return Err(BowError::InvalidParams(format!("branching k = {k} must be at least 2")));
    }
    if depth < 1 {
        return Err(BowError::InvalidParams("depth must be at least 1".into()));
    }
    let all: Vec<&BriefDescriptor> = frames.iter().flatten().collect();
    if all.len() < k {
        return Err(BowError::TooFewDescriptors { needed: k, got: all.len() });
    }
    let bits = all[0].bits;
    if let Some(d) = all.iter().find(|d| d.bits != bits) {
        return Err(BowError::LengthMismatch(d.bits, bits));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut nodes = vec![VocabNode { centroid: BriefDescriptor::zeros(bits), children: Vec::new() }];
    let mut queue: VecDeque<(usize, Vec<usize>, usize)> = VecDeque::from([(0, (0..all.len()).collect(), 0)]);
    while let Some((node, idx, level)) = queue.pop_front() {
        if level >= depth || idx.len() < k {
            continue;
        }
        let members: Vec<&BriefDescriptor> = idx.iter().map(|&i| all[i]).collect();
        let groups = kmedians(&members, k, bits, &mut rng);
        if groups.len() < 2 {
            continue;
        }
        for (centroid, local) in groups {
            let child = nodes.len();
            nodes.push(VocabNode { centroid, children: Vec::new() });
            nodes[node].children.push(child);
            queue.push_back((child, local.into_iter().map(|l| idx[l]).collect(), level + 1));
        }
    }
    let (word_of_node, words) = number_leaves(&nodes);
    let mut vocab = Vocabulary { k, depth, bits, pattern_seed: 0, nodes, word_of_node, idf: vec![0.0; words], pattern: None };

    let n_frames = frames.len() as f64;
    let mut containing = vec![0usize; words];
    for f in frames {
        let mut seen = vec![false; words];
        for d in f {
            seen[vocab.word_of(d)?] = true;
        }
        for (c, s) in containing.iter_mut().zip(seen) {
            *c += s as usize;
        }
    }
    vocab.idf = containing.iter().map(|&c| if c == 0 { 0.0 } else { (n_frames / c as f64).ln() }).collect();
    Ok(vocab)
}

/// Sparse tf-idf word histogram, L1-normalized, ascending by word id, with
/// strictly positive weights.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct BowVector {
    pub entries: Vec<(u32, f64)>,
}

impl BowVector {
    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn l1_norm(&self) -> f64 {
        self.entries.iter().map(|e| e.1.abs()).sum()
    }

    /// Normalizes raw nonnegative weights; zero weights are dropped.
    pub fn from_weights(weights: impl IntoIterator<Item = (u32, f64)>) -> Self {
        let mut map = BTreeMap::new();
        for (w, v) in weights {
            *map.entry(w).or_insert(0.0) += v;
        }
        let total: f64 = map.values().sum();
        if !(total > 0.0) {
            return Self::default();
        }
        Self { entries: map.into_iter().filter(|e| e.1 > 0.0).map(|(w, v)| (w, v / total)).collect() }
    }
}

/// Quantizes one image's descriptors: word counts times idf, L1-normalized.
pub fn quantize(vocab: &Vocabulary, descriptors: &[BriefDescriptor]) -> Result<BowVector, BowError> {
    let mut counts: BTreeMap<usize, usize> = BTreeMap::new();
    for d in descriptors {
        *counts.entry(vocab.word_of(d)?).or_insert(0) += 1;
    }
    Ok(BowVector::from_weights(counts.into_iter().map(|(w, c)| (w as u32, c as f64 * vocab.idf[w]))))
}

/// `1 − ½‖a/|a| − b/|b|‖₁`, in [0, 1]; 0 when either vector is empty.
pub fn similarity(a: &BowVector, b: &BowVector) -> f64 {
    let (na, nb) = (a.l1_norm(), b.l1_norm());
    if na == 0.0 || nb == 0.0 {
        return 0.0;
    }
    let (mut i, mut j) = (0, 0);
    let mut diff = 0.0;
    while i < a.entries.len() || j < b.entries.len() {
        let wa = a.entries.get(i).map_or(u32::MAX, |e| e.0);
        let wb = b.entries.get(j).map_or(u32::MAX, |e| e.0);
        if wa == wb {
            diff += (a.entries[i].1 / na - b.entries[j].1 / nb).abs();
            i += 1;
            j += 1;
        } else if wa < wb {
            diff += a.entries[i].1 / na;
            i += 1;
        } else {
            diff += b.entries[j].1 / nb;
            j += 1;
        }
    }
    (1.0 - 0.5 * diff).clamp(0.0, 1.0)
}

#[derive(Clone, Debug, PartialEq)]
pub struct SelectorParams {
    /// Similarity floor for references and pairs.
    pub tau: f64,
    /// Admission threshold on the normalized score.
    pub thr_in: f64,
    /// Reference look-back window, seconds.
    pub t_max: f64,
    pub max_pairs_per_frame: usize,
}

impl Default for SelectorParams {
    fn default() -> Self {
        Self { tau: 0.03, thr_in: 0.04, t_max: 2.0, max_pairs_per_frame: 3 }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct DbEntry {
    pub frame_id: usize,
    pub bow: BowVector,
    pub timestamp: f64,
    pub keyframe: bool,
    /// Similarity to this frame's reference, the denominator of its pair
    /// scores; 1 for frames admitted without a reference.
    pub reference_similarity: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Decision {
    Select,
    Discard,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Admission {
    pub decision: Decision,
    /// Frame id of the reference frame, if one qualified.
    pub reference: Option<usize>,
    /// Normalized score against the last keyframe, when one was computed.
    pub eta: Option<f64>,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ImagePair {
    pub i: usize,
    pub k: usize,
    pub eta: f64,
}

/// Append-only frame database driving keyframe admission and pair emission.
#[derive(Clone, Debug, Default)]
pub struct MatchDatabase {
    pub params: SelectorParams,
    pub entries: Vec<DbEntry>,
    /// Index into `entries` of the most recent keyframe.
    last_selected: Option<usize>,
}

impl MatchDatabase {
    pub fn new(params: SelectorParams) -> Self {
        Self { params, entries: Vec::new(), last_selected: None }
    }

    pub fn last_selected(&self) -> Option<&DbEntry> {
        self.last_selected.map(|i| &self.entries[i])
    }

    pub fn keyframes(&self) -> impl Iterator<Item = &DbEntry> {
        self.entries.iter().filter(|e| e.keyframe)
    }

    /// Best reference for a frame at `time`: among stored frames strictly
    /// within the last `t_max` seconds whose similarity to `v` exceeds `tau`,
    /// the most similar, ties to the most recent. Returns the entry index and
    /// its similarity.
    pub fn select_reference(&self, v: &BowVector, time: f64) -> Option<(usize, f64)> {
        let mut best: Option<(usize, f64)> = None;
        for (i, e) in self.entries.iter().enumerate() {
            if !(e.timestamp > time - self.params.t_max && e.timestamp < time) {
                continue;
            }
            let s = similarity(&e.bow, v);
            if s > self.params.tau && best.is_none_or(|(_, bs)| s >= bs) {
                best = Some((i, s));
            }
        }
        best
    }

    /// Admission decision for a new frame; the frame is stored either way.
    /// The first frame, and any frame with no qualifying reference, is
    /// selected outright.
    pub fn admit_keyframe(&mut self, frame_id: usize, v: BowVector, time: f64) -> Admission {
        if let Some(last) = self.entries.last() {
            assert!(frame_id > last.frame_id, "frames must arrive in frame_id order");
        }
        let reference = self.select_reference(&v, time);
        let (decision, eta, reference_similarity) = match (self.last_selected, reference) {
            (None, _) | (Some(_), None) => (Decision::Select, None, 1.0),
            (Some(last), Some((_, s_ref))) => {
                let eta = normalized(similarity(&self.entries[last].bow, &v), s_ref, self.params.tau);
                let d = if eta < self.params.thr_in { Decision::Select } else { Decision::Discard };
                (d, Some(eta), s_ref)
            }
        };
        self.entries.push(DbEntry { frame_id, bow: v, timestamp: time, keyframe: decision == Decision::Select, reference_similarity });
        if decision == Decision::Select {
            self.last_selected = Some(self.entries.len() - 1);
        }
        Admission { decision, reference: reference.map(|(i, _)| self.entries[i].frame_id), eta }
    }

    /// Pairs between keyframe `frame_id` and earlier keyframes whose
    /// normalized score exceeds `tau`; the best `max_pairs_per_frame` by
    /// score, descending (ties to the more recent keyframe).
    pub fn query_pairs(&self, frame_id: usize) -> Vec<ImagePair> {
        let Some(pos) = self.entries.iter().position(|e| e.frame_id == frame_id) else { return Vec::new() };
        let cur = &self.entries[pos];
        if !cur.keyframe {
            return Vec::new();
        }
        let mut pairs: Vec<ImagePair> = self.entries[..pos]
            .iter()
            .filter(|e| e.keyframe)
            .map(|e| ImagePair {
                i: e.frame_id,
                k: frame_id,
                eta: normalized(similarity(&e.bow, &cur.bow), cur.reference_similarity, self.params.tau),
            })
            .filter(|p| p.eta > self.params.tau)
            .collect();
        pairs.sort_by(|a, b| b.eta.total_cmp(&a.eta).then(b.i.cmp(&a.i)));
        pairs.truncate(self.params.max_pairs_per_frame);
        pairs
    }

    /// Admits a frame and, when it is selected, returns its pairs.
    pub fn process(&mut self, frame_id: usize, v: BowVector, time: f64) -> (Admission, Vec<ImagePair>) {
        let adm = self.admit_keyframe(frame_id, v, time);
        let pairs = if adm.decision == Decision::Select { self.query_pairs(frame_id) } else { Vec::new() };
        (adm, pairs)
    }
}

fn normalized(s: f64, s_ref: f64, tau: f64) -> f64 {
    (s / s_ref).clamp(0.0, 1.0 / tau)
}

/// `s(v_i, v_k) / s(v_ref, v_k)`, clamped to `[0, 1/tau]`.
pub fn normalized_score(v_i: &BowVector, v_k: &BowVector, v_ref: &BowVector, tau: f64) -> Result<f64, BowError> {
    let s_ref = similarity(v_ref, v_k);
    if s_ref <= 0.0 {
        return Err(BowError::ZeroReference);
    }
    Ok(normalized(similarity(v_i, v_k), s_ref, tau))
}

/// Number of ordered pairs `(i, k)`, `i ≠ k`, among `n` images.
pub fn complete_pair_count(n: usize) -> usize {
    n * n.saturating_sub(1)
}

/// Ordered pairs between each image and the next `w` images cyclically
/// (image i pairs with i+1..=i+w mod n), so `w·n` for `n > w`.
pub fn sliding_window_pair_count(n: usize, w: usize) -> usize {
    let mut pairs = std::collections::BTreeSet::new();
    for i in 0..n {
        for d in 1..=w {
            let k = (i + d) % n;
            if k != i {
                pairs.insert((i, k));
            }
        }
    }
    pairs.len()
}

/// `pairs.txt` body: one `i k eta` line per pair, sorted by k, then by
/// descending eta.
pub fn format_pairs(pairs: &[ImagePair]) -> String {
    let mut sorted = pairs.to_vec();
    sorted.sort_by(|a, b| a.k.cmp(&b.k).then(b.eta.total_cmp(&a.eta)).then(a.i.cmp(&b.i)));
    sorted.iter().map(|p| format!("{} {} {:.6}\n", p.i, p.k, p.eta)).collect()
}

pub fn parse_pairs(text: &str) -> Result<Vec<ImagePair>, String> {
    let mut out = Vec::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let f: Vec<&str> = line.split_whitespace().collect();
        if f.len() != 3 {
            return Err(format!("pairs line {}: expected `i k eta`", n + 1));
        }
        let bad = |what: &str| format!("pairs line {}: bad {what}", n + 1);
        let i = f[0].parse().map_err(|_| bad("i"))?;
        let k = f[1].parse().map_err(|_| bad("k"))?;
        let eta = f[2].parse().map_err(|_| bad("eta"))?;
        out.push(ImagePair { i, k, eta });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn bv(e: &[(u32, f64)]) -> BowVector {
        BowVector::from_weights(e.iter().copied())
    }

    #[test]
    fn similarity_examples() {
        let a = bv(&[(1, 1.0)]);
        let b = bv(&[(1, 0.5), (2, 0.5)]);
        assert!((similarity(&a, &b) - 0.5).abs() < 1e-15);
        assert_eq!(similarity(&a, &a), 1.0);
        assert_eq!(similarity(&a, &bv(&[(3, 2.0)])), 0.0);
        assert_eq!(similarity(&BowVector::default(), &a), 0.0);
    }

    #[test]
    fn normalized_examples() {
        let tau = 0.03;
        assert!((normalized(0.02, 0.5, tau) - 0.04).abs() < 1e-15);
        assert_eq!(normalized(0.0, 0.5, tau), 0.0);
        let v = bv(&[(1, 1.0), (2, 3.0)]);
        let k = bv(&[(2, 1.0), (5, 1.0)]);
        assert_eq!(normalized_score(&v, &k, &v, tau).unwrap(), 1.0);
        assert!(matches!(normalized_score(&v, &k, &bv(&[(9, 1.0)]), tau), Err(BowError::ZeroReference)));
        assert_eq!(normalized(0.9, 0.001, tau), 1.0 / tau);
    }

    #[test]
    fn reference_rules() {
        let mut db = MatchDatabase::new(SelectorParams::default());
        let v = bv(&[(1, 1.0), (2, 1.0)]);
        db.admit_keyframe(0, bv(&[(1, 1.0)]), 0.0);
        let (i, s) = db.select_reference(&v, 1.0).unwrap();
        assert_eq!((i, s), (0, 0.5));
        assert!(db.select_reference(&v, 2.5).is_none(), "older than t_max");
        db.admit_keyframe(1, bv(&[(1, 0.4), (2, 0.6)]), 0.5);
        assert_eq!(db.select_reference(&v, 1.0).unwrap().0, 1, "argmax similarity");
    }

    #[test]
    fn admission_rules() {
        let mut db = MatchDatabase::new(SelectorParams::default());
        let a = bv(&[(1, 1.0), (2, 1.0)]);
        assert_eq!(db.admit_keyframe(0, a.clone(), 0.0).decision, Decision::Select);
        let adm = db.admit_keyframe(1, a.clone(), 0.25);
        assert_eq!(adm.decision, Decision::Discard);
        assert_eq!(adm.eta, Some(1.0));
        // Disjoint from the last keyframe but similar to nothing recent: forced.
        let adm = db.admit_keyframe(2, bv(&[(7, 1.0)]), 0.5);
        assert_eq!(adm.decision, Decision::Select);
        assert_eq!(adm.reference, None);
        // Disjoint from keyframe 2 but with frame 1 as reference: eta = 0.
        let adm = db.admit_keyframe(3, bv(&[(1, 1.0), (2, 1.0)]), 0.75);
        assert_eq!(adm.reference, Some(1));
        assert_eq!(adm.eta, Some(0.0));
        assert_eq!(adm.decision, Decision::Select);
        let pairs = db.query_pairs(3);
        assert_eq!(pairs.len(), 1);
        assert_eq!((pairs[0].i, pairs[0].k, pairs[0].eta), (0, 3, 1.0));
    }

    #[test]
    fn pair_file_roundtrip() {
        let pairs = vec![ImagePair { i: 0, k: 3, eta: 0.5 }, ImagePair { i: 1, k: 3, eta: 0.75 }, ImagePair { i: 0, k: 1, eta: 0.1 }];
        let text = format_pairs(&pairs);
        assert_eq!(text, "0 1 0.100000\n1 3 0.750000\n0 3 0.500000\n");
        let back = parse_pairs(&text).unwrap();
        assert_eq!(back.len(), 3);
        assert_eq!((back[1].i, back[1].k), (1, 3));
    }

    #[test]
    fn pair_counts() {
        assert_eq!(complete_pair_count(20), 380);
        assert_eq!(complete_pair_count(40), 1560);
        assert_eq!(complete_pair_count(60), 3540);
        assert_eq!(sliding_window_pair_count(60, 5), 300);
        assert_eq!(sliding_window_pair_count(20, 5), 100);
    }
}
