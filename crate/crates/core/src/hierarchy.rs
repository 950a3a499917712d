//! Tree-structured degradation labels: level-order flattening, k-means and
//! the per-level construction step.

use alloc::vec;
use alloc::vec::Vec;
use core::cmp::Ordering;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::degrade::derive_seed;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum HierarchyError {
    #[error("path index {index} at level {level} out of range for branching {branching}")]
    PathIndex { level: usize, index: usize, branching: usize },
    #[error("path has {got} levels but the tree only has {max}")]
    TooDeep { got: usize, max: usize },
    #[error("label length {got} does not match the tree ({expected})")]
    LabelLength { expected: usize, got: usize },
    #[error("label is not path-consistent at level {level}")]
    Inconsistent { level: usize },
    #[error("need at least k = {k} points, got {got}")]
    TooFewPoints { k: usize, got: usize },
    #[error("points must be non-empty vectors of equal dimension")]
    BadDimension,
    #[error("invalid k-means configuration: {0}")]
    BadConfig(&'static str),
    #[error("{embeddings} embeddings for {samples} samples")]
    CountMismatch { embeddings: usize, samples: usize },
    #[error("sample {sample} has {got} built levels, expected {expected}")]
    LevelMismatch { sample: usize, expected: usize, got: usize },
}

/// Fixed-shape tree: `levels` levels below the root, each node with
/// `branching` children. Level `i` (1-based) holds `branching^i` nodes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct DegTree {
    pub levels: usize,
    pub branching: usize,
}

impl Default for DegTree {
    fn default() -> Self {
        Self { levels: 4, branching: 2 }
    }
}

impl DegTree {
    pub fn new(levels: usize, branching: usize) -> Self {
        Self { levels, branching }
    }

    pub fn level_size(&self, level: usize) -> usize {
        self.branching.pow(level as u32)
    }

    /// Offset of level `level`'s first node in the flattened vector.
    pub fn level_offset(&self, level: usize) -> usize {
        (1..level).map(|i| self.level_size(i)).sum()
    }

    /// Flattened length, `Σ branching^i`.
    pub fn flat_len(&self) -> usize {
        self.level_offset(self.levels + 1)
    }

    /// `(offset, len)` of each of the first `built` levels.
    pub fn level_slices(&self, built: usize) -> Vec<(usize, usize)> {
        (1..=built.min(self.levels))
            .map(|l| (self.level_offset(l), self.level_size(l)))
            .collect()
    }

    pub fn parent(&self, node: usize) -> usize {
        node / self.branching
    }

    pub fn child(&self, node: usize, index: usize) -> usize {
        node * self.branching + index
    }
}

/// A sample's root-down path: one child index per built level.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
pub struct TreeAssignment {
    pub path: Vec<usize>,
}

impl TreeAssignment {
    pub fn root() -> Self {
        Self::default()
    }

    pub fn built_levels(&self) -> usize {
        self.path.len()
    }

    /// Node index (within its level) reached after `level` steps; `0` is the
    /// root for `level = 0`.
    pub fn node_at(&self, level: usize, tree: &DegTree) -> usize {
        self.path[..level].iter().fold(0, |j, &c| tree.child(j, c))
    }
}

/// Level-order binary membership vector with unbuilt levels zero-filled.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct FlatLabel {
    pub bits: Vec<u8>,
}

pub fn flatten(assignment: &TreeAssignment, tree: &DegTree) -> Result<FlatLabel, HierarchyError> {
    if assignment.path.len() > tree.levels {
        return Err(HierarchyError::TooDeep {
            got: assignment.path.len(),
            max: tree.levels,
        });
    }
    let mut bits = vec![0u8; tree.flat_len()];
    let mut node = 0;
    for (i, &c) in assignment.path.iter().enumerate() {
        if c >= tree.branching {
            return Err(HierarchyError::PathIndex {
                level: i + 1,
                index: c,
                branching: tree.branching,
            });
        }
        node = tree.child(node, c);
        bits[tree.level_offset(i + 1) + node] = 1;
    }
    Ok(FlatLabel { bits })
}

/// Inverse of [`flatten`]; rejects labels that are not path-consistent.
pub fn unflatten(label: &FlatLabel, tree: &DegTree) -> Result<TreeAssignment, HierarchyError> {
    if label.bits.len() != tree.flat_len() {
        return Err(HierarchyError::LabelLength {
            expected: tree.flat_len(),
            got: label.bits.len(),
        });
    }
    let mut path = Vec::new();
    let mut node = 0;
    let mut ended = false;
    for level in 1..=tree.levels {
        let off = tree.level_offset(level);
        let slice = &label.bits[off..off + tree.level_size(level)];
        if slice.iter().any(|&b| b > 1) {
            return Err(HierarchyError::Inconsistent { level });
        }
        let set: Vec<usize> = slice.iter().enumerate().filter(|(_, &b)| b == 1).map(|(j, _)| j).collect();
        match (set.as_slice(), ended) {
            ([], _) => ended = true,
            ([j], false) if tree.parent(*j) == node => {
                path.push(j % tree.branching);
                node = *j;
            }
            _ => return Err(HierarchyError::Inconsistent { level }),
        }
    }
    Ok(TreeAssignment { path })
}

impl FlatLabel {
    /// Number of levels with a set bit, after checking path consistency.
    pub fn built_levels(&self, tree: &DegTree) -> Result<usize, HierarchyError> {
        Ok(unflatten(self, tree)?.built_levels())
    }

    /// Absolute indices of the set bits for the first `built` levels, in
    /// level order (the classification targets).
    pub fn targets(&self, tree: &DegTree, built: usize) -> Result<Vec<usize>, HierarchyError> {
        let a = unflatten(self, tree)?;
        if a.built_levels() < built {
            return Err(HierarchyError::Inconsistent {
                level: a.built_levels() + 1,
            });
        }
        Ok((1..=built)
            .map(|l| tree.level_offset(l) + a.node_at(l, tree))
            .collect())
    }

    pub fn as_f32(&self) -> Vec<f32> {
        self.bits.iter().map(|&b| b as f32).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KMeansConfig {
    pub k: usize,
    pub restarts: usize,
    pub max_iters: usize,
    pub tol: f64,
    pub seed: u64,
    /// Nodes smaller than `branching · ⌈fraction · N⌉` are not split.
    pub min_cluster_fraction: f64,
}

impl Default for KMeansConfig {
    fn default() -> Self {
        Self {
            k: 2,
            restarts: 10,
            max_iters: 100,
            tol: 1e-9,
            seed: 0,
            min_cluster_fraction: 0.05,
        }
    }
}

impl KMeansConfig {
    fn validate(&self) -> Result<(), HierarchyError> {
        if self.k < 2 {
            return Err(HierarchyError::BadConfig("k must be at least 2"));
        }
        if self.restarts < 1 {
            return Err(HierarchyError::BadConfig("restarts must be at least 1"));
        }
        if !(self.tol > 0.0) {
            return Err(HierarchyError::BadConfig("tol must be positive"));
        }
        if !(0.0..1.0).contains(&self.min_cluster_fraction) {
            return Err(HierarchyError::BadConfig("min_cluster_fraction must lie in [0, 1)"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct KMeansResult {
    pub assignments: Vec<usize>,
    /// Sorted lexicographically (first coordinate, then the next).
    pub centroids: Vec<Vec<f64>>,
    pub inertia: f64,
    /// Inertia after each Lloyd iteration of the winning restart.
    pub history: Vec<f64>,
    /// Empty-cluster reseeds in the winning restart.
    pub reseeds: usize,
    pub restart: usize,
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Nearest centroid, ties to the lower index.
fn nearest(p: &[f64], centroids: &[Vec<f64>]) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (j, c) in centroids.iter().enumerate() {
        let d = sq_dist(p, c);
        if d < best.1 {
            best = (j, d);
        }
    }
    best
}

fn plus_plus_seeding(points: &[Vec<f64>], k: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
    let mut centroids = vec![points[rng.random_range(0..points.len())].clone()];
    let mut d2: Vec<f64> = points.iter().map(|p| sq_dist(p, &centroids[0])).collect();
    while centroids.len() < k {
        let total: f64 = d2.iter().sum();
        let idx = if total > 0.0 {
            let mut t = rng.random_range(0.0..total);
            let mut chosen = points.len() - 1;
            for (i, &d) in d2.iter().enumerate() {
                if t < d {
                    chosen = i;
                    break;
                }
                t -= d;
            }
            chosen
        } else {
            rng.random_range(0..points.len())
        };
        let c = points[idx].clone();
        for (d, p) in d2.iter_mut().zip(points) {
            *d = d.min(sq_dist(p, &c));
        }
        centroids.push(c);
    }
    centroids
}

struct Run {
    centroids: Vec<Vec<f64>>,
    inertia: f64,
    history: Vec<f64>,
    reseeds: usize,
}

fn lloyd(points: &[Vec<f64>], cfg: &KMeansConfig, rng: &mut ChaCha8Rng) -> Run {
    let dim = points[0].len();
    let mut centroids = plus_plus_seeding(points, cfg.k, rng);
    let mut assignments = vec![0usize; points.len()];
    let mut dists = vec![0.0; points.len()];
    let mut history = Vec::new();
    let mut reseeds = 0;
    for _ in 0..cfg.max_iters.max(1) {
        for (i, p) in points.iter().enumerate() {
            let (j, d) = nearest(p, &centroids);
            assignments[i] = j;
            dists[i] = d;
        }
        let inertia: f64 = dists.iter().sum();
        let converged = history
            .last()
            .is_some_and(|&prev: &f64| prev - inertia <= cfg.tol * prev.max(f64::MIN_POSITIVE));
        history.push(inertia);
        if converged {
            break;
        }
        let mut sums = vec![vec![0.0; dim]; cfg.k];
        let mut counts = vec![0usize; cfg.k];
        for (p, &a) in points.iter().zip(&assignments) {
            counts[a] += 1;
            for (s, v) in sums[a].iter_mut().zip(p) {
                *s += v;
            }
        }
        for j in 0..cfg.k {
            if counts[j] > 0 {
                centroids[j] = sums[j].iter().map(|s| s / counts[j] as f64).collect();
            } else {
                // reseed at the point farthest from its assigned centroid
                let far = (0..points.len())
                    .max_by(|&a, &b| dists[a].partial_cmp(&dists[b]).unwrap_or(Ordering::Equal).then(b.cmp(&a)))
                    .expect("non-empty");
                centroids[j] = points[far].clone();
                dists[far] = 0.0;
                reseeds += 1;
            }
        }
    }
    let inertia = *history.last().expect("at least one iteration");
    Run {
        centroids,
        inertia,
        history,
        reseeds,
    }
}

fn lex_cmp(a: &[f64], b: &[f64]) -> Ordering {
    for (x, y) in a.iter().zip(b) {
        match x.partial_cmp(y).unwrap_or(Ordering::Equal) {
            Ordering::Equal => continue,
            o => return o,
        }
    }
    Ordering::Equal
}

/// Lloyd's algorithm from k-means++ seeding, best of `restarts` by inertia
/// (ties to the lowest restart), centroids sorted lexicographically.
pub fn kmeans(points: &[Vec<f64>], cfg: &KMeansConfig) -> Result<KMeansResult, HierarchyError> {
    cfg.validate()?;
    let dim = points.first().map_or(0, Vec::len);
    if dim == 0 || points.iter().any(|p| p.len() != dim || p.iter().any(|v| !v.is_finite())) {
        if points.len() < cfg.k && dim != 0 {
            return Err(HierarchyError::TooFewPoints { k: cfg.k, got: points.len() });
        }
        return Err(HierarchyError::BadDimension);
    }
    if points.len() < cfg.k {
        return Err(HierarchyError::TooFewPoints { k: cfg.k, got: points.len() });
    }
    let mut best: Option<(usize, Run)> = None;
    for r in 0..cfg.restarts {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, r as u64));
        let run = lloyd(points, cfg, &mut rng);
        if best.as_ref().is_none_or(|(_, b)| run.inertia < b.inertia) {
            best = Some((r, run));
        }
    }
    let (restart, run) = best.expect("restarts >= 1");
    let mut centroids = run.centroids;
    centroids.sort_by(|a, b| lex_cmp(a, b));
    let mut assignments = vec![0; points.len()];
    let mut inertia = 0.0;
    for (i, p) in points.iter().enumerate() {
        let (j, d) = nearest(p, &centroids);
        assignments[i] = j;
        inertia += d;
    }
    Ok(KMeansResult {
        assignments,
        centroids,
        inertia,
        history: run.history,
        reseeds: run.reseeds,
        restart,
    })
}

/// Extends every sample's path by one level. Members of each node at
/// `level − 1` are split into `branching` clusters of their embeddings;
/// nodes below the early-leaf threshold send all members to child 0.
pub fn build_level(
    embeddings: &[Vec<f64>],
    assignments: &[TreeAssignment],
    level: usize,
    tree: &DegTree,
    cfg: &KMeansConfig,
) -> Result<Vec<TreeAssignment>, HierarchyError> {
    if embeddings.len() != assignments.len() {
        return Err(HierarchyError::CountMismatch {
            embeddings: embeddings.len(),
            samples: assignments.len(),
        });
    }
    if level == 0 || level > tree.levels {
        return Err(HierarchyError::TooDeep { got: level, max: tree.levels });
    }
    for (i, a) in assignments.iter().enumerate() {
        if a.built_levels() != level - 1 {
            return Err(HierarchyError::LevelMismatch {
                sample: i,
                expected: level - 1,
                got: a.built_levels(),
            });
        }
    }
    let n = assignments.len();
    let min_size = (libm::ceil(cfg.min_cluster_fraction * n as f64) as usize).max(1);
    let threshold = tree.branching * min_size;
    let mut out: Vec<TreeAssignment> = assignments.to_vec();
    let parents = tree.level_size(level - 1);
    for node in 0..parents {
        let members: Vec<usize> = (0..n).filter(|&i| assignments[i].node_at(level - 1, tree) == node).collect();
        if members.is_empty() {
            continue;
        }
        if members.len() < threshold {
            for &i in &members {
                out[i].path.push(0);
            }
            continue;
        }
        let pts: Vec<Vec<f64>> = members.iter().map(|&i| embeddings[i].clone()).collect();
        let node_cfg = KMeansConfig {
            k: tree.branching,
            seed: derive_seed(cfg.seed, ((level as u64) << 32) | node as u64),
            ..cfg.clone()
        };
        let res = kmeans(&pts, &node_cfg)?;
        for (&i, &c) in members.iter().zip(&res.assignments) {
            out[i].path.push(c);
        }
    }
    Ok(out)
}
