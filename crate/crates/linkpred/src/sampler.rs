//! Edge splits, seeded mini-batch construction, negative sampling, and the
//! four target-exclusion policies.
//!
//! Exclusion removes edges from a batch's *message graph only*: the global
//! graph is never mutated, and an excluded edge remains usable as a
//! prediction target in the same batch. Degrees for the low-degree rule come
//! from the full training graph, not the partially-built batch graph, so the
//! excluded set is deterministic and independent of batch composition.

use std::collections::HashSet;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::graph::{Edge, Graph, GraphError, Subgraph};

#[derive(Debug, Error)]
pub enum SamplerError {
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error("splits are not pairwise disjoint: {0} appears in both {1} and {2}")]
    SplitOverlap(Edge, &'static str, &'static str),
    #[error("negative block file {path}: {message}")]
    NegativeBlocks { path: String, message: String },
    #[error("train split is empty")]
    EmptyTrainSplit,
    #[error("exclusion rate {0} outside [0, 1]")]
    BadRate(f64),
    #[error("degree threshold {0} is negative")]
    BadDelta(f64),
    #[error("negative sampling budget exhausted after {tries} tries ({needed} edges needed); graph is too dense")]
    RejectionBudget { tries: usize, needed: usize },
    #[error("graph is complete: no non-edges exist")]
    CompleteGraph,
}

/// Train / validation / test positive target edges, with optional fixed
/// negatives for validation and test (one block of negatives per positive).
#[derive(Debug, Clone, Default)]
pub struct EdgeSplit {
    pub train: Vec<Edge>,
    pub valid: Vec<Edge>,
    pub test: Vec<Edge>,
    pub valid_neg: Option<Vec<Vec<Edge>>>,
    pub test_neg: Option<Vec<Vec<Edge>>>,
}

impl EdgeSplit {
    /// Validate pairwise disjointness of the three positive sets.
    pub fn new(train: Vec<Edge>, valid: Vec<Edge>, test: Vec<Edge>) -> Result<Self, SamplerError> {
        let pairs: [(&'static str, &[Edge], &'static str, &[Edge]); 3] = [
            ("train", &train, "valid", &valid),
            ("train", &train, "test", &test),
            ("valid", &valid, "test", &test),
        ];
        for (na, a, nb, b) in pairs {
            let set: HashSet<Edge> = a.iter().copied().collect();
            if let Some(e) = b.iter().find(|e| set.contains(e)) {
                return Err(SamplerError::SplitOverlap(*e, na, nb));
            }
        }
        Ok(EdgeSplit { train, valid, test, valid_neg: None, test_neg: None })
    }

    /// Train edges missing from `g`; used to warn when the provided graph
    /// does not actually contain the training targets.
    pub fn missing_train_edges(&self, g: &Graph) -> Vec<Edge> {
        self.train.iter().copied().filter(|e| !g.contains(*e)).collect()
    }
}

/// Which training target edges get dropped from each batch's message graph.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ExclusionPolicy {
    /// Keep every target edge (the common, leak-prone default).
    None,
    /// Drop every target edge in the batch.
    All,
    /// Drop a uniformly random `rate` fraction of the batch's targets.
    Random { rate: f64 },
    /// Drop the targets with at least one endpoint of degree below `delta`.
    LowDegree { delta: f64 },
}

impl ExclusionPolicy {
    pub fn validate(&self) -> Result<(), SamplerError> {
        match *self {
            ExclusionPolicy::Random { rate } if !(0.0..=1.0).contains(&rate) => {
                Err(SamplerError::BadRate(rate))
            }
            ExclusionPolicy::LowDegree { delta } if delta < 0.0 || delta.is_nan() => {
                Err(SamplerError::BadDelta(delta))
            }
            _ => Ok(()),
        }
    }
}

/// One training step's targets plus the induced (post-exclusion) message graph.
#[derive(Debug, Clone)]
pub struct Batch {
    pub positives: Vec<Edge>,
    pub negatives: Vec<Edge>,
    /// k-hop message graph over all target endpoints, with `excluded` dropped.
    pub graph: Subgraph,
    /// Target edges actually removed from the message graph.
    pub excluded: Vec<Edge>,
}

/// `T_low`: the targets whose minimum endpoint degree (in `g`) is below
/// `delta`. Degrees are taken from the full training graph.
///
/// ```
/// use linkpred::graph::{Graph, Edge};
/// use linkpred::sampler::compute_t_low;
///
/// // path 0-1-2-3: degrees 1, 2, 2, 1
/// let g = Graph::from_pairs(4, &[(0, 1), (1, 2), (2, 3)]).unwrap();
/// let targets = [Edge::new(0, 1).unwrap(), Edge::new(1, 2).unwrap()];
/// let low = compute_t_low(&targets, &g, 2.0);
/// assert_eq!(low, vec![Edge::new(0, 1).unwrap()]);
/// ```
pub fn compute_t_low(targets: &[Edge], g: &Graph, delta: f64) -> Vec<Edge> {
    let degrees = g.degree_vec();
    compute_t_low_with_degrees(targets, &degrees, delta)
}

fn compute_t_low_with_degrees(targets: &[Edge], degrees: &[usize], delta: f64) -> Vec<Edge> {
    targets
        .iter()
        .copied()
        .filter(|e| (degrees[e.u()].min(degrees[e.v()]) as f64) < delta)
        .collect()
}

/// Edges to drop from a batch's message graph under `policy`. Runtime is
/// linear in `targets.len()` given the precomputed `degrees`.
pub fn apply_exclusion(
    targets: &[Edge],
    degrees: &[usize],
    policy: ExclusionPolicy,
    rng: &mut impl Rng,
) -> Vec<Edge> {
    apply_exclusion_counted(targets, degrees, policy, rng).0
}

/// Same as [`apply_exclusion`] but also reports the number of per-edge
/// operations performed, for cost-linearity checks.
pub fn apply_exclusion_counted(
    targets: &[Edge],
    degrees: &[usize],
    policy: ExclusionPolicy,
    rng: &mut impl Rng,
) -> (Vec<Edge>, u64) {
    match policy {
        ExclusionPolicy::None => (Vec::new(), 0),
        ExclusionPolicy::All => (targets.to_vec(), targets.len() as u64),
        ExclusionPolicy::Random { rate } => {
            let want = (rate * targets.len() as f64).round() as usize;
            let mut pool: Vec<Edge> = targets.to_vec();
            // partial Fisher-Yates: the first `want` slots are a uniform sample
            let mut ops = 0u64;
            for i in 0..want.min(pool.len()) {
                let j = rng.gen_range(i..pool.len());
                pool.swap(i, j);
                ops += 1;
            }
            pool.truncate(want);
            pool.sort_unstable();
            (pool, ops.max(targets.len() as u64))
        }
        ExclusionPolicy::LowDegree { delta } => {
            let mut ops = 0u64;
            let out = targets
                .iter()
                .copied()
                .filter(|e| {
                    ops += 1;
                    (degrees[e.u()].min(degrees[e.v()]) as f64) < delta
                })
                .collect();
            (out, ops)
        }
    }
}

/// The random-exclusion rate that matches the low-degree rule's volume:
/// `|T_low(train, delta)| / |train|`.
pub fn match_random_rate(g: &Graph, split: &EdgeSplit, delta: f64) -> Result<f64, SamplerError> {
    if split.train.is_empty() {
        return Err(SamplerError::EmptyTrainSplit);
    }
    let low = compute_t_low(&split.train, g, delta);
    Ok(low.len() as f64 / split.train.len() as f64)
}

/// Uniform negatives via rejection sampling: `n_per_pos * positives.len()`
/// node pairs that are neither edges of `g` nor listed in `positives`.
/// Deterministic per RNG state; fails once the rejection budget runs out.
pub fn negative_sample(
    g: &Graph,
    positives: &[Edge],
    n_per_pos: usize,
    rng: &mut impl Rng,
) -> Result<Vec<Edge>, SamplerError> {
    let n = g.num_nodes();
    let needed = n_per_pos * positives.len();
    if needed == 0 {
        return Ok(Vec::new());
    }
    let possible = n * n.saturating_sub(1) / 2;
    if g.num_edges() >= possible {
        return Err(SamplerError::CompleteGraph);
    }
    let forbidden: HashSet<Edge> = positives.iter().copied().collect();
    let budget = 1000 * needed;
    let mut tries = 0usize;
    let mut out = Vec::with_capacity(needed);
    while out.len() < needed {
        if tries >= budget {
            return Err(SamplerError::RejectionBudget { tries, needed });
        }
        tries += 1;
        let a = rng.gen_range(0..n);
        let b = rng.gen_range(0..n);
        if a == b {
            continue;
        }
        let e = Edge::new(a, b).expect("a != b");
        if g.contains(e) || forbidden.contains(&e) {
            continue;
        }
        out.push(e);
    }
    Ok(out)
}

/// Batch construction parameters.
#[derive(Debug, Clone)]
pub struct SamplerConfig {
    pub batch_size: usize,
    pub k_hops: usize,
    pub policy: ExclusionPolicy,
    pub negs_per_pos: usize,
    pub seed: u64,
}

/// Seeded mini-batch sampler over the train split of an [`EdgeSplit`].
///
/// The batch sequence is a pure function of `(seed, epoch, batch index)`:
/// each epoch shuffles the train targets once and partitions them, so every
/// train edge appears in exactly one batch per epoch (the final batch may be
/// short). Negative draws and random exclusion use per-batch derived streams,
/// so batches can be built independently and in any order.
pub struct BatchSampler<'a> {
    graph: &'a Graph,
    train: &'a [Edge],
    degrees: Vec<usize>,
    config: SamplerConfig,
}

/// Mix a base seed with stream labels into an independent RNG seed.
/// splitmix64 finalizer; stable across platforms.
fn derive_seed(base: u64, parts: &[u64]) -> u64 {
    let mut h = base ^ 0x9e37_79b9_7f4a_7c15;
    for &p in parts {
        h ^= p.wrapping_add(0x9e37_79b9_7f4a_7c15).wrapping_add(h << 6).wrapping_add(h >> 2);
        h = splitmix64(h);
    }
    h
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

impl<'a> BatchSampler<'a> {
    pub fn new(graph: &'a Graph, split: &'a EdgeSplit, config: SamplerConfig) -> Result<Self, SamplerError> {
        if split.train.is_empty() {
            return Err(SamplerError::EmptyTrainSplit);
        }
        if config.batch_size == 0 {
            return Err(SamplerError::EmptyTrainSplit);
        }
        config.policy.validate()?;
        Ok(BatchSampler { graph, train: &split.train, degrees: graph.degree_vec(), config })
    }

    pub fn num_batches(&self) -> usize {
        self.train.len().div_ceil(self.config.batch_size)
    }

    pub fn degrees(&self) -> &[usize] {
        &self.degrees
    }

    /// The epoch's shuffled order of train-target indices.
    fn epoch_order(&self, epoch: u64) -> Vec<usize> {
        let mut order: Vec<usize> = (0..self.train.len()).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(self.config.seed, &[0x5e9, epoch]));
        order.shuffle(&mut rng);
        order
    }

    /// Positive targets of batch `index` within `epoch`.
    pub fn batch_positives(&self, epoch: u64, index: usize) -> Vec<Edge> {
        let order = self.epoch_order(epoch);
        let start = index * self.config.batch_size;
        let end = (start + self.config.batch_size).min(order.len());
        assert!(start < order.len(), "batch index {index} out of range");
        order[start..end].iter().map(|&i| self.train[i]).collect()
    }

    /// Build batch `index` of `epoch`, returning the pre-exclusion message
    /// graph alongside the batch (the profile experiments need both).
    pub fn sample_batch_with_pre(
        &self,
        epoch: u64,
        index: usize,
    ) -> Result<(Batch, Subgraph), SamplerError> {
        let positives = self.batch_positives(epoch, index);
        let mut rng =
            ChaCha8Rng::seed_from_u64(derive_seed(self.config.seed, &[0xba7c4, epoch, index as u64]));
        let negatives = negative_sample(self.graph, &positives, self.config.negs_per_pos, &mut rng)?;

        let mut seeds: Vec<usize> = positives
            .iter()
            .chain(negatives.iter())
            .flat_map(|e| [e.u(), e.v()])
            .collect();
        seeds.sort_unstable();
        seeds.dedup();
        let pre = self.graph.khop_from_seeds(&seeds, self.config.k_hops);

        let excluded = apply_exclusion(&positives, &self.degrees, self.config.policy, &mut rng);
        let graph = pre.without_edges(&excluded);
        Ok((Batch { positives, negatives, graph, excluded }, pre))
    }

    /// Build batch `index` of `epoch`.
    pub fn sample_batch(&self, epoch: u64, index: usize) -> Result<Batch, SamplerError> {
        Ok(self.sample_batch_with_pre(epoch, index)?.0)
    }

    /// All batches of an epoch, in order.
    pub fn epoch(&self, epoch: u64) -> impl Iterator<Item = Result<Batch, SamplerError>> + '_ {
        (0..self.num_batches()).map(move |i| self.sample_batch(epoch, i))
    }
}

// Order-preserving: negative blocks are aligned with positives by position,
// so split files must not be re-sorted on load.
fn read_edge_file(path: &Path) -> Result<Vec<Edge>, SamplerError> {
    if !path.exists() {
        return Ok(Vec::new());
    }
    let file = std::fs::File::open(path)?;
    let reader = BufReader::new(file);
    let mut out = Vec::new();
    for (idx, line) in reader.lines().enumerate() {
        let line_no = idx + 1;
        let line = line?;
        let trimmed = line.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        let mut it = trimmed.split_whitespace();
        let parse = |t: Option<&str>| -> Result<usize, GraphError> {
            t.ok_or_else(|| GraphError::Parse {
                line: line_no,
                message: "expected two node ids".into(),
            })?
            .parse()
            .map_err(|e| GraphError::Parse { line: line_no, message: format!("{e}") })
        };
        let a = parse(it.next())?;
        let b = parse(it.next())?;
        out.push(Edge::new(a, b)?);
    }
    Ok(out)
}

fn read_negative_blocks(path: &Path, expected: usize) -> Result<Vec<Vec<Edge>>, SamplerError> {
    let file = std::fs::File::open(path)?;
    let reader = BufReader::new(file);
    let mut blocks: Vec<Vec<Edge>> = Vec::new();
    let mut current: Vec<Edge> = Vec::new();
    let mut saw_any = false;
    for (idx, line) in reader.lines().enumerate() {
        let line = line?;
        let trimmed = line.trim();
        if trimmed.starts_with('#') {
            continue;
        }
        if trimmed.is_empty() {
            if saw_any {
                blocks.push(std::mem::take(&mut current));
                saw_any = false;
            }
            continue;
        }
        let mut it = trimmed.split_whitespace();
        let parse = |t: Option<&str>| -> Result<usize, SamplerError> {
            t.and_then(|t| t.parse().ok()).ok_or_else(|| SamplerError::NegativeBlocks {
                path: path.display().to_string(),
                message: format!("bad pair at line {}", idx + 1),
            })
        };
        let a = parse(it.next())?;
        let b = parse(it.next())?;
        current.push(Edge::new(a, b).map_err(|e| SamplerError::NegativeBlocks {
            path: path.display().to_string(),
            message: e.to_string(),
        })?);
        saw_any = true;
    }
    if saw_any {
        blocks.push(current);
    }
    if blocks.len() != expected {
        return Err(SamplerError::NegativeBlocks {
            path: path.display().to_string(),
            message: format!("{} negative blocks for {} positives", blocks.len(), expected),
        });
    }
    Ok(blocks)
}

/// Load a split directory: `train.tsv`, `valid.tsv`, `test.tsv`, plus
/// optional `valid_neg.tsv` / `test_neg.tsv` holding one blank-line-separated
/// negative block per positive.
pub fn load_split_dir(dir: impl AsRef<Path>) -> Result<EdgeSplit, SamplerError> {
    let dir = dir.as_ref();
    let train = read_edge_file(&dir.join("train.tsv"))?;
    let valid = read_edge_file(&dir.join("valid.tsv"))?;
    let test = read_edge_file(&dir.join("test.tsv"))?;
    let mut split = EdgeSplit::new(train, valid, test)?;
    let vn = dir.join("valid_neg.tsv");
    if vn.exists() {
        split.valid_neg = Some(read_negative_blocks(&vn, split.valid.len())?);
    }
    let tn = dir.join("test_neg.tsv");
    if tn.exists() {
        split.test_neg = Some(read_negative_blocks(&tn, split.test.len())?);
    }
    Ok(split)
}

/// Write a split directory in the format read by [`load_split_dir`].
pub fn save_split_dir(dir: impl AsRef<Path>, split: &EdgeSplit) -> Result<(), SamplerError> {
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir)?;
    let write_edges = |name: &str, edges: &[Edge]| -> std::io::Result<()> {
        let mut f = std::io::BufWriter::new(std::fs::File::create(dir.join(name))?);
        for e in edges {
            writeln!(f, "{}\t{}", e.u(), e.v())?;
        }
        f.flush()
    };
    write_edges("train.tsv", &split.train)?;
    write_edges("valid.tsv", &split.valid)?;
    write_edges("test.tsv", &split.test)?;
    let write_blocks = |name: &str, blocks: &Option<Vec<Vec<Edge>>>| -> std::io::Result<()> {
        if let Some(blocks) = blocks {
            let mut f = std::io::BufWriter::new(std::fs::File::create(dir.join(name))?);
            for (i, block) in blocks.iter().enumerate() {
                if i > 0 {
                    writeln!(f)?;
                }
                for e in block {
                    writeln!(f, "{}\t{}", e.u(), e.v())?;
                }
            }
            f.flush()?;
        }
        Ok(())
    };
    write_blocks("valid_neg.tsv", &split.valid_neg)?;
    write_blocks("test_neg.tsv", &split.test_neg)?;
    Ok(())
}
