//! Desk-scale GNN engine: dense-feature GCN and mean-aggregating SAGE with a
//! dot-product decoder, hand-written backprop, plain SGD, and a
//! finite-difference gradient checker.
//!
//! Adjacency stays sparse (CSR gather off the [`Subgraph`]); features and
//! weights are dense `f64`. GCN uses symmetric `1/sqrt(d_u d_v)`
//! normalization with degrees taken from the post-exclusion batch graph, so
//! excluding a target edge really changes message weights. Zero-degree nodes
//! aggregate the zero vector (normalization guards with `max(d, 1)`); SAGE
//! additionally keeps its self term, GCN without self-loops yields the zero
//! embedding for isolated nodes.

use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::graph::{FeatureMatrix, Subgraph};

#[derive(Debug, Error)]
pub enum GnnError {
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("empty input: {0}")]
    EmptyInput(&'static str),
    #[error("pair ({0}, {1}) out of range for {2} embedding rows")]
    PairOutOfRange(usize, usize, usize),
    #[error("non-finite loss {0}")]
    NonFiniteLoss(f64),
    #[error("checkpoint format error: {0}")]
    Checkpoint(String),
}

/// Minimal row-major dense matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Mat {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Mat {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Mat { rows, cols, data: vec![0.0; rows * cols] }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Self {
        assert_eq!(data.len(), rows * cols);
        Mat { rows, cols, data }
    }

    pub fn from_rows(rows: Vec<Vec<f64>>) -> Self {
        let r = rows.len();
        let c = rows.first().map_or(0, |x| x.len());
        let mut data = Vec::with_capacity(r * c);
        for row in &rows {
            assert_eq!(row.len(), c, "ragged rows");
            data.extend_from_slice(row);
        }
        Mat { rows: r, cols: c, data }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Mat::zeros(n, n);
        for i in 0..n {
            m.set(i, i, 1.0);
        }
        m
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.data[i * self.cols + j] = v;
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    /// `self (r x k) * rhs (k x c)`.
    pub fn matmul(&self, rhs: &Mat) -> Mat {
        assert_eq!(self.cols, rhs.rows, "matmul shape");
        let mut out = Mat::zeros(self.rows, rhs.cols);
        for i in 0..self.rows {
            for k in 0..self.cols {
                let a = self.get(i, k);
                if a == 0.0 {
                    continue;
                }
                let rrow = rhs.row(k);
                let orow = out.row_mut(i);
                for (o, &b) in orow.iter_mut().zip(rrow.iter()) {
                    *o += a * b;
                }
            }
        }
        out
    }

    /// `self^T (k x r) * rhs (r x c)`; `self` is `r x k`.
    pub fn matmul_at_b(&self, rhs: &Mat) -> Mat {
        assert_eq!(self.rows, rhs.rows, "matmul_at_b shape");
        let mut out = Mat::zeros(self.cols, rhs.cols);
        for i in 0..self.rows {
            let arow = self.row(i);
            let brow = rhs.row(i);
            for (k, &a) in arow.iter().enumerate() {
                if a == 0.0 {
                    continue;
                }
                let orow = out.row_mut(k);
                for (o, &b) in orow.iter_mut().zip(brow.iter()) {
                    *o += a * b;
                }
            }
        }
        out
    }

    /// `self (r x k) * rhs^T (k x c)`; `rhs` is `c x k`.
    pub fn matmul_a_bt(&self, rhs: &Mat) -> Mat {
        assert_eq!(self.cols, rhs.cols, "matmul_a_bt shape");
        let mut out = Mat::zeros(self.rows, rhs.rows);
        for i in 0..self.rows {
            let arow = self.row(i);
            for j in 0..rhs.rows {
                let brow = rhs.row(j);
                let mut acc = 0.0;
                for (a, b) in arow.iter().zip(brow.iter()) {
                    acc += a * b;
                }
                out.set(i, j, acc);
            }
        }
        out
    }

    pub fn add_scaled(&mut self, other: &Mat, s: f64) {
        assert_eq!(self.data.len(), other.data.len());
        for (a, b) in self.data.iter_mut().zip(other.data.iter()) {
            *a += s * b;
        }
    }

    pub fn scale(&mut self, s: f64) {
        for a in &mut self.data {
            *a *= s;
        }
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, x| m.max(x.abs()))
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    fn from_features(x: &FeatureMatrix) -> Mat {
        let mut m = Mat::zeros(x.num_rows(), x.dim());
        for i in 0..x.num_rows() {
            m.row_mut(i).copy_from_slice(x.row(i));
        }
        m
    }
}

/// Node embeddings: one row per local node of the subgraph they were
/// computed on.
pub type Embeddings = Mat;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Arch {
    Gcn,
    Sage,
}

impl Arch {
    pub fn name(&self) -> &'static str {
        match self {
            Arch::Gcn => "gcn",
            Arch::Sage => "sage",
        }
    }

    pub fn parse(s: &str) -> Option<Arch> {
        match s.to_ascii_lowercase().as_str() {
            "gcn" => Some(Arch::Gcn),
            "sage" => Some(Arch::Sage),
            _ => None,
        }
    }
}

/// Between-layer nonlinearity. The layer after the last weight never applies
/// an activation; the decoder sees raw embeddings.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Relu,
    Identity,
}

impl Activation {
    pub fn name(&self) -> &'static str {
        match self {
            Activation::Relu => "relu",
            Activation::Identity => "identity",
        }
    }

    pub fn parse(s: &str) -> Option<Activation> {
        match s.to_ascii_lowercase().as_str() {
            "relu" => Some(Activation::Relu),
            "identity" | "linear" | "none" => Some(Activation::Identity),
            _ => None,
        }
    }
}

/// One layer's weights. GCN uses `w` only; SAGE combines a self path
/// (`w_self`) with the neighbor-mean path (`w`).
#[derive(Debug, Clone, PartialEq)]
pub struct LayerParams {
    pub w: Mat,
    pub w_self: Option<Mat>,
}

/// Full model: architecture tag, activation, virtual-self-loop flag, and the
/// per-layer weight matrices.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub arch: Arch,
    pub activation: Activation,
    pub add_self_loops: bool,
    pub layers: Vec<LayerParams>,
}

impl ModelParams {
    /// Seeded init with weights uniform in `[-1/sqrt(fan_in), 1/sqrt(fan_in)]`.
    /// `dims` is the dimension chain `[in, hidden .., out]` (so `dims.len() - 1`
    /// layers).
    pub fn init(
        arch: Arch,
        dims: &[usize],
        add_self_loops: bool,
        activation: Activation,
        seed: u64,
    ) -> ModelParams {
        assert!(dims.len() >= 2, "need at least one layer");
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut rand_mat = |r: usize, c: usize| {
            let bound = 1.0 / (r as f64).sqrt();
            let data = (0..r * c).map(|_| rng.gen_range(-bound..bound)).collect();
            Mat::from_vec(r, c, data)
        };
        let layers = dims
            .windows(2)
            .map(|d| LayerParams {
                w: rand_mat(d[0], d[1]),
                w_self: match arch {
                    Arch::Gcn => None,
                    Arch::Sage => Some(rand_mat(d[0], d[1])),
                },
            })
            .collect();
        ModelParams { arch, activation, add_self_loops, layers }
    }

    pub fn num_layers(&self) -> usize {
        self.layers.len()
    }

    /// `[in, hidden .., out]` dimension chain.
    pub fn dims(&self) -> Vec<usize> {
        let mut d: Vec<usize> = self.layers.iter().map(|l| l.w.rows()).collect();
        d.push(self.layers.last().map_or(0, |l| l.w.cols()));
        d
    }

    pub fn validate(&self) -> Result<(), GnnError> {
        if self.layers.is_empty() {
            return Err(GnnError::EmptyInput("model has no layers"));
        }
        for (i, pair) in self.layers.windows(2).enumerate() {
            if pair[0].w.cols() != pair[1].w.rows() {
                return Err(GnnError::DimensionMismatch(format!(
                    "layer {} out dim {} != layer {} in dim {}",
                    i,
                    pair[0].w.cols(),
                    i + 1,
                    pair[1].w.rows()
                )));
            }
        }
        for (i, l) in self.layers.iter().enumerate() {
            match (self.arch, &l.w_self) {
                (Arch::Sage, Some(ws)) => {
                    if ws.rows() != l.w.rows() || ws.cols() != l.w.cols() {
                        return Err(GnnError::DimensionMismatch(format!(
                            "layer {i} self weights shape mismatch"
                        )));
                    }
                }
                (Arch::Sage, None) => {
                    return Err(GnnError::DimensionMismatch(format!(
                        "sage layer {i} missing self weights"
                    )))
                }
                (Arch::Gcn, Some(_)) => {
                    return Err(GnnError::DimensionMismatch(format!(
                        "gcn layer {i} has unexpected self weights"
                    )))
                }
                (Arch::Gcn, None) => {}
            }
        }
        Ok(())
    }

    /// Zero-valued gradient container with this model's shapes.
    pub fn zeros_like(&self) -> ModelGrads {
        ModelGrads {
            layers: self
                .layers
                .iter()
                .map(|l| LayerParams {
                    w: Mat::zeros(l.w.rows(), l.w.cols()),
                    w_self: l.w_self.as_ref().map(|m| Mat::zeros(m.rows(), m.cols())),
                })
                .collect(),
        }
    }
}

/// Per-layer gradients, same shapes as the model.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelGrads {
    pub layers: Vec<LayerParams>,
}

impl ModelGrads {
    pub fn is_finite(&self) -> bool {
        self.layers
            .iter()
            .all(|l| l.w.is_finite() && l.w_self.as_ref().is_none_or(|m| m.is_finite()))
    }
}

// Effective aggregation degree: structural degree plus the virtual self-loop.
fn hat_degree(sub: &Subgraph, u: usize, self_loops: bool) -> f64 {
    (sub.degree(u) + usize::from(self_loops)) as f64
}

/// Symmetric-normalized aggregation `out[u] = sum_v h[v] / sqrt(d_u d_v)`
/// over subgraph edges (plus `h[u]/d_u` for the virtual self-loop).
/// Zero-degree guard: denominators use `max(d, 1)`.
fn aggregate_gcn(sub: &Subgraph, h: &Mat, self_loops: bool) -> Mat {
    let n = sub.num_nodes();
    let mut out = Mat::zeros(n, h.cols());
    let inv_sqrt: Vec<f64> =
        (0..n).map(|u| 1.0 / hat_degree(sub, u, self_loops).max(1.0).sqrt()).collect();
    for u in 0..n {
        let cu = inv_sqrt[u];
        for &v in sub.neighbors(u) {
            let coef = cu * inv_sqrt[v];
            let src = h.row(v);
            let dst = out.row_mut(u);
            for (o, &x) in dst.iter_mut().zip(src.iter()) {
                *o += coef * x;
            }
        }
        if self_loops {
            let coef = cu * cu;
            let src = h.row(u);
            let dst = out.row_mut(u);
            for (o, &x) in dst.iter_mut().zip(src.iter()) {
                *o += coef * x;
            }
        }
    }
    out
}

/// Row-mean aggregation `out[u] = mean_{v in N(u)} h[v]` (self included when
/// `self_loops`). Zero-neighbor rows aggregate the zero vector.
fn aggregate_mean(sub: &Subgraph, h: &Mat, self_loops: bool) -> Mat {
    let n = sub.num_nodes();
    let mut out = Mat::zeros(n, h.cols());
    for u in 0..n {
        let d = hat_degree(sub, u, self_loops);
        if d == 0.0 {
            continue;
        }
        let inv = 1.0 / d;
        for &v in sub.neighbors(u) {
            let src = h.row(v);
            let dst = out.row_mut(u);
            for (o, &x) in dst.iter_mut().zip(src.iter()) {
                *o += inv * x;
            }
        }
        if self_loops {
            let src = h.row(u);
            let dst = out.row_mut(u);
            for (o, &x) in dst.iter_mut().zip(src.iter()) {
                *o += inv * x;
            }
        }
    }
    out
}

/// Transpose of [`aggregate_mean`]: `out[v] = sum_{u in N(v)} h[u] / d_u`.
/// Needed by backprop because the mean operator is not symmetric.
fn aggregate_mean_transpose(sub: &Subgraph, h: &Mat, self_loops: bool) -> Mat {
    let n = sub.num_nodes();
    let mut out = Mat::zeros(n, h.cols());
    let inv_d: Vec<f64> = (0..n)
        .map(|u| {
            let d = hat_degree(sub, u, self_loops);
            if d == 0.0 {
                0.0
            } else {
                1.0 / d
            }
        })
        .collect();
    for v in 0..n {
        for &u in sub.neighbors(v) {
            let coef = inv_d[u];
            let src = h.row(u);
            let dst = out.row_mut(v);
            for (o, &x) in dst.iter_mut().zip(src.iter()) {
                *o += coef * x;
            }
        }
        if self_loops {
            let coef = inv_d[v];
            let src = h.row(v);
            let dst = out.row_mut(v);
            for (o, &x) in dst.iter_mut().zip(src.iter()) {
                *o += coef * x;
            }
        }
    }
    out
}

struct ForwardCache {
    /// Layer inputs H^0 .. H^{L-1}.
    inputs: Vec<Mat>,
    /// Aggregated neighbor features per layer.
    aggregated: Vec<Mat>,
    /// Pre-activations per layer.
    pre: Vec<Mat>,
}

fn forward_cached(
    sub: &Subgraph,
    x: &Mat,
    params: &ModelParams,
) -> Result<(Embeddings, ForwardCache), GnnError> {
    params.validate()?;
    if x.rows() != sub.num_nodes() {
        return Err(GnnError::DimensionMismatch(format!(
            "{} feature rows for {} subgraph nodes",
            x.rows(),
            sub.num_nodes()
        )));
    }
    if x.cols() != params.layers[0].w.rows() {
        return Err(GnnError::DimensionMismatch(format!(
            "feature dim {} != layer 0 in dim {}",
            x.cols(),
            params.layers[0].w.rows()
        )));
    }
    let last = params.layers.len() - 1;
    let mut h = x.clone();
    let mut cache =
        ForwardCache { inputs: Vec::new(), aggregated: Vec::new(), pre: Vec::new() };
    for (idx, layer) in params.layers.iter().enumerate() {
        let agg = match params.arch {
            Arch::Gcn => aggregate_gcn(sub, &h, params.add_self_loops),
            Arch::Sage => aggregate_mean(sub, &h, params.add_self_loops),
        };
        let mut z = agg.matmul(&layer.w);
        if let Some(ws) = &layer.w_self {
            z.add_scaled(&h.matmul(ws), 1.0);
        }
        cache.inputs.push(h);
        cache.aggregated.push(agg);
        let out = if idx < last && params.activation == Activation::Relu {
            let mut a = z.clone();
            for v in a.data_mut() {
                if *v < 0.0 {
                    *v = 0.0;
                }
            }
            a
        } else {
            z.clone()
        };
        cache.pre.push(z);
        h = out;
    }
    Ok((h, cache))
}

/// Run the model over a (post-exclusion) subgraph. `x` holds one feature row
/// per *local* node.
pub fn gnn_forward(
    sub: &Subgraph,
    x: &FeatureMatrix,
    params: &ModelParams,
) -> Result<Embeddings, GnnError> {
    Ok(forward_cached(sub, &Mat::from_features(x), params)?.0)
}

fn backward(
    sub: &Subgraph,
    params: &ModelParams,
    cache: &ForwardCache,
    d_out: Mat,
) -> ModelGrads {
    let last = params.layers.len() - 1;
    let mut grads = params.zeros_like();
    let mut g = d_out;
    for idx in (0..params.layers.len()).rev() {
        // gradient through the activation (last layer has none)
        if idx < last && params.activation == Activation::Relu {
            let z = &cache.pre[idx];
            for (gv, zv) in g.data_mut().iter_mut().zip(z.data().iter()) {
                if *zv <= 0.0 {
                    *gv = 0.0;
                }
            }
        }
        let layer = &params.layers[idx];
        let agg = &cache.aggregated[idx];
        let input = &cache.inputs[idx];
        grads.layers[idx].w = agg.matmul_at_b(&g);
        let d_agg = g.matmul_a_bt(&layer.w);
        let mut g_prev = match params.arch {
            Arch::Gcn => aggregate_gcn(sub, &d_agg, params.add_self_loops),
            Arch::Sage => aggregate_mean_transpose(sub, &d_agg, params.add_self_loops),
        };
        if let Some(ws) = &layer.w_self {
            grads.layers[idx].w_self = Some(input.matmul_at_b(&g));
            g_prev.add_scaled(&g.matmul_a_bt(ws), 1.0);
        }
        g = g_prev;
    }
    grads
}

/// Dot-product link scores for pairs of local embedding rows.
pub fn dot_decoder(e: &Embeddings, pairs: &[(usize, usize)]) -> Result<Vec<f64>, GnnError> {
    pairs
        .iter()
        .map(|&(a, b)| {
            if a >= e.rows() || b >= e.rows() {
                return Err(GnnError::PairOutOfRange(a, b, e.rows()));
            }
            Ok(e.row(a).iter().zip(e.row(b).iter()).map(|(x, y)| x * y).sum())
        })
        .collect()
}

fn decoder_backward(e: &Embeddings, pairs: &[(usize, usize)], d_scores: &[f64]) -> Mat {
    let mut d_e = Mat::zeros(e.rows(), e.cols());
    for (&(a, b), &ds) in pairs.iter().zip(d_scores.iter()) {
        let (ra, rb): (Vec<f64>, Vec<f64>) = (e.row(a).to_vec(), e.row(b).to_vec());
        for (o, x) in d_e.row_mut(a).iter_mut().zip(rb.iter()) {
            *o += ds * x;
        }
        for (o, x) in d_e.row_mut(b).iter_mut().zip(ra.iter()) {
            *o += ds * x;
        }
    }
    d_e
}

/// Mean sigmoid cross-entropy over logits, with the per-element gradient
/// `sigma(s) - y`. (The gradient of the *mean* is this divided by `n`.)
///
/// Numerically stable: `loss = max(s, 0) - s*y + ln(1 + exp(-|s|))`.
pub fn bce_logit_loss(scores: &[f64], labels: &[f64]) -> Result<(f64, Vec<f64>), GnnError> {
    if scores.is_empty() {
        return Err(GnnError::EmptyInput("bce over empty scores"));
    }
    if scores.len() != labels.len() {
        return Err(GnnError::DimensionMismatch(format!(
            "{} scores vs {} labels",
            scores.len(),
            labels.len()
        )));
    }
    let mut total = 0.0;
    let mut grad = Vec::with_capacity(scores.len());
    for (&s, &y) in scores.iter().zip(labels.iter()) {
        total += s.max(0.0) - s * y + (-s.abs()).exp().ln_1p();
        let sig = 1.0 / (1.0 + (-s).exp());
        grad.push(sig - y);
    }
    Ok((total / scores.len() as f64, grad))
}

/// Plain gradient descent with optional momentum. Updates are strictly
/// sequential; the velocity buffer is lazily shaped on first use.
#[derive(Debug, Clone)]
pub struct Sgd {
    pub lr: f64,
    pub momentum: f64,
    velocity: Option<ModelGrads>,
}

impl Sgd {
    pub fn new(lr: f64, momentum: f64) -> Self {
        Sgd { lr, momentum, velocity: None }
    }

    pub fn step(&mut self, params: &mut ModelParams, grads: &ModelGrads) {
        if self.momentum == 0.0 {
            for (p, g) in params.layers.iter_mut().zip(grads.layers.iter()) {
                p.w.add_scaled(&g.w, -self.lr);
                if let (Some(pw), Some(gw)) = (&mut p.w_self, &g.w_self) {
                    pw.add_scaled(gw, -self.lr);
                }
            }
            return;
        }
        let vel = self.velocity.get_or_insert_with(|| params.zeros_like());
        for ((p, g), v) in
            params.layers.iter_mut().zip(grads.layers.iter()).zip(vel.layers.iter_mut())
        {
            v.w.scale(self.momentum);
            v.w.add_scaled(&g.w, 1.0);
            p.w.add_scaled(&v.w, -self.lr);
            if let (Some(pw), Some(gw), Some(vw)) = (&mut p.w_self, &g.w_self, &mut v.w_self) {
                vw.scale(self.momentum);
                vw.add_scaled(gw, 1.0);
                pw.add_scaled(vw, -self.lr);
            }
        }
    }
}

/// Loss and analytic gradients of the mean BCE over the given local target
/// pairs, evaluated on `sub` with per-local-node features `x`.
fn loss_and_grads(
    sub: &Subgraph,
    x: &Mat,
    params: &ModelParams,
    pairs: &[(usize, usize)],
    labels: &[f64],
) -> Result<(f64, ModelGrads), GnnError> {
    let (emb, cache) = forward_cached(sub, x, params)?;
    let scores = dot_decoder(&emb, pairs)?;
    let (loss, grad_elems) = bce_logit_loss(&scores, labels)?;
    let n = scores.len() as f64;
    let d_scores: Vec<f64> = grad_elems.iter().map(|g| g / n).collect();
    let d_emb = decoder_backward(&emb, pairs, &d_scores);
    Ok((loss, backward(sub, params, &cache, d_emb)))
}

fn loss_only(
    sub: &Subgraph,
    x: &Mat,
    params: &ModelParams,
    pairs: &[(usize, usize)],
    labels: &[f64],
) -> Result<f64, GnnError> {
    let (emb, _) = forward_cached(sub, x, params)?;
    let scores = dot_decoder(&emb, pairs)?;
    Ok(bce_logit_loss(&scores, labels)?.0)
}

/// One supervised step on a batch: full backprop through the decoder and all
/// layers on the batch's post-exclusion message graph, then an SGD update.
/// `features` holds *global* feature rows; the subgraph's node map selects
/// the local slice. Returns the batch loss.
pub fn train_step(
    batch: &crate::sampler::Batch,
    features: &FeatureMatrix,
    params: &mut ModelParams,
    opt: &mut Sgd,
) -> Result<f64, GnnError> {
    let x = Mat::from_features(&features.gather(batch.graph.node_map()));
    let mut pairs = Vec::with_capacity(batch.positives.len() + batch.negatives.len());
    let mut labels = Vec::with_capacity(pairs.capacity());
    for e in &batch.positives {
        let a = batch.graph.local_id(e.u()).expect("positive endpoint in message graph");
        let b = batch.graph.local_id(e.v()).expect("positive endpoint in message graph");
        pairs.push((a, b));
        labels.push(1.0);
    }
    for e in &batch.negatives {
        let a = batch.graph.local_id(e.u()).expect("negative endpoint in message graph");
        let b = batch.graph.local_id(e.v()).expect("negative endpoint in message graph");
        pairs.push((a, b));
        labels.push(0.0);
    }
    let (loss, grads) = loss_and_grads(&batch.graph, &x, params, &pairs, &labels)?;
    if !loss.is_finite() || !grads.is_finite() {
        return Err(GnnError::NonFiniteLoss(loss));
    }
    opt.step(params, &grads);
    Ok(loss)
}

/// Gradient-check outcome. `kink_risk` flags cases where some ReLU
/// pre-activation sits within the finite-difference step of zero, making the
/// numeric derivative unreliable there.
#[derive(Debug, Clone, Copy)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub kink_risk: bool,
}

/// Central finite differences on every weight entry against the analytic
/// backprop gradient of the mean BCE loss. Returns the max relative error
/// `|a - n| / max(|a|, |n|, 1e-8)`.
pub fn grad_check(
    params: &ModelParams,
    sub: &Subgraph,
    x: &FeatureMatrix,
    pairs: &[(usize, usize)],
    labels: &[f64],
    epsilon: f64,
) -> Result<GradCheckReport, GnnError> {
    assert!((1e-6..=1e-3).contains(&epsilon), "epsilon outside [1e-6, 1e-3]");
    let x = Mat::from_features(x);
    let (_, analytic) = loss_and_grads(sub, &x, params, pairs, labels)?;

    // A perturbation of one weight entry by eps moves pre-activations by at
    // most eps * max|input|; pre-activations closer to zero than that can
    // cross the ReLU kink during the probe.
    let mut kink_risk = false;
    if params.activation == Activation::Relu && params.num_layers() > 1 {
        let (_, cache) = forward_cached(sub, &x, params)?;
        let input_scale =
            cache.inputs.iter().chain(cache.aggregated.iter()).fold(1.0_f64, |m, h| {
                m.max(h.max_abs())
            });
        let margin = 4.0 * epsilon * input_scale.max(1.0);
        for z in &cache.pre[..params.num_layers() - 1] {
            if z.data().iter().any(|v| v.abs() < margin) {
                kink_risk = true;
            }
        }
    }

    let mut work = params.clone();
    let mut max_rel = 0.0_f64;
    for li in 0..params.layers.len() {
        let mats: Vec<bool> = match params.layers[li].w_self {
            Some(_) => vec![false, true],
            None => vec![false],
        };
        for is_self in mats {
            let (rows, cols) = {
                let m = if is_self {
                    params.layers[li].w_self.as_ref().unwrap()
                } else {
                    &params.layers[li].w
                };
                (m.rows(), m.cols())
            };
            for i in 0..rows {
                for j in 0..cols {
                    let orig = {
                        let m = if is_self {
                            work.layers[li].w_self.as_ref().unwrap()
                        } else {
                            &work.layers[li].w
                        };
                        m.get(i, j)
                    };
                    let mut set = |v: f64, w: &mut ModelParams| {
                        let m = if is_self {
                            w.layers[li].w_self.as_mut().unwrap()
                        } else {
                            &mut w.layers[li].w
                        };
                        m.set(i, j, v);
                    };
                    set(orig + epsilon, &mut work);
                    let up = loss_only(sub, &x, &work, pairs, labels)?;
                    set(orig - epsilon, &mut work);
                    let down = loss_only(sub, &x, &work, pairs, labels)?;
                    set(orig, &mut work);
                    let numeric = (up - down) / (2.0 * epsilon);
                    let a = if is_self {
                        analytic.layers[li].w_self.as_ref().unwrap().get(i, j)
                    } else {
                        analytic.layers[li].w.get(i, j)
                    };
                    let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-8);
                    max_rel = max_rel.max(rel);
                }
            }
        }
    }
    Ok(GradCheckReport { max_rel_error: max_rel, kink_risk })
}

fn fmt_f64_hex(x: f64) -> String {
    format!("{:016x}", x.to_bits())
}

fn parse_f64_hex(tok: &str) -> Result<f64, GnnError> {
    u64::from_str_radix(tok, 16)
        .map(f64::from_bits)
        .map_err(|e| GnnError::Checkpoint(format!("bad hex float {tok:?}: {e}")))
}

/// Save a checkpoint. Text format, one matrix block per weight, `f64` values
/// as big-endian hex bit patterns so round trips are bit-exact:
///
/// ```text
/// linkpred-model v1
/// arch <gcn|sage>
/// activation <relu|identity>
/// self_loops <true|false>
/// layers <count>
/// mat <layer> <w|w_self> <rows> <cols>
/// <rows*cols hex tokens, row-major, one row per line>
/// ...
/// end
/// ```
pub fn save_checkpoint(path: impl AsRef<Path>, params: &ModelParams) -> Result<(), GnnError> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(f, "linkpred-model v1")?;
    writeln!(f, "arch {}", params.arch.name())?;
    writeln!(f, "activation {}", params.activation.name())?;
    writeln!(f, "self_loops {}", params.add_self_loops)?;
    writeln!(f, "layers {}", params.layers.len())?;
    let mut write_mat = |f: &mut std::io::BufWriter<std::fs::File>,
                         li: usize,
                         tag: &str,
                         m: &Mat|
     -> std::io::Result<()> {
        writeln!(f, "mat {li} {tag} {} {}", m.rows(), m.cols())?;
        for i in 0..m.rows() {
            let row: Vec<String> = m.row(i).iter().map(|x| fmt_f64_hex(*x)).collect();
            writeln!(f, "{}", row.join(" "))?;
        }
        Ok(())
    };
    for (li, layer) in params.layers.iter().enumerate() {
        write_mat(&mut f, li, "w", &layer.w)?;
        if let Some(ws) = &layer.w_self {
            write_mat(&mut f, li, "w_self", ws)?;
        }
    }
    writeln!(f, "end")?;
    f.flush()?;
    Ok(())
}

/// Load a checkpoint written by [`save_checkpoint`].
pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<ModelParams, GnnError> {
    let f = std::fs::File::open(path)?;
    let mut lines = BufReader::new(f).lines();
    let mut next = || -> Result<String, GnnError> {
        lines
            .next()
            .ok_or_else(|| GnnError::Checkpoint("unexpected end of file".into()))?
            .map_err(GnnError::Io)
    };
    let header = next()?;
    if header.trim() != "linkpred-model v1" {
        return Err(GnnError::Checkpoint(format!("unknown header {header:?}")));
    }
    let field = |line: String, key: &str| -> Result<String, GnnError> {
        line.strip_prefix(key)
            .map(|s| s.trim().to_string())
            .ok_or_else(|| GnnError::Checkpoint(format!("expected `{key}`, got {line:?}")))
    };
    let arch = Arch::parse(&field(next()?, "arch")?)
        .ok_or_else(|| GnnError::Checkpoint("bad arch".into()))?;
    let activation = Activation::parse(&field(next()?, "activation")?)
        .ok_or_else(|| GnnError::Checkpoint("bad activation".into()))?;
    let self_loops = field(next()?, "self_loops")?
        .parse::<bool>()
        .map_err(|e| GnnError::Checkpoint(format!("bad self_loops: {e}")))?;
    let n_layers = field(next()?, "layers")?
        .parse::<usize>()
        .map_err(|e| GnnError::Checkpoint(format!("bad layer count: {e}")))?;

    let mut layers: Vec<LayerParams> = Vec::with_capacity(n_layers);
    loop {
        let line = next()?;
        let line = line.trim();
        if line == "end" {
            break;
        }
        let parts: Vec<&str> = line.split_whitespace().collect();
        if parts.len() != 5 || parts[0] != "mat" {
            return Err(GnnError::Checkpoint(format!("expected mat header, got {line:?}")));
        }
        let li: usize =
            parts[1].parse().map_err(|e| GnnError::Checkpoint(format!("bad layer: {e}")))?;
        let tag = parts[2];
        let rows: usize =
            parts[3].parse().map_err(|e| GnnError::Checkpoint(format!("bad rows: {e}")))?;
        let cols: usize =
            parts[4].parse().map_err(|e| GnnError::Checkpoint(format!("bad cols: {e}")))?;
        let mut data = Vec::with_capacity(rows * cols);
        for _ in 0..rows {
            let row = next()?;
            for tok in row.split_whitespace() {
                data.push(parse_f64_hex(tok)?);
            }
        }
        if data.len() != rows * cols {
            return Err(GnnError::Checkpoint(format!(
                "matrix {li}/{tag}: expected {} values, got {}",
                rows * cols,
                data.len()
            )));
        }
        let m = Mat::from_vec(rows, cols, data);
        match tag {
            "w" => {
                if li != layers.len() {
                    return Err(GnnError::Checkpoint(format!("layer {li} out of order")));
                }
                layers.push(LayerParams { w: m, w_self: None });
            }
            "w_self" => {
                let layer = layers
                    .get_mut(li)
                    .ok_or_else(|| GnnError::Checkpoint(format!("w_self before w for {li}")))?;
                layer.w_self = Some(m);
            }
            other => return Err(GnnError::Checkpoint(format!("unknown matrix tag {other:?}"))),
        }
    }
    if layers.len() != n_layers {
        return Err(GnnError::Checkpoint(format!(
            "expected {n_layers} layers, found {}",
            layers.len()
        )));
    }
    let params = ModelParams { arch, activation, add_self_loops: self_loops, layers };
    params.validate()?;
    Ok(params)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{Edge, FeatureMatrix, Graph};
    use crate::sampler::Batch;

    fn whole(g: &Graph) -> Subgraph {
        Subgraph::whole(g)
    }

    fn gcn_identity(dims: &[usize], self_loops: bool) -> ModelParams {
        let layers = dims
            .windows(2)
            .map(|d| {
                assert_eq!(d[0], d[1]);
                LayerParams { w: Mat::identity(d[0]), w_self: None }
            })
            .collect();
        ModelParams { arch: Arch::Gcn, activation: Activation::Relu, add_self_loops: self_loops, layers }
    }

    #[test]
    fn gcn_neighbor_exchange_hand_case() {
        // two nodes, one edge, W = I, no self-loops: pure swap, norm 1
        let g = Graph::from_pairs(2, &[(0, 1)]).unwrap();
        let x = FeatureMatrix::from_rows(vec![vec![1.0, 0.0], vec![0.0, 1.0]]);
        let params = gcn_identity(&[2, 2], false);
        let emb = gnn_forward(&whole(&g), &x, &params).unwrap();
        assert_eq!(emb.row(0), &[0.0, 1.0]);
        assert_eq!(emb.row(1), &[1.0, 0.0]);
    }

    #[test]
    fn isolated_node_embeddings() {
        let g = Graph::from_pairs(3, &[(0, 1)]).unwrap();
        let x = FeatureMatrix::from_rows(vec![
            vec![1.0, 2.0],
            vec![3.0, 4.0],
            vec![5.0, 6.0],
        ]);
        // no self-loops: isolated node aggregates nothing
        let params = gcn_identity(&[2, 2], false);
        let emb = gnn_forward(&whole(&g), &x, &params).unwrap();
        assert_eq!(emb.row(2), &[0.0, 0.0]);
        // with virtual self-loops the isolated node keeps its own row
        let params = gcn_identity(&[2, 2], true);
        let emb = gnn_forward(&whole(&g), &x, &params).unwrap();
        assert_eq!(emb.row(2), &[5.0, 6.0]);
    }

    #[test]
    fn sage_self_term_survives_isolation() {
        let g = Graph::from_pairs(3, &[(0, 1)]).unwrap();
        let x = FeatureMatrix::from_rows(vec![vec![1.0], vec![2.0], vec![4.0]]);
        let params = ModelParams {
            arch: Arch::Sage,
            activation: Activation::Relu,
            add_self_loops: false,
            layers: vec![LayerParams {
                w: Mat::from_vec(1, 1, vec![10.0]),
                w_self: Some(Mat::from_vec(1, 1, vec![1.0])),
            }],
        };
        let emb = gnn_forward(&whole(&g), &x, &params).unwrap();
        assert_eq!(emb.get(2, 0), 4.0); // self path only
        assert_eq!(emb.get(0, 0), 1.0 + 20.0); // self + mean of {2.0} * 10
    }

    #[test]
    fn dot_decoder_hand_cases() {
        let e = Mat::from_rows(vec![vec![1.0, 2.0], vec![3.0, 4.0], vec![0.0, 1.0]]);
        let scores = dot_decoder(&e, &[(0, 1), (2, 2)]).unwrap();
        assert_eq!(scores, vec![11.0, 1.0]);
        let ortho = Mat::from_rows(vec![vec![1.0, 0.0], vec![0.0, 5.0]]);
        assert_eq!(dot_decoder(&ortho, &[(0, 1)]).unwrap(), vec![0.0]);
        assert!(dot_decoder(&e, &[(0, 9)]).is_err());
    }

    #[test]
    fn bce_hand_cases() {
        let (loss, grad) = bce_logit_loss(&[0.0], &[1.0]).unwrap();
        assert!((loss - std::f64::consts::LN_2).abs() < 1e-12);
        assert!((grad[0] + 0.5).abs() < 1e-12);

        let (loss, grad) = bce_logit_loss(&[0.0], &[0.0]).unwrap();
        assert!((loss - std::f64::consts::LN_2).abs() < 1e-12);
        assert!((grad[0] - 0.5).abs() < 1e-12);

        let (loss, _) = bce_logit_loss(&[40.0], &[1.0]).unwrap();
        assert!(loss < 1e-12);

        assert!(bce_logit_loss(&[], &[]).is_err());
    }

    fn grad_check_fixture(arch: Arch, activation: Activation, seed: u64) -> f64 {
        // 6-node graph with a cycle and a pendant
        let g = Graph::from_pairs(6, &[(0, 1), (1, 2), (2, 3), (3, 0), (3, 4), (4, 5)]).unwrap();
        let sub = whole(&g);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = FeatureMatrix::from_rows(
            (0..6).map(|_| (0..3).map(|_| rng.gen_range(-1.0..1.0)).collect()).collect(),
        );
        let params = ModelParams::init(arch, &[3, 4, 2], false, activation, seed ^ 0xabc);
        let pairs = [(0usize, 1usize), (2, 5), (4, 0)];
        let labels = [1.0, 0.0, 1.0];
        let report = grad_check(&params, &sub, &x, &pairs, &labels, 1e-4).unwrap();
        assert!(!report.kink_risk, "fixture unexpectedly near a ReLU kink");
        report.max_rel_error
    }

    #[test]
    fn grad_check_gcn_relu() {
        assert!(grad_check_fixture(Arch::Gcn, Activation::Relu, 7) < 1e-4);
    }

    #[test]
    fn grad_check_sage_relu() {
        assert!(grad_check_fixture(Arch::Sage, Activation::Relu, 8) < 1e-4);
    }

    #[test]
    fn grad_check_linear_tighter() {
        assert!(grad_check_fixture(Arch::Gcn, Activation::Identity, 9) < 1e-6);
        assert!(grad_check_fixture(Arch::Sage, Activation::Identity, 10) < 1e-6);
    }

    #[test]
    fn grad_check_flags_zero_weight_kink() {
        let g = Graph::from_pairs(2, &[(0, 1)]).unwrap();
        let x = FeatureMatrix::from_rows(vec![vec![1.0], vec![1.0]]);
        let params = ModelParams {
            arch: Arch::Gcn,
            activation: Activation::Relu,
            add_self_loops: false,
            layers: vec![
                LayerParams { w: Mat::zeros(1, 1), w_self: None },
                LayerParams { w: Mat::zeros(1, 1), w_self: None },
            ],
        };
        let report =
            grad_check(&params, &whole(&g), &x, &[(0, 1)], &[1.0], 1e-4).unwrap();
        assert!(report.kink_risk);
    }

    fn single_edge_batch(g: &Graph) -> Batch {
        Batch {
            positives: vec![Edge::new(0, 1).unwrap()],
            negatives: vec![],
            graph: Subgraph::whole(g),
            excluded: vec![],
        }
    }

    #[test]
    fn train_step_descends_on_toy() {
        let g = Graph::from_pairs(2, &[(0, 1)]).unwrap();
        let x = FeatureMatrix::from_rows(vec![vec![0.6, -0.2], vec![0.1, 0.4]]);
        let mut params = ModelParams::init(Arch::Sage, &[2, 2], false, Activation::Relu, 3);
        let batch = single_edge_batch(&g);
        let mut opt = Sgd::new(0.05, 0.0);
        let mut last = f64::INFINITY;
        for step in 0..10 {
            let loss = train_step(&batch, &x, &mut params, &mut opt).unwrap();
            assert!(loss < last, "loss rose at step {step}: {loss} >= {last}");
            last = loss;
        }
    }

    #[test]
    fn zero_learning_rate_is_identity() {
        let g = Graph::from_pairs(2, &[(0, 1)]).unwrap();
        let x = FeatureMatrix::from_rows(vec![vec![0.6, -0.2], vec![0.1, 0.4]]);
        let mut params = ModelParams::init(Arch::Gcn, &[2, 2], true, Activation::Relu, 3);
        let before = params.clone();
        let batch = single_edge_batch(&g);
        let mut opt = Sgd::new(0.0, 0.0);
        let l1 = train_step(&batch, &x, &mut params, &mut opt).unwrap();
        let l2 = train_step(&batch, &x, &mut params, &mut opt).unwrap();
        assert_eq!(params, before);
        assert_eq!(l1, l2);
    }

    #[test]
    fn permutation_equivariance() {
        // same logical graph under two labelings; scores on matching pairs agree
        let g1 = Graph::from_pairs(5, &[(0, 1), (1, 2), (2, 3), (3, 4), (1, 3)]).unwrap();
        let perm = [3usize, 0, 4, 2, 1]; // image of each node
        let mapped: Vec<(usize, usize)> =
            g1.edges().iter().map(|e| (perm[e.u()], perm[e.v()])).collect();
        let g2 = Graph::from_pairs(5, &mapped).unwrap();

        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let rows: Vec<Vec<f64>> =
            (0..5).map(|_| (0..3).map(|_| rng.gen_range(-1.0..1.0)).collect()).collect();
        let x1 = FeatureMatrix::from_rows(rows.clone());
        let mut rows2 = vec![vec![]; 5];
        for (i, r) in rows.into_iter().enumerate() {
            rows2[perm[i]] = r;
        }
        let x2 = FeatureMatrix::from_rows(rows2);

        let params = ModelParams::init(Arch::Gcn, &[3, 4, 3], false, Activation::Relu, 5);
        let e1 = gnn_forward(&Subgraph::whole(&g1), &x1, &params).unwrap();
        let e2 = gnn_forward(&Subgraph::whole(&g2), &x2, &params).unwrap();
        let s1 = dot_decoder(&e1, &[(0, 4), (1, 2)]).unwrap();
        let s2 = dot_decoder(&e2, &[(perm[0], perm[4]), (perm[1], perm[2])]).unwrap();
        for (a, b) in s1.iter().zip(s2.iter()) {
            assert!((a - b).abs() < 1e-6, "{a} vs {b}");
        }
    }

    #[test]
    fn exclusion_changes_embeddings_of_bridge_endpoints() {
        // (0,1) is the only path between 0 and 1
        let g = Graph::from_pairs(4, &[(0, 1), (1, 2), (2, 3)]).unwrap();
        let x = FeatureMatrix::from_rows(vec![
            vec![1.0, 0.0],
            vec![0.0, 1.0],
            vec![0.5, 0.5],
            vec![-0.5, 0.25],
        ]);
        let params = ModelParams::init(Arch::Gcn, &[2, 2], false, Activation::Relu, 77);
        let included = Subgraph::whole(&g);
        let excluded = included.without_edges(&[Edge::new(0, 1).unwrap()]);
        let e_in = gnn_forward(&included, &x, &params).unwrap();
        let e_out = gnn_forward(&excluded, &x, &params).unwrap();
        assert!(
            e_in.row(0).iter().zip(e_out.row(0)).any(|(a, b)| (a - b).abs() > 1e-9),
            "embedding of node 0 unchanged by exclusion"
        );
        // with the bridge gone, node 0 is isolated: zero embedding, so its dot
        // score with anything is 0 regardless of the other side
        assert_eq!(e_out.row(0), &[0.0, 0.0]);
    }

    #[test]
    fn checkpoint_roundtrip_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.ckpt");
        for arch in [Arch::Gcn, Arch::Sage] {
            let params = ModelParams::init(arch, &[5, 8, 3], true, Activation::Relu, 123);
            save_checkpoint(&path, &params).unwrap();
            let back = load_checkpoint(&path).unwrap();
            assert_eq!(back, params);
        }
    }

    #[test]
    fn dimension_mismatch_is_reported() {
        let g = Graph::from_pairs(2, &[(0, 1)]).unwrap();
        let x = FeatureMatrix::from_rows(vec![vec![1.0, 2.0, 3.0], vec![0.0, 1.0, 2.0]]);
        let params = ModelParams::init(Arch::Gcn, &[2, 2], false, Activation::Relu, 1);
        assert!(matches!(
            gnn_forward(&Subgraph::whole(&g), &x, &params),
            Err(GnnError::DimensionMismatch(_))
        ));
    }
}
