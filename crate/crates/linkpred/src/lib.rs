//! Link-prediction training and auditing toolkit.
//!
//! In link prediction the edges of a graph play two distinct roles: they are
//! *message-passing edges* consumed by neighborhood aggregation, and they are
//! *prediction targets* the model is trained or evaluated on. Leaving a
//! target edge in the graph while predicting it lets the model read the
//! answer off the adjacency structure. This crate provides the machinery to
//! handle the two roles separately:
//!
//! - [`graph`]: immutable CSR graphs, k-hop message-graph induction, edge
//!   removal and membership probes.
//! - [`sampler`]: edge splits, seeded mini-batches with negative sampling,
//!   and the four target-exclusion policies (none / all / random /
//!   low-degree).
//! - [`audit`]: the inference-graph leakage check that strips validation and
//!   test target edges before any evaluation.
//! - [`gnn`]: small dense GCN / mean-aggregating SAGE models with a
//!   dot-product decoder, hand-written backprop, and a finite-difference
//!   gradient checker.
//! - [`metrics`]: MRR, Hits@K, AUC, ranked evaluation, and degree-stratified
//!   breakdowns.
//! - [`lab`]: numerical experiments around the influence of edge removal on
//!   low- vs high-degree nodes, degree-change profiles, the degree-threshold
//!   sweep, and synthetic benchmark generators.
//! - [`pipeline`]: the seeded train/validate/test driver used by the CLI.
//! - [`config`]: `key = value` run configuration and manifests.

pub mod audit;
pub mod gnn;
pub mod graph;
pub mod sampler;

pub use audit::{leakage_check, AuditReport, Verdict};
pub use gnn::{Activation, Arch, GnnError, Mat, ModelParams};
pub use graph::{Edge, FeatureMatrix, Graph, GraphError, NodeId, Subgraph};
pub use sampler::{Batch, EdgeSplit, ExclusionPolicy, SamplerError};
