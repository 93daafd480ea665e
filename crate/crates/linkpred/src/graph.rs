//! Immutable undirected graphs in CSR form, k-hop message-graph induction,
//! and the edge-set algebra used by the sampler and the leakage audit.
//!
//! Graphs are undirected and simple: every edge is canonicalized to `u < v`,
//! self-loops are rejected at ingestion (models may virtually add them, see
//! [`crate::gnn`]), and duplicate input edges are deduplicated with a count
//! in the load report. Isolated nodes are legal: removing every incident
//! edge of a node leaves the node in place.

use std::collections::HashSet;
use std::fmt;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use thiserror::Error;

/// 0-based node identifier.
pub type NodeId = usize;

#[derive(Debug, Error)]
pub enum GraphError {
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("self-loop at line {line}: node {node}")]
    SelfLoopAt { line: usize, node: NodeId },
    #[error("self-loop on node {node}")]
    SelfLoop { node: NodeId },
    #[error("node {node} out of range (graph has {num_nodes} nodes)")]
    NodeOutOfRange { node: NodeId, num_nodes: usize },
    #[error("feature matrix has {rows} rows but graph has {num_nodes} nodes")]
    FeatureRows { rows: usize, num_nodes: usize },
}

/// Undirected edge, canonicalized so `u < v`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Edge {
    u: NodeId,
    v: NodeId,
}

impl Edge {
    /// Canonicalize `(a, b)` into an edge with `u < v`. Self-loops are rejected.
    pub fn new(a: NodeId, b: NodeId) -> Result<Self, GraphError> {
        if a == b {
            return Err(GraphError::SelfLoop { node: a });
        }
        Ok(if a < b { Edge { u: a, v: b } } else { Edge { u: b, v: a } })
    }

    pub fn u(&self) -> NodeId {
        self.u
    }

    pub fn v(&self) -> NodeId {
        self.v
    }

    pub fn endpoints(&self) -> (NodeId, NodeId) {
        (self.u, self.v)
    }

    pub fn touches(&self, n: NodeId) -> bool {
        self.u == n || self.v == n
    }
}

impl fmt::Display for Edge {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({}, {})", self.u, self.v)
    }
}

/// Dense node-feature matrix, one row per node.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix {
    rows: usize,
    dim: usize,
    data: Vec<f64>,
}

impl FeatureMatrix {
    pub fn zeros(rows: usize, dim: usize) -> Self {
        FeatureMatrix { rows, dim, data: vec![0.0; rows * dim] }
    }

    pub fn from_rows(rows: Vec<Vec<f64>>) -> Self {
        let n = rows.len();
        let dim = rows.first().map_or(0, |r| r.len());
        let mut data = Vec::with_capacity(n * dim);
        for r in &rows {
            assert_eq!(r.len(), dim, "ragged feature rows");
            data.extend_from_slice(r);
        }
        FeatureMatrix { rows: n, dim, data }
    }

    pub fn num_rows(&self) -> usize {
        self.rows
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.dim..(i + 1) * self.dim]
    }

    /// Gather a sub-matrix whose row `i` is `self.row(ids[i])`.
    pub fn gather(&self, ids: &[usize]) -> FeatureMatrix {
        let mut out = FeatureMatrix::zeros(ids.len(), self.dim);
        for (local, &global) in ids.iter().enumerate() {
            out.row_mut(local).copy_from_slice(self.row(global));
        }
        out
    }
}

/// Summary of an edge-list ingestion.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct LoadReport {
    pub lines: usize,
    pub edges: usize,
    pub duplicates: usize,
    pub declared_nodes: Option<usize>,
}

/// Summary of a `remove_edges` call.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct RemovalReport {
    pub requested: usize,
    pub removed: usize,
    /// Probe edges that were not present in the graph.
    pub ignored: usize,
}

/// Immutable undirected graph: CSR adjacency plus a canonical edge list and
/// optional dense node features.
#[derive(Debug, Clone)]
pub struct Graph {
    num_nodes: usize,
    offsets: Vec<usize>,
    neighbors: Vec<NodeId>,
    edges: Vec<Edge>,
    features: Option<FeatureMatrix>,
}

impl Graph {
    /// Build a graph from canonical edges. Input edges are deduplicated and
    /// all endpoints must lie below `num_nodes`.
    pub fn from_edges(num_nodes: usize, edges: &[Edge]) -> Result<Self, GraphError> {
        for e in edges {
            for n in [e.u, e.v] {
                if n >= num_nodes {
                    return Err(GraphError::NodeOutOfRange { node: n, num_nodes });
                }
            }
        }
        let mut edges: Vec<Edge> = edges.to_vec();
        edges.sort_unstable();
        edges.dedup();

        let mut counts = vec![0usize; num_nodes + 1];
        for e in &edges {
            counts[e.u + 1] += 1;
            counts[e.v + 1] += 1;
        }
        for i in 0..num_nodes {
            counts[i + 1] += counts[i];
        }
        let offsets = counts;
        let mut cursor = offsets.clone();
        let mut neighbors = vec![0usize; 2 * edges.len()];
        for e in &edges {
            neighbors[cursor[e.u]] = e.v;
            cursor[e.u] += 1;
            neighbors[cursor[e.v]] = e.u;
            cursor[e.v] += 1;
        }
        for u in 0..num_nodes {
            neighbors[offsets[u]..offsets[u + 1]].sort_unstable();
        }
        Ok(Graph { num_nodes, offsets, neighbors, edges, features: None })
    }

    /// Convenience constructor from raw `(u, v)` pairs.
    pub fn from_pairs(num_nodes: usize, pairs: &[(NodeId, NodeId)]) -> Result<Self, GraphError> {
        let edges = pairs
            .iter()
            .map(|&(a, b)| Edge::new(a, b))
            .collect::<Result<Vec<_>, _>>()?;
        Graph::from_edges(num_nodes, &edges)
    }

    pub fn num_nodes(&self) -> usize {
        self.num_nodes
    }

    pub fn num_edges(&self) -> usize {
        self.edges.len()
    }

    /// Canonical edge list, sorted ascending.
    pub fn edges(&self) -> &[Edge] {
        &self.edges
    }

    pub fn features(&self) -> Option<&FeatureMatrix> {
        self.features.as_ref()
    }

    /// Attach node features; the row count must equal the node count.
    pub fn with_features(mut self, features: FeatureMatrix) -> Result<Self, GraphError> {
        if features.num_rows() != self.num_nodes {
            return Err(GraphError::FeatureRows {
                rows: features.num_rows(),
                num_nodes: self.num_nodes,
            });
        }
        self.features = Some(features);
        Ok(self)
    }

    /// Sorted neighbor list of `u`.
    ///
    /// # Panics
    /// Panics if `u` is out of range.
    pub fn neighbors(&self, u: NodeId) -> &[NodeId] {
        assert!(u < self.num_nodes, "node id {u} out of range ({} nodes)", self.num_nodes);
        &self.neighbors[self.offsets[u]..self.offsets[u + 1]]
    }

    /// Degree of `u`, i.e. the size of its 1-hop neighborhood.
    ///
    /// # Panics
    /// Panics if `u` is out of range.
    pub fn degree(&self, u: NodeId) -> usize {
        self.neighbors(u).len()
    }

    /// Degrees of all nodes.
    pub fn degree_vec(&self) -> Vec<usize> {
        (0..self.num_nodes).map(|u| self.degree(u)).collect()
    }

    /// Mean degree `2|E| / |V|` (0 for the empty graph).
    pub fn avg_degree(&self) -> f64 {
        if self.num_nodes == 0 {
            0.0
        } else {
            2.0 * self.edges.len() as f64 / self.num_nodes as f64
        }
    }

    pub fn has_edge(&self, a: NodeId, b: NodeId) -> bool {
        if a == b || a >= self.num_nodes || b >= self.num_nodes {
            return false;
        }
        self.neighbors(a).binary_search(&b).is_ok()
    }

    pub fn contains(&self, e: Edge) -> bool {
        self.has_edge(e.u, e.v)
    }

    /// True if any probe edge is present, together with the list of the
    /// probes that are (in probe order).
    pub fn contains_edges(&self, probe: &[Edge]) -> (bool, Vec<Edge>) {
        let present: Vec<Edge> = probe.iter().copied().filter(|e| self.contains(*e)).collect();
        (!present.is_empty(), present)
    }

    /// New graph with `drop` removed from the edge set. The node count never
    /// changes; probes absent from the graph are counted as ignored.
    pub fn remove_edges(&self, drop: &[Edge]) -> (Graph, RemovalReport) {
        let drop_set: HashSet<Edge> = drop.iter().copied().collect();
        let ignored = drop_set.iter().filter(|e| !self.contains(**e)).count();
        let kept: Vec<Edge> = self.edges.iter().copied().filter(|e| !drop_set.contains(e)).collect();
        let removed = self.edges.len() - kept.len();
        let mut g = Graph::from_edges(self.num_nodes, &kept).expect("kept edges are valid");
        g.features = self.features.clone();
        let report = RemovalReport { requested: drop.len(), removed, ignored };
        (g, report)
    }

    /// Induced subgraph over `seeds` and everything within `k` hops of them.
    /// The edge set is every parent edge with both endpoints in that node set.
    pub fn khop_from_seeds(&self, seeds: &[NodeId], k: usize) -> Subgraph {
        for &s in seeds {
            assert!(s < self.num_nodes, "seed node {s} out of range");
        }
        let mut in_set = vec![false; self.num_nodes];
        let mut frontier: Vec<NodeId> = Vec::new();
        for &s in seeds {
            if !in_set[s] {
                in_set[s] = true;
                frontier.push(s);
            }
        }
        for _ in 0..k {
            let mut next = Vec::new();
            for &u in &frontier {
                for &v in self.neighbors(u) {
                    if !in_set[v] {
                        in_set[v] = true;
                        next.push(v);
                    }
                }
            }
            if next.is_empty() {
                break;
            }
            frontier = next;
        }
        let nodes: Vec<NodeId> = (0..self.num_nodes).filter(|&u| in_set[u]).collect();
        Subgraph::induced(self, nodes, seeds)
    }

    /// k-hop message-passing graph for a set of target edges: the induced
    /// subgraph over the target endpoints and their `<= k`-hop neighbors.
    /// Target edges themselves are included; exclusion is a separate step.
    pub fn khop_message_graph(&self, targets: &[Edge], k: usize) -> Subgraph {
        let mut seeds: Vec<NodeId> = targets.iter().flat_map(|e| [e.u, e.v]).collect();
        seeds.sort_unstable();
        seeds.dedup();
        self.khop_from_seeds(&seeds, k)
    }

    /// Consistency check used by tests: CSR symmetry, sortedness, and
    /// agreement between the edge list and the adjacency.
    pub fn validate(&self) -> Result<(), String> {
        let mut from_adj = 0usize;
        for u in 0..self.num_nodes {
            let ns = self.neighbors(u);
            for w in ns.windows(2) {
                if w[0] >= w[1] {
                    return Err(format!("neighbors of {u} not strictly sorted"));
                }
            }
            for &v in ns {
                if v == u {
                    return Err(format!("self-loop stored on {u}"));
                }
                if self.neighbors(v).binary_search(&u).is_err() {
                    return Err(format!("asymmetric adjacency {u}->{v}"));
                }
                if u < v {
                    from_adj += 1;
                }
            }
        }
        if from_adj != self.edges.len() {
            return Err(format!(
                "edge list has {} edges, adjacency encodes {}",
                self.edges.len(),
                from_adj
            ));
        }
        for e in &self.edges {
            if !self.contains(*e) {
                return Err(format!("edge {e} missing from adjacency"));
            }
        }
        Ok(())
    }
}

/// Induced subgraph with a local/global node-id map.
///
/// Local ids are the ranks of the (sorted) global ids, so `nodes` is both the
/// local-to-global map and the lookup table for the reverse direction.
#[derive(Debug, Clone)]
pub struct Subgraph {
    nodes: Vec<NodeId>,
    offsets: Vec<usize>,
    neighbors: Vec<usize>,
    seeds: Vec<usize>,
}

impl Subgraph {
    fn induced(parent: &Graph, nodes: Vec<NodeId>, seeds: &[NodeId]) -> Subgraph {
        debug_assert!(nodes.windows(2).all(|w| w[0] < w[1]));
        let local_of = |g: NodeId| nodes.binary_search(&g).ok();
        let mut offsets = Vec::with_capacity(nodes.len() + 1);
        let mut neighbors = Vec::new();
        offsets.push(0);
        for &g in &nodes {
            for &n in parent.neighbors(g) {
                if let Some(l) = local_of(n) {
                    neighbors.push(l);
                }
            }
            offsets.push(neighbors.len());
        }
        let seeds = seeds.iter().filter_map(|&s| local_of(s)).collect();
        Subgraph { nodes, offsets, neighbors, seeds }
    }

    /// View of the whole parent graph as a subgraph (identity node map).
    pub fn whole(parent: &Graph) -> Subgraph {
        let nodes: Vec<NodeId> = (0..parent.num_nodes()).collect();
        Subgraph::induced(parent, nodes, &[])
    }

    pub fn num_nodes(&self) -> usize {
        self.nodes.len()
    }

    pub fn num_edges(&self) -> usize {
        self.neighbors.len() / 2
    }

    /// Local-to-global node map.
    pub fn node_map(&self) -> &[NodeId] {
        &self.nodes
    }

    pub fn global_id(&self, local: usize) -> NodeId {
        self.nodes[local]
    }

    pub fn local_id(&self, global: NodeId) -> Option<usize> {
        self.nodes.binary_search(&global).ok()
    }

    /// Seed nodes (local ids) this subgraph was induced from.
    pub fn seeds(&self) -> &[usize] {
        &self.seeds
    }

    pub fn neighbors(&self, local: usize) -> &[usize] {
        &self.neighbors[self.offsets[local]..self.offsets[local + 1]]
    }

    pub fn degree(&self, local: usize) -> usize {
        self.offsets[local + 1] - self.offsets[local]
    }

    /// Edges in global ids, canonical and sorted.
    pub fn global_edges(&self) -> Vec<Edge> {
        let mut out = Vec::with_capacity(self.num_edges());
        for lu in 0..self.num_nodes() {
            for &lv in self.neighbors(lu) {
                if lu < lv {
                    out.push(Edge::new(self.nodes[lu], self.nodes[lv]).expect("no local self-loops"));
                }
            }
        }
        out.sort_unstable();
        out
    }

    pub fn has_local_edge(&self, a: usize, b: usize) -> bool {
        self.neighbors(a).binary_search(&b).is_ok()
    }

    /// Copy of this subgraph with the given global edges dropped. Drops whose
    /// endpoints are not both present are ignored. The node map and seeds are
    /// unchanged.
    pub fn without_edges(&self, drop: &[Edge]) -> Subgraph {
        let mut drop_local: HashSet<(usize, usize)> = HashSet::new();
        for e in drop {
            if let (Some(a), Some(b)) = (self.local_id(e.u), self.local_id(e.v)) {
                drop_local.insert((a.min(b), a.max(b)));
            }
        }
        if drop_local.is_empty() {
            return self.clone();
        }
        let mut offsets = Vec::with_capacity(self.nodes.len() + 1);
        let mut neighbors = Vec::new();
        offsets.push(0);
        for lu in 0..self.num_nodes() {
            for &lv in self.neighbors(lu) {
                if !drop_local.contains(&(lu.min(lv), lu.max(lv))) {
                    neighbors.push(lv);
                }
            }
            offsets.push(neighbors.len());
        }
        Subgraph { nodes: self.nodes.clone(), offsets, neighbors, seeds: self.seeds.clone() }
    }
}

/// Parse an edge-list file: one `u<ws>v` pair per line, `#` starts a comment.
/// A `# nodes: N` comment overrides the inferred node count (`1 + max id`).
pub fn load_edge_list(path: impl AsRef<Path>) -> Result<(Graph, LoadReport), GraphError> {
    let file = std::fs::File::open(path.as_ref())?;
    let reader = BufReader::new(file);
    let mut raw: Vec<Edge> = Vec::new();
    let mut report = LoadReport::default();
    let mut max_id: Option<usize> = None;
    for (idx, line) in reader.lines().enumerate() {
        let line_no = idx + 1;
        let line = line?;
        report.lines += 1;
        let trimmed = line.trim();
        if trimmed.is_empty() {
            continue;
        }
        if let Some(rest) = trimmed.strip_prefix('#') {
            let rest = rest.trim();
            if let Some(spec) = rest.strip_prefix("nodes:").or_else(|| rest.strip_prefix("nodes=")) {
                let n = spec.trim().parse::<usize>().map_err(|e| GraphError::Parse {
                    line: line_no,
                    message: format!("bad node-count directive: {e}"),
                })?;
                report.declared_nodes = Some(n);
            }
            continue;
        }
        let mut it = trimmed.split_whitespace();
        let (a, b) = match (it.next(), it.next(), it.next()) {
            (Some(a), Some(b), None) => (a, b),
            _ => {
                return Err(GraphError::Parse {
                    line: line_no,
                    message: format!("expected two node ids, got {trimmed:?}"),
                })
            }
        };
        let parse_id = |tok: &str| -> Result<usize, GraphError> {
            tok.parse::<usize>().map_err(|e| GraphError::Parse {
                line: line_no,
                message: format!("bad node id {tok:?}: {e}"),
            })
        };
        let (a, b) = (parse_id(a)?, parse_id(b)?);
        if a == b {
            return Err(GraphError::SelfLoopAt { line: line_no, node: a });
        }
        max_id = Some(max_id.map_or(a.max(b), |m| m.max(a).max(b)));
        raw.push(Edge::new(a, b).expect("self-loop already rejected"));
    }
    let inferred = max_id.map_or(0, |m| m + 1);
    let num_nodes = report.declared_nodes.map_or(inferred, |n| n.max(inferred));
    let before = raw.len();
    raw.sort_unstable();
    raw.dedup();
    report.duplicates = before - raw.len();
    report.edges = raw.len();
    let graph = Graph::from_edges(num_nodes, &raw)?;
    Ok((graph, report))
}

/// Write a graph as an edge-list file with a `# nodes: N` directive, so the
/// node count round-trips even with trailing isolated nodes.
pub fn save_edge_list(path: impl AsRef<Path>, g: &Graph) -> std::io::Result<()> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(f, "# nodes: {}", g.num_nodes())?;
    for e in g.edges() {
        writeln!(f, "{}\t{}", e.u(), e.v())?;
    }
    f.flush()
}

/// Load a dense feature file: first non-comment line `N D`, then `N` lines of
/// `D` decimal reals.
pub fn load_features(path: impl AsRef<Path>) -> Result<FeatureMatrix, GraphError> {
    let file = std::fs::File::open(path.as_ref())?;
    let reader = BufReader::new(file);
    let mut header: Option<(usize, usize)> = None;
    let mut mat: Option<FeatureMatrix> = None;
    let mut next_row = 0usize;
    for (idx, line) in reader.lines().enumerate() {
        let line_no = idx + 1;
        let line = line?;
        let trimmed = line.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        match header {
            None => {
                let mut it = trimmed.split_whitespace();
                let parse = |tok: Option<&str>| -> Result<usize, GraphError> {
                    tok.ok_or_else(|| GraphError::Parse {
                        line: line_no,
                        message: "feature header needs `N D`".into(),
                    })?
                    .parse()
                    .map_err(|e| GraphError::Parse { line: line_no, message: format!("{e}") })
                };
                let n = parse(it.next())?;
                let d = parse(it.next())?;
                header = Some((n, d));
                mat = Some(FeatureMatrix::zeros(n, d));
            }
            Some((n, d)) => {
                if next_row >= n {
                    return Err(GraphError::Parse {
                        line: line_no,
                        message: format!("more than {n} feature rows"),
                    });
                }
                let vals: Result<Vec<f64>, _> =
                    trimmed.split_whitespace().map(|t| t.parse::<f64>()).collect();
                let vals = vals.map_err(|e| GraphError::Parse {
                    line: line_no,
                    message: format!("bad feature value: {e}"),
                })?;
                if vals.len() != d {
                    return Err(GraphError::Parse {
                        line: line_no,
                        message: format!("expected {d} values, got {}", vals.len()),
                    });
                }
                mat.as_mut().unwrap().row_mut(next_row).copy_from_slice(&vals);
                next_row += 1;
            }
        }
    }
    match header {
        Some((n, _)) if next_row == n => Ok(mat.unwrap()),
        Some((n, _)) => Err(GraphError::Parse {
            line: 0,
            message: format!("expected {n} feature rows, got {next_row}"),
        }),
        None => Err(GraphError::Parse { line: 0, message: "empty feature file".into() }),
    }
}

/// Write a feature matrix in the `N D` header format read by [`load_features`].
pub fn save_features(path: impl AsRef<Path>, m: &FeatureMatrix) -> std::io::Result<()> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(f, "{} {}", m.num_rows(), m.dim())?;
    for i in 0..m.num_rows() {
        let row: Vec<String> = m.row(i).iter().map(|x| format!("{x:.17e}")).collect();
        writeln!(f, "{}", row.join(" "))?;
    }
    f.flush()
}

/// Helper for tests and fixtures: edges of the path graph `P_n`.
pub fn path_edges(n: usize) -> Vec<Edge> {
    (0..n.saturating_sub(1)).map(|i| Edge::new(i, i + 1).unwrap()).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn p4() -> Graph {
        Graph::from_edges(4, &path_edges(4)).unwrap()
    }

    fn edge(a: usize, b: usize) -> Edge {
        Edge::new(a, b).unwrap()
    }

    #[test]
    fn edge_canonicalizes() {
        assert_eq!(edge(3, 1), edge(1, 3));
        assert_eq!(edge(1, 3).endpoints(), (1, 3));
        assert!(Edge::new(2, 2).is_err());
    }

    #[test]
    fn p4_degrees() {
        let g = p4();
        assert_eq!(g.degree(0), 1);
        assert_eq!(g.degree(1), 2);
        assert_eq!(g.degree(2), 2);
        assert_eq!(g.degree(3), 1);
        g.validate().unwrap();
    }

    #[test]
    fn isolated_node_degree_zero() {
        let g = Graph::from_pairs(3, &[(0, 1)]).unwrap();
        assert_eq!(g.degree(2), 0);
    }

    #[test]
    #[should_panic(expected = "out of range")]
    fn degree_out_of_range_panics() {
        p4().degree(4);
    }

    #[test]
    fn duplicate_and_reversed_edges_dedup() {
        let g = Graph::from_pairs(3, &[(0, 1), (1, 2), (2, 1)]).unwrap();
        assert_eq!(g.edges(), &[edge(0, 1), edge(1, 2)]);
        assert_eq!(g.num_nodes(), 3);
    }

    #[test]
    fn khop_on_p4_matches_hand_cases() {
        let g = p4();
        // endpoints of (0,1) and (2,3), one hop: all nodes, all edges
        let sub = g.khop_message_graph(&[edge(0, 1), edge(2, 3)], 1);
        assert_eq!(sub.node_map(), &[0, 1, 2, 3]);
        assert_eq!(sub.global_edges(), vec![edge(0, 1), edge(1, 2), edge(2, 3)]);

        // zero hops: endpoints only
        let sub = g.khop_message_graph(&[edge(0, 1)], 0);
        assert_eq!(sub.node_map(), &[0, 1]);
        assert_eq!(sub.global_edges(), vec![edge(0, 1)]);

        // middle edge, one hop: whole path
        let sub = g.khop_message_graph(&[edge(1, 2)], 1);
        assert_eq!(sub.node_map(), &[0, 1, 2, 3]);
        assert_eq!(sub.num_edges(), 3);
    }

    #[test]
    fn khop_with_large_k_recovers_component() {
        let g = p4();
        let sub = g.khop_message_graph(&[edge(0, 1)], 10);
        assert_eq!(sub.num_nodes(), 4);
        assert_eq!(sub.num_edges(), 3);
    }

    #[test]
    fn remove_edges_cases() {
        let tri = Graph::from_pairs(3, &[(0, 1), (1, 2), (0, 2)]).unwrap();
        let (g, rep) = tri.remove_edges(&[edge(1, 2)]);
        assert_eq!(g.edges(), &[edge(0, 1), edge(0, 2)]);
        assert_eq!(rep.removed, 1);
        assert_eq!(rep.ignored, 0);

        let p = p4();
        let (g, _) = p.remove_edges(&p.edges().to_vec());
        assert_eq!(g.num_nodes(), 4);
        assert_eq!(g.num_edges(), 0);

        let (g, rep) = p.remove_edges(&[edge(0, 3)]);
        assert_eq!(g.num_edges(), 3);
        assert_eq!(rep.ignored, 1);
        assert_eq!(rep.removed, 0);
    }

    #[test]
    fn contains_edges_cases() {
        let g = p4();
        assert_eq!(g.contains_edges(&[edge(1, 2)]), (true, vec![edge(1, 2)]));
        assert_eq!(g.contains_edges(&[edge(0, 3)]), (false, vec![]));
        assert_eq!(g.contains_edges(&[]), (false, vec![]));
    }

    #[test]
    fn removal_then_probe_is_empty() {
        let g = p4();
        let drop = [edge(0, 1), edge(2, 3)];
        let (g2, _) = g.remove_edges(&drop);
        assert_eq!(g2.contains_edges(&drop), (false, vec![]));
    }

    #[test]
    fn subgraph_without_edges() {
        let g = p4();
        let sub = g.khop_message_graph(&[edge(1, 2)], 1);
        let cut = sub.without_edges(&[edge(0, 1), edge(2, 3)]);
        assert_eq!(cut.global_edges(), vec![edge(1, 2)]);
        assert_eq!(cut.num_nodes(), 4);
        // absent drop is a no-op
        let same = sub.without_edges(&[edge(0, 3)]);
        assert_eq!(same.global_edges(), sub.global_edges());
    }

    #[test]
    fn load_edge_list_roundtrip_and_errors() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("edges.tsv");

        std::fs::write(&path, "# demo\n0 1\n1 2\n2 1\n").unwrap();
        let (g, rep) = load_edge_list(&path).unwrap();
        assert_eq!(g.edges(), &[edge(0, 1), edge(1, 2)]);
        assert_eq!(g.num_nodes(), 3);
        assert_eq!(rep.duplicates, 1);

        std::fs::write(&path, "").unwrap();
        let (g, _) = load_edge_list(&path).unwrap();
        assert_eq!(g.num_nodes(), 0);
        assert_eq!(g.num_edges(), 0);

        std::fs::write(&path, "0 1\n3 3\n").unwrap();
        match load_edge_list(&path) {
            Err(GraphError::SelfLoopAt { line, node }) => {
                assert_eq!(line, 2);
                assert_eq!(node, 3);
            }
            other => panic!("expected self-loop error, got {other:?}"),
        }

        std::fs::write(&path, "0 x\n").unwrap();
        assert!(matches!(load_edge_list(&path), Err(GraphError::Parse { line: 1, .. })));

        // node-count directive overrides the inferred count
        std::fs::write(&path, "# nodes: 7\n0 1\n").unwrap();
        let (g, rep) = load_edge_list(&path).unwrap();
        assert_eq!(g.num_nodes(), 7);
        assert_eq!(rep.declared_nodes, Some(7));

        // save/load round trip
        save_edge_list(&path, &g).unwrap();
        let (g2, _) = load_edge_list(&path).unwrap();
        assert_eq!(g2.num_nodes(), 7);
        assert_eq!(g2.edges(), g.edges());
    }

    #[test]
    fn feature_file_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("feat.txt");
        let m = FeatureMatrix::from_rows(vec![vec![1.0, -2.5], vec![0.25, 1e-3], vec![0.0, 3.0]]);
        save_features(&path, &m).unwrap();
        let back = load_features(&path).unwrap();
        assert_eq!(back, m);

        std::fs::write(&path, "2 2\n1 2\n").unwrap();
        assert!(load_features(&path).is_err());
    }
}
