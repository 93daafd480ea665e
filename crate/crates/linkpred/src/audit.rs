//! Inference-graph leakage check: detect and remove validation/test target
//! edges before a graph is used for message passing at evaluation time.
//!
//! Test target edges must never be message-passing edges; validation edges
//! are a user decision (time-based splits sometimes legitimately feed
//! validation edges to inference), controlled by the `keep_valid` flag.
//! Matching is undirected: a probe `(u, v)` matches a stored `(v, u)`.

use std::fmt;
use std::io::Write;
use std::path::Path;

use crate::graph::Graph;
use crate::sampler::EdgeSplit;

/// Outcome of a [`leakage_check`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Verdict {
    /// Neither validation nor test edges were present in the input graph.
    Clean,
    /// Eval edges were present; the returned graph has been sanitized.
    LeakedAndFixed,
}

impl fmt::Display for Verdict {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Verdict::Clean => write!(f, "clean"),
            Verdict::LeakedAndFixed => write!(f, "leaked-and-fixed"),
        }
    }
}

/// Machine-readable audit result.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AuditReport {
    /// Any validation edge present in the input graph.
    pub valid_present: bool,
    /// Any test edge present in the input graph.
    pub test_present: bool,
    pub removed_test: usize,
    pub removed_valid: usize,
    /// The `K` flag: keep validation edges as inference inputs.
    pub keep_valid: bool,
    pub verdict: Verdict,
}

impl AuditReport {
    /// Line-oriented `key=value` rendering, stable ordering.
    pub fn to_kv(&self) -> String {
        format!(
            "valid_present={}\ntest_present={}\nremoved_test={}\nremoved_valid={}\nkeep_valid={}\nverdict={}\n",
            self.valid_present,
            self.test_present,
            self.removed_test,
            self.removed_valid,
            self.keep_valid,
            self.verdict
        )
    }

    pub fn write_to(&self, path: impl AsRef<Path>) -> std::io::Result<()> {
        let mut f = std::fs::File::create(path)?;
        f.write_all(self.to_kv().as_bytes())
    }
}

/// Produce an inference graph guaranteed free of test target edges, removing
/// validation edges as well unless `keep_valid` is set.
///
/// Steps: check which eval edges are present; if any test edge is present,
/// remove the whole test set; then, if validation edges are present and
/// `keep_valid` is false, remove the whole validation set. Removal is
/// all-or-nothing per split; absent edges are no-ops.
///
/// ```
/// use linkpred::graph::{Graph, Edge};
/// use linkpred::sampler::EdgeSplit;
/// use linkpred::audit::{leakage_check, Verdict};
///
/// let g = Graph::from_pairs(3, &[(0, 1), (1, 2), (0, 2)]).unwrap();
/// let split = EdgeSplit::new(
///     vec![Edge::new(0, 1).unwrap()],
///     vec![Edge::new(0, 2).unwrap()],  // validation
///     vec![Edge::new(1, 2).unwrap()],  // test
/// ).unwrap();
///
/// let (g_infer, report) = leakage_check(&g, &split, false);
/// assert_eq!(g_infer.edges(), &[Edge::new(0, 1).unwrap()]);
/// assert_eq!(report.removed_test, 1);
/// assert_eq!(report.removed_valid, 1);
/// assert_eq!(report.verdict, Verdict::LeakedAndFixed);
///
/// let (g_keep, report) = leakage_check(&g, &split, true);
/// assert_eq!(g_keep.num_edges(), 2); // validation edge kept
/// assert_eq!(report.removed_valid, 0);
/// ```
pub fn leakage_check(g: &Graph, split: &EdgeSplit, keep_valid: bool) -> (Graph, AuditReport) {
    let (valid_present, _) = g.contains_edges(&split.valid);
    let (test_present, _) = g.contains_edges(&split.test);

    let (g_infer, removed_test) = if test_present {
        let (g2, rep) = g.remove_edges(&split.test);
        (g2, rep.removed)
    } else {
        (g.clone(), 0)
    };

    let (g_infer, removed_valid) = if valid_present && !keep_valid {
        let (g2, rep) = g_infer.remove_edges(&split.valid);
        (g2, rep.removed)
    } else {
        (g_infer, 0)
    };

    // Clean means nothing needed removal: validation edges present under
    // keep_valid are a deliberate user choice, and re-checking a sanitized
    // graph must come back clean.
    let verdict = if test_present || (valid_present && !keep_valid) {
        Verdict::LeakedAndFixed
    } else {
        Verdict::Clean
    };
    let report = AuditReport {
        valid_present,
        test_present,
        removed_test,
        removed_valid,
        keep_valid,
        verdict,
    };
    (g_infer, report)
}

/// True iff no test target edge is present in `g`. Intended as a
/// pre-inference / CI guard.
pub fn assert_no_test_leakage(g: &Graph, split: &EdgeSplit) -> bool {
    !g.contains_edges(&split.test).0
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::Edge;

    fn edge(a: usize, b: usize) -> Edge {
        Edge::new(a, b).unwrap()
    }

    fn triangle_fixture() -> (Graph, EdgeSplit) {
        let g = Graph::from_pairs(3, &[(0, 1), (1, 2), (0, 2)]).unwrap();
        let split =
            EdgeSplit::new(vec![edge(0, 1)], vec![edge(0, 2)], vec![edge(1, 2)]).unwrap();
        (g, split)
    }

    #[test]
    fn triangle_trace_k_false() {
        let (g, split) = triangle_fixture();
        let (g_infer, report) = leakage_check(&g, &split, false);
        assert_eq!(g_infer.edges(), &[edge(0, 1)]);
        assert!(report.test_present && report.valid_present);
        assert_eq!(report.removed_test + report.removed_valid, 2);
        assert_eq!(report.verdict, Verdict::LeakedAndFixed);
    }

    #[test]
    fn triangle_trace_k_true_skips_valid_removal() {
        let (g, split) = triangle_fixture();
        let (g_infer, report) = leakage_check(&g, &split, true);
        let mut edges = g_infer.edges().to_vec();
        edges.sort_unstable();
        assert_eq!(edges, vec![edge(0, 1), edge(0, 2)]);
        assert_eq!(report.removed_valid, 0);
    }

    #[test]
    fn already_clean_graph_is_noop() {
        let (g, split) = triangle_fixture();
        let (clean, _) = g.remove_edges(&[edge(0, 2), edge(1, 2)]);
        let (g_infer, report) = leakage_check(&clean, &split, false);
        assert_eq!(g_infer.edges(), clean.edges());
        assert_eq!(report.verdict, Verdict::Clean);
        assert_eq!(report.removed_test + report.removed_valid, 0);
    }

    #[test]
    fn idempotent() {
        let (g, split) = triangle_fixture();
        for k in [false, true] {
            let (g1, _) = leakage_check(&g, &split, k);
            let (g2, report) = leakage_check(&g1, &split, k);
            assert_eq!(report.verdict, Verdict::Clean);
            assert_eq!(g1.edges(), g2.edges());
        }
    }

    #[test]
    fn k_monotone_and_conservative() {
        let (g, split) = triangle_fixture();
        let (keep, _) = leakage_check(&g, &split, true);
        let (strip, _) = leakage_check(&g, &split, false);
        let keep_set: std::collections::HashSet<Edge> = keep.edges().iter().copied().collect();
        assert!(strip.edges().iter().all(|e| keep_set.contains(e)));
        let g_set: std::collections::HashSet<Edge> = g.edges().iter().copied().collect();
        assert!(keep.edges().iter().all(|e| g_set.contains(e)));
    }

    #[test]
    fn reverse_direction_probe_matches() {
        // probes are canonicalized at construction, so (2,1) == (1,2)
        let g = Graph::from_pairs(3, &[(1, 2)]).unwrap();
        let split = EdgeSplit::new(vec![], vec![], vec![Edge::new(2, 1).unwrap()]).unwrap();
        assert!(!assert_no_test_leakage(&g, &split));
        let (g_infer, _) = leakage_check(&g, &split, false);
        assert!(assert_no_test_leakage(&g_infer, &split));
    }

    #[test]
    fn guard_on_p4() {
        let g = Graph::from_pairs(4, &[(0, 1), (1, 2), (2, 3)]).unwrap();
        let split = EdgeSplit::new(vec![edge(0, 1)], vec![], vec![edge(1, 2)]).unwrap();
        assert!(!assert_no_test_leakage(&g, &split));
        let (g_infer, _) = leakage_check(&g, &split, false);
        assert!(assert_no_test_leakage(&g_infer, &split));
        // empty test split is vacuously safe
        let empty = EdgeSplit::new(vec![edge(0, 1)], vec![], vec![]).unwrap();
        assert!(assert_no_test_leakage(&g, &empty));
    }

    #[test]
    fn report_kv_format() {
        let (g, split) = triangle_fixture();
        let (_, report) = leakage_check(&g, &split, false);
        let kv = report.to_kv();
        assert!(kv.contains("test_present=true"));
        assert!(kv.contains("verdict=leaked-and-fixed"));
    }
}
