//! Communication graphs and doubly stochastic consensus weights.

use std::collections::BTreeSet;

use nalgebra::DMatrix;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::SimRng;

/// Regeneration attempts for Erdos-Renyi graphs before giving up.
pub const ER_MAX_RETRIES: usize = 100;

const STOCHASTIC_TOL: f64 = 1e-12;

/// Undirected graph without self-loops. Edges are stored as `(i, j)`, `i < j`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "RawGraph")]
pub struct Graph {
    num_nodes: usize,
    edges: BTreeSet<(usize, usize)>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawGraph {
    num_nodes: usize,
    edges: Vec<(usize, usize)>,
}

impl TryFrom<RawGraph> for Graph {
    type Error = Error;

    fn try_from(raw: RawGraph) -> Result<Self> {
        Graph::from_edges(raw.num_nodes, raw.edges)
    }
}

impl Graph {
    pub fn from_edges(num_nodes: usize, edges: impl IntoIterator<Item = (usize, usize)>) -> Result<Self> {
        let mut set = BTreeSet::new();
        for (a, b) in edges {
            if a >= num_nodes || b >= num_nodes {
                return Err(Error::config(format!("edge ({a}, {b}) references a missing node")));
            }
            if a == b {
                continue;
            }
            if !set.insert((a.min(b), a.max(b))) {
                return Err(Error::config(format!("duplicate edge ({a}, {b})")));
            }
        }
        Ok(Self {
            num_nodes,
            edges: set,
        })
    }

    pub fn num_nodes(&self) -> usize {
        self.num_nodes
    }

    pub fn edges(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.edges.iter().copied()
    }

    pub fn num_edges(&self) -> usize {
        self.edges.len()
    }

    pub fn has_edge(&self, a: usize, b: usize) -> bool {
        self.edges.contains(&(a.min(b), a.max(b)))
    }

    pub fn degrees(&self) -> Vec<usize> {
        let mut deg = vec![0; self.num_nodes];
        for &(a, b) in &self.edges {
            deg[a] += 1;
            deg[b] += 1;
        }
        deg
    }

    pub fn neighbors(&self, node: usize) -> Vec<usize> {
        self.edges
            .iter()
            .filter_map(|&(a, b)| match (a == node, b == node) {
                (true, _) => Some(b),
                (_, true) => Some(a),
                _ => None,
            })
            .collect()
    }

    pub fn is_connected(&self) -> bool {
        if self.num_nodes == 0 {
            return false;
        }
        let mut adj = vec![Vec::new(); self.num_nodes];
        for &(a, b) in &self.edges {
            adj[a].push(b);
            adj[b].push(a);
        }
        let mut seen = vec![false; self.num_nodes];
        let mut stack = vec![0];
        seen[0] = true;
        while let Some(v) = stack.pop() {
            for &u in &adj[v] {
                if !seen[u] {
                    seen[u] = true;
                    stack.push(u);
                }
            }
        }
        seen.into_iter().all(|s| s)
    }

    /// A single cycle through all nodes.
    pub fn is_ring(&self) -> bool {
        self.num_nodes >= 3 && self.degrees().iter().all(|&d| d == 2) && self.is_connected()
    }
}

/// Graph families.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum GraphKind {
    Ring,
    /// Circulant graph with neighbors at offsets `±1 ..= ±k/2`.
    KRegular { k: usize },
    ErdosRenyi { p: f64 },
    Complete,
}

pub fn build_graph(kind: GraphKind, num_nodes: usize, rng: &mut SimRng) -> Result<Graph> {
    if num_nodes < 2 {
        return Err(Error::config("a communication graph needs at least 2 nodes"));
    }
    match kind {
        GraphKind::Ring if num_nodes == 2 => Graph::from_edges(2, [(0, 1)]),
        GraphKind::Ring => circulant(num_nodes, 1),
        GraphKind::KRegular { k } => {
            if k == 0 || k % 2 != 0 || k >= num_nodes {
                return Err(Error::config(format!(
                    "k-regular graph needs even 0 < k < N, got k = {k}, N = {num_nodes}"
                )));
            }
            circulant(num_nodes, k / 2)
        }
        GraphKind::Complete => Graph::from_edges(
            num_nodes,
            (0..num_nodes).flat_map(|a| (a + 1..num_nodes).map(move |b| (a, b))),
        ),
        GraphKind::ErdosRenyi { p } => {
            if !(p > 0.0 && p <= 1.0) {
                return Err(Error::config(format!("edge probability must lie in (0, 1], got {p}")));
            }
            for _ in 0..ER_MAX_RETRIES {
                let mut edges = Vec::new();
                for a in 0..num_nodes {
                    for b in a + 1..num_nodes {
                        if rng.random::<f64>() < p {
                            edges.push((a, b));
                        }
                    }
                }
                let g = Graph::from_edges(num_nodes, edges)?;
                if g.is_connected() {
                    return Ok(g);
                }
            }
            Err(Error::Generation(format!(
                "no connected Erdos-Renyi graph (N = {num_nodes}, p = {p}) after {ER_MAX_RETRIES} attempts"
            )))
        }
    }
}

fn circulant(num_nodes: usize, half_width: usize) -> Result<Graph> {
    let mut edges = BTreeSet::new();
    for a in 0..num_nodes {
        for off in 1..=half_width {
            let b = (a + off) % num_nodes;
            edges.insert((a.min(b), a.max(b)));
        }
    }
    Graph::from_edges(num_nodes, edges)
}

/// Rules for turning a graph into consensus weights.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "scheme", rename_all = "snake_case", deny_unknown_fields)]
#[derive(Default)]
pub enum ConsensusScheme {
    /// `1 / (1 + max(deg_i, deg_j))` on edges, remainder on the diagonal.
    #[default]
    Metropolis,
    /// Plain average over the closed neighborhood. Only doubly stochastic on
    /// regular graphs.
    UniformAverage,
    /// Fixed circulant weights on a ring.
    FixedRing { d_self: f64, d_off: f64 },
}


/// Square weight matrix used in the averaging step.
#[derive(Clone, Debug, PartialEq)]
pub struct ConsensusMatrix {
    weights: DMatrix<f64>,
    eta: f64,
}

impl ConsensusMatrix {
    pub fn new(weights: DMatrix<f64>) -> Result<Self> {
        if !weights.is_square() || weights.nrows() == 0 {
            return Err(Error::config("consensus matrix must be square and non-empty"));
        }
        if weights.iter().any(|w| !w.is_finite() || *w < 0.0) {
            return Err(Error::config("consensus weights must be finite and non-negative"));
        }
        let eta = smallest_positive(&weights);
        Ok(Self { weights, eta })
    }

    pub fn weights(&self) -> &DMatrix<f64> {
        &self.weights
    }

    pub fn num_agents(&self) -> usize {
        self.weights.nrows()
    }

    /// Smallest positive entry.
    pub fn eta(&self) -> f64 {
        self.eta
    }

    pub fn validate(&self) -> ConsensusReport {
        validate_consensus(&self.weights)
    }

    /// Checks the sparsity pattern against `graph` and double stochasticity.
    pub fn check_assumption(&self, graph: &Graph) -> Result<()> {
        let n = self.num_agents();
        if graph.num_nodes() != n {
            return Err(Error::config("graph and consensus matrix sizes differ"));
        }
        let report = self.validate();
        if !report.is_doubly_stochastic {
            return Err(Error::Assumption {
                assumption: "doubly stochastic consensus weights",
                detail: format!(
                    "row-sum error {:.3e}, column-sum error {:.3e}",
                    report.row_sum_error, report.column_sum_error
                ),
            });
        }
        for i in 0..n {
            for j in 0..n {
                let w = self.weights[(i, j)];
                let linked = i == j || graph.has_edge(i, j);
                if linked && w < self.eta {
                    return Err(Error::Assumption {
                        assumption: "consensus weights bounded below",
                        detail: format!("A[{i}][{j}] = {w} is below eta on a linked pair"),
                    });
                }
                if !linked && w != 0.0 {
                    return Err(Error::Assumption {
                        assumption: "consensus weights follow the graph",
                        detail: format!("A[{i}][{j}] = {w} but ({i}, {j}) is not an edge"),
                    });
                }
            }
        }
        Ok(())
    }
}

fn smallest_positive(m: &DMatrix<f64>) -> f64 {
    m.iter().copied().filter(|&w| w > 0.0).fold(f64::INFINITY, f64::min)
}

pub fn consensus_matrix(graph: &Graph, scheme: ConsensusScheme) -> Result<ConsensusMatrix> {
    let n = graph.num_nodes();
    if !graph.is_connected() {
        return Err(Error::config("consensus weights need a connected graph"));
    }
    let deg = graph.degrees();
    let mut a = DMatrix::zeros(n, n);
    match scheme {
        ConsensusScheme::Metropolis => {
            for (i, j) in graph.edges() {
                let w = 1.0 / (1.0 + deg[i].max(deg[j]) as f64);
                a[(i, j)] = w;
                a[(j, i)] = w;
            }
            for i in 0..n {
                let off: f64 = (0..n).filter(|&j| j != i).map(|j| a[(i, j)]).sum();
                a[(i, i)] = 1.0 - off;
            }
        }
        ConsensusScheme::UniformAverage => {
            for i in 0..n {
                let w = 1.0 / (deg[i] + 1) as f64;
                a[(i, i)] = w;
                for j in graph.neighbors(i) {
                    a[(i, j)] = w;
                }
            }
        }
        ConsensusScheme::FixedRing { d_self, d_off } => {
            if !graph.is_ring() {
                return Err(Error::config("fixed_ring weights require a ring with at least 3 nodes"));
            }
            if d_self <= 0.0 || d_off <= 0.0 || (d_self + 2.0 * d_off - 1.0).abs() > STOCHASTIC_TOL {
                return Err(Error::config(format!(
                    "ring weights must be positive with d_self + 2 d_off = 1, got {d_self}, {d_off}"
                )));
            }
            for i in 0..n {
                a[(i, i)] = d_self;
                for j in graph.neighbors(i) {
                    a[(i, j)] = d_off;
                }
            }
        }
    }
    let m = ConsensusMatrix::new(a)?;
    if !m.validate().is_doubly_stochastic {
        log::warn!(
            "{scheme:?} weights on this graph are not doubly stochastic; the average is not preserved by consensus"
        );
    }
    Ok(m)
}

/// Diagnostics for a weight matrix.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ConsensusReport {
    pub eta: f64,
    pub is_doubly_stochastic: bool,
    pub row_sum_error: f64,
    pub column_sum_error: f64,
    /// Second largest singular value; 1 means the weights do not mix.
    pub second_singular_value: f64,
}

pub fn validate_consensus(a: &DMatrix<f64>) -> ConsensusReport {
    let n = a.nrows();
    let row_sum_error = a.row_iter().map(|r| (r.sum() - 1.0).abs()).fold(0.0, f64::max);
    let column_sum_error = a.column_iter().map(|c| (c.sum() - 1.0).abs()).fold(0.0, f64::max);
    let nonneg = a.iter().all(|&w| w >= 0.0);
    let mut sv: Vec<f64> = a.clone().singular_values().iter().copied().collect();
    sv.sort_by(|x, y| y.total_cmp(x));
    ConsensusReport {
        eta: smallest_positive(a),
        is_doubly_stochastic: a.is_square()
            && nonneg
            && row_sum_error <= STOCHASTIC_TOL
            && column_sum_error <= STOCHASTIC_TOL,
        row_sum_error,
        column_sum_error,
        second_singular_value: if n >= 2 { sv[1] } else { 0.0 },
    }
}

/// Outcome of the step-size test for the consensus-error bound.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct StepSizeCheck {
    pub ok: bool,
    /// Contraction factor `(1 + 4 beta K)(1 - eta^(N-1))`.
    pub rho: f64,
    /// `min{1/2, eta^(N-1) / (4 (1 - eta^(N-1)))}`.
    pub threshold: f64,
}

/// Requires `beta K <= min{1/2, eta^(N-1) / (4 (1 - eta^(N-1)))}` and
/// `rho < 1`. The second requirement only bites exactly on the boundary, where
/// `rho` rounds to one and the bound is infinite.
pub fn step_size_condition(beta: f64, k: usize, eta: f64, num_agents: usize) -> Result<StepSizeCheck> {
    if !(beta > 0.0) || k == 0 || !(eta > 0.0 && eta <= 1.0) || num_agents == 0 {
        return Err(Error::config(format!(
            "step-size check needs beta > 0, K >= 1, 0 < eta <= 1, N >= 1 (got {beta}, {k}, {eta}, {num_agents})"
        )));
    }
    let bk = beta * k as f64;
    let e = eta.powi(num_agents as i32 - 1);
    let gap = 1.0 - e;
    let threshold = if gap <= 0.0 {
        0.5
    } else {
        0.5f64.min(e / (4.0 * gap))
    };
    let rho = if gap <= 0.0 { 0.0 } else { (1.0 + 4.0 * bk) * gap };
    Ok(StepSizeCheck {
        ok: bk <= threshold && rho < 1.0,
        rho,
        threshold,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::rng_from_seed;
    use proptest::prelude::*;

    fn rng() -> SimRng {
        rng_from_seed(3)
    }

    #[test]
    fn ring_of_four() {
        let g = build_graph(GraphKind::Ring, 4, &mut rng()).unwrap();
        let edges: Vec<_> = g.edges().collect();
        assert_eq!(edges, vec![(0, 1), (0, 3), (1, 2), (2, 3)]);
    }

    #[test]
    fn complete_three() {
        let g = build_graph(GraphKind::Complete, 3, &mut rng()).unwrap();
        assert_eq!(g.num_edges(), 3);
    }

    #[test]
    fn four_regular_nine_nodes() {
        let g = build_graph(GraphKind::KRegular { k: 4 }, 9, &mut rng()).unwrap();
        // every node is adjacent to exactly the nodes at circular distance 1 or 2
        for v in 0..9usize {
            let mut expect: Vec<usize> = [1, 2, 7, 8].iter().map(|o| (v + o) % 9).collect();
            expect.sort();
            let mut got = g.neighbors(v);
            got.sort();
            assert_eq!(got, expect);
        }
        assert!(g.degrees().iter().all(|&d| d == 4));
    }

    #[test]
    fn infeasible_k_regular() {
        assert!(matches!(
            build_graph(GraphKind::KRegular { k: 9 }, 9, &mut rng()),
            Err(Error::Config(_))
        ));
        assert!(matches!(
            build_graph(GraphKind::KRegular { k: 3 }, 9, &mut rng()),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn er_graphs_are_connected() {
        let mut r = rng();
        for _ in 0..20 {
            let g = build_graph(GraphKind::ErdosRenyi { p: 0.5 }, 9, &mut r).unwrap();
            assert!(g.is_connected());
        }
    }

    #[test]
    fn er_gives_up_loudly() {
        let r = build_graph(GraphKind::ErdosRenyi { p: 1e-9 }, 30, &mut rng());
        assert!(matches!(r, Err(Error::Generation(_))));
    }

    #[test]
    fn fixed_ring_weights() {
        let g = build_graph(GraphKind::Ring, 20, &mut rng()).unwrap();
        let a = consensus_matrix(
            &g,
            ConsensusScheme::FixedRing {
                d_self: 0.4,
                d_off: 0.3,
            },
        )
        .unwrap();
        assert_eq!(a.eta(), 0.3);
        let w = a.weights();
        assert_eq!(w[(5, 5)], 0.4);
        assert_eq!(w[(5, 4)], 0.3);
        assert_eq!(w[(5, 6)], 0.3);
        assert_eq!(w[(0, 19)], 0.3);
        assert_eq!(w[(5, 7)], 0.0);
        let report = a.validate();
        assert!(report.is_doubly_stochastic);
        assert_eq!(report.eta, 0.3);
        a.check_assumption(&g).unwrap();
    }

    #[test]
    fn fixed_ring_rejects_non_ring() {
        let g = build_graph(GraphKind::Complete, 5, &mut rng()).unwrap();
        let r = consensus_matrix(
            &g,
            ConsensusScheme::FixedRing {
                d_self: 0.4,
                d_off: 0.3,
            },
        );
        assert!(matches!(r, Err(Error::Config(_))));
    }

    #[test]
    fn metropolis_on_complete_is_exact_average() {
        let n = 6;
        let g = build_graph(GraphKind::Complete, n, &mut rng()).unwrap();
        let a = consensus_matrix(&g, ConsensusScheme::Metropolis).unwrap();
        for w in a.weights().iter() {
            assert!((w - 1.0 / n as f64).abs() < 1e-15);
        }
        let report = a.validate();
        assert!(report.second_singular_value < 1e-12);
    }

    #[test]
    fn uniform_average_on_irregular_graph_is_flagged() {
        // star: center has degree 3, leaves degree 1
        let g = Graph::from_edges(4, [(0, 1), (0, 2), (0, 3)]).unwrap();
        let a = consensus_matrix(&g, ConsensusScheme::UniformAverage).unwrap();
        let report = a.validate();
        assert!(!report.is_doubly_stochastic);
        assert!(report.row_sum_error < 1e-12);
        assert!(matches!(a.check_assumption(&g), Err(Error::Assumption { .. })));
    }

    #[test]
    fn uniform_average_on_regular_graph_is_doubly_stochastic() {
        let g = build_graph(GraphKind::KRegular { k: 4 }, 9, &mut rng()).unwrap();
        let a = consensus_matrix(&g, ConsensusScheme::UniformAverage).unwrap();
        assert!(a.validate().is_doubly_stochastic);
        assert!((a.eta() - 0.2).abs() < 1e-15);
    }

    #[test]
    fn identity_diagnostics() {
        let r = validate_consensus(&DMatrix::identity(2, 2));
        assert!(r.is_doubly_stochastic);
        assert_eq!(r.eta, 1.0);
        assert!((r.second_singular_value - 1.0).abs() < 1e-15);
    }

    #[test]
    fn exact_average_diagnostics() {
        let n = 5;
        let r = validate_consensus(&DMatrix::from_element(n, n, 1.0 / n as f64));
        assert!((r.eta - 0.2).abs() < 1e-15);
        assert!(r.second_singular_value < 1e-12);
    }

    #[test]
    fn step_size_examples() {
        let c = step_size_condition(0.04, 10, 1.0, 3).unwrap();
        assert!(c.ok);
        assert_eq!(c.rho, 0.0);

        for eta in [0.1, 0.5, 1.0] {
            assert!(!step_size_condition(0.06, 10, eta, 2).unwrap().ok);
        }

        let c = step_size_condition(0.01, 10, 0.5, 2).unwrap();
        assert!(c.ok);
        assert!((c.threshold - 0.25).abs() < 1e-15);
        assert!((c.rho - 0.7).abs() < 1e-12);
    }

    #[test]
    fn step_size_rejects_bad_arguments() {
        assert!(step_size_condition(0.0, 1, 0.5, 2).is_err());
        assert!(step_size_condition(0.1, 0, 0.5, 2).is_err());
        assert!(step_size_condition(0.1, 1, 1.5, 2).is_err());
    }

    fn power_gap(a: &DMatrix<f64>, power: usize) -> f64 {
        let n = a.nrows();
        let avg = DMatrix::from_element(n, n, 1.0 / n as f64);
        let mut p = DMatrix::identity(n, n);
        for _ in 0..power {
            p = &p * a;
        }
        (p - avg).norm()
    }

    #[test]
    fn powers_converge_to_averaging() {
        let mut r = rng();
        for kind in [
            GraphKind::Ring,
            GraphKind::KRegular { k: 4 },
            GraphKind::ErdosRenyi { p: 0.5 },
            GraphKind::Complete,
        ] {
            let g = build_graph(kind, 9, &mut r).unwrap();
            let a = consensus_matrix(&g, ConsensusScheme::Metropolis).unwrap();
            let gaps: Vec<f64> = [1, 10, 100].iter().map(|&l| power_gap(a.weights(), l)).collect();
            assert!(gaps[1] < gaps[0] || gaps[0] < 1e-12, "{kind:?}: {gaps:?}");
            assert!(gaps[2] < gaps[1] || gaps[1] < 1e-12, "{kind:?}: {gaps:?}");
            // geometric: the 10 -> 100 drop is at least the 1 -> 10 ratio raised to ~10
            let sigma2 = a.validate().second_singular_value;
            assert!(gaps[2] <= sigma2.powi(100) * 9.0f64.sqrt() + 1e-12);
        }
    }

    proptest! {
        #[test]
        fn metropolis_is_doubly_stochastic(n in 2usize..14, p in 0.2f64..1.0, seed in any::<u64>()) {
            let mut r = rng_from_seed(seed);
            let g = build_graph(GraphKind::ErdosRenyi { p }, n, &mut r).unwrap();
            let a = consensus_matrix(&g, ConsensusScheme::Metropolis).unwrap();
            let w = a.weights();
            for i in 0..n {
                prop_assert!((w.row(i).sum() - 1.0).abs() <= 1e-12);
                prop_assert!((w.column(i).sum() - 1.0).abs() <= 1e-12);
                for j in 0..n {
                    prop_assert!(w[(i, j)] >= 0.0);
                    prop_assert_eq!(w[(i, j)] > 0.0, i == j || g.has_edge(i, j));
                }
            }
            a.check_assumption(&g).unwrap();
        }

        #[test]
        fn accepted_step_sizes_contract(beta in 1e-6f64..1.0, k in 1usize..300, eta in 0.01f64..1.0, n in 1usize..30) {
            let c = step_size_condition(beta, k, eta, n).unwrap();
            if c.ok {
                prop_assert!(c.rho >= 0.0 && c.rho < 1.0);
            }
        }
    }
}
