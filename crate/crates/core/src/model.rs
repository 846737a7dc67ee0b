//! Discrete pairwise Markov random fields.
//!
//! A [`Graph`] holds per-node state counts, local potentials `phi_s` and
//! pairwise potentials `phi_st` in log space. Pairwise tables are stored
//! row-major with the first endpoint's state as the row index.

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub type NodeId = usize;
pub type EdgeId = usize;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error("node {node} has zero states")]
    ZeroCardinality { node: NodeId },
    #[error("expected {expected} local potential vectors, got {got}")]
    LocalCount { expected: usize, got: usize },
    #[error("local potential of node {node} has length {got}, expected {expected}")]
    LocalShape { node: NodeId, expected: usize, got: usize },
    #[error("edge {edge} references node {node} but the graph has {num_nodes} nodes")]
    InvalidEndpoint { edge: EdgeId, node: NodeId, num_nodes: usize },
    #[error("edge {edge} is a self-loop on node {node}")]
    SelfLoop { edge: EdgeId, node: NodeId },
    #[error("edge {edge} duplicates the pair ({s}, {t})")]
    DuplicateEdge { edge: EdgeId, s: NodeId, t: NodeId },
    #[error("pairwise table of edge {edge} has length {got}, expected {expected}")]
    PairwiseShape { edge: EdgeId, expected: usize, got: usize },
    #[error("non-finite potential value in {location}")]
    NonFinite { location: String },
    #[error("unknown edge id {0}")]
    UnknownEdge(EdgeId),
    #[error("assignment has {got} entries, graph has {expected} nodes")]
    AssignmentLength { expected: usize, got: usize },
    #[error("state {state} is out of range for node {node} with {cardinality} states")]
    InvalidState { node: NodeId, state: usize, cardinality: usize },
}

/// A pairwise factor between nodes `s` and `t`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Edge {
    pub s: NodeId,
    pub t: NodeId,
    /// Row-major `|X_s| x |X_t|` table.
    pub table: Vec<f64>,
}

impl Edge {
    pub fn new(s: NodeId, t: NodeId, table: Vec<f64>) -> Self {
        Self { s, t, table }
    }
}

/// Which end of an edge a quantity refers to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Endpoint {
    S,
    T,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Graph {
    cardinalities: Vec<usize>,
    local: Vec<Vec<f64>>,
    edges: Vec<Edge>,
    incident: Vec<Vec<EdgeId>>,
}

impl Graph {
    pub fn new(
        cardinalities: Vec<usize>,
        local: Vec<Vec<f64>>,
        edges: Vec<Edge>,
    ) -> Result<Self, ModelError> {
        let n = cardinalities.len();
        if let Some(node) = cardinalities.iter().position(|&c| c == 0) {
            return Err(ModelError::ZeroCardinality { node });
        }
        if local.len() != n {
            return Err(ModelError::LocalCount { expected: n, got: local.len() });
        }
        for (node, (phi, &card)) in local.iter().zip(&cardinalities).enumerate() {
            if phi.len() != card {
                return Err(ModelError::LocalShape { node, expected: card, got: phi.len() });
            }
            if phi.iter().any(|v| !v.is_finite()) {
                return Err(ModelError::NonFinite { location: format!("local potential of node {node}") });
            }
        }

        let mut incident = vec![Vec::new(); n];
        let mut seen = std::collections::HashSet::with_capacity(edges.len());
        for (id, e) in edges.iter().enumerate() {
            for node in [e.s, e.t] {
                if node >= n {
                    return Err(ModelError::InvalidEndpoint { edge: id, node, num_nodes: n });
                }
            }
            if e.s == e.t {
                return Err(ModelError::SelfLoop { edge: id, node: e.s });
            }
            if !seen.insert((e.s.min(e.t), e.s.max(e.t))) {
                return Err(ModelError::DuplicateEdge { edge: id, s: e.s, t: e.t });
            }
            let expected = cardinalities[e.s] * cardinalities[e.t];
            if e.table.len() != expected {
                return Err(ModelError::PairwiseShape { edge: id, expected, got: e.table.len() });
            }
            if e.table.iter().any(|v| !v.is_finite()) {
                return Err(ModelError::NonFinite { location: format!("pairwise table of edge {id}") });
            }
            incident[e.s].push(id);
            incident[e.t].push(id);
        }

        Ok(Self { cardinalities, local, edges, incident })
    }

    /// Graph with all potentials zero.
    pub fn zeros(cardinalities: Vec<usize>, pairs: &[(NodeId, NodeId)]) -> Result<Self, ModelError> {
        let local = cardinalities.iter().map(|&c| vec![0.0; c]).collect();
        let edges = pairs
            .iter()
            .map(|&(s, t)| {
                let len = cardinalities.get(s).copied().unwrap_or(0) * cardinalities.get(t).copied().unwrap_or(0);
                Edge::new(s, t, vec![0.0; len])
            })
            .collect();
        Self::new(cardinalities, local, edges)
    }

    pub fn num_nodes(&self) -> usize {
        self.cardinalities.len()
    }

    pub fn num_edges(&self) -> usize {
        self.edges.len()
    }

    pub fn cardinality(&self, node: NodeId) -> usize {
        self.cardinalities[node]
    }

    pub fn cardinalities(&self) -> &[usize] {
        &self.cardinalities
    }

    pub fn local(&self, node: NodeId) -> &[f64] {
        &self.local[node]
    }

    pub fn locals(&self) -> &[Vec<f64>] {
        &self.local
    }

    pub fn edge(&self, id: EdgeId) -> Result<&Edge, ModelError> {
        self.edges.get(id).ok_or(ModelError::UnknownEdge(id))
    }

    pub fn edges(&self) -> &[Edge] {
        &self.edges
    }

    /// Incident edge ids of `node`, ascending.
    pub fn incident(&self, node: NodeId) -> &[EdgeId] {
        &self.incident[node]
    }

    pub fn degree(&self, node: NodeId) -> usize {
        self.incident[node].len()
    }

    /// The node at the other end of `edge` from `node`.
    pub fn neighbour(&self, edge: EdgeId, node: NodeId) -> NodeId {
        let e = &self.edges[edge];
        if e.s == node {
            e.t
        } else {
            e.s
        }
    }

    /// Which end of `edge` the node sits on. Panics if `node` is not an endpoint.
    pub fn endpoint_of(&self, edge: EdgeId, node: NodeId) -> Endpoint {
        let e = &self.edges[edge];
        if e.s == node {
            Endpoint::S
        } else {
            assert_eq!(e.t, node, "node {node} is not an endpoint of edge {edge}");
            Endpoint::T
        }
    }

    /// Number of joint states `|X_s| * |X_t|` of an edge.
    pub fn edge_size(&self, edge: EdgeId) -> usize {
        let e = &self.edges[edge];
        self.cardinalities[e.s] * self.cardinalities[e.t]
    }

    /// Total size of the joint state space, saturating at `f64` precision.
    pub fn state_space_size(&self) -> f64 {
        self.cardinalities.iter().map(|&c| c as f64).product()
    }

    pub fn validate_assignment(&self, a: &Assignment) -> Result<(), ModelError> {
        if a.len() != self.num_nodes() {
            return Err(ModelError::AssignmentLength { expected: self.num_nodes(), got: a.len() });
        }
        for (node, &state) in a.states().iter().enumerate() {
            let cardinality = self.cardinalities[node];
            if state >= cardinality {
                return Err(ModelError::InvalidState { node, state, cardinality });
            }
        }
        Ok(())
    }

    /// Direct log-score `sum phi_s(x_s) + sum phi_st(x_s, x_t)` without the
    /// partition constant.
    pub fn log_score(&self, a: &Assignment) -> Result<f64, ModelError> {
        self.validate_assignment(a)?;
        let x = a.states();
        let local: f64 = self.local.iter().zip(x).map(|(phi, &i)| phi[i]).sum();
        let pairwise: f64 = self
            .edges
            .iter()
            .map(|e| e.table[x[e.s] * self.cardinalities[e.t] + x[e.t]])
            .sum();
        Ok(local + pairwise)
    }

    /// Remove degree-0 nodes, renumbering the rest. Edge ids are preserved.
    pub fn without_isolated(&self) -> ReducedGraph {
        let isolated = degree_check(self);
        let mut new_index = vec![usize::MAX; self.num_nodes()];
        let mut node_map = Vec::with_capacity(self.num_nodes() - isolated.len());
        for node in 0..self.num_nodes() {
            if self.degree(node) > 0 {
                new_index[node] = node_map.len();
                node_map.push(node);
            }
        }
        let cardinalities = node_map.iter().map(|&n| self.cardinalities[n]).collect();
        let local = node_map.iter().map(|&n| self.local[n].clone()).collect();
        let edges = self
            .edges
            .iter()
            .map(|e| Edge::new(new_index[e.s], new_index[e.t], e.table.clone()))
            .collect();
        let graph = Graph::new(cardinalities, local, edges).expect("subgraph of a valid graph is valid");
        ReducedGraph { graph, node_map, isolated }
    }
}

/// A graph with its isolated nodes split off.
#[derive(Debug, Clone)]
pub struct ReducedGraph {
    pub graph: Graph,
    /// Reduced node index -> original node index.
    pub node_map: Vec<NodeId>,
    /// Original ids of the removed degree-0 nodes.
    pub isolated: Vec<NodeId>,
}

impl ReducedGraph {
    /// Original node id -> reduced id, `None` for isolated nodes.
    pub fn reduced_index(&self, original: NodeId) -> Option<NodeId> {
        self.node_map.binary_search(&original).ok()
    }

    /// Expand an assignment of the reduced graph to the original graph,
    /// setting each isolated node to its local argmax.
    pub fn lift(&self, original: &Graph, reduced: &Assignment) -> Assignment {
        let mut states = vec![0; original.num_nodes()];
        for (r, &o) in self.node_map.iter().enumerate() {
            states[o] = reduced.state(r);
        }
        for &o in &self.isolated {
            states[o] = argmax_first(original.local(o));
        }
        Assignment::new(states)
    }
}

/// Per-node state indices, zero-based.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Assignment(Vec<usize>);

impl Assignment {
    pub fn new(states: Vec<usize>) -> Self {
        Self(states)
    }

    pub fn states(&self) -> &[usize] {
        &self.0
    }

    pub fn state(&self, node: NodeId) -> usize {
        self.0[node]
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn into_inner(self) -> Vec<usize> {
        self.0
    }
}

/// Flattened combined cost `c_st` of one edge, row-major over
/// `(state of s, state of t)`.
#[derive(Debug, Clone, PartialEq)]
pub struct EdgeCost {
    pub edge: EdgeId,
    pub rows: usize,
    pub cols: usize,
    pub values: Vec<f64>,
}

impl EdgeCost {
    #[inline]
    pub fn at(&self, i: usize, j: usize) -> f64 {
        self.values[i * self.cols + j]
    }
}

/// Combined pairwise cost with each endpoint's local potential spread evenly
/// over its incident edges: `Q[i][j] = phi_st[i][j] + phi_s[i]/deg(s) + phi_t[j]/deg(t)`.
pub fn combined_edge_cost(g: &Graph, edge: EdgeId) -> Result<EdgeCost, ModelError> {
    let e = g.edge(edge)?;
    let (rows, cols) = (g.cardinality(e.s), g.cardinality(e.t));
    let (ds, dt) = (g.degree(e.s) as f64, g.degree(e.t) as f64);
    let (phi_s, phi_t) = (g.local(e.s), g.local(e.t));
    let mut values = Vec::with_capacity(rows * cols);
    for i in 0..rows {
        let row_share = phi_s[i] / ds;
        for j in 0..cols {
            values.push(e.table[i * cols + j] + row_share + phi_t[j] / dt);
        }
    }
    Ok(EdgeCost { edge, rows, cols, values })
}

pub fn all_edge_costs(g: &Graph) -> Vec<EdgeCost> {
    (0..g.num_edges())
        .map(|e| combined_edge_cost(g, e).expect("edge id in range"))
        .collect()
}

/// MAP objective through the combined edge costs. Isolated nodes carry no
/// edge, so their local potential is added directly.
pub fn map_objective(g: &Graph, a: &Assignment) -> Result<f64, ModelError> {
    g.validate_assignment(a)?;
    let x = a.states();
    let mut total = 0.0;
    for id in 0..g.num_edges() {
        let e = &g.edges[id];
        total += combined_edge_cost(g, id)?.at(x[e.s], x[e.t]);
    }
    for node in degree_check(g) {
        total += g.local(node)[x[node]];
    }
    Ok(total)
}

/// Nodes with no incident edge.
pub fn degree_check(g: &Graph) -> Vec<NodeId> {
    (0..g.num_nodes()).filter(|&n| g.degree(n) == 0).collect()
}

/// Index of the first maximal entry.
pub(crate) fn argmax_first(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best
}
