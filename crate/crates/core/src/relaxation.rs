//! Edge-variable LP relaxation.
//!
//! Every edge `(s,t)` owns a vector `y_st` over its joint states (row-major,
//! `k = i * |X_t| + j`). Node marginals are read off an edge by summing rows or
//! columns, and consistency rows force all incident edges of a node to agree
//! on its marginal.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{degree_check, Assignment, EdgeCost, EdgeId, Endpoint, Graph, NodeId};

/// Variable cap for materialising the full LP.
pub const DEFAULT_MAX_LP_VARIABLES: usize = 2_000_000;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum RelaxationError {
    #[error("edge vector has length {got}, expected {expected}")]
    LengthMismatch { expected: usize, got: usize },
    #[error("node {0} has no incident edge")]
    IsolatedNode(NodeId),
    #[error("missing cost for edge {0}")]
    MissingEdgeCost(EdgeId),
    #[error("full LP would have {variables} variables, above the cap of {cap}")]
    TooLarge { variables: usize, cap: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Sense {
    #[serde(rename = "<=")]
    Le,
    #[serde(rename = "=")]
    Eq,
    #[serde(rename = ">=")]
    Ge,
}

impl Sense {
    pub fn holds(self, lhs: f64, rhs: f64, tol: f64) -> bool {
        match self {
            Sense::Le => lhs <= rhs + tol,
            Sense::Eq => (lhs - rhs).abs() <= tol,
            Sense::Ge => lhs >= rhs - tol,
        }
    }
}

/// Node marginal of an edge vector: row sums for `S`, column sums for `T`.
pub fn marginalize(y: &[f64], rows: usize, cols: usize, endpoint: Endpoint) -> Result<Vec<f64>, RelaxationError> {
    if y.len() != rows * cols {
        return Err(RelaxationError::LengthMismatch { expected: rows * cols, got: y.len() });
    }
    Ok(match endpoint {
        Endpoint::S => y.chunks_exact(cols).map(|r| r.iter().sum()).collect(),
        Endpoint::T => {
            let mut out = vec![0.0; cols];
            for r in y.chunks_exact(cols) {
                for (o, v) in out.iter_mut().zip(r) {
                    *o += v;
                }
            }
            out
        }
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum RowKind {
    /// `M_node(y_reference) - M_node(y_other) = 0` at `state`.
    Consistency { node: NodeId, reference: EdgeId, other: EdgeId, state: usize },
    /// Row generated from the side constraint with this index.
    Side { constraint: usize },
}

#[derive(Debug, Clone, PartialEq)]
pub struct RowSpec {
    pub kind: RowKind,
    pub sense: Sense,
    pub rhs: f64,
}

/// One coefficient of `B_st`: `coef` times the marginal of `endpoint` at `state`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BlockTerm {
    pub row: usize,
    pub endpoint: Endpoint,
    pub state: usize,
    pub coef: f64,
}

impl BlockTerm {
    #[inline]
    pub fn matches(&self, i: usize, j: usize) -> bool {
        match self.endpoint {
            Endpoint::S => self.state == i,
            Endpoint::T => self.state == j,
        }
    }
}

/// Column `k = (i, j)` of a block: the sparse vector `B_st e_k`, sorted by
/// row, zero entries dropped. `terms` must be sorted by row.
pub fn block_column(terms: &[BlockTerm], cols: usize, k: usize) -> Vec<(usize, f64)> {
    let (i, j) = (k / cols, k % cols);
    let mut out: Vec<(usize, f64)> = Vec::new();
    for t in terms.iter().filter(|t| t.matches(i, j)) {
        match out.last_mut() {
            Some((row, coef)) if *row == t.row => *coef += t.coef,
            _ => out.push((t.row, t.coef)),
        }
    }
    out.retain(|&(_, c)| c != 0.0);
    out
}

/// Global constraint rows over edge marginals, plus each edge's block `B_st`.
#[derive(Debug, Clone, PartialEq)]
pub struct ConstraintSystem {
    rows: Vec<RowSpec>,
    blocks: Vec<Vec<BlockTerm>>,
    edge_dims: Vec<(usize, usize)>,
}

impl ConstraintSystem {
    pub fn empty(g: &Graph) -> Self {
        Self {
            rows: Vec::new(),
            blocks: vec![Vec::new(); g.num_edges()],
            edge_dims: g.edges().iter().map(|e| (g.cardinality(e.s), g.cardinality(e.t))).collect(),
        }
    }

    pub fn num_rows(&self) -> usize {
        self.rows.len()
    }

    pub fn num_edges(&self) -> usize {
        self.blocks.len()
    }

    pub fn rows(&self) -> &[RowSpec] {
        &self.rows
    }

    pub fn block(&self, edge: EdgeId) -> &[BlockTerm] {
        &self.blocks[edge]
    }

    pub fn edge_dims(&self, edge: EdgeId) -> (usize, usize) {
        self.edge_dims[edge]
    }

    pub fn num_consistency_rows(&self) -> usize {
        self.rows.iter().filter(|r| matches!(r.kind, RowKind::Consistency { .. })).count()
    }

    /// Append a row. `terms` are `(edge, endpoint, state, coef)`.
    pub fn push_row(&mut self, spec: RowSpec, terms: impl IntoIterator<Item = (EdgeId, Endpoint, usize, f64)>) -> usize {
        let row = self.rows.len();
        self.rows.push(spec);
        for (edge, endpoint, state, coef) in terms {
            self.blocks[edge].push(BlockTerm { row, endpoint, state, coef });
        }
        row
    }

    /// `B_st e_k` for edge `edge`.
    pub fn column(&self, edge: EdgeId, k: usize) -> Vec<(usize, f64)> {
        block_column(&self.blocks[edge], self.edge_dims[edge].1, k)
    }

    /// Distinct rows touched by an edge's block, ascending.
    pub fn rows_touching(&self, edge: EdgeId) -> Vec<usize> {
        let mut rows: Vec<usize> = self.blocks[edge].iter().map(|t| t.row).collect();
        rows.dedup();
        rows
    }

    /// Row activities `sum_st B_st y_st` for per-edge vectors `y`.
    pub fn activities(&self, y: &[Vec<f64>]) -> Vec<f64> {
        let mut act = vec![0.0; self.rows.len()];
        for (edge, terms) in self.blocks.iter().enumerate() {
            let (rows, cols) = self.edge_dims[edge];
            let ms = marginalize(&y[edge], rows, cols, Endpoint::S).expect("edge vector length");
            let mt = marginalize(&y[edge], rows, cols, Endpoint::T).expect("edge vector length");
            for t in terms {
                let m = match t.endpoint {
                    Endpoint::S => ms[t.state],
                    Endpoint::T => mt[t.state],
                };
                act[t.row] += t.coef * m;
            }
        }
        act
    }
}

/// Consistency rows in reference-edge form: for each node with incident
/// edges `e_1 < ... < e_d`, one row per state and per `m = 2..d` equating the
/// marginal on `e_1` with the marginal on `e_m`.
pub fn build_consistency_rows(g: &Graph) -> Result<ConstraintSystem, RelaxationError> {
    if let Some(&node) = degree_check(g).first() {
        return Err(RelaxationError::IsolatedNode(node));
    }
    let mut cs = ConstraintSystem::empty(g);
    for node in 0..g.num_nodes() {
        let incident = g.incident(node);
        let reference = incident[0];
        let ref_end = g.endpoint_of(reference, node);
        for &other in &incident[1..] {
            let other_end = g.endpoint_of(other, node);
            for state in 0..g.cardinality(node) {
                cs.push_row(
                    RowSpec {
                        kind: RowKind::Consistency { node, reference, other, state },
                        sense: Sense::Eq,
                        rhs: 0.0,
                    },
                    [(reference, ref_end, state, 1.0), (other, other_end, state, -1.0)],
                );
            }
        }
    }
    Ok(cs)
}

/// Start offset of each edge's variables in the concatenated vector.
pub fn variable_offsets(g: &Graph) -> Vec<usize> {
    let mut offsets = Vec::with_capacity(g.num_edges() + 1);
    let mut acc = 0;
    offsets.push(0);
    for e in 0..g.num_edges() {
        acc += g.edge_size(e);
        offsets.push(acc);
    }
    offsets
}

/// Index of the one-hot entry of `y_st` for an integral assignment.
pub fn one_hot_index(g: &Graph, edge: EdgeId, a: &Assignment) -> usize {
    let e = &g.edges()[edge];
    a.state(e.s) * g.cardinality(e.t) + a.state(e.t)
}

/// Per-edge one-hot vectors encoding an integral assignment.
pub fn integral_edge_vectors(g: &Graph, a: &Assignment) -> Vec<Vec<f64>> {
    (0..g.num_edges())
        .map(|e| {
            let mut y = vec![0.0; g.edge_size(e)];
            y[one_hot_index(g, e, a)] = 1.0;
            y
        })
        .collect()
}

pub type SparseRow = Vec<(usize, f64)>;

/// A fully materialised LP: maximise `objective . x` subject to
/// `eq_rows x = eq_rhs`, `ub_rows x <= ub_rhs`, `lower <= x <= upper`.
/// Row coefficients are stored sparsely.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct DenseLp {
    pub objective: Vec<f64>,
    pub eq_rows: Vec<SparseRow>,
    pub eq_rhs: Vec<f64>,
    pub ub_rows: Vec<SparseRow>,
    pub ub_rhs: Vec<f64>,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

impl DenseLp {
    pub fn num_vars(&self) -> usize {
        self.objective.len()
    }

    pub fn num_rows(&self) -> usize {
        self.eq_rows.len() + self.ub_rows.len()
    }

    /// Non-negative variables with no upper bound.
    pub fn nonnegative(objective: Vec<f64>) -> Self {
        let n = objective.len();
        Self { objective, lower: vec![0.0; n], upper: vec![f64::INFINITY; n], ..Default::default() }
    }

    pub fn add_eq(&mut self, row: SparseRow, rhs: f64) {
        self.eq_rows.push(row);
        self.eq_rhs.push(rhs);
    }

    pub fn add_ub(&mut self, row: SparseRow, rhs: f64) {
        self.ub_rows.push(row);
        self.ub_rhs.push(rhs);
    }

    pub fn objective_value(&self, x: &[f64]) -> f64 {
        self.objective.iter().zip(x).map(|(c, v)| c * v).sum()
    }
}

/// The full relaxation together with its variable layout.
#[derive(Debug, Clone)]
pub struct FullLp {
    pub lp: DenseLp,
    pub offsets: Vec<usize>,
    pub normalization_rows: usize,
}

impl FullLp {
    /// Split a primal vector into per-edge `y_st`.
    pub fn edge_vectors(&self, x: &[f64]) -> Vec<Vec<f64>> {
        self.offsets.windows(2).map(|w| x[w[0]..w[1]].to_vec()).collect()
    }
}

/// Materialise the full relaxation: consistency and equality side rows, one
/// normalisation row per edge, inequality side rows, and `[0, 1]` bounds.
pub fn assemble_full_lp(
    g: &Graph,
    cs: &ConstraintSystem,
    costs: &[EdgeCost],
    max_variables: usize,
) -> Result<FullLp, RelaxationError> {
    let offsets = variable_offsets(g);
    let n = *offsets.last().unwrap_or(&0);
    if n > max_variables {
        return Err(RelaxationError::TooLarge { variables: n, cap: max_variables });
    }
    let mut objective = vec![0.0; n];
    for edge in 0..g.num_edges() {
        let cost = costs.iter().find(|c| c.edge == edge).ok_or(RelaxationError::MissingEdgeCost(edge))?;
        if cost.values.len() != g.edge_size(edge) {
            return Err(RelaxationError::LengthMismatch { expected: g.edge_size(edge), got: cost.values.len() });
        }
        objective[offsets[edge]..offsets[edge + 1]].copy_from_slice(&cost.values);
    }

    let mut rows: Vec<SparseRow> = vec![Vec::new(); cs.num_rows()];
    for edge in 0..g.num_edges() {
        let size = g.edge_size(edge);
        for k in 0..size {
            for (r, coef) in cs.column(edge, k) {
                rows[r].push((offsets[edge] + k, coef));
            }
        }
    }

    let mut lp = DenseLp {
        objective,
        lower: vec![0.0; n],
        upper: vec![1.0; n],
        ..Default::default()
    };
    let mut ub = Vec::new();
    for (spec, row) in cs.rows().iter().zip(rows) {
        match spec.sense {
            Sense::Eq => lp.add_eq(row, spec.rhs),
            Sense::Le => ub.push((row, spec.rhs)),
            Sense::Ge => ub.push((row.into_iter().map(|(j, c)| (j, -c)).collect(), -spec.rhs)),
        }
    }
    for edge in 0..g.num_edges() {
        lp.add_eq((offsets[edge]..offsets[edge + 1]).map(|j| (j, 1.0)).collect(), 1.0);
    }
    for (row, rhs) in ub {
        lp.add_ub(row, rhs);
    }
    Ok(FullLp { lp, offsets, normalization_rows: g.num_edges() })
}
