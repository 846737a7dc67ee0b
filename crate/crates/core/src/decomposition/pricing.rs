//! Per-edge pricing subprograms.
//!
//! An edge's subprogram maximises `(c_st - B_st^T pi) . y` over the simplex
//! `sum_k y^k = 1, y >= 0`, so its optimum is always a one-hot vertex and
//! pricing reduces to an argmax over the adjusted cost vector.

use std::collections::HashSet;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::model::{EdgeCost, EdgeId};
use crate::relaxation::{block_column, BlockTerm, ConstraintSystem};

use super::{DecompositionError, Duals};

/// How to choose among subprogram vertices with equal adjusted cost.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TieRule {
    /// Lowest joint-state index.
    #[default]
    LowestIndex,
    /// Largest unadjusted edge cost, then lowest index.
    MaxCost,
}

impl TieRule {
    pub fn as_str(self) -> &'static str {
        match self {
            TieRule::LowestIndex => "lowest-index",
            TieRule::MaxCost => "max-cost",
        }
    }

    pub fn to_wire(self) -> u8 {
        match self {
            TieRule::LowestIndex => 0,
            TieRule::MaxCost => 1,
        }
    }

    pub fn from_wire(b: u8) -> Option<Self> {
        match b {
            0 => Some(TieRule::LowestIndex),
            1 => Some(TieRule::MaxCost),
            _ => None,
        }
    }
}

impl fmt::Display for TieRule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for TieRule {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "lowest-index" | "bland" => Ok(TieRule::LowestIndex),
            "max-cost" | "largest-coefficient" => Ok(TieRule::MaxCost),
            other => Err(format!("unknown tie rule '{other}' (expected lowest-index or max-cost)")),
        }
    }
}

/// One column of the master program: a one-hot vertex of an edge subprogram.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Column {
    pub edge: EdgeId,
    /// Index `k` of the active joint state.
    pub solution_index: usize,
    /// `c_st[k]`.
    pub cost: f64,
    /// `B_st e_k`, sorted by row.
    pub constraint_column: Vec<(usize, f64)>,
    /// Iteration at which the column was priced (0 for initial columns).
    pub iteration: usize,
}

impl Column {
    pub fn key(&self) -> (EdgeId, usize) {
        (self.edge, self.solution_index)
    }
}

/// A priced subprogram solution with its reduced cost `c~[k*] - gamma`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Candidate {
    pub column: Column,
    pub reduced_cost: f64,
}

/// Everything needed to price one edge, and nothing more. This is the data a
/// pricing worker keeps for the edges it owns.
#[derive(Debug, Clone, PartialEq)]
pub struct EdgeSubproblem {
    pub edge: EdgeId,
    pub rows: usize,
    pub cols: usize,
    pub costs: Vec<f64>,
    /// Block `B_st`, sorted by row.
    pub terms: Vec<BlockTerm>,
}

impl EdgeSubproblem {
    pub fn new(cost: &EdgeCost, cs: &ConstraintSystem) -> Self {
        Self {
            edge: cost.edge,
            rows: cost.rows,
            cols: cost.cols,
            costs: cost.values.clone(),
            terms: cs.block(cost.edge).to_vec(),
        }
    }

    pub fn size(&self) -> usize {
        self.rows * self.cols
    }

    /// Distinct rows this edge's block touches, ascending.
    pub fn rows_touching(&self) -> Vec<usize> {
        let mut rows: Vec<usize> = self.terms.iter().map(|t| t.row).collect();
        rows.dedup();
        rows
    }

    /// `c_st - B_st^T pi`. Terms are applied in block order so that every
    /// caller sees the same floating-point result.
    pub fn adjusted_costs(&self, pi: impl Fn(usize) -> f64) -> Vec<f64> {
        let mut adjusted = self.costs.clone();
        for t in &self.terms {
            let delta = pi(t.row) * t.coef;
            if delta == 0.0 {
                continue;
            }
            match t.endpoint {
                crate::model::Endpoint::S => {
                    for v in &mut adjusted[t.state * self.cols..(t.state + 1) * self.cols] {
                        *v -= delta;
                    }
                }
                crate::model::Endpoint::T => {
                    for v in adjusted.iter_mut().skip(t.state).step_by(self.cols) {
                        *v -= delta;
                    }
                }
            }
        }
        adjusted
    }

    pub fn column(&self, k: usize, iteration: usize) -> Column {
        Column {
            edge: self.edge,
            solution_index: k,
            cost: self.costs[k],
            constraint_column: block_column(&self.terms, self.cols, k),
            iteration,
        }
    }

    /// Best vertex under the adjusted cost, with reduced cost against `gamma`.
    pub fn price(&self, pi: impl Fn(usize) -> f64, gamma: f64, tie: TieRule, iteration: usize) -> Candidate {
        let adjusted = self.adjusted_costs(pi);
        let k = choose_index(&adjusted, &self.costs, tie);
        Candidate { reduced_cost: adjusted[k] - gamma, column: self.column(k, iteration) }
    }
}

/// Argmax of `adjusted` with ties resolved by `tie`. Values within a
/// relative `1e-12` of the maximum count as tied.
pub fn choose_index(adjusted: &[f64], actual: &[f64], tie: TieRule) -> usize {
    let best = adjusted.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let eps = 1e-12 * (1.0 + best.abs());
    let mut tied = adjusted.iter().enumerate().filter(|(_, &v)| v >= best - eps).map(|(k, _)| k);
    let first = tied.next().expect("non-empty cost vector");
    match tie {
        TieRule::LowestIndex => first,
        TieRule::MaxCost => tied.fold(first, |acc, k| if actual[k] > actual[acc] { k } else { acc }),
    }
}

/// Price one edge against the current duals.
pub fn price_subprogram(
    sub: &EdgeSubproblem,
    duals: &Duals,
    tie: TieRule,
    iteration: usize,
) -> Result<Candidate, DecompositionError> {
    if let Some(t) = sub.terms.iter().find(|t| t.row >= duals.pi.len()) {
        return Err(DecompositionError::DualDimension { row: t.row, rows: duals.pi.len() });
    }
    let gamma = *duals
        .gamma
        .get(sub.edge)
        .ok_or(DecompositionError::DualDimension { row: sub.edge, rows: duals.gamma.len() })?;
    Ok(sub.price(|r| duals.pi[r], gamma, tie, iteration))
}

/// Columns worth adding: reduced cost above `tol`, not already pooled,
/// largest cost first, at most `cap`.
pub fn select_columns(
    candidates: &[Candidate],
    pooled: &HashSet<(EdgeId, usize)>,
    cap: Option<usize>,
    tol: f64,
) -> Vec<Column> {
    let mut chosen: Vec<&Candidate> = candidates
        .iter()
        .filter(|c| c.reduced_cost > tol && !pooled.contains(&c.column.key()))
        .collect();
    // stable: equal costs keep edge order
    chosen.sort_by(|a, b| b.column.cost.total_cmp(&a.column.cost));
    if let Some(cap) = cap {
        chosen.truncate(cap);
    }
    chosen.into_iter().map(|c| c.column.clone()).collect()
}
