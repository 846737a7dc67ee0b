//! Global constraints over node indicators `x_s^i`.
//!
//! Constraints are linear in node indicators and enter the edge formulation
//! through one designated incident edge per node (the lowest edge id), via
//! `x_s^i = A_st^{i,.} y_st`.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::decomposition::initialization_scores;
use crate::model::{Assignment, Graph, NodeId};
use crate::relaxation::{ConstraintSystem, RowKind, RowSpec, Sense};

const FEAS_TOL: f64 = 1e-9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SideConstraintError {
    #[error("constraint {constraint} references node {node}, graph has {num_nodes} nodes")]
    InvalidNode { constraint: usize, node: NodeId, num_nodes: usize },
    #[error("constraint {constraint} references state {state} of node {node} with {cardinality} states")]
    InvalidState { constraint: usize, node: NodeId, state: usize, cardinality: usize },
    #[error("constraint {constraint} references isolated node {node}")]
    IsolatedNode { constraint: usize, node: NodeId },
    #[error("side constraints are unsatisfiable")]
    Unsatisfiable,
    #[error("search for a feasible assignment exceeded {0} expansions")]
    SearchBudgetExceeded(usize),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IndicatorTerm {
    pub node: NodeId,
    pub state: usize,
    pub coef: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum SideConstraint {
    /// No two listed nodes share a state, except the optional outlier state.
    Injective {
        nodes: Vec<NodeId>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        outlier: Option<usize>,
    },
    /// `sum coef * x_node^state  (sense)  rhs`.
    Linear { terms: Vec<IndicatorTerm>, sense: Sense, rhs: f64 },
}

/// One expanded linear row over node indicators.
#[derive(Debug, Clone, PartialEq)]
pub struct IndicatorRow {
    pub constraint: usize,
    pub terms: Vec<IndicatorTerm>,
    pub sense: Sense,
    pub rhs: f64,
}

impl IndicatorRow {
    pub fn activity(&self, a: &Assignment) -> f64 {
        self.terms.iter().filter(|t| a.state(t.node) == t.state).map(|t| t.coef).sum()
    }
}

impl SideConstraint {
    /// Injective constraint over every node of `g`.
    pub fn injective_all(g: &Graph, outlier: Option<usize>) -> Self {
        SideConstraint::Injective { nodes: (0..g.num_nodes()).collect(), outlier }
    }

    fn referenced(&self) -> Vec<(NodeId, Option<usize>)> {
        match self {
            SideConstraint::Injective { nodes, outlier } => nodes.iter().map(|&n| (n, *outlier)).collect(),
            SideConstraint::Linear { terms, .. } => terms.iter().map(|t| (t.node, Some(t.state))).collect(),
        }
    }

    pub fn validate(&self, g: &Graph, index: usize) -> Result<(), SideConstraintError> {
        for (node, state) in self.referenced() {
            if node >= g.num_nodes() {
                return Err(SideConstraintError::InvalidNode { constraint: index, node, num_nodes: g.num_nodes() });
            }
            if let Some(state) = state {
                let cardinality = g.cardinality(node);
                if state >= cardinality {
                    return Err(SideConstraintError::InvalidState { constraint: index, node, state, cardinality });
                }
            }
        }
        Ok(())
    }

    /// Linear rows equivalent to this constraint on integral assignments.
    /// Injective rows with fewer than two terms are always satisfied and
    /// are not emitted.
    pub fn expand(&self, g: &Graph, index: usize) -> Vec<IndicatorRow> {
        match self {
            SideConstraint::Injective { nodes, outlier } => {
                let max_card = nodes.iter().map(|&n| g.cardinality(n)).max().unwrap_or(0);
                (0..max_card)
                    .filter(|&j| Some(j) != *outlier)
                    .map(|j| IndicatorRow {
                        constraint: index,
                        terms: nodes
                            .iter()
                            .filter(|&&n| j < g.cardinality(n))
                            .map(|&n| IndicatorTerm { node: n, state: j, coef: 1.0 })
                            .collect(),
                        sense: Sense::Le,
                        rhs: 1.0,
                    })
                    .filter(|r| r.terms.len() >= 2)
                    .collect()
            }
            SideConstraint::Linear { terms, sense, rhs } => {
                vec![IndicatorRow { constraint: index, terms: terms.clone(), sense: *sense, rhs: *rhs }]
            }
        }
    }

    pub fn is_satisfied(&self, g: &Graph, a: &Assignment) -> bool {
        self.expand(g, 0).iter().all(|r| r.sense.holds(r.activity(a), r.rhs, FEAS_TOL))
    }

    /// Rewrite node ids through `map`; `None` marks a node that no longer exists.
    pub fn remap(&self, index: usize, map: impl Fn(NodeId) -> Option<NodeId>) -> Result<Self, SideConstraintError> {
        let get = |node| map(node).ok_or(SideConstraintError::IsolatedNode { constraint: index, node });
        Ok(match self {
            SideConstraint::Injective { nodes, outlier } => SideConstraint::Injective {
                nodes: nodes.iter().map(|&n| get(n)).collect::<Result<_, _>>()?,
                outlier: *outlier,
            },
            SideConstraint::Linear { terms, sense, rhs } => SideConstraint::Linear {
                terms: terms
                    .iter()
                    .map(|t| Ok(IndicatorTerm { node: get(t.node)?, ..t.clone() }))
                    .collect::<Result<_, _>>()?,
                sense: *sense,
                rhs: *rhs,
            },
        })
    }
}

pub fn expand_all(g: &Graph, sc: &[SideConstraint]) -> Vec<IndicatorRow> {
    sc.iter().enumerate().flat_map(|(i, c)| c.expand(g, i)).collect()
}

pub fn all_satisfied(g: &Graph, sc: &[SideConstraint], a: &Assignment) -> bool {
    sc.iter().all(|c| c.is_satisfied(g, a))
}

/// Nodes whose non-outlier state is shared with another listed node.
pub fn many_to_one_nodes(a: &Assignment, nodes: &[NodeId], outlier: Option<usize>) -> usize {
    let mut counts: BTreeMap<usize, usize> = BTreeMap::new();
    for &n in nodes {
        let s = a.state(n);
        if Some(s) != outlier {
            *counts.entry(s).or_default() += 1;
        }
    }
    counts.values().filter(|&&c| c > 1).sum()
}

/// Append side rows to `cs`, lifting each node indicator through the node's
/// lowest-id incident edge.
pub fn inject(mut cs: ConstraintSystem, sc: &[SideConstraint], g: &Graph) -> Result<ConstraintSystem, SideConstraintError> {
    for (index, c) in sc.iter().enumerate() {
        c.validate(g, index)?;
        for (node, _) in c.referenced() {
            if g.degree(node) == 0 {
                return Err(SideConstraintError::IsolatedNode { constraint: index, node });
            }
        }
        for row in c.expand(g, index) {
            let terms: Vec<_> = row
                .terms
                .iter()
                .map(|t| {
                    let edge = g.incident(t.node)[0];
                    (edge, g.endpoint_of(edge, t.node), t.state, t.coef)
                })
                .collect();
            cs.push_row(RowSpec { kind: RowKind::Side { constraint: index }, sense: row.sense, rhs: row.rhs }, terms);
        }
    }
    Ok(cs)
}

/// Incremental bound tracking for partial assignments: a row stays
/// satisfiable while its current activity plus the best and worst
/// contributions of unassigned nodes can still meet the sense.
pub(crate) struct PartialChecker {
    rows: Vec<CheckedRow>,
    node_rows: Vec<Vec<usize>>,
}

struct CheckedRow {
    sense: Sense,
    rhs: f64,
    /// node -> per-state coefficient
    coefs: BTreeMap<NodeId, Vec<f64>>,
    current: f64,
    min_rest: f64,
    max_rest: f64,
}

fn min_max(v: &[f64]) -> (f64, f64) {
    v.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &x| (lo.min(x), hi.max(x)))
}

impl PartialChecker {
    /// `allowed` restricts each node to a subset of states (all when `None`).
    pub(crate) fn new(g: &Graph, rows: &[IndicatorRow], allowed: Option<&[Vec<usize>]>) -> Self {
        let mut node_rows = vec![Vec::new(); g.num_nodes()];
        let rows = rows
            .iter()
            .enumerate()
            .map(|(r, row)| {
                let mut coefs: BTreeMap<NodeId, Vec<f64>> = BTreeMap::new();
                for t in &row.terms {
                    coefs.entry(t.node).or_insert_with(|| vec![0.0; g.cardinality(t.node)])[t.state] += t.coef;
                }
                let (mut min_rest, mut max_rest) = (0.0, 0.0);
                for (&node, c) in &coefs {
                    node_rows[node].push(r);
                    let (lo, hi) = match allowed {
                        Some(allowed) => min_max(&allowed[node].iter().map(|&s| c[s]).collect::<Vec<_>>()),
                        None => min_max(c),
                    };
                    min_rest += lo;
                    max_rest += hi;
                }
                CheckedRow { sense: row.sense, rhs: row.rhs, coefs, current: 0.0, min_rest, max_rest }
            })
            .collect();
        Self { rows, node_rows }
    }

    fn node_range(row: &CheckedRow, node: NodeId, allowed: Option<&[usize]>) -> (f64, f64) {
        let c = &row.coefs[&node];
        match allowed {
            Some(states) => min_max(&states.iter().map(|&s| c[s]).collect::<Vec<_>>()),
            None => min_max(c),
        }
    }

    fn row_ok(row: &CheckedRow) -> bool {
        let lo = row.current + row.min_rest;
        let hi = row.current + row.max_rest;
        match row.sense {
            Sense::Le => lo <= row.rhs + FEAS_TOL,
            Sense::Ge => hi >= row.rhs - FEAS_TOL,
            Sense::Eq => lo <= row.rhs + FEAS_TOL && hi >= row.rhs - FEAS_TOL,
        }
    }

    /// Assign `node := state`; returns whether every touched row can still be met.
    pub(crate) fn assign(&mut self, node: NodeId, state: usize, allowed: Option<&[usize]>) -> bool {
        let mut ok = true;
        for &r in &self.node_rows[node] {
            let row = &mut self.rows[r];
            let (lo, hi) = Self::node_range(row, node, allowed);
            row.min_rest -= lo;
            row.max_rest -= hi;
            row.current += row.coefs[&node][state];
            ok &= Self::row_ok(row);
        }
        ok
    }

    pub(crate) fn unassign(&mut self, node: NodeId, state: usize, allowed: Option<&[usize]>) {
        for &r in &self.node_rows[node] {
            let row = &mut self.rows[r];
            let (lo, hi) = Self::node_range(row, node, allowed);
            row.min_rest += lo;
            row.max_rest += hi;
            row.current -= row.coefs[&node][state];
        }
    }
}

/// Default expansion budget for [`feasible_init`]'s backtracking search.
pub const DEFAULT_SEARCH_BUDGET: usize = 5_000_000;

/// An assignment satisfying all side constraints, close to the
/// unconstrained initialisation. Nodes are visited by descending degree and
/// take their best still-feasible state; if that greedy pass dead-ends, a
/// backtracking search over the same order takes over.
pub fn feasible_init(g: &Graph, sc: &[SideConstraint], budget: usize) -> Result<Assignment, SideConstraintError> {
    let scores = initialization_scores(g);
    if sc.is_empty() {
        return Ok(Assignment::new(scores.iter().map(|s| crate::model::argmax_first(s)).collect()));
    }
    for (i, c) in sc.iter().enumerate() {
        c.validate(g, i)?;
    }
    let rows = expand_all(g, sc);

    let mut order: Vec<NodeId> = (0..g.num_nodes()).collect();
    order.sort_by_key(|&n| (std::cmp::Reverse(g.degree(n)), n));
    let preferences: Vec<Vec<usize>> = scores
        .iter()
        .map(|s| {
            let mut idx: Vec<usize> = (0..s.len()).collect();
            idx.sort_by(|&a, &b| s[b].total_cmp(&s[a]).then(a.cmp(&b)));
            idx
        })
        .collect();

    let mut checker = PartialChecker::new(g, &rows, None);
    let mut states = vec![usize::MAX; g.num_nodes()];
    let mut greedy_ok = true;
    for &node in &order {
        let mut placed = false;
        for &s in &preferences[node] {
            if checker.assign(node, s, None) {
                states[node] = s;
                placed = true;
                break;
            }
            checker.unassign(node, s, None);
        }
        if !placed {
            greedy_ok = false;
            break;
        }
    }
    if greedy_ok {
        let a = Assignment::new(states);
        debug_assert!(all_satisfied(g, sc, &a));
        return Ok(a);
    }

    log::debug!("greedy initialisation dead-ended, falling back to backtracking");
    let mut checker = PartialChecker::new(g, &rows, None);
    let mut states = vec![usize::MAX; g.num_nodes()];
    let mut expansions = 0usize;
    match backtrack(0, &order, &preferences, &mut checker, &mut states, &mut expansions, budget) {
        Some(true) => Ok(Assignment::new(states)),
        Some(false) => Err(SideConstraintError::Unsatisfiable),
        None => Err(SideConstraintError::SearchBudgetExceeded(budget)),
    }
}

/// `Some(found)` when the subtree was fully explored, `None` on budget exhaustion.
fn backtrack(
    depth: usize,
    order: &[NodeId],
    preferences: &[Vec<usize>],
    checker: &mut PartialChecker,
    states: &mut [usize],
    expansions: &mut usize,
    budget: usize,
) -> Option<bool> {
    let Some(&node) = order.get(depth) else {
        return Some(true);
    };
    for &s in &preferences[node] {
        *expansions += 1;
        if *expansions > budget {
            return None;
        }
        if checker.assign(node, s, None) {
            states[node] = s;
            if backtrack(depth + 1, order, preferences, checker, states, expansions, budget)? {
                return Some(true);
            }
        }
        checker.unassign(node, s, None);
    }
    states[node] = usize::MAX;
    Some(false)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::Edge;
    use crate::relaxation::{build_consistency_rows, integral_edge_vectors};

    fn pair(phi: [f64; 2]) -> Graph {
        Graph::new(vec![2, 2], vec![phi.to_vec(), phi.to_vec()], vec![Edge::new(0, 1, vec![0.0; 4])]).unwrap()
    }

    #[test]
    fn injective_rows_and_outlier_exemption() {
        let g = pair([0.0, 0.0]);
        let cs = build_consistency_rows(&g).unwrap();
        let injected = inject(cs.clone(), &[SideConstraint::injective_all(&g, None)], &g).unwrap();
        assert_eq!(injected.num_rows(), 2);
        assert!(injected.rows().iter().all(|r| r.sense == Sense::Le && r.rhs == 1.0));
        let exempt = inject(cs.clone(), &[SideConstraint::injective_all(&g, Some(1))], &g).unwrap();
        assert_eq!(exempt.num_rows(), 1);
        assert_eq!(inject(cs.clone(), &[], &g).unwrap(), cs);
    }

    #[test]
    fn both_nodes_lift_through_the_shared_edge() {
        let g = pair([0.0, 0.0]);
        let cs = inject(build_consistency_rows(&g).unwrap(), &[SideConstraint::injective_all(&g, None)], &g).unwrap();
        // one-hot (0,0) puts both nodes in state 0: activity 2 on row 0
        assert_eq!(cs.column(0, 0), vec![(0, 2.0)]);
        assert_eq!(cs.column(0, 1), vec![(0, 1.0), (1, 1.0)]);
    }

    #[test]
    fn inject_rejects_isolated_nodes() {
        let g = Graph::zeros(vec![2, 2, 2], &[(0, 1)]).unwrap();
        let err = inject(ConstraintSystem::empty(&g), &[SideConstraint::injective_all(&g, None)], &g).unwrap_err();
        assert_eq!(err, SideConstraintError::IsolatedNode { constraint: 0, node: 2 });
    }

    #[test]
    fn inject_is_sound_on_integral_points() {
        // triangle, 3 states, injective with outlier 2 plus a linear row
        let g = Graph::zeros(vec![3, 3, 3], &[(0, 1), (1, 2), (0, 2)]).unwrap();
        let sc = vec![
            SideConstraint::injective_all(&g, Some(2)),
            SideConstraint::Linear {
                terms: vec![IndicatorTerm { node: 0, state: 0, coef: 2.0 }, IndicatorTerm { node: 2, state: 1, coef: -1.0 }],
                sense: Sense::Ge,
                rhs: 0.0,
            },
        ];
        let cs = inject(ConstraintSystem::empty(&g), &sc, &g).unwrap();
        for code in 0..27 {
            let a = Assignment::new(vec![code % 3, (code / 3) % 3, code / 9]);
            let act = cs.activities(&integral_edge_vectors(&g, &a));
            let lifted_ok = cs.rows().iter().zip(&act).all(|(r, &v)| r.sense.holds(v, r.rhs, 1e-12));
            assert_eq!(lifted_ok, all_satisfied(&g, &sc, &a), "assignment {a:?}");
        }
    }

    #[test]
    fn feasible_init_splits_a_contested_state() {
        let g = pair([1.0, 0.0]);
        let a = feasible_init(&g, &[SideConstraint::injective_all(&g, None)], DEFAULT_SEARCH_BUDGET).unwrap();
        assert_eq!(a.states(), &[0, 1]);
    }

    #[test]
    fn feasible_init_without_constraints_is_plain_initialisation() {
        let g = pair([1.0, 0.0]);
        assert_eq!(feasible_init(&g, &[], DEFAULT_SEARCH_BUDGET).unwrap().states(), &[0, 0]);
    }

    #[test]
    fn pigeonhole_is_unsatisfiable() {
        let g = Graph::zeros(vec![2, 2, 2], &[(0, 1), (1, 2)]).unwrap();
        let err = feasible_init(&g, &[SideConstraint::injective_all(&g, None)], DEFAULT_SEARCH_BUDGET).unwrap_err();
        assert_eq!(err, SideConstraintError::Unsatisfiable);
    }

    #[test]
    fn backtracking_recovers_from_a_greedy_dead_end() {
        // greedy: A=0, B=1, then C (states 0,1) has nothing left; each row alone
        // still looks satisfiable so only the search finds A=0, B=2, C=1
        let g = Graph::new(
            vec![3, 3, 2],
            vec![vec![5.0, 0.0, 0.0], vec![0.0, 5.0, 1.0], vec![0.0, 0.0]],
            vec![Edge::new(0, 1, vec![0.0; 9]), Edge::new(0, 2, vec![0.0; 6])],
        )
        .unwrap();
        let sc = vec![SideConstraint::injective_all(&g, None)];
        let a = feasible_init(&g, &sc, DEFAULT_SEARCH_BUDGET).unwrap();
        assert_eq!(a.states(), &[0, 2, 1]);
        assert_eq!(feasible_init(&g, &sc, 3).unwrap_err(), SideConstraintError::SearchBudgetExceeded(3));
    }

    #[test]
    fn many_to_one_counts_colliding_nodes() {
        let a = Assignment::new(vec![0, 0, 1, 2, 2, 2]);
        assert_eq!(many_to_one_nodes(&a, &[0, 1, 2, 3, 4, 5], None), 5);
        assert_eq!(many_to_one_nodes(&a, &[0, 1, 2, 3, 4, 5], Some(2)), 2);
    }

    #[test]
    fn constraint_serde_shape() {
        let c = SideConstraint::Injective { nodes: vec![0, 1], outlier: Some(3) };
        let text = serde_json::to_string(&c).unwrap();
        assert_eq!(text, r#"{"kind":"injective","nodes":[0,1],"outlier":3}"#);
        assert_eq!(serde_json::from_str::<SideConstraint>(&text).unwrap(), c);
    }
}
