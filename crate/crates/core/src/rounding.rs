//! Integer rounding of a fractional relaxation optimum.
//!
//! States with zero marginal are discarded and the MAP problem is solved
//! exactly over what survives, by depth-first branch-and-bound.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::decomposition::FractionalSolution;
use crate::model::{argmax_first, Assignment, Graph, NodeId};
use crate::sideconstraints::{all_satisfied, expand_all, PartialChecker, SideConstraint};

pub const DEFAULT_ROUND_EPS: f64 = 1e-6;
/// Largest restricted state space searched before falling back.
pub const DEFAULT_ROUND_CAP: f64 = 1e7;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum RoundingError {
    #[error("node {node} has no state with marginal above {eps}")]
    EmptySupport { node: NodeId, eps: f64 },
    #[error("expected {expected} surviving state sets, got {got}")]
    LengthMismatch { expected: usize, got: usize },
    #[error("no assignment over the surviving states satisfies the side constraints")]
    Infeasible,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SurvivingStates {
    /// Per node, ascending states whose marginal exceeds eps.
    pub states: Vec<Vec<usize>>,
}

impl SurvivingStates {
    pub fn fractional(&self) -> Vec<NodeId> {
        (0..self.states.len()).filter(|&n| self.states[n].len() > 1).collect()
    }

    pub fn fractional_fraction(&self) -> f64 {
        if self.states.is_empty() {
            return 0.0;
        }
        self.fractional().len() as f64 / self.states.len() as f64
    }

    /// Size of the restricted state space.
    pub fn space_size(&self) -> f64 {
        self.states.iter().map(|s| s.len() as f64).product()
    }
}

pub fn fractional_nodes(sol: &FractionalSolution, eps: f64) -> Result<SurvivingStates, RoundingError> {
    let states = sol
        .node_marginals
        .iter()
        .enumerate()
        .map(|(node, x)| {
            let s: Vec<usize> = (0..x.len()).filter(|&i| x[i] > eps).collect();
            if s.is_empty() {
                Err(RoundingError::EmptySupport { node, eps })
            } else {
                Ok(s)
            }
        })
        .collect::<Result<_, _>>()?;
    Ok(SurvivingStates { states })
}

#[derive(Debug, Clone, PartialEq)]
pub struct RoundingOutcome {
    pub assignment: Assignment,
    pub value: f64,
    /// Set when the search was skipped because the space exceeded the cap.
    pub fallback: bool,
    pub nodes_explored: u64,
}

/// Best assignment over `surviving` under the side constraints. When the
/// restricted space exceeds `cap`, returns the per-node argmax of
/// `marginals` instead (with `fallback` set).
pub fn round_ip(
    g: &Graph,
    surviving: &SurvivingStates,
    marginals: &[Vec<f64>],
    sc: &[SideConstraint],
    cap: f64,
) -> Result<RoundingOutcome, RoundingError> {
    if surviving.states.len() != g.num_nodes() {
        return Err(RoundingError::LengthMismatch { expected: g.num_nodes(), got: surviving.states.len() });
    }
    if let Some(node) = surviving.states.iter().position(|s| s.is_empty()) {
        return Err(RoundingError::EmptySupport { node, eps: f64::NAN });
    }
    if surviving.space_size() > cap {
        log::warn!(
            "restricted space of {:.3e} assignments exceeds the cap of {:.3e}, using marginal argmax",
            surviving.space_size(),
            cap
        );
        let assignment = Assignment::new(marginals.iter().map(|x| argmax_first(x)).collect());
        if !all_satisfied(g, sc, &assignment) {
            log::warn!("fallback assignment violates side constraints");
        }
        let value = g.log_score(&assignment).expect("marginals match the graph");
        return Ok(RoundingOutcome { assignment, value, fallback: true, nodes_explored: 0 });
    }

    let mut search = Search::new(g, &surviving.states, sc);
    search.run(0);
    let assignment = search.best_assignment.ok_or(RoundingError::Infeasible)?;
    Ok(RoundingOutcome { value: search.best, assignment, fallback: false, nodes_explored: search.explored })
}

struct Search<'a> {
    g: &'a Graph,
    allowed: &'a [Vec<usize>],
    order: Vec<NodeId>,
    checker: PartialChecker,
    states: Vec<usize>,
    /// Current optimistic contribution of each node's local term and each edge.
    node_bound: Vec<f64>,
    edge_bound: Vec<f64>,
    bound: f64,
    best: f64,
    best_assignment: Option<Assignment>,
    explored: u64,
}

const UNSET: usize = usize::MAX;

impl<'a> Search<'a> {
    fn new(g: &'a Graph, allowed: &'a [Vec<usize>], sc: &[SideConstraint]) -> Self {
        let checker = PartialChecker::new(g, &expand_all(g, sc), Some(allowed));
        // fixed nodes first, then by descending degree
        let mut order: Vec<NodeId> = (0..g.num_nodes()).collect();
        order.sort_by_key(|&n| (allowed[n].len() > 1, std::cmp::Reverse(g.degree(n)), n));
        let node_bound: Vec<f64> = (0..g.num_nodes())
            .map(|n| allowed[n].iter().map(|&i| g.local(n)[i]).fold(f64::NEG_INFINITY, f64::max))
            .collect();
        let edge_bound: Vec<f64> = g
            .edges()
            .iter()
            .map(|e| {
                let cols = g.cardinality(e.t);
                let mut m = f64::NEG_INFINITY;
                for &i in &allowed[e.s] {
                    for &j in &allowed[e.t] {
                        m = m.max(e.table[i * cols + j]);
                    }
                }
                m
            })
            .collect();
        let bound = node_bound.iter().sum::<f64>() + edge_bound.iter().sum::<f64>();
        Self {
            g,
            allowed,
            order,
            checker,
            states: vec![UNSET; g.num_nodes()],
            node_bound,
            edge_bound,
            bound,
            best: f64::NEG_INFINITY,
            best_assignment: None,
            explored: 0,
        }
    }

    fn edge_value(&self, edge: usize) -> f64 {
        let g = self.g;
        let e = &g.edges()[edge];
        let cols = g.cardinality(e.t);
        match (self.states[e.s], self.states[e.t]) {
            (UNSET, UNSET) => unreachable!("called after assigning one endpoint"),
            (i, UNSET) => self.allowed[e.t].iter().map(|&j| e.table[i * cols + j]).fold(f64::NEG_INFINITY, f64::max),
            (UNSET, j) => self.allowed[e.s].iter().map(|&i| e.table[i * cols + j]).fold(f64::NEG_INFINITY, f64::max),
            (i, j) => e.table[i * cols + j],
        }
    }

    fn run(&mut self, depth: usize) {
        self.explored += 1;
        let Some(&node) = self.order.get(depth) else {
            let a = Assignment::new(self.states.clone());
            let value = self.g.log_score(&a).expect("complete assignment");
            if value > self.best {
                self.best = value;
                self.best_assignment = Some(a);
            }
            return;
        };
        let allowed = &self.allowed[node];
        for &s in allowed {
            let feasible = self.checker.assign(node, s, Some(allowed));
            if feasible {
                self.states[node] = s;
                let saved_node = self.node_bound[node];
                let saved_edges: Vec<(usize, f64)> =
                    self.g.incident(node).iter().map(|&e| (e, self.edge_bound[e])).collect();
                self.node_bound[node] = self.g.local(node)[s];
                let mut delta = self.node_bound[node] - saved_node;
                for &(e, old) in &saved_edges {
                    self.edge_bound[e] = self.edge_value(e);
                    delta += self.edge_bound[e] - old;
                }
                self.bound += delta;
                // the bound is accumulated incrementally, so allow for drift
                if self.bound > self.best + 1e-9 * (1.0 + self.best.abs()) || self.best_assignment.is_none() {
                    self.run(depth + 1);
                }
                self.bound -= delta;
                self.node_bound[node] = saved_node;
                for (e, old) in saved_edges {
                    self.edge_bound[e] = old;
                }
                self.states[node] = UNSET;
            }
            self.checker.unassign(node, s, Some(allowed));
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::Edge;

    fn sol(nodes: Vec<Vec<f64>>) -> FractionalSolution {
        FractionalSolution { edge_marginals: vec![], node_marginals: nodes, objective: 0.0, provisional: false }
    }

    fn triangle() -> Graph {
        let t = vec![0.0, 1.0, 1.0, 0.0];
        Graph::new(
            vec![2, 2, 2],
            vec![vec![0.0; 2]; 3],
            vec![Edge::new(0, 1, t.clone()), Edge::new(1, 2, t.clone()), Edge::new(0, 2, t)],
        )
        .unwrap()
    }

    #[test]
    fn surviving_state_examples() {
        let s = fractional_nodes(&sol(vec![vec![1.0, 0.0], vec![0.5, 0.5], vec![1.0 - 1e-9, 1e-9]]), 1e-6).unwrap();
        assert_eq!(s.states, vec![vec![0], vec![0, 1], vec![0]]);
        assert_eq!(s.fractional(), vec![1]);
        assert!((s.fractional_fraction() - 1.0 / 3.0).abs() < 1e-15);
        let err = fractional_nodes(&sol(vec![vec![0.5, 0.5]]), 0.6).unwrap_err();
        assert_eq!(err, RoundingError::EmptySupport { node: 0, eps: 0.6 });
    }

    #[test]
    fn frustrated_triangle_rounds_to_two() {
        let g = triangle();
        let s = SurvivingStates { states: vec![vec![0, 1]; 3] };
        let out = round_ip(&g, &s, &vec![vec![0.5, 0.5]; 3], &[], DEFAULT_ROUND_CAP).unwrap();
        assert_eq!(out.value, 2.0);
        assert!(!out.fallback);
        assert_eq!(g.log_score(&out.assignment).unwrap(), 2.0);
    }

    #[test]
    fn fixed_nodes_pass_through() {
        let g = triangle();
        let s = SurvivingStates { states: vec![vec![1], vec![0], vec![0]] };
        let out = round_ip(&g, &s, &[], &[], DEFAULT_ROUND_CAP).unwrap();
        assert_eq!(out.assignment.states(), &[1, 0, 0]);
        assert_eq!(out.value, 2.0);
    }

    #[test]
    fn cap_overflow_falls_back_to_marginal_argmax() {
        let g = triangle();
        let s = SurvivingStates { states: vec![vec![0, 1]; 3] };
        let marg = vec![vec![0.4, 0.6], vec![0.5, 0.5], vec![0.9, 0.1]];
        let out = round_ip(&g, &s, &marg, &[], 4.0).unwrap();
        assert!(out.fallback);
        assert_eq!(out.assignment.states(), &[1, 0, 0]);
    }

    #[test]
    fn side_constraints_restrict_the_search() {
        let g = Graph::new(vec![2, 2], vec![vec![1.0, 0.0], vec![1.0, 0.0]], vec![Edge::new(0, 1, vec![0.0; 4])]).unwrap();
        let s = SurvivingStates { states: vec![vec![0, 1]; 2] };
        let inj = [SideConstraint::injective_all(&g, None)];
        let out = round_ip(&g, &s, &[], &inj, DEFAULT_ROUND_CAP).unwrap();
        assert_eq!(out.value, 1.0);
        assert_ne!(out.assignment.state(0), out.assignment.state(1));

        let pinned = SurvivingStates { states: vec![vec![0], vec![0]] };
        assert_eq!(round_ip(&g, &pinned, &[], &inj, DEFAULT_ROUND_CAP).unwrap_err(), RoundingError::Infeasible);
    }
}
