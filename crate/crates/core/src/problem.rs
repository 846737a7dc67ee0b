//! A MAP instance prepared for the relaxation: isolated nodes split off,
//! edge costs folded, constraint system built and side rows injected.

use std::sync::Arc;

use crate::decomposition::{columns_for_assignment, Column, EdgeSubproblem};
use crate::model::{all_edge_costs, Assignment, EdgeCost, Graph, ReducedGraph};
use crate::relaxation::{build_consistency_rows, ConstraintSystem};
use crate::sideconstraints::{feasible_init, inject, SideConstraint};
use crate::Error;

#[derive(Debug, Clone)]
pub struct MapProblem {
    original: Graph,
    reduced: ReducedGraph,
    original_side: Vec<SideConstraint>,
    /// Side constraints in reduced node ids.
    side: Vec<SideConstraint>,
    costs: Vec<EdgeCost>,
    system: Arc<ConstraintSystem>,
    subproblems: Arc<[EdgeSubproblem]>,
}

impl MapProblem {
    pub fn new(graph: Graph, side: &[SideConstraint]) -> Result<Self, Error> {
        for (i, c) in side.iter().enumerate() {
            c.validate(&graph, i)?;
        }
        let reduced = graph.without_isolated();
        let original_side = side.to_vec();
        let side = side
            .iter()
            .enumerate()
            .map(|(i, c)| c.remap(i, |n| reduced.reduced_index(n)))
            .collect::<Result<Vec<_>, _>>()?;
        let g = &reduced.graph;
        let costs = all_edge_costs(g);
        let system = inject(build_consistency_rows(g)?, &side, g)?;
        let subproblems: Arc<[EdgeSubproblem]> = costs.iter().map(|c| EdgeSubproblem::new(c, &system)).collect();
        Ok(Self { original: graph, reduced, original_side, side, costs, system: Arc::new(system), subproblems })
    }

    pub fn original(&self) -> &Graph {
        &self.original
    }

    /// The graph the relaxation is built over (no isolated nodes).
    pub fn graph(&self) -> &Graph {
        &self.reduced.graph
    }

    pub fn reduced(&self) -> &ReducedGraph {
        &self.reduced
    }

    /// Side constraints in original node ids.
    pub fn original_side(&self) -> &[SideConstraint] {
        &self.original_side
    }

    pub fn side(&self) -> &[SideConstraint] {
        &self.side
    }

    pub fn costs(&self) -> &[EdgeCost] {
        &self.costs
    }

    pub fn system(&self) -> &Arc<ConstraintSystem> {
        &self.system
    }

    pub fn subproblems(&self) -> &Arc<[EdgeSubproblem]> {
        &self.subproblems
    }

    /// Initial assignment of the reduced graph and its one-hot columns.
    /// Honors side constraints.
    pub fn initial_columns(&self, search_budget: usize) -> Result<(Assignment, Vec<Column>), Error> {
        let a = feasible_init(self.graph(), &self.side, search_budget)?;
        let cols = columns_for_assignment(self.graph(), &self.subproblems, &a);
        Ok((a, cols))
    }

    /// Lift a reduced assignment back to the original node ids.
    pub fn lift(&self, a: &Assignment) -> Assignment {
        self.reduced.lift(&self.original, a)
    }
}
