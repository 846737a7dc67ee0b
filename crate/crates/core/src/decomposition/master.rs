//! The restricted master program over convexity weights.

use crate::relaxation::{ConstraintSystem, DenseLp, Sense};
use crate::simplex::{solve_lp, BasisVar, LpSolution, LpStatus, SimplexOptions};

use super::{Column, DecompositionError, Duals};

#[derive(Debug, Clone)]
pub struct MasterSolution {
    pub objective: f64,
    /// Convexity weight of each column, in pool order.
    pub alpha: Vec<f64>,
    pub basic: Vec<bool>,
    pub duals: Duals,
    pub lp: LpSolution,
}

/// Build and solve
///
/// ```text
/// max  sum g_i alpha_i
/// s.t. sum G_i alpha_i (sense) rhs       one row per constraint-system row
///      sum_{i in edge} alpha_i = 1       one row per edge
///      alpha >= 0
/// ```
///
/// Duals are returned per constraint-system row (`pi`, signed for the
/// row's own sense) and per edge (`gamma`).
pub fn solve_restricted_master(
    columns: &[Column],
    cs: &ConstraintSystem,
    opts: &SimplexOptions,
) -> Result<MasterSolution, DecompositionError> {
    let num_edges = cs.num_edges();
    let mut per_edge = vec![0usize; num_edges];
    for c in columns {
        if c.edge >= num_edges {
            return Err(DecompositionError::UnknownEdge(c.edge));
        }
        per_edge[c.edge] += 1;
    }
    if let Some(edge) = per_edge.iter().position(|&n| n == 0) {
        return Err(DecompositionError::EmptyEdge(edge));
    }

    // where each constraint-system row lands in the LP
    #[derive(Clone, Copy)]
    enum Slot {
        Eq(usize),
        Ub(usize, f64),
    }
    let mut slots = Vec::with_capacity(cs.num_rows());
    let (mut n_eq, mut n_ub) = (0, 0);
    for spec in cs.rows() {
        slots.push(match spec.sense {
            Sense::Eq => {
                n_eq += 1;
                Slot::Eq(n_eq - 1)
            }
            Sense::Le => {
                n_ub += 1;
                Slot::Ub(n_ub - 1, 1.0)
            }
            Sense::Ge => {
                n_ub += 1;
                Slot::Ub(n_ub - 1, -1.0)
            }
        });
    }

    let mut lp = DenseLp::nonnegative(columns.iter().map(|c| c.cost).collect());
    lp.eq_rows = vec![Vec::new(); n_eq + num_edges];
    lp.eq_rhs = vec![0.0; n_eq + num_edges];
    lp.ub_rows = vec![Vec::new(); n_ub];
    lp.ub_rhs = vec![0.0; n_ub];
    for (spec, slot) in cs.rows().iter().zip(&slots) {
        match *slot {
            Slot::Eq(i) => lp.eq_rhs[i] = spec.rhs,
            Slot::Ub(i, sign) => lp.ub_rhs[i] = sign * spec.rhs,
        }
    }
    for e in 0..num_edges {
        lp.eq_rhs[n_eq + e] = 1.0;
    }
    for (j, col) in columns.iter().enumerate() {
        for &(r, coef) in &col.constraint_column {
            match slots[r] {
                Slot::Eq(i) => lp.eq_rows[i].push((j, coef)),
                Slot::Ub(i, sign) => lp.ub_rows[i].push((j, sign * coef)),
            }
        }
        lp.eq_rows[n_eq + col.edge].push((j, 1.0));
    }

    let sol = solve_lp(&lp, opts)?;
    match sol.status {
        LpStatus::Optimal => {}
        LpStatus::Infeasible => return Err(DecompositionError::MasterInfeasible),
        status => return Err(DecompositionError::MasterNotOptimal(status)),
    }

    let eq_total = n_eq + num_edges;
    let pi = slots
        .iter()
        .map(|slot| match *slot {
            Slot::Eq(i) => sol.duals[i],
            Slot::Ub(i, sign) => sign * sol.duals[eq_total + i],
        })
        .collect();
    let gamma = sol.duals[n_eq..eq_total].to_vec();
    let mut basic = vec![false; columns.len()];
    for b in &sol.basis {
        if let BasisVar::Structural(j) = *b {
            basic[j] = true;
        }
    }
    Ok(MasterSolution {
        objective: sol.objective,
        alpha: sol.primal.clone(),
        basic,
        duals: Duals { pi, gamma },
        lp: sol,
    })
}
