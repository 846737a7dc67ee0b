//! Reference solvers: exhaustive enumeration and max-product belief
//! propagation.

use thiserror::Error;

use crate::model::{argmax_first, Assignment, Endpoint, Graph};
use crate::sideconstraints::{all_satisfied, expand_all, IndicatorRow, SideConstraint, SideConstraintError};

pub const DEFAULT_BRUTE_FORCE_CAP: f64 = 1e7;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum BaselineError {
    #[error("state space of {size:.3e} assignments exceeds the cap of {cap:.3e}")]
    StateSpaceTooLarge { size: f64, cap: f64 },
    #[error("no assignment satisfies the side constraints")]
    Infeasible,
    #[error(transparent)]
    SideConstraint(#[from] SideConstraintError),
}

/// Exact MAP by enumeration, honouring side constraints. Ties keep the
/// lexicographically first assignment, up to summation order.
pub fn brute_force_map(g: &Graph, sc: &[SideConstraint], cap: f64) -> Result<(Assignment, f64), BaselineError> {
    let allowed: Vec<Vec<usize>> = g.cardinalities().iter().map(|&c| (0..c).collect()).collect();
    brute_force_restricted(g, &allowed, sc, cap)
}

/// Exact MAP over per-node allowed state sets. Depth-first over nodes in
/// index order, adding each node's local term and its edges to earlier
/// nodes as it is fixed; side constraints are checked on complete
/// assignments only.
pub fn brute_force_restricted(
    g: &Graph,
    allowed: &[Vec<usize>],
    sc: &[SideConstraint],
    cap: f64,
) -> Result<(Assignment, f64), BaselineError> {
    let size: f64 = allowed.iter().map(|s| s.len() as f64).product();
    if size > cap {
        return Err(BaselineError::StateSpaceTooLarge { size, cap });
    }
    for (i, c) in sc.iter().enumerate() {
        c.validate(g, i)?;
    }
    // edges whose later endpoint is `node`
    let mut back: Vec<Vec<usize>> = vec![Vec::new(); g.num_nodes()];
    for (id, e) in g.edges().iter().enumerate() {
        back[e.s.max(e.t)].push(id);
    }
    let mut dfs = Enumeration {
        g,
        allowed,
        rows: expand_all(g, sc),
        back,
        states: vec![0; g.num_nodes()],
        best: None,
    };
    dfs.visit(0, 0.0);
    let (_, best) = dfs.best.ok_or(BaselineError::Infeasible)?;
    let value = g.log_score(&best).expect("enumerated states are valid");
    Ok((best, value))
}

struct Enumeration<'a> {
    g: &'a Graph,
    allowed: &'a [Vec<usize>],
    rows: Vec<IndicatorRow>,
    back: Vec<Vec<usize>>,
    states: Vec<usize>,
    best: Option<(f64, Assignment)>,
}

impl Enumeration<'_> {
    fn visit(&mut self, node: usize, partial: f64) {
        let g = self.g;
        if node == g.num_nodes() {
            if self.best.as_ref().is_some_and(|(v, _)| partial <= *v) {
                return;
            }
            let a = Assignment::new(self.states.clone());
            if self.rows.iter().all(|r| r.sense.holds(r.activity(&a), r.rhs, 1e-9)) {
                self.best = Some((partial, a));
            }
            return;
        }
        for &x in &self.allowed[node] {
            self.states[node] = x;
            let mut v = partial + g.local(node)[x];
            for &id in &self.back[node] {
                let e = &g.edges()[id];
                v += e.table[self.states[e.s] * g.cardinality(e.t) + self.states[e.t]];
            }
            self.visit(node + 1, v);
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MaxProductResult {
    pub assignment: Assignment,
    pub converged: bool,
    pub iterations: usize,
}

pub const MAX_PRODUCT_CONVERGENCE: f64 = 1e-9;

/// Synchronous max-product in log space. Each message is shifted so its
/// maximum is zero. Decodes by the lowest-index maximum of each belief.
pub fn max_product(g: &Graph, max_iters: usize, damping: f64) -> MaxProductResult {
    // msgs[2*e] travels s -> t (indexed by t's states), msgs[2*e+1] t -> s
    let mut msgs: Vec<Vec<f64>> = g
        .edges()
        .iter()
        .flat_map(|e| [vec![0.0; g.cardinality(e.t)], vec![0.0; g.cardinality(e.s)]])
        .collect();
    let slot = |edge: usize, from: usize| -> usize {
        match g.endpoint_of(edge, from) {
            Endpoint::S => 2 * edge,
            Endpoint::T => 2 * edge + 1,
        }
    };

    let mut converged = false;
    let mut iterations = 0;
    while iterations < max_iters {
        iterations += 1;
        let mut next = msgs.clone();
        let mut change = 0.0f64;
        for (edge, e) in g.edges().iter().enumerate() {
            for from in [e.s, e.t] {
                let to = g.neighbour(edge, from);
                // belief at `from` excluding the message coming back over this edge
                let mut h = g.local(from).to_vec();
                for &other in g.incident(from) {
                    if other != edge {
                        let m = &msgs[slot(other, g.neighbour(other, from))];
                        for (v, x) in h.iter_mut().zip(m) {
                            *v += x;
                        }
                    }
                }
                let cols = g.cardinality(e.t);
                let mut out: Vec<f64> = (0..g.cardinality(to))
                    .map(|y| {
                        (0..h.len())
                            .map(|x| {
                                let pair = if from == e.s { e.table[x * cols + y] } else { e.table[y * cols + x] };
                                h[x] + pair
                            })
                            .fold(f64::NEG_INFINITY, f64::max)
                    })
                    .collect();
                let top = out.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                for v in &mut out {
                    *v -= top;
                }
                let k = slot(edge, from);
                for (v, old) in out.iter_mut().zip(&msgs[k]) {
                    *v = (1.0 - damping) * *v + damping * old;
                    change = change.max((*v - old).abs());
                }
                next[k] = out;
            }
        }
        msgs = next;
        if change < MAX_PRODUCT_CONVERGENCE {
            converged = true;
            break;
        }
    }

    let states = (0..g.num_nodes())
        .map(|s| {
            let mut b = g.local(s).to_vec();
            for &edge in g.incident(s) {
                for (v, x) in b.iter_mut().zip(&msgs[slot(edge, g.neighbour(edge, s))]) {
                    *v += x;
                }
            }
            argmax_first(&b)
        })
        .collect();
    MaxProductResult { assignment: Assignment::new(states), converged, iterations }
}

/// Whether `a` satisfies `sc`, for reporting baseline results.
pub fn satisfies(g: &Graph, sc: &[SideConstraint], a: &Assignment) -> bool {
    all_satisfied(g, sc, a)
}
