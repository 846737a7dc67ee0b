//! Dantzig-Wolfe column generation over edge subprograms.
//!
//! The loop alternates a pricing phase, where every edge independently finds
//! its best vertex under the current duals, with a master phase that
//! re-optimises convexity weights over the pooled vertices. The master
//! objective never decreases because the pool only grows (or loses
//! non-basic columns), which makes the current objective a valid anytime
//! answer.

mod master;
mod pricing;

use std::collections::HashSet;
use std::sync::Arc;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{argmax_first, Assignment, EdgeId, Endpoint, Graph};
use crate::relaxation::{marginalize, one_hot_index, ConstraintSystem};
use crate::simplex::{LpStatus, SimplexError, SimplexOptions};

pub use master::{solve_restricted_master, MasterSolution};
pub use pricing::{choose_index, price_subprogram, select_columns, Candidate, Column, EdgeSubproblem, TieRule};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DecompositionError {
    #[error("edge {0} has no column in the master program")]
    EmptyEdge(EdgeId),
    #[error("column references unknown edge {0}")]
    UnknownEdge(EdgeId),
    #[error("master program is infeasible")]
    MasterInfeasible,
    #[error("master program ended with status {0:?}")]
    MasterNotOptimal(LpStatus),
    #[error("dual vector too short: index {row} of {rows}")]
    DualDimension { row: usize, rows: usize },
    #[error("pricing failed: {0}")]
    Pricing(String),
    #[error(transparent)]
    Simplex(#[from] SimplexError),
}

/// Simplex multipliers of the master: `pi` per constraint-system row,
/// `gamma` per edge convexity row.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Duals {
    pub pi: Vec<f64>,
    pub gamma: Vec<f64>,
}

impl Duals {
    pub fn zeros(rows: usize, edges: usize) -> Self {
        Self { pi: vec![0.0; rows], gamma: vec![0.0; edges] }
    }
}

/// When to drop non-basic columns after a master solve.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum PurgePolicy {
    #[default]
    Never,
    Always,
    /// Purge once a master solve takes longer than this.
    SolveTimeAbove(Duration),
}

impl PurgePolicy {
    pub fn should_purge(self, solve_time: Duration) -> bool {
        match self {
            PurgePolicy::Never => false,
            PurgePolicy::Always => true,
            PurgePolicy::SolveTimeAbove(limit) => solve_time > limit,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DwConfig {
    pub max_iterations: usize,
    /// Columns added per iteration; `None` adds every improving column.
    pub columns_per_iteration: Option<usize>,
    pub purge: PurgePolicy,
    pub tie_rule: TieRule,
    /// Reduced-cost threshold for adding a column.
    pub tol: f64,
    pub simplex: SimplexOptions,
    /// Keep every pricing round's candidates (for determinism checks).
    pub record_candidates: bool,
}

impl Default for DwConfig {
    fn default() -> Self {
        Self {
            max_iterations: 1000,
            columns_per_iteration: Some(200),
            purge: PurgePolicy::Never,
            tie_rule: TieRule::LowestIndex,
            tol: 1e-9,
            simplex: SimplexOptions::default(),
            record_candidates: false,
        }
    }
}

/// One line of the convergence trace, written after every master solve.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub iter: usize,
    pub objective: f64,
    pub columns_added: usize,
    pub pool_size: usize,
    pub master_ms: f64,
    pub pricing_ms: f64,
    pub bytes_tx: u64,
    pub bytes_rx: u64,
}

/// Candidates of one pricing round, one per edge in edge order, plus the
/// bytes that crossed the wire to produce them.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct PricingRound {
    pub candidates: Vec<Candidate>,
    pub bytes_tx: u64,
    pub bytes_rx: u64,
}

/// Executes a pricing round. Implementations differ in where the per-edge
/// subprograms run; all must return the candidates serial pricing would.
pub trait Pricer: Send {
    fn name(&self) -> &str;

    fn price_all(&mut self, iteration: usize, duals: &Duals, tie: TieRule) -> Result<PricingRound, DecompositionError>;
}

/// Node scores of the one-pass initialisation: local potential plus every
/// incident pairwise table summed over the neighbour's states.
pub fn initialization_scores(g: &Graph) -> Vec<Vec<f64>> {
    (0..g.num_nodes())
        .map(|s| {
            let mut score = g.local(s).to_vec();
            for &edge in g.incident(s) {
                let e = &g.edges()[edge];
                let cols = g.cardinality(e.t);
                match g.endpoint_of(edge, s) {
                    Endpoint::S => {
                        for (i, v) in score.iter_mut().enumerate() {
                            *v += e.table[i * cols..(i + 1) * cols].iter().sum::<f64>();
                        }
                    }
                    Endpoint::T => {
                        for row in e.table.chunks_exact(cols) {
                            for (v, x) in score.iter_mut().zip(row) {
                                *v += x;
                            }
                        }
                    }
                }
            }
            score
        })
        .collect()
}

/// Unconstrained initial assignment: per-node argmax of
/// [`initialization_scores`], ties to the lowest state.
pub fn initial_assignment(g: &Graph) -> Assignment {
    Assignment::new(initialization_scores(g).iter().map(|s| argmax_first(s)).collect())
}

/// One column per edge, one-hot at the assignment's joint state.
pub fn columns_for_assignment(g: &Graph, subs: &[EdgeSubproblem], a: &Assignment) -> Vec<Column> {
    subs.iter().map(|sub| sub.column(one_hot_index(g, sub.edge, a), 0)).collect()
}

/// Initial assignment and columns. Because every edge column is derived from
/// one node assignment, all consistency rows hold exactly.
pub fn initialize(g: &Graph, subs: &[EdgeSubproblem]) -> (Assignment, Vec<Column>) {
    let a = initial_assignment(g);
    let cols = columns_for_assignment(g, subs, &a);
    (a, cols)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum IterationOutcome {
    /// No edge has a positive reduced cost.
    Converged,
    /// Columns were added and the master re-solved.
    Improved { columns_added: usize },
    IterationLimit,
}

/// Mutable state of a column-generation run.
#[derive(Debug, Clone)]
pub struct DwState {
    pool: Vec<Column>,
    keys: HashSet<(EdgeId, usize)>,
    alpha: Vec<f64>,
    basic: Vec<bool>,
    duals: Duals,
    iteration: usize,
    trace: Vec<TraceRecord>,
    converged: bool,
    last_solve: Duration,
    candidate_log: Vec<Vec<Candidate>>,
}

impl DwState {
    pub fn pool(&self) -> &[Column] {
        &self.pool
    }

    pub fn alpha(&self) -> &[f64] {
        &self.alpha
    }

    pub fn duals(&self) -> &Duals {
        &self.duals
    }

    pub fn iteration(&self) -> usize {
        self.iteration
    }

    pub fn trace(&self) -> &[TraceRecord] {
        &self.trace
    }

    pub fn converged(&self) -> bool {
        self.converged
    }

    pub fn objective(&self) -> f64 {
        self.trace.last().map_or(f64::NAN, |t| t.objective)
    }

    pub fn candidate_log(&self) -> &[Vec<Candidate>] {
        &self.candidate_log
    }
}

/// A column-generation run over a fixed constraint system.
pub struct ColumnGeneration {
    subproblems: Arc<[EdgeSubproblem]>,
    system: Arc<ConstraintSystem>,
    config: DwConfig,
    state: DwState,
}

impl ColumnGeneration {
    /// Solve the first master program over `initial` columns.
    pub fn start(
        subproblems: Arc<[EdgeSubproblem]>,
        system: Arc<ConstraintSystem>,
        initial: Vec<Column>,
        config: DwConfig,
    ) -> Result<Self, DecompositionError> {
        let mut keys = HashSet::with_capacity(initial.len());
        let mut pool = Vec::with_capacity(initial.len());
        for c in initial {
            if keys.insert(c.key()) {
                pool.push(c);
            }
        }
        let state = DwState {
            pool,
            keys,
            alpha: Vec::new(),
            basic: Vec::new(),
            duals: Duals::zeros(system.num_rows(), system.num_edges()),
            iteration: 0,
            trace: Vec::new(),
            converged: false,
            last_solve: Duration::ZERO,
            candidate_log: Vec::new(),
        };
        let mut run = Self { subproblems, system, config, state };
        let added = run.state.pool.len();
        let master_ms = run.solve_master()?;
        run.push_trace(added, master_ms, 0.0, 0, 0);
        Ok(run)
    }

    pub fn state(&self) -> &DwState {
        &self.state
    }

    pub fn config(&self) -> &DwConfig {
        &self.config
    }

    pub fn subproblems(&self) -> &Arc<[EdgeSubproblem]> {
        &self.subproblems
    }

    pub fn system(&self) -> &Arc<ConstraintSystem> {
        &self.system
    }

    fn solve_master(&mut self) -> Result<f64, DecompositionError> {
        let t0 = Instant::now();
        let sol = solve_restricted_master(&self.state.pool, &self.system, &self.config.simplex)?;
        self.state.last_solve = t0.elapsed();
        self.state.alpha = sol.alpha;
        self.state.basic = sol.basic;
        self.state.duals = sol.duals;
        let obj = sol.objective;
        if let Some(prev) = self.state.trace.last() {
            if obj < prev.objective - 1e-9 {
                log::warn!("master objective decreased from {} to {}", prev.objective, obj);
            }
        }
        self.state.trace.push(TraceRecord {
            iter: 0,
            objective: obj,
            columns_added: 0,
            pool_size: 0,
            master_ms: 0.0,
            pricing_ms: 0.0,
            bytes_tx: 0,
            bytes_rx: 0,
        });
        Ok(self.state.last_solve.as_secs_f64() * 1e3)
    }

    fn push_trace(&mut self, columns_added: usize, master_ms: f64, pricing_ms: f64, bytes_tx: u64, bytes_rx: u64) {
        let rec = self.state.trace.last_mut().expect("solve_master pushed a record");
        rec.iter = self.state.iteration;
        rec.columns_added = columns_added;
        rec.pool_size = self.state.pool.len();
        rec.master_ms = master_ms;
        rec.pricing_ms = pricing_ms;
        rec.bytes_tx = bytes_tx;
        rec.bytes_rx = bytes_rx;
    }

    /// One pricing phase followed, if any column improves, by a master solve.
    pub fn iterate(&mut self, pricer: &mut dyn Pricer) -> Result<IterationOutcome, DecompositionError> {
        if self.state.converged {
            return Ok(IterationOutcome::Converged);
        }
        if self.state.iteration >= self.config.max_iterations {
            return Ok(IterationOutcome::IterationLimit);
        }
        let next = self.state.iteration + 1;
        let t0 = Instant::now();
        let round = pricer.price_all(next, &self.state.duals, self.config.tie_rule)?;
        let pricing_ms = t0.elapsed().as_secs_f64() * 1e3;
        if round.candidates.len() != self.subproblems.len()
            || round.candidates.iter().enumerate().any(|(e, c)| c.column.edge != e)
        {
            return Err(DecompositionError::Pricing(format!(
                "{} returned {} candidates for {} edges",
                pricer.name(),
                round.candidates.len(),
                self.subproblems.len()
            )));
        }

        let selected = select_columns(
            &round.candidates,
            &self.state.keys,
            self.config.columns_per_iteration,
            self.config.tol,
        );
        if self.config.record_candidates {
            self.state.candidate_log.push(round.candidates);
        }
        if selected.is_empty() {
            self.state.converged = true;
            return Ok(IterationOutcome::Converged);
        }

        let added = selected.len();
        for c in selected {
            self.state.keys.insert(c.key());
            self.state.pool.push(c);
        }
        self.state.iteration = next;
        let master_ms = self.solve_master()?;
        if self.config.purge.should_purge(self.state.last_solve) {
            self.purge_nonbasic();
        }
        self.push_trace(added, master_ms, pricing_ms, round.bytes_tx, round.bytes_rx);
        Ok(IterationOutcome::Improved { columns_added: added })
    }

    /// Iterate until convergence or the iteration cap.
    pub fn run(&mut self, pricer: &mut dyn Pricer) -> Result<IterationOutcome, DecompositionError> {
        loop {
            match self.iterate(pricer)? {
                IterationOutcome::Improved { .. } => continue,
                done => return Ok(done),
            }
        }
    }

    /// Drop every column that is non-basic in the last master solution,
    /// keeping at least one column per edge. Returns the number removed.
    pub fn purge_nonbasic(&mut self) -> usize {
        let n_edges = self.system.num_edges();
        let mut keep = self.state.basic.clone();
        let mut covered = vec![false; n_edges];
        for (c, &k) in self.state.pool.iter().zip(&keep) {
            if k {
                covered[c.edge] = true;
            }
        }
        for edge in (0..n_edges).filter(|&e| !covered[e]) {
            let best = self
                .state
                .pool
                .iter()
                .enumerate()
                .filter(|(_, c)| c.edge == edge)
                .max_by(|(i, _), (j, _)| self.state.alpha[*i].total_cmp(&self.state.alpha[*j]).then(j.cmp(i)))
                .map(|(i, _)| i);
            if let Some(i) = best {
                keep[i] = true;
            }
        }
        let before = self.state.pool.len();
        let mut idx = 0;
        let mut alpha = Vec::with_capacity(before);
        let mut basic = Vec::with_capacity(before);
        let old_alpha = std::mem::take(&mut self.state.alpha);
        let old_basic = std::mem::take(&mut self.state.basic);
        self.state.pool.retain(|_| {
            let k = keep[idx];
            if k {
                alpha.push(old_alpha[idx]);
                basic.push(old_basic[idx]);
            }
            idx += 1;
            k
        });
        self.state.alpha = alpha;
        self.state.basic = basic;
        self.state.keys = self.state.pool.iter().map(Column::key).collect();
        let removed = before - self.state.pool.len();
        log::debug!("purged {removed} non-basic columns, {} remain", self.state.pool.len());
        removed
    }

    /// Re-solve the master over the current pool without adding columns.
    pub fn resolve(&mut self) -> Result<f64, DecompositionError> {
        let added = 0;
        let ms = self.solve_master()?;
        self.push_trace(added, ms, 0.0, 0, 0);
        Ok(self.state.objective())
    }

    /// Edge and node marginals from the current convexity weights.
    pub fn recover(&self, g: &Graph) -> FractionalSolution {
        let mut y: Vec<Vec<f64>> = self.subproblems.iter().map(|s| vec![0.0; s.size()]).collect();
        for (c, &a) in self.state.pool.iter().zip(&self.state.alpha) {
            if a > 0.0 {
                y[c.edge][c.solution_index] += a;
            }
        }
        for v in y.iter_mut().flatten() {
            *v = v.clamp(0.0, 1.0);
        }
        let costs: Vec<&[f64]> = self.subproblems.iter().map(|s| s.costs.as_slice()).collect();
        FractionalSolution::from_edge_vectors(g, y, &costs, !self.state.converged)
    }

    /// Largest reduced cost over all edges at the current duals.
    pub fn max_reduced_cost(&self) -> f64 {
        self.subproblems
            .iter()
            .map(|s| {
                price_subprogram(s, &self.state.duals, self.config.tie_rule, self.state.iteration)
                    .map_or(f64::INFINITY, |c| c.reduced_cost)
            })
            .fold(f64::NEG_INFINITY, f64::max)
    }
}

/// A point of the relaxation in edge and node form.
#[derive(Debug, Clone, PartialEq)]
pub struct FractionalSolution {
    pub edge_marginals: Vec<Vec<f64>>,
    /// Read from each node's lowest-id incident edge.
    pub node_marginals: Vec<Vec<f64>>,
    pub objective: f64,
    /// Set when the run had not converged; node marginals may then disagree
    /// across incident edges.
    pub provisional: bool,
}

impl FractionalSolution {
    pub fn from_edge_vectors(g: &Graph, y: Vec<Vec<f64>>, costs: &[&[f64]], provisional: bool) -> Self {
        let node_marginals = (0..g.num_nodes())
            .map(|s| match g.incident(s).first() {
                Some(&edge) => {
                    let e = &g.edges()[edge];
                    marginalize(&y[edge], g.cardinality(e.s), g.cardinality(e.t), g.endpoint_of(edge, s))
                        .expect("edge vector length")
                }
                None => vec![0.0; g.cardinality(s)],
            })
            .collect();
        let objective = y
            .iter()
            .zip(costs)
            .map(|(ye, c)| ye.iter().zip(c.iter()).map(|(a, b)| a * b).sum::<f64>())
            .sum();
        Self { edge_marginals: y, node_marginals, objective, provisional }
    }

    /// Largest difference between a node's marginal on any two incident edges.
    pub fn max_marginal_disagreement(&self, g: &Graph) -> f64 {
        let mut worst = 0.0f64;
        for s in 0..g.num_nodes() {
            for &edge in g.incident(s) {
                let e = &g.edges()[edge];
                let m = marginalize(&self.edge_marginals[edge], g.cardinality(e.s), g.cardinality(e.t), g.endpoint_of(edge, s))
                    .expect("edge vector length");
                for (a, b) in m.iter().zip(&self.node_marginals[s]) {
                    worst = worst.max((a - b).abs());
                }
            }
        }
        worst
    }
}
