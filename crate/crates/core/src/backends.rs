//! Named MAP solvers selectable at runtime.

use std::collections::BTreeMap;
use std::sync::Arc;
use std::time::{Duration, Instant};

use serde::Serialize;

use crate::baselines::{brute_force_map, max_product, DEFAULT_BRUTE_FORCE_CAP};
use crate::decomposition::{Candidate, ColumnGeneration, DwConfig, FractionalSolution, IterationOutcome, Pricer, TraceRecord};
use crate::model::{Assignment, Graph};
use crate::problem::MapProblem;
use crate::relaxation::{assemble_full_lp, DEFAULT_MAX_LP_VARIABLES};
use crate::rounding::{fractional_nodes, round_ip, SurvivingStates, DEFAULT_ROUND_CAP, DEFAULT_ROUND_EPS};
use crate::runtime::{Coordinator, PoolPricer, SerialPricer};
use crate::sideconstraints::{all_satisfied, many_to_one_nodes, SideConstraint, DEFAULT_SEARCH_BUDGET};
use crate::simplex::{solve_lp, LpStatus};
use crate::Error;

/// Where pricing runs for the `dw` backend.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum PricingMode {
    Serial,
    /// In-process thread pool of this many threads.
    Pool(usize),
    /// Remote workers connecting to `listen`.
    Remote { listen: String, workers: usize, accept_timeout: Option<Duration> },
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolveConfig {
    pub dw: DwConfig,
    pub pricing: PricingMode,
    pub round_eps: f64,
    pub round_cap: f64,
    pub max_lp_variables: usize,
    pub brute_force_cap: f64,
    pub bp_iterations: usize,
    pub bp_damping: f64,
    pub search_budget: usize,
}

impl Default for SolveConfig {
    fn default() -> Self {
        Self {
            dw: DwConfig::default(),
            pricing: PricingMode::Serial,
            round_eps: DEFAULT_ROUND_EPS,
            round_cap: DEFAULT_ROUND_CAP,
            max_lp_variables: DEFAULT_MAX_LP_VARIABLES,
            brute_force_cap: DEFAULT_BRUTE_FORCE_CAP,
            bp_iterations: 100,
            bp_damping: 0.0,
            search_budget: DEFAULT_SEARCH_BUDGET,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct Timings {
    pub setup_ms: f64,
    pub solve_ms: f64,
    pub rounding_ms: f64,
    pub total_ms: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SolveReport {
    pub backend: String,
    /// Over the original graph, isolated nodes included.
    pub assignment: Assignment,
    pub value: f64,
    /// Relaxation optimum (an upper bound on `value` when converged),
    /// isolated-node maxima included.
    pub lp_objective: Option<f64>,
    pub fractional_fraction: Option<f64>,
    pub converged: bool,
    pub iterations: usize,
    pub rounding_fallback: bool,
    pub constraints_satisfied: bool,
    pub many_to_one: usize,
    pub pool_size: Option<usize>,
    pub timings: Timings,
    #[serde(skip)]
    pub trace: Vec<TraceRecord>,
    #[serde(skip)]
    pub fractional: Option<FractionalSolution>,
    #[serde(skip)]
    pub surviving: Option<SurvivingStates>,
    #[serde(skip)]
    pub candidate_log: Vec<Vec<Candidate>>,
}

impl SolveReport {
    fn integral(backend: &str, problem: &MapProblem, assignment: Assignment) -> Self {
        let value = problem.original().log_score(&assignment).expect("backend returns a valid assignment");
        Self {
            backend: backend.to_string(),
            constraints_satisfied: all_satisfied(problem.original(), problem.original_side(), &assignment),
            many_to_one: count_many_to_one(problem.original_side(), &assignment),
            assignment,
            value,
            lp_objective: None,
            fractional_fraction: None,
            converged: true,
            iterations: 0,
            rounding_fallback: false,
            pool_size: None,
            timings: Timings::default(),
            trace: Vec::new(),
            fractional: None,
            surviving: None,
            candidate_log: Vec::new(),
        }
    }
}

/// Many-to-one matches summed over the injective constraints.
pub fn count_many_to_one(sc: &[SideConstraint], a: &Assignment) -> usize {
    sc.iter()
        .map(|c| match c {
            SideConstraint::Injective { nodes, outlier } => many_to_one_nodes(a, nodes, *outlier),
            SideConstraint::Linear { .. } => 0,
        })
        .sum()
}

fn ms(d: Duration) -> f64 {
    d.as_secs_f64() * 1e3
}

/// Objective contribution of the isolated nodes at their local maxima.
fn isolated_constant(problem: &MapProblem) -> f64 {
    let g = problem.original();
    problem
        .reduced()
        .isolated
        .iter()
        .map(|&n| g.local(n).iter().copied().fold(f64::NEG_INFINITY, f64::max))
        .sum()
}

pub trait MapBackend: Send + Sync {
    fn name(&self) -> &'static str;

    fn description(&self) -> &'static str;

    fn solve(&self, problem: &MapProblem, config: &SolveConfig) -> Result<SolveReport, Error>;
}

/// Backends by name.
pub struct BackendRegistry {
    backends: BTreeMap<&'static str, Box<dyn MapBackend>>,
}

impl BackendRegistry {
    pub fn empty() -> Self {
        Self { backends: BTreeMap::new() }
    }

    pub fn with_defaults() -> Self {
        let mut r = Self::empty();
        r.register(Box::new(DwBackend));
        r.register(Box::new(DirectLpBackend));
        r.register(Box::new(BruteForceBackend));
        r.register(Box::new(MaxProductBackend));
        r
    }

    /// Add a backend, replacing any with the same name.
    pub fn register(&mut self, backend: Box<dyn MapBackend>) {
        self.backends.insert(backend.name(), backend);
    }

    pub fn get(&self, name: &str) -> Result<&dyn MapBackend, Error> {
        self.backends.get(name).map(|b| b.as_ref()).ok_or_else(|| Error::UnknownBackend {
            name: name.to_string(),
            available: self.names().join(", "),
        })
    }

    pub fn names(&self) -> Vec<&'static str> {
        self.backends.keys().copied().collect()
    }

    pub fn iter(&self) -> impl Iterator<Item = &dyn MapBackend> {
        self.backends.values().map(|b| b.as_ref())
    }

    pub fn solve(&self, name: &str, problem: &MapProblem, config: &SolveConfig) -> Result<SolveReport, Error> {
        let t0 = Instant::now();
        let mut report = self.get(name)?.solve(problem, config)?;
        report.timings.total_ms = ms(t0.elapsed());
        Ok(report)
    }
}

/// Round a relaxation point and fill the relaxation fields of a report.
fn round_into_report(
    backend: &str,
    problem: &MapProblem,
    config: &SolveConfig,
    fractional: FractionalSolution,
) -> Result<SolveReport, Error> {
    let g = problem.graph();
    let t0 = Instant::now();
    let surviving = fractional_nodes(&fractional, config.round_eps)?;
    let rounded = round_ip(g, &surviving, &fractional.node_marginals, problem.side(), config.round_cap)?;
    let rounding_ms = ms(t0.elapsed());
    let mut report = SolveReport::integral(backend, problem, problem.lift(&rounded.assignment));
    report.lp_objective = Some(fractional.objective + isolated_constant(problem));
    report.fractional_fraction = Some(surviving.fractional_fraction());
    report.rounding_fallback = rounded.fallback;
    report.timings.rounding_ms = rounding_ms;
    report.fractional = Some(fractional);
    report.surviving = Some(surviving);
    Ok(report)
}

/// Report for a problem whose every node is isolated.
fn edgeless(backend: &str, problem: &MapProblem) -> SolveReport {
    let a = problem.lift(&Assignment::new(Vec::new()));
    let mut report = SolveReport::integral(backend, problem, a);
    report.lp_objective = Some(report.value);
    report.fractional_fraction = Some(0.0);
    report
}

/// Build the pricer selected by `mode`.
pub fn make_pricer(problem: &MapProblem, mode: &PricingMode) -> Result<Box<dyn Pricer>, Error> {
    let subs = problem.subproblems().clone();
    Ok(match mode {
        PricingMode::Serial => Box::new(SerialPricer::new(subs)),
        PricingMode::Pool(threads) => Box::new(PoolPricer::new(subs, *threads)?),
        PricingMode::Remote { listen, workers, accept_timeout } => {
            let coord = Coordinator::bind(listen.as_str())?;
            log::info!("waiting for {workers} workers on {}", coord.local_addr()?);
            Box::new(coord.accept_workers(*workers, subs, *accept_timeout)?)
        }
    })
}

/// Column generation with a caller-supplied pricer, followed by rounding.
pub fn solve_dw_with(problem: &MapProblem, config: &SolveConfig, pricer: &mut dyn Pricer) -> Result<SolveReport, Error> {
    const NAME: &str = "dw";
    if problem.graph().num_edges() == 0 {
        return Ok(edgeless(NAME, problem));
    }
    let t0 = Instant::now();
    let (_, columns) = problem.initial_columns(config.search_budget)?;
    let mut cg = ColumnGeneration::start(
        Arc::clone(problem.subproblems()),
        Arc::clone(problem.system()),
        columns,
        config.dw.clone(),
    )?;
    let setup_ms = ms(t0.elapsed());

    let t1 = Instant::now();
    let outcome = cg.run(pricer)?;
    let solve_ms = ms(t1.elapsed());
    if outcome == IterationOutcome::IterationLimit {
        log::warn!("column generation stopped at the iteration cap of {}", config.dw.max_iterations);
    }
    let fractional = cg.recover(problem.graph());
    if !fractional.provisional {
        let gap = fractional.max_marginal_disagreement(problem.graph());
        if gap > 1e-7 {
            log::warn!("incident-edge marginals disagree by {gap:.3e} at convergence");
        }
    }

    let mut report = round_into_report(NAME, problem, config, fractional)?;
    let state = cg.state();
    report.converged = state.converged();
    report.iterations = state.iteration();
    report.pool_size = Some(state.pool().len());
    report.trace = state.trace().to_vec();
    report.candidate_log = state.candidate_log().to_vec();
    report.timings.setup_ms = setup_ms;
    report.timings.solve_ms = solve_ms;
    Ok(report)
}

/// Dantzig-Wolfe column generation.
pub struct DwBackend;

impl MapBackend for DwBackend {
    fn name(&self) -> &'static str {
        "dw"
    }

    fn description(&self) -> &'static str {
        "Dantzig-Wolfe column generation over edge subprograms, then IP rounding"
    }

    fn solve(&self, problem: &MapProblem, config: &SolveConfig) -> Result<SolveReport, Error> {
        if problem.graph().num_edges() == 0 {
            return Ok(edgeless(self.name(), problem));
        }
        let mut pricer = make_pricer(problem, &config.pricing)?;
        solve_dw_with(problem, config, pricer.as_mut())
    }
}

/// The full edge-variable LP solved in one simplex run.
pub struct DirectLpBackend;

impl MapBackend for DirectLpBackend {
    fn name(&self) -> &'static str {
        "direct-lp"
    }

    fn description(&self) -> &'static str {
        "full LP relaxation solved directly by the simplex, then IP rounding"
    }

    fn solve(&self, problem: &MapProblem, config: &SolveConfig) -> Result<SolveReport, Error> {
        if problem.graph().num_edges() == 0 {
            return Ok(edgeless(self.name(), problem));
        }
        let t0 = Instant::now();
        let costs: Vec<_> = problem.costs().to_vec();
        let full = assemble_full_lp(problem.graph(), problem.system(), &costs, config.max_lp_variables)?;
        let setup_ms = ms(t0.elapsed());
        let t1 = Instant::now();
        let sol = solve_lp(&full.lp, &config.dw.simplex)?;
        let solve_ms = ms(t1.elapsed());
        if sol.status != LpStatus::Optimal {
            return Err(Error::Backend { backend: self.name().into(), message: format!("simplex ended with status {:?}", sol.status) });
        }
        let y = full.edge_vectors(&sol.primal);
        let cost_refs: Vec<&[f64]> = costs.iter().map(|c| c.values.as_slice()).collect();
        let fractional = FractionalSolution::from_edge_vectors(problem.graph(), y, &cost_refs, false);
        let mut report = round_into_report(self.name(), problem, config, fractional)?;
        report.iterations = sol.iterations;
        report.timings.setup_ms = setup_ms;
        report.timings.solve_ms = solve_ms;
        Ok(report)
    }
}

/// Exhaustive enumeration.
pub struct BruteForceBackend;

impl MapBackend for BruteForceBackend {
    fn name(&self) -> &'static str {
        "brute"
    }

    fn description(&self) -> &'static str {
        "exact MAP by exhaustive enumeration (small models only)"
    }

    fn solve(&self, problem: &MapProblem, config: &SolveConfig) -> Result<SolveReport, Error> {
        let t0 = Instant::now();
        let (a, _) = brute_force_map(problem.original(), problem.original_side(), config.brute_force_cap)?;
        let mut report = SolveReport::integral(self.name(), problem, a);
        report.timings.solve_ms = ms(t0.elapsed());
        Ok(report)
    }
}

/// Loopy max-product belief propagation. Ignores side constraints.
pub struct MaxProductBackend;

impl MapBackend for MaxProductBackend {
    fn name(&self) -> &'static str {
        "max-product"
    }

    fn description(&self) -> &'static str {
        "synchronous max-product belief propagation (ignores side constraints)"
    }

    fn solve(&self, problem: &MapProblem, config: &SolveConfig) -> Result<SolveReport, Error> {
        if !problem.original_side().is_empty() {
            log::warn!("max-product ignores side constraints");
        }
        let t0 = Instant::now();
        let r = max_product(problem.original(), config.bp_iterations, config.bp_damping);
        let mut report = SolveReport::integral(self.name(), problem, r.assignment);
        report.converged = r.converged;
        report.iterations = r.iterations;
        report.timings.solve_ms = ms(t0.elapsed());
        Ok(report)
    }
}

/// Convenience: prepare `g` and solve with the named default backend.
pub fn solve(name: &str, g: Graph, side: &[SideConstraint], config: &SolveConfig) -> Result<SolveReport, Error> {
    let problem = MapProblem::new(g, side)?;
    BackendRegistry::with_defaults().solve(name, &problem, config)
}
