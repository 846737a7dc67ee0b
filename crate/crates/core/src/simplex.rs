//! Two-phase primal revised simplex with bounded variables.
//!
//! The basis inverse is kept dense and updated in product form, with a fresh
//! Gauss-Jordan inversion every `refactor_every` pivots. Pricing uses the
//! largest reduced cost and switches to Bland's rule after a streak of
//! degenerate pivots.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::relaxation::DenseLp;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SimplexError {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("variable {var} has invalid bounds [{lower}, {upper}]")]
    InvalidBounds { var: usize, lower: f64, upper: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum PivotRule {
    /// Most positive reduced cost.
    Dantzig,
    /// Lowest eligible index, lowest leaving index on ratio ties.
    Bland,
}

/// Leaving-variable choice among tied ratios outside Bland mode.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum RatioTieBreak {
    LargestPivot,
    /// Lowest basis position; the classic rule under which Dantzig pricing can cycle.
    LowestPosition,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimplexOptions {
    /// Optimality and feasibility tolerance.
    pub tol: f64,
    /// Smallest magnitude accepted as a pivot element.
    pub pivot_tol: f64,
    pub pivot_rule: PivotRule,
    /// Switch to Bland's rule after this many consecutive degenerate pivots.
    pub bland_after_degenerate: Option<usize>,
    pub ratio_ties: RatioTieBreak,
    pub max_iterations: usize,
    pub refactor_every: usize,
}

impl Default for SimplexOptions {
    fn default() -> Self {
        Self {
            tol: 1e-9,
            pivot_tol: 1e-9,
            pivot_rule: PivotRule::Dantzig,
            bland_after_degenerate: Some(50),
            ratio_ties: RatioTieBreak::LargestPivot,
            max_iterations: 100_000,
            refactor_every: 100,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum LpStatus {
    Optimal,
    Infeasible,
    Unbounded,
    IterationLimit,
    /// The basis became numerically singular.
    NumericalFailure,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum BasisVar {
    Structural(usize),
    /// Slack of the i-th inequality row.
    Slack(usize),
    /// Artificial of the i-th row (equality rows first). Only stays basic on
    /// redundant rows, at value zero.
    Artificial(usize),
}

#[derive(Debug, Clone, PartialEq)]
pub struct LpSolution {
    pub status: LpStatus,
    /// Structural variable values.
    pub primal: Vec<f64>,
    /// One multiplier per row: equality rows first, then inequality rows.
    pub duals: Vec<f64>,
    /// `c_j - y . A_j` for every structural variable.
    pub reduced_costs: Vec<f64>,
    pub objective: f64,
    pub dual_objective: f64,
    pub basis: Vec<BasisVar>,
    pub iterations: usize,
    /// Sum of artificial values at the end of phase 1.
    pub phase1_infeasibility: f64,
    pub bland_pivots: usize,
}

impl LpSolution {
    fn without_solution(status: LpStatus, iterations: usize, phase1: f64, bland: usize) -> Self {
        Self {
            status,
            primal: Vec::new(),
            duals: Vec::new(),
            reduced_costs: Vec::new(),
            objective: f64::NAN,
            dual_objective: f64::NAN,
            basis: Vec::new(),
            iterations,
            phase1_infeasibility: phase1,
            bland_pivots: bland,
        }
    }

    pub fn is_optimal(&self) -> bool {
        self.status == LpStatus::Optimal
    }

    pub fn is_basic_structural(&self, j: usize) -> bool {
        self.basis.contains(&BasisVar::Structural(j))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum VarState {
    Basic,
    AtLower,
    AtUpper,
}

enum PhaseEnd {
    Optimal,
    Unbounded,
    IterationLimit,
    Numerical,
}

struct Tableau<'o> {
    opts: &'o SimplexOptions,
    m: usize,
    n_struct: usize,
    n_slack: usize,
    columns: Vec<Vec<(usize, f64)>>,
    lower: Vec<f64>,
    upper: Vec<f64>,
    rhs: Vec<f64>,
    x: Vec<f64>,
    state: Vec<VarState>,
    basis: Vec<usize>,
    binv: Vec<f64>,
    since_refactor: usize,
    iterations: usize,
    degenerate_streak: usize,
    bland_pivots: usize,
}

impl<'o> Tableau<'o> {
    fn var_kind(&self, v: usize) -> BasisVar {
        if v < self.n_struct {
            BasisVar::Structural(v)
        } else if v < self.n_struct + self.n_slack {
            BasisVar::Slack(v - self.n_struct)
        } else {
            BasisVar::Artificial(v - self.n_struct - self.n_slack)
        }
    }

    fn is_artificial(&self, v: usize) -> bool {
        v >= self.n_struct + self.n_slack
    }

    fn binv_row(&self, p: usize) -> &[f64] {
        &self.binv[p * self.m..(p + 1) * self.m]
    }

    /// `B^-1 A_j`.
    fn ftran(&self, j: usize) -> Vec<f64> {
        let m = self.m;
        let mut w = vec![0.0; m];
        for &(r, a) in &self.columns[j] {
            for (p, wp) in w.iter_mut().enumerate() {
                *wp += self.binv[p * m + r] * a;
            }
        }
        w
    }

    /// `c_B B^-1`.
    fn duals(&self, cost: &[f64]) -> Vec<f64> {
        let m = self.m;
        let mut y = vec![0.0; m];
        for (p, &v) in self.basis.iter().enumerate() {
            let c = cost[v];
            if c != 0.0 {
                for (yr, b) in y.iter_mut().zip(&self.binv[p * m..(p + 1) * m]) {
                    *yr += c * b;
                }
            }
        }
        y
    }

    fn reduced_cost(&self, cost: &[f64], y: &[f64], j: usize) -> f64 {
        cost[j] - self.columns[j].iter().map(|&(r, a)| y[r] * a).sum::<f64>()
    }

    fn refactor(&mut self) -> bool {
        let m = self.m;
        let mut a = vec![0.0; m * m];
        for (p, &v) in self.basis.iter().enumerate() {
            for &(r, val) in &self.columns[v] {
                a[r * m + p] = val;
            }
        }
        let mut inv = vec![0.0; m * m];
        for i in 0..m {
            inv[i * m + i] = 1.0;
        }
        for col in 0..m {
            let piv_row = (col..m)
                .max_by(|&r1, &r2| a[r1 * m + col].abs().total_cmp(&a[r2 * m + col].abs()))
                .expect("non-empty range");
            let piv = a[piv_row * m + col];
            if piv.abs() < 1e-11 {
                return false;
            }
            if piv_row != col {
                for k in 0..m {
                    a.swap(piv_row * m + k, col * m + k);
                    inv.swap(piv_row * m + k, col * m + k);
                }
            }
            let scale = 1.0 / piv;
            for k in 0..m {
                a[col * m + k] *= scale;
                inv[col * m + k] *= scale;
            }
            for r in 0..m {
                if r == col {
                    continue;
                }
                let f = a[r * m + col];
                if f != 0.0 {
                    for k in 0..m {
                        a[r * m + k] -= f * a[col * m + k];
                        inv[r * m + k] -= f * inv[col * m + k];
                    }
                }
            }
        }
        // rows of `inv` are indexed by basis position once B = A[:, basis]
        self.binv = inv;
        self.since_refactor = 0;
        self.recompute_basic_values();
        true
    }

    fn recompute_basic_values(&mut self) {
        let m = self.m;
        let mut r = self.rhs.clone();
        for (j, col) in self.columns.iter().enumerate() {
            if self.state[j] != VarState::Basic && self.x[j] != 0.0 {
                for &(row, a) in col {
                    r[row] -= a * self.x[j];
                }
            }
        }
        for p in 0..m {
            let v = self.basis[p];
            self.x[v] = self.binv_row(p).iter().zip(&r).map(|(b, ri)| b * ri).sum();
        }
    }

    fn pivot_update(&mut self, p: usize, w: &[f64]) {
        let m = self.m;
        let inv_piv = 1.0 / w[p];
        for k in 0..m {
            self.binv[p * m + k] *= inv_piv;
        }
        for i in 0..m {
            if i == p || w[i] == 0.0 {
                continue;
            }
            let f = w[i];
            for k in 0..m {
                self.binv[i * m + k] -= f * self.binv[p * m + k];
            }
        }
        self.since_refactor += 1;
    }

    fn run_phase(&mut self, cost: &[f64]) -> PhaseEnd {
        let tol = self.opts.tol;
        let mut verified = false;
        loop {
            if self.iterations >= self.opts.max_iterations {
                return PhaseEnd::IterationLimit;
            }
            if self.since_refactor >= self.opts.refactor_every && !self.refactor() {
                return PhaseEnd::Numerical;
            }

            let use_bland = self.opts.pivot_rule == PivotRule::Bland
                || self.opts.bland_after_degenerate.is_some_and(|lim| self.degenerate_streak >= lim);

            let y = self.duals(cost);
            let mut entering: Option<(usize, f64)> = None;
            for j in 0..self.columns.len() {
                let st = self.state[j];
                if st == VarState::Basic || self.lower[j] == self.upper[j] {
                    continue;
                }
                let d = self.reduced_cost(cost, &y, j);
                let eligible = (st == VarState::AtLower && d > tol) || (st == VarState::AtUpper && d < -tol);
                if !eligible {
                    continue;
                }
                if use_bland {
                    entering = Some((j, d));
                    break;
                }
                if entering.is_none_or(|(_, best)| d.abs() > best.abs()) {
                    entering = Some((j, d));
                }
            }

            let Some((j, _)) = entering else {
                if self.since_refactor > 0 && !verified {
                    if !self.refactor() {
                        return PhaseEnd::Numerical;
                    }
                    verified = true;
                    continue;
                }
                return PhaseEnd::Optimal;
            };
            verified = false;

            let dir = if self.state[j] == VarState::AtLower { 1.0 } else { -1.0 };
            let w = self.ftran(j);
            let mut theta = self.upper[j] - self.lower[j];
            let mut leaving: Option<(usize, f64)> = None;
            for (p, &wp) in w.iter().enumerate() {
                let a = wp * dir;
                let v = self.basis[p];
                let limit = if a > self.opts.pivot_tol {
                    if self.lower[v] == f64::NEG_INFINITY {
                        continue;
                    }
                    (self.x[v] - self.lower[v]).max(0.0) / a
                } else if a < -self.opts.pivot_tol {
                    if self.upper[v] == f64::INFINITY {
                        continue;
                    }
                    (self.upper[v] - self.x[v]).max(0.0) / -a
                } else {
                    continue;
                };
                if limit < theta - 1e-12 {
                    theta = limit;
                    leaving = Some((p, a));
                } else if limit <= theta + 1e-12 {
                    // ties with a bound flip keep the flip
                    if let Some((q, qa)) = leaving {
                        let replace = if use_bland {
                            v < self.basis[q]
                        } else {
                            match self.opts.ratio_ties {
                                RatioTieBreak::LargestPivot => a.abs() > qa.abs(),
                                RatioTieBreak::LowestPosition => false,
                            }
                        };
                        if replace {
                            theta = theta.min(limit);
                            leaving = Some((p, a));
                        }
                    }
                }
            }

            if theta == f64::INFINITY {
                return PhaseEnd::Unbounded;
            }

            for (p, &wp) in w.iter().enumerate() {
                if wp != 0.0 {
                    let v = self.basis[p];
                    self.x[v] -= theta * dir * wp;
                }
            }
            self.x[j] += theta * dir;

            match leaving {
                None => {
                    // bound flip
                    if dir > 0.0 {
                        self.x[j] = self.upper[j];
                        self.state[j] = VarState::AtUpper;
                    } else {
                        self.x[j] = self.lower[j];
                        self.state[j] = VarState::AtLower;
                    }
                }
                Some((p, a)) => {
                    let v = self.basis[p];
                    if a > 0.0 {
                        self.x[v] = self.lower[v];
                        self.state[v] = VarState::AtLower;
                    } else {
                        self.x[v] = self.upper[v];
                        self.state[v] = VarState::AtUpper;
                    }
                    self.basis[p] = j;
                    self.state[j] = VarState::Basic;
                    self.pivot_update(p, &w);
                }
            }

            self.iterations += 1;
            if use_bland {
                self.bland_pivots += 1;
            }
            if theta <= tol {
                self.degenerate_streak += 1;
            } else {
                self.degenerate_streak = 0;
            }
        }
    }

    /// Pivot basic artificials out of the basis where possible.
    fn drive_out_artificials(&mut self) -> bool {
        for p in 0..self.m {
            let v = self.basis[p];
            if !self.is_artificial(v) {
                continue;
            }
            let rho = self.binv_row(p).to_vec();
            let mut best: Option<(usize, f64)> = None;
            for j in 0..self.n_struct + self.n_slack {
                if self.state[j] == VarState::Basic {
                    continue;
                }
                let alpha: f64 = self.columns[j].iter().map(|&(r, a)| rho[r] * a).sum();
                if alpha.abs() > 1e-7 && best.is_none_or(|(_, b)| alpha.abs() > b.abs()) {
                    best = Some((j, alpha));
                }
            }
            if let Some((j, _)) = best {
                let w = self.ftran(j);
                self.x[v] = 0.0;
                self.state[v] = VarState::AtLower;
                self.basis[p] = j;
                self.state[j] = VarState::Basic;
                self.pivot_update(p, &w);
            }
        }
        self.refactor()
    }
}

fn validate(lp: &DenseLp) -> Result<(), SimplexError> {
    let n = lp.num_vars();
    let mismatch = |what: &str, got: usize, want: usize| {
        Err(SimplexError::DimensionMismatch(format!("{what} has length {got}, expected {want}")))
    };
    if lp.lower.len() != n {
        return mismatch("lower bounds", lp.lower.len(), n);
    }
    if lp.upper.len() != n {
        return mismatch("upper bounds", lp.upper.len(), n);
    }
    if lp.eq_rhs.len() != lp.eq_rows.len() {
        return mismatch("equality rhs", lp.eq_rhs.len(), lp.eq_rows.len());
    }
    if lp.ub_rhs.len() != lp.ub_rows.len() {
        return mismatch("inequality rhs", lp.ub_rhs.len(), lp.ub_rows.len());
    }
    for row in lp.eq_rows.iter().chain(&lp.ub_rows) {
        if let Some(&(j, _)) = row.iter().find(|&&(j, _)| j >= n) {
            return Err(SimplexError::DimensionMismatch(format!("row references variable {j} of {n}")));
        }
    }
    for j in 0..n {
        let (lo, hi) = (lp.lower[j], lp.upper[j]);
        if lo > hi || lo.is_nan() || hi.is_nan() || (lo == f64::NEG_INFINITY && hi == f64::INFINITY) {
            return Err(SimplexError::InvalidBounds { var: j, lower: lo, upper: hi });
        }
    }
    Ok(())
}

/// Solve `lp` as a maximisation.
pub fn solve_lp(lp: &DenseLp, opts: &SimplexOptions) -> Result<LpSolution, SimplexError> {
    validate(lp)?;
    let n_struct = lp.num_vars();
    let m_eq = lp.eq_rows.len();
    let m_ub = lp.ub_rows.len();
    let m = m_eq + m_ub;
    let n_total = n_struct + m_ub + m;

    let mut columns: Vec<Vec<(usize, f64)>> = vec![Vec::new(); n_total];
    for (r, row) in lp.eq_rows.iter().chain(&lp.ub_rows).enumerate() {
        for &(j, a) in row {
            if a != 0.0 {
                columns[j].push((r, a));
            }
        }
    }
    for col in columns.iter_mut().take(n_struct) {
        col.sort_by_key(|&(r, _)| r);
        // merge duplicate (row, var) entries
        col.dedup_by(|b, a| {
            if a.0 == b.0 {
                a.1 += b.1;
                true
            } else {
                false
            }
        });
    }
    for i in 0..m_ub {
        columns[n_struct + i].push((m_eq + i, 1.0));
    }

    let mut lower = lp.lower.clone();
    let mut upper = lp.upper.clone();
    lower.extend(std::iter::repeat_n(0.0, m_ub + m));
    upper.extend(std::iter::repeat_n(f64::INFINITY, m_ub));
    upper.extend(std::iter::repeat_n(0.0, m));

    let rhs: Vec<f64> = lp.eq_rhs.iter().chain(&lp.ub_rhs).copied().collect();
    let mut x = vec![0.0; n_total];
    let mut state = vec![VarState::AtLower; n_total];
    for j in 0..n_struct {
        if lower[j].is_finite() {
            x[j] = lower[j];
        } else {
            x[j] = upper[j];
            state[j] = VarState::AtUpper;
        }
    }

    let mut residual = rhs.clone();
    for (j, col) in columns.iter().enumerate().take(n_struct) {
        for &(r, a) in col {
            residual[r] -= a * x[j];
        }
    }

    let mut basis = Vec::with_capacity(m);
    let mut phase1_cost = vec![0.0; n_total];
    for (r, &res) in residual.iter().enumerate() {
        if r >= m_eq && res >= 0.0 {
            let s = n_struct + (r - m_eq);
            basis.push(s);
            state[s] = VarState::Basic;
            x[s] = res;
        } else {
            let a = n_struct + m_ub + r;
            columns[a].push((r, if res >= 0.0 { 1.0 } else { -1.0 }));
            upper[a] = f64::INFINITY;
            basis.push(a);
            state[a] = VarState::Basic;
            x[a] = res.abs();
            phase1_cost[a] = -1.0;
        }
    }
    // unused artificials still need a column for the driving-out bookkeeping
    for r in 0..m {
        let a = n_struct + m_ub + r;
        if columns[a].is_empty() {
            columns[a].push((r, 1.0));
        }
    }

    let mut t = Tableau {
        opts,
        m,
        n_struct,
        n_slack: m_ub,
        columns,
        lower,
        upper,
        rhs,
        x,
        state,
        basis,
        binv: Vec::new(),
        since_refactor: 0,
        iterations: 0,
        degenerate_streak: 0,
        bland_pivots: 0,
    };
    if !t.refactor() {
        return Ok(LpSolution::without_solution(LpStatus::NumericalFailure, 0, f64::NAN, 0));
    }

    let needs_phase1 = phase1_cost.iter().any(|&c| c != 0.0);
    let mut phase1_infeasibility = 0.0;
    if needs_phase1 {
        let end = t.run_phase(&phase1_cost);
        let infeas: f64 = (n_struct + m_ub..n_total).map(|a| t.x[a].max(0.0)).sum();
        phase1_infeasibility = infeas;
        match end {
            PhaseEnd::Optimal => {}
            PhaseEnd::IterationLimit => {
                return Ok(LpSolution::without_solution(LpStatus::IterationLimit, t.iterations, infeas, t.bland_pivots));
            }
            PhaseEnd::Numerical | PhaseEnd::Unbounded => {
                return Ok(LpSolution::without_solution(LpStatus::NumericalFailure, t.iterations, infeas, t.bland_pivots));
            }
        }
        let bnorm = t.rhs.iter().fold(0.0f64, |acc, v| acc.max(v.abs()));
        if infeas > 100.0 * opts.tol * (1.0 + bnorm) {
            return Ok(LpSolution::without_solution(LpStatus::Infeasible, t.iterations, infeas, t.bland_pivots));
        }
        for a in n_struct + m_ub..n_total {
            t.upper[a] = 0.0;
            if t.state[a] != VarState::Basic {
                t.x[a] = 0.0;
                t.state[a] = VarState::AtLower;
            }
        }
        if !t.drive_out_artificials() {
            return Ok(LpSolution::without_solution(LpStatus::NumericalFailure, t.iterations, infeas, t.bland_pivots));
        }
    } else {
        for a in n_struct + m_ub..n_total {
            t.upper[a] = 0.0;
        }
    }
    t.degenerate_streak = 0;

    let mut cost = vec![0.0; n_total];
    cost[..n_struct].copy_from_slice(&lp.objective);
    let end = t.run_phase(&cost);
    let status = match end {
        PhaseEnd::Optimal => LpStatus::Optimal,
        PhaseEnd::Unbounded => LpStatus::Unbounded,
        PhaseEnd::IterationLimit => LpStatus::IterationLimit,
        PhaseEnd::Numerical => LpStatus::NumericalFailure,
    };
    if status != LpStatus::Optimal {
        return Ok(LpSolution::without_solution(status, t.iterations, phase1_infeasibility, t.bland_pivots));
    }

    let y = t.duals(&cost);
    let reduced_costs: Vec<f64> = (0..n_struct).map(|j| t.reduced_cost(&cost, &y, j)).collect();
    let primal: Vec<f64> = (0..n_struct)
        .map(|j| {
            let v = t.x[j];
            if v < t.lower[j] && v >= t.lower[j] - opts.tol {
                t.lower[j]
            } else if v > t.upper[j] && v <= t.upper[j] + opts.tol {
                t.upper[j]
            } else {
                v
            }
        })
        .collect();
    let objective = lp.objective_value(&primal);

    // min b.y + sum_j (hi_j d_j^+ - lo_j d_j^-) over all columns
    let mut dual_objective: f64 = t.rhs.iter().zip(&y).map(|(b, yi)| b * yi).sum();
    for j in 0..n_struct + m_ub {
        let d = t.reduced_cost(&cost, &y, j);
        if d > 0.0 {
            dual_objective += d * t.upper[j];
        } else if d < 0.0 {
            dual_objective += d * t.lower[j];
        }
    }

    let basis = t.basis.iter().map(|&v| t.var_kind(v)).collect();
    Ok(LpSolution {
        status,
        primal,
        duals: y,
        reduced_costs,
        objective,
        dual_objective,
        basis,
        iterations: t.iterations,
        phase1_infeasibility,
        bland_pivots: t.bland_pivots,
    })
}
