//! Solvers for the three projection classes:
//!
//! * plain projection `argmin_{Aθ≤b} ½‖θ − y‖²` ([`project`]),
//! * linearly perturbed partial projection
//!   `argmin_{Aξ+Bθ≤c} ½‖θ − y‖² + dᵀξ` ([`solve_lifted`]),
//! * quadratically perturbed projection
//!   `argmin_{Aξ+Bθ≤c} ½‖θ − y‖² + (λ/2)‖ξ‖²` ([`solve_lifted`]).
//!
//! The default [`Method::ActiveSet`] reduces every strictly convex instance to
//! a Euclidean projection (the auxiliary block is rescaled by `1/√λ`) and runs
//! an exact dual active-set method on it. Problems that are only
//! semidefinite in `ξ` are solved by a short sequence of proximal
//! subproblems in `ξ`, each an exact projection; after every subproblem the
//! working set is polished by an equality-constrained re-solve of the
//! original problem, which stops the loop as soon as the KKT conditions of
//! the unregularised problem hold.
//!
//! [`Method::OperatorSplittingWithPolish`] runs ADMM followed by the same
//! polish and falls back to the active-set method when the polished point
//! fails verification.

mod admm;
mod dual;
pub mod nnls;
mod polish;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{
    active_set, default_active_tol, select_rows, ActiveSet, ConstraintSystem, LiftedSystem,
    Perturbation, Polyhedron,
};
use crate::union_find::UnionFind;

pub(crate) use dual::{project_polyhedron, EngineStatus, SparseRows};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    ActiveSet,
    OperatorSplittingWithPolish,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolverConfig {
    pub max_iterations: usize,
    /// Absolute tolerance on constraint violation and stationarity.
    pub primal_tol: f64,
    /// Absolute tolerance on multiplier sign.
    pub dual_tol: f64,
    pub method: Method,
    /// Override for the active-set tolerance; `None` uses
    /// `1e-7 · (1 + ‖point‖∞)`.
    pub active_tol: Option<f64>,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            max_iterations: 500_000,
            primal_tol: 1e-9,
            dual_tol: 1e-9,
            method: Method::ActiveSet,
            active_tol: None,
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<()> {
        if self.max_iterations == 0 {
            return Err(Error::InvalidInput("max_iterations must be >= 1".into()));
        }
        if !(self.primal_tol > 0.0 && self.dual_tol > 0.0) {
            return Err(Error::InvalidInput("solver tolerances must be > 0".into()));
        }
        if let Some(t) = self.active_tol {
            if !(t > 0.0) {
                return Err(Error::InvalidInput("active tolerance must be > 0".into()));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Status {
    Optimal,
    MaxIter,
    Infeasible,
    Unbounded,
}

/// Absolute KKT residuals of a fit.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct KktResiduals {
    /// `‖θ − y + Bᵀμ‖∞` combined with `‖λξ + d + Aᵀμ‖∞`.
    pub stationarity: f64,
    pub primal_infeasibility: f64,
    pub dual_infeasibility: f64,
    /// `max_i |μ_i · residual_i|`.
    pub complementarity: f64,
}

impl KktResiduals {
    pub fn max(&self) -> f64 {
        self.stationarity
            .max(self.primal_infeasibility)
            .max(self.dual_infeasibility)
            .max(self.complementarity)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitResult {
    pub theta_hat: DVector<f64>,
    /// Auxiliary block of a lifted fit.
    pub xi_hat: Option<DVector<f64>>,
    /// One multiplier per constraint row, zero off the working set.
    pub duals: DVector<f64>,
    pub active: ActiveSet,
    pub objective: f64,
    pub status: Status,
    pub kkt: KktResiduals,
    pub iterations: usize,
    /// Linearly independent rows that carried the multipliers; used to warm
    /// start neighbouring problems.
    pub working_set: Vec<usize>,
}

impl FitResult {
    /// `[ξ; θ]`, or `θ` for plain fits.
    pub fn stacked_point(&self) -> DVector<f64> {
        match &self.xi_hat {
            Some(xi) => LiftedSystem::stack_point(xi, &self.theta_hat),
            None => self.theta_hat.clone(),
        }
    }
}

/// Starting information carried from a neighbouring solve.
#[derive(Debug, Clone, Default)]
pub struct WarmStart {
    pub working_set: Vec<usize>,
    pub xi: Option<DVector<f64>>,
}

impl From<&FitResult> for WarmStart {
    fn from(fit: &FitResult) -> Self {
        Self {
            working_set: fit.working_set.clone(),
            xi: fit.xi_hat.clone(),
        }
    }
}

/// Euclidean projection of `y` onto `{θ : Aθ ≤ b}`.
pub fn project(sys: &ConstraintSystem, y: &DVector<f64>, cfg: &SolverConfig) -> Result<FitResult> {
    project_with(sys, y, cfg, None)
}

pub fn project_with(
    sys: &ConstraintSystem,
    y: &DVector<f64>,
    cfg: &SolverConfig,
    warm: Option<&WarmStart>,
) -> Result<FitResult> {
    let mut fit = solve_lifted_with(&sys.to_lifted(), y, cfg, warm)?;
    fit.xi_hat = None;
    Ok(fit)
}

/// Partial projection of `y` onto a lifted polyhedron with its perturbation.
pub fn solve_lifted(sys: &LiftedSystem, y: &DVector<f64>, cfg: &SolverConfig) -> Result<FitResult> {
    solve_lifted_with(sys, y, cfg, None)
}

pub fn solve_lifted_with(
    sys: &LiftedSystem,
    y: &DVector<f64>,
    cfg: &SolverConfig,
    warm: Option<&WarmStart>,
) -> Result<FitResult> {
    cfg.validate()?;
    if y.len() != sys.n() {
        return Err(Error::Dimension(format!(
            "y has length {}, system has n = {}",
            y.len(),
            sys.n()
        )));
    }
    if y.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("response vector"));
    }
    if let Perturbation::Linear(_) = sys.perturbation() {
        if sys.p() > 0 && !check_bounded(sys)?.bounded {
            return Err(Error::Unbounded);
        }
    }
    match cfg.method {
        Method::ActiveSet => active_set_solve(sys, y, cfg, warm),
        Method::OperatorSplittingWithPolish => admm::solve(sys, y, cfg, warm),
    }
}

fn linear_term(sys: &LiftedSystem) -> DVector<f64> {
    match sys.perturbation() {
        Perturbation::Linear(d) => d.clone(),
        _ => DVector::zeros(sys.p()),
    }
}

fn xi_weight(sys: &LiftedSystem) -> f64 {
    match sys.perturbation() {
        Perturbation::Quadratic(l) => *l,
        _ => 0.0,
    }
}

struct EngineOut {
    xi: DVector<f64>,
    theta: DVector<f64>,
    working: Vec<usize>,
    multipliers: Vec<f64>,
    iterations: usize,
    status: EngineStatus,
}

/// Exact solve of `½‖θ − y‖² + gᵀξ + (h/2)‖ξ‖²` over the lifted rows, `h > 0`
/// (or `p = 0`).
fn engine_solve(
    sys: &LiftedSystem,
    y: &DVector<f64>,
    h: f64,
    g: &DVector<f64>,
    hint: &[usize],
    max_iter: usize,
) -> EngineOut {
    let p = sys.p();
    let n = sys.n();
    let s = if p > 0 { 1.0 / h.sqrt() } else { 1.0 };
    let rows = SparseRows::from_blocks(&[(sys.a(), s), (sys.b(), 1.0)], sys.c().as_slice());
    let mut z0 = vec![0.0; p + n];
    for j in 0..p {
        z0[j] = -s * g[j];
    }
    z0[p..].copy_from_slice(y.as_slice());
    let out = project_polyhedron(&rows, &z0, hint, max_iter);
    let xi = DVector::from_fn(p, |j, _| s * out.z[j]);
    let theta = DVector::from_fn(n, |i, _| out.z[p + i]);
    EngineOut {
        xi,
        theta,
        working: out.working,
        multipliers: out.multipliers,
        iterations: out.iterations,
        status: out.status,
    }
}

const PROX_START: f64 = 1.0;
const PROX_MIN: f64 = 1e-8;
const PROX_OUTER: usize = 80;
const POLISH_ROUNDS: usize = 5;
const REFINE_BAND: f64 = 1e-6;

fn active_set_solve(
    sys: &LiftedSystem,
    y: &DVector<f64>,
    cfg: &SolverConfig,
    warm: Option<&WarmStart>,
) -> Result<FitResult> {
    let p = sys.p();
    let h = xi_weight(sys);
    let d = linear_term(sys);
    let hint: Vec<usize> = warm.map(|w| w.working_set.clone()).unwrap_or_default();

    if p == 0 || h > 0.0 {
        let out = engine_solve(sys, y, if p > 0 { h } else { 1.0 }, &d, &hint, cfg.max_iterations);
        return match out.status {
            EngineStatus::Infeasible => Err(Error::Infeasible),
            EngineStatus::Optimal | EngineStatus::MaxIter => {
                let status = if out.status == EngineStatus::Optimal {
                    Status::Optimal
                } else {
                    Status::MaxIter
                };
                if p > 0 && status == Status::Optimal {
                    let scale = 1.0 + y.amax() + sys.c().amax();
                    if let Some(fit) = polish_verified(sys, y, h, &d, &out, cfg, scale, out.iterations) {
                        if fit.kkt.max() <= kkt_of(sys, y, &out).max() {
                            return Ok(fit);
                        }
                    }
                }
                let duals = scatter(sys.m(), &out.working, &out.multipliers);
                Ok(assemble(sys, y, out.xi, out.theta, duals, out.working, out.iterations, status, cfg))
            }
        };
    }

    // Semidefinite in ξ: proximal subproblems with a shrinking weight.
    let mut xi_k = warm
        .and_then(|w| w.xi.clone())
        .filter(|x| x.len() == p)
        .unwrap_or_else(|| DVector::zeros(p));
    let mut hint = hint;
    let mut rho = PROX_START;
    let mut total = 0;
    let mut last: Option<EngineOut> = None;
    let scale = 1.0 + y.amax() + sys.c().amax();
    for _ in 0..PROX_OUTER {
        let g = &d - rho * &xi_k;
        let out = engine_solve(sys, y, rho, &g, &hint, cfg.max_iterations);
        total += out.iterations;
        match out.status {
            EngineStatus::Infeasible => return Err(Error::Infeasible),
            EngineStatus::MaxIter => {
                last = Some(out);
                break;
            }
            EngineStatus::Optimal => {}
        }
        if let Some(fit) = polish_verified(sys, y, 0.0, &d, &out, cfg, scale, total) {
            return Ok(fit);
        }
        hint = out.working.clone();
        xi_k = out.xi.clone();
        rho = (rho * 0.1).max(PROX_MIN);
        last = Some(out);
    }
    let out = last.expect("at least one proximal subproblem runs");
    let duals = scatter(sys.m(), &out.working, &out.multipliers);
    Ok(assemble(sys, y, out.xi, out.theta, duals, out.working, total, Status::MaxIter, cfg))
}

fn kkt_of(sys: &LiftedSystem, y: &DVector<f64>, out: &EngineOut) -> KktResiduals {
    let duals = scatter(sys.m(), &out.working, &out.multipliers);
    kkt_residuals(sys, y, &out.xi, &out.theta, &duals)
}

/// Polish on the engine's working set. A polished point that misses only by
/// round-off on a few rows is polished again with those rows added.
#[allow(clippy::too_many_arguments)]
fn polish_verified(
    sys: &LiftedSystem,
    y: &DVector<f64>,
    h: f64,
    d: &DVector<f64>,
    out: &EngineOut,
    cfg: &SolverConfig,
    scale: f64,
    iterations: usize,
) -> Option<FitResult> {
    let mut working = out.working.clone();
    for _ in 0..POLISH_ROUNDS {
        let pol = polish::solve_on_working_set(sys, y, h, Some(d), &working, Some(&out.xi))?;
        let duals = scatter(sys.m(), &working, pol.multipliers.as_slice());
        if verify(sys, &pol.xi, &pol.theta, &duals, cfg, scale) {
            return Some(assemble(sys, y, pol.xi, pol.theta, duals, working, iterations, Status::Optimal, cfg));
        }
        let r = sys.residuals(&LiftedSystem::stack_point(&pol.xi, &pol.theta)).ok()?;
        let min_dual = duals.iter().cloned().fold(0.0_f64, f64::min);
        if r.max() > REFINE_BAND * scale || -min_dual > cfg.dual_tol * scale {
            return None;
        }
        let before = working.len();
        working.extend((0..sys.m()).filter(|&i| r[i] > cfg.primal_tol * scale));
        working.sort_unstable();
        working.dedup();
        if working.len() == before {
            return None;
        }
    }
    None
}

fn scatter(m: usize, working: &[usize], mult: &[f64]) -> DVector<f64> {
    let mut duals = DVector::zeros(m);
    for (&i, &u) in working.iter().zip(mult) {
        duals[i] = u;
    }
    duals
}

/// Primal feasibility and multiplier signs of a candidate point; stationarity
/// is exact by construction for polished points.
fn verify(
    sys: &LiftedSystem,
    xi: &DVector<f64>,
    theta: &DVector<f64>,
    duals: &DVector<f64>,
    cfg: &SolverConfig,
    scale: f64,
) -> bool {
    let Ok(viol) = sys.max_violation(xi, theta) else {
        return false;
    };
    let min_dual = duals.iter().cloned().fold(0.0_f64, f64::min);
    viol <= cfg.primal_tol * scale && -min_dual <= cfg.dual_tol * scale
}

#[allow(clippy::too_many_arguments)]
fn assemble(
    sys: &LiftedSystem,
    y: &DVector<f64>,
    xi: DVector<f64>,
    theta: DVector<f64>,
    duals: DVector<f64>,
    working: Vec<usize>,
    iterations: usize,
    status: Status,
    cfg: &SolverConfig,
) -> FitResult {
    let point = LiftedSystem::stack_point(&xi, &theta);
    let tol = cfg.active_tol.unwrap_or_else(|| default_active_tol(&point));
    let active = active_set(sys, &point, tol).expect("dimensions checked by caller");
    let kkt = kkt_residuals(sys, y, &xi, &theta, &duals);
    let objective = objective(sys, y, &xi, &theta);
    FitResult {
        theta_hat: theta,
        xi_hat: Some(xi),
        duals,
        active,
        objective,
        status,
        kkt,
        iterations,
        working_set: working,
    }
}

/// Objective value of a lifted problem at `(ξ, θ)`.
pub fn objective(sys: &LiftedSystem, y: &DVector<f64>, xi: &DVector<f64>, theta: &DVector<f64>) -> f64 {
    let mut f = 0.5 * (theta - y).norm_squared();
    match sys.perturbation() {
        Perturbation::None => {}
        Perturbation::Linear(d) => f += d.dot(xi),
        Perturbation::Quadratic(l) => f += 0.5 * l * xi.norm_squared(),
    }
    f
}

/// KKT residuals of a lifted fit.
pub fn kkt_residuals(
    sys: &LiftedSystem,
    y: &DVector<f64>,
    xi: &DVector<f64>,
    theta: &DVector<f64>,
    duals: &DVector<f64>,
) -> KktResiduals {
    let st_theta = theta - y + sys.b().transpose() * duals;
    let mut st = st_theta.amax();
    if sys.p() > 0 {
        let mut st_xi = sys.a().transpose() * duals;
        match sys.perturbation() {
            Perturbation::None => {}
            Perturbation::Linear(d) => st_xi += d,
            Perturbation::Quadratic(l) => st_xi += *l * xi,
        }
        st = st.max(st_xi.amax());
    }
    let res = sys
        .residuals(&LiftedSystem::stack_point(xi, theta))
        .expect("dimensions match");
    KktResiduals {
        stationarity: st,
        primal_infeasibility: res.iter().fold(0.0_f64, |a, &v| a.max(v)),
        dual_infeasibility: duals.iter().fold(0.0_f64, |a, &v| a.max(0.0 - v)),
        complementarity: duals
            .iter()
            .zip(res.iter())
            .fold(0.0_f64, |a, (&u, &r)| a.max((u * r).abs())),
    }
}

/// KKT residuals of a plain projection fit.
pub fn kkt_residuals_plain(
    sys: &ConstraintSystem,
    y: &DVector<f64>,
    theta: &DVector<f64>,
    duals: &DVector<f64>,
) -> KktResiduals {
    let st = (theta - y + sys.a().transpose() * duals).amax();
    let res = sys.residuals(theta).expect("dimensions match");
    KktResiduals {
        stationarity: st,
        primal_infeasibility: res.iter().fold(0.0_f64, |a, &v| a.max(v)),
        dual_infeasibility: duals.iter().fold(0.0_f64, |a, &v| a.max(0.0 - v)),
        complementarity: duals
            .iter()
            .zip(res.iter())
            .fold(0.0_f64, |a, (&u, &r)| a.max((u * r).abs())),
    }
}

/// Result of the boundedness test for a linearly perturbed problem.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundednessCertificate {
    pub bounded: bool,
    /// `λ ≥ 0` with `Aᵀλ ≈ −d` (the best nonnegative fit when unbounded).
    pub multipliers: DVector<f64>,
    /// `‖Aᵀλ + d‖₂`.
    pub residual: f64,
}

/// Test whether `−d` lies in the cone generated by the rows of `A`.
pub fn check_bounded(sys: &LiftedSystem) -> Result<BoundednessCertificate> {
    let m = sys.m();
    let d = match sys.perturbation() {
        Perturbation::Linear(d) => d.clone(),
        _ => {
            return Ok(BoundednessCertificate {
                bounded: true,
                multipliers: DVector::zeros(m),
                residual: 0.0,
            })
        }
    };
    if d.iter().all(|&v| v == 0.0) {
        return Ok(BoundednessCertificate {
            bounded: true,
            multipliers: DVector::zeros(m),
            residual: 0.0,
        });
    }
    let e = sys.a().transpose();
    let sol = nnls::nnls(&e, &(-&d));
    let tol = 1e-9 * (1.0 + d.amax()) * (1.0 + sys.a().amax());
    Ok(BoundednessCertificate {
        bounded: sol.residual_norm <= tol,
        multipliers: sol.x,
        residual: sol.residual_norm,
    })
}

/// Nonnegative multipliers supported on `active` that best satisfy the
/// stationarity equations at `(ξ, θ)`.
///
/// The equations decouple over connected groups of coordinates (two
/// coordinates are linked when an active row touches both), so each group
/// is solved as its own small nonnegative least-squares problem.
pub fn recover_duals(
    sys: &LiftedSystem,
    y: &DVector<f64>,
    xi: &DVector<f64>,
    theta: &DVector<f64>,
    active: &[usize],
) -> DVector<f64> {
    let p = sys.p();
    let n = sys.n();
    let mut target = DVector::zeros(p + n);
    let mut xi_part = DVector::zeros(p);
    match sys.perturbation() {
        Perturbation::None => {}
        Perturbation::Linear(d) => xi_part -= d,
        Perturbation::Quadratic(l) => xi_part -= *l * xi,
    }
    target.rows_mut(0, p).copy_from(&xi_part);
    target.rows_mut(p, n).copy_from(&(y - theta));

    let a_j = select_rows(sys.a(), active);
    let b_j = select_rows(sys.b(), active);
    let mut rows = DMatrix::zeros(active.len(), p + n);
    rows.columns_mut(0, p).copy_from(&a_j);
    rows.columns_mut(p, n).copy_from(&b_j);
    let mu = grouped_nnls(&rows, &target);
    scatter(sys.m(), active, mu.as_slice())
}

/// [`recover_duals`] for a plain system.
pub fn recover_duals_plain(
    sys: &ConstraintSystem,
    y: &DVector<f64>,
    theta: &DVector<f64>,
    active: &[usize],
) -> DVector<f64> {
    let rows = sys.rows_of_a(active);
    let mu = grouped_nnls(&rows, &(y - theta));
    scatter(sys.m(), active, mu.as_slice())
}

fn grouped_nnls(rows: &DMatrix<f64>, target: &DVector<f64>) -> DVector<f64> {
    let k = rows.nrows();
    let dim = rows.ncols();
    let mut uf = UnionFind::new(dim);
    let mut anchor = vec![usize::MAX; k];
    for r in 0..k {
        let mut first = None;
        for c in 0..dim {
            if rows[(r, c)] != 0.0 {
                match first {
                    None => first = Some(c),
                    Some(f) => {
                        uf.union(f, c);
                    }
                }
            }
        }
        if let Some(f) = first {
            anchor[r] = f;
        }
    }
    let labels = uf.labels();
    let groups = uf.components();
    let mut group_rows: Vec<Vec<usize>> = vec![Vec::new(); groups];
    let mut group_cols: Vec<Vec<usize>> = vec![Vec::new(); groups];
    for r in 0..k {
        if anchor[r] != usize::MAX {
            group_rows[labels[anchor[r]]].push(r);
        }
    }
    for c in 0..dim {
        group_cols[labels[c]].push(c);
    }
    let mut mu = DVector::zeros(k);
    for g in 0..groups {
        let gr = &group_rows[g];
        if gr.is_empty() {
            continue;
        }
        let gc = &group_cols[g];
        // Columns of E are the active rows, restricted to this group's coordinates.
        let e = DMatrix::from_fn(gc.len(), gr.len(), |i, j| rows[(gr[j], gc[i])]);
        let f = DVector::from_fn(gc.len(), |i, _| target[gc[i]]);
        let sol = nnls::nnls(&e, &f);
        for (j, &r) in gr.iter().enumerate() {
            mu[r] = sol.x[j];
        }
    }
    mu
}

#[cfg(test)]
mod tests;
