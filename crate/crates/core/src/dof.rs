//! Divergence formulas and the two oracles used to check them.
//!
//! | problem class | divergence |
//! |---|---|
//! | projection onto `{Aθ ≤ b}` | `n − rank(A_J)` |
//! | bounded isotonic | components of the binding-edge graph |
//! | lifted, no or linear perturbation | `n − |I| + rank(A_I)` |
//! | lifted, quadratic perturbation | `n − tr(B_Iᵀ(B_I B_Iᵀ + λ⁻¹ A_I A_Iᵀ)⁻¹ B_I)` |
//!
//! `J` is the active set of the fit and `I ⊆ J` a maximal set of
//! independent rows of `[A_J, B_J]`.

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{
    maximal_independent_rows, rank_info, select_rows, ConstraintSystem, LiftedSystem, Perturbation,
    RankInfo, RANK_REL_TOL,
};
use crate::isotonic::{divergence_components, BoundedIsotonicSystem};
use crate::problems::{fit_formulation, Formulation};
use crate::qp::{FitResult, SolverConfig};
use crate::rng::{check_reps, noisy_response, replicate};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DivergenceMethod {
    RankFormula,
    Components,
    LiftedRankFormula,
    TraceFormula,
    ClosedForm,
    FiniteDifference,
    MonteCarlo,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Diagnostics {
    /// An excluded row sits close to binding.
    pub near_degenerate: bool,
    /// A rank decision had a singular value close to its cutoff.
    pub rank_near_tie: bool,
    pub active_rows: usize,
    pub independent_rows: Option<usize>,
    /// Smallest ratio of a retained singular value to its cutoff.
    pub rank_margin: Option<f64>,
}

impl Diagnostics {
    fn absorb(&mut self, info: &RankInfo) {
        self.rank_near_tie |= info.near_tie;
        if let Some(s) = info.smallest_retained {
            let ratio = s / info.cutoff;
            self.rank_margin = Some(self.rank_margin.map_or(ratio, |r| r.min(ratio)));
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DivergenceReport {
    pub value: f64,
    pub method: DivergenceMethod,
    pub diagnostics: Diagnostics,
}

impl DivergenceReport {
    /// Whether the point may lie near the exceptional set where the formula
    /// need not equal the divergence.
    pub fn flagged(&self) -> bool {
        self.diagnostics.near_degenerate || self.diagnostics.rank_near_tie
    }
}

/// `n − rank(A_J)`.
pub fn divergence_polyhedral(sys: &ConstraintSystem, fit: &FitResult) -> Result<DivergenceReport> {
    let rows = sys.rows_of_a(&fit.active.indices);
    let info = rank_info(&rows, RANK_REL_TOL)?;
    let mut diagnostics = Diagnostics {
        near_degenerate: fit.active.near_degenerate,
        active_rows: fit.active.len(),
        ..Diagnostics::default()
    };
    diagnostics.absorb(&info);
    Ok(DivergenceReport {
        value: (sys.n() - info.rank) as f64,
        method: DivergenceMethod::RankFormula,
        diagnostics,
    })
}

/// Number of connected components of the binding-edge graph.
pub fn divergence_isotonic(sys: &BoundedIsotonicSystem, fit: &FitResult) -> DivergenceReport {
    let value = divergence_components(sys, fit, fit.active.tolerance_used);
    DivergenceReport {
        value: value as f64,
        method: DivergenceMethod::Components,
        diagnostics: Diagnostics {
            near_degenerate: fit.active.near_degenerate,
            active_rows: fit.active.len(),
            ..Diagnostics::default()
        },
    }
}

fn independent_active(sys: &LiftedSystem, fit: &FitResult, diagnostics: &mut Diagnostics) -> Result<Vec<usize>> {
    let j = &fit.active.indices;
    let a_j = select_rows(sys.a(), j);
    let b_j = select_rows(sys.b(), j);
    let local = maximal_independent_rows(&a_j, &b_j, RANK_REL_TOL);
    let mut stacked = DMatrix::zeros(j.len(), sys.p() + sys.n());
    stacked.columns_mut(0, sys.p()).copy_from(&a_j);
    stacked.columns_mut(sys.p(), sys.n()).copy_from(&b_j);
    let info = rank_info(&stacked, RANK_REL_TOL)?;
    diagnostics.absorb(&info);
    if info.rank != local.len() {
        // Greedy selection and SVD disagree only on numerically ambiguous rows.
        diagnostics.rank_near_tie = true;
    }
    diagnostics.near_degenerate = fit.active.near_degenerate;
    diagnostics.active_rows = j.len();
    diagnostics.independent_rows = Some(local.len());
    Ok(local.into_iter().map(|k| j[k]).collect())
}

/// `n − |I| + rank(A_I)` for a lifted problem with no or linear perturbation.
pub fn divergence_lifted_linear(sys: &LiftedSystem, fit: &FitResult) -> Result<DivergenceReport> {
    if let Perturbation::Quadratic(_) = sys.perturbation() {
        return Err(Error::InvalidInput(
            "quadratic perturbation needs the trace formula".into(),
        ));
    }
    let mut diagnostics = Diagnostics::default();
    let i = independent_active(sys, fit, &mut diagnostics)?;
    let a_i = select_rows(sys.a(), &i);
    let info = rank_info(&a_i, RANK_REL_TOL)?;
    diagnostics.absorb(&info);
    let value = sys.n() as f64 - i.len() as f64 + info.rank as f64;
    Ok(DivergenceReport {
        value,
        method: DivergenceMethod::LiftedRankFormula,
        diagnostics,
    })
}

/// `n − tr(B_Iᵀ (B_I B_Iᵀ + λ⁻¹ A_I A_Iᵀ)⁻¹ B_I)` for a quadratic perturbation.
pub fn divergence_lifted_quadratic(sys: &LiftedSystem, fit: &FitResult) -> Result<DivergenceReport> {
    let Perturbation::Quadratic(lambda) = *sys.perturbation() else {
        return Err(Error::InvalidInput("trace formula needs a quadratic perturbation".into()));
    };
    let mut diagnostics = Diagnostics::default();
    let i = independent_active(sys, fit, &mut diagnostics)?;
    let n = sys.n() as f64;
    if i.is_empty() {
        return Ok(DivergenceReport {
            value: n,
            method: DivergenceMethod::TraceFormula,
            diagnostics,
        });
    }
    let a_i = select_rows(sys.a(), &i);
    let b_i = select_rows(sys.b(), &i);
    let bbt = &b_i * b_i.transpose();
    let m = &bbt + (&a_i * a_i.transpose()) / lambda;
    let chol = m.cholesky().ok_or_else(|| {
        Error::Factorization("B_I B_Iᵀ + A_I A_Iᵀ/λ is not positive definite".into())
    })?;
    // tr(Bᵀ M⁻¹ B) = tr(M⁻¹ B Bᵀ).
    let x = chol.solve(&bbt);
    Ok(DivergenceReport {
        value: n - x.trace(),
        method: DivergenceMethod::TraceFormula,
        diagnostics,
    })
}

/// Class-appropriate divergence of a fit.
pub fn divergence(f: &Formulation, fit: &FitResult) -> Result<DivergenceReport> {
    match f {
        Formulation::Projection(s) => divergence_polyhedral(s, fit),
        Formulation::Isotonic(s) => Ok(divergence_isotonic(s, fit)),
        Formulation::Lifted(s) => match s.perturbation() {
            Perturbation::Quadratic(_) => divergence_lifted_quadratic(s, fit),
            _ => divergence_lifted_linear(s, fit),
        },
    }
}

/// `tr(X(λI + XᵀX)⁻¹Xᵀ) = Σ s²/(s² + λ)`.
pub fn closed_form_ridge(x: &DMatrix<f64>, lambda: f64) -> Result<f64> {
    if !(lambda > 0.0) {
        return Err(Error::InvalidInput(format!("ridge penalty must be > 0, got {lambda}")));
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("design"));
    }
    if x.is_empty() {
        return Ok(0.0);
    }
    let sv = x.clone().singular_values();
    Ok(sv.iter().map(|s| s * s / (s * s + lambda)).sum())
}

/// Coefficient tolerance `1e-6 · (1 + ‖β‖∞)` for zero tests on `β` and `Dβ`.
pub fn coefficient_tol(beta: &DVector<f64>) -> f64 {
    1e-6 * (1.0 + beta.amax())
}

/// `rank(X_{J₀ᶜ})` where `J₀` are the (numerically) zero coefficients.
pub fn lasso_support_rank(x: &DMatrix<f64>, beta: &DVector<f64>) -> Result<usize> {
    let tol = coefficient_tol(beta);
    let cols: Vec<usize> = (0..beta.len()).filter(|&j| beta[j].abs() > tol).collect();
    let sub = DMatrix::from_fn(x.nrows(), cols.len(), |i, k| x[(i, cols[k])]);
    Ok(rank_info(&sub, RANK_REL_TOL)?.rank)
}

/// `dim(X ker D₀)` where `D₀` are the rows of `D` with `d_iᵀβ ≈ 0`.
pub fn generalized_lasso_kernel_dim(x: &DMatrix<f64>, d: &DMatrix<f64>, beta: &DVector<f64>) -> Result<usize> {
    let p = beta.len();
    let tol = coefficient_tol(beta);
    let fitted = d * beta;
    let rows: Vec<usize> = (0..d.nrows()).filter(|&r| fitted[r].abs() <= tol).collect();
    let d0 = select_rows(d, &rows);
    let basis = null_space(&d0, p)?;
    if basis.ncols() == 0 {
        return Ok(0);
    }
    Ok(rank_info(&(x * basis), RANK_REL_TOL)?.rank)
}

/// Orthonormal basis (as columns) of `{v ∈ ℝᵖ : Mv = 0}`.
fn null_space(m: &DMatrix<f64>, p: usize) -> Result<DMatrix<f64>> {
    if m.nrows() == 0 {
        return Ok(DMatrix::identity(p, p));
    }
    let info = rank_info(m, RANK_REL_TOL)?;
    // Right singular vectors of the square Gram matrix give a full basis of ℝᵖ.
    let gram = m.transpose() * m;
    let svd = gram.svd(false, true);
    let v_t = svd.v_t.ok_or_else(|| Error::Factorization("SVD without V".into()))?;
    let mut order: Vec<usize> = (0..p).collect();
    order.sort_by(|&a, &b| svd.singular_values[b].total_cmp(&svd.singular_values[a]));
    let kernel: Vec<usize> = order[info.rank..].to_vec();
    Ok(DMatrix::from_fn(p, kernel.len(), |i, k| v_t[(kernel[k], i)]))
}

/// Something that maps a response to a fit, reporting its active rows so
/// that probes can detect a change of face.
pub trait Estimator: Sync {
    fn n(&self) -> usize;
    fn estimate(&self, y: &DVector<f64>) -> Result<Estimate>;
}

#[derive(Debug, Clone, PartialEq)]
pub struct Estimate {
    pub theta: DVector<f64>,
    pub active: Option<Vec<usize>>,
}

/// An [`Estimator`] backed by a formulation and solver settings.
pub struct FormulationEstimator<'a> {
    pub formulation: &'a Formulation,
    pub cfg: &'a SolverConfig,
}

impl Estimator for FormulationEstimator<'_> {
    fn n(&self) -> usize {
        self.formulation.n()
    }

    fn estimate(&self, y: &DVector<f64>) -> Result<Estimate> {
        let fit = fit_formulation(self.formulation, y, self.cfg, None)?;
        Ok(Estimate {
            theta: fit.theta_hat,
            active: Some(fit.active.indices),
        })
    }
}

/// An [`Estimator`] from a closure with no active-set information.
pub struct FnEstimator<F> {
    pub n: usize,
    pub f: F,
}

impl<F> Estimator for FnEstimator<F>
where
    F: Fn(&DVector<f64>) -> Result<DVector<f64>> + Sync,
{
    fn n(&self) -> usize {
        self.n
    }

    fn estimate(&self, y: &DVector<f64>) -> Result<Estimate> {
        Ok(Estimate {
            theta: (self.f)(y)?,
            active: None,
        })
    }
}

pub const FD_REL_STEP: f64 = 1e-5;
pub const FD_JITTER_SD: f64 = 1e-6;
pub const FD_MAX_RETRIES: usize = 5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FiniteDifference {
    pub value: f64,
    pub step: f64,
    /// Jittered restarts needed before every probe stayed on one face.
    pub retries: usize,
    /// The point at which the differences were taken.
    pub point: Vec<f64>,
}

/// `Σ_i [θ̂_i(y + h e_i) − θ̂_i(y − h e_i)] / 2h` with `h = 1e-5 (1 + ‖y‖∞)`
/// unless `step` is given.
///
/// When a probe lands on a different active set than the base point, `y` is
/// moved by `N(0, 1e-12)` noise and the differences are redone, up to five
/// times; `seed` fixes the jitter.
pub fn finite_difference_divergence<E: Estimator + ?Sized>(
    est: &E,
    y: &DVector<f64>,
    step: Option<f64>,
    seed: u64,
) -> Result<FiniteDifference> {
    let n = est.n();
    if y.len() != n {
        return Err(Error::Dimension(format!("y has length {}, estimator has n = {n}", y.len())));
    }
    let h = step.unwrap_or_else(|| FD_REL_STEP * (1.0 + y.amax()));
    if !(h > 0.0) {
        return Err(Error::InvalidInput(format!("step must be > 0, got {h}")));
    }
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let jitter = Normal::new(0.0, FD_JITTER_SD).expect("valid normal");
    let mut point = y.clone();
    for retry in 0..=FD_MAX_RETRIES {
        if retry > 0 {
            point = y + DVector::from_fn(n, |_, _| jitter.sample(&mut rng));
        }
        let base = est.estimate(&point)?;
        let mut total = 0.0;
        let mut stable = true;
        for i in 0..n {
            let mut up = point.clone();
            up[i] += h;
            let mut down = point.clone();
            down[i] -= h;
            let a = est.estimate(&up)?;
            let b = est.estimate(&down)?;
            if base.active.is_some() && (a.active != base.active || b.active != base.active) {
                stable = false;
                break;
            }
            total += (a.theta[i] - b.theta[i]) / (2.0 * h);
        }
        if stable {
            return Ok(FiniteDifference {
                value: total,
                step: h,
                retries: retry,
                point: point.iter().copied().collect(),
            });
        }
    }
    Err(Error::UnstableActiveSet(FD_MAX_RETRIES))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MonteCarloDf {
    pub value: f64,
    /// Jackknife standard error; absent for fewer than three replications.
    pub std_error: Option<f64>,
    pub replications: usize,
}

/// `(1/σ²) Σ_i cov(θ̂_i, y_i)` from paired samples, with a leave-one-out
/// jackknife standard error. Sums run in replication order.
pub fn df_from_samples(ys: &[DVector<f64>], thetas: &[DVector<f64>], sigma: f64) -> Result<MonteCarloDf> {
    let r = ys.len();
    check_reps(r, 2)?;
    if thetas.len() != r {
        return Err(Error::Dimension(format!("{} responses but {} fits", r, thetas.len())));
    }
    if !(sigma > 0.0) {
        return Err(Error::InvalidInput(format!("sigma must be > 0, got {sigma}")));
    }
    let n = ys[0].len();
    let mut s_y = DVector::<f64>::zeros(n);
    let mut s_t = DVector::<f64>::zeros(n);
    let mut s_ty = DVector::<f64>::zeros(n);
    for (y, t) in ys.iter().zip(thetas) {
        if y.len() != n || t.len() != n {
            return Err(Error::Dimension("samples of unequal length".into()));
        }
        s_y += y;
        s_t += t;
        s_ty += t.component_mul(y);
    }
    let s2 = sigma * sigma;
    let rf = r as f64;
    let total_cov = |sy: &DVector<f64>, st: &DVector<f64>, sty: &DVector<f64>, k: f64| -> f64 {
        (0..n).map(|i| (sty[i] - st[i] * sy[i] / k) / (k - 1.0)).sum::<f64>()
    };
    let value = total_cov(&s_y, &s_t, &s_ty, rf) / s2;
    let std_error = if r >= 3 {
        let loo: Vec<f64> = ys
            .iter()
            .zip(thetas)
            .map(|(y, t)| {
                let sy = &s_y - y;
                let st = &s_t - t;
                let sty = &s_ty - t.component_mul(y);
                total_cov(&sy, &st, &sty, rf - 1.0) / s2
            })
            .collect();
        let mean = loo.iter().sum::<f64>() / rf;
        let var = loo.iter().map(|v| (v - mean).powi(2)).sum::<f64>() * (rf - 1.0) / rf;
        Some(var.sqrt())
    } else {
        None
    };
    Ok(MonteCarloDf {
        value,
        std_error,
        replications: r,
    })
}

/// Monte-Carlo degrees of freedom of an estimator at `truth`.
pub fn monte_carlo_df<E: Estimator + ?Sized>(
    est: &E,
    truth: &DVector<f64>,
    sigma: f64,
    reps: usize,
    seed: u64,
) -> Result<MonteCarloDf> {
    let curve = monte_carlo_df_curve(truth, sigma, reps, seed, 1, |y| Ok(vec![est.estimate(y)?.theta]))?;
    Ok(curve[0])
}

/// Monte-Carlo degrees of freedom for a family of estimators evaluated on
/// common noise draws.
///
/// `fits` maps one response to the fitted vectors of all `points` members.
pub fn monte_carlo_df_curve<F>(
    truth: &DVector<f64>,
    sigma: f64,
    reps: usize,
    seed: u64,
    points: usize,
    fits: F,
) -> Result<Vec<MonteCarloDf>>
where
    F: Fn(&DVector<f64>) -> Result<Vec<DVector<f64>>> + Sync,
{
    check_reps(reps, 2)?;
    let samples = replicate(reps, seed, |r, _| {
        let y = noisy_response(truth, sigma, seed, r);
        let thetas = fits(&y)?;
        if thetas.len() != points {
            return Err(Error::Dimension(format!("expected {points} fits, got {}", thetas.len())));
        }
        Ok((y, thetas))
    })?;
    let ys: Vec<DVector<f64>> = samples.iter().map(|(y, _)| y.clone()).collect();
    (0..points)
        .map(|k| {
            let thetas: Vec<DVector<f64>> = samples.iter().map(|(_, t)| t[k].clone()).collect();
            df_from_samples(&ys, &thetas, sigma)
        })
        .collect()
}
