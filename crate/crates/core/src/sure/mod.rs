//! Stein's unbiased risk estimate and grid search over a tuning parameter.
//!
//! For a fit `θ̂_λ` of `y = θ* + σz`,
//!
//! ```text
//! U(λ) = ‖y − θ̂_λ‖² + 2σ² D(λ) − nσ²,    L(λ) = ‖θ̂_λ − θ*‖²,
//! ```
//!
//! and `E U(λ) = E L(λ)` for every `λ`. [`tune`] picks `λ̂ = argmin U` over a
//! grid; simulations also report `λ* = argmin L`.

mod experiments;

pub use experiments::{
    df_compare, ratio_experiment, risk_summary, simulation_design, summarize, DfCompare, DfCompareConfig,
    DfCompareRow, Model, RatioOutcome, RatioRow, RiskRow, SimulationConfig, Summary,
};

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::dof::{divergence, divergence_isotonic, DivergenceReport};
use crate::error::{Error, Result};
use crate::isotonic::{fit_bounded_from, fit_isotonic, BoundedIsotonicSystem, PartialOrder};
use crate::problems::{fit_formulation, ProblemKind, ProblemSpec};
use crate::qp::{FitResult, SolverConfig, Status, WarmStart};

pub const DEFAULT_GRID_POINTS: usize = 30;

/// `‖y − θ̂‖² + 2σ²D − nσ²`.
pub fn sure_value(y: &DVector<f64>, theta_hat: &DVector<f64>, divergence: f64, sigma: f64) -> Result<f64> {
    if y.len() != theta_hat.len() {
        return Err(Error::Dimension(format!("y has length {}, fit has {}", y.len(), theta_hat.len())));
    }
    check_sigma(sigma)?;
    let s2 = sigma * sigma;
    let rss = (y - theta_hat).norm_squared();
    Ok(rss + 2.0 * s2 * divergence - y.len() as f64 * s2)
}

/// `‖θ̂ − θ*‖²`.
pub fn squared_loss(theta_hat: &DVector<f64>, truth: &DVector<f64>) -> Result<f64> {
    if truth.len() != theta_hat.len() {
        return Err(Error::Dimension(format!("truth has length {}, fit has {}", truth.len(), theta_hat.len())));
    }
    Ok((theta_hat - truth).norm_squared())
}

fn check_sigma(sigma: f64) -> Result<()> {
    if !(sigma > 0.0 && sigma.is_finite()) {
        return Err(Error::InvalidInput(format!("sigma must be a positive number, got {sigma}")));
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SureRecord {
    pub lambda: f64,
    pub rss: f64,
    pub divergence: f64,
    pub sure: f64,
    pub loss: Option<f64>,
    /// The divergence was computed at a point the active-set diagnostics
    /// consider close to degenerate.
    pub flagged: bool,
    pub kkt: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SureCurve {
    pub n: usize,
    pub sigma: f64,
    pub records: Vec<SureRecord>,
    pub lambda_hat: f64,
    pub lambda_star: Option<f64>,
}

impl SureCurve {
    /// Build a curve from records on an ascending grid.
    pub fn from_records(n: usize, sigma: f64, records: Vec<SureRecord>) -> Result<Self> {
        if records.is_empty() {
            return Err(Error::InvalidInput("empty grid".into()));
        }
        let sure: Vec<f64> = records.iter().map(|r| r.sure).collect();
        let lambda_hat = records[argmin(&sure)].lambda;
        let lambda_star = if records.iter().all(|r| r.loss.is_some()) {
            let loss: Vec<f64> = records.iter().map(|r| r.loss.unwrap()).collect();
            Some(records[argmin(&loss)].lambda)
        } else {
            None
        };
        Ok(Self {
            n,
            sigma,
            records,
            lambda_hat,
            lambda_star,
        })
    }

    pub fn grid(&self) -> Vec<f64> {
        self.records.iter().map(|r| r.lambda).collect()
    }

    pub fn hat_index(&self) -> usize {
        argmin(&self.records.iter().map(|r| r.sure).collect::<Vec<_>>())
    }

    pub fn star_index(&self) -> Option<usize> {
        self.lambda_star?;
        Some(argmin(&self.records.iter().map(|r| r.loss.unwrap()).collect::<Vec<_>>()))
    }

    /// `L(λ̂) / L(λ*)`.
    pub fn sure_ratio(&self) -> Option<f64> {
        let star = self.records[self.star_index()?].loss?;
        Some(self.records[self.hat_index()].loss? / star)
    }

    pub fn max_kkt(&self) -> f64 {
        self.records.iter().map(|r| r.kkt).fold(0.0, f64::max)
    }
}

/// First index of the minimum, so ties go to the smaller `λ`.
fn argmin(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in values.iter().enumerate() {
        if *v < values[best] {
            best = i;
        }
    }
    best
}

pub fn validate_grid(grid: &[f64]) -> Result<()> {
    if grid.is_empty() {
        return Err(Error::InvalidInput("lambda grid is empty".into()));
    }
    if grid.iter().any(|v| v.is_nan() || *v < 0.0) {
        return Err(Error::InvalidInput("lambda grid values must be >= 0".into()));
    }
    if grid.windows(2).any(|w| !(w[0] < w[1])) {
        return Err(Error::InvalidInput("lambda grid must be strictly increasing".into()));
    }
    Ok(())
}

/// One fitted grid point.
#[derive(Debug, Clone)]
pub struct PathPoint {
    pub lambda: f64,
    pub fit: FitResult,
    pub divergence: DivergenceReport,
}

/// Fits along an ascending grid for the tuning parameter of `spec.kind`.
///
/// Bounded isotonic fits share one unbounded fit and are thresholded; the
/// other kinds warm-start each solve from the previous grid point.
pub fn fit_path(spec: &ProblemSpec, grid: &[f64], y: &DVector<f64>, cfg: &SolverConfig) -> Result<Vec<PathPoint>> {
    validate_grid(grid)?;
    if spec.kind.tuning().is_none() {
        return Err(Error::InvalidInput(format!("{} has no tuning parameter", spec.kind.name())));
    }
    if let ProblemKind::BoundedIsotonic { .. } = spec.kind {
        let order = spec.partial_order()?;
        return Ok(isotonic_path(&order, grid, y, cfg)?.1);
    }
    if grid.last().is_some_and(|v| v.is_infinite()) {
        return Err(Error::InvalidInput(format!("{} needs a finite grid", spec.kind.name())));
    }
    let mut out: Vec<PathPoint> = Vec::with_capacity(grid.len());
    for (index, &lambda) in grid.iter().enumerate() {
        let point = (|| {
            let f = spec.with_tuning(lambda)?.formulation()?;
            let warm = out.last().map(|p| WarmStart::from(&p.fit));
            let fit = fit_formulation(&f, y, cfg, warm.as_ref())?;
            require_optimal(&fit)?;
            let divergence = divergence(&f, &fit)?;
            Ok(PathPoint { lambda, fit, divergence })
        })()
        .map_err(|e| grid_error(index, lambda, e))?;
        out.push(point);
    }
    Ok(out)
}

/// Unbounded fit and the bounded fits on `grid`.
pub(crate) fn isotonic_path(
    order: &PartialOrder,
    grid: &[f64],
    y: &DVector<f64>,
    cfg: &SolverConfig,
) -> Result<(FitResult, Vec<PathPoint>)> {
    let (base, groups) = fit_isotonic(order, y, cfg)?;
    let mut out = Vec::with_capacity(grid.len());
    for (index, &lambda) in grid.iter().enumerate() {
        let point = (|| {
            let sys = BoundedIsotonicSystem::new(order.clone(), lambda)?;
            let fit = fit_bounded_from(&sys, y, &base, &groups, cfg)?;
            require_optimal(&fit)?;
            let divergence = divergence_isotonic(&sys, &fit);
            Ok(PathPoint { lambda, fit, divergence })
        })()
        .map_err(|e| grid_error(index, lambda, e))?;
        out.push(point);
    }
    Ok((base, out))
}

fn require_optimal(fit: &FitResult) -> Result<()> {
    match fit.status {
        Status::Optimal => Ok(()),
        Status::Infeasible => Err(Error::Infeasible),
        Status::Unbounded => Err(Error::Unbounded),
        Status::MaxIter => Err(Error::NotConverged {
            iterations: fit.iterations,
        }),
    }
}

fn grid_error(index: usize, lambda: f64, e: Error) -> Error {
    Error::GridPoint {
        index,
        lambda,
        source: Box::new(e),
    }
}

/// Turn fitted grid points into a curve.
pub fn curve_from_path(
    y: &DVector<f64>,
    path: &[PathPoint],
    sigma: f64,
    truth: Option<&DVector<f64>>,
) -> Result<SureCurve> {
    check_sigma(sigma)?;
    let records = path
        .iter()
        .map(|p| {
            Ok(SureRecord {
                lambda: p.lambda,
                rss: (y - &p.fit.theta_hat).norm_squared(),
                divergence: p.divergence.value,
                sure: sure_value(y, &p.fit.theta_hat, p.divergence.value, sigma)?,
                loss: truth.map(|t| squared_loss(&p.fit.theta_hat, t)).transpose()?,
                flagged: p.divergence.flagged(),
                kkt: p.fit.kkt.max(),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    SureCurve::from_records(y.len(), sigma, records)
}

/// SURE curve of `spec` at its own response and `λ̂`.
pub fn tune(spec: &ProblemSpec, grid: &[f64], sigma: f64, cfg: &SolverConfig) -> Result<SureCurve> {
    tune_against(spec, grid, sigma, None, cfg)
}

/// [`tune`], also recording the true loss when `truth` is known.
pub fn tune_against(
    spec: &ProblemSpec,
    grid: &[f64],
    sigma: f64,
    truth: Option<&DVector<f64>>,
    cfg: &SolverConfig,
) -> Result<SureCurve> {
    check_sigma(sigma)?;
    let path = fit_path(spec, grid, &spec.data.y, cfg)?;
    curve_from_path(&spec.data.y, &path, sigma, truth)
}

pub fn linspace(lo: f64, hi: f64, points: usize) -> Vec<f64> {
    match points {
        0 => Vec::new(),
        1 => vec![lo],
        _ => (0..points)
            .map(|k| lo + (hi - lo) * k as f64 / (points - 1) as f64)
            .collect(),
    }
}

pub fn logspace(lo: f64, hi: f64, points: usize) -> Vec<f64> {
    linspace(lo.ln(), hi.ln(), points).into_iter().map(f64::exp).collect()
}

/// A default grid of `points` values for the tuning parameter of `spec`.
///
/// * bounded isotonic: `0` and log-spaced values in `[R/100, R]`, `R` the
///   range of the unbounded fit;
/// * penalized convex: `0` and `s·[1e−4, 10]`, `s` the mean squared distance
///   of the design points to their centroid;
/// * ridge: `s·[1e−3, 1e3]`, `s = ‖X‖²_F / d`;
/// * Lasso and generalized Lasso: `[1e−3, 1]·‖Xᵀy‖_∞`.
pub fn default_grid(spec: &ProblemSpec, points: usize, cfg: &SolverConfig) -> Result<Vec<f64>> {
    if points < 2 {
        return Err(Error::InvalidInput("a default grid needs at least 2 points".into()));
    }
    let x = &spec.data.x;
    let with_zero = |lo: f64, hi: f64| -> Vec<f64> {
        std::iter::once(0.0).chain(logspace(lo, hi, points - 1)).collect()
    };
    let grid = match spec.kind {
        ProblemKind::BoundedIsotonic { .. } => {
            let (_, groups) = fit_isotonic(&spec.partial_order()?, &spec.data.y, cfg)?;
            let r = groups.range();
            if r > 0.0 {
                with_zero(0.01 * r, r)
            } else {
                vec![0.0]
            }
        }
        ProblemKind::PenalizedConvex { .. } => {
            let s = design_spread(x);
            with_zero(1e-4 * s, 10.0 * s)
        }
        ProblemKind::Ridge { .. } => {
            let s = x.norm_squared() / x.ncols() as f64;
            logspace(1e-3 * s, 1e3 * s, points)
        }
        ProblemKind::Lasso { .. } | ProblemKind::GeneralizedLasso { .. } => {
            let t = (x.transpose() * &spec.data.y).amax();
            logspace(1e-3 * t, t, points)
        }
        kind => return Err(Error::InvalidInput(format!("{} has no tuning parameter", kind.name()))),
    };
    if grid.iter().any(|v| !(v.is_finite() && *v >= 0.0)) || (grid.len() > 1 && grid[1] <= 0.0) {
        return Err(Error::InvalidInput("data are degenerate; supply a grid".into()));
    }
    Ok(grid)
}

fn design_spread(x: &DMatrix<f64>) -> f64 {
    let n = x.nrows() as f64;
    let centroid = x.row_mean();
    x.row_iter().map(|r| (r - &centroid).norm_squared()).sum::<f64>() / n
}

#[cfg(test)]
mod tests;
