//! Builders that turn each regression problem into a constraint system, and
//! a small dispatch layer to fit a [`ProblemSpec`].
//!
//! Row layouts (0-based):
//!
//! * univariate convex: row `i` couples observations `i, i+1, i+2`;
//! * multivariate convex: one row per ordered pair `(j, k)`, `j ≠ k`, in
//!   lexicographic order, `ξ` laid out as `n` blocks of length `d`;
//! * linear regression / ridge: rows `0..n` are `Xξ − θ ≤ 0`, rows `n..2n`
//!   are `θ − Xξ ≤ 0`;
//! * generalized Lasso: the `2n` regression rows, then `Dβ − γ ≤ 0` and
//!   `−Dβ − γ ≤ 0` (`l` rows each), with `ξ = (β, γ)`.
//!
//! Rows are emitted unnormalized.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{ConstraintSystem, LiftedSystem, Perturbation, RowLabel};
use crate::isotonic::{self, BoundedIsotonicSystem, PartialOrder};
use crate::qp::{self, FitResult, SolverConfig, WarmStart};

/// Design, response and (optionally) the known noise level.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    /// `n × d` design; row `i` is `x_i`.
    pub x: DMatrix<f64>,
    pub y: DVector<f64>,
    pub sigma: Option<f64>,
}

impl Dataset {
    pub fn new(x: DMatrix<f64>, y: DVector<f64>, sigma: Option<f64>) -> Result<Self> {
        if y.is_empty() {
            return Err(Error::InvalidInput("dataset needs n >= 1".into()));
        }
        if x.nrows() != y.len() {
            return Err(Error::Dimension(format!(
                "design has {} rows, response has {}",
                x.nrows(),
                y.len()
            )));
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("design"));
        }
        if y.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("response vector"));
        }
        if let Some(s) = sigma {
            if !(s > 0.0 && s.is_finite()) {
                return Err(Error::InvalidInput(format!("sigma must be > 0, got {s}")));
            }
        }
        Ok(Self { x, y, sigma })
    }

    pub fn n(&self) -> usize {
        self.y.len()
    }

    pub fn d(&self) -> usize {
        self.x.ncols()
    }

    pub fn with_response(&self, y: DVector<f64>) -> Result<Self> {
        Self::new(self.x.clone(), y, self.sigma)
    }

    pub fn sigma_required(&self) -> Result<f64> {
        self.sigma
            .ok_or_else(|| Error::InvalidInput("sigma is required for risk estimation".into()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ProblemKind {
    UnivariateIsotonic,
    /// `lambda = +∞` is the unbounded fit.
    BoundedIsotonic { lambda: f64 },
    UnivariateConvex,
    MultivariateConvex,
    /// `lambda = 0` is unpenalized convex regression.
    PenalizedConvex { lambda: f64 },
    LinearRegression,
    /// `lambda = 0` is least squares.
    Ridge { lambda: f64 },
    Lasso { tau: f64 },
    /// Uses the penalty matrix of the [`ProblemSpec`].
    GeneralizedLasso { tau: f64 },
}

impl ProblemKind {
    pub fn name(&self) -> &'static str {
        match self {
            ProblemKind::UnivariateIsotonic => "univariate_isotonic",
            ProblemKind::BoundedIsotonic { .. } => "bounded_isotonic",
            ProblemKind::UnivariateConvex => "univariate_convex",
            ProblemKind::MultivariateConvex => "multivariate_convex",
            ProblemKind::PenalizedConvex { .. } => "penalized_convex",
            ProblemKind::LinearRegression => "linear_regression",
            ProblemKind::Ridge { .. } => "ridge",
            ProblemKind::Lasso { .. } => "lasso",
            ProblemKind::GeneralizedLasso { .. } => "generalized_lasso",
        }
    }

    /// The tuning parameter, if the kind has one.
    pub fn tuning(&self) -> Option<f64> {
        match *self {
            ProblemKind::BoundedIsotonic { lambda }
            | ProblemKind::PenalizedConvex { lambda }
            | ProblemKind::Ridge { lambda } => Some(lambda),
            ProblemKind::Lasso { tau } | ProblemKind::GeneralizedLasso { tau } => Some(tau),
            _ => None,
        }
    }

    pub fn with_tuning(&self, value: f64) -> Result<Self> {
        let out = match *self {
            ProblemKind::BoundedIsotonic { .. } => ProblemKind::BoundedIsotonic { lambda: value },
            ProblemKind::PenalizedConvex { .. } => ProblemKind::PenalizedConvex { lambda: value },
            ProblemKind::Ridge { .. } => ProblemKind::Ridge { lambda: value },
            ProblemKind::Lasso { .. } => ProblemKind::Lasso { tau: value },
            ProblemKind::GeneralizedLasso { .. } => ProblemKind::GeneralizedLasso { tau: value },
            other => {
                return Err(Error::InvalidInput(format!("{} has no tuning parameter", other.name())))
            }
        };
        Ok(out)
    }
}

/// A problem kind together with its data and kind-specific structure.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProblemSpec {
    pub kind: ProblemKind,
    pub data: Dataset,
    /// Penalty matrix `D` (`l × d`) for the generalized Lasso.
    pub penalty: Option<DMatrix<f64>>,
    /// Partial order for bounded isotonic regression; defaults to the
    /// coordinatewise order on the design points.
    pub order: Option<PartialOrder>,
}

/// The optimization problem a spec reduces to.
#[derive(Debug, Clone, PartialEq)]
pub enum Formulation {
    Projection(ConstraintSystem),
    Isotonic(BoundedIsotonicSystem),
    Lifted(LiftedSystem),
}

impl Formulation {
    pub fn n(&self) -> usize {
        match self {
            Formulation::Projection(s) => s.n(),
            Formulation::Isotonic(s) => s.n(),
            Formulation::Lifted(s) => s.n(),
        }
    }

    /// Row labels in row order, when the builder attached them.
    pub fn labels(&self) -> Option<Vec<RowLabel>> {
        match self {
            Formulation::Projection(s) => s.labels().map(<[_]>::to_vec),
            Formulation::Isotonic(s) => s.to_constraint_system().labels().map(<[_]>::to_vec),
            Formulation::Lifted(s) => s.labels().map(<[_]>::to_vec),
        }
    }

    /// Row residuals at a fit (`≤ 0` when satisfied).
    pub fn residuals(&self, fit: &FitResult) -> Result<DVector<f64>> {
        use crate::geometry::Polyhedron;
        match self {
            Formulation::Projection(s) => s.residuals(&fit.theta_hat),
            Formulation::Isotonic(s) => Ok(DVector::from_vec(s.residuals(&fit.theta_hat))),
            Formulation::Lifted(s) => {
                let xi = fit.xi_hat.clone().unwrap_or_else(|| DVector::zeros(s.p()));
                s.residuals(&LiftedSystem::stack_point(&xi, &fit.theta_hat))
            }
        }
    }
}

impl ProblemSpec {
    pub fn new(kind: ProblemKind, data: Dataset) -> Self {
        Self {
            kind,
            data,
            penalty: None,
            order: None,
        }
    }

    pub fn with_penalty(mut self, d: DMatrix<f64>) -> Self {
        self.penalty = Some(d);
        self
    }

    pub fn with_order(mut self, order: PartialOrder) -> Self {
        self.order = Some(order);
        self
    }

    pub fn with_tuning(&self, value: f64) -> Result<Self> {
        let mut out = self.clone();
        out.kind = self.kind.with_tuning(value)?;
        Ok(out)
    }

    pub fn with_response(&self, y: DVector<f64>) -> Result<Self> {
        let mut out = self.clone();
        out.data = self.data.with_response(y)?;
        Ok(out)
    }

    /// Partial order used by the isotonic kinds.
    pub fn partial_order(&self) -> Result<PartialOrder> {
        match (&self.order, self.kind) {
            (Some(o), _) => {
                if o.n() != self.data.n() {
                    return Err(Error::Dimension(format!(
                        "order has {} nodes, data has {} observations",
                        o.n(),
                        self.data.n()
                    )));
                }
                Ok(o.clone())
            }
            (None, ProblemKind::UnivariateIsotonic) => {
                sorted_column(&self.data.x)?;
                PartialOrder::chain(self.data.n())
            }
            (None, _) => PartialOrder::from_points(&self.data.x),
        }
    }

    pub fn formulation(&self) -> Result<Formulation> {
        let x = &self.data.x;
        Ok(match self.kind {
            ProblemKind::UnivariateIsotonic => {
                Formulation::Projection(self.partial_order()?.to_constraint_system())
            }
            ProblemKind::BoundedIsotonic { lambda } => {
                Formulation::Isotonic(BoundedIsotonicSystem::new(self.partial_order()?, lambda)?)
            }
            ProblemKind::UnivariateConvex => {
                Formulation::Projection(build_univariate_convex(&sorted_column(x)?)?)
            }
            ProblemKind::MultivariateConvex => Formulation::Lifted(build_multivariate_convex(x)?),
            ProblemKind::PenalizedConvex { lambda: 0.0 } => {
                Formulation::Lifted(build_multivariate_convex(x)?)
            }
            ProblemKind::PenalizedConvex { lambda } => {
                Formulation::Lifted(build_penalized_convex(x, lambda)?)
            }
            ProblemKind::LinearRegression => Formulation::Lifted(build_linear_regression(x)?),
            ProblemKind::Ridge { lambda: 0.0 } => {
                Formulation::Lifted(build_linear_regression(x)?)
            }
            ProblemKind::Ridge { lambda } => Formulation::Lifted(build_ridge(x, lambda)?),
            ProblemKind::Lasso { tau } => Formulation::Lifted(build_lasso(x, tau)?),
            ProblemKind::GeneralizedLasso { tau } => {
                let d = self.penalty.as_ref().ok_or_else(|| {
                    Error::InvalidInput("generalized lasso needs a penalty matrix".into())
                })?;
                Formulation::Lifted(build_generalized_lasso(x, d, tau)?)
            }
        })
    }

    pub fn fit(&self, cfg: &SolverConfig) -> Result<(Formulation, FitResult)> {
        let f = self.formulation()?;
        let fit = fit_formulation(&f, &self.data.y, cfg, None)?;
        Ok((f, fit))
    }
}

/// Fit any formulation at response `y`.
pub fn fit_formulation(
    f: &Formulation,
    y: &DVector<f64>,
    cfg: &SolverConfig,
    warm: Option<&WarmStart>,
) -> Result<FitResult> {
    match f {
        Formulation::Projection(s) => qp::project_with(s, y, cfg, warm),
        Formulation::Isotonic(s) => isotonic::fit_bounded(s, y, cfg),
        Formulation::Lifted(s) => qp::solve_lifted_with(s, y, cfg, warm),
    }
}

fn sorted_column(x: &DMatrix<f64>) -> Result<Vec<f64>> {
    if x.ncols() != 1 {
        return Err(Error::Dimension(format!(
            "univariate problems need one design column, got {}",
            x.ncols()
        )));
    }
    let v: Vec<f64> = x.column(0).iter().copied().collect();
    if v.windows(2).any(|w| !(w[0] < w[1])) {
        return Err(Error::InvalidInput(
            "univariate design must be strictly increasing".into(),
        ));
    }
    Ok(v)
}

/// `(x_{i+1} − x_{i+2}) θ_i + (x_{i+2} − x_i) θ_{i+1} + (x_i − x_{i+1}) θ_{i+2} ≤ 0`
/// for `i = 0..n−2`.
pub fn build_univariate_convex(x: &[f64]) -> Result<ConstraintSystem> {
    let n = x.len();
    if n < 3 {
        return Err(Error::InvalidInput("univariate convex regression needs n >= 3".into()));
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("design"));
    }
    if x.windows(2).any(|w| !(w[0] < w[1])) {
        return Err(Error::InvalidInput("design must be strictly increasing".into()));
    }
    let m = n - 2;
    let mut a = DMatrix::zeros(m, n);
    for i in 0..m {
        a[(i, i)] = x[i + 1] - x[i + 2];
        a[(i, i + 1)] = x[i + 2] - x[i];
        a[(i, i + 2)] = x[i] - x[i + 1];
    }
    let labels = (0..m).map(|first| RowLabel::ConvexKink { first }).collect();
    ConstraintSystem::new(a, DVector::zeros(m))?.with_labels(labels)
}

/// `θ_j + ⟨ξ_j, x_k − x_j⟩ ≤ θ_k` for every ordered pair `j ≠ k`.
pub fn build_multivariate_convex(points: &DMatrix<f64>) -> Result<LiftedSystem> {
    let (n, d) = points.shape();
    if n < 2 {
        return Err(Error::InvalidInput("multivariate convex regression needs n >= 2".into()));
    }
    if d == 0 {
        return Err(Error::InvalidInput("design points need d >= 1".into()));
    }
    for j in 0..n {
        for k in j + 1..n {
            if points.row(j) == points.row(k) {
                return Err(Error::InvalidInput(format!("design points {j} and {k} coincide")));
            }
        }
    }
    let m = n * (n - 1);
    let mut a = DMatrix::zeros(m, n * d);
    let mut b = DMatrix::zeros(m, n);
    let mut labels = Vec::with_capacity(m);
    let mut r = 0;
    for j in 0..n {
        for k in 0..n {
            if j == k {
                continue;
            }
            for t in 0..d {
                a[(r, j * d + t)] = points[(k, t)] - points[(j, t)];
            }
            b[(r, j)] = 1.0;
            b[(r, k)] = -1.0;
            labels.push(RowLabel::Supporting { at: j, to: k });
            r += 1;
        }
    }
    LiftedSystem::new(a, b, DVector::zeros(m), Perturbation::None)?.with_labels(labels)
}

/// Multivariate convex constraints with `(λ/2) Σ ‖ξ_j‖²` added.
pub fn build_penalized_convex(points: &DMatrix<f64>, lambda: f64) -> Result<LiftedSystem> {
    if !(lambda > 0.0) {
        return Err(Error::InvalidInput(format!("penalty must be > 0, got {lambda}")));
    }
    build_multivariate_convex(points)?.with_perturbation(Perturbation::Quadratic(lambda))
}

fn regression_blocks(x: &DMatrix<f64>, extra_cols: usize) -> (DMatrix<f64>, DMatrix<f64>, Vec<RowLabel>) {
    let (n, d) = x.shape();
    let mut a = DMatrix::zeros(2 * n, d + extra_cols);
    let mut b = DMatrix::zeros(2 * n, n);
    for i in 0..n {
        for j in 0..d {
            a[(i, j)] = x[(i, j)];
            a[(n + i, j)] = -x[(i, j)];
        }
        b[(i, i)] = -1.0;
        b[(n + i, i)] = 1.0;
    }
    let labels = (0..n)
        .map(|obs| RowLabel::FitUpper { obs })
        .chain((0..n).map(|obs| RowLabel::FitLower { obs }))
        .collect();
    (a, b, labels)
}

/// `Xξ = θ` as paired inequalities.
pub fn build_linear_regression(x: &DMatrix<f64>) -> Result<LiftedSystem> {
    if x.ncols() == 0 {
        return Err(Error::InvalidInput("design needs d >= 1".into()));
    }
    let (a, b, labels) = regression_blocks(x, 0);
    LiftedSystem::new(a, b, DVector::zeros(2 * x.nrows()), Perturbation::None)?.with_labels(labels)
}

pub fn build_ridge(x: &DMatrix<f64>, lambda: f64) -> Result<LiftedSystem> {
    if !(lambda > 0.0) {
        return Err(Error::InvalidInput(format!("ridge penalty must be > 0, got {lambda}")));
    }
    build_linear_regression(x)?.with_perturbation(Perturbation::Quadratic(lambda))
}

/// `min ½‖y − Xβ‖² + τ‖Dβ‖₁` lifted with `γ ≥ |Dβ|`.
pub fn build_generalized_lasso(x: &DMatrix<f64>, d: &DMatrix<f64>, tau: f64) -> Result<LiftedSystem> {
    let (n, p) = x.shape();
    if p == 0 {
        return Err(Error::InvalidInput("design needs d >= 1".into()));
    }
    if d.ncols() != p {
        return Err(Error::Dimension(format!(
            "penalty matrix has {} columns, design has {p}",
            d.ncols()
        )));
    }
    if !(tau >= 0.0 && tau.is_finite()) {
        return Err(Error::InvalidInput(format!("tau must be >= 0, got {tau}")));
    }
    if d.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("penalty matrix"));
    }
    let l = d.nrows();
    let (reg_a, reg_b, mut labels) = regression_blocks(x, l);
    let m = 2 * n + 2 * l;
    let mut a = DMatrix::zeros(m, p + l);
    let mut b = DMatrix::zeros(m, n);
    a.view_mut((0, 0), (2 * n, p + l)).copy_from(&reg_a);
    b.view_mut((0, 0), (2 * n, n)).copy_from(&reg_b);
    for r in 0..l {
        for j in 0..p {
            a[(2 * n + r, j)] = d[(r, j)];
            a[(2 * n + l + r, j)] = -d[(r, j)];
        }
        a[(2 * n + r, p + r)] = -1.0;
        a[(2 * n + l + r, p + r)] = -1.0;
    }
    labels.extend((0..l).map(|row| RowLabel::PenaltyUpper { row }));
    labels.extend((0..l).map(|row| RowLabel::PenaltyLower { row }));
    let mut lin = DVector::zeros(p + l);
    lin.rows_mut(p, l).fill(tau);
    LiftedSystem::new(a, b, DVector::zeros(m), Perturbation::Linear(lin))?.with_labels(labels)
}

/// Generalized Lasso with `D = I`.
pub fn build_lasso(x: &DMatrix<f64>, tau: f64) -> Result<LiftedSystem> {
    build_generalized_lasso(x, &DMatrix::identity(x.ncols(), x.ncols()), tau)
}

/// First-difference penalty on a chain of length `d` (`(d−1) × d`).
pub fn fused_penalty(d: usize) -> DMatrix<f64> {
    DMatrix::from_fn(d.saturating_sub(1), d, |r, c| {
        if c == r {
            -1.0
        } else if c == r + 1 {
            1.0
        } else {
            0.0
        }
    })
}
