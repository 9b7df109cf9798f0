//! Inequality systems and the linear-algebra substrate shared by every
//! divergence formula: active-constraint detection, numerical rank and
//! greedy selection of maximal independent active rows.
//!
//! Two polyhedron representations are used throughout the crate:
//!
//! * [`ConstraintSystem`] is `{θ : Aθ ≤ b}` in ℝⁿ.
//! * [`LiftedSystem`] is `{(ξ, θ) : Aξ + Bθ ≤ c}` in ℝᵖ⁺ⁿ together with the
//!   perturbation added to the partial-projection objective.
//!
//! Points of a lifted system are always laid out as `[ξ; θ]`.

use std::fmt;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Relative factor for the default active-set tolerance `1e-7 · (1 + ‖point‖∞)`.
pub const ACTIVE_REL_TOL: f64 = 1e-7;

/// Default relative cutoff used by [`numerical_rank`].
pub const RANK_REL_TOL: f64 = 1e-12;

/// A classification or rank decision within this factor of its cutoff is
/// reported as near-degenerate.
pub const DEGENERACY_BAND: f64 = 10.0;

/// Semantic meaning of a constraint row, kept by the problem builders so that
/// active-set dumps can be read without re-deriving the row layout.
///
/// All indices are 0-based.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum RowLabel {
    /// `θ_lower ≤ θ_upper`.
    Order { lower: usize, upper: usize },
    /// `θ_upper ≤ θ_lower + λ` for a maximal node `upper` and minimal node `lower`.
    RangeBound { upper: usize, lower: usize },
    /// Univariate convexity over observations `first, first+1, first+2`.
    ConvexKink { first: usize },
    /// `⟨ξ_at, x_to − x_at⟩ ≤ θ_to − θ_at`.
    Supporting { at: usize, to: usize },
    /// `⟨x_obs, β⟩ − θ_obs ≤ 0`.
    FitUpper { obs: usize },
    /// `θ_obs − ⟨x_obs, β⟩ ≤ 0`.
    FitLower { obs: usize },
    /// `⟨d_row, β⟩ − γ_row ≤ 0`.
    PenaltyUpper { row: usize },
    /// `−⟨d_row, β⟩ − γ_row ≤ 0`.
    PenaltyLower { row: usize },
    Custom { text: String },
}

impl fmt::Display for RowLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            RowLabel::Order { lower, upper } => write!(f, "order({lower};{upper})"),
            RowLabel::RangeBound { upper, lower } => write!(f, "range_bound({upper};{lower})"),
            RowLabel::ConvexKink { first } => write!(f, "convex_kink({first})"),
            RowLabel::Supporting { at, to } => write!(f, "supporting({at};{to})"),
            RowLabel::FitUpper { obs } => write!(f, "fit_upper({obs})"),
            RowLabel::FitLower { obs } => write!(f, "fit_lower({obs})"),
            RowLabel::PenaltyUpper { row } => write!(f, "penalty_upper({row})"),
            RowLabel::PenaltyLower { row } => write!(f, "penalty_lower({row})"),
            RowLabel::Custom { text } => f.write_str(text),
        }
    }
}

fn check_finite(m: &DMatrix<f64>, what: &'static str) -> Result<()> {
    if m.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite(what))
    }
}

fn check_labels(labels: &Option<Vec<RowLabel>>, m: usize) -> Result<()> {
    match labels {
        Some(l) if l.len() != m => Err(Error::Dimension(format!(
            "{} row labels for {} rows",
            l.len(),
            m
        ))),
        _ => Ok(()),
    }
}

/// Common view of the two polyhedron representations.
pub trait Polyhedron {
    /// Number of inequality rows.
    fn num_rows(&self) -> usize;
    /// Dimension of the points the rows act on (`n`, or `p + n` when lifted).
    fn point_dim(&self) -> usize;
    /// Row residuals `⟨row_i, point⟩ − rhs_i`; nonpositive entries are satisfied.
    fn residuals(&self, point: &DVector<f64>) -> Result<DVector<f64>>;
}

/// The polyhedron `{θ ∈ ℝⁿ : Aθ ≤ b}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConstraintSystem {
    a: DMatrix<f64>,
    b: DVector<f64>,
    labels: Option<Vec<RowLabel>>,
}

impl ConstraintSystem {
    pub fn new(a: DMatrix<f64>, b: DVector<f64>) -> Result<Self> {
        if a.nrows() != b.len() {
            return Err(Error::Dimension(format!(
                "A has {} rows but b has length {}",
                a.nrows(),
                b.len()
            )));
        }
        if a.ncols() == 0 {
            return Err(Error::InvalidInput("constraint system needs n >= 1".into()));
        }
        check_finite(&a, "constraint matrix")?;
        if b.iter().any(|v| v.is_nan()) {
            return Err(Error::NonFinite("right-hand side"));
        }
        Ok(Self { a, b, labels: None })
    }

    /// The empty system, which denotes all of ℝⁿ.
    pub fn unconstrained(n: usize) -> Self {
        Self {
            a: DMatrix::zeros(0, n.max(1)),
            b: DVector::zeros(0),
            labels: Some(Vec::new()),
        }
    }

    pub fn with_labels(mut self, labels: Vec<RowLabel>) -> Result<Self> {
        let labels = Some(labels);
        check_labels(&labels, self.m())?;
        self.labels = labels;
        Ok(self)
    }

    pub fn n(&self) -> usize {
        self.a.ncols()
    }

    pub fn m(&self) -> usize {
        self.a.nrows()
    }

    pub fn a(&self) -> &DMatrix<f64> {
        &self.a
    }

    pub fn b(&self) -> &DVector<f64> {
        &self.b
    }

    pub fn labels(&self) -> Option<&[RowLabel]> {
        self.labels.as_deref()
    }

    pub fn label(&self, row: usize) -> Option<&RowLabel> {
        self.labels.as_ref().and_then(|l| l.get(row))
    }

    /// Stack the rows selected by `rows` into a new matrix.
    pub fn rows_of_a(&self, rows: &[usize]) -> DMatrix<f64> {
        select_rows(&self.a, rows)
    }

    /// Largest row violation `max(0, max_i ⟨a_i, θ⟩ − b_i)`.
    pub fn max_violation(&self, theta: &DVector<f64>) -> Result<f64> {
        let r = self.residuals(theta)?;
        Ok(r.iter().fold(0.0_f64, |acc, &v| acc.max(v)))
    }

    /// View this system as a lifted one with no auxiliary variables.
    pub fn to_lifted(&self) -> LiftedSystem {
        LiftedSystem {
            a: DMatrix::zeros(self.m(), 0),
            b: self.a.clone(),
            c: self.b.clone(),
            perturbation: Perturbation::None,
            labels: self.labels.clone(),
        }
    }
}

impl Polyhedron for ConstraintSystem {
    fn num_rows(&self) -> usize {
        self.m()
    }

    fn point_dim(&self) -> usize {
        self.n()
    }

    fn residuals(&self, point: &DVector<f64>) -> Result<DVector<f64>> {
        if point.len() != self.n() {
            return Err(Error::Dimension(format!(
                "point has length {}, system has n = {}",
                point.len(),
                self.n()
            )));
        }
        Ok(&self.a * point - &self.b)
    }
}

/// Term added to `½‖θ − y‖²` in a partial projection.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", content = "value", rename_all = "snake_case")]
pub enum Perturbation {
    None,
    /// `dᵀξ`.
    Linear(DVector<f64>),
    /// `(λ/2)‖ξ‖²` with `λ > 0`.
    Quadratic(f64),
}

/// The lifted polyhedron `{(ξ, θ) : Aξ + Bθ ≤ c}` plus the objective perturbation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LiftedSystem {
    a: DMatrix<f64>,
    b: DMatrix<f64>,
    c: DVector<f64>,
    perturbation: Perturbation,
    labels: Option<Vec<RowLabel>>,
}

impl LiftedSystem {
    pub fn new(
        a: DMatrix<f64>,
        b: DMatrix<f64>,
        c: DVector<f64>,
        perturbation: Perturbation,
    ) -> Result<Self> {
        if a.nrows() != b.nrows() || b.nrows() != c.len() {
            return Err(Error::Dimension(format!(
                "A has {} rows, B has {} rows, c has length {}",
                a.nrows(),
                b.nrows(),
                c.len()
            )));
        }
        if b.ncols() == 0 {
            return Err(Error::InvalidInput("lifted system needs n >= 1".into()));
        }
        check_finite(&a, "auxiliary coefficient matrix")?;
        check_finite(&b, "parameter coefficient matrix")?;
        if c.iter().any(|v| v.is_nan()) {
            return Err(Error::NonFinite("right-hand side"));
        }
        match &perturbation {
            Perturbation::Linear(d) if d.len() != a.ncols() => {
                return Err(Error::Dimension(format!(
                    "linear perturbation has length {}, p = {}",
                    d.len(),
                    a.ncols()
                )));
            }
            Perturbation::Linear(d) if d.iter().any(|v| !v.is_finite()) => {
                return Err(Error::NonFinite("linear perturbation"));
            }
            Perturbation::Quadratic(l) if !(*l > 0.0 && l.is_finite()) => {
                return Err(Error::InvalidInput(format!(
                    "quadratic perturbation needs lambda > 0, got {l}"
                )));
            }
            _ => {}
        }
        Ok(Self {
            a,
            b,
            c,
            perturbation,
            labels: None,
        })
    }

    pub fn with_labels(mut self, labels: Vec<RowLabel>) -> Result<Self> {
        let labels = Some(labels);
        check_labels(&labels, self.m())?;
        self.labels = labels;
        Ok(self)
    }

    /// Same rows, different perturbation.
    pub fn with_perturbation(&self, perturbation: Perturbation) -> Result<Self> {
        let mut out = Self::new(
            self.a.clone(),
            self.b.clone(),
            self.c.clone(),
            perturbation,
        )?;
        out.labels = self.labels.clone();
        Ok(out)
    }

    pub fn n(&self) -> usize {
        self.b.ncols()
    }

    pub fn p(&self) -> usize {
        self.a.ncols()
    }

    pub fn m(&self) -> usize {
        self.b.nrows()
    }

    pub fn a(&self) -> &DMatrix<f64> {
        &self.a
    }

    pub fn b(&self) -> &DMatrix<f64> {
        &self.b
    }

    pub fn c(&self) -> &DVector<f64> {
        &self.c
    }

    pub fn perturbation(&self) -> &Perturbation {
        &self.perturbation
    }

    pub fn labels(&self) -> Option<&[RowLabel]> {
        self.labels.as_deref()
    }

    pub fn label(&self, row: usize) -> Option<&RowLabel> {
        self.labels.as_ref().and_then(|l| l.get(row))
    }

    /// Split a stacked `[ξ; θ]` point.
    pub fn split_point(&self, point: &DVector<f64>) -> (DVector<f64>, DVector<f64>) {
        let p = self.p();
        (
            point.rows(0, p).into_owned(),
            point.rows(p, self.n()).into_owned(),
        )
    }

    pub fn stack_point(xi: &DVector<f64>, theta: &DVector<f64>) -> DVector<f64> {
        let mut out = DVector::zeros(xi.len() + theta.len());
        out.rows_mut(0, xi.len()).copy_from(xi);
        out.rows_mut(xi.len(), theta.len()).copy_from(theta);
        out
    }

    /// Largest row violation at `(ξ, θ)`.
    pub fn max_violation(&self, xi: &DVector<f64>, theta: &DVector<f64>) -> Result<f64> {
        let r = self.residuals(&Self::stack_point(xi, theta))?;
        Ok(r.iter().fold(0.0_f64, |acc, &v| acc.max(v)))
    }
}

impl Polyhedron for LiftedSystem {
    fn num_rows(&self) -> usize {
        self.m()
    }

    fn point_dim(&self) -> usize {
        self.p() + self.n()
    }

    fn residuals(&self, point: &DVector<f64>) -> Result<DVector<f64>> {
        if point.len() != self.point_dim() {
            return Err(Error::Dimension(format!(
                "point has length {}, lifted system has p + n = {}",
                point.len(),
                self.point_dim()
            )));
        }
        let (xi, theta) = self.split_point(point);
        Ok(&self.a * xi + &self.b * theta - &self.c)
    }
}

/// Indices of the binding rows at a point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActiveSet {
    pub indices: Vec<usize>,
    pub tolerance_used: f64,
    /// Some excluded row sits within [`DEGENERACY_BAND`] × tolerance of binding.
    pub near_degenerate: bool,
    /// Smallest `|residual|` over excluded rows (`+∞` when every row binds).
    pub min_excluded_slack: f64,
}

impl ActiveSet {
    pub fn empty(tolerance_used: f64) -> Self {
        Self {
            indices: Vec::new(),
            tolerance_used,
            near_degenerate: false,
            min_excluded_slack: f64::INFINITY,
        }
    }

    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    pub fn contains(&self, row: usize) -> bool {
        self.indices.binary_search(&row).is_ok()
    }
}

/// Default active-set tolerance `1e-7 · (1 + ‖point‖∞)`.
pub fn default_active_tol(point: &DVector<f64>) -> f64 {
    ACTIVE_REL_TOL * (1.0 + point.amax())
}

/// Rows whose residual is within `tol` of zero at `point`.
///
/// For a lifted system `point` is `[ξ; θ]`.
pub fn active_set<P: Polyhedron + ?Sized>(
    sys: &P,
    point: &DVector<f64>,
    tol: f64,
) -> Result<ActiveSet> {
    if !(tol > 0.0) {
        return Err(Error::InvalidInput(format!("tolerance must be > 0, got {tol}")));
    }
    let residuals = sys.residuals(point)?;
    Ok(classify(residuals.as_slice(), tol))
}

pub(crate) fn classify(residuals: &[f64], tol: f64) -> ActiveSet {
    let mut indices = Vec::new();
    let mut min_excluded = f64::INFINITY;
    for (i, &r) in residuals.iter().enumerate() {
        let gap = r.abs();
        if gap <= tol {
            indices.push(i);
        } else if r < 0.0 {
            min_excluded = min_excluded.min(gap);
        }
    }
    ActiveSet {
        indices,
        tolerance_used: tol,
        near_degenerate: min_excluded <= DEGENERACY_BAND * tol,
        min_excluded_slack: min_excluded,
    }
}

pub(crate) fn select_rows(m: &DMatrix<f64>, rows: &[usize]) -> DMatrix<f64> {
    DMatrix::from_fn(rows.len(), m.ncols(), |i, j| m[(rows[i], j)])
}

/// Outcome of a rank decision with the numbers needed to judge how close it was.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RankInfo {
    pub rank: usize,
    pub cutoff: f64,
    pub smallest_retained: Option<f64>,
    pub largest_discarded: Option<f64>,
    /// The smallest retained singular value lies within [`DEGENERACY_BAND`] of the cutoff.
    pub near_tie: bool,
}

/// Rank decision from the singular values of `m`: values above
/// `rel_tol · max(rows, cols) · σ_max` count.
pub fn rank_info(m: &DMatrix<f64>, rel_tol: f64) -> Result<RankInfo> {
    if m.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("rank input"));
    }
    let empty = RankInfo {
        rank: 0,
        cutoff: 0.0,
        smallest_retained: None,
        largest_discarded: None,
        near_tie: false,
    };
    if m.nrows() == 0 || m.ncols() == 0 {
        return Ok(empty);
    }
    // Rank is invariant under transposition; factor the wide side for speed.
    let sv = if m.nrows() >= m.ncols() {
        m.clone().singular_values()
    } else {
        m.transpose().singular_values()
    };
    let smax = sv.iter().cloned().fold(0.0_f64, f64::max);
    if smax == 0.0 {
        return Ok(empty);
    }
    let cutoff = rel_tol * m.nrows().max(m.ncols()) as f64 * smax;
    let mut rank = 0;
    let mut smallest_retained: Option<f64> = None;
    let mut largest_discarded: Option<f64> = None;
    for &s in sv.iter() {
        if s > cutoff {
            rank += 1;
            smallest_retained = Some(smallest_retained.map_or(s, |v: f64| v.min(s)));
        } else {
            largest_discarded = Some(largest_discarded.map_or(s, |v: f64| v.max(s)));
        }
    }
    let near_tie = smallest_retained.is_some_and(|s| s <= DEGENERACY_BAND * cutoff);
    Ok(RankInfo {
        rank,
        cutoff,
        smallest_retained,
        largest_discarded,
        near_tie,
    })
}

/// Number of singular values above `rel_tol · max(dims) · σ_max`.
pub fn numerical_rank(m: &DMatrix<f64>, rel_tol: f64) -> Result<usize> {
    rank_info(m, rel_tol).map(|r| r.rank)
}

/// Power-iteration estimate of the largest singular value.
fn spectral_norm_estimate(m: &DMatrix<f64>) -> f64 {
    if m.nrows() == 0 || m.ncols() == 0 {
        return 0.0;
    }
    let fro = m.norm();
    if fro == 0.0 {
        return 0.0;
    }
    // Deterministic start with no exact symmetry.
    let mut v = DVector::from_fn(m.ncols(), |j, _| 1.0 + 0.1 * ((j * 7919) % 13) as f64);
    v /= v.norm();
    let mut est = 0.0;
    for _ in 0..60 {
        let w = m * &v;
        let mut u = m.transpose() * &w;
        let nu = u.norm();
        if nu == 0.0 {
            break;
        }
        u /= nu;
        let new_est = nu.sqrt();
        let done = (new_est - est).abs() <= 1e-6 * new_est;
        est = new_est;
        v = u;
        if done {
            break;
        }
    }
    // Never below the trivial lower bound ‖M‖_F / sqrt(min dim).
    est.max(fro / (m.nrows().min(m.ncols()) as f64).sqrt())
}

/// Greedy choice, in ascending row order, of rows of `[A_J, B_J]` that are
/// linearly independent and span the full row space.
///
/// A row is kept when its component orthogonal to the rows already kept
/// exceeds the [`numerical_rank`] cutoff computed with `rel_tol`.
pub fn maximal_independent_rows(
    a_j: &DMatrix<f64>,
    b_j: &DMatrix<f64>,
    rel_tol: f64,
) -> Vec<usize> {
    assert_eq!(
        a_j.nrows(),
        b_j.nrows(),
        "auxiliary and parameter blocks must have equal row counts"
    );
    let rows = a_j.nrows();
    let cols = a_j.ncols() + b_j.ncols();
    if rows == 0 || cols == 0 {
        return Vec::new();
    }
    let mut stacked = DMatrix::zeros(rows, cols);
    stacked.columns_mut(0, a_j.ncols()).copy_from(a_j);
    stacked.columns_mut(a_j.ncols(), b_j.ncols()).copy_from(b_j);
    independent_rows(&stacked, rel_tol)
}

/// Single-matrix form of [`maximal_independent_rows`].
pub fn independent_rows(m: &DMatrix<f64>, rel_tol: f64) -> Vec<usize> {
    let rows = m.nrows();
    let cols = m.ncols();
    if rows == 0 || cols == 0 {
        return Vec::new();
    }
    let cutoff = rel_tol * rows.max(cols) as f64 * spectral_norm_estimate(m);
    let mut basis: Vec<DVector<f64>> = Vec::new();
    let mut kept = Vec::new();
    for i in 0..rows {
        if basis.len() == cols {
            break;
        }
        let mut r: DVector<f64> = m.row(i).transpose();
        if r.norm() <= cutoff {
            continue;
        }
        // Two passes of modified Gram-Schmidt keep the basis orthonormal to
        // working precision.
        for _ in 0..2 {
            for q in &basis {
                let proj = q.dot(&r);
                r.axpy(-proj, q, 1.0);
            }
        }
        let norm = r.norm();
        if norm > cutoff {
            basis.push(r / norm);
            kept.push(i);
        }
    }
    kept
}
