//! Isotonic regression on a partial order, with an optional bound `λ` on the
//! range of the fit.
//!
//! The bounded problem is
//!
//! ```text
//! min ½‖θ − y‖²  s.t.  θ_i ≤ θ_j for (i, j) ∈ E,
//!                      θ_i ≤ θ_j + λ for i ∈ max(V), j ∈ min(V).
//! ```
//!
//! Its solution is obtained from the unbounded fit by clamping every level
//! `θ̄_s` into `[L_λ, L_λ + λ]`, where `L_λ` is the unique root of the
//! nondecreasing piecewise-linear function
//! `H(L, λ) = Σ k_s (L − θ̄_s)₊ + Σ k_s (L + λ − θ̄_s)₋`.
//! The divergence of the fit is the number of connected components of the
//! graph formed by the binding edges.

mod pava;

pub use pava::pava;

use std::collections::HashSet;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{classify, default_active_tol, ActiveSet, ConstraintSystem, RowLabel};
use crate::qp::{self, project_polyhedron, EngineStatus, FitResult, KktResiduals, SolverConfig, SparseRows, Status};
use crate::union_find::UnionFind;

/// A DAG on `0..n`; an edge `(i, j)` means `θ_i ≤ θ_j`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PartialOrder {
    n: usize,
    edges: Vec<(usize, usize)>,
    max_nodes: Vec<usize>,
    min_nodes: Vec<usize>,
}

impl PartialOrder {
    pub fn new(n: usize, edges: Vec<(usize, usize)>) -> Result<Self> {
        if n == 0 {
            return Err(Error::InvalidInput("a partial order needs at least one node".into()));
        }
        let mut seen = HashSet::with_capacity(edges.len());
        let mut indeg = vec![0usize; n];
        let mut succ: Vec<Vec<usize>> = vec![Vec::new(); n];
        for &(i, j) in &edges {
            if i >= n || j >= n {
                return Err(Error::InvalidInput(format!("edge ({i}, {j}) out of range for n = {n}")));
            }
            if i == j {
                return Err(Error::InvalidInput(format!("self-loop at node {i}")));
            }
            if !seen.insert((i, j)) {
                return Err(Error::InvalidInput(format!("duplicate edge ({i}, {j})")));
            }
            indeg[j] += 1;
            succ[i].push(j);
        }
        let min_nodes: Vec<usize> = (0..n).filter(|&i| indeg[i] == 0).collect();
        let max_nodes: Vec<usize> = (0..n).filter(|&i| succ[i].is_empty()).collect();

        let mut remaining = indeg;
        let mut stack = min_nodes.clone();
        let mut visited = 0;
        while let Some(v) = stack.pop() {
            visited += 1;
            for &w in &succ[v] {
                remaining[w] -= 1;
                if remaining[w] == 0 {
                    stack.push(w);
                }
            }
        }
        if visited < n {
            let node = (0..n).find(|&i| remaining[i] > 0).unwrap_or(0);
            return Err(Error::Cyclic(node));
        }
        Ok(Self {
            n,
            edges,
            max_nodes,
            min_nodes,
        })
    }

    /// `0 < 1 < … < n−1`.
    pub fn chain(n: usize) -> Result<Self> {
        Self::new(n, (1..n).map(|i| (i - 1, i)).collect())
    }

    /// Cover relations of the product order on a grid with the given side
    /// lengths; nodes are numbered with the last coordinate varying fastest.
    pub fn lattice(dims: &[usize]) -> Result<Self> {
        if dims.is_empty() || dims.contains(&0) {
            return Err(Error::InvalidInput("lattice sides must be >= 1".into()));
        }
        let n: usize = dims.iter().product();
        let mut strides = vec![1usize; dims.len()];
        for k in (0..dims.len() - 1).rev() {
            strides[k] = strides[k + 1] * dims[k + 1];
        }
        let mut edges = Vec::new();
        for v in 0..n {
            for (k, &side) in dims.iter().enumerate() {
                if (v / strides[k]) % side + 1 < side {
                    edges.push((v, v + strides[k]));
                }
            }
        }
        Self::new(n, edges)
    }

    /// All comparable pairs of the coordinatewise order on the rows of `x`.
    pub fn from_points(x: &DMatrix<f64>) -> Result<Self> {
        let (n, d) = x.shape();
        let mut edges = Vec::new();
        for i in 0..n {
            for j in 0..n {
                if i == j {
                    continue;
                }
                let le = (0..d).all(|k| x[(i, k)] <= x[(j, k)]);
                if !le {
                    continue;
                }
                if (0..d).all(|k| x[(i, k)] == x[(j, k)]) {
                    return Err(Error::InvalidInput(format!("design points {i} and {j} coincide")));
                }
                edges.push((i, j));
            }
        }
        Self::new(n, edges)
    }

    /// A random DAG: each pair `i < j` of a random relabelling is joined with
    /// probability `density`.
    pub fn random<R: Rng + ?Sized>(n: usize, density: f64, rng: &mut R) -> Result<Self> {
        let mut perm: Vec<usize> = (0..n).collect();
        for i in (1..n).rev() {
            let j = rng.random_range(0..=i);
            perm.swap(i, j);
        }
        let mut edges = Vec::new();
        for i in 0..n {
            for j in i + 1..n {
                if rng.random::<f64>() < density {
                    edges.push((perm[i], perm[j]));
                }
            }
        }
        Self::new(n, edges)
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    /// Nodes without successors.
    pub fn max_nodes(&self) -> &[usize] {
        &self.max_nodes
    }

    /// Nodes without predecessors.
    pub fn min_nodes(&self) -> &[usize] {
        &self.min_nodes
    }

    /// Node sequence when the order is a single chain.
    pub fn chain_order(&self) -> Option<Vec<usize>> {
        if self.edges.len() + 1 != self.n || self.min_nodes.len() != 1 {
            return None;
        }
        let mut next = vec![usize::MAX; self.n];
        for &(i, j) in &self.edges {
            if next[i] != usize::MAX {
                return None;
            }
            next[i] = j;
        }
        let mut order = Vec::with_capacity(self.n);
        let mut v = self.min_nodes[0];
        loop {
            order.push(v);
            if next[v] == usize::MAX {
                break;
            }
            v = next[v];
        }
        (order.len() == self.n).then_some(order)
    }

    /// `{θ : θ_i − θ_j ≤ 0, (i, j) ∈ E}`, one row per edge in edge order.
    pub fn to_constraint_system(&self) -> ConstraintSystem {
        BoundedIsotonicSystem::unbounded(self.clone()).to_constraint_system()
    }
}

/// A partial order together with the range bound `λ` (possibly `+∞`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundedIsotonicSystem {
    order: PartialOrder,
    lambda: f64,
}

/// One inequality `θ_pos − θ_neg ≤ bound` of a bounded isotonic system.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EdgeRow {
    pub pos: usize,
    pub neg: usize,
    pub bound: f64,
}

impl BoundedIsotonicSystem {
    pub fn new(order: PartialOrder, lambda: f64) -> Result<Self> {
        if lambda.is_nan() || lambda < 0.0 {
            return Err(Error::InvalidInput(format!("range bound must be >= 0, got {lambda}")));
        }
        Ok(Self { order, lambda })
    }

    pub fn unbounded(order: PartialOrder) -> Self {
        Self {
            order,
            lambda: f64::INFINITY,
        }
    }

    pub fn order(&self) -> &PartialOrder {
        &self.order
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn with_lambda(&self, lambda: f64) -> Result<Self> {
        Self::new(self.order.clone(), lambda)
    }

    pub fn n(&self) -> usize {
        self.order.n
    }

    /// Pairs `(i, j)` with `i ∈ max(V)`, `j ∈ min(V)`; empty when `λ = +∞`.
    pub fn augmented_edges(&self) -> Vec<(usize, usize)> {
        if self.lambda.is_infinite() {
            return Vec::new();
        }
        let mut out = Vec::with_capacity(self.order.max_nodes.len() * self.order.min_nodes.len());
        for &i in &self.order.max_nodes {
            for &j in &self.order.min_nodes {
                out.push((i, j));
            }
        }
        out
    }

    /// Order edges first, then the bound edges.
    pub fn rows(&self) -> Vec<EdgeRow> {
        let mut rows: Vec<EdgeRow> = self
            .order
            .edges
            .iter()
            .map(|&(i, j)| EdgeRow {
                pos: i,
                neg: j,
                bound: 0.0,
            })
            .collect();
        rows.extend(self.augmented_edges().into_iter().map(|(i, j)| EdgeRow {
            pos: i,
            neg: j,
            bound: self.lambda,
        }));
        rows
    }

    pub fn num_rows(&self) -> usize {
        self.order.edges.len() + self.augmented_edges().len()
    }

    /// Dense incidence form with row labels.
    pub fn to_constraint_system(&self) -> ConstraintSystem {
        let rows = self.rows();
        let n = self.n();
        let mut a = DMatrix::zeros(rows.len(), n);
        let mut b = DVector::zeros(rows.len());
        let mut labels = Vec::with_capacity(rows.len());
        let n_order = self.order.edges.len();
        for (k, r) in rows.iter().enumerate() {
            a[(k, r.pos)] += 1.0;
            a[(k, r.neg)] -= 1.0;
            b[k] = r.bound;
            labels.push(if k < n_order {
                RowLabel::Order {
                    lower: r.pos,
                    upper: r.neg,
                }
            } else {
                RowLabel::RangeBound {
                    upper: r.pos,
                    lower: r.neg,
                }
            });
        }
        ConstraintSystem::new(a, b)
            .and_then(|s| s.with_labels(labels))
            .expect("incidence rows are finite and labelled one per row")
    }

    /// `θ_pos − θ_neg − bound` for every row.
    pub fn residuals(&self, theta: &DVector<f64>) -> Vec<f64> {
        self.rows()
            .iter()
            .map(|r| theta[r.pos] - theta[r.neg] - r.bound)
            .collect()
    }
}

/// Level sets of a fit, ordered by level.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupStructure {
    pub groups: Vec<Vec<usize>>,
    pub levels: Vec<f64>,
    pub sizes: Vec<usize>,
}

/// Relative tolerance for merging fitted values into one level.
pub const GROUP_REL_TOL: f64 = 1e-6;

impl GroupStructure {
    /// Cluster `theta` by splitting the sorted values at gaps larger than
    /// `tol`; the default tolerance is `1e-6 · (1 + ‖θ‖∞)`.
    pub fn from_values(theta: &DVector<f64>, tol: Option<f64>) -> Self {
        let tol = tol.unwrap_or_else(|| GROUP_REL_TOL * (1.0 + theta.amax()));
        let mut idx: Vec<usize> = (0..theta.len()).collect();
        idx.sort_by(|&a, &b| theta[a].total_cmp(&theta[b]).then(a.cmp(&b)));
        let mut groups: Vec<Vec<usize>> = Vec::new();
        let mut prev = f64::NEG_INFINITY;
        for &i in &idx {
            if groups.is_empty() || theta[i] - prev > tol {
                groups.push(Vec::new());
            }
            groups.last_mut().unwrap().push(i);
            prev = theta[i];
        }
        for g in &mut groups {
            g.sort_unstable();
        }
        let levels = groups
            .iter()
            .map(|g| g.iter().map(|&i| theta[i]).sum::<f64>() / g.len() as f64)
            .collect();
        let sizes = groups.iter().map(Vec::len).collect();
        Self {
            groups,
            levels,
            sizes,
        }
    }

    pub fn len(&self) -> usize {
        self.groups.len()
    }

    pub fn is_empty(&self) -> bool {
        self.groups.is_empty()
    }

    /// `θ̄_r − θ̄_1`.
    pub fn range(&self) -> f64 {
        match (self.levels.first(), self.levels.last()) {
            (Some(a), Some(b)) => b - a,
            _ => 0.0,
        }
    }
}

/// `H(L, λ) = Σ k_s (L − θ̄_s)₊ + Σ k_s (L + λ − θ̄_s)₋`, with `(t)₋ = min(t, 0)`.
pub fn h_function(gs: &GroupStructure, l: f64, lambda: f64) -> f64 {
    gs.levels
        .iter()
        .zip(&gs.sizes)
        .map(|(&t, &k)| k as f64 * ((l - t).max(0.0) + (l + lambda - t).min(0.0)))
        .sum()
}

/// The root `L_λ` of `H(·, λ)` for `0 ≤ λ ≤ θ̄_r − θ̄_1`.
///
/// `H` is linear between consecutive breakpoints `{θ̄_s, θ̄_s − λ}`, so the
/// root is found by locating the first breakpoint where `H ≥ 0` and
/// interpolating on the piece to its left.
pub fn root_l(gs: &GroupStructure, lambda: f64) -> Result<f64> {
    if gs.is_empty() {
        return Err(Error::InvalidInput("no groups".into()));
    }
    let range = gs.range();
    if !(lambda >= 0.0 && lambda <= range) {
        return Err(Error::InvalidInput(format!(
            "range bound {lambda} outside [0, {range}]; the unbounded fit applies"
        )));
    }
    let mut bps: Vec<f64> = gs
        .levels
        .iter()
        .flat_map(|&t| [t, t - lambda])
        .collect();
    bps.sort_by(f64::total_cmp);
    bps.dedup();
    let mut prev: Option<(f64, f64)> = None;
    for &b in &bps {
        let h = h_function(gs, b, lambda);
        if h >= 0.0 {
            return Ok(match prev {
                Some((b0, h0)) if h > 0.0 => b0 - h0 * (b - b0) / (h - h0),
                _ => b,
            });
        }
        prev = Some((b, h));
    }
    // H(θ̄_r) ≥ 0 always holds in exact arithmetic.
    Ok(*bps.last().unwrap())
}

/// Unbounded isotonic fit and its level sets.
///
/// Chains use pool-adjacent-violators with exact cumulative-sum multipliers;
/// other orders are projected with [`qp::project`].
pub fn fit_isotonic(
    order: &PartialOrder,
    y: &DVector<f64>,
    cfg: &SolverConfig,
) -> Result<(FitResult, GroupStructure)> {
    check_y(order.n, y)?;
    let fit = match order.chain_order() {
        Some(seq) => chain_fit(order, &seq, y, cfg),
        None => qp::project(&order.to_constraint_system(), y, cfg)?,
    };
    let groups = GroupStructure::from_values(&fit.theta_hat, None);
    Ok((fit, groups))
}

fn check_y(n: usize, y: &DVector<f64>) -> Result<()> {
    if y.len() != n {
        return Err(Error::Dimension(format!("y has length {}, order has {n} nodes", y.len())));
    }
    if y.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("response vector"));
    }
    Ok(())
}

fn chain_fit(order: &PartialOrder, seq: &[usize], y: &DVector<f64>, cfg: &SolverConfig) -> FitResult {
    let n = order.n;
    let ys: Vec<f64> = seq.iter().map(|&i| y[i]).collect();
    let fitted = pava(&ys);
    let mut theta = DVector::zeros(n);
    let mut position = vec![0usize; n];
    for (k, &i) in seq.iter().enumerate() {
        theta[i] = fitted[k];
        position[i] = k;
    }
    // Edge between positions k and k+1 carries Σ_{t ≤ k} (y_t − θ_t).
    let mut cumulative = vec![0.0; n];
    let mut acc = 0.0;
    for k in 0..n {
        acc += ys[k] - fitted[k];
        cumulative[k] = acc;
    }
    let duals = DVector::from_iterator(
        order.edges.len(),
        order.edges.iter().map(|&(i, _)| cumulative[position[i]].max(0.0)),
    );
    let sys = BoundedIsotonicSystem::unbounded(order.clone());
    certified_fit(&sys, y, theta, duals, 0, Vec::new(), Status::Optimal, cfg)
}

/// Bounded fit by thresholding the unbounded fit.
pub fn fit_bounded(sys: &BoundedIsotonicSystem, y: &DVector<f64>, cfg: &SolverConfig) -> Result<FitResult> {
    let (base, groups) = fit_isotonic(&sys.order, y, cfg)?;
    fit_bounded_from(sys, y, &base, &groups, cfg)
}

/// Thresholded fit at `sys.lambda()` given a precomputed unbounded fit.
///
/// Multipliers for the returned fit come from the exact projection engine
/// started on the thresholded active set, which doubles as a check of the
/// thresholding formula through the KKT residuals.
pub fn fit_bounded_from(
    sys: &BoundedIsotonicSystem,
    y: &DVector<f64>,
    unbounded: &FitResult,
    groups: &GroupStructure,
    cfg: &SolverConfig,
) -> Result<FitResult> {
    check_y(sys.n(), y)?;
    let theta = threshold(groups, &unbounded.theta_hat, sys.lambda)?;
    let rows = sys.rows();
    let n = sys.n();
    if rows.is_empty() {
        return Ok(certified_fit(sys, y, theta, DVector::zeros(0), 0, Vec::new(), Status::Optimal, cfg));
    }
    let sparse: Vec<Vec<(usize, f64)>> = rows
        .iter()
        .map(|r| vec![(r.pos, 1.0), (r.neg, -1.0)])
        .collect();
    let rhs: Vec<f64> = rows.iter().map(|r| r.bound).collect();
    let engine_rows = SparseRows::from_sparse(n, &sparse, &rhs);
    let residuals: Vec<f64> = rows
        .iter()
        .map(|r| theta[r.pos] - theta[r.neg] - r.bound)
        .collect();
    let tol = cfg.active_tol.unwrap_or_else(|| default_active_tol(&theta));
    let hint = classify(&residuals, tol).indices;
    let out = project_polyhedron(&engine_rows, y.as_slice(), &hint, cfg.max_iterations);
    let status = match out.status {
        EngineStatus::Optimal => Status::Optimal,
        EngineStatus::MaxIter => Status::MaxIter,
        EngineStatus::Infeasible => return Err(Error::Infeasible),
    };
    let mut duals = DVector::zeros(rows.len());
    for (&i, &u) in out.working.iter().zip(&out.multipliers) {
        duals[i] = u;
    }
    Ok(certified_fit(sys, y, theta, duals, out.iterations, out.working, status, cfg))
}

/// Levels clamped into `[L_λ, L_λ + λ]`, or the unbounded fit itself when
/// the bound is inactive (including a single level).
///
/// Each coordinate is clamped from its own unbounded value, so levels that
/// the group tolerance merged keep their exact values unless clamped.
pub fn threshold(groups: &GroupStructure, unbounded: &DVector<f64>, lambda: f64) -> Result<DVector<f64>> {
    if groups.len() <= 1 || lambda >= groups.range() {
        return Ok(unbounded.clone());
    }
    let l = root_l(groups, lambda)?;
    Ok(unbounded.map(|v| v.clamp(l, l + lambda)))
}

#[allow(clippy::too_many_arguments)]
fn certified_fit(
    sys: &BoundedIsotonicSystem,
    y: &DVector<f64>,
    theta: DVector<f64>,
    duals: DVector<f64>,
    iterations: usize,
    working_set: Vec<usize>,
    status: Status,
    cfg: &SolverConfig,
) -> FitResult {
    let rows = sys.rows();
    let residuals: Vec<f64> = rows
        .iter()
        .map(|r| theta[r.pos] - theta[r.neg] - r.bound)
        .collect();
    let tol = cfg.active_tol.unwrap_or_else(|| default_active_tol(&theta));
    let active = classify(&residuals, tol);
    let mut grad = &theta - y;
    for (r, &u) in rows.iter().zip(duals.iter()) {
        grad[r.pos] += u;
        grad[r.neg] -= u;
    }
    let kkt = KktResiduals {
        stationarity: grad.amax(),
        primal_infeasibility: residuals.iter().fold(0.0_f64, |a, &v| a.max(v)),
        dual_infeasibility: duals.iter().fold(0.0_f64, |a, &v| a.max(0.0 - v)),
        complementarity: duals
            .iter()
            .zip(&residuals)
            .fold(0.0_f64, |a, (&u, &r)| a.max((u * r).abs())),
    };
    let objective = 0.5 * (&theta - y).norm_squared();
    FitResult {
        theta_hat: theta,
        xi_hat: None,
        duals,
        active,
        objective,
        status,
        kkt,
        iterations,
        working_set,
    }
}

/// Binding rows of `sys` at `theta`.
pub fn active_edges(sys: &BoundedIsotonicSystem, theta: &DVector<f64>, tol: f64) -> ActiveSet {
    classify(&sys.residuals(theta), tol)
}

/// Number of connected components of the graph whose edges are the binding
/// rows of `sys` at the fit.
pub fn divergence_components(sys: &BoundedIsotonicSystem, fit: &FitResult, tol: f64) -> usize {
    let rows = sys.rows();
    let mut uf = UnionFind::new(sys.n());
    for r in &rows {
        let res = fit.theta_hat[r.pos] - fit.theta_hat[r.neg] - r.bound;
        if res.abs() <= tol {
            uf.union(r.pos, r.neg);
        }
    }
    uf.components()
}
