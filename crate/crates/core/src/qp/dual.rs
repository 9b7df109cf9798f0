//! Dual active-set projection onto `{z : Mz ≤ c}`.
//!
//! This is the Goldfarb–Idnani method specialised to an identity Hessian,
//! i.e. Euclidean projection. Every strictly convex problem the crate solves
//! is brought to this form by rescaling the auxiliary block, so this engine
//! is the single exact workhorse behind `project` and `solve_lifted`.
//!
//! The working set is kept linearly independent, and a QR factorisation of
//! its normals is updated with Givens rotations: `J` is orthogonal, its
//! first `q` columns span the active normals, and `R` is the `q × q` upper
//! triangle with `J[:, ..q]ᵀ N = R`. Starting from the unconstrained minimiser
//! the method only ever moves to points that are optimal for a subset of the
//! constraints, so the multipliers stay nonnegative throughout.

#![allow(clippy::needless_range_loop)]

use nalgebra::DMatrix;

/// Constraint rows in compressed sparse row form.
#[derive(Debug, Clone)]
pub(crate) struct SparseRows {
    starts: Vec<usize>,
    cols: Vec<usize>,
    vals: Vec<f64>,
    rhs: Vec<f64>,
    norms: Vec<f64>,
    dim: usize,
}

impl SparseRows {
    /// Build from column blocks laid side by side, each scaled by a factor.
    pub(crate) fn from_blocks(blocks: &[(&DMatrix<f64>, f64)], rhs: &[f64]) -> Self {
        let m = rhs.len();
        let dim: usize = blocks.iter().map(|(b, _)| b.ncols()).sum();
        let mut starts = Vec::with_capacity(m + 1);
        let mut cols = Vec::new();
        let mut vals = Vec::new();
        let mut norms = Vec::with_capacity(m);
        starts.push(0);
        for i in 0..m {
            let mut offset = 0;
            let mut sq = 0.0;
            for (block, scale) in blocks {
                debug_assert_eq!(block.nrows(), m);
                for j in 0..block.ncols() {
                    let v = block[(i, j)];
                    if v != 0.0 {
                        let v = v * scale;
                        cols.push(offset + j);
                        vals.push(v);
                        sq += v * v;
                    }
                }
                offset += block.ncols();
            }
            norms.push(sq.sqrt());
            starts.push(cols.len());
        }
        Self {
            starts,
            cols,
            vals,
            rhs: rhs.to_vec(),
            norms,
            dim,
        }
    }

    /// Build from explicit `(column, value)` lists, one per row.
    pub(crate) fn from_sparse(dim: usize, rows: &[Vec<(usize, f64)>], rhs: &[f64]) -> Self {
        debug_assert_eq!(rows.len(), rhs.len());
        let mut starts = Vec::with_capacity(rows.len() + 1);
        let mut cols = Vec::new();
        let mut vals = Vec::new();
        let mut norms = Vec::with_capacity(rows.len());
        starts.push(0);
        for row in rows {
            let mut sq = 0.0;
            for &(j, v) in row {
                if v != 0.0 {
                    cols.push(j);
                    vals.push(v);
                    sq += v * v;
                }
            }
            norms.push(sq.sqrt());
            starts.push(cols.len());
        }
        Self {
            starts,
            cols,
            vals,
            rhs: rhs.to_vec(),
            norms,
            dim,
        }
    }

    pub(crate) fn len(&self) -> usize {
        self.rhs.len()
    }

    pub(crate) fn dim(&self) -> usize {
        self.dim
    }

    #[inline]
    pub(crate) fn row(&self, i: usize) -> (&[usize], &[f64]) {
        let (s, e) = (self.starts[i], self.starts[i + 1]);
        (&self.cols[s..e], &self.vals[s..e])
    }

    #[inline]
    pub(crate) fn dot(&self, i: usize, x: &[f64]) -> f64 {
        let (c, v) = self.row(i);
        c.iter().zip(v).map(|(&j, &a)| a * x[j]).sum()
    }

    pub(crate) fn rhs(&self, i: usize) -> f64 {
        self.rhs[i]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum EngineStatus {
    Optimal,
    Infeasible,
    MaxIter,
}

#[derive(Debug, Clone)]
pub(crate) struct Projection {
    pub z: Vec<f64>,
    /// Working set (linearly independent rows) at termination.
    pub working: Vec<usize>,
    /// Multipliers aligned with `working`.
    pub multipliers: Vec<f64>,
    pub iterations: usize,
    pub status: EngineStatus,
}

/// Relative size below which a primal step direction counts as zero, i.e. the
/// new normal is dependent on the working set.
const DEPENDENCE_TOL: f64 = 1e-10;
/// Relative violation tolerance for declaring optimality.
const FEAS_TOL: f64 = 1e-12;

struct Factor {
    n: usize,
    q: usize,
    /// Column-major `n × n`; column `k` at `j[k*n..(k+1)*n]`.
    j: Vec<f64>,
    /// Column-major `n × n`, upper triangle of the leading `q × q` block used.
    r: Vec<f64>,
}

impl Factor {
    fn new(n: usize) -> Self {
        let mut j = vec![0.0; n * n];
        for k in 0..n {
            j[k * n + k] = 1.0;
        }
        Self {
            n,
            q: 0,
            j,
            r: vec![0.0; n * n],
        }
    }

    #[inline]
    fn r_at(&self, row: usize, col: usize) -> f64 {
        self.r[col * self.n + row]
    }

    /// `d = Jᵀ n_p` for the normal `n_p = −m_p` of a `≤` row.
    fn project_normal(&self, rows: &SparseRows, p: usize, d: &mut [f64]) {
        let n = self.n;
        let (c, v) = rows.row(p);
        for k in 0..n {
            let col = &self.j[k * n..(k + 1) * n];
            let mut s = 0.0;
            for (&jj, &a) in c.iter().zip(v) {
                s -= a * col[jj];
            }
            d[k] = s;
        }
    }

    /// Primal direction `Σ_{k≥q} d_k J[:, k]`.
    fn primal_direction(&self, d: &[f64], out: &mut [f64]) {
        let n = self.n;
        out.iter_mut().for_each(|v| *v = 0.0);
        for k in self.q..n {
            let dk = d[k];
            if dk != 0.0 {
                let col = &self.j[k * n..(k + 1) * n];
                for (o, &c) in out.iter_mut().zip(col) {
                    *o += dk * c;
                }
            }
        }
    }

    /// `r = R⁻¹ d[..q]`.
    fn dual_direction(&self, d: &[f64], out: &mut Vec<f64>) {
        let q = self.q;
        out.clear();
        out.resize(q, 0.0);
        for i in (0..q).rev() {
            let mut s = d[i];
            for k in i + 1..q {
                s -= self.r_at(i, k) * out[k];
            }
            out[i] = s / self.r_at(i, i);
        }
    }

    fn rotate_j(&mut self, a: usize, b: usize, c: f64, s: f64) {
        let n = self.n;
        let (lo, hi) = (a.min(b), a.max(b));
        let (left, right) = self.j.split_at_mut(hi * n);
        let col_lo = &mut left[lo * n..(lo + 1) * n];
        let col_hi = &mut right[..n];
        let (ca, cb) = if a < b { (col_lo, col_hi) } else { (col_hi, col_lo) };
        for (x, y) in ca.iter_mut().zip(cb.iter_mut()) {
            let (u, v) = (*x, *y);
            *x = c * u + s * v;
            *y = -s * u + c * v;
        }
    }

    /// Append a normal whose projection `d = Jᵀ n_p` is known.
    fn add(&mut self, d: &mut [f64]) {
        let n = self.n;
        let q = self.q;
        for k in (q + 1..n).rev() {
            let (a, b) = (d[k - 1], d[k]);
            if b == 0.0 {
                continue;
            }
            let h = a.hypot(b);
            let (c, s) = (a / h, b / h);
            d[k - 1] = h;
            d[k] = 0.0;
            self.rotate_j(k - 1, k, c, s);
        }
        for i in 0..=q {
            self.r[q * n + i] = d[i];
        }
        self.q += 1;
    }

    /// Remove the normal in working position `l` and restore triangularity.
    fn drop(&mut self, l: usize) {
        let n = self.n;
        let q = self.q;
        for col in l..q - 1 {
            for i in 0..=col + 1 {
                self.r[col * n + i] = self.r[(col + 1) * n + i];
            }
        }
        for i in 0..n {
            self.r[(q - 1) * n + i] = 0.0;
        }
        for k in l..q - 1 {
            let a = self.r_at(k, k);
            let b = self.r_at(k + 1, k);
            if b == 0.0 {
                continue;
            }
            let h = a.hypot(b);
            let (c, s) = (a / h, b / h);
            for col in k..q - 1 {
                let r1 = self.r[col * n + k];
                let r2 = self.r[col * n + k + 1];
                self.r[col * n + k] = c * r1 + s * r2;
                self.r[col * n + k + 1] = -s * r1 + c * r2;
            }
            self.r[k * n + k + 1] = 0.0;
            self.rotate_j(k, k + 1, c, s);
        }
        self.q -= 1;
    }
}

/// Euclidean projection of `z0` onto `{z : Mz ≤ c}`.
///
/// `hint` lists rows to bring in first when they are violated (warm start);
/// any order of violated rows leads to the same projection.
pub(crate) fn project_polyhedron(
    rows: &SparseRows,
    z0: &[f64],
    hint: &[usize],
    max_iter: usize,
) -> Projection {
    let n = rows.dim();
    let m = rows.len();
    debug_assert_eq!(z0.len(), n);
    let mut x = z0.to_vec();
    let mut working: Vec<usize> = Vec::new();
    let mut u: Vec<f64> = Vec::new();
    let mut in_working = vec![false; m];
    let mut factor = Factor::new(n);
    let mut d = vec![0.0; n];
    let mut zdir = vec![0.0; n];
    let mut r = Vec::new();
    let mut iterations = 0;
    let rhs_scale = (0..m).fold(0.0_f64, |acc, i| acc.max(rows.rhs(i).abs()));
    let max_norm = rows.norms.iter().cloned().fold(0.0_f64, f64::max);
    let mut hint_pos = 0;

    let finish = |x: Vec<f64>, working: Vec<usize>, u: Vec<f64>, iterations, status| Projection {
        z: x,
        working,
        multipliers: u,
        iterations,
        status,
    };

    loop {
        if n == 0 {
            return finish(x, working, u, iterations, EngineStatus::Optimal);
        }
        let xmax = x.iter().fold(0.0_f64, |a, v| a.max(v.abs()));
        let feas_tol = FEAS_TOL * (1.0 + rhs_scale + max_norm * xmax);

        // Pick the next violated row: warm-start hints first, then the most
        // violated row measured in distance.
        let mut chosen = None;
        while hint_pos < hint.len() {
            let p = hint[hint_pos];
            hint_pos += 1;
            if p < m && !in_working[p] && rows.dot(p, &x) - rows.rhs(p) > feas_tol {
                chosen = Some(p);
                break;
            }
        }
        if chosen.is_none() {
            let mut best = 0.0;
            for i in 0..m {
                if in_working[i] || rows.norms[i] == 0.0 {
                    continue;
                }
                let viol = rows.dot(i, &x) - rows.rhs(i);
                if viol > feas_tol {
                    let score = viol / rows.norms[i];
                    if score > best {
                        best = score;
                        chosen = Some(i);
                    }
                }
            }
        }
        let Some(p) = chosen else {
            return finish(x, working, u, iterations, EngineStatus::Optimal);
        };
        if rows.norms[p] == 0.0 {
            // 0 ≤ c_p with c_p < 0.
            return finish(x, working, u, iterations, EngineStatus::Infeasible);
        }

        let mut up = 0.0;
        loop {
            iterations += 1;
            if iterations > max_iter {
                return finish(x, working, u, iterations, EngineStatus::MaxIter);
            }
            factor.project_normal(rows, p, &mut d);
            factor.primal_direction(&d, &mut zdir);
            factor.dual_direction(&d, &mut r);
            let tail: f64 = d[factor.q..].iter().map(|v| v * v).sum();
            let dependent = tail.sqrt() <= DEPENDENCE_TOL * rows.norms[p];

            let mut t1 = f64::INFINITY;
            let mut l = usize::MAX;
            for (k, &rk) in r.iter().enumerate() {
                if rk > 0.0 {
                    let ratio = u[k] / rk;
                    if ratio < t1 {
                        t1 = ratio;
                        l = k;
                    }
                }
            }
            let viol = rows.dot(p, &x) - rows.rhs(p);
            let t2 = if dependent {
                f64::INFINITY
            } else {
                (viol / tail).max(0.0)
            };

            if !t1.is_finite() && !t2.is_finite() {
                return finish(x, working, u, iterations, EngineStatus::Infeasible);
            }
            if !t2.is_finite() {
                // Dual step only: shift weight onto p and release row l.
                for (uk, rk) in u.iter_mut().zip(&r) {
                    *uk -= t1 * rk;
                }
                up += t1;
                u[l] = 0.0;
                factor.drop(l);
                in_working[working[l]] = false;
                working.remove(l);
                u.remove(l);
                continue;
            }
            let t = t1.min(t2);
            for (xi, zi) in x.iter_mut().zip(&zdir) {
                *xi += t * zi;
            }
            for (uk, rk) in u.iter_mut().zip(&r) {
                *uk -= t * rk;
            }
            up += t;
            if t2 <= t1 {
                factor.add(&mut d);
                working.push(p);
                in_working[p] = true;
                u.push(up);
                break;
            }
            u[l] = 0.0;
            factor.drop(l);
            in_working[working[l]] = false;
            working.remove(l);
            u.remove(l);
        }
    }
}
