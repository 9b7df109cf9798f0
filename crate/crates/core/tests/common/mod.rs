#![allow(dead_code)]

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_chacha::ChaCha20Rng;
use rand_distr::StandardNormal;

pub fn normal_vec(rng: &mut ChaCha20Rng, n: usize) -> DVector<f64> {
    DVector::from_fn(n, |_, _| rng.sample(StandardNormal))
}

pub fn normal_mat(rng: &mut ChaCha20Rng, r: usize, c: usize) -> DMatrix<f64> {
    DMatrix::from_fn(r, c, |_, _| rng.sample(StandardNormal))
}

/// Rank from singular values with the usual `max(r, c) · ε · σ_max` cutoff.
pub fn svd_rank(m: &DMatrix<f64>) -> usize {
    if m.nrows() == 0 || m.ncols() == 0 {
        return 0;
    }
    let s = m.clone().svd(false, false).singular_values;
    let smax = s.max();
    if smax == 0.0 {
        return 0;
    }
    let cut = m.nrows().max(m.ncols()) as f64 * f64::EPSILON * smax * 1e3;
    s.iter().filter(|&&v| v > cut).count()
}

/// Orthonormal basis of `ker(m)` (columns), `dim` columns for an empty `m`.
pub fn kernel_basis(m: &DMatrix<f64>, dim: usize) -> DMatrix<f64> {
    if m.nrows() == 0 {
        return DMatrix::identity(dim, dim);
    }
    let r = svd_rank(m);
    // Pad to square so the full right singular basis is returned.
    let mut sq = DMatrix::zeros(m.nrows().max(dim), dim);
    sq.view_mut((0, 0), (m.nrows(), dim)).copy_from(m);
    let svd = sq.svd(false, true);
    let vt = svd.v_t.unwrap();
    let mut order: Vec<usize> = (0..dim).collect();
    order.sort_by(|&a, &b| svd.singular_values[b].partial_cmp(&svd.singular_values[a]).unwrap());
    DMatrix::from_fn(dim, dim - r, |i, k| vt[(order[r + k], i)])
}

/// Hildreth's dual coordinate ascent for `argmin ‖θ − y‖²` over `Aθ ≤ b`.
pub fn hildreth(a: &DMatrix<f64>, b: &DVector<f64>, y: &DVector<f64>, sweeps: usize) -> DVector<f64> {
    let m = a.nrows();
    let norms: Vec<f64> = (0..m).map(|i| a.row(i).norm_squared()).collect();
    let mut mu = vec![0.0; m];
    let mut theta = y.clone();
    for _ in 0..sweeps {
        let mut moved = 0.0_f64;
        for i in 0..m {
            if norms[i] == 0.0 {
                continue;
            }
            let viol = a.row(i).dot(&theta.transpose()) - b[i];
            let next = (mu[i] + viol / norms[i]).max(0.0);
            let delta = next - mu[i];
            if delta != 0.0 {
                mu[i] = next;
                theta -= delta * a.row(i).transpose();
                moved = moved.max(delta.abs() * norms[i].sqrt());
            }
        }
        if moved < 1e-14 {
            break;
        }
    }
    theta
}

/// Cyclic coordinate descent for `½‖y − Xβ‖² + τ‖β‖₁`.
pub fn lasso_cd(x: &DMatrix<f64>, y: &DVector<f64>, tau: f64) -> DVector<f64> {
    let d = x.ncols();
    let mut beta = DVector::<f64>::zeros(d);
    let mut r = y.clone();
    let col_sq: Vec<f64> = (0..d).map(|j| x.column(j).norm_squared()).collect();
    for _ in 0..200_000 {
        let mut change = 0.0_f64;
        for j in 0..d {
            let rho: f64 = x.column(j).dot(&r) + col_sq[j] * beta[j];
            let next = rho.signum() * (rho.abs() - tau).max(0.0) / col_sq[j];
            let delta = next - beta[j];
            if delta != 0.0 {
                r -= delta * x.column(j);
                beta[j] = next;
                change = change.max(delta.abs());
            }
        }
        if change < 1e-15 {
            break;
        }
    }
    beta
}

/// Hat-matrix trace of ridge regression.
pub fn ridge_trace(x: &DMatrix<f64>, lambda: f64) -> f64 {
    let d = x.ncols();
    let g = x.transpose() * x + lambda * DMatrix::<f64>::identity(d, d);
    let h = x * g.try_inverse().unwrap() * x.transpose();
    h.trace()
}

pub fn nondecreasing_along(edges: &[(usize, usize)], theta: &DVector<f64>, tol: f64) -> bool {
    edges.iter().all(|&(i, j)| theta[i] <= theta[j] + tol)
}
