//! Operator splitting (ADMM) followed by a working-set polish.
//!
//! The variables are `x = [ξ; θ]` and the splitting is the usual one for
//! `min ½xᵀPx + qᵀx` subject to `Mx = z, z ≤ c`. The linear system
//! `P + σI + ρMᵀM` is dense and factored once per value of `ρ`. After
//! convergence the rows with positive dual are reduced to an independent
//! subset and handed to the polish; if the polished point does not verify,
//! the active-set engine is run from that guess.

use nalgebra::{DMatrix, DVector};

use super::{
    active_set_solve, assemble, linear_term, polish, scatter, verify, xi_weight, SolverConfig,
    Status, WarmStart,
};
use crate::error::{Error, Result};
use crate::geometry::{independent_rows, LiftedSystem, RANK_REL_TOL};
use crate::qp::FitResult;

const SIGMA: f64 = 1e-6;
const ALPHA: f64 = 1.6;
const RHO_START: f64 = 0.1;
/// Internal regularization of a semidefinite `ξ` block.
const XI_EPS: f64 = 1e-10;
const EPS_ABS: f64 = 1e-7;
const EPS_REL: f64 = 1e-7;
const EPS_INFEAS: f64 = 1e-9;
const ADAPT_EVERY: usize = 50;

pub(super) fn solve(
    sys: &LiftedSystem,
    y: &DVector<f64>,
    cfg: &SolverConfig,
    warm: Option<&WarmStart>,
) -> Result<FitResult> {
    let p = sys.p();
    let n = sys.n();
    let dim = p + n;
    let m = sys.m();
    let h = xi_weight(sys);
    let d = linear_term(sys);

    let mut mat = DMatrix::zeros(m, dim);
    mat.columns_mut(0, p).copy_from(sys.a());
    mat.columns_mut(p, n).copy_from(sys.b());
    let c = sys.c();
    let mut pdiag = DVector::from_element(dim, 1.0);
    for j in 0..p {
        pdiag[j] = h.max(XI_EPS);
    }
    let mut q = DVector::zeros(dim);
    q.rows_mut(0, p).copy_from(&d);
    q.rows_mut(p, n).copy_from(&(-y));

    let mut x = DVector::zeros(dim);
    if let Some(xi) = warm.and_then(|w| w.xi.as_ref()).filter(|v| v.len() == p) {
        x.rows_mut(0, p).copy_from(xi);
    }
    x.rows_mut(p, n).copy_from(y);
    let mut z = (&mat * &x).zip_map(c, |v, ci| v.min(ci));
    let mut w = DVector::<f64>::zeros(m);
    let mtm = mat.transpose() * &mat;

    let mut rho = RHO_START;
    let factor = |rho: f64| -> Result<nalgebra::Cholesky<f64, nalgebra::Dyn>> {
        let mut k = &mtm * rho;
        for i in 0..dim {
            k[(i, i)] += pdiag[i] + SIGMA;
        }
        k.cholesky()
            .ok_or_else(|| Error::Factorization("ADMM system is not positive definite".into()))
    };
    let mut chol = factor(rho)?;

    let mut iterations = 0;
    while iterations < cfg.max_iterations {
        iterations += 1;
        let w_prev = w.clone();
        let rhs = SIGMA * &x - &q + mat.transpose() * (rho * &z - &w);
        let x_tilde = chol.solve(&rhs);
        let z_tilde = &mat * &x_tilde;
        x = ALPHA * &x_tilde + (1.0 - ALPHA) * &x;
        let z_relaxed = ALPHA * &z_tilde + (1.0 - ALPHA) * &z;
        let z_new = (&z_relaxed + &w / rho).zip_map(c, |v, ci| v.min(ci));
        w += rho * (&z_relaxed - &z_new);
        z = z_new;

        if iterations % 10 != 0 {
            continue;
        }
        let mx = &mat * &x;
        let px = pdiag.component_mul(&x);
        let mtw = mat.transpose() * &w;
        let r_prim = (&mx - &z).amax();
        let r_dual = (&px + &q + &mtw).amax();
        let eps_prim = EPS_ABS + EPS_REL * mx.amax().max(z.amax());
        let eps_dual = EPS_ABS + EPS_REL * px.amax().max(mtw.amax()).max(q.amax());
        if r_prim <= eps_prim && r_dual <= eps_dual {
            break;
        }
        let dw = &w - &w_prev;
        let dw_norm = dw.amax();
        if dw_norm > 0.0 {
            let mtdw = (mat.transpose() * &dw).amax();
            let cdw = c.dot(&dw.map(|v| v.max(0.0)));
            if mtdw <= EPS_INFEAS * dw_norm && cdw < -EPS_INFEAS * dw_norm {
                return Err(Error::Infeasible);
            }
        }
        if iterations % ADAPT_EVERY == 0 {
            let prim = r_prim / mx.amax().max(z.amax()).max(1e-30);
            let dual = r_dual / px.amax().max(mtw.amax()).max(q.amax()).max(1e-30);
            let candidate = (rho * (prim / dual.max(1e-30)).sqrt()).clamp(1e-6, 1e6);
            if candidate > 5.0 * rho || candidate < 0.2 * rho {
                rho = candidate;
                chol = factor(rho)?;
            }
        }
    }

    let residuals: Vec<f64> = (0..m).map(|i| c[i] - (mat.row(i) * &x)[0]).collect();
    let mut guess: Vec<usize> = (0..m).filter(|&i| w[i] > residuals[i].max(0.0)).collect();
    guess.sort_by(|&a, &b| w[b].total_cmp(&w[a]).then(a.cmp(&b)));
    let ordered = DMatrix::from_fn(guess.len(), dim, |r, col| mat[(guess[r], col)]);
    let keep = independent_rows(&ordered, RANK_REL_TOL);
    let mut working: Vec<usize> = keep.iter().map(|&r| guess[r]).collect();
    working.sort_unstable();

    let scale = 1.0 + y.amax() + c.amax();
    let linear = if p > 0 { Some(&d) } else { None };
    let anchor = x.rows(0, p).into_owned();
    if let Some(pol) = polish::solve_on_working_set(sys, y, h, linear, &working, Some(&anchor)) {
        let duals = scatter(m, &working, pol.multipliers.as_slice());
        if verify(sys, &pol.xi, &pol.theta, &duals, cfg, scale) {
            // A polished point that verifies is optimal however far the
            // splitting iterates got.
            return Ok(assemble(sys, y, pol.xi, pol.theta, duals, working, iterations, Status::Optimal, cfg));
        }
    }
    let hint = WarmStart {
        working_set: working,
        xi: Some(x.rows(0, p).into_owned()),
    };
    let mut fit = active_set_solve(sys, y, cfg, Some(&hint))?;
    fit.iterations += iterations;
    Ok(fit)
}
