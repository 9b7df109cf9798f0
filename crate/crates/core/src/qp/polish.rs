//! Equality-constrained re-solve on a candidate working set.
//!
//! Given rows `W`, solves
//!
//! ```text
//! min ½‖θ − y‖² + dᵀξ + (h/2)‖ξ‖²   s.t.  A_W ξ + B_W θ = c_W
//! ```
//!
//! through its KKT system with `θ` eliminated:
//!
//! ```text
//! [ h·I    A_Wᵀ    ] [ξ]   [ −d            ]
//! [ A_W   −B_W B_Wᵀ] [μ] = [ c_W − B_W y   ]
//! ```
//!
//! The matrix may be singular when `h = 0` (the auxiliary block need not be
//! determined), so it is factored with a small quasi-definite shift and the
//! unshifted system is recovered by iterative refinement. The undetermined
//! part of `ξ` is then taken from `anchor` when one is given: `ξ` is moved to
//! the nearest point of `{ξ : A_W ξ = c_W − B_W θ}`.

use nalgebra::{DMatrix, DVector};

use crate::geometry::{select_rows, LiftedSystem};

#[derive(Debug, Clone)]
pub(crate) struct Polished {
    pub xi: DVector<f64>,
    pub theta: DVector<f64>,
    /// Multipliers aligned with the working set.
    pub multipliers: DVector<f64>,
}

pub(crate) fn solve_on_working_set(
    sys: &LiftedSystem,
    y: &DVector<f64>,
    h: f64,
    linear: Option<&DVector<f64>>,
    working: &[usize],
    anchor: Option<&DVector<f64>>,
) -> Option<Polished> {
    let p = sys.p();
    let q = working.len();
    let a_w = select_rows(sys.a(), working);
    let b_w = select_rows(sys.b(), working);
    let c_w = DVector::from_fn(q, |i, _| sys.c()[working[i]]);
    let size = p + q;
    if size == 0 {
        return Some(Polished {
            xi: DVector::zeros(0),
            theta: y.clone(),
            multipliers: DVector::zeros(0),
        });
    }

    let mut k = DMatrix::zeros(size, size);
    for i in 0..p {
        k[(i, i)] = h;
    }
    k.view_mut((0, p), (p, q)).copy_from(&a_w.transpose());
    k.view_mut((p, 0), (q, p)).copy_from(&a_w);
    let bbt = &b_w * b_w.transpose();
    k.view_mut((p, p), (q, q)).copy_from(&(-bbt));

    let mut rhs = DVector::zeros(size);
    if let Some(d) = linear {
        rhs.rows_mut(0, p).copy_from(&(-d));
    }
    rhs.rows_mut(p, q).copy_from(&(&c_w - &b_w * y));

    let scale = k.amax().max(1.0);
    let shift = 1e-9 * scale;
    let mut shifted = k.clone();
    for i in 0..p {
        shifted[(i, i)] += shift;
    }
    for i in p..size {
        shifted[(i, i)] -= shift;
    }
    let lu = shifted.lu();
    let rhs_scale = rhs.amax().max(1.0);
    let mut sol = lu.solve(&rhs)?;
    for _ in 0..60 {
        let res = &rhs - &k * &sol;
        if res.amax() <= 1e-13 * rhs_scale * scale {
            break;
        }
        sol += lu.solve(&res)?;
    }
    if sol.iter().any(|v| !v.is_finite()) {
        return None;
    }
    let residual = (&rhs - &k * &sol).amax();
    if residual > 1e-8 * rhs_scale * scale {
        // Inconsistent system: the working set admits no stationary point.
        return None;
    }
    let mut xi = sol.rows(0, p).into_owned();
    let multipliers = sol.rows(p, q).into_owned();
    let theta = y - b_w.transpose() * &multipliers;
    if let Some(a0) = anchor.filter(|a| h == 0.0 && p > 0 && q > 0 && a.len() == p) {
        let target = &c_w - &b_w * &theta;
        let r = &target - &a_w * a0;
        let tol = 1e-12 * a_w.amax().max(1.0) * p.max(q) as f64;
        if let Ok(delta) = a_w.clone().svd(true, true).solve(&r, tol) {
            let candidate = a0 + delta;
            let miss = (&a_w * &candidate - &target).amax();
            if miss <= 1e-9 * (1.0 + target.amax()) {
                xi = candidate;
            }
        }
    }
    Some(Polished {
        xi,
        theta,
        multipliers,
    })
}
