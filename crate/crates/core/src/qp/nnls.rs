//! Lawson–Hanson nonnegative least squares.
//!
//! Used for the boundedness certificate of linearly perturbed problems and
//! for recovering multipliers of fits that were produced without a solver
//! (thresholding, pool-adjacent-violators).

use nalgebra::{DMatrix, DVector};

#[derive(Debug, Clone)]
pub struct NnlsSolution {
    pub x: DVector<f64>,
    /// `‖Ex − f‖₂` at the returned point.
    pub residual_norm: f64,
    pub iterations: usize,
}

fn least_squares(e: &DMatrix<f64>, cols: &[usize], f: &DVector<f64>) -> DVector<f64> {
    let sub = DMatrix::from_fn(e.nrows(), cols.len(), |i, j| e[(i, cols[j])]);
    let svd = sub.svd(true, true);
    let eps = 1e-13 * svd.singular_values.max().max(1e-300);
    svd.solve(f, eps).unwrap_or_else(|_| DVector::zeros(cols.len()))
}

/// `argmin ‖Ex − f‖₂` over `x ≥ 0`.
pub fn nnls(e: &DMatrix<f64>, f: &DVector<f64>) -> NnlsSolution {
    let k = e.ncols();
    let mut x = DVector::zeros(k);
    if k == 0 {
        return NnlsSolution {
            residual_norm: f.norm(),
            x,
            iterations: 0,
        };
    }
    let scale = e.amax().max(1e-300) * (f.amax() + 1.0);
    let tol = 1e-12 * scale * (e.nrows().max(k) as f64);
    let mut passive = vec![false; k];
    let mut iterations = 0;
    let max_iter = 3 * k + 30;

    let mut w = e.transpose() * (f - e * &x);
    loop {
        let candidate = (0..k)
            .filter(|&j| !passive[j])
            .max_by(|&a, &b| w[a].total_cmp(&w[b]));
        let Some(j) = candidate else { break };
        if w[j] <= tol || iterations >= max_iter {
            break;
        }
        passive[j] = true;
        loop {
            iterations += 1;
            let cols: Vec<usize> = (0..k).filter(|&i| passive[i]).collect();
            let s_p = least_squares(e, &cols, f);
            if s_p.iter().all(|&v| v > 0.0) {
                for (idx, &c) in cols.iter().enumerate() {
                    x[c] = s_p[idx];
                }
                break;
            }
            let mut alpha = f64::INFINITY;
            for (idx, &c) in cols.iter().enumerate() {
                if s_p[idx] <= 0.0 {
                    let denom = x[c] - s_p[idx];
                    if denom > 0.0 {
                        alpha = alpha.min(x[c] / denom);
                    } else {
                        alpha = 0.0;
                    }
                }
            }
            if !alpha.is_finite() {
                alpha = 0.0;
            }
            for (idx, &c) in cols.iter().enumerate() {
                x[c] += alpha * (s_p[idx] - x[c]);
                if x[c] <= 1e-15 * scale {
                    x[c] = 0.0;
                    passive[c] = false;
                }
            }
            if iterations >= max_iter || !passive.iter().any(|&p| p) {
                break;
            }
        }
        w = e.transpose() * (f - e * &x);
        if iterations >= max_iter {
            break;
        }
    }
    let residual_norm = (e * &x - f).norm();
    NnlsSolution {
        x,
        residual_norm,
        iterations,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn unconstrained_optimum_is_returned_when_nonnegative() {
        let e = DMatrix::from_row_slice(3, 2, &[1.0, 0.0, 0.0, 1.0, 1.0, 1.0]);
        let truth = DVector::from_vec(vec![1.0, 2.0]);
        let f = &e * &truth;
        let sol = nnls(&e, &f);
        assert_relative_eq!(sol.x, truth, epsilon = 1e-10);
        assert!(sol.residual_norm < 1e-10);
    }

    #[test]
    fn negative_direction_is_clamped() {
        let e = DMatrix::from_element(1, 1, 1.0);
        let f = DVector::from_element(1, -1.0);
        let sol = nnls(&e, &f);
        assert_eq!(sol.x[0], 0.0);
        assert_relative_eq!(sol.residual_norm, 1.0);
    }

    #[test]
    fn matches_projected_enumeration_on_small_problem() {
        // Brute force over all supports for a 3-variable problem.
        let e = DMatrix::from_row_slice(
            4,
            3,
            &[1.0, 2.0, -1.0, 0.5, -1.0, 2.0, 3.0, 0.2, 0.1, -2.0, 1.0, 1.0],
        );
        let f = DVector::from_vec(vec![1.0, -2.0, 0.5, 3.0]);
        let sol = nnls(&e, &f);
        let mut best = f.norm();
        for mask in 1..8u32 {
            let cols: Vec<usize> = (0..3).filter(|j| mask & (1 << j) != 0).collect();
            let s = least_squares(&e, &cols, &f);
            if s.iter().all(|&v| v >= 0.0) {
                let mut x = DVector::zeros(3);
                for (i, &c) in cols.iter().enumerate() {
                    x[c] = s[i];
                }
                best = best.min((&e * x - &f).norm());
            }
        }
        assert_relative_eq!(sol.residual_norm, best, epsilon = 1e-10);
        assert!(sol.x.iter().all(|&v| v >= 0.0));
    }
}
