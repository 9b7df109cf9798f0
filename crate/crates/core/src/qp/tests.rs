use super::*;
use approx::assert_relative_eq;
use nalgebra::{DMatrix, DVector};

fn chain(n: usize) -> ConstraintSystem {
    let a = DMatrix::from_fn(n - 1, n, |i, j| {
        if j == i {
            1.0
        } else if j == i + 1 {
            -1.0
        } else {
            0.0
        }
    });
    ConstraintSystem::new(a, DVector::zeros(n - 1)).unwrap()
}

fn regression_lift(x: &DMatrix<f64>) -> (DMatrix<f64>, DMatrix<f64>) {
    let (n, d) = x.shape();
    let a = DMatrix::from_fn(2 * n, d, |i, j| if i < n { x[(i, j)] } else { -x[(i - n, j)] });
    let b = DMatrix::from_fn(2 * n, n, |i, j| {
        if i < n && i == j {
            -1.0
        } else if i >= n && i - n == j {
            1.0
        } else {
            0.0
        }
    });
    (a, b)
}

fn lasso_lift(x: &DMatrix<f64>, tau: f64) -> LiftedSystem {
    let (n, d) = x.shape();
    let (ax, bx) = regression_lift(x);
    let m = 2 * n + 2 * d;
    let mut a = DMatrix::zeros(m, 2 * d);
    let mut b = DMatrix::zeros(m, n);
    a.view_mut((0, 0), (2 * n, d)).copy_from(&ax);
    b.view_mut((0, 0), (2 * n, n)).copy_from(&bx);
    for k in 0..d {
        a[(2 * n + k, k)] = 1.0;
        a[(2 * n + k, d + k)] = -1.0;
        a[(2 * n + d + k, k)] = -1.0;
        a[(2 * n + d + k, d + k)] = -1.0;
    }
    let mut lin = DVector::zeros(2 * d);
    lin.rows_mut(d, d).fill(tau);
    LiftedSystem::new(a, b, DVector::zeros(m), Perturbation::Linear(lin)).unwrap()
}

fn both_methods() -> [SolverConfig; 2] {
    [
        SolverConfig::default(),
        SolverConfig {
            method: Method::OperatorSplittingWithPolish,
            ..SolverConfig::default()
        },
    ]
}

#[test]
fn member_is_its_own_projection() {
    let sys = chain(4);
    let y = DVector::from_vec(vec![0.0, 1.0, 1.5, 3.0]);
    for cfg in both_methods() {
        let fit = project(&sys, &y, &cfg).unwrap();
        assert_relative_eq!(fit.theta_hat, y, epsilon = 1e-12);
        assert!(fit.active.is_empty());
        assert_eq!(fit.status, Status::Optimal);
    }
}

#[test]
fn two_point_chain_pools() {
    let sys = chain(2);
    let y = DVector::from_vec(vec![2.0, 1.0]);
    for cfg in both_methods() {
        let fit = project(&sys, &y, &cfg).unwrap();
        assert_relative_eq!(fit.theta_hat[0], 1.5, epsilon = 1e-10);
        assert_relative_eq!(fit.theta_hat[1], 1.5, epsilon = 1e-10);
        assert_eq!(fit.active.indices, vec![0]);
        assert_relative_eq!(fit.duals[0], 0.5, epsilon = 1e-9);
        assert!(fit.kkt.max() < 1e-9);
    }
}

#[test]
fn regression_with_identity_returns_y() {
    let x = DMatrix::identity(3, 3);
    let (a, b) = regression_lift(&x);
    let sys = LiftedSystem::new(a, b, DVector::zeros(6), Perturbation::None).unwrap();
    let y = DVector::from_vec(vec![1.0, -2.0, 0.5]);
    for cfg in both_methods() {
        let fit = solve_lifted(&sys, &y, &cfg).unwrap();
        assert_relative_eq!(fit.theta_hat, y, epsilon = 1e-9);
        assert_eq!(fit.status, Status::Optimal);
        assert!(fit.kkt.max() < 1e-8, "{:?}", fit.kkt);
    }
}

#[test]
fn ridge_shrinks() {
    let x = DMatrix::identity(2, 2);
    let (a, b) = regression_lift(&x);
    let sys = LiftedSystem::new(a, b, DVector::zeros(4), Perturbation::Quadratic(1.0)).unwrap();
    let y = DVector::from_vec(vec![2.0, 4.0]);
    for cfg in both_methods() {
        let fit = solve_lifted(&sys, &y, &cfg).unwrap();
        assert_relative_eq!(fit.theta_hat[0], 1.0, epsilon = 1e-9);
        assert_relative_eq!(fit.theta_hat[1], 2.0, epsilon = 1e-9);
        assert!(fit.kkt.max() < 1e-8);
    }
}

#[test]
fn lasso_with_identity_soft_thresholds() {
    let sys = lasso_lift(&DMatrix::identity(3, 3), 1.0);
    let y = DVector::from_vec(vec![3.0, 0.5, -2.0]);
    for cfg in both_methods() {
        let fit = solve_lifted(&sys, &y, &cfg).unwrap();
        assert_relative_eq!(fit.theta_hat, DVector::from_vec(vec![2.0, 0.0, -1.0]), epsilon = 1e-8);
        assert_eq!(fit.status, Status::Optimal);
        assert!(fit.kkt.max() < 1e-8, "{:?}", fit.kkt);
    }
}

#[test]
fn lasso_with_rank_deficient_design() {
    // Duplicated column: ξ is not unique but θ is.
    let x = DMatrix::from_row_slice(3, 2, &[1.0, 1.0, 2.0, 2.0, 0.0, 0.0]);
    let sys = lasso_lift(&x, 0.5);
    let y = DVector::from_vec(vec![1.0, 3.0, 1.0]);
    let a = solve_lifted(&sys, &y, &SolverConfig::default()).unwrap();
    let b = solve_lifted(
        &sys,
        &y,
        &SolverConfig {
            method: Method::OperatorSplittingWithPolish,
            ..SolverConfig::default()
        },
    )
    .unwrap();
    assert_relative_eq!(a.theta_hat, b.theta_hat, epsilon = 1e-7);
    // Single effective column u = (1,2,0) with weight 2 in ℓ1 after merging:
    // β_total = (uᵀy − τ)/‖u‖² = (7 − 0.5)/5.
    let beta = 6.5 / 5.0;
    assert_relative_eq!(a.theta_hat[0], beta, epsilon = 1e-8);
    assert_relative_eq!(a.theta_hat[1], 2.0 * beta, epsilon = 1e-8);
}

#[test]
fn infeasible_system_is_reported() {
    let a = DMatrix::from_row_slice(2, 1, &[1.0, -1.0]);
    let sys = ConstraintSystem::new(a, DVector::from_vec(vec![-1.0, -1.0])).unwrap();
    let y = DVector::from_element(1, 0.0);
    for cfg in both_methods() {
        assert!(matches!(project(&sys, &y, &cfg), Err(Error::Infeasible)));
    }
}

#[test]
fn unbounded_linear_problem_is_rejected() {
    let a = DMatrix::from_element(1, 1, 1.0);
    let b = DMatrix::from_element(1, 1, 0.0);
    let sys = LiftedSystem::new(
        a,
        b,
        DVector::zeros(1),
        Perturbation::Linear(DVector::from_element(1, 1.0)),
    )
    .unwrap();
    let cert = check_bounded(&sys).unwrap();
    assert!(!cert.bounded);
    let y = DVector::from_element(1, 0.0);
    assert!(matches!(
        solve_lifted(&sys, &y, &SolverConfig::default()),
        Err(Error::Unbounded)
    ));
}

#[test]
fn zero_linear_term_is_bounded() {
    let x = DMatrix::identity(2, 2);
    let sys = lasso_lift(&x, 0.0);
    let cert = check_bounded(&sys).unwrap();
    assert!(cert.bounded);
    assert!(cert.multipliers.iter().all(|&v| v == 0.0));
}

#[test]
fn lasso_lift_is_bounded_for_positive_tau() {
    let x = DMatrix::from_row_slice(3, 2, &[1.0, 0.3, -0.2, 1.0, 0.5, 0.5]);
    let cert = check_bounded(&lasso_lift(&x, 2.5)).unwrap();
    assert!(cert.bounded);
    assert!(cert.multipliers.iter().all(|&v| v >= 0.0));
}

#[test]
fn project_matches_lifted_with_empty_auxiliary_block() {
    let sys = chain(5);
    let y = DVector::from_vec(vec![3.0, 1.0, 2.0, 0.0, 4.0]);
    let cfg = SolverConfig::default();
    let a = project(&sys, &y, &cfg).unwrap();
    let b = solve_lifted(&sys.to_lifted(), &y, &cfg).unwrap();
    assert_relative_eq!(a.theta_hat, b.theta_hat, epsilon = 1e-12);
}

#[test]
fn recovered_duals_match_solver_duals() {
    let sys = chain(5);
    let y = DVector::from_vec(vec![3.0, 1.0, 2.0, 0.0, 4.0]);
    let fit = project(&sys, &y, &SolverConfig::default()).unwrap();
    let mu = recover_duals_plain(&sys, &y, &fit.theta_hat, &fit.active.indices);
    assert_relative_eq!(mu, fit.duals, epsilon = 1e-9);
    let kkt = kkt_residuals_plain(&sys, &y, &fit.theta_hat, &mu);
    assert!(kkt.max() < 1e-9);
}

#[test]
fn warm_start_does_not_change_theta() {
    let x = DMatrix::from_row_slice(4, 3, &[1.0, 0.2, 0.0, 0.1, 1.0, 0.3, -0.4, 0.0, 1.0, 0.5, 0.5, 0.5]);
    let sys = lasso_lift(&x, 0.3);
    let y = DVector::from_vec(vec![1.0, -0.5, 2.0, 0.3]);
    let cfg = SolverConfig::default();
    let cold = solve_lifted(&sys, &y, &cfg).unwrap();
    let warm = WarmStart {
        working_set: vec![0, 1, 2, 3],
        xi: Some(DVector::from_element(6, 1.0)),
    };
    let hot = solve_lifted_with(&sys, &y, &cfg, Some(&warm)).unwrap();
    assert_relative_eq!(cold.theta_hat, hot.theta_hat, epsilon = 1e-7);
}

#[test]
fn invalid_config_is_rejected() {
    let cfg = SolverConfig {
        max_iterations: 0,
        ..SolverConfig::default()
    };
    let sys = chain(2);
    assert!(project(&sys, &DVector::zeros(2), &cfg).is_err());
}
