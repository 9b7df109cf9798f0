mod common;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;

use common::{hildreth, lasso_cd, nondecreasing_along, normal_mat, normal_vec, ridge_trace, svd_rank};
use polydf::dof::divergence;
use polydf::isotonic::{fit_bounded, fit_isotonic, pava};
use polydf::problems::build_penalized_convex;
use polydf::qp::{project, solve_lifted, Method};
use polydf::{
    BoundedIsotonicSystem, ConstraintSystem, Dataset, PartialOrder, ProblemKind, ProblemSpec,
    SolverConfig,
};

fn cfg() -> SolverConfig {
    SolverConfig::default()
}

fn admm() -> SolverConfig {
    SolverConfig {
        method: Method::OperatorSplittingWithPolish,
        ..SolverConfig::default()
    }
}

fn spec(kind: ProblemKind, x: DMatrix<f64>, y: &DVector<f64>) -> ProblemSpec {
    ProblemSpec::new(kind, Dataset::new(x, y.clone(), None).unwrap())
}

#[test]
fn projection_matches_hildreth() {
    let mut rng = ChaCha20Rng::seed_from_u64(1);
    for _ in 0..30 {
        let n = rng.random_range(2..7);
        let m = rng.random_range(1..10);
        let a = normal_mat(&mut rng, m, n);
        let b = DVector::from_fn(m, |_, _| rng.random_range(0.0..1.0));
        let y = 3.0 * normal_vec(&mut rng, n);
        let sys = ConstraintSystem::new(a.clone(), b.clone()).unwrap();
        let oracle = hildreth(&a, &b, &y, 1_000_000);
        for c in [cfg(), admm()] {
            let fit = project(&sys, &y, &c).unwrap();
            assert!((&fit.theta_hat - &oracle).amax() < 1e-7, "{:?}", c.method);
        }
    }
}

#[test]
fn bounded_isotonic_matches_hildreth() {
    let mut rng = ChaCha20Rng::seed_from_u64(2);
    for t in 0..20 {
        let order = if t % 2 == 0 {
            PartialOrder::lattice(&[3, 4]).unwrap()
        } else {
            PartialOrder::random(15, 0.2, &mut rng).unwrap()
        };
        let y = 2.0 * normal_vec(&mut rng, order.n());
        let lambda = rng.random_range(0.0..2.0);
        let sys = BoundedIsotonicSystem::new(order, lambda).unwrap();
        let poly = sys.to_constraint_system();
        let oracle = hildreth(poly.a(), poly.b(), &y, 1_000_000);
        let fit = fit_bounded(&sys, &y, &cfg()).unwrap();
        assert!((&fit.theta_hat - &oracle).amax() < 1e-7);
    }
}

#[test]
fn pava_matches_chain_projection() {
    let mut rng = ChaCha20Rng::seed_from_u64(3);
    for _ in 0..20 {
        let n = rng.random_range(2..30);
        let y = normal_vec(&mut rng, n);
        let order = PartialOrder::chain(n).unwrap();
        let poly = order.to_constraint_system();
        let oracle = hildreth(poly.a(), poly.b(), &y, 1_000_000);
        let fitted = DVector::from_vec(pava(y.as_slice()));
        assert!((&fitted - &oracle).amax() < 1e-8);
        assert!(nondecreasing_along(order.edges(), &fitted, 0.0));
        let (fit, _) = fit_isotonic(&order, &y, &cfg()).unwrap();
        assert_eq!(fit.theta_hat, fitted);
    }
}

#[test]
fn lasso_matches_coordinate_descent() {
    let mut rng = ChaCha20Rng::seed_from_u64(4);
    for _ in 0..20 {
        let x = normal_mat(&mut rng, 12, 5);
        let y = normal_vec(&mut rng, 12);
        let tau = rng.random_range(0.0..0.8) * (x.transpose() * &y).amax();
        let oracle = &x * lasso_cd(&x, &y, tau);
        for c in [cfg(), admm()] {
            let (_, fit) = spec(ProblemKind::Lasso { tau }, x.clone(), &y).fit(&c).unwrap();
            assert!((&fit.theta_hat - &oracle).amax() < 1e-6, "{:?}", c.method);
        }
        let identity = DMatrix::identity(5, 5);
        let (_, gfit) = spec(ProblemKind::GeneralizedLasso { tau }, x.clone(), &y)
            .with_penalty(identity)
            .fit(&cfg())
            .unwrap();
        assert!((&gfit.theta_hat - &oracle).amax() < 1e-6);
    }
}

#[test]
fn ridge_and_least_squares_match_normal_equations() {
    let mut rng = ChaCha20Rng::seed_from_u64(5);
    for _ in 0..20 {
        let n = rng.random_range(3..15);
        let d = rng.random_range(1..6);
        let x = normal_mat(&mut rng, n, d);
        let y = normal_vec(&mut rng, n);
        let lambda = rng.random_range(0.01..5.0);
        let g = x.transpose() * &x + lambda * DMatrix::<f64>::identity(d, d);
        let oracle = &x * g.try_inverse().unwrap() * x.transpose() * &y;
        let (f, fit) = spec(ProblemKind::Ridge { lambda }, x.clone(), &y).fit(&cfg()).unwrap();
        assert!((&fit.theta_hat - &oracle).amax() < 1e-8);
        assert!((divergence(&f, &fit).unwrap().value - ridge_trace(&x, lambda)).abs() < 1e-8);

        let ls = x.clone().svd(true, true).solve(&y, 1e-12).unwrap();
        let (f, fit) = spec(ProblemKind::LinearRegression, x.clone(), &y).fit(&cfg()).unwrap();
        assert!((&fit.theta_hat - &x * ls).amax() < 1e-8);
        assert_eq!(divergence(&f, &fit).unwrap().value, svd_rank(&x) as f64);
    }
}

#[test]
fn penalized_convex_matches_rescaled_projection() {
    // With z = (√λ ξ, θ) the problem is a plain projection of (0, y).
    let mut rng = ChaCha20Rng::seed_from_u64(6);
    for _ in 0..5 {
        let x = DMatrix::from_fn(5, 2, |_, _| rng.random_range(-1.0..1.0));
        let y = DVector::from_fn(5, |i, _| x.row(i).norm_squared()) + 0.3 * normal_vec(&mut rng, 5);
        let lambda = rng.random_range(0.05..2.0);
        let sys = build_penalized_convex(&x, lambda).unwrap();
        let (p, n) = (sys.p(), sys.n());
        let mut a = DMatrix::zeros(sys.m(), p + n);
        a.columns_mut(0, p).copy_from(&(sys.a() / lambda.sqrt()));
        a.columns_mut(p, n).copy_from(sys.b());
        let mut start = DVector::zeros(p + n);
        start.rows_mut(p, n).copy_from(&y);
        let z = hildreth(&a, sys.c(), &start, 2_000_000);
        let oracle = z.rows(p, n).into_owned();
        for c in [cfg(), admm()] {
            let fit = solve_lifted(&sys, &y, &c).unwrap();
            assert!((&fit.theta_hat - &oracle).amax() < 1e-6, "{:?}", c.method);
        }
    }
}
