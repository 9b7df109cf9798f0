use super::*;
use crate::problems::Dataset;
use approx::assert_relative_eq;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;

fn cfg() -> SolverConfig {
    SolverConfig::default()
}

fn record(lambda: f64, sure: f64, loss: Option<f64>) -> SureRecord {
    SureRecord {
        lambda,
        rss: 0.0,
        divergence: 0.0,
        sure,
        loss,
        flagged: false,
        kkt: 0.0,
    }
}

#[test]
fn sure_value_examples() {
    let y = DVector::from_vec(vec![1.0, -2.0, 0.5]);
    assert_eq!(sure_value(&y, &y, 3.0, 2.0).unwrap(), 12.0);
    assert_relative_eq!(sure_value(&y, &DVector::zeros(3), 0.0, 1.0).unwrap(), 5.25 - 3.0);
    assert!(sure_value(&y, &y, 3.0, 0.0).is_err());
    assert!(sure_value(&y, &DVector::zeros(2), 0.0, 1.0).is_err());
}

#[test]
fn argmin_prefers_smaller_lambda() {
    let c = SureCurve::from_records(
        1,
        1.0,
        vec![record(0.1, 3.0, Some(2.0)), record(0.2, 1.0, Some(1.0)), record(0.3, 1.0, Some(1.0))],
    )
    .unwrap();
    assert_eq!(c.lambda_hat, 0.2);
    assert_eq!(c.lambda_star, Some(0.2));
    assert_eq!(c.sure_ratio(), Some(1.0));
}

#[test]
fn lambda_hat_is_shift_invariant() {
    let mut rng = ChaCha20Rng::seed_from_u64(3);
    let records: Vec<SureRecord> = (0..20).map(|k| record(k as f64, rng.random::<f64>(), None)).collect();
    let shifted: Vec<SureRecord> = records.iter().map(|r| record(r.lambda, r.sure + 37.5, None)).collect();
    let a = SureCurve::from_records(1, 1.0, records).unwrap();
    let b = SureCurve::from_records(1, 1.0, shifted).unwrap();
    assert_eq!(a.lambda_hat, b.lambda_hat);
    assert_eq!(a.lambda_star, None);
}

#[test]
fn grid_validation() {
    assert!(validate_grid(&[]).is_err());
    assert!(validate_grid(&[1.0, 1.0]).is_err());
    assert!(validate_grid(&[2.0, 1.0]).is_err());
    assert!(validate_grid(&[-1.0]).is_err());
    assert!(validate_grid(&[0.0, 1.0, f64::INFINITY]).is_ok());
}

fn ridge_spec(seed: u64) -> (ProblemSpec, DMatrix<f64>) {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let x = DMatrix::from_fn(12, 4, |_, _| rng.random::<f64>() * 2.0 - 1.0);
    let y = DVector::from_fn(12, |_, _| rng.random::<f64>() * 4.0 - 2.0);
    let data = Dataset::new(x.clone(), y, Some(1.0)).unwrap();
    (ProblemSpec::new(ProblemKind::Ridge { lambda: 1.0 }, data), x)
}

#[test]
fn single_point_grid() {
    let (spec, _) = ridge_spec(1);
    let c = tune(&spec, &[0.7], 1.0, &cfg()).unwrap();
    assert_eq!(c.lambda_hat, 0.7);
    assert_eq!(c.records.len(), 1);
}

#[test]
fn records_satisfy_the_identity() {
    let (spec, _) = ridge_spec(2);
    let sigma = 0.8;
    let c = tune(&spec, &logspace(0.01, 100.0, 9), sigma, &cfg()).unwrap();
    let s2 = sigma * sigma;
    for r in &c.records {
        assert_eq!(r.sure, r.rss + 2.0 * s2 * r.divergence - 12.0 * s2);
    }
}

#[test]
fn ridge_tuning_matches_analytic_path() {
    for seed in 0..5 {
        let (spec, x) = ridge_spec(seed);
        let grid = logspace(1e-3, 1e3, 25);
        let sigma = 0.9;
        let c = tune(&spec, &grid, sigma, &cfg()).unwrap();
        let analytic: Vec<f64> = grid
            .iter()
            .map(|&l| {
                let g = x.transpose() * &x + DMatrix::identity(4, 4) * l;
                let hat = &x * g.try_inverse().unwrap() * x.transpose();
                let fit = &hat * &spec.data.y;
                (&spec.data.y - fit).norm_squared() + 2.0 * sigma * sigma * hat.trace() - 12.0 * sigma * sigma
            })
            .collect();
        for (r, u) in c.records.iter().zip(&analytic) {
            assert_relative_eq!(r.sure, *u, epsilon = 1e-7);
        }
        let best = analytic
            .iter()
            .enumerate()
            .fold(0, |b, (i, v)| if *v < analytic[b] { i } else { b });
        assert_eq!(c.lambda_hat, grid[best]);
    }
}

#[test]
fn ridge_zero_is_least_squares() {
    let (spec, x) = ridge_spec(7);
    let c = tune(&spec, &[0.0, 1.0], 1.0, &cfg()).unwrap();
    assert_eq!(c.records[0].divergence, 4.0);
    assert!(c.records[1].divergence < 4.0);
    let _ = x;
}

#[test]
fn bounded_isotonic_divergence_is_monotone() {
    let (x, truth) = simulation_design(Model::Isotonic, 100, 2, 11).unwrap();
    let y = noisy(&truth, 1.0, 11);
    let data = Dataset::new(x, y, Some(1.0)).unwrap();
    let spec = ProblemSpec::new(ProblemKind::BoundedIsotonic { lambda: 1.0 }, data);
    let grid = default_grid(&spec, DEFAULT_GRID_POINTS, &cfg()).unwrap();
    assert_eq!(grid.len(), DEFAULT_GRID_POINTS);
    assert_eq!(grid[0], 0.0);
    let c = tune(&spec, &grid, 1.0, &cfg()).unwrap();
    assert_eq!(c.records[0].divergence, 1.0);
    for w in c.records.windows(2) {
        assert!(w[0].divergence <= w[1].divergence);
    }
    assert!(c.max_kkt() < 1e-6);
}

fn noisy(truth: &DVector<f64>, sigma: f64, seed: u64) -> DVector<f64> {
    crate::rng::noisy_response(truth, sigma, seed, 0)
}

#[test]
fn untunable_kind_is_rejected() {
    let data = Dataset::new(DMatrix::identity(3, 3), DVector::zeros(3), None).unwrap();
    let spec = ProblemSpec::new(ProblemKind::LinearRegression, data);
    assert!(tune(&spec, &[1.0], 1.0, &cfg()).is_err());
    assert!(default_grid(&spec, 10, &cfg()).is_err());
}

#[test]
fn solver_failure_names_the_grid_point() {
    let (spec, _) = ridge_spec(3);
    let tight = SolverConfig {
        max_iterations: 1,
        ..SolverConfig::default()
    };
    match tune(&spec, &[0.5, 1.0], 1.0, &tight) {
        Err(Error::GridPoint { index, lambda, .. }) => {
            assert_eq!(index, 0);
            assert_eq!(lambda, 0.5);
        }
        other => panic!("expected a grid-point error, got {other:?}"),
    }
}

#[test]
fn default_grids_cover_each_kind() {
    let (spec, _) = ridge_spec(4);
    let g = default_grid(&spec, 12, &cfg()).unwrap();
    assert_eq!(g.len(), 12);
    assert!(validate_grid(&g).is_ok());
    let lasso = ProblemSpec::new(ProblemKind::Lasso { tau: 1.0 }, spec.data.clone());
    let g = default_grid(&lasso, 12, &cfg()).unwrap();
    assert_relative_eq!(*g.last().unwrap(), (spec.data.x.transpose() * &spec.data.y).amax(), epsilon = 1e-12);
    let (x, truth) = simulation_design(Model::Convex, 10, 2, 0).unwrap();
    let convex = ProblemSpec::new(
        ProblemKind::PenalizedConvex { lambda: 1.0 },
        Dataset::new(x, truth, None).unwrap(),
    );
    let g = default_grid(&convex, 12, &cfg()).unwrap();
    assert_eq!(g[0], 0.0);
    assert!(validate_grid(&g).is_ok());
}

#[test]
fn spaced_grids() {
    assert_eq!(linspace(0.0, 1.0, 5), vec![0.0, 0.25, 0.5, 0.75, 1.0]);
    let g = logspace(1e-2, 1e2, 5);
    for (v, e) in g.iter().zip([1e-2, 1e-1, 1.0, 1e1, 1e2]) {
        assert_relative_eq!(*v, e, max_relative = 1e-12);
    }
}

#[test]
fn summary_quantiles() {
    let s = summarize(&[4.0, 1.0, 3.0, 2.0, 5.0]).unwrap();
    assert_eq!((s.min, s.q25, s.median, s.q75, s.max), (1.0, 2.0, 3.0, 4.0, 5.0));
    assert_eq!(s.mean, 3.0);
    assert_relative_eq!(s.sd, 2.5f64.sqrt());
    assert_eq!(summarize(&[1.0, 2.0]).unwrap().median, 1.5);
    assert!(summarize(&[]).is_err());
}

#[test]
fn risk_summary_checks_grids() {
    let a = SureCurve::from_records(1, 1.0, vec![record(0.0, 1.0, Some(2.0))]).unwrap();
    let b = SureCurve::from_records(1, 1.0, vec![record(0.0, 3.0, Some(2.0))]).unwrap();
    let c = SureCurve::from_records(1, 1.0, vec![record(1.0, 3.0, Some(2.0))]).unwrap();
    let rows = risk_summary(&[a.clone(), b]).unwrap();
    assert_eq!(rows[0].mean_sure, 2.0);
    assert_eq!(rows[0].se_loss, 0.0);
    assert_relative_eq!(rows[0].combined_se, 1.0);
    assert!(risk_summary(&[a, c]).is_err());
}

#[test]
fn ratio_experiment_is_reproducible() {
    let config = SimulationConfig {
        model: Model::Isotonic,
        n: 30,
        d: 2,
        sigma: 1.0,
        reps: 6,
        seed: 5,
        grid: None,
        grid_points: 10,
    };
    let a = ratio_experiment(&config, &cfg()).unwrap();
    let b = ratio_experiment(&config, &cfg()).unwrap();
    assert_eq!(a, b);
    assert_eq!(a.rows.len(), 6);
    for r in &a.rows {
        assert!(r.sure_ratio >= 1.0);
        assert!(r.reference_ratio >= 1.0 - 1e-12);
    }
}

#[test]
fn convex_ratio_experiment_runs() {
    let config = SimulationConfig {
        model: Model::Convex,
        n: 15,
        d: 2,
        sigma: 0.5,
        reps: 3,
        seed: 9,
        grid: None,
        grid_points: 6,
    };
    let out = ratio_experiment(&config, &cfg()).unwrap();
    for (r, c) in out.rows.iter().zip(&out.curves) {
        assert!(r.sure_ratio >= 1.0);
        assert_eq!(c.records[0].lambda, 0.0);
        assert_eq!(r.loss_reference, c.records[0].loss.unwrap());
    }
    assert!(out.max_kkt < 1e-6);
}

#[test]
fn df_compare_small() {
    let config = DfCompareConfig {
        n: 25,
        d: 2,
        sigma: 1.0,
        reps: 40,
        seed: 3,
        grid: None,
        grid_points: 5,
    };
    let out = df_compare(&config, &cfg()).unwrap();
    assert_eq!(out.rows.len(), 5);
    assert_eq!(out.rows[0].lambda, 0.0);
    assert_eq!(out.rows[0].formula_df, 1.0);
    assert_eq!(out.rows[0].formula_se, 0.0);
    for w in out.rows.windows(2) {
        assert!(w[0].formula_df <= w[1].formula_df);
    }
    assert_eq!(out, df_compare(&config, &cfg()).unwrap());
}

#[test]
fn design_depends_on_seed_only() {
    let (a, _) = simulation_design(Model::Convex, 5, 3, 1).unwrap();
    let (b, _) = simulation_design(Model::Convex, 5, 3, 1).unwrap();
    let (c, t) = simulation_design(Model::Isotonic, 5, 3, 2).unwrap();
    assert_eq!(a, b);
    assert!(a.iter().all(|v| (-1.0..1.0).contains(v)));
    assert!(c.iter().all(|v| (0.0..1.0).contains(v)));
    assert_relative_eq!(t[0], c.row(0).norm_squared());
}
