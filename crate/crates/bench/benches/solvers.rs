use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;

use polydf::isotonic::{fit_bounded, fit_isotonic};
use polydf::problems::build_penalized_convex;
use polydf::qp::{project, solve_lifted, Method};
use polydf::rng::{noisy_response, standard_normal_vector};
use polydf::sure::{simulation_design, Model};
use polydf::{BoundedIsotonicSystem, ConstraintSystem, PartialOrder, SolverConfig};

fn config(method: Method) -> SolverConfig {
    SolverConfig {
        method,
        ..SolverConfig::default()
    }
}

fn methods(c: &mut Criterion) {
    let mut rng = ChaCha20Rng::seed_from_u64(1);
    let n = 40;
    let a = DMatrix::from_fn(120, n, |_, _| rng.random::<f64>() - 0.5);
    let b = DVector::from_fn(120, |_, _| rng.random::<f64>());
    let sys = ConstraintSystem::new(a, b).unwrap();
    let y = 3.0 * standard_normal_vector(&mut rng, n);
    let mut group = c.benchmark_group("projection");
    for method in [Method::ActiveSet, Method::OperatorSplittingWithPolish] {
        group.bench_with_input(BenchmarkId::new("random_polyhedron", format!("{method:?}")), &method, |bch, &m| {
            let cfg = config(m);
            bch.iter(|| project(&sys, &y, &cfg).unwrap())
        });
    }
    group.finish();
}

fn isotonic(c: &mut Criterion) {
    let cfg = SolverConfig::default();
    let mut group = c.benchmark_group("bounded_isotonic");
    for &n in &[100, 200] {
        let (x, truth) = simulation_design(Model::Isotonic, n, 2, 3).unwrap();
        let order = PartialOrder::from_points(&x).unwrap();
        let y = noisy_response(&truth, 1.0, 3, 0);
        let (base, _) = fit_isotonic(&order, &y, &cfg).unwrap();
        let lambda = 0.5 * (base.theta_hat.max() - base.theta_hat.min());
        let sys = BoundedIsotonicSystem::new(order, lambda).unwrap();
        group.bench_with_input(BenchmarkId::new("threshold", n), &n, |bch, _| {
            bch.iter(|| fit_bounded(&sys, &y, &cfg).unwrap())
        });
        let poly = sys.to_constraint_system();
        group.bench_with_input(BenchmarkId::new("direct_projection", n), &n, |bch, _| {
            bch.iter(|| project(&poly, &y, &cfg).unwrap())
        });
    }
    group.finish();
}

fn convex(c: &mut Criterion) {
    let mut group = c.benchmark_group("penalized_convex");
    group.sample_size(10);
    for &d in &[2, 4] {
        let (x, truth) = simulation_design(Model::Convex, 50, d, 5).unwrap();
        let y = noisy_response(&truth, 0.5, 5, 0);
        let sys = build_penalized_convex(&x, 0.1).unwrap();
        for method in [Method::ActiveSet, Method::OperatorSplittingWithPolish] {
            let cfg = config(method);
            group.bench_function(BenchmarkId::new(format!("{method:?}"), d), |bch| {
                bch.iter(|| solve_lifted(&sys, &y, &cfg).unwrap())
            });
        }
    }
    group.finish();
}

criterion_group!(benches, methods, isotonic, convex);
criterion_main!(benches);
