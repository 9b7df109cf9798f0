use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use polydf::io::{read_edges, read_fit};
use polydf::problems::{fit_formulation, Formulation};
use polydf::{BoundedIsotonicSystem, FitResult, SolverConfig};
use serde_json::Value;
use tempfile::TempDir;

fn polydf(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_polydf"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) -> Output {
    let out = polydf(args);
    assert!(
        out.status.success(),
        "polydf {args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn write(dir: &Path, name: &str, body: &str) -> PathBuf {
    let p = dir.join(name);
    fs::write(&p, body).unwrap();
    p
}

fn json(path: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

const CHAIN: &str = "x,y\n1,3\n2,1\n3,2\n4,5\n5,4\n6,6\n";

fn identity_design(n: usize, y: &[f64]) -> String {
    let mut out = String::from("y");
    for j in 0..n {
        out.push_str(&format!(",x{j}"));
    }
    out.push('\n');
    for (i, v) in y.iter().enumerate() {
        out.push_str(&v.to_string());
        for j in 0..n {
            out.push_str(if i == j { ",1" } else { ",0" });
        }
        out.push('\n');
    }
    out
}

#[test]
fn monotone_chain_fit_is_nondecreasing() {
    let dir = TempDir::new().unwrap();
    let data = write(dir.path(), "d.csv", CHAIN);
    let out = dir.path().join("out");
    ok(&["fit", "--data", s(&data), "--problem", "isotonic", "--out", s(&out)]);
    let fit = read_fit(&out.join("fit.csv")).unwrap();
    assert!(fit.theta.as_slice().windows(2).all(|w| w[0] <= w[1] + 1e-12));
    assert!((fit.theta[0] - 2.0).abs() < 1e-12);
    let run = json(&out.join("run.json"));
    assert_eq!(run["schema_version"], 1);
    assert_eq!(run["status"], "optimal");
    assert!(out.join("active_set.csv").exists());
}

#[test]
fn zero_bound_gives_the_mean() {
    let dir = TempDir::new().unwrap();
    let data = write(dir.path(), "d.csv", CHAIN);
    let out = dir.path().join("out");
    ok(&["fit", "--data", s(&data), "--problem", "bounded_isotonic:0", "--out", s(&out)]);
    let fit = read_fit(&out.join("fit.csv")).unwrap();
    let mean = fit.y.mean();
    assert!(fit.theta.iter().all(|t| (t - mean).abs() < 1e-10));
}

#[test]
fn lasso_at_zero_penalty_is_least_squares() {
    let dir = TempDir::new().unwrap();
    let body = "y,a,b\n1.0,1,0.5\n2.5,2,-1\n2.0,3,0.25\n4.2,4,2\n";
    let data = write(dir.path(), "d.csv", body);
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    ok(&["fit", "--data", s(&data), "--problem", "lasso:0", "--out", s(&a)]);
    ok(&["fit", "--data", s(&data), "--problem", "linear_regression", "--out", s(&b)]);
    let la = read_fit(&a.join("fit.csv")).unwrap();
    let lb = read_fit(&b.join("fit.csv")).unwrap();
    assert!((&la.theta - &lb.theta).amax() < 1e-8);
}

#[test]
fn df_reports_exact_values() {
    let dir = TempDir::new().unwrap();
    let y = [0.3, -1.2, 0.8, 2.0, -0.5, 1.1];
    let data = write(dir.path(), "id.csv", &identity_design(6, &y));
    let out = dir.path().join("ridge");
    ok(&["df", "--data", s(&data), "--problem", "ridge:1", "--finite-difference", "--out", s(&out)]);
    let df = json(&out.join("df.json"));
    assert!((df["formula"]["value"].as_f64().unwrap() - 3.0).abs() < 1e-10);
    assert!((df["closed_form"].as_f64().unwrap() - 3.0).abs() < 1e-12);
    assert!((df["finite_difference"]["value"].as_f64().unwrap() - 3.0).abs() < 1e-4);

    let body = "y,a,b,c\n1,1,0,1\n2,0,1,1\n0.5,1,1,2\n3,2,0,2\n-1,0,2,2\n";
    let data = write(dir.path(), "lr.csv", body);
    let out = dir.path().join("lr");
    ok(&["df", "--data", s(&data), "--problem", "linear_regression", "--out", s(&out)]);
    assert_eq!(json(&out.join("df.json"))["formula"]["value"].as_f64(), Some(2.0));

    let data = write(dir.path(), "chain.csv", CHAIN);
    let out = dir.path().join("iso");
    ok(&["df", "--data", s(&data), "--problem", "isotonic", "--out", s(&out)]);
    let fit_dir = dir.path().join("iso_fit");
    ok(&["fit", "--data", s(&data), "--problem", "isotonic", "--out", s(&fit_dir)]);
    let theta = read_fit(&fit_dir.join("fit.csv")).unwrap().theta;
    let mut levels: Vec<f64> = theta.iter().copied().collect();
    levels.dedup();
    let value = json(&out.join("df.json"))["formula"]["value"].as_f64().unwrap();
    assert_eq!(value, levels.len() as f64);
}

#[test]
fn sure_tune_on_a_single_value_grid() {
    let dir = TempDir::new().unwrap();
    let data = write(dir.path(), "d.csv", CHAIN);
    let out = dir.path().join("out");
    ok(&[
        "sure-tune", "--data", s(&data), "--problem", "bounded_isotonic", "--lambda-grid", "1.5",
        "--sigma", "1", "--out", s(&out),
    ]);
    let summary = json(&out.join("summary.json"));
    assert_eq!(summary["lambda_hat"].as_f64(), Some(1.5));
    let curve = fs::read_to_string(out.join("sure_curve.csv")).unwrap();
    assert_eq!(curve.lines().count(), 2);
}

#[test]
fn runs_are_byte_identical() {
    let dir = TempDir::new().unwrap();
    let outs: Vec<PathBuf> = (0..2).map(|k| dir.path().join(format!("run{k}"))).collect();
    for o in &outs {
        ok(&[
            "experiment", "iso-ratio", "--n", "30", "--d", "2", "--reps", "4", "--seed", "11",
            "--grid-points", "6", "--bit-repro", "--out", s(o),
        ]);
    }
    for file in ["ratios.csv", "sure_long.csv", "summary.json"] {
        let a = fs::read(outs[0].join(file)).unwrap();
        let b = fs::read(outs[1].join(file)).unwrap();
        assert_eq!(a, b, "{file} differs");
    }
}

#[test]
fn fit_table_round_trips_against_the_constraints() {
    let dir = TempDir::new().unwrap();
    let body = "y,a,b\n0.9,0,0\n0.2,1,0\n1.7,0,1\n2.4,1,1\n1.1,0.5,0.5\n";
    let data = write(dir.path(), "d.csv", body);
    let edges = write(dir.path(), "e.csv", "lower,upper\n0,1\n0,2\n1,3\n2,3\n0,4\n4,3\n");
    let out = dir.path().join("out");
    ok(&[
        "fit", "--data", s(&data), "--edges", s(&edges), "--problem", "bounded_isotonic:0.8", "--out",
        s(&out),
    ]);
    let cols = read_fit(&out.join("fit.csv")).unwrap();
    let order = read_edges(&edges, 5).unwrap();
    let f = Formulation::Isotonic(BoundedIsotonicSystem::new(order, 0.8).unwrap());
    let reference = fit_formulation(&f, &cols.y, &SolverConfig::default(), None).unwrap();
    let reread = FitResult {
        theta_hat: cols.theta.clone(),
        ..reference
    };
    let r = f.residuals(&reread).unwrap();
    assert!(r.max() <= 1e-9);
    assert!((cols.theta.max() - cols.theta.min()) <= 0.8 + 1e-12);
}

#[test]
fn configuration_errors_exit_with_two() {
    let dir = TempDir::new().unwrap();
    let out = dir.path().join("out");
    let missing = dir.path().join("missing.csv");
    let r = polydf(&["fit", "--data", s(&missing), "--problem", "isotonic", "--out", s(&out)]);
    assert_eq!(r.status.code(), Some(2));
    let data = write(dir.path(), "d.csv", CHAIN);
    let r = polydf(&["fit", "--data", s(&data), "--problem", "spline", "--out", s(&out)]);
    assert_eq!(r.status.code(), Some(2));
    let r = polydf(&["df", "--data", s(&data), "--problem", "isotonic", "--sigma", "-1", "--out", s(&out)]);
    assert_eq!(r.status.code(), Some(2));
    let cfg = write(dir.path(), "c.json", r#"{"problem": {"kind": "lasso", "tau": 1}, "colour": 3}"#);
    let r = polydf(&["fit", "--config", s(&cfg), "--out", s(&out)]);
    assert_eq!(r.status.code(), Some(2));
}

#[test]
fn iteration_limit_exits_with_five() {
    let dir = TempDir::new().unwrap();
    let body = "y,a,b\n0.9,0,0\n0.2,1,0\n1.7,0,1\n2.4,1,1\n1.1,0.5,0.5\n0.3,0.2,0.9\n";
    write(dir.path(), "d.csv", body);
    let cfg = write(
        dir.path(),
        "c.json",
        r#"{"problem": {"kind": "multivariate_convex"}, "data": "d.csv", "solver": {"max_iterations": 1}}"#,
    );
    let out = dir.path().join("out");
    let r = polydf(&["fit", "--config", s(&cfg), "--out", s(&out)]);
    assert_eq!(r.status.code(), Some(5), "{}", String::from_utf8_lossy(&r.stderr));
}
