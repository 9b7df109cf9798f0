use std::fs;

use anyhow::Context;
use polydf::dof::{self, FormulationEstimator};
use polydf::io;
use polydf::qp::KktResiduals;
use polydf::sure::{self, DfCompareConfig, Model, SimulationConfig};
use polydf::{DivergenceReport, ProblemKind, ProblemSpec, SolverConfig, Status};
use serde::Serialize;

use crate::args::{Command, Study};
use crate::config::{ConfigError, Resolved};

const VERSION: &str = env!("CARGO_PKG_VERSION");

pub fn run(command: Command) -> anyhow::Result<()> {
    match command {
        Command::Fit(common) => {
            let r = Resolved::from_common(&common)?;
            setup(&r)?;
            fit(&r)
        }
        Command::Df { common, finite_difference } => {
            let mut r = Resolved::from_common(&common)?;
            r.finite_difference |= finite_difference;
            setup(&r)?;
            df(&r)
        }
        Command::SureTune { common, grid_points } => {
            let mut r = Resolved::from_common(&common)?;
            if grid_points.is_some() {
                r.experiment.grid_points = grid_points;
            }
            setup(&r)?;
            sure_tune(&r)
        }
        Command::Experiment {
            which,
            common,
            n,
            d,
            grid_points,
        } => {
            let mut r = Resolved::from_common(&common)?;
            let e = &mut r.experiment;
            e.study = which.or(e.study);
            e.n = n.or(e.n);
            e.d = d.or(e.d);
            e.grid_points = grid_points.or(e.grid_points);
            setup(&r)?;
            experiment(&r)
        }
    }
}

fn setup(r: &Resolved) -> anyhow::Result<()> {
    if let Some(t) = r.threads {
        // Fails only if a pool already exists, which cannot happen here.
        let _ = rayon::ThreadPoolBuilder::new().num_threads(t).build_global();
    }
    fs::create_dir_all(&r.out).with_context(|| format!("creating {}", r.out.display()))?;
    Ok(())
}

fn load_spec(r: &Resolved) -> anyhow::Result<ProblemSpec> {
    let kind = r.problem_required()?;
    let data = io::read_dataset(r.data_required()?, r.sigma)?;
    let mut spec = ProblemSpec::new(kind, data);
    if let Some(p) = &r.edges {
        let order = io::read_edges(p, spec.data.n())?;
        spec = spec.with_order(order);
    }
    if let Some(p) = &r.penalty {
        spec = spec.with_penalty(io::read_matrix(p)?);
    }
    Ok(spec)
}

#[derive(Serialize)]
struct RunInfo<'a> {
    command: &'static str,
    version: &'static str,
    problem: &'a ProblemKind,
    n: usize,
    rows: usize,
    status: Status,
    objective: f64,
    iterations: usize,
    active_rows: usize,
    kkt: KktResiduals,
    solver: &'a SolverConfig,
    seed: Option<u64>,
    bit_repro: bool,
}

fn fit(r: &Resolved) -> anyhow::Result<()> {
    let spec = load_spec(r)?;
    let (formulation, fit) = spec.fit(&r.solver)?;
    let y = &spec.data.y;
    io::write_fit(&r.out.join("fit.csv"), y, &fit)?;
    if let Some(xi) = fit.xi_hat.as_ref().filter(|_| !io::xi_in_fit_table(y.len(), &fit)) {
        io::write_coefficients(&r.out.join("coefficients.csv"), xi)?;
    }
    let residuals = formulation.residuals(&fit)?;
    let labels = formulation.labels();
    io::write_active_set(&r.out.join("active_set.csv"), &fit, &residuals, labels.as_deref())?;
    io::write_json(
        &r.out.join("run.json"),
        &RunInfo {
            command: "fit",
            version: VERSION,
            problem: &spec.kind,
            n: y.len(),
            rows: residuals.len(),
            status: fit.status,
            objective: fit.objective,
            iterations: fit.iterations,
            active_rows: fit.active.len(),
            kkt: fit.kkt,
            solver: &r.solver,
            seed: r.seed,
            bit_repro: r.bit_repro,
        },
    )?;
    match fit.status {
        Status::Optimal => Ok(()),
        Status::Infeasible => Err(polydf::Error::Infeasible.into()),
        Status::Unbounded => Err(polydf::Error::Unbounded.into()),
        Status::MaxIter => Err(polydf::Error::NotConverged {
            iterations: fit.iterations,
        }
        .into()),
    }
}

#[derive(Serialize)]
struct FiniteDifferenceOut {
    value: f64,
    step: f64,
    retries: usize,
}

#[derive(Serialize)]
struct MonteCarloOut {
    value: f64,
    std_error: Option<f64>,
    replications: usize,
    sigma: f64,
    /// Noise is added around the fitted values.
    center: &'static str,
}

#[derive(Serialize)]
struct DfInfo<'a> {
    command: &'static str,
    version: &'static str,
    problem: &'a ProblemKind,
    n: usize,
    formula: DivergenceReport,
    closed_form: Option<f64>,
    finite_difference: Option<FiniteDifferenceOut>,
    monte_carlo: Option<MonteCarloOut>,
    flagged: bool,
    seed: Option<u64>,
    bit_repro: bool,
}

fn df(r: &Resolved) -> anyhow::Result<()> {
    let spec = load_spec(r)?;
    let (formulation, fit) = spec.fit(&r.solver)?;
    if fit.status != Status::Optimal {
        return Err(polydf::Error::NotConverged {
            iterations: fit.iterations,
        }
        .into());
    }
    let formula = dof::divergence(&formulation, &fit)?;
    let closed_form = match spec.kind {
        ProblemKind::Ridge { lambda } if lambda > 0.0 => Some(dof::closed_form_ridge(&spec.data.x, lambda)?),
        _ => None,
    };
    let est = FormulationEstimator {
        formulation: &formulation,
        cfg: &r.solver,
    };
    let finite_difference = if r.finite_difference {
        let fd = dof::finite_difference_divergence(&est, &spec.data.y, None, r.seed.unwrap_or(0))?;
        Some(FiniteDifferenceOut {
            value: fd.value,
            step: fd.step,
            retries: fd.retries,
        })
    } else {
        None
    };
    let monte_carlo = match r.reps {
        Some(reps) => {
            let seed = r.seed_required("Monte-Carlo degrees of freedom")?;
            let sigma = spec.data.sigma_required()?;
            let mc = dof::monte_carlo_df(&est, &fit.theta_hat, sigma, reps, seed)?;
            Some(MonteCarloOut {
                value: mc.value,
                std_error: mc.std_error,
                replications: mc.replications,
                sigma,
                center: "fit",
            })
        }
        None => None,
    };
    let flagged = formula.flagged();
    io::write_json(
        &r.out.join("df.json"),
        &DfInfo {
            command: "df",
            version: VERSION,
            problem: &spec.kind,
            n: spec.data.n(),
            formula,
            closed_form,
            finite_difference,
            monte_carlo,
            flagged,
            seed: r.seed,
            bit_repro: r.bit_repro,
        },
    )?;
    Ok(())
}

#[derive(Serialize)]
struct TuneSummary<'a> {
    command: &'static str,
    version: &'static str,
    problem: &'a ProblemKind,
    n: usize,
    sigma: f64,
    grid_points: usize,
    lambda_hat: f64,
    sure_at_hat: f64,
    divergence_at_hat: f64,
    flagged_points: usize,
    max_kkt: f64,
    bit_repro: bool,
}

fn sure_tune(r: &Resolved) -> anyhow::Result<()> {
    let spec = load_spec(r)?;
    let sigma = spec.data.sigma_required().map_err(|_| ConfigError("sure-tune needs --sigma".into()))?;
    let grid = match &r.grid {
        Some(g) => g.clone(),
        None => sure::default_grid(
            &spec,
            r.experiment.grid_points.unwrap_or(sure::DEFAULT_GRID_POINTS),
            &r.solver,
        )?,
    };
    let curve = sure::tune(&spec, &grid, sigma, &r.solver)?;
    io::write_records(&r.out.join("sure_curve.csv"), &curve.records)?;
    let hat = &curve.records[curve.hat_index()];
    io::write_json(
        &r.out.join("summary.json"),
        &TuneSummary {
            command: "sure-tune",
            version: VERSION,
            problem: &spec.kind,
            n: curve.n,
            sigma,
            grid_points: grid.len(),
            lambda_hat: curve.lambda_hat,
            sure_at_hat: hat.sure,
            divergence_at_hat: hat.divergence,
            flagged_points: curve.records.iter().filter(|r| r.flagged).count(),
            max_kkt: curve.max_kkt(),
            bit_repro: r.bit_repro,
        },
    )?;
    Ok(())
}

#[derive(Serialize)]
struct LongRecord {
    replication: usize,
    lambda: f64,
    rss: f64,
    divergence: f64,
    sure: f64,
    loss: Option<f64>,
    flagged: bool,
}

#[derive(Serialize)]
struct ExperimentSummary<'a, T: Serialize, S: Serialize> {
    command: &'static str,
    study: Study,
    version: &'static str,
    config: &'a T,
    results: S,
    bit_repro: bool,
}

fn experiment(r: &Resolved) -> anyhow::Result<()> {
    let study = r
        .experiment
        .study
        .ok_or_else(|| ConfigError("experiment needs a study: df-compare, iso-ratio or cvx-ratio".into()))?;
    let seed = r.seed_required("experiment")?;
    let reps = r.reps_required("experiment")?;
    let n = r.experiment.n.unwrap_or(100);
    let d = r.experiment.d.unwrap_or(2);
    match study {
        Study::DfCompare => {
            let cfg = DfCompareConfig {
                n,
                d,
                sigma: r.sigma.unwrap_or(1.0),
                reps,
                seed,
                grid: r.grid.clone(),
                grid_points: r.experiment.grid_points.unwrap_or(15),
            };
            let out = sure::df_compare(&cfg, &r.solver)?;
            io::write_records(&r.out.join("df_compare.csv"), &out.rows)?;
            #[derive(Serialize)]
            struct Results {
                max_kkt: f64,
                max_abs_z: f64,
                mean_abs_relative_deviation: f64,
            }
            let z = out
                .rows
                .iter()
                .filter_map(|row| row.mc_se.filter(|s| *s > 0.0).map(|s| (row.formula_df - row.mc_df).abs() / s))
                .fold(0.0, f64::max);
            let rel = out
                .rows
                .iter()
                .map(|row| (row.formula_df - row.mc_df).abs() / row.mc_df.abs().max(f64::MIN_POSITIVE))
                .sum::<f64>()
                / out.rows.len() as f64;
            io::write_json(
                &r.out.join("summary.json"),
                &ExperimentSummary {
                    command: "experiment",
                    study,
                    version: VERSION,
                    config: &cfg,
                    results: Results {
                        max_kkt: out.max_kkt,
                        max_abs_z: z,
                        mean_abs_relative_deviation: rel,
                    },
                    bit_repro: r.bit_repro,
                },
            )?;
        }
        Study::IsoRatio | Study::CvxRatio => {
            let (model, sigma, points) = match study {
                Study::IsoRatio => (Model::Isotonic, r.sigma.unwrap_or(1.0), sure::DEFAULT_GRID_POINTS),
                _ => (Model::Convex, r.sigma.unwrap_or(0.5), 13),
            };
            let cfg = SimulationConfig {
                model,
                n,
                d,
                sigma,
                reps,
                seed,
                grid: r.grid.clone(),
                grid_points: r.experiment.grid_points.unwrap_or(points),
            };
            let out = sure::ratio_experiment(&cfg, &r.solver)?;
            io::write_records(&r.out.join("ratios.csv"), &out.rows)?;
            let long: Vec<LongRecord> = out
                .curves
                .iter()
                .enumerate()
                .flat_map(|(rep, c)| {
                    c.records.iter().map(move |rec| LongRecord {
                        replication: rep,
                        lambda: rec.lambda,
                        rss: rec.rss,
                        divergence: rec.divergence,
                        sure: rec.sure,
                        loss: rec.loss,
                        flagged: rec.flagged,
                    })
                })
                .collect();
            io::write_records(&r.out.join("sure_long.csv"), &long)?;
            #[derive(Serialize)]
            struct Results {
                sure_ratio: sure::Summary,
                reference_ratio: sure::Summary,
                max_kkt: f64,
            }
            io::write_json(
                &r.out.join("summary.json"),
                &ExperimentSummary {
                    command: "experiment",
                    study,
                    version: VERSION,
                    config: &cfg,
                    results: Results {
                        sure_ratio: out.sure_summary,
                        reference_ratio: out.reference_summary,
                        max_kkt: out.max_kkt,
                    },
                    bit_repro: r.bit_repro,
                },
            )?;
        }
    }
    Ok(())
}

/// Process exit code for an error: 2 configuration, 3 infeasible,
/// 4 unbounded, 5 non-convergence.
pub fn exit_code(e: &anyhow::Error) -> u8 {
    if e.downcast_ref::<ConfigError>().is_some() {
        return 2;
    }
    e.downcast_ref::<polydf::Error>().map_or(2, library_code)
}

fn library_code(e: &polydf::Error) -> u8 {
    use polydf::Error as E;
    match e {
        E::Infeasible => 3,
        E::Unbounded => 4,
        E::NotConverged { .. } | E::Factorization(_) | E::UnstableActiveSet(_) => 5,
        E::GridPoint { source, .. } => library_code(source),
        _ => 2,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exit_codes() {
        let code = |e: polydf::Error| exit_code(&anyhow::Error::from(e));
        assert_eq!(code(polydf::Error::Infeasible), 3);
        assert_eq!(code(polydf::Error::Unbounded), 4);
        assert_eq!(code(polydf::Error::NotConverged { iterations: 3 }), 5);
        assert_eq!(
            code(polydf::Error::GridPoint {
                index: 0,
                lambda: 1.0,
                source: Box::new(polydf::Error::Infeasible)
            }),
            3
        );
        assert_eq!(code(polydf::Error::InvalidInput("x".into())), 2);
        assert_eq!(exit_code(&ConfigError("x".into()).into()), 2);
        assert_eq!(exit_code(&anyhow::anyhow!("other")), 2);
    }
}
