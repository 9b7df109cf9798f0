//! The two simulation studies: Monte-Carlo versus formula degrees of freedom
//! for bounded isotonic regression, and SURE-tuned versus reference losses.
//!
//! Design points are drawn once per run from ChaCha20 keyed by the master
//! seed on stream 1; replication `r` draws its noise from stream 0 keyed by
//! `seed ⊕ r` (see [`crate::rng`]). The regression function is `‖x‖²`.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};

use super::{curve_from_path, default_grid, fit_path, isotonic_path, linspace, squared_loss, SureCurve};
use crate::dof::df_from_samples;
use crate::error::{Error, Result};
use crate::isotonic::PartialOrder;
use crate::problems::{fit_formulation, Dataset, ProblemKind, ProblemSpec};
use crate::qp::SolverConfig;
use crate::rng::{check_reps, noisy_response, replicate};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Model {
    /// Bounded isotonic regression on `Unif[0,1]^d` design points.
    Isotonic,
    /// Penalized convex regression on `Unif[−1,1]^d` design points.
    Convex,
}

/// Fixed design and `θ*_i = ‖x_i‖²`.
pub fn simulation_design(model: Model, n: usize, d: usize, seed: u64) -> Result<(DMatrix<f64>, DVector<f64>)> {
    if n < 2 || d == 0 {
        return Err(Error::InvalidInput(format!("need n >= 2 and d >= 1, got n = {n}, d = {d}")));
    }
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    rng.set_stream(1);
    let (lo, hi) = match model {
        Model::Isotonic => (0.0, 1.0),
        Model::Convex => (-1.0, 1.0),
    };
    let x = DMatrix::from_fn(n, d, |_, _| rng.random_range(lo..hi));
    let truth = DVector::from_fn(n, |i, _| x.row(i).norm_squared());
    Ok((x, truth))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulationConfig {
    pub model: Model,
    pub n: usize,
    pub d: usize,
    pub sigma: f64,
    pub reps: usize,
    pub seed: u64,
    /// Fixed grid for every replication; otherwise each replication uses
    /// the default grid at its own response.
    pub grid: Option<Vec<f64>>,
    pub grid_points: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RatioRow {
    pub replication: usize,
    pub lambda_hat: f64,
    pub lambda_star: f64,
    pub loss_hat: f64,
    pub loss_star: f64,
    /// `L(∞)` for isotonic, `L(0)` for convex.
    pub loss_reference: f64,
    pub sure_ratio: f64,
    pub reference_ratio: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub count: usize,
    pub mean: f64,
    pub sd: f64,
    pub min: f64,
    pub q25: f64,
    pub median: f64,
    pub q75: f64,
    pub max: f64,
}

/// Mean, sample standard deviation and linearly interpolated quantiles.
pub fn summarize(values: &[f64]) -> Result<Summary> {
    if values.is_empty() {
        return Err(Error::InvalidInput("nothing to summarize".into()));
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let k = v.len();
    let mean = v.iter().sum::<f64>() / k as f64;
    let sd = if k > 1 {
        (v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (k - 1) as f64).sqrt()
    } else {
        0.0
    };
    let q = |p: f64| {
        let h = p * (k - 1) as f64;
        let lo = h.floor() as usize;
        let hi = h.ceil() as usize;
        v[lo] + (h - lo as f64) * (v[hi] - v[lo])
    };
    Ok(Summary {
        count: k,
        mean,
        sd,
        min: v[0],
        q25: q(0.25),
        median: q(0.5),
        q75: q(0.75),
        max: v[k - 1],
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RatioOutcome {
    pub model: Model,
    pub rows: Vec<RatioRow>,
    pub curves: Vec<SureCurve>,
    pub sure_summary: Summary,
    pub reference_summary: Summary,
    /// Largest KKT residual over every fit of the run.
    pub max_kkt: f64,
}

fn base_spec(model: Model, x: DMatrix<f64>, truth: &DVector<f64>, sigma: f64) -> Result<ProblemSpec> {
    let data = Dataset::new(x, truth.clone(), Some(sigma))?;
    Ok(match model {
        Model::Isotonic => {
            let order = PartialOrder::from_points(&data.x)?;
            ProblemSpec::new(ProblemKind::BoundedIsotonic { lambda: f64::INFINITY }, data).with_order(order)
        }
        Model::Convex => ProblemSpec::new(ProblemKind::PenalizedConvex { lambda: 0.0 }, data),
    })
}

/// Per-replication `L(λ̂)/L(λ*)` and the reference ratio.
pub fn ratio_experiment(cfg: &SimulationConfig, solver: &SolverConfig) -> Result<RatioOutcome> {
    check_reps(cfg.reps, 1)?;
    let (x, truth) = simulation_design(cfg.model, cfg.n, cfg.d, cfg.seed)?;
    let spec = base_spec(cfg.model, x, &truth, cfg.sigma)?;
    let order = spec.order.clone();
    let results = replicate(cfg.reps, cfg.seed, |r, _| {
        let y = noisy_response(&truth, cfg.sigma, cfg.seed, r);
        let spec = spec.with_response(y.clone())?;
        let grid = match &cfg.grid {
            Some(g) => g.clone(),
            None => default_grid(&spec, cfg.grid_points, solver)?,
        };
        let (path, reference, reference_kkt) = match cfg.model {
            Model::Isotonic => {
                let (base, path) = isotonic_path(order.as_ref().unwrap(), &grid, &y, solver)?;
                (path, squared_loss(&base.theta_hat, &truth)?, base.kkt.max())
            }
            Model::Convex => {
                let path = fit_path(&spec, &grid, &y, solver)?;
                if grid[0] == 0.0 {
                    let loss = squared_loss(&path[0].fit.theta_hat, &truth)?;
                    let kkt = path[0].fit.kkt.max();
                    (path, loss, kkt)
                } else {
                    let f = spec.with_tuning(0.0)?.formulation()?;
                    let fit = fit_formulation(&f, &y, solver, None)?;
                    (path, squared_loss(&fit.theta_hat, &truth)?, fit.kkt.max())
                }
            }
        };
        let curve = curve_from_path(&y, &path, cfg.sigma, Some(&truth))?;
        let hat = &curve.records[curve.hat_index()];
        let star = &curve.records[curve.star_index().unwrap()];
        let (loss_hat, loss_star) = (hat.loss.unwrap(), star.loss.unwrap());
        let row = RatioRow {
            replication: r,
            lambda_hat: hat.lambda,
            lambda_star: star.lambda,
            loss_hat,
            loss_star,
            loss_reference: reference,
            sure_ratio: loss_hat / loss_star,
            reference_ratio: reference / loss_star,
        };
        Ok((row, curve, reference_kkt))
    })?;
    let max_kkt = results
        .iter()
        .map(|(_, c, k)| c.max_kkt().max(*k))
        .fold(0.0, f64::max);
    let rows: Vec<RatioRow> = results.iter().map(|(r, _, _)| *r).collect();
    let sure_summary = summarize(&rows.iter().map(|r| r.sure_ratio).collect::<Vec<_>>())?;
    let reference_summary = summarize(&rows.iter().map(|r| r.reference_ratio).collect::<Vec<_>>())?;
    Ok(RatioOutcome {
        model: cfg.model,
        rows,
        curves: results.into_iter().map(|(_, c, _)| c).collect(),
        sure_summary,
        reference_summary,
        max_kkt,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RiskRow {
    pub lambda: f64,
    pub mean_sure: f64,
    pub mean_loss: f64,
    pub se_sure: f64,
    pub se_loss: f64,
    /// `√(se_sure² + se_loss²)`.
    pub combined_se: f64,
}

/// Per-λ means of `U` and `L` over curves that share one grid.
pub fn risk_summary(curves: &[SureCurve]) -> Result<Vec<RiskRow>> {
    check_reps(curves.len(), 2)?;
    let grid = curves[0].grid();
    if curves.iter().any(|c| c.grid() != grid) {
        return Err(Error::InvalidInput("curves were computed on different grids".into()));
    }
    let k = curves.len() as f64;
    let mean_se = |v: Vec<f64>| {
        let m = v.iter().sum::<f64>() / k;
        let var = v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (k - 1.0);
        (m, (var / k).sqrt())
    };
    grid.iter()
        .enumerate()
        .map(|(i, &lambda)| {
            let (mean_sure, se_sure) = mean_se(curves.iter().map(|c| c.records[i].sure).collect());
            let losses = curves
                .iter()
                .map(|c| c.records[i].loss.ok_or_else(|| Error::InvalidInput("curve without losses".into())))
                .collect::<Result<Vec<_>>>()?;
            let (mean_loss, se_loss) = mean_se(losses);
            Ok(RiskRow {
                lambda,
                mean_sure,
                mean_loss,
                se_sure,
                se_loss,
                combined_se: se_sure.hypot(se_loss),
            })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DfCompareConfig {
    pub n: usize,
    pub d: usize,
    pub sigma: f64,
    pub reps: usize,
    pub seed: u64,
    pub grid: Option<Vec<f64>>,
    pub grid_points: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DfCompareRow {
    pub lambda: f64,
    /// Mean over replications of the component count.
    pub formula_df: f64,
    pub formula_se: f64,
    pub mc_df: f64,
    pub mc_se: Option<f64>,
    /// Replications whose divergence carried a degeneracy flag.
    pub flagged: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DfCompare {
    pub rows: Vec<DfCompareRow>,
    pub max_kkt: f64,
}

/// Formula and Monte-Carlo degrees of freedom of bounded isotonic
/// regression on one grid, with common noise draws across the grid.
///
/// The default grid is `points` equally spaced values in
/// `[0, range(θ*) + 2σ]`.
pub fn df_compare(cfg: &DfCompareConfig, solver: &SolverConfig) -> Result<DfCompare> {
    check_reps(cfg.reps, 2)?;
    let (x, truth) = simulation_design(Model::Isotonic, cfg.n, cfg.d, cfg.seed)?;
    let order = PartialOrder::from_points(&x)?;
    let grid = match &cfg.grid {
        Some(g) => g.clone(),
        None => {
            let range = truth.max() - truth.min();
            linspace(0.0, range + 2.0 * cfg.sigma, cfg.grid_points)
        }
    };
    super::validate_grid(&grid)?;
    let samples = replicate(cfg.reps, cfg.seed, |r, _| {
        let y = noisy_response(&truth, cfg.sigma, cfg.seed, r);
        let (_, path) = isotonic_path(&order, &grid, &y, solver)?;
        Ok((y, path))
    })?;
    let ys: Vec<DVector<f64>> = samples.iter().map(|(y, _)| y.clone()).collect();
    let max_kkt = samples
        .iter()
        .flat_map(|(_, p)| p.iter().map(|q| q.fit.kkt.max()))
        .fold(0.0, f64::max);
    let rows = grid
        .iter()
        .enumerate()
        .map(|(i, &lambda)| {
            let thetas: Vec<DVector<f64>> = samples.iter().map(|(_, p)| p[i].fit.theta_hat.clone()).collect();
            let mc = df_from_samples(&ys, &thetas, cfg.sigma)?;
            let divs: Vec<f64> = samples.iter().map(|(_, p)| p[i].divergence.value).collect();
            let s = summarize(&divs)?;
            Ok(DfCompareRow {
                lambda,
                formula_df: s.mean,
                formula_se: s.sd / (s.count as f64).sqrt(),
                mc_df: mc.value,
                mc_se: mc.std_error,
                flagged: samples.iter().filter(|(_, p)| p[i].divergence.flagged()).count(),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(DfCompare { rows, max_kkt })
}
