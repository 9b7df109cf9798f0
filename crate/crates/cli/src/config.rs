use std::fs;
use std::path::{Path, PathBuf};

use polydf::{ProblemKind, SolverConfig};
use serde::{Deserialize, Serialize};

use crate::args::{Common, Study};

/// A configuration problem; exits with code 2.
#[derive(Debug)]
pub struct ConfigError(pub String);

impl std::fmt::Display for ConfigError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "configuration error: {}", self.0)
    }
}

impl std::error::Error for ConfigError {}

fn bad(msg: impl Into<String>) -> anyhow::Error {
    ConfigError(msg.into()).into()
}

#[derive(Debug, Clone, PartialEq, Deserialize, Serialize)]
#[serde(untagged)]
pub enum GridSpec {
    Values(Vec<f64>),
    Text(String),
}

#[derive(Debug, Clone, Default, PartialEq, Deserialize, Serialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentSpec {
    pub study: Option<Study>,
    pub n: Option<usize>,
    pub d: Option<usize>,
    pub grid_points: Option<usize>,
}

/// Contents of a `--config` file. Relative paths are taken relative to the
/// file's directory.
#[derive(Debug, Clone, Default, Deserialize, Serialize)]
#[serde(default, deny_unknown_fields)]
pub struct FileConfig {
    pub problem: Option<ProblemKind>,
    pub data: Option<PathBuf>,
    pub edges: Option<PathBuf>,
    pub penalty: Option<PathBuf>,
    pub lambda_grid: Option<GridSpec>,
    pub sigma: Option<f64>,
    pub reps: Option<usize>,
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
    pub threads: Option<usize>,
    pub bit_repro: Option<bool>,
    pub solver: Option<SolverConfig>,
    pub finite_difference: Option<bool>,
    pub experiment: Option<ExperimentSpec>,
}

/// Flags merged over the configuration file.
#[derive(Debug, Clone, Serialize)]
pub struct Resolved {
    pub problem: Option<ProblemKind>,
    pub data: Option<PathBuf>,
    pub edges: Option<PathBuf>,
    pub penalty: Option<PathBuf>,
    pub grid: Option<Vec<f64>>,
    pub sigma: Option<f64>,
    pub reps: Option<usize>,
    pub seed: Option<u64>,
    pub out: PathBuf,
    pub threads: Option<usize>,
    pub bit_repro: bool,
    pub solver: SolverConfig,
    pub finite_difference: bool,
    pub experiment: ExperimentSpec,
}

impl Resolved {
    pub fn from_common(c: &Common) -> anyhow::Result<Self> {
        let (file, base) = match &c.config {
            Some(p) => {
                let text = fs::read_to_string(p).map_err(|e| bad(format!("{}: {e}", p.display())))?;
                let cfg: FileConfig =
                    serde_json::from_str(&text).map_err(|e| bad(format!("{}: {e}", p.display())))?;
                (cfg, p.parent().map(Path::to_path_buf).unwrap_or_default())
            }
            None => (FileConfig::default(), PathBuf::new()),
        };
        let rel = |p: Option<PathBuf>| p.map(|p| if p.is_absolute() { p } else { base.join(p) });
        let problem = match &c.problem {
            Some(s) => Some(parse_problem(s)?),
            None => file.problem,
        };
        let grid = match &c.lambda_grid {
            Some(s) => Some(parse_grid(s)?),
            None => match file.lambda_grid {
                Some(GridSpec::Values(v)) => Some(v),
                Some(GridSpec::Text(s)) => Some(parse_grid(&s)?),
                None => None,
            },
        };
        let mut solver = file.solver.unwrap_or_default();
        if let Some(m) = &c.method {
            solver.method = serde_json::from_value(serde_json::Value::String(m.clone()))?;
        }
        solver.validate().map_err(|e| bad(e.to_string()))?;
        let out = c
            .out
            .clone()
            .or_else(|| rel(file.out.clone()))
            .ok_or_else(|| bad("an output directory is required (--out)"))?;
        let resolved = Self {
            problem,
            data: c.data.clone().or_else(|| rel(file.data.clone())),
            edges: c.edges.clone().or_else(|| rel(file.edges.clone())),
            penalty: c.penalty.clone().or_else(|| rel(file.penalty.clone())),
            grid,
            sigma: c.sigma.or(file.sigma),
            reps: c.reps.or(file.reps),
            seed: c.seed.or(file.seed),
            out,
            threads: c.threads.or(file.threads),
            bit_repro: c.bit_repro || file.bit_repro.unwrap_or(false),
            solver,
            finite_difference: file.finite_difference.unwrap_or(false),
            experiment: file.experiment.unwrap_or_default(),
        };
        resolved.check_files()?;
        if let Some(s) = resolved.sigma {
            if !(s > 0.0 && s.is_finite()) {
                return Err(bad(format!("sigma must be > 0, got {s}")));
            }
        }
        if resolved.threads == Some(0) {
            return Err(bad("threads must be >= 1"));
        }
        Ok(resolved)
    }

    fn check_files(&self) -> anyhow::Result<()> {
        for p in [&self.data, &self.edges, &self.penalty].into_iter().flatten() {
            if !p.is_file() {
                return Err(bad(format!("{} does not exist", p.display())));
            }
        }
        Ok(())
    }

    pub fn seed_required(&self, what: &str) -> anyhow::Result<u64> {
        self.seed.ok_or_else(|| bad(format!("{what} needs --seed")))
    }

    pub fn reps_required(&self, what: &str) -> anyhow::Result<usize> {
        self.reps.ok_or_else(|| bad(format!("{what} needs --reps")))
    }

    pub fn data_required(&self) -> anyhow::Result<&Path> {
        self.data.as_deref().ok_or_else(|| bad("--data is required"))
    }

    pub fn problem_required(&self) -> anyhow::Result<ProblemKind> {
        self.problem.ok_or_else(|| bad("--problem is required"))
    }
}

/// `name` or `name:value`; `-` and `_` are interchangeable in names.
pub fn parse_problem(s: &str) -> anyhow::Result<ProblemKind> {
    let (name, value) = match s.split_once(':') {
        Some((n, v)) => {
            let v: f64 = v.trim().parse().map_err(|_| bad(format!("bad tuning value in {s:?}")))?;
            (n, Some(v))
        }
        None => (s, None),
    };
    let name = name.trim().replace('-', "_");
    let need = |default: f64| value.unwrap_or(default);
    let kind = match name.as_str() {
        "univariate_isotonic" | "isotonic" => ProblemKind::UnivariateIsotonic,
        "bounded_isotonic" => ProblemKind::BoundedIsotonic {
            lambda: need(f64::INFINITY),
        },
        "univariate_convex" => ProblemKind::UnivariateConvex,
        "multivariate_convex" | "convex" => ProblemKind::MultivariateConvex,
        "penalized_convex" => ProblemKind::PenalizedConvex { lambda: need(0.0) },
        "linear_regression" => ProblemKind::LinearRegression,
        "ridge" => ProblemKind::Ridge { lambda: need(1.0) },
        "lasso" => ProblemKind::Lasso { tau: need(1.0) },
        "generalized_lasso" => ProblemKind::GeneralizedLasso { tau: need(1.0) },
        other => return Err(bad(format!("unknown problem kind {other:?}"))),
    };
    if value.is_some() && kind.tuning().is_none() {
        return Err(bad(format!("{} takes no tuning value", kind.name())));
    }
    Ok(kind)
}

/// `v1,v2,...`, `lin:lo:hi:k` or `log:lo:hi:k`.
pub fn parse_grid(s: &str) -> anyhow::Result<Vec<f64>> {
    let num = |t: &str| -> anyhow::Result<f64> {
        t.trim().parse::<f64>().map_err(|_| bad(format!("bad number {t:?} in grid {s:?}")))
    };
    let grid = if let Some(rest) = s.strip_prefix("lin:").or_else(|| s.strip_prefix("log:")) {
        let parts: Vec<&str> = rest.split(':').collect();
        if parts.len() != 3 {
            return Err(bad(format!("grid {s:?} should look like lin:lo:hi:k")));
        }
        let (lo, hi) = (num(parts[0])?, num(parts[1])?);
        let k: usize = parts[2].trim().parse().map_err(|_| bad(format!("bad count in grid {s:?}")))?;
        if s.starts_with("lin:") {
            polydf::sure::linspace(lo, hi, k)
        } else {
            if !(lo > 0.0 && hi > 0.0) {
                return Err(bad("log grids need positive end points"));
            }
            polydf::sure::logspace(lo, hi, k)
        }
    } else {
        s.split(',').map(num).collect::<anyhow::Result<Vec<f64>>>()?
    };
    polydf::sure::validate_grid(&grid).map_err(|e| bad(e.to_string()))?;
    Ok(grid)
}
