use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Debug, Parser)]
#[command(name = "polydf", version, about = "Fit polyhedral regression estimators, compute their degrees of freedom and tune them by SURE")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Fit one problem; writes fit.csv, active_set.csv and run.json.
    Fit(Common),
    /// Divergence of a fit with optional oracles; writes df.json.
    Df {
        #[command(flatten)]
        common: Common,
        /// Also compute the central finite-difference divergence.
        #[arg(long)]
        finite_difference: bool,
    },
    /// SURE over a tuning grid; writes sure_curve.csv and summary.json.
    SureTune {
        #[command(flatten)]
        common: Common,
        /// Size of the default grid.
        #[arg(long)]
        grid_points: Option<usize>,
    },
    /// Simulation studies on `f(x) = ‖x‖²` with a random design.
    Experiment {
        #[arg(value_enum)]
        which: Option<Study>,
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        n: Option<usize>,
        #[arg(long)]
        d: Option<usize>,
        #[arg(long)]
        grid_points: Option<usize>,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, serde::Deserialize, serde::Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Study {
    /// Formula versus Monte-Carlo degrees of freedom, bounded isotonic.
    DfCompare,
    /// SURE and unbounded loss ratios, bounded isotonic.
    IsoRatio,
    /// SURE and un-penalized loss ratios, penalized convex.
    CvxRatio,
}

#[derive(Debug, Clone, Default, Args)]
pub struct Common {
    /// JSON configuration; flags override its fields.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Observations: header row, a `y` column and design columns.
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Partial-order edges `lower,upper` (0-based).
    #[arg(long)]
    pub edges: Option<PathBuf>,
    /// Penalty matrix for the generalized Lasso.
    #[arg(long)]
    pub penalty: Option<PathBuf>,
    /// Problem kind with optional tuning value, e.g. `bounded_isotonic:1.5`.
    #[arg(long)]
    pub problem: Option<String>,
    /// Comma-separated values, `lin:lo:hi:k` or `log:lo:hi:k`.
    #[arg(long, allow_hyphen_values = true)]
    pub lambda_grid: Option<String>,
    #[arg(long)]
    pub sigma: Option<f64>,
    #[arg(long)]
    pub reps: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output directory, created if missing.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Worker threads; defaults to the number of logical cores.
    #[arg(long)]
    pub threads: Option<usize>,
    /// Reductions run in replication order, so runs are always bit
    /// reproducible; the flag is recorded in the outputs.
    #[arg(long)]
    pub bit_repro: bool,
    #[arg(long, value_parser = ["active_set", "operator_splitting_with_polish"])]
    pub method: Option<String>,
}
