use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use homrf_core::TrnConfig;

#[derive(Debug, Parser)]
#[command(name = "homrf", version, about = "MAP inference in higher-order MRFs by smoothed dual decomposition")]
pub struct Cli {
    /// Worker threads; 0 uses one per core.
    #[arg(long, global = true, default_value_t = 0)]
    pub threads: usize,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Solve a model and write a JSON report and a CSV trace.
    Solve(SolveArgs),
    /// Generate a synthetic model.
    Generate(GenerateArgs),
    /// Energy of a labeling.
    Evaluate(EvaluateArgs),
    /// Run several solvers on one model and tabulate the results.
    Compare(CompareArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SolverArg {
    Trn,
    Qn,
    Fista,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum DecompositionArg {
    Cliques,
    Chains,
}

#[derive(Debug, Args)]
pub struct SolveArgs {
    /// Model file.
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long, value_enum, default_value_t = SolverArg::Trn)]
    pub solver: SolverArg,
    #[arg(long, value_enum, default_value_t = DecompositionArg::Cliques)]
    pub decomposition: DecompositionArg,
    /// Chain file, one chain of clique ids per line (with `--decomposition chains`).
    #[arg(long)]
    pub chains: Option<PathBuf>,
    /// JSON run report; stdout when omitted.
    #[arg(long)]
    pub report: Option<PathBuf>,
    /// CSV convergence trace.
    #[arg(long)]
    pub trace: Option<PathBuf>,
    /// Final labeling, whitespace separated.
    #[arg(long)]
    pub labeling: Option<PathBuf>,
    /// Final dual vector, one value per line.
    #[arg(long)]
    pub duals: Option<PathBuf>,
    #[command(flatten)]
    pub config: ConfigArgs,
}

#[derive(Debug, Args)]
pub struct CompareArgs {
    /// Comma-separated solver list, e.g. `trn,fista`.
    pub solvers: String,
    #[arg(long)]
    pub model: PathBuf,
    /// Chain file used by the solvers that accept chains.
    #[arg(long)]
    pub chains: Option<PathBuf>,
    /// JSON document with every run report.
    #[arg(long)]
    pub report: Option<PathBuf>,
    #[command(flatten)]
    pub config: ConfigArgs,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    #[arg(long)]
    pub model: PathBuf,
    /// Labeling file, whitespace separated labels in node order.
    #[arg(long)]
    pub labeling: PathBuf,
    /// Also report the exact minimum energy by enumeration.
    #[arg(long)]
    pub brute_force: bool,
}

#[derive(Debug, Args)]
pub struct GenerateArgs {
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Output model file.
    #[arg(long)]
    pub out: PathBuf,
    /// Chain file for the generators that define one (grid, path).
    #[arg(long)]
    pub chains_out: Option<PathBuf>,
    #[command(subcommand)]
    pub kind: GenerateKind,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum UnariesArg {
    Index,
    Zero,
}

#[derive(Debug, Subcommand)]
pub enum GenerateKind {
    /// Point matching with third-order pattern cliques.
    Matching {
        /// Number of points (a perfect square).
        #[arg(long, default_value_t = 16)]
        n: usize,
        #[arg(long, default_value_t = 0.5)]
        sigma: f64,
        #[arg(long, default_value_t = 60)]
        k_neighbors: usize,
        #[arg(long, value_enum, default_value_t = UnariesArg::Index)]
        unaries: UnariesArg,
    },
    /// Stereo-like grid with a truncated curvature prior.
    Grid {
        #[arg(long, default_value_t = 8)]
        width: usize,
        #[arg(long, default_value_t = 8)]
        height: usize,
        #[arg(long, default_value_t = 4)]
        labels: usize,
        #[arg(long, default_value_t = 2.0)]
        trunc: f64,
        #[arg(long, default_value_t = 1.0)]
        unary_scale: f64,
    },
    /// Random tree-structured model.
    Tree {
        #[arg(long, default_value_t = 8)]
        nodes: usize,
        #[arg(long, default_value_t = 4)]
        max_labels: usize,
        #[arg(long, default_value_t = 3)]
        max_order: usize,
        #[arg(long, default_value_t = 1.0)]
        scale: f64,
    },
    /// Path of cliques sharing one node each.
    Path {
        #[arg(long, default_value_t = 4)]
        cliques: usize,
        #[arg(long, default_value_t = 3)]
        order: usize,
        #[arg(long, default_value_t = 3)]
        labels: usize,
        #[arg(long, default_value_t = 1.0)]
        scale: f64,
    },
    /// Random model with arbitrary clique structure.
    Random {
        #[arg(long, default_value_t = 6)]
        nodes: usize,
        #[arg(long, default_value_t = 4)]
        cliques: usize,
        #[arg(long, default_value_t = 3)]
        max_order: usize,
        #[arg(long, default_value_t = 4)]
        max_labels: usize,
        #[arg(long, default_value_t = 0.5)]
        pattern_probability: f64,
        #[arg(long, default_value_t = 1.0)]
        scale: f64,
    },
}

fn defaults() -> TrnConfig {
    TrnConfig::default()
}

fn parse_schedule(s: &str) -> Result<[f64; 3], String> {
    let v = s
        .split(',')
        .map(|t| t.trim().parse::<f64>().map_err(|e| format!("{t:?}: {e}")))
        .collect::<Result<Vec<_>, _>>()?;
    v.try_into().map_err(|v: Vec<f64>| format!("expected 3 values, got {}", v.len()))
}

/// Solver parameters; defaults equal [`TrnConfig::default`].
#[derive(Debug, Args)]
pub struct ConfigArgs {
    /// Initial damping.
    #[arg(long, default_value_t = defaults().lambda0)]
    pub lambda0: f64,
    /// Temperature growth factor.
    #[arg(long, default_value_t = defaults().alpha)]
    pub alpha: f64,
    /// Anneal threshold factor.
    #[arg(long, default_value_t = defaults().beta)]
    pub beta: f64,
    /// Ratio below which a step is backtracked.
    #[arg(long, default_value_t = defaults().eps_rho)]
    pub eps_rho: f64,
    /// Gradient sup-norm tolerance at the final temperature.
    #[arg(long, default_value_t = defaults().zeta)]
    pub zeta: f64,
    #[arg(long, default_value_t = defaults().tau0)]
    pub tau0: f64,
    #[arg(long, default_value_t = defaults().tau_max)]
    pub tau_max: f64,
    #[arg(long, default_value_t = defaults().cg_max)]
    pub cg_max: usize,
    /// Three CG truncation constants, comma separated [default: 0.1,0.01,0.001].
    #[arg(long, value_parser = parse_schedule)]
    pub eps_tau_schedule: Option<[f64; 3]>,
    #[arg(long, default_value_t = defaults().max_iterations)]
    pub max_iterations: usize,
    /// Outer iterations between gap checks at the final temperature; 0 disables.
    #[arg(long, default_value_t = defaults().pd_gap_every)]
    pub pd_gap_every: usize,
    #[arg(long, default_value_t = defaults().pd_gap_tol)]
    pub pd_gap_tol: f64,
    /// Disable the clique-block preconditioner.
    #[arg(long)]
    pub no_precondition: bool,
    /// Record unpreconditioned CG iteration counts for every inner solve.
    #[arg(long)]
    pub record_unpreconditioned: bool,
    /// Skip per-row bound tracking.
    #[arg(long)]
    pub no_track_bounds: bool,
    /// Write zero wall times so traces are reproducible byte for byte.
    #[arg(long)]
    pub no_timing: bool,
    #[arg(long, default_value_t = defaults().lbfgs_memory)]
    pub lbfgs_memory: usize,
}

impl ConfigArgs {
    pub fn to_config(&self) -> TrnConfig {
        let schedule = self.eps_tau_schedule.unwrap_or(defaults().eps_tau_schedule);
        TrnConfig {
            lambda0: self.lambda0,
            alpha: self.alpha,
            beta: self.beta,
            eps_rho: self.eps_rho,
            zeta: self.zeta,
            tau0: self.tau0,
            tau_max: self.tau_max,
            cg_max: self.cg_max,
            eps_tau_schedule: schedule,
            max_iterations: self.max_iterations,
            pd_gap_every: self.pd_gap_every,
            pd_gap_tol: self.pd_gap_tol,
            precondition: !self.no_precondition,
            record_unpreconditioned: self.record_unpreconditioned,
            track_bounds: !self.no_track_bounds,
            timing: !self.no_timing,
            lbfgs_memory: self.lbfgs_memory,
        }
    }
}
