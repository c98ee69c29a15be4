//! Running several solvers on one model and tabulating the results.

use std::fmt::{self, Write as _};
use std::str::FromStr;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::model::{build_clique_decomposition, Decomposition, MrfModel};
use crate::trace::{SolveReport, SolveResult};
use crate::trn::TrnConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Solver {
    Trn,
    Qn,
    Fista,
}

impl Solver {
    pub const ALL: [Solver; 3] = [Solver::Trn, Solver::Qn, Solver::Fista];

    pub fn as_str(self) -> &'static str {
        match self {
            Solver::Trn => "trn",
            Solver::Qn => "qn",
            Solver::Fista => "fista",
        }
    }

    /// Whether the solver accepts chain subgraphs.
    pub fn supports_chains(self) -> bool {
        !matches!(self, Solver::Trn)
    }

    pub fn run(self, model: &MrfModel, decomposition: &Decomposition, config: &TrnConfig) -> Result<SolveResult> {
        match self {
            Solver::Trn => crate::trn::solve(model, decomposition, config),
            Solver::Qn => crate::qn::qn_solve(model, decomposition, config),
            Solver::Fista => crate::baseline::fista_solve(model, decomposition, config),
        }
    }
}

impl fmt::Display for Solver {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Solver {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "trn" => Ok(Solver::Trn),
            "qn" => Ok(Solver::Qn),
            "fista" => Ok(Solver::Fista),
            other => Err(Error::InvalidInput(format!("unknown solver {other:?} (expected trn, qn or fista)"))),
        }
    }
}

/// Parses a comma-separated solver list such as `trn,fista`.
pub fn parse_solver_list(s: &str) -> Result<Vec<Solver>> {
    let list = s.split(',').filter(|t| !t.trim().is_empty()).map(Solver::from_str).collect::<Result<Vec<_>>>()?;
    if list.is_empty() {
        return Err(Error::InvalidInput("empty solver list".into()));
    }
    Ok(list)
}

#[derive(Debug, Clone, Serialize)]
pub struct ComparisonEntry {
    pub solver: Solver,
    /// `cliques` or `chains`.
    pub decomposition: &'static str,
    pub report: SolveReport,
}

/// Metric rows of [`Comparison::to_table`], in order.
pub const METRIC_ROWS: [&str; 5] = ["time_ms", "oracle_calls", "nonsmooth_dual", "nonsmooth_primal", "integer_primal"];

#[derive(Debug, Clone, Serialize)]
pub struct Comparison {
    pub entries: Vec<ComparisonEntry>,
}

/// Runs each solver in turn. Solvers that handle chains get `chains` when
/// given; the others use the clique decomposition.
pub fn compare(
    model: &MrfModel,
    chains: Option<&Decomposition>,
    solvers: &[Solver],
    config: &TrnConfig,
) -> Result<Comparison> {
    let cliques = build_clique_decomposition(model);
    let mut entries = Vec::with_capacity(solvers.len());
    for &solver in solvers {
        let (dec, name) = match chains {
            Some(d) if solver.supports_chains() => (d, "chains"),
            _ => (&cliques, "cliques"),
        };
        let result = solver.run(model, dec, config)?;
        entries.push(ComparisonEntry { solver, decomposition: name, report: result.report });
    }
    Ok(Comparison { entries })
}

impl Comparison {
    /// Whitespace-aligned table with one column per solver and one row per
    /// entry of [`METRIC_ROWS`]. Missing values print as `-`.
    pub fn to_table(&self) -> String {
        let header: Vec<String> = self.entries.iter().map(|e| format!("{}({})", e.solver, e.decomposition)).collect();
        let rows: Vec<Vec<String>> = METRIC_ROWS
            .iter()
            .map(|&m| {
                self.entries
                    .iter()
                    .map(|e| {
                        let r = &e.report;
                        match m {
                            "time_ms" => format!("{:.1}", r.wall_ms),
                            "oracle_calls" => r.oracle_calls.to_string(),
                            "nonsmooth_dual" => format!("{:.6}", r.nonsmooth_dual),
                            "nonsmooth_primal" => r.nonsmooth_primal.map_or("-".into(), |v| format!("{v:.6}")),
                            _ => format!("{:.6}", r.integer_primal),
                        }
                    })
                    .collect()
            })
            .collect();
        let first = METRIC_ROWS.iter().map(|m| m.len()).max().unwrap_or(0).max("metric".len());
        let widths: Vec<usize> = (0..header.len())
            .map(|j| rows.iter().map(|r| r[j].len()).chain([header[j].len()]).max().unwrap_or(0))
            .collect();
        let mut out = String::new();
        let _ = write!(out, "{:<first$}", "metric");
        for (h, w) in header.iter().zip(&widths) {
            let _ = write!(out, "  {h:>w$}");
        }
        out.push('\n');
        for (m, row) in METRIC_ROWS.iter().zip(&rows) {
            let _ = write!(out, "{m:<first$}");
            for (v, w) in row.iter().zip(&widths) {
                let _ = write!(out, "  {v:>w$}");
            }
            out.push('\n');
        }
        out
    }
}
