//! Convergence traces and run reports shared by all solvers.

use std::fmt::Write as _;

use serde::Serialize;

use crate::krylov::CgStop;
use crate::model::Labeling;

/// Version of the trace CSV and report layouts.
pub const TRACE_VERSION: u32 = 1;

pub const CSV_HEADER: &str = "oracle_calls,wall_ms,tau,lambda,f,grad_l2,grad_linf,cg_iters,event";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum TraceEvent {
    Step,
    Anneal,
    ExitGrad,
    ExitPdgap,
    Backtrack,
}

impl TraceEvent {
    pub fn as_str(self) -> &'static str {
        match self {
            TraceEvent::Step => "step",
            TraceEvent::Anneal => "anneal",
            TraceEvent::ExitGrad => "exit-grad",
            TraceEvent::ExitPdgap => "exit-pdgap",
            TraceEvent::Backtrack => "backtrack",
        }
    }
}

/// One row per objective evaluation that moved the solver state.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TraceRow {
    pub oracle_calls: u64,
    pub wall_ms: f64,
    pub tau: f64,
    pub lambda: f64,
    pub f: f64,
    pub grad_l2: f64,
    pub grad_linf: f64,
    pub cg_iters: usize,
    pub event: TraceEvent,
    /// Non-smooth dual at this point, when bound tracking is on.
    pub nonsmooth_dual: Option<f64>,
    /// Energy of the rounded labeling at this point, when bound tracking is on.
    pub integer_primal: Option<f64>,
}

/// Diagnostics of one outer Newton-type iteration.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StepRecord {
    pub iteration: usize,
    pub tau: f64,
    pub grad_l2: f64,
    /// Ratio used for the damping update.
    pub rho: f64,
    /// True when the predicted decrease was below the objective's rounding
    /// level and the step was judged by the gradient norm instead.
    pub noise_floor: bool,
    pub lambda_before: f64,
    pub lambda_after: f64,
    pub cg_iterations: usize,
    pub cg_residual: f64,
    pub cg_tolerance: f64,
    pub cg_reason: CgStop,
    /// Iterations an unpreconditioned solve needed on the same system.
    pub unpreconditioned_cg_iterations: Option<usize>,
    /// Accepted step length (0 when the step was rejected).
    pub step_length: f64,
    /// Backtracking failed; the next damping value is ten times `lambda_after`.
    pub line_search_failed: bool,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct Trace {
    pub rows: Vec<TraceRow>,
    pub steps: Vec<StepRecord>,
}

impl Trace {
    pub fn to_csv(&self) -> String {
        let mut out = String::with_capacity(64 * (self.rows.len() + 1));
        out.push_str(CSV_HEADER);
        out.push('\n');
        for r in &self.rows {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{},{},{}",
                r.oracle_calls,
                r.wall_ms,
                r.tau,
                r.lambda,
                r.f,
                r.grad_l2,
                r.grad_linf,
                r.cg_iters,
                r.event.as_str()
            );
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum ExitReason {
    Gradient,
    PdGap,
    MaxIterations,
}

/// Summary of a finished solve.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SolveReport {
    pub solver: String,
    pub exit: ExitReason,
    pub tau: f64,
    pub smooth_dual: f64,
    pub nonsmooth_dual: f64,
    /// LP objective of the recovered feasible primal point, if computed.
    pub nonsmooth_primal: Option<f64>,
    pub integer_primal: f64,
    pub pd_gap: Option<f64>,
    pub grad_linf: f64,
    pub oracle_calls: u64,
    pub outer_iterations: usize,
    pub wall_ms: f64,
}

#[derive(Debug, Clone)]
pub struct SolveResult {
    pub delta: Vec<f64>,
    pub trace: Trace,
    pub labeling: Labeling,
    pub report: SolveReport,
}
