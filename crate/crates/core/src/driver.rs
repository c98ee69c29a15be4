//! Solver state, trace bookkeeping and the shared damped Newton loop.

use std::time::Instant;

use crate::baseline::{pd_gap, recover_feasible_primal, round_primal, PRIMAL_DOMAIN_CAP};
use crate::error::{Error, Result};
use crate::krylov::{dot, forcing_sequence, norm2, norm_inf, pcg_solve};
use crate::model::{Decomposition, MrfModel};
use crate::smooth_dual::{Evaluation, SmoothObjective};
use crate::trace::{ExitReason, SolveReport, SolveResult, StepRecord, Trace, TraceEvent, TraceRow};
use crate::trn::{acceptance_ratio, anneal_check, cubic_backtrack, update_lambda, AnnealState, TrnConfig};

/// Curvature model used by [`newton_loop`].
pub(crate) trait Curvature {
    /// Whether evaluations must carry pair marginals.
    fn needs_pairs(&self) -> bool;
    /// Called once per outer iteration before any product.
    fn prepare(&mut self, model: &MrfModel, eval: &Evaluation, tau: f64, lambda: f64) -> Result<()>;
    /// `(B + λI) v`
    fn apply(&self, v: &[f64], lambda: f64) -> Vec<f64>;
    /// Preconditioned residual, or `None` for the identity.
    fn precondition(&self, r: &[f64]) -> Option<Vec<f64>>;
    /// An accepted step `s` changed the gradient by `y`.
    fn accepted(&mut self, _s: &[f64], _y: &[f64]) {}
    /// The temperature changed.
    fn annealed(&mut self) {}
}

// Multiple of the unit roundoff of |f| below which a predicted decrease is noise.
const NOISE_ULPS: f64 = 64.0;
const MAX_ESCALATIONS: usize = 5;

pub(crate) struct Session<'a> {
    pub model: &'a MrfModel,
    pub config: &'a TrnConfig,
    pub obj: SmoothObjective<'a>,
    pub delta: Vec<f64>,
    pub eval: Evaluation,
    pub grad_l2: f64,
    pub grad_linf: f64,
    pub anneal: AnnealState,
    pub oracle_calls: u64,
    pub trace: Trace,
    needs_pairs: bool,
    solver: &'static str,
    start: Instant,
    last_gap_check: Option<usize>,
}

impl<'a> Session<'a> {
    pub fn new(
        model: &'a MrfModel,
        decomposition: &'a Decomposition,
        config: &'a TrnConfig,
        needs_pairs: bool,
        solver: &'static str,
    ) -> Result<Self> {
        config.validate()?;
        let start = Instant::now();
        let obj = SmoothObjective::new(model, decomposition, config.tau0)?;
        let delta = vec![0.0; obj.dim()];
        let eval = obj.evaluate(&delta, needs_pairs)?;
        let grad_l2 = norm2(&eval.grad);
        let mut s = Self {
            model,
            config,
            anneal: AnnealState::initial(config, grad_l2),
            obj,
            delta,
            grad_l2,
            grad_linf: norm_inf(&eval.grad),
            eval,
            oracle_calls: 1,
            trace: Trace::default(),
            needs_pairs,
            solver,
            start,
            last_gap_check: None,
        };
        s.push_row(TraceEvent::Step, config.lambda0, 0)?;
        Ok(s)
    }

    pub fn tau(&self) -> f64 {
        self.anneal.tau
    }

    fn wall_ms(&self) -> f64 {
        if self.config.timing {
            self.start.elapsed().as_secs_f64() * 1e3
        } else {
            0.0
        }
    }

    /// Full evaluation at `delta` (one oracle call).
    pub fn evaluate_at(&mut self, delta: &[f64]) -> Result<Evaluation> {
        self.oracle_calls += 1;
        self.obj.evaluate(delta, self.needs_pairs)
    }

    /// Objective value at `delta` (one oracle call); numerical breakdown
    /// reads as `+∞`.
    pub fn value_at(&mut self, delta: &[f64]) -> Result<f64> {
        self.oracle_calls += 1;
        match self.obj.objective(delta) {
            Ok(v) => Ok(v),
            Err(e) if e.is_numerical() => Ok(f64::INFINITY),
            Err(e) => Err(e),
        }
    }

    pub fn move_to(&mut self, delta: Vec<f64>, eval: Evaluation) {
        self.grad_l2 = norm2(&eval.grad);
        self.grad_linf = norm_inf(&eval.grad);
        self.delta = delta;
        self.eval = eval;
    }

    pub fn push_row(&mut self, event: TraceEvent, lambda: f64, cg_iters: usize) -> Result<()> {
        let (nonsmooth_dual, integer_primal) = if self.config.track_bounds {
            let x = round_primal(&self.eval.marginals);
            (Some(self.obj.nonsmooth_dual(&self.delta)?), Some(self.model.energy(&x)?))
        } else {
            (None, None)
        };
        self.trace.rows.push(TraceRow {
            oracle_calls: self.oracle_calls,
            wall_ms: self.wall_ms(),
            tau: self.tau(),
            lambda,
            f: self.eval.f,
            grad_l2: self.grad_l2,
            grad_linf: self.grad_linf,
            cg_iters,
            event,
            nonsmooth_dual,
            integer_primal,
        });
        Ok(())
    }

    fn gap_supported(&self) -> bool {
        (0..self.model.cliques().len()).all(|c| {
            self.model
                .clique_dims(c)
                .iter()
                .try_fold(1usize, |a, &d| a.checked_mul(d))
                .is_some_and(|s| s <= PRIMAL_DOMAIN_CAP)
        })
    }

    /// Non-smooth gap and LP objective of the recovered primal point.
    fn gap(&self) -> Result<Option<(f64, f64, f64)>> {
        if !self.gap_supported() {
            return Ok(None);
        }
        let dists = self.obj.clique_distributions(&self.delta)?;
        let primal = recover_feasible_primal(self.model, &self.eval.marginals, &dists)?;
        let dual = self.obj.nonsmooth_dual(&self.delta)?;
        let g = pd_gap(self.model, self.obj.decomposition(), &primal, -self.eval.f, dual, self.tau())?;
        Ok(Some((g.nonsmooth, primal.lp_objective(self.model), dual)))
    }

    /// Gradient exit at the final temperature, or the periodic gap check.
    pub fn exit_check(&mut self, iteration: usize, lambda: f64) -> Result<Option<ExitReason>> {
        let cfg = self.config;
        if self.tau() < cfg.tau_max {
            return Ok(None);
        }
        if self.grad_linf <= cfg.zeta {
            if let Some(last) = self.trace.rows.last_mut() {
                last.event = TraceEvent::ExitGrad;
            }
            return Ok(Some(ExitReason::Gradient));
        }
        let due = cfg.pd_gap_every > 0
            && iteration > 0
            && iteration.is_multiple_of(cfg.pd_gap_every)
            && self.last_gap_check != Some(iteration);
        if due {
            self.last_gap_check = Some(iteration);
            if let Some((gap, _, dual)) = self.gap()? {
                self.oracle_calls += 1;
                if gap <= cfg.pd_gap_tol * dual.abs().max(1.0) {
                    self.push_row(TraceEvent::ExitPdgap, lambda, 0)?;
                    return Ok(Some(ExitReason::PdGap));
                }
            }
        }
        Ok(None)
    }

    /// Applies the annealing rule; on a temperature change re-evaluates at
    /// the current point and records an `anneal` row.
    pub fn anneal(&mut self, lambda: f64) -> Result<bool> {
        if !anneal_check(&mut self.anneal, self.grad_l2, self.config) {
            return Ok(false);
        }
        self.obj.set_tau(self.anneal.tau)?;
        let delta = self.delta.clone();
        let eval = self.evaluate_at(&delta)?;
        self.move_to(delta, eval);
        // threshold relative to the gradient of the new objective
        self.anneal.gamma = self.config.beta * self.grad_l2;
        self.push_row(TraceEvent::Anneal, lambda, 0)?;
        Ok(true)
    }

    pub fn finish(self, exit: ExitReason, outer_iterations: usize) -> Result<SolveResult> {
        let labeling = round_primal(&self.eval.marginals);
        let integer_primal = self.model.energy(&labeling)?;
        let nonsmooth_dual = self.obj.nonsmooth_dual(&self.delta)?;
        let gap = self.gap()?;
        let report = SolveReport {
            solver: self.solver.to_string(),
            exit,
            tau: self.tau(),
            smooth_dual: -self.eval.f,
            nonsmooth_dual,
            nonsmooth_primal: gap.map(|g| g.1),
            integer_primal,
            pd_gap: gap.map(|g| g.0),
            grad_linf: self.grad_linf,
            oracle_calls: self.oracle_calls,
            outer_iterations,
            wall_ms: self.wall_ms(),
        };
        Ok(SolveResult { delta: self.delta, trace: self.trace, labeling, report })
    }
}

fn axpy(a: f64, x: &[f64], y: &[f64]) -> Vec<f64> {
    y.iter().zip(x).map(|(yi, xi)| yi + a * xi).collect()
}

/// The damped Newton iteration with annealing, shared by the exact-Hessian
/// and quasi-Newton solvers.
pub(crate) fn newton_loop(
    model: &MrfModel,
    decomposition: &Decomposition,
    config: &TrnConfig,
    curv: &mut impl Curvature,
    solver: &'static str,
) -> Result<SolveResult> {
    let mut s = Session::new(model, decomposition, config, curv.needs_pairs(), solver)?;
    let mut lambda = config.lambda0;
    let mut k = 1usize;
    let mut escalations = 0;
    let mut iteration = 0;
    loop {
        if let Some(exit) = s.exit_check(iteration, lambda)? {
            return s.finish(exit, iteration);
        }
        if s.anneal(lambda)? {
            curv.annealed();
            continue;
        }
        if iteration >= config.max_iterations {
            return s.finish(ExitReason::MaxIterations, iteration);
        }
        iteration += 1;

        let tau = s.tau();
        curv.prepare(model, &s.eval, tau, lambda)?;
        let grad = s.eval.grad.clone();
        let rhs: Vec<f64> = grad.iter().map(|g| -g).collect();
        let eta = forcing_sequence(k, s.anneal.eps_tau, s.grad_l2);
        let cg = pcg_solve(
            |v| curv.apply(v, lambda),
            |r| curv.precondition(r).unwrap_or_else(|| r.to_vec()),
            &rhs,
            eta,
            config.cg_max,
        )?;
        let unpreconditioned = if config.record_unpreconditioned && curv.precondition(&rhs).is_some() {
            Some(pcg_solve(|v| curv.apply(v, lambda), |r| r.to_vec(), &rhs, eta, config.cg_max)?.iterations)
        } else {
            None
        };
        let p = cg.p.clone();
        let slope = dot(&grad, &p);
        let q = slope + 0.5 * dot(&p, &curv.apply(&p, lambda));
        let f0 = s.eval.f;
        let trial = axpy(1.0, &p, &s.delta);
        let f1 = s.value_at(&trial)?;

        let mut record = StepRecord {
            iteration,
            tau,
            grad_l2: s.grad_l2,
            rho: 0.0,
            noise_floor: false,
            lambda_before: lambda,
            lambda_after: lambda,
            cg_iterations: cg.iterations,
            cg_residual: cg.residual_norm,
            cg_tolerance: cg.tolerance,
            cg_reason: cg.reason,
            unpreconditioned_cg_iterations: unpreconditioned,
            step_length: 0.0,
            line_search_failed: false,
        };

        let noise = NOISE_ULPS * f64::EPSILON * f0.abs().max(1.0);
        let mut accepted: Option<(f64, Vec<f64>, Evaluation, TraceEvent)> = None;
        if -q <= noise && slope < 0.0 {
            // the model change is below what f can resolve; judge by the gradient
            record.noise_floor = true;
            let eval = s.evaluate_at(&trial)?;
            let better = norm2(&eval.grad) < s.grad_l2 && eval.f <= f0 + noise;
            record.rho = if better { 1.0 } else { 0.0 };
            if better {
                accepted = Some((1.0, trial, eval, TraceEvent::Step));
            }
        } else {
            record.rho = acceptance_ratio(f0, f1, q);
            if record.rho >= config.eps_rho {
                let eval = s.evaluate_at(&trial)?;
                accepted = Some((1.0, trial, eval, TraceEvent::Step));
            } else if slope < 0.0 {
                let delta = s.delta.clone();
                let bt = cubic_backtrack(|t| s.value_at(&axpy(t, &p, &delta)), f0, slope, Some(f1));
                match bt {
                    Ok(bt) => {
                        let moved = axpy(bt.t, &p, &s.delta);
                        let eval = s.evaluate_at(&moved)?;
                        accepted = Some((bt.t, moved, eval, TraceEvent::Backtrack));
                    }
                    Err(Error::LineSearchFailure { .. }) => record.line_search_failed = true,
                    Err(e) => return Err(e),
                }
            } else {
                record.line_search_failed = true;
            }
        }
        record.lambda_after = update_lambda(lambda, record.rho);
        lambda = record.lambda_after;

        if let Some((t, delta, eval, event)) = accepted {
            if !eval.f.is_finite() {
                return Err(Error::Aborted(format!("non-finite objective at iteration {iteration}")));
            }
            escalations = 0;
            record.step_length = t;
            let step: Vec<f64> = p.iter().map(|v| t * v).collect();
            let y: Vec<f64> = eval.grad.iter().zip(&grad).map(|(a, b)| a - b).collect();
            curv.accepted(&step, &y);
            s.move_to(delta, eval);
            s.push_row(event, lambda, cg.iterations)?;
        } else if record.line_search_failed {
            escalations += 1;
            if escalations > MAX_ESCALATIONS {
                s.trace.steps.push(record);
                return Err(Error::Aborted(format!(
                    "line search failed {escalations} times in a row at tau {tau} (lambda {lambda:e})"
                )));
            }
            lambda *= 10.0;
        }
        s.trace.steps.push(record);
        k += 1;
    }
}
