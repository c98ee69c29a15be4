//! Trust-region Newton with Levenberg-style damping, truncated PCG,
//! cubic backtracking and temperature annealing.

use serde::{Deserialize, Serialize};

use crate::driver::{newton_loop, Curvature};
use crate::error::{Error, Result};
use crate::hessian::{build_hessian_blocks, build_preconditioner, HessianBlocks, Preconditioner};
use crate::model::{Decomposition, MrfModel};
use crate::smooth_dual::Evaluation;
use crate::trace::SolveResult;

/// Solver parameters shared by the trust-region, quasi-Newton and FISTA drivers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrnConfig {
    /// Initial damping.
    pub lambda0: f64,
    /// Temperature growth factor.
    pub alpha: f64,
    /// Anneal threshold factor.
    pub beta: f64,
    /// Ratio below which a step is backtracked.
    pub eps_rho: f64,
    /// Gradient sup-norm tolerance at the final temperature.
    pub zeta: f64,
    pub tau0: f64,
    pub tau_max: f64,
    pub cg_max: usize,
    /// Truncation constants for `τ < τ_max/4`, `τ < τ_max/2` and above.
    pub eps_tau_schedule: [f64; 3],
    pub max_iterations: usize,
    /// Outer iterations between primal-dual gap checks at the final
    /// temperature; 0 disables the check.
    pub pd_gap_every: usize,
    /// Gap threshold, relative to `max(1, |dual|)`.
    pub pd_gap_tol: f64,
    /// Use the clique-block preconditioner (exact Hessian path only).
    pub precondition: bool,
    /// Also solve every inner system without preconditioning and record the
    /// iteration count.
    pub record_unpreconditioned: bool,
    /// Record the non-smooth dual and rounded energy on every trace row.
    pub track_bounds: bool,
    /// Record wall-clock time; off makes traces reproducible byte for byte.
    pub timing: bool,
    /// L-BFGS memory for the quasi-Newton solver.
    pub lbfgs_memory: usize,
}

impl Default for TrnConfig {
    fn default() -> Self {
        Self {
            lambda0: 1.0,
            alpha: 2.0,
            beta: 1.0 / 6.0,
            eps_rho: 1e-4,
            zeta: 1e-3,
            tau0: 1.0,
            tau_max: 8192.0,
            cg_max: 250,
            eps_tau_schedule: [0.1, 0.01, 0.001],
            max_iterations: 10_000,
            pd_gap_every: 20,
            pd_gap_tol: 1e-6,
            precondition: true,
            record_unpreconditioned: false,
            track_bounds: true,
            timing: true,
            lbfgs_memory: 10,
        }
    }
}

impl TrnConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("lambda0", self.lambda0),
            ("beta", self.beta),
            ("eps_rho", self.eps_rho),
            ("zeta", self.zeta),
            ("tau0", self.tau0),
            ("tau_max", self.tau_max),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::InvalidInput(format!("{name} must be positive, got {v}")));
            }
        }
        if !(self.alpha > 1.0 && self.alpha.is_finite()) {
            return Err(Error::InvalidInput(format!("alpha must exceed 1, got {}", self.alpha)));
        }
        if self.tau0 > self.tau_max {
            return Err(Error::InvalidInput("tau0 exceeds tau_max".into()));
        }
        if self.eps_tau_schedule.iter().any(|&e| !(e > 0.0)) {
            return Err(Error::InvalidInput("eps_tau schedule must be positive".into()));
        }
        if self.cg_max == 0 || self.lbfgs_memory == 0 {
            return Err(Error::InvalidInput("cg_max and lbfgs_memory must be positive".into()));
        }
        Ok(())
    }

    /// CG truncation constant at temperature `tau`.
    pub fn eps_tau(&self, tau: f64) -> f64 {
        if tau < self.tau_max / 4.0 {
            self.eps_tau_schedule[0]
        } else if tau < self.tau_max / 2.0 {
            self.eps_tau_schedule[1]
        } else {
            self.eps_tau_schedule[2]
        }
    }
}

/// `ρ = (f_new - f_old) / q(p)` with `q(p) < 0` the predicted change; 0 when
/// no decrease is predicted.
pub fn acceptance_ratio(f_old: f64, f_new: f64, q_of_p: f64) -> f64 {
    if q_of_p < 0.0 {
        (f_new - f_old) / q_of_p
    } else {
        0.0
    }
}

/// Damping update; ties go to the branch of the larger ratio.
pub fn update_lambda(lambda: f64, rho: f64) -> f64 {
    if rho < 0.25 {
        2.0 * lambda
    } else if rho < 0.5 {
        lambda
    } else if rho < 0.9 {
        0.5 * lambda
    } else {
        0.25 * lambda
    }
}

pub const ARMIJO_C1: f64 = 1e-4;
pub const BACKTRACK_TRIALS: usize = 20;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Backtrack {
    pub t: f64,
    pub f: f64,
    /// Objective evaluations, including the reused unit step.
    pub trials: usize,
}

/// Armijo backtracking along a direction with cubic interpolation.
///
/// `phi(t)` evaluates the objective at `δ + t·p`; `f1` may carry an already
/// computed `phi(1)`. Steps shrink to within `[0.1t, 0.5t]` each trial.
pub fn cubic_backtrack(
    mut phi: impl FnMut(f64) -> Result<f64>,
    f0: f64,
    slope0: f64,
    f1: Option<f64>,
) -> Result<Backtrack> {
    if !(slope0 < 0.0) {
        return Err(Error::InvalidInput(format!("backtracking needs a descent direction (slope {slope0})")));
    }
    let mut t = 1.0;
    let mut ft = match f1 {
        Some(v) => v,
        None => phi(1.0)?,
    };
    let mut trials = 1;
    let mut prev: Option<(f64, f64)> = None;
    loop {
        if ft.is_finite() && ft <= f0 + ARMIJO_C1 * t * slope0 {
            return Ok(Backtrack { t, f: ft, trials });
        }
        if trials >= BACKTRACK_TRIALS {
            return Err(Error::LineSearchFailure { trials });
        }
        let mut next = if !ft.is_finite() {
            0.5 * t
        } else {
            match prev.filter(|p| p.1.is_finite()) {
                None => -slope0 * t * t / (2.0 * (ft - f0 - slope0 * t)),
                Some((tp, fp)) => {
                    let r1 = ft - f0 - slope0 * t;
                    let r2 = fp - f0 - slope0 * tp;
                    let a = (r1 / (t * t) - r2 / (tp * tp)) / (t - tp);
                    let b = (-tp * r1 / (t * t) + t * r2 / (tp * tp)) / (t - tp);
                    if a == 0.0 {
                        -slope0 / (2.0 * b)
                    } else {
                        let disc = b * b - 3.0 * a * slope0;
                        (-b + disc.max(0.0).sqrt()) / (3.0 * a)
                    }
                }
            }
        };
        if !next.is_finite() {
            next = 0.5 * t;
        }
        next = next.clamp(0.1 * t, 0.5 * t);
        prev = Some((t, ft));
        t = next;
        ft = phi(t)?;
        trials += 1;
    }
}

/// Temperature state driven by [`anneal_check`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AnnealState {
    pub tau: f64,
    pub gamma: f64,
    pub eps_tau: f64,
}

impl AnnealState {
    /// State at the start of a run with initial gradient norm `grad_l2`.
    pub fn initial(config: &TrnConfig, grad_l2: f64) -> Self {
        Self { tau: config.tau0, gamma: config.beta * grad_l2, eps_tau: config.eps_tau(config.tau0) }
    }
}

/// Raises the temperature once the gradient norm drops to the threshold,
/// which never falls below `zeta`. Returns whether the state changed.
pub fn anneal_check(state: &mut AnnealState, grad_l2: f64, config: &TrnConfig) -> bool {
    if grad_l2 <= state.gamma.max(config.zeta) && state.tau < config.tau_max {
        state.tau = (config.alpha * state.tau).min(config.tau_max);
        state.gamma = config.beta * grad_l2;
        state.eps_tau = config.eps_tau(state.tau);
        true
    } else {
        false
    }
}

/// Exact structured Hessian with the clique-block preconditioner.
pub(crate) struct ExactHessian {
    precondition: bool,
    blocks: Option<HessianBlocks>,
    precond: Option<Preconditioner>,
}

impl ExactHessian {
    pub fn new(precondition: bool) -> Self {
        Self { precondition, blocks: None, precond: None }
    }
}

impl Curvature for ExactHessian {
    fn needs_pairs(&self) -> bool {
        true
    }

    fn prepare(&mut self, model: &MrfModel, eval: &Evaluation, tau: f64, lambda: f64) -> Result<()> {
        let blocks = build_hessian_blocks(model, &eval.marginals, tau)?;
        self.precond = self.precondition.then(|| build_preconditioner(&blocks, lambda));
        self.blocks = Some(blocks);
        Ok(())
    }

    fn apply(&self, v: &[f64], lambda: f64) -> Vec<f64> {
        self.blocks.as_ref().expect("prepare before apply").hvp(v, lambda)
    }

    fn precondition(&self, r: &[f64]) -> Option<Vec<f64>> {
        self.precond.as_ref().map(|p| p.apply(r))
    }
}

/// Runs the trust-region Newton method on a single-clique decomposition.
pub fn solve(model: &MrfModel, decomposition: &Decomposition, config: &TrnConfig) -> Result<SolveResult> {
    if !decomposition.is_singleton() {
        return Err(Error::UnsupportedDecomposition("exact Hessians need a single-clique decomposition".into()));
    }
    newton_loop(model, decomposition, config, &mut ExactHessian::new(config.precondition), "trn")
}
