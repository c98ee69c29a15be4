use crate::driver::Session;
use crate::error::{Error, Result};
use crate::krylov::dot;
use crate::model::{Decomposition, MrfModel};
use crate::trace::{ExitReason, SolveResult, TraceEvent};
use crate::trn::TrnConfig;

const MAX_DOUBLINGS: usize = 60;

/// Monotone FISTA with backtracking on the Lipschitz estimate.
///
/// The step is `z = y - ∇f(y)/L`; `L` doubles until
/// `f(z) ≤ f(y) - ‖∇f(y)‖²/(2L)` and halves after every accepted step.
/// When `f(z)` exceeds `f(x)` the momentum restarts from `x`.
#[derive(Debug, Clone)]
pub struct Fista {
    pub x: Vec<f64>,
    pub fx: f64,
    pub gx: Vec<f64>,
    pub lipschitz: f64,
    x_prev: Vec<f64>,
    y: Vec<f64>,
    fy: f64,
    gy: Vec<f64>,
    y_is_x: bool,
    t: f64,
}

/// Outcome of one [`Fista::step`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FistaStep {
    /// Index (among this step's oracle calls) of the evaluation at the new `x`,
    /// or `None` after a momentum restart.
    pub accepted: Option<usize>,
    pub oracle_calls: usize,
}

impl Fista {
    pub fn new(x0: Vec<f64>, f0: f64, g0: Vec<f64>, lipschitz: f64) -> Self {
        Self {
            x_prev: x0.clone(),
            y: x0.clone(),
            fy: f0,
            gy: g0.clone(),
            y_is_x: true,
            t: 1.0,
            x: x0,
            fx: f0,
            gx: g0,
            lipschitz,
        }
    }

    /// Restarts momentum at a new point (e.g. after the objective changed).
    pub fn reset(&mut self, x: Vec<f64>, fx: f64, gx: Vec<f64>) {
        *self = Self::new(x, fx, gx, self.lipschitz);
    }

    pub fn step(&mut self, mut oracle: impl FnMut(&[f64]) -> Result<(f64, Vec<f64>)>) -> Result<FistaStep> {
        let mut calls = 0;
        if !self.y_is_x {
            let (f, g) = oracle(&self.y)?;
            calls += 1;
            self.fy = f;
            self.gy = g;
        }
        let gg = dot(&self.gy, &self.gy);
        let mut doublings = 0;
        let (z, fz, gz) = loop {
            let inv = 1.0 / self.lipschitz;
            let z: Vec<f64> = self.y.iter().zip(&self.gy).map(|(y, g)| y - inv * g).collect();
            let (fz, gz) = oracle(&z)?;
            calls += 1;
            if fz.is_finite() && fz <= self.fy - 0.5 * inv * gg {
                break (z, fz, gz);
            }
            doublings += 1;
            if doublings > MAX_DOUBLINGS {
                return Err(Error::Aborted(format!("FISTA step underflow (L = {:e})", self.lipschitz)));
            }
            self.lipschitz *= 2.0;
        };
        if fz > self.fx {
            let (x, fx, gx) = (self.x.clone(), self.fx, self.gx.clone());
            self.reset(x, fx, gx);
            return Ok(FistaStep { accepted: None, oracle_calls: calls });
        }
        let t_next = 0.5 * (1.0 + (1.0 + 4.0 * self.t * self.t).sqrt());
        let beta = (self.t - 1.0) / t_next;
        self.x_prev = std::mem::replace(&mut self.x, z);
        self.fx = fz;
        self.gx = gz;
        self.t = t_next;
        if beta == 0.0 {
            self.y = self.x.clone();
            self.fy = self.fx;
            self.gy = self.gx.clone();
            self.y_is_x = true;
        } else {
            self.y = self.x.iter().zip(&self.x_prev).map(|(a, b)| a + beta * (a - b)).collect();
            self.y_is_x = false;
        }
        self.lipschitz *= 0.5;
        Ok(FistaStep { accepted: Some(calls - 1), oracle_calls: calls })
    }
}

/// FISTA on the smoothed dual with the same annealing and exit rules as the
/// Newton-type solvers. The trace's `lambda` column holds the Lipschitz estimate.
pub fn fista_solve(model: &MrfModel, decomposition: &Decomposition, config: &TrnConfig) -> Result<SolveResult> {
    let mut s = Session::new(model, decomposition, config, false, "fista")?;
    let mut fista = Fista::new(s.delta.clone(), s.eval.f, s.eval.grad.clone(), 1.0);
    let mut iteration = 0;
    loop {
        if let Some(exit) = s.exit_check(iteration, fista.lipschitz)? {
            return s.finish(exit, iteration);
        }
        if s.anneal(fista.lipschitz)? {
            fista.lipschitz *= config.alpha;
            fista.reset(s.delta.clone(), s.eval.f, s.eval.grad.clone());
            continue;
        }
        if iteration >= config.max_iterations {
            return s.finish(ExitReason::MaxIterations, iteration);
        }
        iteration += 1;
        let mut evals = Vec::new();
        let step = fista.step(|z| {
            let e = s.evaluate_at(z)?;
            let out = (e.f, e.grad.clone());
            evals.push((z.to_vec(), e));
            Ok(out)
        })?;
        if let Some(idx) = step.accepted {
            let (z, e) = evals.swap_remove(idx);
            s.move_to(z, e);
            s.push_row(TraceEvent::Step, fista.lipschitz, 0)?;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quadratic_converges() {
        let oracle = |x: &[f64]| Ok((0.5 * x[0] * x[0], vec![x[0]]));
        let mut f = Fista::new(vec![3.0], 4.5, vec![3.0], 0.01);
        let mut last = f.fx;
        let mut n = 0;
        while f.gx[0].abs() > 1e-8 && n < 100 {
            f.step(oracle).unwrap();
            assert!(f.fx <= last);
            last = f.fx;
            n += 1;
        }
        assert!(f.gx[0].abs() <= 1e-8, "{n} {:?}", f.gx);
    }
}
