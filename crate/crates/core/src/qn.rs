//! Limited-memory BFGS Hessian model inside the damped Newton loop.

use std::collections::VecDeque;

use nalgebra::{DMatrix, DVector};

use crate::driver::{newton_loop, Curvature};
use crate::error::Result;
use crate::krylov::{dot, norm2};
use crate::model::{Decomposition, MrfModel};
use crate::smooth_dual::Evaluation;
use crate::trace::SolveResult;
use crate::trn::TrnConfig;

/// Pairs must satisfy `sᵀy > CURVATURE_GUARD·‖s‖‖y‖` to be stored.
pub const CURVATURE_GUARD: f64 = 1e-8;

/// Recent `(s, y)` pairs and the compact form
/// `B = γI - W M⁻¹ Wᵀ`, `W = [γS, Y]`, `M = [[γSᵀS, L], [Lᵀ, -D]]`.
#[derive(Debug, Clone)]
pub struct LbfgsMemory {
    capacity: usize,
    s: VecDeque<Vec<f64>>,
    y: VecDeque<Vec<f64>>,
    gamma: f64,
    skipped: usize,
    sts: DMatrix<f64>,
    sty: DMatrix<f64>,
    middle: Option<nalgebra::LU<f64, nalgebra::Dyn, nalgebra::Dyn>>,
}

impl LbfgsMemory {
    pub fn new(capacity: usize) -> Self {
        Self {
            capacity: capacity.max(1),
            s: VecDeque::new(),
            y: VecDeque::new(),
            gamma: 1.0,
            skipped: 0,
            sts: DMatrix::zeros(0, 0),
            sty: DMatrix::zeros(0, 0),
            middle: None,
        }
    }

    pub fn len(&self) -> usize {
        self.s.len()
    }

    pub fn is_empty(&self) -> bool {
        self.s.is_empty()
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    /// Pairs rejected by the curvature guard so far.
    pub fn skipped(&self) -> usize {
        self.skipped
    }

    pub fn sts(&self) -> &DMatrix<f64> {
        &self.sts
    }

    pub fn sty(&self) -> &DMatrix<f64> {
        &self.sty
    }

    pub fn clear(&mut self) {
        self.s.clear();
        self.y.clear();
        self.gamma = 1.0;
        self.rebuild();
    }

    /// Stores `(s, y)` if it passes the curvature guard; returns whether it did.
    pub fn update(&mut self, s: &[f64], y: &[f64]) -> bool {
        assert_eq!(s.len(), y.len(), "pair dimensions differ");
        let sy = dot(s, y);
        if !(sy > CURVATURE_GUARD * norm2(s) * norm2(y)) {
            self.skipped += 1;
            return false;
        }
        if self.s.len() == self.capacity {
            self.s.pop_front();
            self.y.pop_front();
        }
        self.s.push_back(s.to_vec());
        self.y.push_back(y.to_vec());
        self.rebuild();
        true
    }

    fn rebuild(&mut self) {
        loop {
            let k = self.s.len();
            if k == 0 {
                self.gamma = 1.0;
                self.sts = DMatrix::zeros(0, 0);
                self.sty = DMatrix::zeros(0, 0);
                self.middle = None;
                return;
            }
            let (sl, yl) = (self.s.back().unwrap(), self.y.back().unwrap());
            self.gamma = dot(yl, yl) / dot(sl, yl);
            self.sts = DMatrix::from_fn(k, k, |i, j| dot(&self.s[i], &self.s[j]));
            self.sty = DMatrix::from_fn(k, k, |i, j| dot(&self.s[i], &self.y[j]));
            let g = self.gamma;
            let mut m = DMatrix::zeros(2 * k, 2 * k);
            for i in 0..k {
                for j in 0..k {
                    m[(i, j)] = g * self.sts[(i, j)];
                    if i > j {
                        m[(i, k + j)] = self.sty[(i, j)];
                        m[(k + j, i)] = self.sty[(i, j)];
                    }
                }
                m[(k + i, k + i)] = -self.sty[(i, i)];
            }
            let scale = m.abs().max();
            let lu = m.lu();
            let det_ok = {
                let u = lu.u();
                let dmin = u.diagonal().iter().fold(f64::INFINITY, |a, &d| a.min(d.abs()));
                dmin > 1e-14 * scale
            };
            if det_ok {
                self.middle = Some(lu);
                return;
            }
            // singular middle matrix: forget the oldest pair
            self.s.pop_front();
            self.y.pop_front();
        }
    }

    /// `(B + λI) v`
    pub fn hvp(&self, v: &[f64], lambda: f64) -> Vec<f64> {
        let g = self.gamma;
        let mut out: Vec<f64> = v.iter().map(|x| (g + lambda) * x).collect();
        let Some(lu) = &self.middle else { return out };
        let k = self.s.len();
        let mut wv = DVector::zeros(2 * k);
        for i in 0..k {
            wv[i] = g * dot(&self.s[i], v);
            wv[k + i] = dot(&self.y[i], v);
        }
        let Some(c) = lu.solve(&wv) else { return out };
        for i in 0..k {
            let (a, b) = (g * c[i], c[k + i]);
            for ((o, si), yi) in out.iter_mut().zip(&self.s[i]).zip(&self.y[i]) {
                *o -= a * si + b * yi;
            }
        }
        out
    }
}

pub fn memory_update(mem: &mut LbfgsMemory, s: &[f64], y: &[f64]) -> bool {
    mem.update(s, y)
}

pub fn qn_hvp(mem: &LbfgsMemory, v: &[f64], lambda: f64) -> Vec<f64> {
    mem.hvp(v, lambda)
}

struct QuasiNewton {
    memory: LbfgsMemory,
}

impl Curvature for QuasiNewton {
    fn needs_pairs(&self) -> bool {
        false
    }

    fn prepare(&mut self, _: &MrfModel, _: &Evaluation, _: f64, _: f64) -> Result<()> {
        Ok(())
    }

    fn apply(&self, v: &[f64], lambda: f64) -> Vec<f64> {
        self.memory.hvp(v, lambda)
    }

    fn precondition(&self, _: &[f64]) -> Option<Vec<f64>> {
        None
    }

    fn accepted(&mut self, s: &[f64], y: &[f64]) {
        self.memory.update(s, y);
    }

    // the pairs describe a different objective after a temperature change
    fn annealed(&mut self) {
        self.memory.clear();
    }
}

/// Damped Newton loop with an L-BFGS Hessian model; works with any
/// decomposition, including chains.
pub fn qn_solve(model: &MrfModel, decomposition: &Decomposition, config: &TrnConfig) -> Result<SolveResult> {
    let mut curv = QuasiNewton { memory: LbfgsMemory::new(config.lbfgs_memory) };
    newton_loop(model, decomposition, config, &mut curv, "qn")
}
