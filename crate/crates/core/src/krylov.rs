//! Truncated preconditioned conjugate gradients.

use serde::Serialize;

use crate::error::{Error, Result};

/// Default iteration cap for inner solves.
pub const DEFAULT_CG_MAX: usize = 250;

const REFRESH_EVERY: usize = 50;
const CURVATURE_EPS: f64 = 1e-14;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum CgStop {
    Tolerance,
    MaxIter,
    NegativeCurvature,
}

#[derive(Debug, Clone)]
pub struct CgReport {
    pub p: Vec<f64>,
    /// `‖A p - rhs‖₂`, recomputed from `p`.
    pub residual_norm: f64,
    /// Residual norm carried by the recurrence.
    pub recurrence_residual_norm: f64,
    /// Absolute tolerance `η‖rhs‖₂`.
    pub tolerance: f64,
    pub iterations: usize,
    pub reason: CgStop,
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub(crate) fn norm2(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

pub(crate) fn norm_inf(a: &[f64]) -> f64 {
    a.iter().fold(0.0, |m, x| m.max(x.abs()))
}

fn checked(v: Vec<f64>) -> Result<Vec<f64>> {
    if v.iter().all(|x| x.is_finite()) {
        Ok(v)
    } else {
        Err(Error::Numerical("non-finite operator output in conjugate gradients".into()))
    }
}

/// `η_k = min(ε_τ / k, √‖∇f‖)`
pub fn forcing_sequence(k: usize, eps_tau: f64, grad_norm: f64) -> f64 {
    (eps_tau / k.max(1) as f64).min(grad_norm.sqrt())
}

/// Solves `A p = rhs` from `p = 0` until `‖r‖₂ ≤ η‖rhs‖₂` or `max_iter`.
///
/// `op` applies `A` (symmetric, positive semidefinite plus damping) and
/// `precond` applies a symmetric positive definite preconditioner.
pub fn pcg_solve(
    op: impl Fn(&[f64]) -> Vec<f64>,
    precond: impl Fn(&[f64]) -> Vec<f64>,
    rhs: &[f64],
    eta: f64,
    max_iter: usize,
) -> Result<CgReport> {
    let n = rhs.len();
    let rhs_norm = norm2(rhs);
    let tolerance = eta * rhs_norm;
    let mut x = vec![0.0; n];
    if rhs_norm == 0.0 {
        return Ok(CgReport {
            p: x,
            residual_norm: 0.0,
            recurrence_residual_norm: 0.0,
            tolerance,
            iterations: 0,
            reason: CgStop::Tolerance,
        });
    }
    let mut r = rhs.to_vec();
    let mut z = checked(precond(&r))?;
    let mut d = z.clone();
    let mut rz = dot(&r, &z);
    let mut r_norm = rhs_norm;
    let mut iterations = 0;
    let mut reason = CgStop::MaxIter;
    while iterations < max_iter {
        let ad = checked(op(&d))?;
        let curv = dot(&d, &ad);
        if curv <= CURVATURE_EPS * dot(&d, &d) {
            if iterations == 0 {
                x = d;
            }
            reason = CgStop::NegativeCurvature;
            break;
        }
        let alpha = rz / curv;
        for k in 0..n {
            x[k] += alpha * d[k];
            r[k] -= alpha * ad[k];
        }
        iterations += 1;
        if iterations % REFRESH_EVERY == 0 {
            let ax = checked(op(&x))?;
            r.iter_mut().zip(rhs.iter().zip(&ax)).for_each(|(ri, (b, a))| *ri = b - a);
        }
        r_norm = norm2(&r);
        if r_norm <= tolerance {
            reason = CgStop::Tolerance;
            break;
        }
        z = checked(precond(&r))?;
        let rz_new = dot(&r, &z);
        let beta = rz_new / rz;
        rz = rz_new;
        for k in 0..n {
            d[k] = z[k] + beta * d[k];
        }
    }
    let ax = checked(op(&x))?;
    let residual_norm = ax.iter().zip(rhs).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
    Ok(CgReport { p: x, residual_norm, recurrence_residual_norm: r_norm, tolerance, iterations, reason })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ident(v: &[f64]) -> Vec<f64> {
        v.to_vec()
    }

    #[test]
    fn identity_system_one_iteration() {
        let rhs = vec![1.0, -2.0, 3.0];
        let rep = pcg_solve(ident, ident, &rhs, 1e-10, 250).unwrap();
        assert_eq!(rep.iterations, 1);
        assert_eq!(rep.p, rhs);
        assert_eq!(rep.reason, CgStop::Tolerance);
    }

    #[test]
    fn diagonal_system() {
        let d: Vec<f64> = (1..=20).map(|i| i as f64).collect();
        let rhs: Vec<f64> = (0..20).map(|i| ((i * 7) % 5) as f64 - 2.0).collect();
        let op = |v: &[f64]| v.iter().zip(&d).map(|(a, b)| a * b).collect::<Vec<_>>();
        let rep = pcg_solve(op, ident, &rhs, 1e-12, 250).unwrap();
        for k in 0..20 {
            let exact = rhs[k] / d[k];
            assert!((rep.p[k] - exact).abs() <= 1e-8 * exact.abs().max(1e-300) + 1e-14);
        }
        // exact preconditioner converges at once
        let inv = |v: &[f64]| v.iter().zip(&d).map(|(a, b)| a / b).collect::<Vec<_>>();
        assert_eq!(pcg_solve(op, inv, &rhs, 1e-12, 250).unwrap().iterations, 1);
    }

    #[test]
    fn zero_rhs_and_negative_curvature() {
        let rep = pcg_solve(ident, ident, &[0.0, 0.0], 0.1, 10).unwrap();
        assert_eq!((rep.iterations, rep.p.clone()), (0, vec![0.0, 0.0]));
        let rep = pcg_solve(|v: &[f64]| v.iter().map(|x| -x).collect(), ident, &[1.0, 2.0], 0.1, 10).unwrap();
        assert_eq!(rep.reason, CgStop::NegativeCurvature);
        assert!(dot(&rep.p, &[1.0, 2.0]) > 0.0);
    }

    #[test]
    fn forcing_examples() {
        assert_eq!(forcing_sequence(1, 0.1, 100.0), 0.1);
        assert_eq!(forcing_sequence(1, 0.1, 1e-8), 1e-4);
        assert!(forcing_sequence(3, 0.1, 1.0) < forcing_sequence(2, 0.1, 1.0));
    }
}
