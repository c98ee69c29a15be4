//! Log-domain accumulators for sum-product and max-product.

use crate::model::PatternPotential;

/// Streaming log-sum-exp.
#[derive(Debug, Clone, Copy)]
pub(crate) struct LogAcc {
    max: f64,
    sum: f64,
}

impl LogAcc {
    pub const EMPTY: LogAcc = LogAcc { max: f64::NEG_INFINITY, sum: 0.0 };

    #[inline]
    pub fn push(&mut self, x: f64) {
        if x == f64::NEG_INFINITY {
            return;
        }
        if x <= self.max {
            self.sum += (x - self.max).exp();
        } else {
            self.sum = self.sum * (self.max - x).exp() + 1.0;
            self.max = x;
        }
    }

    #[inline]
    pub fn value(&self) -> f64 {
        if self.sum == 0.0 {
            f64::NEG_INFINITY
        } else {
            self.max + self.sum.ln()
        }
    }
}

/// `ln(exp(a) + exp(b))`
#[inline]
pub(crate) fn log_add(a: f64, b: f64) -> f64 {
    let (hi, lo) = if a >= b { (a, b) } else { (b, a) };
    if lo == f64::NEG_INFINITY {
        hi
    } else {
        hi + (lo - hi).exp().ln_1p()
    }
}

/// `ln|exp(d) - 1|` without overflow or cancellation.
#[inline]
fn log_abs_expm1(d: f64) -> f64 {
    if d > 1.0 {
        d + (-(-d).exp()).ln_1p()
    } else if d < -1.0 {
        (-d.exp()).ln_1p()
    } else {
        d.exp_m1().abs().ln()
    }
}

/// A commutative semiring over log-domain values, plus the pattern
/// correction used to evaluate `ψ̄ Σ ν + Σ_pattern (ψ - ψ̄) ν`.
pub(crate) trait Semiring {
    type Acc: Copy;
    type Corr: Copy;
    const EMPTY: Self::Acc;
    const CORR_EMPTY: Self::Corr;

    fn push(acc: &mut Self::Acc, x: f64);
    fn value(acc: &Self::Acc) -> f64;

    /// Whether the pattern decomposition is exact and stable for this potential.
    fn pattern_usable(p: &PatternPotential) -> bool;
    /// Adds the correction for one pattern entry: `log_default`/`log_entry`
    /// are log factor values, `log_rest` the log of the remaining factors.
    fn corr_push(c: &mut Self::Corr, log_default: f64, log_entry: f64, log_rest: f64);
    /// Combines the default-path value with the corrections; `None` when the
    /// result lost too much precision to cancellation.
    fn finish(base: f64, c: &Self::Corr) -> Option<f64>;
}

pub(crate) struct LogSum;

#[derive(Debug, Clone, Copy)]
pub(crate) struct SignedAcc {
    pos: LogAcc,
    neg: LogAcc,
}

// Corrections cancelling more than this fraction of the positive mass are
// recomputed densely.
const CANCELLATION_LIMIT: f64 = 1.0 - 1e-4;

impl Semiring for LogSum {
    type Acc = LogAcc;
    type Corr = SignedAcc;
    const EMPTY: LogAcc = LogAcc::EMPTY;
    const CORR_EMPTY: SignedAcc = SignedAcc { pos: LogAcc::EMPTY, neg: LogAcc::EMPTY };

    #[inline]
    fn push(acc: &mut LogAcc, x: f64) {
        acc.push(x);
    }

    #[inline]
    fn value(acc: &LogAcc) -> f64 {
        acc.value()
    }

    fn pattern_usable(_: &PatternPotential) -> bool {
        true
    }

    #[inline]
    fn corr_push(c: &mut SignedAcc, log_default: f64, log_entry: f64, log_rest: f64) {
        let d = log_entry - log_default;
        if d == 0.0 {
            return;
        }
        let term = log_default + log_abs_expm1(d) + log_rest;
        if d > 0.0 {
            c.pos.push(term);
        } else {
            c.neg.push(term);
        }
    }

    fn finish(base: f64, c: &SignedAcc) -> Option<f64> {
        let pos = log_add(base, c.pos.value());
        let neg = c.neg.value();
        if neg == f64::NEG_INFINITY {
            return Some(pos);
        }
        let ratio = (neg - pos).exp();
        if ratio > CANCELLATION_LIMIT {
            None
        } else {
            Some(pos + (-ratio).ln_1p())
        }
    }
}

/// Max-product in the log domain (`max` plays the role of `+`).
pub(crate) struct MaxPlus;

impl Semiring for MaxPlus {
    type Acc = f64;
    type Corr = f64;
    const EMPTY: f64 = f64::NEG_INFINITY;
    const CORR_EMPTY: f64 = f64::NEG_INFINITY;

    #[inline]
    fn push(acc: &mut f64, x: f64) {
        if x > *acc {
            *acc = x;
        }
    }

    #[inline]
    fn value(acc: &f64) -> f64 {
        *acc
    }

    // Valid only when every entry scores at least as well as the default.
    fn pattern_usable(p: &PatternPotential) -> bool {
        p.entries_below_default()
    }

    #[inline]
    fn corr_push(c: &mut f64, _log_default: f64, log_entry: f64, log_rest: f64) {
        let v = log_entry + log_rest;
        if v > *c {
            *c = v;
        }
    }

    fn finish(base: f64, c: &f64) -> Option<f64> {
        Some(base.max(*c))
    }
}
