//! Kernels over a single clique: messages, partition values and marginals.
//!
//! A clique's local factor is `exp(-scale·θ_c(x_c)) · ∏_p exp(node_logs[p][x_p])`,
//! optionally multiplied by incoming log-messages over subsets of its
//! positions. All work happens in the log domain.

use super::semiring::{LogAcc, LogSum, Semiring};
use crate::model::{next_labeling, PatternPotential, Potential};

/// A subset of clique positions, enumerated row-major in the listed order.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub(crate) struct Scope {
    pub pos: Vec<usize>,
    pub dims: Vec<usize>,
}

impl Scope {
    pub fn new(pos: Vec<usize>, clique_dims: &[usize]) -> Self {
        let dims = pos.iter().map(|&p| clique_dims[p]).collect();
        Self { pos, dims }
    }

    /// Positions of `nodes` (in the given order) within `clique_nodes`.
    pub fn of_nodes(clique_nodes: &[usize], nodes: &[usize], clique_dims: &[usize]) -> Option<Self> {
        let pos = nodes.iter().map(|n| clique_nodes.iter().position(|m| m == n)).collect::<Option<Vec<_>>>()?;
        Some(Self::new(pos, clique_dims))
    }

    pub fn size(&self) -> usize {
        self.dims.iter().product()
    }

    pub fn contains(&self, p: usize) -> bool {
        self.pos.contains(&p)
    }

    /// Row-major index of the restriction of clique labeling `x`.
    #[inline]
    pub fn index(&self, x: &[usize]) -> usize {
        let mut idx = 0;
        for (&p, &d) in self.pos.iter().zip(&self.dims) {
            idx = idx * d + x[p];
        }
        idx
    }
}

/// Calls `f(counter, x)` for every labeling of `scope`, written into `x` at
/// the scope's positions. `counter` equals the row-major scope index.
fn for_each(scope: &Scope, x: &mut [usize], mut f: impl FnMut(usize, &[usize])) {
    for &p in &scope.pos {
        x[p] = 0;
    }
    let k = scope.pos.len();
    let mut counter = 0;
    loop {
        f(counter, x);
        counter += 1;
        let mut j = k;
        loop {
            if j == 0 {
                return;
            }
            j -= 1;
            let p = scope.pos[j];
            x[p] += 1;
            if x[p] < scope.dims[j] {
                break;
            }
            x[p] = 0;
        }
    }
}

/// Log-message over a scope of the clique.
#[derive(Clone, Copy)]
pub(crate) struct Incoming<'a> {
    pub scope: &'a Scope,
    pub log: &'a [f64],
}

impl Incoming<'_> {
    #[inline]
    fn at(&self, x: &[usize]) -> f64 {
        self.log[self.scope.index(x)]
    }
}

#[derive(Clone, Copy)]
pub(crate) struct Frame<'a> {
    pub dims: &'a [usize],
    pub potential: &'a Potential,
    pub scale: f64,
    pub node_logs: &'a [Vec<f64>],
}

impl Frame<'_> {
    #[inline]
    fn log_psi(&self, flat: usize) -> f64 {
        -self.scale
            * match self.potential {
                Potential::Dense(t) => t[flat],
                Potential::Pattern(p) => p.lookup_flat(flat),
            }
    }

    #[inline]
    fn node_sum(&self, x: &[usize]) -> f64 {
        self.node_logs.iter().zip(x).map(|(nl, &xi)| nl[xi]).sum()
    }

    fn node_sum_over(&self, x: &[usize], pos: impl Iterator<Item = usize>) -> f64 {
        pos.map(|p| self.node_logs[p][x[p]]).sum()
    }

    fn pattern(&self) -> Option<&PatternPotential> {
        match self.potential {
            Potential::Pattern(p) => Some(p),
            Potential::Dense(_) => None,
        }
    }

    fn log_norm(&self, p: usize) -> f64 {
        let mut acc = LogAcc::EMPTY;
        self.node_logs[p].iter().for_each(|&v| acc.push(v));
        acc.value()
    }
}

fn sum_incoming(inc: &[Incoming<'_>], x: &[usize]) -> f64 {
    inc.iter().map(|m| m.at(x)).sum()
}

/// `⊕_{x ∖ target} ψ·ν·incoming` by full enumeration of the clique domain.
pub(crate) fn dense_message<S: Semiring>(
    frame: &Frame<'_>,
    incoming: Option<Incoming<'_>>,
    target: &Scope,
) -> Vec<f64> {
    let mut acc = vec![S::EMPTY; target.size()];
    let mut x = vec![0; frame.dims.len()];
    let inc: Vec<Incoming<'_>> = incoming.into_iter().collect();
    let mut flat = 0;
    loop {
        let w = frame.log_psi(flat) + frame.node_sum(&x) + sum_incoming(&inc, &x);
        S::push(&mut acc[target.index(&x)], w);
        flat += 1;
        if !next_labeling(frame.dims, &mut x) {
            break;
        }
    }
    acc.iter().map(S::value).collect()
}

/// Same result as [`dense_message`] using the pattern decomposition; `None`
/// when the potential is dense, the semiring rejects it, or the signed sum
/// cancels too much.
pub(crate) fn pattern_message<S: Semiring>(
    frame: &Frame<'_>,
    incoming: Option<Incoming<'_>>,
    target: &Scope,
) -> Option<Vec<f64>> {
    let pat = frame.pattern()?;
    if !S::pattern_usable(pat) {
        return None;
    }
    let k = frame.dims.len();
    let empty = Scope::default();
    let unit = [0.0];
    let inc = incoming.unwrap_or(Incoming { scope: &empty, log: &unit });
    let m = inc.scope;
    let w_scope = Scope::new(target.pos.iter().copied().filter(|&p| m.contains(p)).collect(), frame.dims);

    let mut x = vec![0; k];
    let mut u = vec![S::EMPTY; w_scope.size()];
    for_each(m, &mut x, |cnt, x| {
        let w = inc.log[cnt] + frame.node_sum_over(x, m.pos.iter().copied().filter(|&p| !target.contains(p)));
        S::push(&mut u[w_scope.index(x)], w);
    });
    let u: Vec<f64> = u.iter().map(S::value).collect();

    let free = (0..k).filter(|&p| !m.contains(p) && !target.contains(p));
    let c_free: f64 = free
        .map(|p| {
            let mut acc = S::EMPTY;
            frame.node_logs[p].iter().for_each(|&v| S::push(&mut acc, v));
            S::value(&acc)
        })
        .sum();
    let log_default = -frame.scale * pat.default_value();

    let mut base = vec![0.0; target.size()];
    for_each(target, &mut x, |cnt, x| {
        base[cnt] = log_default + c_free + u[w_scope.index(x)] + frame.node_sum_over(x, target.pos.iter().copied());
    });

    let mut corr = vec![S::CORR_EMPTY; target.size()];
    for e in 0..pat.len() {
        let lab = pat.labeling(e);
        let rest = frame.node_sum(lab) + inc.at(lab);
        S::corr_push(&mut corr[target.index(lab)], log_default, -frame.scale * pat.value(e), rest);
    }
    base.iter().zip(&corr).map(|(&b, c)| S::finish(b, c)).collect()
}

/// Pattern path when available, dense enumeration otherwise.
pub(crate) fn message<S: Semiring>(frame: &Frame<'_>, incoming: Option<Incoming<'_>>, target: &Scope) -> Vec<f64> {
    pattern_message::<S>(frame, incoming, target).unwrap_or_else(|| dense_message::<S>(frame, incoming, target))
}

/// Log-partition of the clique's local distribution.
pub(crate) fn log_partition<S: Semiring>(frame: &Frame<'_>, incoming: Option<Incoming<'_>>) -> f64 {
    message::<S>(frame, incoming, &Scope::default())[0]
}

/// Normalized marginals of a clique's local distribution.
#[derive(Debug, Clone, PartialEq)]
pub struct CliqueBeliefs {
    pub log_partition: f64,
    /// Per clique position, a probability vector over its labels.
    pub nodes: Vec<Vec<f64>>,
    /// Pair tables for positions `p < q` in lexicographic order, row-major
    /// `(x_p, x_q)`. Empty unless requested.
    pub pairs: Vec<Vec<f64>>,
}

/// Index of the pair `(p, q)`, `p < q`, among `k` positions.
pub fn pair_index(k: usize, p: usize, q: usize) -> usize {
    debug_assert!(p < q && q < k);
    p * (2 * k - p - 1) / 2 + (q - p - 1)
}

fn normalize(v: &mut [f64]) {
    let s: f64 = v.iter().sum();
    v.iter_mut().for_each(|x| *x /= s);
}

// Converts per-label log masses into probabilities.
fn log_masses_to_probs(logs: &[f64]) -> Vec<f64> {
    let mx = logs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut p: Vec<f64> = logs.iter().map(|&v| (v - mx).exp()).collect();
    normalize(&mut p);
    p
}

pub(crate) fn beliefs(
    frame: &Frame<'_>,
    left: Option<Incoming<'_>>,
    right: Option<Incoming<'_>>,
    pairs: bool,
) -> CliqueBeliefs {
    let pattern = if pairs && (left.is_some() || right.is_some()) {
        None
    } else if pairs {
        pattern_beliefs_with_pairs(frame)
    } else {
        pattern_beliefs(frame, left, right)
    };
    pattern.unwrap_or_else(|| dense_beliefs(frame, left, right, pairs))
}

fn dense_beliefs(
    frame: &Frame<'_>,
    left: Option<Incoming<'_>>,
    right: Option<Incoming<'_>>,
    pairs: bool,
) -> CliqueBeliefs {
    let k = frame.dims.len();
    let inc: Vec<Incoming<'_>> = left.into_iter().chain(right).collect();
    let mut logw = Vec::with_capacity(frame.dims.iter().product());
    let mut x = vec![0; k];
    let mut flat = 0;
    loop {
        logw.push(frame.log_psi(flat) + frame.node_sum(&x) + sum_incoming(&inc, &x));
        flat += 1;
        if !next_labeling(frame.dims, &mut x) {
            break;
        }
    }
    let mx = logw.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut total = 0.0;
    let mut nodes: Vec<Vec<f64>> = frame.dims.iter().map(|&d| vec![0.0; d]).collect();
    let mut pair_tabs: Vec<Vec<f64>> = Vec::new();
    if pairs {
        for p in 0..k {
            for q in p + 1..k {
                pair_tabs.push(vec![0.0; frame.dims[p] * frame.dims[q]]);
            }
        }
    }
    x.iter_mut().for_each(|v| *v = 0);
    for &w in &logw {
        let e = (w - mx).exp();
        total += e;
        for p in 0..k {
            nodes[p][x[p]] += e;
        }
        if pairs {
            let mut idx = 0;
            for p in 0..k {
                for q in p + 1..k {
                    pair_tabs[idx][x[p] * frame.dims[q] + x[q]] += e;
                    idx += 1;
                }
            }
        }
        next_labeling(frame.dims, &mut x);
    }
    nodes.iter_mut().for_each(|v| v.iter_mut().for_each(|a| *a /= total));
    pair_tabs.iter_mut().for_each(|v| v.iter_mut().for_each(|a| *a /= total));
    CliqueBeliefs { log_partition: mx + total.ln(), nodes, pairs: pair_tabs }
}

/// Node marginals with up to two incoming messages via the pattern split.
fn pattern_beliefs(
    frame: &Frame<'_>,
    left: Option<Incoming<'_>>,
    right: Option<Incoming<'_>>,
) -> Option<CliqueBeliefs> {
    let pat = frame.pattern()?;
    let k = frame.dims.len();
    let empty = Scope::default();
    let unit = [0.0];
    let alpha = left.unwrap_or(Incoming { scope: &empty, log: &unit });
    let gamma = right.unwrap_or(Incoming { scope: &empty, log: &unit });
    let (m, n) = (alpha.scope, gamma.scope);
    let w_scope = Scope::new(m.pos.iter().copied().filter(|&p| n.contains(p)).collect(), frame.dims);
    let mut x = vec![0; k];

    // reduce one message onto the shared positions
    let reduce = |inc: &Incoming<'_>, other: &Scope, x: &mut [usize]| {
        let mut acc = vec![LogAcc::EMPTY; w_scope.size()];
        for_each(inc.scope, x, |cnt, x| {
            let w =
                inc.log[cnt] + frame.node_sum_over(x, inc.scope.pos.iter().copied().filter(|&p| !other.contains(p)));
            acc[w_scope.index(x)].push(w);
        });
        acc.iter().map(LogAcc::value).collect::<Vec<_>>()
    };
    let u = reduce(&alpha, n, &mut x);
    let v = reduce(&gamma, m, &mut x);

    let free: Vec<usize> = (0..k).filter(|&p| !m.contains(p) && !n.contains(p)).collect();
    let c_free: Vec<f64> = free.iter().map(|&p| frame.log_norm(p)).collect();
    let c_r: f64 = c_free.iter().sum();

    let mut node_acc: Vec<Vec<LogAcc>> = frame.dims.iter().map(|&d| vec![LogAcc::EMPTY; d]).collect();
    let mut z_acc = LogAcc::EMPTY;
    for_each(m, &mut x, |cnt, x| {
        let w = alpha.log[cnt] + frame.node_sum_over(x, m.pos.iter().copied()) + v[w_scope.index(x)] + c_r;
        z_acc.push(w);
        for &p in &m.pos {
            node_acc[p][x[p]].push(w);
        }
    });
    for_each(n, &mut x, |cnt, x| {
        let w = gamma.log[cnt] + frame.node_sum_over(x, n.pos.iter().copied()) + u[w_scope.index(x)] + c_r;
        for &p in n.pos.iter().filter(|&&p| !m.contains(p)) {
            node_acc[p][x[p]].push(w);
        }
    });
    let z_f = z_acc.value();
    for (&p, &c) in free.iter().zip(&c_free) {
        for (acc, &nl) in node_acc[p].iter_mut().zip(&frame.node_logs[p]) {
            acc.push(z_f - c + nl);
        }
    }

    let log_default = -frame.scale * pat.default_value();
    let mut z_corr = LogSum::CORR_EMPTY;
    let mut node_corr: Vec<Vec<_>> = frame.dims.iter().map(|&d| vec![LogSum::CORR_EMPTY; d]).collect();
    for e in 0..pat.len() {
        let lab = pat.labeling(e);
        let rest = alpha.at(lab) + gamma.at(lab) + frame.node_sum(lab);
        let le = -frame.scale * pat.value(e);
        LogSum::corr_push(&mut z_corr, log_default, le, rest);
        for p in 0..k {
            LogSum::corr_push(&mut node_corr[p][lab[p]], log_default, le, rest);
        }
    }
    let log_partition = LogSum::finish(log_default + z_f, &z_corr)?;
    let mut nodes = Vec::with_capacity(k);
    for p in 0..k {
        let logs = node_acc[p]
            .iter()
            .zip(&node_corr[p])
            .map(|(a, c)| LogSum::finish(log_default + a.value(), c))
            .collect::<Option<Vec<f64>>>()?;
        nodes.push(log_masses_to_probs(&logs));
    }
    Some(CliqueBeliefs { log_partition, nodes, pairs: Vec::new() })
}

/// Node and pair marginals of a clique with no incoming messages, where
/// the default part of the distribution factorizes over positions.
fn pattern_beliefs_with_pairs(frame: &Frame<'_>) -> Option<CliqueBeliefs> {
    let pat = frame.pattern()?;
    let k = frame.dims.len();
    let dims = frame.dims;
    let c: Vec<f64> = (0..k).map(|p| frame.log_norm(p)).collect();
    let c_all: f64 = c.iter().sum();
    let log_default = -frame.scale * pat.default_value();
    let nl = frame.node_logs;

    let mut z_corr = LogSum::CORR_EMPTY;
    let mut node_corr: Vec<Vec<_>> = dims.iter().map(|&d| vec![LogSum::CORR_EMPTY; d]).collect();
    let mut pair_corr: Vec<Vec<_>> = Vec::new();
    for p in 0..k {
        for q in p + 1..k {
            pair_corr.push(vec![LogSum::CORR_EMPTY; dims[p] * dims[q]]);
        }
    }
    for e in 0..pat.len() {
        let lab = pat.labeling(e);
        let rest = frame.node_sum(lab);
        let le = -frame.scale * pat.value(e);
        LogSum::corr_push(&mut z_corr, log_default, le, rest);
        let mut idx = 0;
        for p in 0..k {
            LogSum::corr_push(&mut node_corr[p][lab[p]], log_default, le, rest);
            for q in p + 1..k {
                LogSum::corr_push(&mut pair_corr[idx][lab[p] * dims[q] + lab[q]], log_default, le, rest);
                idx += 1;
            }
        }
    }
    let log_partition = LogSum::finish(log_default + c_all, &z_corr)?;
    let mut nodes = Vec::with_capacity(k);
    for p in 0..k {
        let logs = (0..dims[p])
            .map(|a| LogSum::finish(log_default + c_all - c[p] + nl[p][a], &node_corr[p][a]))
            .collect::<Option<Vec<f64>>>()?;
        nodes.push(log_masses_to_probs(&logs));
    }
    let mut pairs = Vec::with_capacity(pair_corr.len());
    let mut idx = 0;
    for p in 0..k {
        for q in p + 1..k {
            let base = log_default + c_all - c[p] - c[q];
            let mut tab = Vec::with_capacity(dims[p] * dims[q]);
            for a in 0..dims[p] {
                for b in 0..dims[q] {
                    let v = LogSum::finish(base + nl[p][a] + nl[q][b], &pair_corr[idx][a * dims[q] + b])?;
                    tab.push((v - log_partition).exp());
                }
            }
            pairs.push(tab);
            idx += 1;
        }
    }
    Some(CliqueBeliefs { log_partition, nodes, pairs })
}

/// Normalized joint distribution over the clique domain (row-major).
pub(crate) fn joint(frame: &Frame<'_>, left: Option<Incoming<'_>>, right: Option<Incoming<'_>>) -> Vec<f64> {
    let inc: Vec<Incoming<'_>> = left.into_iter().chain(right).collect();
    let mut logw = Vec::with_capacity(frame.dims.iter().product());
    let mut x = vec![0; frame.dims.len()];
    let mut flat = 0;
    loop {
        logw.push(frame.log_psi(flat) + frame.node_sum(&x) + sum_incoming(&inc, &x));
        flat += 1;
        if !next_labeling(frame.dims, &mut x) {
            break;
        }
    }
    log_masses_to_probs(&logw)
}
