//! The smoothed Lagrangian dual, its gradient, and the non-smooth dual.
//!
//! For a decomposition into subgraphs `S` and dual variables `δ_ci(x_i)`,
//!
//! ```text
//! g(δ) = Σ_S smin_{x_S} Σ_{c∈S} (θ_c(x_c) - Σ_{i∈c} δ_ci(x_i))
//!      + Σ_i smin_{x_i} (θ_i(x_i) + Σ_{c∋i} δ_ci(x_i))
//! ```
//!
//! with `smin(v) = -(1/τ) log Σ exp(-τ v)`. Solvers minimize `f = -g`, whose
//! gradient entry at `(c, i, x_i)` is `μ_ci(x_i) - μ_i(x_i)`.

use std::ops::Range;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::model::{Decomposition, MrfModel, Subgraph};
use crate::sum_product::{self, calibrate_chain, chain_log_partition, Frame, LogAcc, LogSum, MaxPlus, Semiring};

/// Floor applied to probabilities before taking logarithms.
pub const MARGINAL_FLOOR: f64 = 1e-300;

/// `-(1/τ) log Σ exp(-τ v)`, max-shifted.
pub fn smin(values: &[f64], tau: f64) -> Result<f64> {
    if values.is_empty() {
        return Err(Error::InvalidInput("smin of an empty list".into()));
    }
    if !(tau > 0.0) {
        return Err(Error::InvalidInput(format!("temperature {tau} must be positive")));
    }
    let mut acc = LogAcc::EMPTY;
    values.iter().for_each(|&v| acc.push(-tau * v));
    Ok(-acc.value() / tau)
}

/// Softmin weights `exp(-τ v) / Σ exp(-τ v)` and the smin value.
fn softmin_weights(values: &[f64], tau: f64) -> (Vec<f64>, f64) {
    let mn = values.iter().copied().fold(f64::INFINITY, f64::min);
    let mut w: Vec<f64> = values.iter().map(|&v| (-tau * (v - mn)).exp()).collect();
    let s: f64 = w.iter().sum();
    w.iter_mut().for_each(|x| *x /= s);
    (w, mn - s.ln() / tau)
}

/// Offsets of the blocks `δ_ci(·)` inside the flat dual vector.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DualLayout {
    offsets: Vec<Vec<usize>>,
    dim: usize,
}

impl DualLayout {
    pub fn new(model: &MrfModel) -> Self {
        let mut dim = 0;
        let offsets = (0..model.cliques().len())
            .map(|c| {
                model
                    .clique_dims(c)
                    .iter()
                    .map(|&l| {
                        let o = dim;
                        dim += l;
                        o
                    })
                    .collect()
            })
            .collect();
        Self { offsets, dim }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn offset(&self, c: usize, pos: usize) -> usize {
        self.offsets[c][pos]
    }

    pub fn clique_offsets(&self, c: usize) -> &[usize] {
        &self.offsets[c]
    }

    /// Range of the block `δ_c,pos(·)` for a node with `labels` labels.
    pub fn block(&self, c: usize, pos: usize, labels: usize) -> Range<usize> {
        let o = self.offsets[c][pos];
        o..o + labels
    }

    /// Contiguous range covering every block of clique `c`.
    pub fn clique_range(&self, c: usize) -> Range<usize> {
        let start = self.offsets[c].first().copied().unwrap_or(0);
        let end = self.offsets.get(c + 1).and_then(|o| o.first().copied()).unwrap_or(self.dim);
        start..end
    }
}

/// Softmin-weighted marginals at a dual point.
#[derive(Debug, Clone, PartialEq)]
pub struct MarginalCache {
    /// `μ_ci` per clique and clique position.
    pub clique_nodes: Vec<Vec<Vec<f64>>>,
    /// `μ_i` per node.
    pub nodes: Vec<Vec<f64>>,
    /// Pair marginals `μ_cij` per clique, ordered by
    /// [`sum_product::pair_index`]; present only for single-clique subgraphs.
    pub pairs: Vec<Option<Vec<Vec<f64>>>>,
}

/// Objective value, gradient and marginals from one oracle call.
#[derive(Debug, Clone)]
pub struct Evaluation {
    /// `f = -g`.
    pub f: f64,
    pub grad: Vec<f64>,
    pub marginals: MarginalCache,
}

/// The smoothed dual of a model under a decomposition at temperature `τ`.
#[derive(Debug, Clone)]
pub struct SmoothObjective<'a> {
    model: &'a MrfModel,
    decomposition: &'a Decomposition,
    layout: DualLayout,
    tau: f64,
}

struct SubgraphTerm {
    log_partition: f64,
    // (clique, μ_ci per position, pairs)
    cliques: Vec<(usize, Vec<Vec<f64>>, Option<Vec<Vec<f64>>>)>,
}

impl<'a> SmoothObjective<'a> {
    pub fn new(model: &'a MrfModel, decomposition: &'a Decomposition, tau: f64) -> Result<Self> {
        if !(tau > 0.0 && tau.is_finite()) {
            return Err(Error::InvalidInput(format!("temperature {tau} must be positive")));
        }
        let nc = model.cliques().len();
        let mut seen = vec![false; nc];
        for s in decomposition.subgraphs() {
            for &c in s.cliques() {
                if c >= nc || std::mem::replace(&mut seen[c], true) {
                    return Err(Error::InvalidDecomposition(format!("clique {c} missing or repeated")));
                }
            }
        }
        if seen.iter().any(|s| !s) {
            return Err(Error::InvalidDecomposition("decomposition does not cover every clique".into()));
        }
        Ok(Self { model, decomposition, layout: DualLayout::new(model), tau })
    }

    pub fn model(&self) -> &'a MrfModel {
        self.model
    }

    pub fn decomposition(&self) -> &'a Decomposition {
        self.decomposition
    }

    pub fn layout(&self) -> &DualLayout {
        &self.layout
    }

    pub fn dim(&self) -> usize {
        self.layout.dim()
    }

    pub fn tau(&self) -> f64 {
        self.tau
    }

    pub fn set_tau(&mut self, tau: f64) -> Result<()> {
        if !(tau > 0.0 && tau.is_finite()) {
            return Err(Error::InvalidInput(format!("temperature {tau} must be positive")));
        }
        self.tau = tau;
        Ok(())
    }

    fn check(&self, delta: &[f64]) -> Result<()> {
        if delta.len() != self.dim() {
            return Err(Error::DimensionMismatch { expected: self.dim(), got: delta.len() });
        }
        if delta.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numerical("non-finite dual variable".into()));
        }
        Ok(())
    }

    /// Per clique position log node factors `scale·δ`; chains fold every
    /// node's total into the first clique that contains it.
    pub(crate) fn node_logs(&self, sub: &Subgraph, delta: &[f64], scale: f64) -> Vec<Vec<Vec<f64>>> {
        let model = self.model;
        let block = |c: usize, p: usize| {
            let l = model.clique_dims(c)[p];
            &delta[self.layout.block(c, p, l)]
        };
        match sub {
            Subgraph::Clique(c) => {
                vec![(0..model.clique(*c).order()).map(|p| block(*c, p).iter().map(|v| scale * v).collect()).collect()]
            }
            Subgraph::Chain { cliques, .. } => {
                let mut logs: Vec<Vec<Vec<f64>>> =
                    cliques.iter().map(|&c| model.clique_dims(c).iter().map(|&l| vec![0.0; l]).collect()).collect();
                let mut owner: Vec<(usize, usize, usize)> = Vec::new();
                for (t, &c) in cliques.iter().enumerate() {
                    for (p, &i) in model.clique(c).nodes().iter().enumerate() {
                        let (ot, op) = match owner.iter().find(|o| o.0 == i) {
                            Some(&(_, ot, op)) => (ot, op),
                            None => {
                                owner.push((i, t, p));
                                (t, p)
                            }
                        };
                        for (dst, v) in logs[ot][op].iter_mut().zip(block(c, p)) {
                            *dst += scale * v;
                        }
                    }
                }
                logs
            }
        }
    }

    fn subgraph_log_partition<S: Semiring>(&self, sub: &Subgraph, delta: &[f64], scale: f64) -> Result<f64> {
        let logs = self.node_logs(sub, delta, scale);
        let z = match sub {
            Subgraph::Clique(c) => {
                let frame = Frame {
                    dims: self.model.clique_dims(*c),
                    potential: self.model.clique(*c).potential(),
                    scale,
                    node_logs: &logs[0],
                };
                sum_product::clique_log_partition::<S>(&frame)
            }
            Subgraph::Chain { cliques, separators } => {
                chain_log_partition::<S>(self.model, cliques, separators, &logs, scale)?
            }
        };
        if !z.is_finite() {
            return Err(Error::Underflow(format!("subgraph partition value {z}")));
        }
        Ok(z)
    }

    fn node_values(&self, i: usize, delta: &[f64]) -> Vec<f64> {
        let mut v = self.model.unary(i).to_vec();
        for &(c, p) in self.model.memberships(i) {
            let o = self.layout.offset(c, p);
            for (x, vx) in v.iter_mut().enumerate() {
                *vx += delta[o + x];
            }
        }
        v
    }

    /// The smoothed dual `g(δ)`.
    pub fn value(&self, delta: &[f64]) -> Result<f64> {
        self.check(delta)?;
        let tau = self.tau;
        let subs = self
            .decomposition
            .subgraphs()
            .par_iter()
            .map(|s| self.subgraph_log_partition::<LogSum>(s, delta, tau).map(|z| -z / tau))
            .collect::<Result<Vec<f64>>>()?;
        let nodes: Vec<f64> = (0..self.model.node_count())
            .into_par_iter()
            .map(|i| softmin_weights(&self.node_values(i, delta), tau).1)
            .collect();
        Ok(subs.iter().sum::<f64>() + nodes.iter().sum::<f64>())
    }

    /// The minimized objective `f = -g`.
    pub fn objective(&self, delta: &[f64]) -> Result<f64> {
        Ok(-self.value(delta)?)
    }

    /// Non-smooth dual: the same sums with exact minima.
    pub fn nonsmooth_dual(&self, delta: &[f64]) -> Result<f64> {
        self.check(delta)?;
        let subs = self
            .decomposition
            .subgraphs()
            .par_iter()
            .map(|s| self.subgraph_log_partition::<MaxPlus>(s, delta, 1.0).map(|z| -z))
            .collect::<Result<Vec<f64>>>()?;
        let nodes: Vec<f64> = (0..self.model.node_count())
            .into_par_iter()
            .map(|i| self.node_values(i, delta).into_iter().fold(f64::INFINITY, f64::min))
            .collect();
        Ok(subs.iter().sum::<f64>() + nodes.iter().sum::<f64>())
    }

    fn subgraph_term(&self, sub: &Subgraph, delta: &[f64], pairs: bool) -> Result<SubgraphTerm> {
        let tau = self.tau;
        let logs = self.node_logs(sub, delta, tau);
        match sub {
            Subgraph::Clique(c) => {
                let b = sum_product::clique_beliefs(self.model, *c, tau, &logs[0], pairs)?;
                let pairs = pairs.then_some(b.pairs);
                Ok(SubgraphTerm { log_partition: b.log_partition, cliques: vec![(*c, b.nodes, pairs)] })
            }
            Subgraph::Chain { cliques, separators } => {
                let cal = calibrate_chain(self.model, cliques, separators, logs, tau)?;
                let cl = cliques.iter().enumerate().map(|(t, &c)| (c, cal.node_marginals(t).to_vec(), None)).collect();
                Ok(SubgraphTerm { log_partition: cal.log_partition(), cliques: cl })
            }
        }
    }

    /// Objective, gradient and marginals. Pair marginals are gathered for
    /// single-clique subgraphs when `pairs` is set.
    pub fn evaluate(&self, delta: &[f64], pairs: bool) -> Result<Evaluation> {
        self.check(delta)?;
        let tau = self.tau;
        let model = self.model;
        let terms = self
            .decomposition
            .subgraphs()
            .par_iter()
            .map(|s| self.subgraph_term(s, delta, pairs))
            .collect::<Result<Vec<_>>>()?;
        let node_terms: Vec<(Vec<f64>, f64)> = (0..model.node_count())
            .into_par_iter()
            .map(|i| softmin_weights(&self.node_values(i, delta), tau))
            .collect();

        let nc = model.cliques().len();
        let mut clique_nodes = vec![Vec::new(); nc];
        let mut pair_tabs = vec![None; nc];
        let mut g = 0.0;
        for t in terms {
            if !t.log_partition.is_finite() {
                return Err(Error::Underflow(format!("subgraph partition value {}", t.log_partition)));
            }
            g -= t.log_partition / tau;
            for (c, nodes, pairs) in t.cliques {
                clique_nodes[c] = nodes;
                pair_tabs[c] = pairs;
            }
        }
        let mut nodes = Vec::with_capacity(node_terms.len());
        for (mu, s) in node_terms {
            g += s;
            nodes.push(mu);
        }

        let mut grad = vec![0.0; self.dim()];
        for c in 0..nc {
            for (p, &i) in model.clique(c).nodes().iter().enumerate() {
                let o = self.layout.offset(c, p);
                for (x, (&a, &b)) in clique_nodes[c][p].iter().zip(&nodes[i]).enumerate() {
                    grad[o + x] = a - b;
                }
            }
        }
        if !g.is_finite() {
            return Err(Error::Numerical(format!("non-finite dual value {g}")));
        }
        Ok(Evaluation { f: -g, grad, marginals: MarginalCache { clique_nodes, nodes, pairs: pair_tabs } })
    }

    /// Local joint distribution of every clique (row-major over its domain).
    /// Chains use the chain distribution restricted to the clique.
    pub fn clique_distributions(&self, delta: &[f64]) -> Result<Vec<Vec<f64>>> {
        self.check(delta)?;
        let tau = self.tau;
        let per_sub = self
            .decomposition
            .subgraphs()
            .par_iter()
            .map(|s| -> Result<Vec<(usize, Vec<f64>)>> {
                let logs = self.node_logs(s, delta, tau);
                match s {
                    Subgraph::Clique(c) => {
                        let frame = Frame {
                            dims: self.model.clique_dims(*c),
                            potential: self.model.clique(*c).potential(),
                            scale: tau,
                            node_logs: &logs[0],
                        };
                        Ok(vec![(*c, sum_product::clique_joint(&frame))])
                    }
                    Subgraph::Chain { cliques, separators } => {
                        let cal = calibrate_chain(self.model, cliques, separators, logs, tau)?;
                        cliques.iter().enumerate().map(|(t, &c)| Ok((c, cal.clique_joint(self.model, t)?))).collect()
                    }
                }
            })
            .collect::<Result<Vec<_>>>()?;
        let mut out = vec![Vec::new(); self.model.cliques().len()];
        for (c, d) in per_sub.into_iter().flatten() {
            out[c] = d;
        }
        Ok(out)
    }
}

/// `g(δ)` for an objective.
pub fn eval_smooth_dual(obj: &SmoothObjective<'_>, delta: &[f64]) -> Result<f64> {
    obj.value(delta)
}

/// Non-smooth dual value at `δ`.
pub fn eval_nonsmooth_dual(model: &MrfModel, decomposition: &Decomposition, delta: &[f64]) -> Result<f64> {
    SmoothObjective::new(model, decomposition, 1.0)?.nonsmooth_dual(delta)
}

/// Gradient of `f = -g` and the marginals it was built from.
pub fn gradient(obj: &SmoothObjective<'_>, delta: &[f64]) -> Result<(Vec<f64>, MarginalCache)> {
    let e = obj.evaluate(delta, obj.decomposition().is_singleton())?;
    Ok((e.grad, e.marginals))
}
