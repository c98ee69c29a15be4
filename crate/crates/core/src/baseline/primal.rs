//! Rounding, feasible primal recovery and primal-dual gaps.

use crate::error::{Error, Result};
use crate::model::{next_labeling, Decomposition, Labeling, MrfModel, Subgraph};
use crate::smooth_dual::{MarginalCache, MARGINAL_FLOOR};

/// Tolerance on marginalization residuals for a point to count as feasible.
pub const FEASIBILITY_TOL: f64 = 1e-8;

/// Largest clique domain for which clique beliefs are materialized.
pub const PRIMAL_DOMAIN_CAP: usize = 1 << 20;

/// Fractional node and clique beliefs in the local polytope.
#[derive(Debug, Clone, PartialEq)]
pub struct PrimalPoint {
    pub nodes: Vec<Vec<f64>>,
    /// Row-major over each clique's domain.
    pub cliques: Vec<Vec<f64>>,
}

/// Per node, the label with the largest marginal (smallest index on ties).
pub fn round_primal(marginals: &MarginalCache) -> Labeling {
    marginals
        .nodes
        .iter()
        .map(|mu| {
            let mut best = 0;
            for (x, &v) in mu.iter().enumerate() {
                if v > mu[best] {
                    best = x;
                }
            }
            best
        })
        .collect()
}

fn position_marginal(dims: &[usize], table: &[f64], p: usize) -> Vec<f64> {
    let mut m = vec![0.0; dims[p]];
    let mut x = vec![0; dims.len()];
    for &v in table {
        m[x[p]] += v;
        next_labeling(dims, &mut x);
    }
    m
}

impl PrimalPoint {
    /// Largest `|Σ_{x_c∖i} φ_c - φ_i|` over cliques, members and labels, and
    /// the largest normalization error.
    pub fn feasibility_residual(&self, model: &MrfModel) -> f64 {
        let mut worst: f64 = 0.0;
        for phi in &self.nodes {
            worst = worst.max((phi.iter().sum::<f64>() - 1.0).abs());
            worst = worst.max(phi.iter().fold(0.0f64, |m, &v| m.max(-v)));
        }
        for (c, table) in self.cliques.iter().enumerate() {
            let dims = model.clique_dims(c);
            worst = worst.max((table.iter().sum::<f64>() - 1.0).abs());
            worst = worst.max(table.iter().fold(0.0f64, |m, &v| m.max(-v)));
            for (p, &i) in model.clique(c).nodes().iter().enumerate() {
                let m = position_marginal(dims, table, p);
                for (a, b) in m.iter().zip(&self.nodes[i]) {
                    worst = worst.max((a - b).abs());
                }
            }
        }
        worst
    }

    pub fn is_feasible(&self, model: &MrfModel) -> bool {
        self.feasibility_residual(model) <= FEASIBILITY_TOL
    }

    /// `Σ_c ⟨φ_c, θ_c⟩ + Σ_i ⟨φ_i, θ_i⟩`
    pub fn lp_objective(&self, model: &MrfModel) -> f64 {
        let mut total = 0.0;
        for (i, phi) in self.nodes.iter().enumerate() {
            total += phi.iter().zip(model.unary(i)).map(|(a, b)| a * b).sum::<f64>();
        }
        for (c, table) in self.cliques.iter().enumerate() {
            let dims = model.clique_dims(c);
            let cl = model.clique(c);
            let mut x = vec![0; dims.len()];
            for &v in table {
                if v != 0.0 {
                    total += v * cl.value(dims, &x);
                }
                next_labeling(dims, &mut x);
            }
        }
        total
    }
}

/// Builds a feasible primal point from softmin marginals and the local clique
/// distributions they came from.
///
/// Node beliefs are the node marginals. Each clique distribution is
/// reweighted towards them by `∏_i μ_i(x_i)/μ_ci(x_i)`, renormalized, shifted
/// by a separable correction that makes every marginal exact, and finally
/// mixed with `∏_i φ_i` just enough to remove negative entries.
pub fn recover_feasible_primal(
    model: &MrfModel,
    marginals: &MarginalCache,
    clique_distributions: &[Vec<f64>],
) -> Result<PrimalPoint> {
    let nc = model.cliques().len();
    if clique_distributions.len() != nc || marginals.nodes.len() != model.node_count() {
        return Err(Error::InvalidInput("marginals do not match the model".into()));
    }
    let nodes: Vec<Vec<f64>> = marginals
        .nodes
        .iter()
        .map(|mu| {
            let s: f64 = mu.iter().sum();
            mu.iter().map(|v| v / s).collect()
        })
        .collect();
    let mut cliques = Vec::with_capacity(nc);
    for c in 0..nc {
        let dims = model.clique_dims(c);
        let members = model.clique(c).nodes();
        let mu_c = &marginals.clique_nodes[c];
        let dist = &clique_distributions[c];
        if dist.len() != dims.iter().product::<usize>() {
            return Err(Error::DimensionMismatch { expected: dims.iter().product(), got: dist.len() });
        }
        let ratio: Vec<Vec<f64>> = members
            .iter()
            .enumerate()
            .map(|(p, &i)| nodes[i].iter().zip(&mu_c[p]).map(|(a, b)| a / b.max(MARGINAL_FLOOR)).collect())
            .collect();
        let mut x = vec![0; dims.len()];
        let mut q: Vec<f64> = Vec::with_capacity(dist.len());
        for &v in dist {
            let w: f64 = ratio.iter().zip(&x).map(|(r, &xi)| r[xi]).product();
            q.push(v * w);
            next_labeling(dims, &mut x);
        }
        let s: f64 = q.iter().sum();
        if s > 0.0 && s.is_finite() {
            q.iter_mut().for_each(|v| *v /= s);
        } else {
            q = product_table(dims, members, &nodes);
        }

        // additive correction: Σ_p d_p(x_p) / ∏_{j≠p} l_j
        let total: f64 = dims.iter().map(|&d| d as f64).product();
        let corr: Vec<Vec<f64>> = members
            .iter()
            .enumerate()
            .map(|(p, &i)| {
                let m = position_marginal(dims, &q, p);
                let scale = dims[p] as f64 / total;
                nodes[i].iter().zip(&m).map(|(a, b)| (a - b) * scale).collect()
            })
            .collect();
        let mut x = vec![0; dims.len()];
        for v in q.iter_mut() {
            *v += corr.iter().zip(&x).map(|(d, &xi)| d[xi]).sum::<f64>();
            next_labeling(dims, &mut x);
        }

        // mix with the product distribution to clear negative entries
        let prod = product_table(dims, members, &nodes);
        let mut theta: f64 = 0.0;
        for (&a, &b) in q.iter().zip(&prod) {
            if a < 0.0 {
                theta = theta.max(-a / (b - a));
            }
        }
        if theta > 0.0 {
            let theta = theta.min(1.0);
            for (a, &b) in q.iter_mut().zip(&prod) {
                *a = ((1.0 - theta) * *a + theta * b).max(0.0);
            }
        }
        cliques.push(q);
    }
    Ok(PrimalPoint { nodes, cliques })
}

fn product_table(dims: &[usize], members: &[usize], nodes: &[Vec<f64>]) -> Vec<f64> {
    let mut x = vec![0; dims.len()];
    let mut out = Vec::with_capacity(dims.iter().product());
    loop {
        out.push(members.iter().zip(&x).map(|(&i, &xi)| nodes[i][xi]).product());
        if !next_labeling(dims, &mut x) {
            break;
        }
    }
    out
}

fn entropy(p: &[f64]) -> f64 {
    -p.iter().filter(|&&v| v > 0.0).map(|&v| v * v.max(MARGINAL_FLOOR).ln()).sum::<f64>()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PdGap {
    /// Primal smoothed objective minus the smoothed dual; `None` when the
    /// subgraph entropies cannot be formed from clique and node beliefs.
    pub smooth: Option<f64>,
    /// LP objective minus the non-smooth dual.
    pub nonsmooth: f64,
}

/// Primal-dual gaps of a feasible primal point against dual values at `δ`.
pub fn pd_gap(
    model: &MrfModel,
    decomposition: &Decomposition,
    primal: &PrimalPoint,
    smooth_dual: f64,
    nonsmooth_dual: f64,
    tau: f64,
) -> Result<PdGap> {
    let residual = primal.feasibility_residual(model);
    if residual > FEASIBILITY_TOL {
        return Err(Error::InvalidInput(format!("primal point infeasible (residual {residual:e})")));
    }
    let lp = primal.lp_objective(model);
    let smooth = (decomposition.max_separator() <= 1).then(|| {
        let mut h: f64 = primal.nodes.iter().map(|p| entropy(p)).sum();
        for s in decomposition.subgraphs() {
            h += s.cliques().iter().map(|&c| entropy(&primal.cliques[c])).sum::<f64>();
            if let Subgraph::Chain { separators, .. } = s {
                h -= separators.iter().map(|sep| entropy(&primal.nodes[sep[0]])).sum::<f64>();
            }
        }
        lp - h / tau - smooth_dual
    });
    Ok(PdGap { smooth, nonsmooth: lp - nonsmooth_dual })
}
