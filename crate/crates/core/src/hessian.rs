//! Structured Hessian of `f = -g` for single-clique decompositions.
//!
//! The Hessian is the sum of a block-diagonal part with one block per
//! clique, `τ(μ_cij - μ_ci μ_cjᵀ)`, and a node part where every pair of
//! blocks `(c,i)`, `(c',i)` sharing node `i` holds the same block
//! `τ(diag μ_i - μ_i μ_iᵀ)`.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::model::MrfModel;
use crate::smooth_dual::{DualLayout, MarginalCache};
use crate::sum_product::pair_index;

/// Largest dimension [`dense_hessian`] will materialize.
pub const DENSE_HESSIAN_CAP: usize = 2000;

/// Upper triangle of a symmetric `n×n` matrix, row by row.
#[derive(Debug, Clone, PartialEq)]
pub struct PackedSym {
    n: usize,
    data: Vec<f64>,
}

impl PackedSym {
    pub fn zeros(n: usize) -> Self {
        Self { n, data: vec![0.0; n * (n + 1) / 2] }
    }

    pub fn size(&self) -> usize {
        self.n
    }

    #[inline]
    fn idx(&self, i: usize, j: usize) -> usize {
        let (i, j) = if i <= j { (i, j) } else { (j, i) };
        i * (2 * self.n - i + 1) / 2 + (j - i)
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[self.idx(i, j)]
    }

    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        let k = self.idx(i, j);
        self.data[k] = v;
    }

    /// `y += A x`
    pub fn mul_add(&self, x: &[f64], y: &mut [f64]) {
        let mut k = 0;
        for i in 0..self.n {
            let xi = x[i];
            let mut acc = self.data[k] * xi;
            k += 1;
            for j in i + 1..self.n {
                let a = self.data[k];
                acc += a * x[j];
                y[j] += a * xi;
                k += 1;
            }
            y[i] += acc;
        }
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        DMatrix::from_fn(self.n, self.n, |i, j| self.get(i, j))
    }
}

/// Both Hessian components at one dual point.
#[derive(Debug, Clone)]
pub struct HessianBlocks {
    tau: f64,
    layout: DualLayout,
    clique_blocks: Vec<PackedSym>,
    node_blocks: Vec<PackedSym>,
    // per node: offsets of its (c, i) blocks
    incidence: Vec<Vec<usize>>,
    // per clique: label count of each position
    clique_dims: Vec<Vec<usize>>,
    clique_nodes: Vec<Vec<usize>>,
}

/// Builds both components from marginals with pair tables.
pub fn build_hessian_blocks(model: &MrfModel, marginals: &MarginalCache, tau: f64) -> Result<HessianBlocks> {
    let nc = model.cliques().len();
    if marginals.clique_nodes.len() != nc || marginals.nodes.len() != model.node_count() {
        return Err(Error::InvalidInput("marginal cache does not match the model".into()));
    }
    let layout = DualLayout::new(model);
    let clique_blocks = (0..nc)
        .into_par_iter()
        .map(|c| {
            let pairs = marginals.pairs[c]
                .as_ref()
                .ok_or_else(|| Error::UnsupportedDecomposition(format!("no pair marginals for clique {c}")))?;
            let dims = model.clique_dims(c);
            let mu = &marginals.clique_nodes[c];
            let k = dims.len();
            let starts: Vec<usize> = dims
                .iter()
                .scan(0, |s, &d| {
                    let o = *s;
                    *s += d;
                    Some(o)
                })
                .collect();
            let mut b = PackedSym::zeros(dims.iter().sum());
            for p in 0..k {
                for a in 0..dims[p] {
                    for a2 in a..dims[p] {
                        let diag = if a == a2 { mu[p][a] } else { 0.0 };
                        b.set(starts[p] + a, starts[p] + a2, tau * (diag - mu[p][a] * mu[p][a2]));
                    }
                }
                for q in p + 1..k {
                    let t = &pairs[pair_index(k, p, q)];
                    for a in 0..dims[p] {
                        for bq in 0..dims[q] {
                            let v = tau * (t[a * dims[q] + bq] - mu[p][a] * mu[q][bq]);
                            b.set(starts[p] + a, starts[q] + bq, v);
                        }
                    }
                }
            }
            Ok(b)
        })
        .collect::<Result<Vec<_>>>()?;
    let node_blocks = marginals
        .nodes
        .par_iter()
        .map(|mu| {
            let mut b = PackedSym::zeros(mu.len());
            for a in 0..mu.len() {
                for a2 in a..mu.len() {
                    let diag = if a == a2 { mu[a] } else { 0.0 };
                    b.set(a, a2, tau * (diag - mu[a] * mu[a2]));
                }
            }
            b
        })
        .collect();
    let incidence = (0..model.node_count())
        .map(|i| model.memberships(i).iter().map(|&(c, p)| layout.offset(c, p)).collect())
        .collect();
    Ok(HessianBlocks {
        tau,
        layout,
        clique_blocks,
        node_blocks,
        incidence,
        clique_dims: (0..nc).map(|c| model.clique_dims(c).to_vec()).collect(),
        clique_nodes: model.cliques().iter().map(|c| c.nodes().to_vec()).collect(),
    })
}

impl HessianBlocks {
    pub fn dim(&self) -> usize {
        self.layout.dim()
    }

    pub fn tau(&self) -> f64 {
        self.tau
    }

    pub fn clique_block(&self, c: usize) -> &PackedSym {
        &self.clique_blocks[c]
    }

    pub fn node_block(&self, i: usize) -> &PackedSym {
        &self.node_blocks[i]
    }

    /// `(H + λI) v`
    pub fn hvp(&self, v: &[f64], lambda: f64) -> Vec<f64> {
        assert_eq!(v.len(), self.dim(), "hvp dimension");
        let clique_parts: Vec<Vec<f64>> = self
            .clique_blocks
            .par_iter()
            .enumerate()
            .map(|(c, b)| {
                let r = self.layout.clique_range(c);
                let mut y = vec![0.0; r.len()];
                b.mul_add(&v[r], &mut y);
                y
            })
            .collect();
        let node_parts: Vec<Vec<f64>> = self
            .node_blocks
            .par_iter()
            .zip(&self.incidence)
            .map(|(b, offs)| {
                let l = b.size();
                let mut s = vec![0.0; l];
                for &o in offs {
                    s.iter_mut().zip(&v[o..o + l]).for_each(|(a, x)| *a += x);
                }
                let mut t = vec![0.0; l];
                b.mul_add(&s, &mut t);
                t
            })
            .collect();
        let mut out: Vec<f64> = v.iter().map(|x| lambda * x).collect();
        for (c, y) in clique_parts.iter().enumerate() {
            let r = self.layout.clique_range(c);
            out[r].iter_mut().zip(y).for_each(|(o, a)| *o += a);
        }
        for (t, offs) in node_parts.iter().zip(&self.incidence) {
            for &o in offs {
                out[o..o + t.len()].iter_mut().zip(t).for_each(|(a, x)| *a += x);
            }
        }
        out
    }
}

/// `(H + λI) v`
pub fn hvp(blocks: &HessianBlocks, v: &[f64], lambda: f64) -> Result<Vec<f64>> {
    if v.len() != blocks.dim() {
        return Err(Error::DimensionMismatch { expected: blocks.dim(), got: v.len() });
    }
    Ok(blocks.hvp(v, lambda))
}

/// The full `N×N` Hessian, row-major.
pub fn dense_hessian(blocks: &HessianBlocks) -> Result<Vec<f64>> {
    let n = blocks.dim();
    if n > DENSE_HESSIAN_CAP {
        return Err(Error::Capacity { size: n as u128, cap: DENSE_HESSIAN_CAP as u128 });
    }
    let mut h = vec![0.0; n * n];
    for (c, b) in blocks.clique_blocks.iter().enumerate() {
        let r = blocks.layout.clique_range(c);
        for i in 0..b.size() {
            for j in 0..b.size() {
                h[(r.start + i) * n + r.start + j] += b.get(i, j);
            }
        }
    }
    for (b, offs) in blocks.node_blocks.iter().zip(&blocks.incidence) {
        for &o1 in offs {
            for &o2 in offs {
                for a in 0..b.size() {
                    for a2 in 0..b.size() {
                        h[(o1 + a) * n + o2 + a2] += b.get(a, a2);
                    }
                }
            }
        }
    }
    Ok(h)
}

/// Block-diagonal preconditioner with one inverted block per clique.
#[derive(Debug, Clone)]
pub struct Preconditioner {
    lambda: f64,
    ranges: Vec<std::ops::Range<usize>>,
    inverses: Vec<DMatrix<f64>>,
    pseudo_inverse: bool,
}

/// Clique block of `H + λI`: component one plus the node blocks on the
/// diagonal `(c,i)` sub-blocks.
pub fn preconditioner_block(blocks: &HessianBlocks, c: usize, lambda: f64) -> DMatrix<f64> {
    let mut m = blocks.clique_blocks[c].to_dense();
    let mut start = 0;
    for (&i, &d) in blocks.clique_nodes[c].iter().zip(&blocks.clique_dims[c]) {
        let nb = &blocks.node_blocks[i];
        for a in 0..d {
            for b in 0..d {
                m[(start + a, start + b)] += nb.get(a, b);
            }
        }
        start += d;
    }
    for k in 0..m.nrows() {
        m[(k, k)] += lambda;
    }
    m
}

fn invert_block(m: DMatrix<f64>) -> (DMatrix<f64>, bool) {
    let n = m.nrows();
    if let Some(ch) = m.clone().cholesky() {
        let inv = ch.inverse();
        // accept only inverses that reproduce the identity
        let err = (&m * &inv - DMatrix::identity(n, n)).abs().max();
        if err <= 1e-9 {
            return (inv, false);
        }
    }
    let trace = m.trace();
    let floor = 1e-10 * trace.abs().max(f64::MIN_POSITIVE);
    let eig = m.symmetric_eigen();
    let inv_vals = eig.eigenvalues.map(|e| if e > floor { 1.0 / e } else { 0.0 });
    let v = &eig.eigenvectors;
    (v * DMatrix::from_diagonal(&inv_vals) * v.transpose(), true)
}

/// Inverts every clique block of `H + λI`; singular blocks get a
/// pseudo-inverse and set [`Preconditioner::used_pseudo_inverse`].
pub fn build_preconditioner(blocks: &HessianBlocks, lambda: f64) -> Preconditioner {
    let nc = blocks.clique_blocks.len();
    let inv: Vec<(DMatrix<f64>, bool)> =
        (0..nc).into_par_iter().map(|c| invert_block(preconditioner_block(blocks, c, lambda))).collect();
    let pseudo_inverse = inv.iter().any(|x| x.1);
    Preconditioner {
        lambda,
        ranges: (0..nc).map(|c| blocks.layout.clique_range(c)).collect(),
        inverses: inv.into_iter().map(|x| x.0).collect(),
        pseudo_inverse,
    }
}

impl Preconditioner {
    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn used_pseudo_inverse(&self) -> bool {
        self.pseudo_inverse
    }

    pub fn inverse(&self, c: usize) -> &DMatrix<f64> {
        &self.inverses[c]
    }

    pub fn apply(&self, r: &[f64]) -> Vec<f64> {
        let parts: Vec<DVector<f64>> = self
            .inverses
            .par_iter()
            .zip(&self.ranges)
            .map(|(inv, range)| inv * DVector::from_column_slice(&r[range.clone()]))
            .collect();
        let mut out = vec![0.0; r.len()];
        for (p, range) in parts.iter().zip(&self.ranges) {
            out[range.clone()].copy_from_slice(p.as_slice());
        }
        out
    }
}

pub fn apply_preconditioner(p: &Preconditioner, r: &[f64]) -> Vec<f64> {
    p.apply(r)
}
