//! Discrete energy models with dense and pattern-based clique potentials.
//!
//! The energy of a labeling `x` is the sum of node potentials `θ_i(x_i)` and
//! clique potentials `θ_c(x_c)`. Clique tables are indexed row-major over the
//! clique's node order, last node fastest.

mod decomposition;
pub mod generators;
pub mod io;

use crate::error::{Error, Result};

pub use decomposition::{build_chain_decomposition, build_clique_decomposition, Decomposition, Subgraph};

/// Per-node label assignment.
pub type Labeling = Vec<usize>;

/// Default cap on the number of labelings enumerated by exhaustive oracles.
pub const DEFAULT_ENUMERATION_CAP: u128 = 10_000_000;

/// Row-major flat index of `labels` in a table of shape `dims`.
#[inline]
pub fn flat_index(dims: &[usize], labels: &[usize]) -> usize {
    let mut idx = 0usize;
    for (&d, &x) in dims.iter().zip(labels) {
        idx = idx * d + x;
    }
    idx
}

/// Inverse of [`flat_index`].
pub fn unflatten(dims: &[usize], mut idx: usize, out: &mut [usize]) {
    for p in (0..dims.len()).rev() {
        out[p] = idx % dims[p];
        idx /= dims[p];
    }
}

/// Product of `dims`, or `None` on overflow.
pub fn domain_size(dims: &[usize]) -> Option<usize> {
    dims.iter().try_fold(1usize, |acc, &d| acc.checked_mul(d))
}

/// Advances `x` to the next labeling of `dims` (last position fastest).
/// Returns false after the last labeling, leaving `x` all zeros.
#[inline]
pub fn next_labeling(dims: &[usize], x: &mut [usize]) -> bool {
    for p in (0..dims.len()).rev() {
        x[p] += 1;
        if x[p] < dims[p] {
            return true;
        }
        x[p] = 0;
    }
    false
}

/// Potential taking `default` everywhere except on a sparse set of labelings.
#[derive(Debug, Clone, PartialEq)]
pub struct PatternPotential {
    dims: Vec<usize>,
    default: f64,
    // sorted by flat index
    keys: Vec<usize>,
    labelings: Vec<usize>,
    values: Vec<f64>,
}

impl PatternPotential {
    pub fn new(dims: &[usize], default: f64, entries: Vec<(Vec<usize>, f64)>) -> Result<Self> {
        if dims.is_empty() || dims.contains(&0) {
            return Err(Error::InvalidModel("pattern potential needs positive label counts".into()));
        }
        if domain_size(dims).is_none() {
            return Err(Error::InvalidModel("pattern potential domain overflows".into()));
        }
        if !default.is_finite() {
            return Err(Error::InvalidModel("non-finite pattern default".into()));
        }
        let k = dims.len();
        let mut keyed = Vec::with_capacity(entries.len());
        for (labels, value) in entries {
            if labels.len() != k {
                return Err(Error::InvalidModel(format!(
                    "pattern entry has {} labels, clique has {k} nodes",
                    labels.len()
                )));
            }
            if labels.iter().zip(dims).any(|(&x, &d)| x >= d) {
                return Err(Error::InvalidModel(format!("pattern entry {labels:?} out of domain")));
            }
            if !value.is_finite() {
                return Err(Error::InvalidModel("non-finite pattern value".into()));
            }
            keyed.push((flat_index(dims, &labels), labels, value));
        }
        keyed.sort_by_key(|e| e.0);
        if keyed.windows(2).any(|w| w[0].0 == w[1].0) {
            return Err(Error::InvalidModel("duplicate pattern entry".into()));
        }
        let mut keys = Vec::with_capacity(keyed.len());
        let mut labelings = Vec::with_capacity(keyed.len() * k);
        let mut values = Vec::with_capacity(keyed.len());
        for (key, labels, value) in keyed {
            keys.push(key);
            labelings.extend_from_slice(&labels);
            values.push(value);
        }
        Ok(Self { dims: dims.to_vec(), default, keys, labelings, values })
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn default_value(&self) -> f64 {
        self.default
    }

    /// Number of explicit entries.
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn labeling(&self, e: usize) -> &[usize] {
        let k = self.dims.len();
        &self.labelings[e * k..(e + 1) * k]
    }

    pub fn value(&self, e: usize) -> f64 {
        self.values[e]
    }

    pub fn entries(&self) -> impl Iterator<Item = (&[usize], f64)> + '_ {
        (0..self.len()).map(move |e| (self.labeling(e), self.values[e]))
    }

    pub fn lookup(&self, labels: &[usize]) -> f64 {
        self.lookup_flat(flat_index(&self.dims, labels))
    }

    pub fn lookup_flat(&self, key: usize) -> f64 {
        match self.keys.binary_search(&key) {
            Ok(e) => self.values[e],
            Err(_) => self.default,
        }
    }

    /// True when no entry exceeds the default (the usual "high constant" case).
    pub fn entries_below_default(&self) -> bool {
        self.values.iter().all(|&v| v <= self.default)
    }

    pub fn densify(&self) -> Result<Vec<f64>> {
        let size = domain_size(&self.dims).ok_or_else(|| Error::InvalidModel("domain overflows".into()))?;
        let mut table = vec![self.default; size];
        for (&key, &v) in self.keys.iter().zip(&self.values) {
            table[key] = v;
        }
        Ok(table)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Potential {
    Dense(Vec<f64>),
    Pattern(PatternPotential),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Clique {
    nodes: Vec<usize>,
    potential: Potential,
}

impl Clique {
    pub fn dense(nodes: Vec<usize>, table: Vec<f64>) -> Self {
        Self { nodes, potential: Potential::Dense(table) }
    }

    pub fn pattern(nodes: Vec<usize>, potential: PatternPotential) -> Self {
        Self { nodes, potential: Potential::Pattern(potential) }
    }

    pub fn nodes(&self) -> &[usize] {
        &self.nodes
    }

    pub fn order(&self) -> usize {
        self.nodes.len()
    }

    pub fn potential(&self) -> &Potential {
        &self.potential
    }

    /// Potential value at the clique labeling `labels` (clique node order).
    pub fn value(&self, dims: &[usize], labels: &[usize]) -> f64 {
        match &self.potential {
            Potential::Dense(t) => t[flat_index(dims, labels)],
            Potential::Pattern(p) => p.lookup(labels),
        }
    }

    /// Same clique with the pattern potential expanded into a dense table.
    pub fn densified(&self) -> Result<Clique> {
        Ok(match &self.potential {
            Potential::Dense(_) => self.clone(),
            Potential::Pattern(p) => Clique::dense(self.nodes.clone(), p.densify()?),
        })
    }
}

/// A pairwise or higher-order MRF.
///
/// Immutable after construction; share freely across threads.
#[derive(Debug, Clone, PartialEq)]
pub struct MrfModel {
    labels: Vec<usize>,
    unaries: Vec<Vec<f64>>,
    cliques: Vec<Clique>,
    // per clique: label count of each member node
    clique_dims: Vec<Vec<usize>>,
    // per node: (clique, position) memberships in clique order
    memberships: Vec<Vec<(usize, usize)>>,
}

impl MrfModel {
    pub fn new(labels: Vec<usize>, unaries: Vec<Vec<f64>>, cliques: Vec<Clique>) -> Result<Self> {
        let n = labels.len();
        if unaries.len() != n {
            return Err(Error::InvalidModel(format!("{} unary tables for {n} nodes", unaries.len())));
        }
        for (i, (&l, u)) in labels.iter().zip(&unaries).enumerate() {
            if l == 0 {
                return Err(Error::InvalidModel(format!("node {i} has no labels")));
            }
            if u.len() != l {
                return Err(Error::InvalidModel(format!(
                    "node {i}: unary table has {} entries, expected {l}",
                    u.len()
                )));
            }
            if u.iter().any(|v| !v.is_finite()) {
                return Err(Error::InvalidModel(format!("node {i}: non-finite unary")));
            }
        }
        let mut clique_dims = Vec::with_capacity(cliques.len());
        let mut memberships = vec![Vec::new(); n];
        for (c, clique) in cliques.iter().enumerate() {
            let nodes = clique.nodes();
            if nodes.is_empty() {
                return Err(Error::InvalidModel(format!("clique {c} is empty")));
            }
            for (p, &i) in nodes.iter().enumerate() {
                if i >= n {
                    return Err(Error::InvalidModel(format!("clique {c}: node {i} out of range")));
                }
                if nodes[..p].contains(&i) {
                    return Err(Error::InvalidModel(format!("clique {c}: node {i} repeated")));
                }
                memberships[i].push((c, p));
            }
            let dims: Vec<usize> = nodes.iter().map(|&i| labels[i]).collect();
            let size =
                domain_size(&dims).ok_or_else(|| Error::InvalidModel(format!("clique {c}: domain overflows")))?;
            match clique.potential() {
                Potential::Dense(t) => {
                    if t.len() != size {
                        return Err(Error::InvalidModel(format!(
                            "clique {c}: dense table has {} entries, expected {size}",
                            t.len()
                        )));
                    }
                    if t.iter().any(|v| !v.is_finite()) {
                        return Err(Error::InvalidModel(format!("clique {c}: non-finite potential")));
                    }
                }
                Potential::Pattern(p) => {
                    if p.dims() != dims.as_slice() {
                        return Err(Error::InvalidModel(format!(
                            "clique {c}: pattern shape {:?} does not match labels {dims:?}",
                            p.dims()
                        )));
                    }
                }
            }
            clique_dims.push(dims);
        }
        Ok(Self { labels, unaries, cliques, clique_dims, memberships })
    }

    pub fn node_count(&self) -> usize {
        self.labels.len()
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn label_count(&self, node: usize) -> usize {
        self.labels[node]
    }

    pub fn unaries(&self) -> &[Vec<f64>] {
        &self.unaries
    }

    pub fn unary(&self, node: usize) -> &[f64] {
        &self.unaries[node]
    }

    pub fn cliques(&self) -> &[Clique] {
        &self.cliques
    }

    pub fn clique(&self, c: usize) -> &Clique {
        &self.cliques[c]
    }

    pub fn clique_dims(&self, c: usize) -> &[usize] {
        &self.clique_dims[c]
    }

    /// `(clique, position)` pairs of every clique containing `node`.
    pub fn memberships(&self, node: usize) -> &[(usize, usize)] {
        &self.memberships[node]
    }

    /// Total number of labelings of the whole model.
    pub fn joint_domain_size(&self) -> u128 {
        self.labels.iter().fold(1u128, |acc, &l| acc.saturating_mul(l as u128))
    }

    pub fn check_labeling(&self, x: &[usize]) -> Result<()> {
        if x.len() != self.node_count() {
            return Err(Error::InvalidInput(format!(
                "labeling has {} entries, model has {} nodes",
                x.len(),
                self.node_count()
            )));
        }
        if let Some(i) = x.iter().zip(&self.labels).position(|(&xi, &l)| xi >= l) {
            return Err(Error::InvalidInput(format!("label {} of node {i} out of range (< {})", x[i], self.labels[i])));
        }
        Ok(())
    }

    /// Energy of a full labeling.
    pub fn energy(&self, x: &[usize]) -> Result<f64> {
        self.check_labeling(x)?;
        Ok(self.energy_unchecked(x))
    }

    fn energy_unchecked(&self, x: &[usize]) -> f64 {
        let mut e: f64 = self.unaries.iter().zip(x).map(|(u, &xi)| u[xi]).sum();
        let mut buf = Vec::new();
        for (c, clique) in self.cliques.iter().enumerate() {
            buf.clear();
            buf.extend(clique.nodes().iter().map(|&i| x[i]));
            e += clique.value(&self.clique_dims[c], &buf);
        }
        e
    }

    /// Copy of the model with every pattern potential expanded to a dense table.
    pub fn densified(&self) -> Result<MrfModel> {
        let cliques = self.cliques.iter().map(Clique::densified).collect::<Result<Vec<_>>>()?;
        MrfModel::new(self.labels.clone(), self.unaries.clone(), cliques)
    }
}

/// Exact MAP labeling by exhaustive enumeration. Ties keep the first labeling
/// in lexicographic order.
pub fn brute_force_map(model: &MrfModel, cap: u128) -> Result<(Labeling, f64)> {
    let size = model.joint_domain_size();
    if size > cap {
        return Err(Error::Capacity { size, cap });
    }
    let mut x = vec![0usize; model.node_count()];
    let mut best = x.clone();
    let mut best_e = model.energy_unchecked(&x);
    while next_labeling(model.labels(), &mut x) {
        let e = model.energy_unchecked(&x);
        if e < best_e {
            best_e = e;
            best.copy_from_slice(&x);
        }
    }
    Ok((best, best_e))
}
