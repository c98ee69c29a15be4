use super::MrfModel;
use crate::error::{Error, Result};

/// A tractable subgraph of a dual decomposition.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Subgraph {
    /// One clique on its own.
    Clique(usize),
    /// A sequence of overlapping cliques. `separators[t]` holds the node ids
    /// (ascending) shared by `cliques[t]` and `cliques[t + 1]`.
    Chain { cliques: Vec<usize>, separators: Vec<Vec<usize>> },
}

impl Subgraph {
    pub fn cliques(&self) -> &[usize] {
        match self {
            Subgraph::Clique(c) => std::slice::from_ref(c),
            Subgraph::Chain { cliques, .. } => cliques,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Decomposition {
    subgraphs: Vec<Subgraph>,
}

impl Decomposition {
    pub fn subgraphs(&self) -> &[Subgraph] {
        &self.subgraphs
    }

    pub fn len(&self) -> usize {
        self.subgraphs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.subgraphs.is_empty()
    }

    /// True when every subgraph is a single clique (the exact-Hessian case).
    pub fn is_singleton(&self) -> bool {
        self.subgraphs.iter().all(|s| matches!(s, Subgraph::Clique(_)))
    }

    /// Largest separator size over all chains (0 for singleton decompositions).
    pub fn max_separator(&self) -> usize {
        self.subgraphs
            .iter()
            .filter_map(|s| match s {
                Subgraph::Chain { separators, .. } => separators.iter().map(Vec::len).max(),
                Subgraph::Clique(_) => None,
            })
            .max()
            .unwrap_or(0)
    }
}

/// One subgraph per clique.
pub fn build_clique_decomposition(model: &MrfModel) -> Decomposition {
    Decomposition { subgraphs: (0..model.cliques().len()).map(Subgraph::Clique).collect() }
}

/// Groups cliques into chains. The sequences must partition the clique set,
/// consecutive cliques must overlap, and every node must occupy a contiguous
/// run of each chain it appears in.
pub fn build_chain_decomposition(model: &MrfModel, chains: &[Vec<usize>]) -> Result<Decomposition> {
    let nc = model.cliques().len();
    let mut seen = vec![false; nc];
    let mut subgraphs = Vec::with_capacity(chains.len());
    for (k, chain) in chains.iter().enumerate() {
        if chain.is_empty() {
            return Err(Error::InvalidDecomposition(format!("chain {k} is empty")));
        }
        for &c in chain {
            if c >= nc {
                return Err(Error::InvalidDecomposition(format!("clique {c} does not exist")));
            }
            if std::mem::replace(&mut seen[c], true) {
                return Err(Error::InvalidDecomposition(format!("clique {c} used twice")));
            }
        }
        if chain.len() == 1 {
            subgraphs.push(Subgraph::Clique(chain[0]));
            continue;
        }
        let mut separators = Vec::with_capacity(chain.len() - 1);
        for w in chain.windows(2) {
            let b = model.clique(w[1]).nodes();
            let mut sep: Vec<usize> = model.clique(w[0]).nodes().iter().copied().filter(|i| b.contains(i)).collect();
            if sep.is_empty() {
                return Err(Error::InvalidDecomposition(format!(
                    "consecutive cliques {} and {} share no node",
                    w[0], w[1]
                )));
            }
            sep.sort_unstable();
            separators.push(sep);
        }
        // running intersection: a node seen in cliques s < t lies in every clique between
        let mut last: std::collections::HashMap<usize, usize> = Default::default();
        for (t, &c) in chain.iter().enumerate() {
            for &i in model.clique(c).nodes() {
                if let Some(&prev) = last.get(&i) {
                    if prev + 1 != t {
                        return Err(Error::InvalidDecomposition(format!("node {i} leaves and re-enters chain {k}")));
                    }
                }
                last.insert(i, t);
            }
        }
        subgraphs.push(Subgraph::Chain { cliques: chain.clone(), separators });
    }
    if let Some(c) = seen.iter().position(|&s| !s) {
        return Err(Error::InvalidDecomposition(format!("clique {c} not covered")));
    }
    Ok(Decomposition { subgraphs })
}
