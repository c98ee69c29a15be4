//! Seeded instance generators: synthetic point matching, truncated-curvature
//! grids, and small random models used by the test and benchmark suites.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::{Clique, MrfModel, PatternPotential};
use crate::error::{Error, Result};

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Unary terms for the matching generator.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum MatchingUnaries {
    /// `|i - x_i|`: node `i` prefers target point `i`.
    #[default]
    IndexDistance,
    Zero,
}

#[derive(Debug, Clone)]
pub struct MatchingOptions {
    /// Number of points; must be a perfect square.
    pub n: usize,
    /// Standard deviation of the Gaussian noise added to the target points.
    pub sigma: f64,
    /// Pattern size: nearest target triangles kept per source triangle.
    pub k_neighbors: usize,
    pub seed: u64,
    pub unaries: MatchingUnaries,
}

/// Point matching with third-order cliques over source triangles.
///
/// Source points sit on a unit grid; target points are the source points plus
/// Gaussian noise. Each node picks a target point. `4n` triangles are drawn,
/// four per source point, and every clique keeps the `k_neighbors` target
/// triangles closest in squared side-length distance `d`, with energy
/// `-exp(-d / gamma)` (`gamma` the mean of the kept distances) and default 0.
pub fn gen_point_matching(opts: &MatchingOptions) -> Result<MrfModel> {
    let n = opts.n;
    let side = (n as f64).sqrt().round() as usize;
    if n < 3 || side * side != n {
        return Err(Error::InvalidInput(format!("n = {n} must be a perfect square >= 4")));
    }
    let target_triangles = n * (n - 1) * (n - 2);
    if opts.k_neighbors == 0 || opts.k_neighbors > target_triangles {
        return Err(Error::InvalidInput(format!(
            "k_neighbors = {} must be in 1..={target_triangles}",
            opts.k_neighbors
        )));
    }
    if !(opts.sigma >= 0.0) {
        return Err(Error::InvalidInput("sigma must be non-negative".into()));
    }
    let mut rng = rng(opts.seed);
    let source: Vec<[f64; 2]> = (0..n).map(|i| [(i % side) as f64, (i / side) as f64]).collect();
    let noise = Normal::new(0.0, opts.sigma.max(f64::MIN_POSITIVE)).map_err(|e| Error::InvalidInput(e.to_string()))?;
    let target: Vec<[f64; 2]> = source
        .iter()
        .map(|p| if opts.sigma == 0.0 { *p } else { [p[0] + noise.sample(&mut rng), p[1] + noise.sample(&mut rng)] })
        .collect();

    let sides = |pts: &[[f64; 2]], a: usize, b: usize, c: usize| -> [f64; 3] {
        let d = |u: usize, v: usize| ((pts[u][0] - pts[v][0]).powi(2) + (pts[u][1] - pts[v][1]).powi(2)).sqrt();
        [d(a, b), d(b, c), d(c, a)]
    };
    let mut target_tuples = Vec::with_capacity(target_triangles);
    for a in 0..n {
        for b in 0..n {
            for c in 0..n {
                if a != b && b != c && a != c {
                    target_tuples.push(([a, b, c], sides(&target, a, b, c)));
                }
            }
        }
    }

    let dims = [n, n, n];
    let mut cliques = Vec::with_capacity(4 * n);
    let mut dist: Vec<(f64, usize)> = Vec::with_capacity(target_tuples.len());
    for i in 0..n {
        for _ in 0..4 {
            let mut others: Vec<usize> = (0..n).filter(|&j| j != i).collect();
            others.shuffle(&mut rng);
            let tri = [i, others[0], others[1]];
            let s = sides(&source, tri[0], tri[1], tri[2]);
            dist.clear();
            dist.extend(target_tuples.iter().enumerate().map(|(t, (_, ts))| {
                let d = (s[0] - ts[0]).powi(2) + (s[1] - ts[1]).powi(2) + (s[2] - ts[2]).powi(2);
                (d, t)
            }));
            let k = opts.k_neighbors;
            let cmp = |a: &(f64, usize), b: &(f64, usize)| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1));
            if k < dist.len() {
                dist.select_nth_unstable_by(k - 1, cmp);
            }
            let nearest = &mut dist[..k];
            nearest.sort_by(cmp);
            let mean = nearest.iter().map(|e| e.0).sum::<f64>() / k as f64;
            let gamma = if mean > 0.0 { mean } else { 1.0 };
            let entries = nearest.iter().map(|&(d, t)| (target_tuples[t].0.to_vec(), -(-d / gamma).exp())).collect();
            cliques.push(Clique::pattern(tri.to_vec(), PatternPotential::new(&dims, 0.0, entries)?));
        }
    }
    let unaries = (0..n)
        .map(|i| match opts.unaries {
            MatchingUnaries::IndexDistance => (0..n).map(|x| (i as f64 - x as f64).abs()).collect(),
            MatchingUnaries::Zero => vec![0.0; n],
        })
        .collect();
    MrfModel::new(vec![n; n], unaries, cliques)
}

#[derive(Debug, Clone)]
pub struct GridOptions {
    pub width: usize,
    pub height: usize,
    pub labels: usize,
    /// Truncation of the second-difference penalty; also the pattern default.
    pub trunc: f64,
    /// Unaries are drawn uniformly from `[0, unary_scale)`.
    pub unary_scale: f64,
    pub seed: u64,
}

/// Grid with `1x3` and `3x1` cliques carrying the truncated curvature prior
/// `min(|x_a - 2 x_b + x_c|, trunc)`. Horizontal cliques come first (row by
/// row), then vertical ones (column by column). Nodes are numbered row-major.
pub fn gen_grid_curvature(opts: &GridOptions) -> Result<MrfModel> {
    let (w, h, l) = (opts.width, opts.height, opts.labels);
    if w < 3 || h < 3 {
        return Err(Error::InvalidInput("grid must be at least 3x3".into()));
    }
    if l == 0 {
        return Err(Error::InvalidInput("labels must be positive".into()));
    }
    if !(opts.trunc > 0.0) || !(opts.unary_scale >= 0.0) {
        return Err(Error::InvalidInput("trunc must be positive and unary_scale non-negative".into()));
    }
    let mut entries = Vec::new();
    for a in 0..l {
        for b in 0..l {
            for c in 0..l {
                let v = (a as f64 - 2.0 * b as f64 + c as f64).abs();
                if v < opts.trunc {
                    entries.push((vec![a, b, c], v));
                }
            }
        }
    }
    let potential = PatternPotential::new(&[l, l, l], opts.trunc, entries)?;
    let node = |r: usize, c: usize| r * w + c;
    let mut cliques = Vec::with_capacity(h * (w - 2) + w * (h - 2));
    for r in 0..h {
        for c in 0..w - 2 {
            cliques.push(Clique::pattern(vec![node(r, c), node(r, c + 1), node(r, c + 2)], potential.clone()));
        }
    }
    for c in 0..w {
        for r in 0..h - 2 {
            cliques.push(Clique::pattern(vec![node(r, c), node(r + 1, c), node(r + 2, c)], potential.clone()));
        }
    }
    let mut rng = rng(opts.seed);
    let unaries = (0..w * h).map(|_| (0..l).map(|_| rng.random::<f64>() * opts.unary_scale).collect()).collect();
    MrfModel::new(vec![l; w * h], unaries, cliques)
}

/// Row and column chains matching the clique order of [`gen_grid_curvature`].
pub fn grid_chains(width: usize, height: usize) -> Vec<Vec<usize>> {
    let per_row = width - 2;
    let per_col = height - 2;
    let mut chains: Vec<Vec<usize>> = (0..height).map(|r| (r * per_row..(r + 1) * per_row).collect()).collect();
    let base = height * per_row;
    chains.extend((0..width).map(|c| (base + c * per_col..base + (c + 1) * per_col).collect()));
    chains
}

fn random_table(rng: &mut ChaCha8Rng, size: usize, scale: f64) -> Vec<f64> {
    (0..size).map(|_| (2.0 * rng.random::<f64>() - 1.0) * scale).collect()
}

#[derive(Debug, Clone)]
pub struct TreeOptions {
    pub nodes: usize,
    pub max_labels: usize,
    /// Clique orders are drawn from `2..=max_order`.
    pub max_order: usize,
    /// Potentials are uniform in `[-scale, scale]`.
    pub scale: f64,
    pub seed: u64,
}

/// Random model whose factor graph is a tree: each new clique shares exactly
/// one node with the cliques built before it. Dense potentials.
pub fn gen_random_tree(opts: &TreeOptions) -> Result<MrfModel> {
    if opts.nodes == 0 || opts.max_labels < 2 || opts.max_order < 2 {
        return Err(Error::InvalidInput("tree needs nodes >= 1, max_labels >= 2, max_order >= 2".into()));
    }
    let mut rng = rng(opts.seed);
    let labels: Vec<usize> = (0..opts.nodes).map(|_| rng.random_range(2..=opts.max_labels)).collect();
    let mut cliques = Vec::new();
    let mut built = 1;
    while built < opts.nodes {
        let remaining = opts.nodes - built;
        let k = rng.random_range(2..=opts.max_order.min(remaining + 1));
        let anchor = rng.random_range(0..built);
        let mut nodes: Vec<usize> = std::iter::once(anchor).chain(built..built + k - 1).collect();
        nodes.shuffle(&mut rng);
        built += k - 1;
        let size: usize = nodes.iter().map(|&i| labels[i]).product();
        cliques.push(Clique::dense(nodes, random_table(&mut rng, size, opts.scale)));
    }
    let unaries = labels.iter().map(|&l| random_table(&mut rng, l, opts.scale)).collect();
    MrfModel::new(labels, unaries, cliques)
}

/// Path of `cliques` cliques of the given order where consecutive cliques share
/// exactly one node. Returns the model and the single chain covering it; the
/// factor graph is a tree, so both clique and chain decompositions are tight.
pub fn gen_clique_path(
    cliques: usize,
    order: usize,
    labels: usize,
    scale: f64,
    seed: u64,
) -> Result<(MrfModel, Vec<usize>)> {
    if cliques == 0 || order < 2 || labels < 2 {
        return Err(Error::InvalidInput("clique path needs cliques >= 1, order >= 2, labels >= 2".into()));
    }
    let mut rng = rng(seed);
    let n = 1 + cliques * (order - 1);
    let mut list = Vec::with_capacity(cliques);
    for t in 0..cliques {
        let start = t * (order - 1);
        let mut nodes: Vec<usize> = (start..start + order).collect();
        nodes.shuffle(&mut rng);
        let size = labels.pow(order as u32);
        list.push(Clique::dense(nodes, random_table(&mut rng, size, scale)));
    }
    let unaries = (0..n).map(|_| random_table(&mut rng, labels, scale)).collect();
    Ok((MrfModel::new(vec![labels; n], unaries, list)?, (0..cliques).collect()))
}

#[derive(Debug, Clone)]
pub struct RandomModelOptions {
    pub nodes: usize,
    pub cliques: usize,
    pub max_order: usize,
    pub max_labels: usize,
    /// Probability that a clique gets a pattern potential instead of a dense one.
    pub pattern_probability: f64,
    pub scale: f64,
    pub seed: u64,
}

/// Small random model with arbitrary (possibly cyclic) clique structure.
pub fn gen_random_model(opts: &RandomModelOptions) -> Result<MrfModel> {
    if opts.nodes < opts.max_order || opts.max_order < 2 || opts.max_labels < 2 {
        return Err(Error::InvalidInput("random model needs nodes >= max_order >= 2, max_labels >= 2".into()));
    }
    let mut rng = rng(opts.seed);
    let labels: Vec<usize> = (0..opts.nodes).map(|_| rng.random_range(2..=opts.max_labels)).collect();
    let mut cliques = Vec::with_capacity(opts.cliques);
    for _ in 0..opts.cliques {
        let k = rng.random_range(2..=opts.max_order);
        let mut all: Vec<usize> = (0..opts.nodes).collect();
        all.shuffle(&mut rng);
        let nodes = all[..k].to_vec();
        let dims: Vec<usize> = nodes.iter().map(|&i| labels[i]).collect();
        let size: usize = dims.iter().product();
        if rng.random::<f64>() < opts.pattern_probability {
            cliques.push(Clique::pattern(nodes, random_pattern(&mut rng, &dims, opts.scale)?));
        } else {
            cliques.push(Clique::dense(nodes, random_table(&mut rng, size, opts.scale)));
        }
    }
    let unaries = labels.iter().map(|&l| random_table(&mut rng, l, opts.scale)).collect();
    MrfModel::new(labels, unaries, cliques)
}

/// Random pattern potential over `dims` with a uniformly drawn entry count.
pub fn random_pattern<R: Rng>(rng: &mut R, dims: &[usize], scale: f64) -> Result<PatternPotential> {
    let size: usize = dims.iter().product();
    let s = rng.random_range(0..=size);
    let mut keys: Vec<usize> = (0..size).collect();
    keys.shuffle(rng);
    let mut buf = vec![0; dims.len()];
    let entries = keys[..s]
        .iter()
        .map(|&key| {
            super::unflatten(dims, key, &mut buf);
            (buf.clone(), (2.0 * rng.random::<f64>() - 1.0) * scale)
        })
        .collect();
    PatternPotential::new(dims, (2.0 * rng.random::<f64>() - 1.0) * scale, entries)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{brute_force_map, Potential, DEFAULT_ENUMERATION_CAP};

    #[test]
    fn matching_counts_and_identity_map() {
        let opts =
            MatchingOptions { n: 4, sigma: 0.0, k_neighbors: 5, seed: 3, unaries: MatchingUnaries::IndexDistance };
        let m = gen_point_matching(&opts).unwrap();
        assert_eq!(m.cliques().len(), 16);
        for c in m.cliques() {
            match c.potential() {
                Potential::Pattern(p) => assert_eq!(p.len(), 5),
                Potential::Dense(_) => panic!("matching cliques are pattern-based"),
            }
        }
        let (x, _) = brute_force_map(&m, DEFAULT_ENUMERATION_CAP).unwrap();
        assert_eq!(x, vec![0, 1, 2, 3]);
    }

    #[test]
    fn matching_rejects_bad_sizes() {
        let mut opts = MatchingOptions { n: 5, sigma: 0.1, k_neighbors: 5, seed: 0, unaries: MatchingUnaries::Zero };
        assert!(gen_point_matching(&opts).is_err());
        opts.n = 4;
        opts.k_neighbors = 25;
        assert!(gen_point_matching(&opts).is_err());
    }

    #[test]
    fn grid_counts_and_truncation() {
        let m = gen_grid_curvature(&GridOptions {
            width: 3,
            height: 3,
            labels: 2,
            trunc: 100.0,
            unary_scale: 1.0,
            seed: 0,
        })
        .unwrap();
        assert_eq!(m.cliques().len(), 6);
        for c in m.cliques() {
            let dims = [2, 2, 2];
            for a in 0..2 {
                for b in 0..2 {
                    for cc in 0..2 {
                        let v = c.value(&dims, &[a, b, cc]);
                        assert_eq!(v, (a as f64 - 2.0 * b as f64 + cc as f64).abs());
                    }
                }
            }
        }
        assert_eq!(grid_chains(3, 3), vec![vec![0], vec![1], vec![2], vec![3], vec![4], vec![5]]);
    }

    #[test]
    fn grid_pattern_size_matches_enumeration() {
        let l = 5;
        let trunc = 2.5;
        let m = gen_grid_curvature(&GridOptions { width: 4, height: 3, labels: l, trunc, unary_scale: 1.0, seed: 1 })
            .unwrap();
        let mut below = 0;
        for a in 0..l {
            for b in 0..l {
                for c in 0..l {
                    if ((a as f64) - 2.0 * b as f64 + c as f64).abs() < trunc {
                        below += 1;
                    }
                }
            }
        }
        for c in m.cliques() {
            let Potential::Pattern(p) = c.potential() else { panic!() };
            assert_eq!(p.len(), below);
            assert_eq!(p.default_value(), trunc);
        }
        let chains = grid_chains(4, 3);
        assert_eq!(chains.len(), 3 + 4);
        assert_eq!(chains[0], vec![0, 1]);
    }

    #[test]
    fn tree_is_acyclic() {
        for seed in 0..20 {
            let m = gen_random_tree(&TreeOptions { nodes: 8, max_labels: 4, max_order: 3, scale: 1.0, seed }).unwrap();
            let edges: usize = m.cliques().iter().map(|c| c.order()).sum();
            // bipartite node-clique graph: tree iff edges = vertices - 1 (and connected)
            assert_eq!(edges, m.node_count() + m.cliques().len() - 1);
        }
    }

    #[test]
    fn generators_are_seed_deterministic() {
        let opts =
            MatchingOptions { n: 9, sigma: 0.3, k_neighbors: 20, seed: 11, unaries: MatchingUnaries::IndexDistance };
        assert_eq!(gen_point_matching(&opts).unwrap(), gen_point_matching(&opts).unwrap());
        let (a, _) = gen_clique_path(3, 3, 2, 1.0, 5).unwrap();
        let (b, _) = gen_clique_path(3, 3, 2, 1.0, 5).unwrap();
        assert_eq!(a, b);
    }
}
