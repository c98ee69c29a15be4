#![allow(dead_code)]

use homrf_core::model::generators::{
    gen_clique_path, gen_random_model, gen_random_tree, RandomModelOptions, TreeOptions,
};
use homrf_core::{Decomposition, MrfModel, Potential};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Up to four cliques of order at most three over at most five labels.
pub fn small_model(seed: u64) -> MrfModel {
    let mut r = rng(seed ^ 0x5eed);
    let max_order = r.random_range(2..=3);
    gen_random_model(&RandomModelOptions {
        nodes: r.random_range(max_order..=5),
        cliques: r.random_range(1..=4),
        max_order,
        max_labels: r.random_range(2..=5),
        pattern_probability: 0.5,
        scale: 1.0,
        seed,
    })
    .unwrap()
}

/// Tree-structured model with at most eight nodes and four labels.
pub fn tree_model(seed: u64) -> MrfModel {
    tree_model_scaled(seed, 1.0)
}

/// Same shapes as [`tree_model`] with potentials scaled by `scale`.
pub fn tree_model_scaled(seed: u64, scale: f64) -> MrfModel {
    let mut r = rng(seed ^ 0x7e3);
    gen_random_tree(&TreeOptions {
        nodes: r.random_range(3..=8),
        max_labels: 4,
        max_order: r.random_range(2..=3),
        scale,
        seed,
    })
    .unwrap()
}

/// Clique path (a tree) with its single covering chain.
pub fn path_model(seed: u64) -> (MrfModel, Vec<usize>) {
    let mut r = rng(seed ^ 0xba7);
    gen_clique_path(r.random_range(2..=4), r.random_range(2..=3), r.random_range(2..=3), 1.0, seed).unwrap()
}

pub fn random_vec(seed: u64, n: usize, scale: f64) -> Vec<f64> {
    let mut r = rng(seed);
    (0..n).map(|_| (2.0 * r.random::<f64>() - 1.0) * scale).collect()
}

/// Row-major index, last coordinate fastest.
pub fn index(dims: &[usize], x: &[usize]) -> usize {
    dims.iter().zip(x).fold(0, |acc, (&d, &v)| acc * d + v)
}

/// Calls `f` on every labeling of `dims` in row-major order.
pub fn enumerate(dims: &[usize], mut f: impl FnMut(&[usize])) {
    let mut x = vec![0; dims.len()];
    if dims.contains(&0) {
        return;
    }
    loop {
        f(&x);
        let mut k = dims.len();
        loop {
            if k == 0 {
                return;
            }
            k -= 1;
            x[k] += 1;
            if x[k] < dims[k] {
                break;
            }
            x[k] = 0;
        }
    }
}

pub fn dense_table(model: &MrfModel, c: usize) -> Vec<f64> {
    match model.clique(c).densified().unwrap().potential() {
        Potential::Dense(t) => t.clone(),
        Potential::Pattern(_) => unreachable!(),
    }
}

/// Offsets of the `(clique, position)` blocks: cliques in order, positions
/// in order, contiguous.
pub fn offsets(model: &MrfModel) -> Vec<Vec<usize>> {
    let mut o = 0;
    model
        .cliques()
        .iter()
        .map(|cl| {
            cl.nodes()
                .iter()
                .map(|&i| {
                    let v = o;
                    o += model.labels()[i];
                    v
                })
                .collect()
        })
        .collect()
}

pub fn dual_dim(model: &MrfModel) -> usize {
    model.cliques().iter().map(|c| c.nodes().iter().map(|&i| model.labels()[i]).sum::<usize>()).sum()
}

fn naive_smin(values: &[f64], tau: f64) -> f64 {
    let m = values.iter().copied().fold(f64::INFINITY, f64::min);
    m - values.iter().map(|v| (-tau * (v - m)).exp()).sum::<f64>().ln() / tau
}

fn naive_min(values: &[f64], _: f64) -> f64 {
    values.iter().copied().fold(f64::INFINITY, f64::min)
}

fn dual_by_enumeration(
    model: &MrfModel,
    dec: &Decomposition,
    delta: &[f64],
    tau: f64,
    reduce: fn(&[f64], f64) -> f64,
) -> f64 {
    let off = offsets(model);
    let tables: Vec<Vec<f64>> = (0..model.cliques().len()).map(|c| dense_table(model, c)).collect();
    let mut total = 0.0;
    for sub in dec.subgraphs() {
        let cl = sub.cliques();
        let mut nodes: Vec<usize> = cl.iter().flat_map(|&c| model.clique(c).nodes().to_vec()).collect();
        nodes.sort_unstable();
        nodes.dedup();
        let dims: Vec<usize> = nodes.iter().map(|&i| model.labels()[i]).collect();
        let mut values = Vec::new();
        enumerate(&dims, |x| {
            let mut v = 0.0;
            for &c in cl {
                let cn = model.clique(c).nodes();
                let xc: Vec<usize> = cn.iter().map(|i| x[nodes.binary_search(i).unwrap()]).collect();
                let cd: Vec<usize> = cn.iter().map(|&i| model.labels()[i]).collect();
                v += tables[c][index(&cd, &xc)];
                for (p, &xi) in xc.iter().enumerate() {
                    v -= delta[off[c][p] + xi];
                }
            }
            values.push(v);
        });
        total += reduce(&values, tau);
    }
    for i in 0..model.node_count() {
        let mut v = model.unaries()[i].clone();
        for (c, cl) in model.cliques().iter().enumerate() {
            if let Some(p) = cl.nodes().iter().position(|&n| n == i) {
                for (x, vx) in v.iter_mut().enumerate() {
                    *vx += delta[off[c][p] + x];
                }
            }
        }
        total += reduce(&v, tau);
    }
    total
}

/// Smoothed dual `g(δ)` by explicit enumeration of every subgraph.
pub fn enum_smooth_dual(model: &MrfModel, dec: &Decomposition, delta: &[f64], tau: f64) -> f64 {
    dual_by_enumeration(model, dec, delta, tau, naive_smin)
}

/// Non-smooth dual by explicit enumeration.
pub fn enum_nonsmooth_dual(model: &MrfModel, dec: &Decomposition, delta: &[f64]) -> f64 {
    dual_by_enumeration(model, dec, delta, 1.0, naive_min)
}

/// Central differences.
pub fn fd_gradient(f: impl Fn(&[f64]) -> f64, x: &[f64], h: f64) -> Vec<f64> {
    let mut y = x.to_vec();
    (0..x.len())
        .map(|j| {
            y[j] = x[j] + h;
            let a = f(&y);
            y[j] = x[j] - h;
            let b = f(&y);
            y[j] = x[j];
            (a - b) / (2.0 * h)
        })
        .collect()
}

/// Columns of the central-difference Jacobian of `g`.
pub fn fd_jacobian(g: impl Fn(&[f64]) -> Vec<f64>, x: &[f64], h: f64) -> Vec<Vec<f64>> {
    let mut y = x.to_vec();
    (0..x.len())
        .map(|j| {
            y[j] = x[j] + h;
            let a = g(&y);
            y[j] = x[j] - h;
            let b = g(&y);
            y[j] = x[j];
            a.iter().zip(&b).map(|(p, q)| (p - q) / (2.0 * h)).collect()
        })
        .collect()
}

pub fn max_abs(v: impl IntoIterator<Item = f64>) -> f64 {
    v.into_iter().fold(0.0, |a, x| a.max(x.abs()))
}

/// Log of the unnormalized local factor of one clique:
/// `-scale·θ(x) + Σ_p node_logs[p][x_p]`.
pub fn local_log_factor(table: &[f64], dims: &[usize], scale: f64, node_logs: &[Vec<f64>]) -> Vec<f64> {
    let mut out = Vec::with_capacity(table.len());
    enumerate(dims, |x| {
        let mut v = -scale * table[index(dims, x)];
        for (p, &xp) in x.iter().enumerate() {
            v += node_logs[p][xp];
        }
        out.push(v);
    });
    out
}

fn log_sum(values: &[f64]) -> f64 {
    let m = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + values.iter().map(|v| (v - m).exp()).sum::<f64>().ln()
}

/// Log message onto the positions `target` of a clique, with an optional
/// incoming log table over `source` positions. Plain enumeration.
pub fn enum_message(
    table: &[f64],
    dims: &[usize],
    scale: f64,
    node_logs: &[Vec<f64>],
    incoming: Option<(&[usize], &[f64])>,
    target: &[usize],
) -> Vec<f64> {
    let local = local_log_factor(table, dims, scale, node_logs);
    let tdims: Vec<usize> = target.iter().map(|&p| dims[p]).collect();
    let size: usize = tdims.iter().product();
    let mut buckets = vec![Vec::new(); size];
    let mut k = 0;
    enumerate(dims, |x| {
        let mut v = local[k];
        k += 1;
        if let Some((src, log)) = incoming {
            let sd: Vec<usize> = src.iter().map(|&p| dims[p]).collect();
            let sx: Vec<usize> = src.iter().map(|&p| x[p]).collect();
            v += log[index(&sd, &sx)];
        }
        let tx: Vec<usize> = target.iter().map(|&p| x[p]).collect();
        buckets[index(&tdims, &tx)].push(v);
    });
    buckets.iter().map(|b| log_sum(b)).collect()
}

/// Per `(chain position, clique position)` node marginals of the chain
/// distribution `∏_t exp(-scale·θ_t) ∏_p exp(node_logs[t][p])`.
pub fn enum_chain_marginals(
    model: &MrfModel,
    chain: &[usize],
    node_logs: &[Vec<Vec<f64>>],
    scale: f64,
) -> (f64, Vec<Vec<Vec<f64>>>) {
    let mut nodes: Vec<usize> = chain.iter().flat_map(|&c| model.clique(c).nodes().to_vec()).collect();
    nodes.sort_unstable();
    nodes.dedup();
    let dims: Vec<usize> = nodes.iter().map(|&i| model.labels()[i]).collect();
    let tables: Vec<Vec<f64>> = chain.iter().map(|&c| dense_table(model, c)).collect();
    let mut logs = Vec::new();
    let mut states = Vec::new();
    enumerate(&dims, |x| {
        let mut v = 0.0;
        for (t, &c) in chain.iter().enumerate() {
            let cn = model.clique(c).nodes();
            let xc: Vec<usize> = cn.iter().map(|i| x[nodes.binary_search(i).unwrap()]).collect();
            let cd: Vec<usize> = cn.iter().map(|&i| model.labels()[i]).collect();
            v -= scale * tables[t][index(&cd, &xc)];
            for (p, &xp) in xc.iter().enumerate() {
                v += node_logs[t][p][xp];
            }
        }
        logs.push(v);
        states.push(x.to_vec());
    });
    let z = log_sum(&logs);
    let mut marg: Vec<Vec<Vec<f64>>> = chain
        .iter()
        .map(|&c| model.clique(c).nodes().iter().map(|&i| vec![0.0; model.labels()[i]]).collect())
        .collect();
    for (lv, x) in logs.iter().zip(&states) {
        let w = (lv - z).exp();
        for (t, &c) in chain.iter().enumerate() {
            for (p, i) in model.clique(c).nodes().iter().enumerate() {
                marg[t][p][x[nodes.binary_search(i).unwrap()]] += w;
            }
        }
    }
    (z, marg)
}
