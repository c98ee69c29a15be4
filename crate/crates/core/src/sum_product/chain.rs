use super::clique::{self, CliqueBeliefs, Frame, Incoming, Scope};
use super::semiring::{LogSum, Semiring};
use super::{check_node_logs, Message};
use crate::error::{Error, Result};
use crate::model::MrfModel;

struct ChainFrames<'a> {
    model: &'a MrfModel,
    cliques: &'a [usize],
    node_logs: &'a [Vec<Vec<f64>>],
    scale: f64,
    // separator t as a scope of clique t and of clique t + 1
    sep_out: Vec<Scope>,
    sep_in: Vec<Scope>,
}

impl<'a> ChainFrames<'a> {
    fn new(
        model: &'a MrfModel,
        cliques: &'a [usize],
        separators: &[Vec<usize>],
        node_logs: &'a [Vec<Vec<f64>>],
        scale: f64,
    ) -> Result<Self> {
        if cliques.is_empty() || separators.len() + 1 != cliques.len() {
            return Err(Error::InvalidDecomposition(format!(
                "{} separators for a chain of {} cliques",
                separators.len(),
                cliques.len()
            )));
        }
        if node_logs.len() != cliques.len() {
            return Err(Error::DimensionMismatch { expected: cliques.len(), got: node_logs.len() });
        }
        for (&c, nl) in cliques.iter().zip(node_logs) {
            check_node_logs(model, c, nl)?;
        }
        let scope = |c: usize, sep: &[usize]| {
            let cl = model.clique(c);
            Scope::of_nodes(cl.nodes(), sep, model.clique_dims(c))
                .ok_or_else(|| Error::InvalidDecomposition(format!("separator {sep:?} not inside clique {c}")))
        };
        let mut sep_out = Vec::with_capacity(separators.len());
        let mut sep_in = Vec::with_capacity(separators.len());
        for (t, sep) in separators.iter().enumerate() {
            sep_out.push(scope(cliques[t], sep)?);
            sep_in.push(scope(cliques[t + 1], sep)?);
        }
        Ok(Self { model, cliques, node_logs, scale, sep_out, sep_in })
    }

    fn frame(&self, t: usize) -> Frame<'_> {
        let c = self.cliques[t];
        Frame {
            dims: self.model.clique_dims(c),
            potential: self.model.clique(c).potential(),
            scale: self.scale,
            node_logs: &self.node_logs[t],
        }
    }

    fn left<'b>(&'b self, t: usize, forward: &'b [Vec<f64>]) -> Option<Incoming<'b>> {
        (t > 0).then(|| Incoming { scope: &self.sep_in[t - 1], log: &forward[t - 1] })
    }

    fn right<'b>(&'b self, t: usize, backward: &'b [Vec<f64>]) -> Option<Incoming<'b>> {
        (t + 1 < self.cliques.len()).then(|| Incoming { scope: &self.sep_out[t], log: &backward[t] })
    }

    fn forward<S: Semiring>(&self) -> (Vec<Vec<f64>>, f64) {
        let n = self.cliques.len();
        let mut fwd: Vec<Vec<f64>> = Vec::with_capacity(n - 1);
        for t in 0..n - 1 {
            let msg = clique::message::<S>(&self.frame(t), self.left(t, &fwd), &self.sep_out[t]);
            fwd.push(msg);
        }
        let z = clique::log_partition::<S>(&self.frame(n - 1), self.left(n - 1, &fwd));
        (fwd, z)
    }

    fn backward<S: Semiring>(&self) -> (Vec<Vec<f64>>, f64) {
        let n = self.cliques.len();
        // filled from the end; index t holds the message over separator t
        let mut bwd = vec![Vec::new(); n - 1];
        for t in (1..n).rev() {
            bwd[t - 1] = clique::message::<S>(&self.frame(t), self.right(t, &bwd), &self.sep_in[t - 1]);
        }
        let z = clique::log_partition::<S>(&self.frame(0), self.right(0, &bwd));
        (bwd, z)
    }
}

/// Result of a forward-backward sweep along one chain.
#[derive(Debug, Clone)]
pub struct ChainCalibration {
    cliques: Vec<usize>,
    separators: Vec<Vec<usize>>,
    scale: f64,
    node_logs: Vec<Vec<Vec<f64>>>,
    forward: Vec<Vec<f64>>,
    backward: Vec<Vec<f64>>,
    log_partition: f64,
    log_partition_backward: f64,
    beliefs: Vec<CliqueBeliefs>,
}

/// Runs sum-product along a chain.
///
/// `node_logs[t][p]` is the log node factor attached to position `p` of the
/// chain's `t`-th clique; `scale` multiplies the clique potentials, so the
/// clique factor is `exp(-scale·θ_c)`.
pub fn calibrate_chain(
    model: &MrfModel,
    cliques: &[usize],
    separators: &[Vec<usize>],
    node_logs: Vec<Vec<Vec<f64>>>,
    scale: f64,
) -> Result<ChainCalibration> {
    let frames = ChainFrames::new(model, cliques, separators, &node_logs, scale)?;
    let (forward, z_f) = frames.forward::<LogSum>();
    let (backward, z_b) = frames.backward::<LogSum>();
    if !z_f.is_finite() || !z_b.is_finite() {
        return Err(Error::Underflow(format!("chain partition value {z_f}")));
    }
    let beliefs = (0..cliques.len())
        .map(|t| clique::beliefs(&frames.frame(t), frames.left(t, &forward), frames.right(t, &backward), false))
        .collect();
    Ok(ChainCalibration {
        cliques: cliques.to_vec(),
        separators: separators.to_vec(),
        scale,
        node_logs,
        forward,
        backward,
        log_partition: z_f,
        log_partition_backward: z_b,
        beliefs,
    })
}

/// Log-partition of a chain under semiring `S` (forward sweep only).
pub(crate) fn chain_log_partition<S: Semiring>(
    model: &MrfModel,
    cliques: &[usize],
    separators: &[Vec<usize>],
    node_logs: &[Vec<Vec<f64>>],
    scale: f64,
) -> Result<f64> {
    let frames = ChainFrames::new(model, cliques, separators, node_logs, scale)?;
    Ok(frames.forward::<S>().1)
}

impl ChainCalibration {
    pub fn cliques(&self) -> &[usize] {
        &self.cliques
    }

    /// Log-partition from the forward sweep.
    pub fn log_partition(&self) -> f64 {
        self.log_partition
    }

    /// Log-partition from the backward sweep.
    pub fn log_partition_backward(&self) -> f64 {
        self.log_partition_backward
    }

    /// Node marginals of the `t`-th clique, one probability vector per position.
    pub fn node_marginals(&self, t: usize) -> &[Vec<f64>] {
        &self.beliefs[t].nodes
    }

    pub fn forward_message(&self, t: usize) -> Result<Message> {
        Message::from_log(&self.forward[t])
    }

    pub fn backward_message(&self, t: usize) -> Result<Message> {
        Message::from_log(&self.backward[t])
    }

    fn frames<'a>(&'a self, model: &'a MrfModel) -> Result<ChainFrames<'a>> {
        ChainFrames::new(model, &self.cliques, &self.separators, &self.node_logs, self.scale)
    }

    /// Joint distribution over the `t`-th clique's labelings (row-major).
    pub fn clique_joint(&self, model: &MrfModel, t: usize) -> Result<Vec<f64>> {
        let f = self.frames(model)?;
        Ok(clique::joint(&f.frame(t), f.left(t, &self.forward), f.right(t, &self.backward)))
    }

    /// Pair marginal of positions `p != q` of the `t`-th clique, row-major `(x_p, x_q)`.
    pub fn pair_marginals(&self, model: &MrfModel, t: usize, p: usize, q: usize) -> Result<Vec<f64>> {
        let dims = model.clique_dims(self.cliques[t]);
        if p == q || p >= dims.len() || q >= dims.len() {
            return Err(Error::InvalidInput(format!("positions ({p}, {q}) in a clique of order {}", dims.len())));
        }
        let joint = self.clique_joint(model, t)?;
        let mut tab = vec![0.0; dims[p] * dims[q]];
        let mut x = vec![0; dims.len()];
        for &w in &joint {
            tab[x[p] * dims[q] + x[q]] += w;
            crate::model::next_labeling(dims, &mut x);
        }
        Ok(tab)
    }
}
