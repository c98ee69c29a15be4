//! Exact sum-product on single cliques and clique chains.
//!
//! Pattern-based potentials are handled without enumerating the clique
//! domain: the default value contributes a separable term and only the
//! listed labelings need individual corrections.

mod chain;
mod clique;
mod semiring;

pub use chain::{calibrate_chain, ChainCalibration};
pub use clique::{pair_index, CliqueBeliefs};

pub(crate) use chain::chain_log_partition;
pub(crate) use clique::{Frame, Incoming, Scope};
pub(crate) use semiring::{LogAcc, LogSum, MaxPlus, Semiring};

pub(crate) fn clique_log_partition<S: Semiring>(frame: &Frame<'_>) -> f64 {
    clique::log_partition::<S>(frame, None)
}

pub(crate) fn clique_joint(frame: &Frame<'_>) -> Vec<f64> {
    clique::joint(frame, None, None)
}

use crate::error::{Error, Result};
use crate::model::{MrfModel, Potential};

/// Non-negative table stored as `exp(log_offset) · values` with `max(values) = 1`.
#[derive(Debug, Clone, PartialEq)]
pub struct Message {
    pub log_offset: f64,
    pub values: Vec<f64>,
}

impl Message {
    pub fn from_log(log: &[f64]) -> Result<Self> {
        let mx = log.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        if !mx.is_finite() {
            return Err(Error::Underflow(format!("message with maximum log value {mx}")));
        }
        Ok(Self { log_offset: mx, values: log.iter().map(|&v| (v - mx).exp()).collect() })
    }

    pub fn log_values(&self) -> Vec<f64> {
        self.values.iter().map(|&v| self.log_offset + v.ln()).collect()
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

pub(crate) fn check_node_logs(model: &MrfModel, c: usize, node_logs: &[Vec<f64>]) -> Result<()> {
    let dims = model.clique_dims(c);
    if node_logs.len() != dims.len() {
        return Err(Error::DimensionMismatch { expected: dims.len(), got: node_logs.len() });
    }
    for (nl, &d) in node_logs.iter().zip(dims) {
        if nl.len() != d {
            return Err(Error::DimensionMismatch { expected: d, got: nl.len() });
        }
        if nl.iter().any(|v| v.is_nan() || *v == f64::INFINITY) {
            return Err(Error::Numerical("non-finite node factor".into()));
        }
    }
    Ok(())
}

fn frame<'a>(model: &'a MrfModel, c: usize, scale: f64, node_logs: &'a [Vec<f64>]) -> Result<Frame<'a>> {
    if c >= model.cliques().len() {
        return Err(Error::InvalidInput(format!("clique {c} does not exist")));
    }
    check_node_logs(model, c, node_logs)?;
    Ok(Frame { dims: model.clique_dims(c), potential: model.clique(c).potential(), scale, node_logs })
}

fn scope_of(model: &MrfModel, c: usize, nodes: &[usize]) -> Result<Scope> {
    Scope::of_nodes(model.clique(c).nodes(), nodes, model.clique_dims(c))
        .ok_or_else(|| Error::InvalidInput(format!("nodes {nodes:?} not all in clique {c}")))
}

/// Incoming message for a clique: the separator node ids (its table is
/// indexed row-major over them in this order) and the message.
pub type IncomingMessage<'a> = (&'a [usize], &'a Message);

fn with_incoming<T>(
    model: &MrfModel,
    c: usize,
    incoming: Option<IncomingMessage<'_>>,
    f: impl FnOnce(Option<Incoming<'_>>) -> T,
) -> Result<T> {
    match incoming {
        None => Ok(f(None)),
        Some((nodes, msg)) => {
            let scope = scope_of(model, c, nodes)?;
            if scope.size() != msg.len() {
                return Err(Error::DimensionMismatch { expected: scope.size(), got: msg.len() });
            }
            let log = msg.log_values();
            Ok(f(Some(Incoming { scope: &scope, log: &log })))
        }
    }
}

/// Message from clique `c` onto `separator` by enumerating the clique domain.
///
/// The clique factor is `exp(-scale·θ_c)` times `exp(node_logs[p])` for each
/// position `p`, times the incoming message.
pub fn dense_message(
    model: &MrfModel,
    c: usize,
    scale: f64,
    node_logs: &[Vec<f64>],
    incoming: Option<IncomingMessage<'_>>,
    separator: &[usize],
) -> Result<Message> {
    let fr = frame(model, c, scale, node_logs)?;
    let target = scope_of(model, c, separator)?;
    let log = with_incoming(model, c, incoming, |inc| clique::dense_message::<LogSum>(&fr, inc, &target))?;
    Message::from_log(&log)
}

/// Same as [`dense_message`] for a pattern potential, touching each pattern
/// entry once. Falls back to enumeration when the signed pattern sum cancels.
pub fn pattern_message(
    model: &MrfModel,
    c: usize,
    scale: f64,
    node_logs: &[Vec<f64>],
    incoming: Option<IncomingMessage<'_>>,
    separator: &[usize],
) -> Result<Message> {
    let fr = frame(model, c, scale, node_logs)?;
    if !matches!(fr.potential, Potential::Pattern(_)) {
        return Err(Error::InvalidInput(format!("clique {c} has a dense potential")));
    }
    let target = scope_of(model, c, separator)?;
    let log = with_incoming(model, c, incoming, |inc| clique::message::<LogSum>(&fr, inc, &target))?;
    Message::from_log(&log)
}

/// Log-partition, node marginals and optionally pair marginals of one clique's
/// local distribution.
pub fn clique_beliefs(
    model: &MrfModel,
    c: usize,
    scale: f64,
    node_logs: &[Vec<f64>],
    pairs: bool,
) -> Result<CliqueBeliefs> {
    let fr = frame(model, c, scale, node_logs)?;
    let b = clique::beliefs(&fr, None, None, pairs);
    if !b.log_partition.is_finite() {
        return Err(Error::Underflow(format!("clique {c} partition value {}", b.log_partition)));
    }
    Ok(b)
}

/// Pair marginal of positions `p != q` from beliefs computed with pairs,
/// row-major `(x_p, x_q)`.
pub fn pair_marginals(beliefs: &CliqueBeliefs, p: usize, q: usize) -> Result<Vec<f64>> {
    let k = beliefs.nodes.len();
    if beliefs.pairs.is_empty() {
        return Err(Error::InvalidInput("beliefs were computed without pair marginals".into()));
    }
    if p == q || p >= k || q >= k {
        return Err(Error::InvalidInput(format!("positions ({p}, {q}) in a clique of order {k}")));
    }
    if p < q {
        return Ok(beliefs.pairs[pair_index(k, p, q)].clone());
    }
    let (lp, lq) = (beliefs.nodes[p].len(), beliefs.nodes[q].len());
    let t = &beliefs.pairs[pair_index(k, q, p)];
    Ok((0..lp * lq).map(|i| t[(i % lq) * lp + i / lq]).collect())
}
