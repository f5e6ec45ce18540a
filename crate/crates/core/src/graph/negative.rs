use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::Rng;

use super::{DynamicGraph, NodeId};
use crate::error::{Error, Result};

/// Unigram smoothing exponent.
pub const DEFAULT_NEGATIVE_POWER: f64 = 0.75;

/// Categorical distribution over the active nodes of one snapshot.
#[derive(Debug, Clone)]
pub struct NegativeSampler {
    pub t: usize,
    nodes: Vec<NodeId>,
    probs: Vec<f64>,
    dist: WeightedIndex<f64>,
}

impl NegativeSampler {
    pub fn nodes(&self) -> &[NodeId] {
        &self.nodes
    }

    pub fn probabilities(&self) -> &[f64] {
        &self.probs
    }

    pub fn probability(&self, u: NodeId) -> f64 {
        self.nodes.binary_search(&u).map_or(0.0, |i| self.probs[i])
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> NodeId {
        self.nodes[self.dist.sample(rng)]
    }
}

/// `P(u) ∝ degree_t(u)^power` over the nodes active at `t`.
pub fn negative_distribution(g: &DynamicGraph, t: usize, power: f64) -> Result<NegativeSampler> {
    let snap = g.snapshot(t);
    if snap.num_nodes() == 0 {
        return Err(Error::Contract(format!("snapshot {t} is empty")));
    }
    let nodes = snap.nodes().to_vec();
    let mut weights: Vec<f64> = nodes.iter().map(|&u| (snap.degree(u) as f64).powf(power)).collect();
    let total: f64 = weights.iter().sum();
    if total.is_nan() || total <= 0.0 {
        weights.iter_mut().for_each(|w| *w = 1.0);
    }
    let total: f64 = weights.iter().sum();
    let probs = weights.iter().map(|w| w / total).collect();
    let dist = WeightedIndex::new(&weights).map_err(|e| Error::Contract(format!("negative distribution: {e}")))?;
    Ok(NegativeSampler { t, nodes, probs, dist })
}
