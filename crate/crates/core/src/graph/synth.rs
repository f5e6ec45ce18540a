//! Dynamic stochastic block model.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{DynamicGraph, NodeId, Snapshot};
use crate::error::{Error, Result};
use crate::rng::rng_for;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SbmConfig {
    pub n: usize,
    pub communities: usize,
    pub p_in: f64,
    pub p_out: f64,
    pub snapshots: usize,
    pub churn: f64,
    pub seed: u64,
}

impl Default for SbmConfig {
    fn default() -> Self {
        Self {
            n: 200,
            communities: 2,
            p_in: 0.1,
            p_out: 0.01,
            snapshots: 8,
            churn: 0.1,
            seed: 7,
        }
    }
}

#[derive(Debug, Clone)]
pub struct SyntheticGraph {
    pub graph: DynamicGraph,
    /// Planted community of each node.
    pub communities: Vec<usize>,
}

/// Samples a dynamic SBM.
///
/// The first snapshot draws every pair independently with probability
/// `p_in` (same community) or `p_out`. Each later snapshot copies its
/// predecessor and redraws every pair with probability `churn`, so each
/// snapshot's marginal is the same SBM and a `churn` fraction of the edges
/// is resampled in expectation. Node `i` belongs to community
/// `i * communities / n`.
pub fn synth_dynamic_sbm(cfg: &SbmConfig) -> Result<SyntheticGraph> {
    if !(0.0 <= cfg.p_out && cfg.p_out < cfg.p_in && cfg.p_in <= 1.0) {
        return Err(Error::Config(format!(
            "need 0 <= p_out < p_in <= 1, got p_in = {}, p_out = {}",
            cfg.p_in, cfg.p_out
        )));
    }
    if !(0.0..=1.0).contains(&cfg.churn) {
        return Err(Error::Config(format!("churn {} outside [0, 1]", cfg.churn)));
    }
    if cfg.n < 2 || cfg.communities == 0 || cfg.communities > cfg.n || cfg.snapshots == 0 {
        return Err(Error::Config(format!(
            "need n >= 2, 1 <= communities <= n and at least one snapshot: {cfg:?}"
        )));
    }
    let n = cfg.n;
    let communities: Vec<usize> = (0..n).map(|i| i * cfg.communities / n).collect();
    let pairs: Vec<(NodeId, NodeId)> = (0..n).flat_map(|u| (u + 1..n).map(move |v| (u, v))).collect();
    let prob = |u: NodeId, v: NodeId| {
        if communities[u] == communities[v] {
            cfg.p_in
        } else {
            cfg.p_out
        }
    };
    let mut rng = rng_for(cfg.seed, &[0x5b3]);
    let mut state: Vec<bool> = pairs.iter().map(|&(u, v)| rng.random_bool(prob(u, v))).collect();
    let mut snapshots = Vec::with_capacity(cfg.snapshots);
    for t in 0..cfg.snapshots {
        if t > 0 {
            for (s, &(u, v)) in state.iter_mut().zip(&pairs) {
                if rng.random::<f64>() < cfg.churn {
                    *s = rng.random_bool(prob(u, v));
                }
            }
        }
        let edges = pairs
            .iter()
            .zip(&state)
            .filter(|(_, &on)| on)
            .map(|(&(u, v), _)| (u, v, 1.0));
        snapshots.push(Snapshot::from_edges(n, edges)?);
    }
    let ids = (0..n).map(|i| i.to_string()).collect();
    Ok(SyntheticGraph {
        graph: DynamicGraph::new(ids, snapshots)?,
        communities,
    })
}
