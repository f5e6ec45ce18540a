use std::collections::BTreeMap;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{DynamicGraph, NodeId};
use crate::error::{Error, Result};
use crate::rng::rng_for;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct WalkConfig {
    pub walk_len: usize,
    pub walks_per_node: usize,
    pub context: usize,
}

impl Default for WalkConfig {
    fn default() -> Self {
        Self {
            walk_len: 40,
            walks_per_node: 10,
            context: 10,
        }
    }
}

/// Positive co-occurrence pairs for one snapshot.
#[derive(Debug, Clone, PartialEq)]
pub struct WalkCorpus {
    pub t: usize,
    pub pairs: Vec<(NodeId, NodeId)>,
}

impl WalkCorpus {
    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    /// Pairs grouped by their first node, with multiplicities, in id order.
    pub fn by_anchor(&self) -> BTreeMap<NodeId, Vec<(NodeId, u32)>> {
        let mut counts: BTreeMap<NodeId, BTreeMap<NodeId, u32>> = BTreeMap::new();
        for &(u, v) in &self.pairs {
            *counts.entry(u).or_default().entry(v).or_insert(0) += 1;
        }
        counts.into_iter().map(|(u, m)| (u, m.into_iter().collect())).collect()
    }
}

/// Uniform-neighbor random walks from every active node of snapshot `t`.
///
/// Pairs are `(walk[i], walk[j])` for `0 < |i - j| <= context`, skipping
/// pairs whose endpoints coincide. Self-loops are not walked.
pub fn sample_walks(g: &DynamicGraph, t: usize, cfg: &WalkConfig, seed: u64) -> Result<WalkCorpus> {
    let snap = g.snapshot(t);
    if snap.num_nodes() == 0 {
        return Err(Error::Contract(format!("snapshot {t} is empty")));
    }
    let mut rng = rng_for(seed, &[0x57a1, t as u64]);
    let mut pairs = Vec::new();
    let mut walk = Vec::with_capacity(cfg.walk_len);
    for &start in snap.nodes() {
        for _ in 0..cfg.walks_per_node {
            walk.clear();
            walk.push(start);
            while walk.len() < cfg.walk_len {
                let cur = *walk.last().expect("nonempty");
                let nbrs: Vec<NodeId> = snap
                    .neighbors(cur)
                    .iter()
                    .map(|&(v, _)| v)
                    .filter(|&v| v != cur)
                    .collect();
                if nbrs.is_empty() {
                    break;
                }
                walk.push(nbrs[rng.random_range(0..nbrs.len())]);
            }
            for i in 0..walk.len() {
                let hi = (i + cfg.context).min(walk.len() - 1);
                for j in i + 1..=hi {
                    if walk[i] != walk[j] {
                        pairs.push((walk[i], walk[j]));
                        pairs.push((walk[j], walk[i]));
                    }
                }
            }
        }
    }
    Ok(WalkCorpus { t, pairs })
}
