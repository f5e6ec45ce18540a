//! Snapshot sequences, windows and samplers.

mod io;
mod negative;
mod synth;
mod walks;

use std::collections::{BTreeMap, HashMap};

use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

pub use io::{load_edge_stream, load_snapshots, parse_edge_stream, save_snapshots, Bucketing, MANIFEST_FILE};
pub use negative::{negative_distribution, NegativeSampler, DEFAULT_NEGATIVE_POWER};
pub use synth::{synth_dynamic_sbm, SbmConfig, SyntheticGraph};
pub use walks::{sample_walks, WalkConfig, WalkCorpus};

/// Dense global node id.
pub type NodeId = usize;

/// One undirected snapshot `G_t`.
///
/// Every active node carries a self-loop of weight 1 in its neighbor list;
/// the self-loop is not part of the edge set.
#[derive(Debug, Clone, PartialEq)]
pub struct Snapshot {
    nodes: Vec<NodeId>,
    active: Vec<bool>,
    edges: BTreeMap<(NodeId, NodeId), f64>,
    adjacency: Vec<Vec<(NodeId, f64)>>,
}

impl Snapshot {
    /// Builds a snapshot over a universe of `num_nodes` ids. Duplicate
    /// undirected edges collapse with summed weight; `(u, u)` entries only
    /// mark `u` active.
    pub fn from_edges(num_nodes: usize, edges: impl IntoIterator<Item = (NodeId, NodeId, f64)>) -> Result<Self> {
        let mut active = vec![false; num_nodes];
        let mut set: BTreeMap<(NodeId, NodeId), f64> = BTreeMap::new();
        for (u, v, w) in edges {
            if u >= num_nodes || v >= num_nodes {
                return Err(Error::Lookup(format!(
                    "node {} outside universe of {num_nodes}",
                    u.max(v)
                )));
            }
            if !(w > 0.0 && w.is_finite()) {
                return Err(Error::Contract(format!("edge ({u}, {v}) has weight {w}")));
            }
            active[u] = true;
            active[v] = true;
            if u != v {
                *set.entry((u.min(v), u.max(v))).or_insert(0.0) += w;
            }
        }
        Ok(Self::assemble(active, set))
    }

    fn assemble(active: Vec<bool>, edges: BTreeMap<(NodeId, NodeId), f64>) -> Self {
        let mut adjacency: Vec<Vec<(NodeId, f64)>> = vec![Vec::new(); active.len()];
        for (&(u, v), &w) in &edges {
            adjacency[u].push((v, w));
            adjacency[v].push((u, w));
        }
        let mut nodes = Vec::new();
        for (u, list) in adjacency.iter_mut().enumerate() {
            if active[u] {
                nodes.push(u);
                list.push((u, 1.0));
                list.sort_by_key(|&(v, _)| v);
            }
        }
        Self {
            nodes,
            active,
            edges,
            adjacency,
        }
    }

    pub fn num_nodes(&self) -> usize {
        self.nodes.len()
    }

    pub fn num_edges(&self) -> usize {
        self.edges.len()
    }

    /// Active node ids in increasing order.
    pub fn nodes(&self) -> &[NodeId] {
        &self.nodes
    }

    pub fn is_active(&self, u: NodeId) -> bool {
        self.active.get(u).copied().unwrap_or(false)
    }

    /// Undirected edges `(u, v)` with `u < v`, and their weights.
    pub fn edges(&self) -> impl Iterator<Item = ((NodeId, NodeId), f64)> + '_ {
        self.edges.iter().map(|(&k, &w)| (k, w))
    }

    pub fn has_edge(&self, u: NodeId, v: NodeId) -> bool {
        self.edges.contains_key(&(u.min(v), u.max(v)))
    }

    pub fn weight(&self, u: NodeId, v: NodeId) -> Option<f64> {
        if u == v {
            return self.is_active(u).then_some(1.0);
        }
        self.edges.get(&(u.min(v), u.max(v))).copied()
    }

    /// Attention neighborhood `N_t(u)` including the self-loop, sorted by id.
    pub fn neighbors(&self, u: NodeId) -> &[(NodeId, f64)] {
        self.adjacency.get(u).map_or(&[], |v| v.as_slice())
    }

    /// Number of distinct neighbors, self-loop excluded.
    pub fn degree(&self, u: NodeId) -> usize {
        if self.is_active(u) {
            self.adjacency[u].len() - 1
        } else {
            0
        }
    }
}

/// An ordered sequence of snapshots over a shared global node index.
#[derive(Debug, Clone, PartialEq)]
pub struct DynamicGraph {
    snapshots: Vec<Snapshot>,
    node_ids: Vec<String>,
    index: HashMap<String, NodeId>,
    offline: Option<usize>,
}

impl DynamicGraph {
    pub fn new(node_ids: Vec<String>, snapshots: Vec<Snapshot>) -> Result<Self> {
        let mut index = HashMap::with_capacity(node_ids.len());
        for (i, id) in node_ids.iter().enumerate() {
            if index.insert(id.clone(), i).is_some() {
                return Err(Error::Contract(format!("duplicate node id `{id}`")));
            }
        }
        if let Some(s) = snapshots.iter().find(|s| s.active.len() != node_ids.len()) {
            return Err(Error::Contract(format!(
                "snapshot universe {} does not match {} global ids",
                s.active.len(),
                node_ids.len()
            )));
        }
        Ok(Self {
            snapshots,
            node_ids,
            index,
            offline: None,
        })
    }

    /// Sets the offline/online split: snapshots `0..m` are offline.
    pub fn with_split(mut self, m: usize) -> Result<Self> {
        if m < 1 || m >= self.len() {
            return Err(Error::Config(format!(
                "offline split m = {m} must satisfy 1 <= m < T = {}",
                self.len()
            )));
        }
        self.offline = Some(m);
        Ok(self)
    }

    pub fn split(&self) -> Option<usize> {
        self.offline
    }

    pub fn offline_count(&self) -> Result<usize> {
        self.offline
            .ok_or_else(|| Error::Config("offline split m has not been set".into()))
    }

    /// Number of snapshots `T`.
    pub fn len(&self) -> usize {
        self.snapshots.len()
    }

    pub fn is_empty(&self) -> bool {
        self.snapshots.is_empty()
    }

    /// Size `N` of the global index.
    pub fn num_nodes(&self) -> usize {
        self.node_ids.len()
    }

    pub fn snapshot(&self, t: usize) -> &Snapshot {
        &self.snapshots[t]
    }

    pub fn snapshots(&self) -> &[Snapshot] {
        &self.snapshots
    }

    pub fn node_ids(&self) -> &[String] {
        &self.node_ids
    }

    pub fn node_id(&self, u: NodeId) -> &str {
        &self.node_ids[u]
    }

    pub fn index_of(&self, external: &str) -> Option<NodeId> {
        self.index.get(external).copied()
    }

    /// Window of length at most `l` ending at `t`, truncated at the start of
    /// the sequence.
    pub fn window(&self, t: usize, l: usize) -> Window {
        assert!(t < self.len(), "window end {t} beyond {} snapshots", self.len());
        let l = l.max(1);
        Window {
            t,
            l,
            start: (t + 1).saturating_sub(l),
        }
    }

    /// One past the largest id active anywhere in snapshots `0..=t`.
    pub fn capacity_through(&self, t: usize) -> usize {
        self.snapshots[..=t]
            .iter()
            .filter_map(|s| s.nodes.last().copied())
            .max()
            .map_or(0, |u| u + 1)
    }

    /// SHA-256 over a canonical text rendering of ids and weighted edges.
    pub fn content_hash(&self) -> String {
        let mut h = Sha256::new();
        h.update(b"nodes\n");
        for id in &self.node_ids {
            h.update(id.as_bytes());
            h.update(b"\n");
        }
        for (t, s) in self.snapshots.iter().enumerate() {
            h.update(format!("snapshot {t}\n").as_bytes());
            for ((u, v), w) in s.edges() {
                h.update(format!("{u}\t{v}\t{w}\n").as_bytes());
            }
        }
        hex::encode(h.finalize())
    }
}

/// The snapshots `{G_start, ..., G_t}` seen by one forward pass.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Window {
    pub t: usize,
    pub l: usize,
    pub start: usize,
}

impl Window {
    pub fn len(&self) -> usize {
        self.t + 1 - self.start
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Snapshot indices, oldest first.
    pub fn steps(&self) -> std::ops::RangeInclusive<usize> {
        self.start..=self.t
    }

    /// Position-table row for each window entry. Truncated windows are
    /// right-aligned so the newest snapshot always uses row `l - 1`.
    pub fn positions(&self) -> std::ops::Range<usize> {
        self.l - self.len()..self.l
    }

    pub fn snapshots<'g>(&self, g: &'g DynamicGraph) -> &'g [Snapshot] {
        &g.snapshots[self.start..=self.t]
    }

    /// Nodes active in at least one window snapshot.
    pub fn covered_nodes(&self, g: &DynamicGraph) -> Vec<NodeId> {
        let mut seen = vec![false; g.num_nodes()];
        for s in self.snapshots(g) {
            for &u in s.nodes() {
                seen[u] = true;
            }
        }
        seen.iter().enumerate().filter_map(|(u, &b)| b.then_some(u)).collect()
    }
}
