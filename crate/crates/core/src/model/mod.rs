//! Structural + temporal self-attention over a window of snapshots.
//!
//! Layout of the trainable tensors, per structural head `i` and temporal
//! head `j`:
//!
//! | name                      | shape          |
//! |---------------------------|----------------|
//! | `structural.{i}.weight`   | `N x d/h`      |
//! | `structural.{i}.attention`| `2*(d/h) x 1`  |
//! | `temporal.{j}.query`      | `d x k`        |
//! | `temporal.{j}.key`        | `d x k`        |
//! | `temporal.{j}.value`      | `d x k`        |
//! | `position`                | `l x d`        |
//!
//! The structural weight is stored node-major so that multiplying by a
//! one-hot input is a row lookup.

mod checkpoint;
mod config;
mod embeddings;

use std::collections::HashMap;

use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::autodiff::{ParamKey, Tape, Var};
use crate::error::{Error, Result};
use crate::graph::{DynamicGraph, NodeId, Snapshot, Window};
use crate::params::ParamStore;
use crate::rng::rng_for;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint, CHECKPOINT_FORMAT};
pub use config::{MaskMode, ModelConfig, Pipeline};
pub use embeddings::NodeEmbeddings;

/// Standard deviation of the initial position embeddings.
pub const POSITION_INIT_STD: f64 = 0.01;

#[derive(Debug, Clone)]
struct HeadKeys {
    weight: ParamKey,
    attention: ParamKey,
}

#[derive(Debug, Clone)]
struct TemporalKeys {
    query: ParamKey,
    key: ParamKey,
    value: ParamKey,
}

#[derive(Debug, Clone)]
struct Keys {
    structural: Vec<HeadKeys>,
    temporal: Vec<TemporalKeys>,
    position: ParamKey,
}

impl Keys {
    fn resolve<S: Scalar>(cfg: &ModelConfig, store: &ParamStore<S>) -> Result<Self> {
        Ok(Self {
            structural: (0..cfg.h)
                .map(|i| {
                    Ok(HeadKeys {
                        weight: store.key_of(&format!("structural.{i}.weight"))?,
                        attention: store.key_of(&format!("structural.{i}.attention"))?,
                    })
                })
                .collect::<Result<_>>()?,
            temporal: (0..cfg.g)
                .map(|j| {
                    Ok(TemporalKeys {
                        query: store.key_of(&format!("temporal.{j}.query"))?,
                        key: store.key_of(&format!("temporal.{j}.key"))?,
                        value: store.key_of(&format!("temporal.{j}.value"))?,
                    })
                })
                .collect::<Result<_>>()?,
            position: store.key_of("position")?,
        })
    }
}

fn glorot_bound(fan_in: usize, fan_out: usize) -> f64 {
    (6.0 / (fan_in + fan_out) as f64).sqrt()
}

fn uniform<S: Scalar, R: Rng>(rng: &mut R, n: usize, bound: f64) -> Vec<S> {
    (0..n).map(|_| S::of(rng.random_range(-bound..bound))).collect()
}

/// `l x l` mask of `0` / `-inf` for the given convention.
pub fn temporal_mask<S: Scalar>(len: usize, mode: MaskMode) -> Tensor<S> {
    let mut m = Tensor::zeros(&[len, len]);
    for i in 0..len {
        for j in 0..len {
            let open = match mode {
                MaskMode::Causal => j <= i,
                MaskMode::Strict => i < j,
            };
            if !open {
                m.row_mut(i)[j] = S::neg_infinity();
            }
        }
    }
    m
}

/// Parameters and configuration of one attention model.
#[derive(Debug)]
pub struct AttentionModel<S: Scalar> {
    config: ModelConfig,
    store: ParamStore<S>,
    keys: Keys,
    seed: u64,
    table_bound: f64,
}

impl<S: Scalar> Clone for AttentionModel<S> {
    // the cloned store has a new id, so keys must be resolved against it
    fn clone(&self) -> Self {
        Self::from_parts(self.config, self.store.clone(), self.seed, self.table_bound)
            .expect("cloned parameters keep their layout")
    }
}

impl<S: Scalar> AttentionModel<S> {
    /// Glorot-uniform weights, `N(0, 0.01^2)` position table. Structural
    /// rows are drawn per node from a stream keyed by `(seed, head, node)`,
    /// so a row's initial value does not depend on when it was allocated.
    pub fn new(config: ModelConfig, capacity: usize, seed: u64) -> Result<Self> {
        config.validate()?;
        let dh = config.head_dim();
        let table_bound = glorot_bound(capacity.max(1), dh);
        let mut store = ParamStore::new();
        for i in 0..config.h {
            let mut rows = Vec::with_capacity(capacity * dh);
            for u in 0..capacity {
                rows.extend(Self::table_row(seed, i, u, dh, table_bound));
            }
            store.insert(
                format!("structural.{i}.weight"),
                Tensor::from_vec(&[capacity, dh], rows)?,
            )?;
            let mut rng = rng_for(seed, &[0xa7, i as u64]);
            let a = uniform(&mut rng, 2 * dh, glorot_bound(2 * dh, 1));
            store.insert(format!("structural.{i}.attention"), Tensor::from_vec(&[2 * dh, 1], a)?)?;
        }
        let bound = glorot_bound(config.d, config.k);
        for j in 0..config.g {
            for (tag, name) in [(1u64, "query"), (2, "key"), (3, "value")] {
                let mut rng = rng_for(seed, &[0x7e, j as u64, tag]);
                let w = uniform(&mut rng, config.d * config.k, bound);
                store.insert(
                    format!("temporal.{j}.{name}"),
                    Tensor::from_vec(&[config.d, config.k], w)?,
                )?;
            }
        }
        let mut rng = rng_for(seed, &[0x905]);
        let normal = Normal::new(0.0, POSITION_INIT_STD).expect("valid std");
        let p = (0..config.l * config.d)
            .map(|_| S::of(normal.sample(&mut rng)))
            .collect();
        store.insert("position", Tensor::from_vec(&[config.l, config.d], p)?)?;
        let keys = Keys::resolve(&config, &store)?;
        Ok(Self {
            config,
            store,
            keys,
            seed,
            table_bound,
        })
    }

    fn table_row(seed: u64, head: usize, node: usize, dh: usize, bound: f64) -> Vec<S> {
        let mut rng = rng_for(seed, &[0x7ab1e, head as u64, node as u64]);
        uniform(&mut rng, dh, bound)
    }

    pub(crate) fn from_parts(config: ModelConfig, store: ParamStore<S>, seed: u64, table_bound: f64) -> Result<Self> {
        config.validate()?;
        let keys = Keys::resolve(&config, &store)?;
        let model = Self {
            config,
            store,
            keys,
            seed,
            table_bound,
        };
        let expected = config.parameter_count(model.capacity());
        if model.store.parameter_count() != expected || model.store.len() != 2 * config.h + 3 * config.g + 1 {
            return Err(Error::Config("parameter tensors do not match the model config".into()));
        }
        Ok(model)
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub(crate) fn table_bound(&self) -> f64 {
        self.table_bound
    }

    pub fn params(&self) -> &ParamStore<S> {
        &self.store
    }

    pub fn params_mut(&mut self) -> &mut ParamStore<S> {
        &mut self.store
    }

    /// Number of node rows in the structural tables.
    pub fn capacity(&self) -> usize {
        self.store.value(self.keys.structural[0].weight).rows()
    }

    /// Total trainable scalars.
    pub fn parameter_count(&self) -> usize {
        self.store.parameter_count()
    }

    /// Appends freshly initialized rows until the tables hold `n` nodes.
    pub fn ensure_capacity(&mut self, n: usize) -> Result<()> {
        let cur = self.capacity();
        if n <= cur {
            return Ok(());
        }
        let dh = self.config.head_dim();
        for (i, head) in self.keys.structural.iter().enumerate() {
            let mut rows = Vec::with_capacity((n - cur) * dh);
            for u in cur..n {
                rows.extend(Self::table_row(self.seed, i, u, dh, self.table_bound));
            }
            self.store.grow_rows(head.weight, &rows)?;
        }
        Ok(())
    }

    /// One structural head on one snapshot, for `targets` (all active).
    /// Returns `|targets| x d/h`.
    pub fn structural_head<'a>(
        &'a self,
        tape: &mut Tape<'a, S>,
        snap: &Snapshot,
        head: usize,
        targets: &[NodeId],
    ) -> Result<Var> {
        Ok(self.structural_parts(tape, snap, head, targets)?.0)
    }

    /// Attention coefficients of one structural head: per target, each
    /// neighbor (self-loop included) with its weight.
    pub fn structural_attention(
        &self,
        snap: &Snapshot,
        head: usize,
        targets: &[NodeId],
    ) -> Result<Vec<Vec<(NodeId, S)>>> {
        let mut tape = Tape::new();
        let (_, alpha) = self.structural_parts(&mut tape, snap, head, targets)?;
        let alpha = tape.value(alpha).data();
        let mut at = 0;
        Ok(targets
            .iter()
            .map(|&u| {
                snap.neighbors(u)
                    .iter()
                    .map(|&(v, _)| {
                        at += 1;
                        (v, alpha[at - 1])
                    })
                    .collect()
            })
            .collect())
    }

    /// Output and attention coefficients (`|edges| x 1`) of one head.
    fn structural_parts<'a>(
        &'a self,
        tape: &mut Tape<'a, S>,
        snap: &Snapshot,
        head: usize,
        targets: &[NodeId],
    ) -> Result<(Var, Var)> {
        let dh = self.config.head_dim();
        let mut local: HashMap<NodeId, usize> = HashMap::new();
        let mut involved: Vec<NodeId> = Vec::new();
        let mut intern = |u: NodeId| -> usize {
            *local.entry(u).or_insert_with(|| {
                involved.push(u);
                involved.len() - 1
            })
        };
        let mut tgt_idx = Vec::new();
        let mut nbr_idx = Vec::new();
        let mut weights = Vec::new();
        let mut offsets = vec![0];
        for &u in targets {
            let nbrs = snap.neighbors(u);
            if nbrs.is_empty() {
                return Err(Error::Contract(format!("node {u} has an empty neighborhood")));
            }
            let lu = intern(u);
            for &(v, a) in nbrs {
                tgt_idx.push(lu);
                nbr_idx.push(intern(v));
                weights.push(S::of(a));
            }
            offsets.push(tgt_idx.len());
        }
        let cap = self.capacity();
        if let Some(&bad) = involved.iter().find(|&&u| u >= cap) {
            return Err(Error::Lookup(format!("node {bad} beyond model capacity {cap}")));
        }
        let keys = &self.keys.structural[head];
        let table = tape.param(&self.store, keys.weight);
        let wx = tape.row_gather(table, involved)?;
        let att = tape.param(&self.store, keys.attention);
        let a_self = tape.slice_rows(att, 0, dh)?;
        let a_nbr = tape.slice_rows(att, dh, dh)?;
        let s_self = tape.matmul(wx, a_self)?;
        let s_nbr = tape.matmul(wx, a_nbr)?;
        let e_self = tape.row_gather(s_self, tgt_idx)?;
        let e_nbr = tape.row_gather(s_nbr, nbr_idx.clone())?;
        let e = tape.add(e_self, e_nbr)?;
        let n_edges = weights.len();
        let a = tape.constant(Tensor::from_vec(&[n_edges, 1], weights)?);
        let e = tape.mul(e, a)?;
        let e = tape.leaky_relu(e)?;
        let alpha = tape.segment_softmax(e, offsets.clone())?;
        let values = tape.row_gather(wx, nbr_idx)?;
        let z = tape.segment_weighted_sum(alpha, values, offsets)?;
        Ok((tape.elu(z)?, alpha))
    }

    /// Concatenation of all structural heads: `|targets| x d`.
    pub fn multi_head_structural<'a>(
        &'a self,
        tape: &mut Tape<'a, S>,
        snap: &Snapshot,
        targets: &[NodeId],
    ) -> Result<Var> {
        let heads = (0..self.config.h)
            .map(|i| self.structural_head(tape, snap, i, targets))
            .collect::<Result<Vec<_>>>()?;
        if heads.len() == 1 {
            return Ok(heads[0]);
        }
        tape.concat(&heads, 1)
    }

    /// One temporal head over sequences stacked as `n * w` rows of width
    /// `d` (node-major, oldest first). Returns `n * w x k`.
    pub fn temporal_head<'a>(&'a self, tape: &mut Tape<'a, S>, x: Var, w: usize, head: usize) -> Result<Var> {
        Ok(self.temporal_parts(tape, x, w, head)?.0)
    }

    /// Attention matrix (`w x w`, oldest snapshot first) of one temporal
    /// head for each target.
    pub fn temporal_attention(
        &self,
        g: &DynamicGraph,
        window: &Window,
        targets: &[NodeId],
        head: usize,
    ) -> Result<Vec<Tensor<S>>> {
        let w = window.len();
        let mut tape = Tape::new();
        let x = self.temporal_input(&mut tape, g, window, targets)?;
        let (_, beta) = self.temporal_parts(&mut tape, x, w, head)?;
        let beta = tape.value(beta);
        (0..targets.len())
            .map(|b| Tensor::from_vec(&[w, w], beta.data()[b * w * w..(b + 1) * w * w].to_vec()))
            .collect()
    }

    /// Output and attention rows (`n * w x w`) of one temporal head.
    fn temporal_parts<'a>(&'a self, tape: &mut Tape<'a, S>, x: Var, w: usize, head: usize) -> Result<(Var, Var)> {
        let keys = &self.keys.temporal[head];
        let wq = tape.param(&self.store, keys.query);
        let wk = tape.param(&self.store, keys.key);
        let wv = tape.param(&self.store, keys.value);
        let q = tape.matmul(x, wq)?;
        let k = tape.matmul(x, wk)?;
        let v = tape.matmul(x, wv)?;
        let scores = tape.block_scores(q, k, w)?;
        let scores = tape.scale(scores, 1.0 / (self.config.k as f64).sqrt())?;
        let block = temporal_mask::<S>(w, self.config.mask);
        let blocks = tape.value(x).rows() / w;
        let mut mask = Tensor::zeros(&[blocks * w, w]);
        for b in 0..blocks {
            mask.data_mut()[b * w * w..(b + 1) * w * w].copy_from_slice(block.data());
        }
        let beta = tape.masked_softmax(scores, Some(&mask))?;
        Ok((tape.block_mix(beta, v, w)?, beta))
    }

    /// Concatenation of all temporal heads: `n * w x d`.
    pub fn multi_head_temporal<'a>(&'a self, tape: &mut Tape<'a, S>, x: Var, w: usize) -> Result<Var> {
        let heads = (0..self.config.g)
            .map(|j| self.temporal_head(tape, x, w, j))
            .collect::<Result<Vec<_>>>()?;
        if heads.len() == 1 {
            return Ok(heads[0]);
        }
        tape.concat(&heads, 1)
    }

    /// Temporal-layer input for `targets`: per node, one row per window
    /// snapshot holding its structural output (zeros where the node is
    /// inactive) plus that position's embedding. Shape `n * w x d`.
    pub fn temporal_input<'a>(
        &'a self,
        tape: &mut Tape<'a, S>,
        g: &DynamicGraph,
        window: &Window,
        targets: &[NodeId],
    ) -> Result<Var> {
        let d = self.config.d;
        let w = window.len();
        if window.l != self.config.l {
            return Err(Error::Contract(format!(
                "window length {} does not match model window {}",
                window.l, self.config.l
            )));
        }
        let mut parts = Vec::new();
        let mut row_of = vec![vec![None; w]; targets.len()];
        let mut offset = 0;
        for (pos, t) in window.steps().enumerate() {
            let snap = g.snapshot(t);
            let (idx, active): (Vec<usize>, Vec<NodeId>) = targets
                .iter()
                .enumerate()
                .filter(|(_, &u)| snap.is_active(u))
                .map(|(i, &u)| (i, u))
                .unzip();
            if active.is_empty() {
                continue;
            }
            parts.push(self.multi_head_structural(tape, snap, &active)?);
            for (r, &i) in idx.iter().enumerate() {
                row_of[i][pos] = Some(offset + r);
            }
            offset += active.len();
        }
        if let Some(i) = row_of.iter().position(|rows| rows.iter().all(Option::is_none)) {
            return Err(Error::Lookup(format!(
                "node {} is absent from every snapshot of window ending at {}",
                targets[i], window.t
            )));
        }
        let zero_row = offset;
        parts.push(tape.constant(Tensor::zeros(&[1, d])));
        let all = tape.concat(&parts, 0)?;
        let gather = row_of
            .iter()
            .flat_map(|rows| rows.iter().map(|r| r.unwrap_or(zero_row)))
            .collect();
        let c = tape.row_gather(all, gather)?;
        let positions: Vec<usize> = window.positions().collect();
        let pos_idx = (0..targets.len()).flat_map(|_| positions.iter().copied()).collect();
        let table = tape.param(&self.store, self.keys.position);
        let p = tape.row_gather(table, pos_idx)?;
        tape.add(c, p)
    }

    /// Final embeddings `H_t` for `targets`, one row each.
    pub fn forward_nodes<'a>(
        &'a self,
        tape: &mut Tape<'a, S>,
        g: &DynamicGraph,
        window: &Window,
        targets: &[NodeId],
    ) -> Result<Var> {
        let w = window.len();
        let x = self.temporal_input(tape, g, window, targets)?;
        let last: Vec<usize> = (0..targets.len()).map(|b| b * w + w - 1).collect();
        match self.config.pipeline {
            Pipeline::Literal => tape.row_gather(x, last),
            Pipeline::Temporal => {
                let dmat = self.multi_head_temporal(tape, x, w)?;
                tape.row_gather(dmat, last)
            }
        }
    }

    /// Embeddings of every node active somewhere in the window.
    pub fn embed(&self, g: &DynamicGraph, window: &Window) -> Result<NodeEmbeddings<S>> {
        let nodes = window.covered_nodes(g);
        let mut tape = Tape::new();
        let h = self.forward_nodes(&mut tape, g, window, &nodes)?;
        Ok(NodeEmbeddings::new(nodes, tape.value(h).clone()))
    }
}

#[cfg(test)]
mod tests;
