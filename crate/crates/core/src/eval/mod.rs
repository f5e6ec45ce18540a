//! Link-prediction evaluation on unobserved links.
//!
//! For embeddings at time `t`, the targets are the edges of snapshot `t + 1`
//! that appear in no snapshot of the window ending at `t`. Each seed pairs
//! them with as many sampled non-links, splits the pool 20% / 48% / 32%
//! into validation, train and test, fits a logistic regression on Hadamard
//! features with the L2 strength picked on validation, and scores the test
//! partition by ROC AUC.

mod logreg;
mod metrics;
mod report;

use std::collections::BTreeSet;

use rand::seq::SliceRandom;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use logreg::{objective, train_logreg, LogReg, GRAD_TOL};
pub use metrics::{mean_std, roc_auc};
pub use report::{
    compression_report, CompressionReport, CompressionRow, EvalReport, EvalRow, ModelCounts, REPORT_HEADER,
};

use crate::error::{Error, Result};
use crate::graph::{DynamicGraph, NodeId};
use crate::model::NodeEmbeddings;
use crate::rng::rng_for;
use crate::scalar::Scalar;

pub type Link = (NodeId, NodeId);

/// Validation L2 grid.
pub const L2_GRID: [f64; 5] = [1e-4, 1e-3, 1e-2, 1e-1, 1.0];
/// Newton iteration cap.
pub const LOGREG_ITERS: usize = 100;
const SPLIT_TAG: u64 = 0x5917;

/// Smallest number of unobserved links an evaluation accepts.
pub const MIN_LINKS: usize = 5;

fn ordered(u: NodeId, v: NodeId) -> Link {
    if u < v {
        (u, v)
    } else {
        (v, u)
    }
}

/// Edges of snapshot `t + 1` absent from every snapshot of the window of
/// length `l` ending at `t`, in ascending order.
pub fn unobserved_links(g: &DynamicGraph, t: usize, l: usize) -> Result<Vec<Link>> {
    if t + 1 >= g.len() {
        return Err(Error::Contract(format!("no snapshot after t = {t}")));
    }
    let window = g.window(t, l);
    let seen = window.snapshots(g);
    Ok(g.snapshot(t + 1)
        .edges()
        .map(|(e, _)| e)
        .filter(|&(u, v)| seen.iter().all(|s| !s.has_edge(u, v)))
        .collect())
}

/// Keeps links whose endpoints both satisfy `has_embedding`; returns the
/// kept links and the number dropped.
pub fn restrict_links(links: &[Link], has_embedding: impl Fn(NodeId) -> bool) -> (Vec<Link>, usize) {
    let kept: Vec<Link> = links
        .iter()
        .copied()
        .filter(|&(u, v)| has_embedding(u) && has_embedding(v))
        .collect();
    let dropped = links.len() - kept.len();
    (kept, dropped)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabeledLink {
    pub u: NodeId,
    pub v: NodeId,
    pub label: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalSplit {
    pub positives: Vec<Link>,
    pub negatives: Vec<Link>,
    pub validation: Vec<LabeledLink>,
    pub train: Vec<LabeledLink>,
    pub test: Vec<LabeledLink>,
}

/// `(validation, train, test)` sizes for a pooled set of `n` links: 20%,
/// then 60% of the remainder, each rounded half up.
pub fn partition_sizes(n: usize) -> (usize, usize, usize) {
    let val = (2 * n + 5) / 10;
    let rest = n - val;
    let train = (6 * rest + 5) / 10;
    (val, train, rest - train)
}

/// Samples one non-link per positive and partitions the pooled set.
///
/// Negatives are drawn uniformly from pairs of `candidates` (nodes active
/// at `t + 1` that have embeddings) that are neither edges of `t + 1` nor
/// edges of any window snapshot.
pub fn build_split(
    positives: &[Link],
    g: &DynamicGraph,
    t: usize,
    l: usize,
    candidates: &[NodeId],
    seed: u64,
) -> Result<EvalSplit> {
    if positives.len() < MIN_LINKS {
        return Err(Error::DegenerateData(format!(
            "{} unobserved links, need at least {MIN_LINKS}",
            positives.len()
        )));
    }
    if t + 1 >= g.len() {
        return Err(Error::Contract(format!("no snapshot after t = {t}")));
    }
    let next = g.snapshot(t + 1);
    let window = g.window(t, l);
    let observed = |u: NodeId, v: NodeId| next.has_edge(u, v) || window.snapshots(g).iter().any(|s| s.has_edge(u, v));
    let mut rng = rng_for(seed, &[SPLIT_TAG]);
    let mut negatives = BTreeSet::new();
    let want = positives.len();
    let limit = 1000 * want;
    let mut attempts = 0;
    if candidates.len() >= 2 {
        while negatives.len() < want && attempts < limit {
            attempts += 1;
            let a = candidates[rng.random_range(0..candidates.len())];
            let b = candidates[rng.random_range(0..candidates.len())];
            if a == b || observed(a, b) {
                continue;
            }
            negatives.insert(ordered(a, b));
        }
    }
    if negatives.len() < want {
        return Err(Error::Sampling(format!(
            "found {} of {want} non-links after {attempts} attempts",
            negatives.len()
        )));
    }
    let mut pos: Vec<Link> = positives.to_vec();
    let mut neg: Vec<Link> = negatives.into_iter().collect();
    pos.shuffle(&mut rng);
    neg.shuffle(&mut rng);

    let (n_val, n_train, n_test) = partition_sizes(2 * want);
    // positives per partition: alternate rounding so every partition stays
    // within one of an even label split
    let mut extra = true;
    let mut share = |n: usize| {
        if n.is_multiple_of(2) {
            return n / 2;
        }
        let p = n / 2 + usize::from(extra);
        extra = !extra;
        p
    };
    let pv = share(n_val);
    let pt = share(n_train);
    let ps = want - pv - pt;
    let counts = [(pv, n_val - pv), (pt, n_train - pt), (ps, n_test - ps)];
    let mut parts: Vec<Vec<LabeledLink>> = Vec::with_capacity(3);
    let (mut ip, mut ineg) = (0, 0);
    for (np, nn) in counts {
        let mut part: Vec<LabeledLink> = pos[ip..ip + np]
            .iter()
            .map(|&(u, v)| LabeledLink { u, v, label: true })
            .chain(
                neg[ineg..ineg + nn]
                    .iter()
                    .map(|&(u, v)| LabeledLink { u, v, label: false }),
            )
            .collect();
        part.shuffle(&mut rng);
        parts.push(part);
        ip += np;
        ineg += nn;
    }
    let test = parts.pop().expect("three partitions");
    let train = parts.pop().expect("three partitions");
    let validation = parts.pop().expect("three partitions");
    Ok(EvalSplit {
        positives: positives.to_vec(),
        negatives: neg,
        validation,
        train,
        test,
    })
}

/// Elementwise product of the two endpoint embeddings.
pub fn hadamard<S: Scalar>(h: &NodeEmbeddings<S>, u: NodeId, v: NodeId) -> Result<Vec<f64>> {
    let a = h
        .get(u)
        .ok_or_else(|| Error::Lookup(format!("no embedding for node {u}")))?;
    let b = h
        .get(v)
        .ok_or_else(|| Error::Lookup(format!("no embedding for node {v}")))?;
    Ok(a.iter().zip(b).map(|(x, y)| x.as_f64() * y.as_f64()).collect())
}

fn features<S: Scalar>(h: &NodeEmbeddings<S>, links: &[LabeledLink]) -> Result<(Vec<Vec<f64>>, Vec<bool>)> {
    let x = links
        .iter()
        .map(|l| hadamard(h, l.u, l.v))
        .collect::<Result<Vec<_>>>()?;
    Ok((x, links.iter().map(|l| l.label).collect()))
}

fn split_auc(model: &LogReg, x: &[Vec<f64>], y: &[bool]) -> Result<f64> {
    let scores: Vec<f64> = x.iter().map(|r| model.decision(r)).collect();
    roc_auc(&scores, y)
}

/// Test AUC of one split, with L2 picked from [`L2_GRID`] by validation
/// AUC (earliest on ties).
pub fn evaluate_split<S: Scalar>(h: &NodeEmbeddings<S>, split: &EvalSplit) -> Result<f64> {
    let (xt, yt) = features(h, &split.train)?;
    let (xv, yv) = features(h, &split.validation)?;
    let (xs, ys) = features(h, &split.test)?;
    let mut best: Option<(f64, LogReg)> = None;
    for &l2 in &L2_GRID {
        let m = train_logreg(&xt, &yt, l2, LOGREG_ITERS)?;
        let auc = split_auc(&m, &xv, &yv)?;
        if best.as_ref().is_none_or(|(b, _)| auc > *b) {
            best = Some((auc, m));
        }
    }
    let (_, model) = best.expect("nonempty grid");
    split_auc(&model, &xs, &ys)
}

/// AUC summary of one time step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepEval {
    pub t: usize,
    pub aucs: Vec<f64>,
    pub auc_mean: f64,
    pub auc_std: f64,
    pub links: usize,
    pub dropped: usize,
}

/// Evaluates embeddings `h` at time `t` against snapshot `t + 1`, one split
/// per seed. Returns `None` (with a warning) when too few unobserved links
/// remain.
pub fn evaluate_step<S: Scalar>(
    h: &NodeEmbeddings<S>,
    g: &DynamicGraph,
    t: usize,
    l: usize,
    seeds: &[u64],
) -> Result<Option<StepEval>> {
    let all = unobserved_links(g, t, l)?;
    let (links, dropped) = restrict_links(&all, |u| h.contains(u));
    if dropped > 0 {
        log::info!("t = {t}: {dropped} unobserved links dropped for missing embeddings");
    }
    if links.len() < MIN_LINKS {
        log::warn!("t = {t}: only {} unobserved links, skipping evaluation", links.len());
        return Ok(None);
    }
    let candidates: Vec<NodeId> = g
        .snapshot(t + 1)
        .nodes()
        .iter()
        .copied()
        .filter(|&u| h.contains(u))
        .collect();
    let aucs = seeds
        .par_iter()
        .map(|&seed| {
            let split = build_split(&links, g, t, l, &candidates, seed)?;
            evaluate_split(h, &split)
        })
        .collect::<Result<Vec<f64>>>()?;
    let (auc_mean, auc_std) = mean_std(&aucs);
    Ok(Some(StepEval {
        t,
        aucs,
        auc_mean,
        auc_std,
        links: links.len(),
        dropped,
    }))
}

#[cfg(test)]
mod tests;
