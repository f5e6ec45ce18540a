//! Walk-based embedding loss and the distillation term.

use std::collections::{BTreeSet, HashMap};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::graph::{NegativeSampler, NodeId, WalkCorpus};
use crate::model::NodeEmbeddings;
use crate::rng::rng_for;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Inner products are clamped to `±LOGIT_CLAMP` before the sigmoid.
pub const LOGIT_CLAMP: f64 = 15.0;

const NEG_STREAM: u64 = 0x4e47;
const CAND_STREAM: u64 = 0xca4d;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DistillMode {
    /// KL between student and teacher similarity distributions over a
    /// shared candidate set.
    #[default]
    KlSimilarity,
    /// KL between softmaxes over embedding coordinates; needs equal `d`.
    KlDirect,
    /// Binary cross-entropy against the teacher's sigmoid link scores.
    Bce,
}

impl std::str::FromStr for DistillMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "kl-similarity" => Ok(Self::KlSimilarity),
            "kl-direct" => Ok(Self::KlDirect),
            "bce" => Ok(Self::Bce),
            _ => Err(Error::Config(format!(
                "unknown distill mode `{s}` (expected kl-similarity, kl-direct or bce)"
            ))),
        }
    }
}

impl std::fmt::Display for DistillMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::KlSimilarity => "kl-similarity",
            Self::KlDirect => "kl-direct",
            Self::Bce => "bce",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossConfig {
    pub w_neg: f64,
    pub neg_per_pos: usize,
    pub gamma: f64,
    pub tau: f64,
    pub candidate_set_size: usize,
    pub distill_mode: DistillMode,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            w_neg: 1.0,
            neg_per_pos: 1,
            gamma: 0.4,
            tau: 1.0,
            candidate_set_size: 32,
            distill_mode: DistillMode::KlSimilarity,
        }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.gamma) {
            return Err(Error::Config(format!("gamma {} outside [0, 1]", self.gamma)));
        }
        if self.tau.is_nan() || self.tau <= 0.0 {
            return Err(Error::Config(format!("tau must be positive, got {}", self.tau)));
        }
        if self.candidate_set_size < 2 {
            return Err(Error::Config("candidate_set_size must be at least 2".into()));
        }
        if self.w_neg.is_nan() || self.w_neg < 0.0 {
            return Err(Error::Config(format!("w_neg must be nonnegative, got {}", self.w_neg)));
        }
        Ok(())
    }
}

/// Loss terms of one anchor node.
#[derive(Debug, Clone, PartialEq)]
pub struct AnchorTerms {
    pub anchor: NodeId,
    /// Walk contexts with their co-occurrence counts.
    pub positives: Vec<(NodeId, f64)>,
    /// Negative nodes, each weighted by the count of the positive it was
    /// drawn for.
    pub negatives: Vec<(NodeId, f64)>,
    /// Shared candidate set for the similarity distributions.
    pub candidates: Vec<NodeId>,
}

/// One mini-batch: the anchors of snapshot `t` it covers.
#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    pub t: usize,
    pub anchors: Vec<AnchorTerms>,
}

impl Batch {
    /// Sorted distinct nodes whose embeddings the batch needs.
    pub fn nodes(&self, with_candidates: bool) -> Vec<NodeId> {
        let mut set = BTreeSet::new();
        for a in &self.anchors {
            set.insert(a.anchor);
            set.extend(a.positives.iter().map(|p| p.0));
            set.extend(a.negatives.iter().map(|p| p.0));
            if with_candidates {
                set.extend(a.candidates.iter().copied());
            }
        }
        set.into_iter().collect()
    }
}

/// Per-anchor terms for a whole corpus, in anchor order.
///
/// Negatives and candidates come from independent streams keyed by
/// `(seed, anchor)`, so changing the candidate rule never changes the
/// negatives.
pub fn anchor_terms(corpus: &WalkCorpus, sampler: &NegativeSampler, cfg: &LossConfig, seed: u64) -> Vec<AnchorTerms> {
    let mut terms: Vec<AnchorTerms> = corpus
        .by_anchor()
        .into_iter()
        .map(|(u, ctx)| AnchorTerms {
            anchor: u,
            positives: ctx.iter().map(|&(v, c)| (v, c as f64)).collect(),
            negatives: Vec::new(),
            candidates: candidate_set(u, &ctx, sampler, cfg.candidate_set_size, seed),
        })
        .collect();
    resample_negatives(&mut terms, sampler, cfg, seed);
    terms
}

/// Redraws every anchor's negatives from the stream keyed by `(seed, anchor)`.
pub fn resample_negatives(terms: &mut [AnchorTerms], sampler: &NegativeSampler, cfg: &LossConfig, seed: u64) {
    for a in terms {
        let mut rng = rng_for(seed, &[NEG_STREAM, a.anchor as u64]);
        a.negatives.clear();
        for &(_, c) in &a.positives {
            for _ in 0..cfg.neg_per_pos {
                a.negatives.push((sampler.sample(&mut rng), c));
            }
        }
    }
}

/// The anchor's most frequent contexts, padded with negative-distribution
/// draws; never contains the anchor. Shorter than `size` only when the
/// snapshot has too few active nodes.
pub fn candidate_set(
    u: NodeId,
    contexts: &[(NodeId, u32)],
    sampler: &NegativeSampler,
    size: usize,
    seed: u64,
) -> Vec<NodeId> {
    let mut ranked: Vec<(NodeId, u32)> = contexts.iter().copied().filter(|&(v, _)| v != u).collect();
    ranked.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(&b.0)));
    let mut chosen: Vec<NodeId> = ranked.iter().take(size).map(|p| p.0).collect();
    let mut seen: BTreeSet<NodeId> = chosen.iter().copied().collect();
    seen.insert(u);
    let mut rng = rng_for(seed, &[CAND_STREAM, u as u64]);
    let mut attempts = 0;
    while chosen.len() < size && attempts < 64 * size {
        let c = sampler.sample(&mut rng);
        if seen.insert(c) {
            chosen.push(c);
        }
        attempts += 1;
    }
    for &c in sampler.nodes() {
        if chosen.len() >= size {
            break;
        }
        if seen.insert(c) {
            chosen.push(c);
        }
    }
    chosen
}

/// Groups anchors into batches of `per_batch`, shuffled by `rng`.
pub fn make_batches<R: Rng + ?Sized>(t: usize, terms: &[AnchorTerms], per_batch: usize, rng: &mut R) -> Vec<Batch> {
    let mut order: Vec<usize> = (0..terms.len()).collect();
    shuffle(&mut order, rng);
    order
        .chunks(per_batch.max(1))
        .map(|chunk| Batch {
            t,
            anchors: chunk.iter().map(|&i| terms[i].clone()).collect(),
        })
        .collect()
}

fn shuffle<T, R: Rng + ?Sized>(v: &mut [T], rng: &mut R) {
    use rand::seq::SliceRandom;
    v.shuffle(rng);
}

/// Rows of a batch's embedding matrix, keyed by node.
pub type RowMap = HashMap<NodeId, usize>;

pub fn row_map(nodes: &[NodeId]) -> RowMap {
    nodes.iter().enumerate().map(|(i, &u)| (u, i)).collect()
}

fn rows_of(map: &RowMap, nodes: impl Iterator<Item = NodeId>) -> Result<Vec<usize>> {
    nodes
        .map(|u| {
            map.get(&u)
                .copied()
                .ok_or_else(|| Error::Lookup(format!("no embedding row for node {u}")))
        })
        .collect()
}

/// Clamped inner products `<H[a_i], H[b_i]>` as an `n x 1` column.
fn pair_logits<S: Scalar>(tape: &mut Tape<'_, S>, h: Var, a: Vec<usize>, b: Vec<usize>) -> Result<Var> {
    let ha = tape.row_gather(h, a)?;
    let hb = tape.row_gather(h, b)?;
    let dots = tape.row_dot(ha, hb)?;
    tape.clamp(dots, -LOGIT_CLAMP, LOGIT_CLAMP)
}

/// Walk BCE over the anchors of a batch, on embedding rows `h`.
pub fn bce_terms<S: Scalar>(
    tape: &mut Tape<'_, S>,
    h: Var,
    rows: &RowMap,
    anchors: &[AnchorTerms],
    w_neg: f64,
) -> Result<Var> {
    let mut pa = Vec::new();
    let mut pb = Vec::new();
    let mut pw = Vec::new();
    let mut na = Vec::new();
    let mut nb = Vec::new();
    let mut nw = Vec::new();
    for a in anchors {
        let ua = rows_of(rows, std::iter::once(a.anchor))?[0];
        for (r, &(_, c)) in rows_of(rows, a.positives.iter().map(|p| p.0))?
            .into_iter()
            .zip(&a.positives)
        {
            pa.push(ua);
            pb.push(r);
            pw.push(S::of(-c));
        }
        for (r, &(_, c)) in rows_of(rows, a.negatives.iter().map(|p| p.0))?
            .into_iter()
            .zip(&a.negatives)
        {
            na.push(r);
            nb.push(ua);
            nw.push(S::of(-w_neg * c));
        }
    }
    if pa.is_empty() {
        log::warn!("walk loss over an empty corpus is zero");
        return Ok(tape.constant(Tensor::scalar(S::zero())));
    }
    let pos = pair_logits(tape, h, pa, pb)?;
    let pos = tape.log_sigmoid(pos)?;
    let pos = tape.weighted_sum(pos, pw)?;
    if na.is_empty() || w_neg == 0.0 {
        return Ok(pos);
    }
    let neg = pair_logits(tape, h, na, nb)?;
    let neg = tape.scale(neg, -1.0)?;
    let neg = tape.log_sigmoid(neg)?;
    let neg = tape.weighted_sum(neg, nw)?;
    tape.add(pos, neg)
}

/// `softmax(<H[u], H[c]> / tau)` over `cands`, as a `1 x |cands|` row.
fn similarity_row<S: Scalar>(tape: &mut Tape<'_, S>, h: Var, u: usize, cands: Vec<usize>, tau: f64) -> Result<Var> {
    let n = cands.len();
    let hu = tape.row_gather(h, vec![u; n])?;
    let hc = tape.row_gather(h, cands)?;
    let dots = tape.row_dot(hu, hc)?;
    let dots = tape.reshape(dots, &[1, n])?;
    let logits = tape.scale(dots, 1.0 / tau)?;
    tape.masked_softmax(logits, None)
}

/// Plain-value similarity distribution of `u` over `candidates`.
pub fn similarity_distribution<S: Scalar>(
    h: &NodeEmbeddings<S>,
    u: NodeId,
    candidates: &[NodeId],
    tau: f64,
) -> Result<Vec<f64>> {
    let hu = h
        .get(u)
        .ok_or_else(|| Error::Lookup(format!("no embedding for node {u}")))?;
    let logits = candidates
        .iter()
        .map(|&c| {
            let hc = h
                .get(c)
                .ok_or_else(|| Error::Lookup(format!("no embedding for node {c}")))?;
            Ok(hu.iter().zip(hc).map(|(a, b)| a.as_f64() * b.as_f64()).sum::<f64>() / tau)
        })
        .collect::<Result<Vec<f64>>>()?;
    Ok(softmax(&logits))
}

fn softmax(x: &[f64]) -> Vec<f64> {
    let m = x.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = x.iter().map(|v| (v - m).exp()).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|v| v / s).collect()
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

fn teacher_row<S: Scalar>(teacher: &NodeEmbeddings<S>, u: NodeId) -> Result<&[S]> {
    teacher.get(u).ok_or(Error::TargetCoverage(u))
}

/// Distillation term `L^F`, averaged over the batch anchors. Teacher values
/// enter as constants.
pub fn distill_terms<S: Scalar>(
    tape: &mut Tape<'_, S>,
    h: Var,
    rows: &RowMap,
    anchors: &[AnchorTerms],
    teacher: &NodeEmbeddings<S>,
    cfg: &LossConfig,
) -> Result<Var> {
    if anchors.is_empty() {
        return Ok(tape.constant(Tensor::scalar(S::zero())));
    }
    let mut total: Option<Var> = None;
    for a in anchors {
        let u = rows_of(rows, std::iter::once(a.anchor))?[0];
        let term = match cfg.distill_mode {
            DistillMode::KlSimilarity => {
                let cands = rows_of(rows, a.candidates.iter().copied())?;
                let ps = similarity_row(tape, h, u, cands, cfg.tau)?;
                for &c in &a.candidates {
                    teacher_row(teacher, c)?;
                }
                teacher_row(teacher, a.anchor)?;
                let pt = similarity_distribution(teacher, a.anchor, &a.candidates, cfg.tau)?;
                let pt = tape.constant(Tensor::from_vec(&[1, pt.len()], pt.into_iter().map(S::of).collect())?);
                tape.kl_div(ps, pt)?
            }
            DistillMode::KlDirect => {
                let ht = teacher_row(teacher, a.anchor)?;
                let d = tape.value(h).cols();
                if ht.len() != d {
                    return Err(Error::Config(format!(
                        "kl-direct needs equal embedding sizes, student {d} vs teacher {}",
                        ht.len()
                    )));
                }
                let hu = tape.row_gather(h, vec![u])?;
                let ps = tape.masked_softmax(hu, None)?;
                let pt = softmax(&ht.iter().map(|x| x.as_f64()).collect::<Vec<_>>());
                let pt = tape.constant(Tensor::from_vec(&[1, d], pt.into_iter().map(S::of).collect())?);
                tape.kl_div(ps, pt)?
            }
            DistillMode::Bce => {
                let cands = rows_of(rows, a.candidates.iter().copied())?;
                let n = cands.len();
                let ht = teacher_row(teacher, a.anchor)?;
                let mut target = Vec::with_capacity(n);
                for &c in &a.candidates {
                    let hc = teacher_row(teacher, c)?;
                    let dot: f64 = ht.iter().zip(hc).map(|(x, y)| x.as_f64() * y.as_f64()).sum();
                    target.push(sigmoid((dot / cfg.tau).clamp(-LOGIT_CLAMP, LOGIT_CLAMP)));
                }
                let s = pair_logits(tape, h, vec![u; n], cands)?;
                let s = tape.scale(s, 1.0 / cfg.tau)?;
                let pos = tape.log_sigmoid(s)?;
                let neg_s = tape.scale(s, -1.0)?;
                let neg = tape.log_sigmoid(neg_s)?;
                let wp = target.iter().map(|&p| S::of(-p / n as f64)).collect();
                let wn = target.iter().map(|&p| S::of(-(1.0 - p) / n as f64)).collect();
                let pos = tape.weighted_sum(pos, wp)?;
                let neg = tape.weighted_sum(neg, wn)?;
                tape.add(pos, neg)?
            }
        };
        total = Some(match total {
            None => term,
            Some(acc) => tape.add(acc, term)?,
        });
    }
    tape.scale(total.expect("nonempty"), 1.0 / anchors.len() as f64)
}

/// `L^S`, `L^F` and their blend `L^D = (1 - gamma) L^S + gamma L^F`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DistillLoss {
    pub l_s: f64,
    pub l_f: f64,
    pub l_d: f64,
}

impl DistillLoss {
    pub fn blend(l_s: f64, l_f: f64, gamma: f64) -> Self {
        Self {
            l_s,
            l_f,
            l_d: (1.0 - gamma) * l_s + gamma * l_f,
        }
    }
}

fn constant_embeddings<S: Scalar>(tape: &mut Tape<'_, S>, h: &NodeEmbeddings<S>) -> (Var, RowMap) {
    let v = tape.constant(h.values().clone());
    (v, row_map(h.nodes()))
}

/// Walk loss of fixed embeddings over a whole corpus.
pub fn bce_embedding_loss<S: Scalar>(
    h: &NodeEmbeddings<S>,
    corpus: &WalkCorpus,
    sampler: &NegativeSampler,
    cfg: &LossConfig,
    seed: u64,
) -> Result<f64> {
    let terms = anchor_terms(corpus, sampler, cfg, seed);
    let mut tape = Tape::new();
    let (v, rows) = constant_embeddings(&mut tape, h);
    let l = bce_terms(&mut tape, v, &rows, &terms, cfg.w_neg)?;
    Ok(tape.value(l).item().as_f64())
}

/// Distillation loss of fixed student embeddings against fixed teacher
/// embeddings: `L^S` over the whole corpus, `L^F` averaged over anchors.
pub fn distillation_loss<S: Scalar>(
    h_s: &NodeEmbeddings<S>,
    h_t: &NodeEmbeddings<S>,
    corpus: &WalkCorpus,
    sampler: &NegativeSampler,
    cfg: &LossConfig,
    seed: u64,
) -> Result<DistillLoss> {
    let terms = anchor_terms(corpus, sampler, cfg, seed);
    let mut tape = Tape::new();
    let (v, rows) = constant_embeddings(&mut tape, h_s);
    let ls = bce_terms(&mut tape, v, &rows, &terms, cfg.w_neg)?;
    let lf = distill_terms(&mut tape, v, &rows, &terms, h_t, cfg)?;
    Ok(DistillLoss::blend(
        tape.value(ls).item().as_f64(),
        tape.value(lf).item().as_f64(),
        cfg.gamma,
    ))
}
