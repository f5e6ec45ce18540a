//! Offline teacher training and online student distillation.
//!
//! The teacher minimizes the walk loss over the offline snapshots with a
//! window spanning all of them. The student then walks the online steps,
//! warm-starting from its previous parameters, and minimizes
//! `(1 - gamma) L^S + gamma L^F` per mini-batch, where `L^F` compares it
//! against a frozen forward pass of the teacher on the same step.

mod log;
mod loss;

use std::time::Instant;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

pub use self::log::{LogRow, TrainingLog};
pub use loss::{
    anchor_terms, bce_embedding_loss, bce_terms, candidate_set, distill_terms, distillation_loss, make_batches,
    resample_negatives, row_map, similarity_distribution, AnchorTerms, Batch, DistillLoss, DistillMode, LossConfig,
    RowMap, LOGIT_CLAMP,
};

use crate::autodiff::{Gradients, Tape};
use crate::error::{Error, Result};
use crate::graph::{negative_distribution, sample_walks, DynamicGraph, WalkConfig, DEFAULT_NEGATIVE_POWER};
use crate::model::{AttentionModel, ModelConfig, NodeEmbeddings};
use crate::params::AdamConfig;
use crate::rng::{derive_seed, rng_for};
use crate::scalar::Scalar;

const TEACHER_TAG: u64 = 0x7eac;
const STUDENT_TAG: u64 = 0x57d0;
const WALK_TAG: u64 = 0x3a1c;
const EPOCH_TAG: u64 = 0xe90c;
const ORDER_TAG: u64 = 0x0bde;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub adam: AdamConfig,
    pub walks: WalkConfig,
    pub negative_power: f64,
    /// Anchor nodes per mini-batch.
    pub anchors_per_batch: usize,
    pub loss: LossConfig,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 200,
            adam: AdamConfig::default(),
            walks: WalkConfig::default(),
            negative_power: DEFAULT_NEGATIVE_POWER,
            anchors_per_batch: 1,
            loss: LossConfig::default(),
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        self.loss.validate()?;
        if self.anchors_per_batch == 0 {
            return Err(Error::Config("anchors_per_batch must be positive".into()));
        }
        if self.walks.walk_len == 0 || self.walks.walks_per_node == 0 || self.walks.context == 0 {
            return Err(Error::Config(format!(
                "walk settings must be positive: {:?}",
                self.walks
            )));
        }
        Ok(())
    }
}

/// Per-step training data: anchor terms and the negative sampler.
struct StepData {
    t: usize,
    terms: Vec<AnchorTerms>,
    sampler: crate::graph::NegativeSampler,
    corpus: crate::graph::WalkCorpus,
}

fn step_data(g: &DynamicGraph, t: usize, cfg: &TrainConfig) -> Result<StepData> {
    let walk_seed = derive_seed(cfg.seed, &[WALK_TAG, t as u64]);
    let corpus = sample_walks(g, t, &cfg.walks, walk_seed)?;
    let sampler = negative_distribution(g, t, cfg.negative_power)?;
    let terms = anchor_terms(&corpus, &sampler, &cfg.loss, walk_seed);
    Ok(StepData {
        t,
        terms,
        sampler,
        corpus,
    })
}

/// Seed under which a step's walks, negatives and candidates are drawn.
pub fn walk_seed(cfg: &TrainConfig, t: usize) -> u64 {
    derive_seed(cfg.seed, &[WALK_TAG, t as u64])
}

fn diverged(step: usize, epoch: usize, e: Error) -> Error {
    match e {
        Error::NonFinite { .. } => Error::Diverged {
            step,
            epoch,
            loss: f64::NAN,
        },
        other => other,
    }
}

/// A trained, frozen teacher.
#[derive(Debug, Clone)]
pub struct Teacher<S: Scalar> {
    model: AttentionModel<S>,
}

impl<S: Scalar> Teacher<S> {
    pub fn new(model: AttentionModel<S>) -> Self {
        Self { model }
    }

    pub fn model(&self) -> &AttentionModel<S> {
        &self.model
    }

    /// Frozen forward pass over the window ending at `t`. Nodes beyond the
    /// trained capacity get their deterministic initial rows.
    pub fn infer(&self, g: &DynamicGraph, t: usize) -> Result<NodeEmbeddings<S>> {
        let window = g.window(t, self.model.config().l);
        let cap = g.capacity_through(t);
        if cap <= self.model.capacity() {
            return self.model.embed(g, &window);
        }
        let mut grown = self.model.clone();
        grown.ensure_capacity(cap)?;
        grown.embed(g, &window)
    }

    /// Parameter count at the capacity needed for step `t`.
    pub fn parameter_count_at(&self, g: &DynamicGraph, t: usize) -> usize {
        let n = g.capacity_through(t).max(self.model.capacity());
        self.model.config().parameter_count(n)
    }
}

/// Trains the teacher on the offline snapshots `0..m` of `g`.
///
/// Log rows use time step 0.
pub fn train_teacher<S: Scalar>(
    g: &DynamicGraph,
    config: ModelConfig,
    cfg: &TrainConfig,
    log: &mut TrainingLog,
) -> Result<Teacher<S>> {
    cfg.validate()?;
    let m = g.offline_count()?;
    let mut model = AttentionModel::<S>::new(config, g.capacity_through(m - 1), derive_seed(cfg.seed, &[TEACHER_TAG]))?;
    let mut steps = (0..m).map(|t| step_data(g, t, cfg)).collect::<Result<Vec<_>>>()?;
    for epoch in 0..cfg.epochs {
        let start = Instant::now();
        let mut order_rng = rng_for(cfg.seed, &[TEACHER_TAG, ORDER_TAG, epoch as u64]);
        let mut batches = Vec::new();
        for s in &mut steps {
            if epoch > 0 {
                let seed = derive_seed(cfg.seed, &[EPOCH_TAG, s.t as u64, epoch as u64]);
                resample_negatives(&mut s.terms, &s.sampler, &cfg.loss, seed);
            }
            batches.extend(make_batches(s.t, &s.terms, cfg.anchors_per_batch, &mut order_rng));
        }
        batches.shuffle(&mut order_rng);
        let mut total = 0.0;
        for batch in &batches {
            let window = g.window(batch.t, config.l);
            let (loss, grads) = teacher_batch(&model, g, &window, batch, cfg).map_err(|e| diverged(0, epoch, e))?;
            if !loss.is_finite() {
                return Err(Error::Diverged { step: 0, epoch, loss });
            }
            total += loss;
            model.params_mut().set_grads(&grads);
            model.params_mut().adam_step(&cfg.adam)?;
        }
        log.push(LogRow::new(
            0,
            epoch,
            DistillLoss::blend(total, 0.0, 0.0),
            start.elapsed(),
        ));
        ::log::debug!("teacher epoch {epoch}: loss {total:.4}");
    }
    Ok(Teacher::new(model))
}

fn teacher_batch<S: Scalar>(
    model: &AttentionModel<S>,
    g: &DynamicGraph,
    window: &crate::graph::Window,
    batch: &Batch,
    cfg: &TrainConfig,
) -> Result<(f64, Gradients<S>)> {
    let nodes = batch.nodes(false);
    let rows = row_map(&nodes);
    let mut tape = Tape::new();
    let h = model.forward_nodes(&mut tape, g, window, &nodes)?;
    let l = bce_terms(&mut tape, h, &rows, &batch.anchors, cfg.loss.w_neg)?;
    let value = tape.value(l).item().as_f64();
    Ok((value, tape.backward(l)?))
}

/// Student output at one online step.
#[derive(Debug, Clone)]
pub struct StudentStep<S: Scalar> {
    /// Embedding time (0-based snapshot index); predicts snapshot `t + 1`.
    pub t: usize,
    pub embeddings: NodeEmbeddings<S>,
    /// Loss of the final embeddings; `l_f` is 0 without a teacher.
    pub final_loss: DistillLoss,
    /// Student parameter count at this step.
    pub params: usize,
}

#[derive(Debug, Clone)]
pub struct StudentRun<S: Scalar> {
    pub model: AttentionModel<S>,
    pub steps: Vec<StudentStep<S>>,
}

/// Online embedding times: `m - 1 ..= T - 2`, each evaluated on `t + 1`.
pub fn online_steps(g: &DynamicGraph) -> Result<std::ops::RangeInclusive<usize>> {
    let m = g.offline_count()?;
    Ok(m - 1..=g.len() - 2)
}

/// Trains the student over every online step.
///
/// Without a teacher the student minimizes `L^S` alone. Batches always
/// include the candidate nodes, so a `gamma = 0` run and a teacherless run
/// perform identical arithmetic on the student.
pub fn train_student<S: Scalar>(
    g: &DynamicGraph,
    teacher: Option<&Teacher<S>>,
    config: ModelConfig,
    cfg: &TrainConfig,
    log: &mut TrainingLog,
) -> Result<StudentRun<S>> {
    cfg.validate()?;
    let steps = online_steps(g)?;
    let first = *steps.start();
    let mut model = AttentionModel::<S>::new(config, g.capacity_through(first), derive_seed(cfg.seed, &[STUDENT_TAG]))?;
    let gamma = cfg.loss.gamma;
    let mut out = Vec::new();
    for (i, t) in steps.enumerate() {
        let time_step = i + 1;
        model.ensure_capacity(g.capacity_through(t))?;
        let window = g.window(t, config.l);
        let teacher_h = teacher.map(|tm| tm.infer(g, t)).transpose()?;
        let mut data = step_data(g, t, cfg)?;
        for epoch in 0..cfg.epochs {
            let start = Instant::now();
            if epoch > 0 {
                let seed = derive_seed(cfg.seed, &[EPOCH_TAG, t as u64, epoch as u64]);
                resample_negatives(&mut data.terms, &data.sampler, &cfg.loss, seed);
            }
            let mut order_rng = rng_for(cfg.seed, &[STUDENT_TAG, ORDER_TAG, t as u64, epoch as u64]);
            let batches = make_batches(t, &data.terms, cfg.anchors_per_batch, &mut order_rng);
            let (mut ls, mut lf_sum) = (0.0, 0.0);
            for batch in &batches {
                let (l, grads) = student_batch(&model, g, &window, batch, teacher_h.as_ref(), cfg)
                    .map_err(|e| diverged(time_step, epoch, e))?;
                if !l.l_d.is_finite() {
                    return Err(Error::Diverged {
                        step: time_step,
                        epoch,
                        loss: l.l_d,
                    });
                }
                ls += l.l_s;
                lf_sum += l.l_f * batch.anchors.len() as f64;
                model.params_mut().set_grads(&grads);
                model.params_mut().adam_step(&cfg.adam)?;
            }
            let lf = lf_sum / data.terms.len().max(1) as f64;
            log.push(LogRow::new(
                time_step,
                epoch,
                DistillLoss::blend(ls, lf, gamma),
                start.elapsed(),
            ));
        }
        let embeddings = model.embed(g, &window)?;
        let seed = walk_seed(cfg, t);
        let final_loss = match &teacher_h {
            Some(h_t) => distillation_loss(&embeddings, h_t, &data.corpus, &data.sampler, &cfg.loss, seed)?,
            None => DistillLoss::blend(
                bce_embedding_loss(&embeddings, &data.corpus, &data.sampler, &cfg.loss, seed)?,
                0.0,
                0.0,
            ),
        };
        ::log::info!(
            "student step {time_step} (t = {t}): L_S {:.4}, L_F {:.6}",
            final_loss.l_s,
            final_loss.l_f
        );
        out.push(StudentStep {
            t,
            embeddings,
            final_loss,
            params: model.parameter_count(),
        });
    }
    Ok(StudentRun { model, steps: out })
}

fn student_batch<S: Scalar>(
    model: &AttentionModel<S>,
    g: &DynamicGraph,
    window: &crate::graph::Window,
    batch: &Batch,
    teacher: Option<&NodeEmbeddings<S>>,
    cfg: &TrainConfig,
) -> Result<(DistillLoss, Gradients<S>)> {
    let nodes = batch.nodes(true);
    let rows = row_map(&nodes);
    let mut tape = Tape::new();
    let h = model.forward_nodes(&mut tape, g, window, &nodes)?;
    let ls = bce_terms(&mut tape, h, &rows, &batch.anchors, cfg.loss.w_neg)?;
    let gamma = cfg.loss.gamma;
    let (loss, lf) = match teacher {
        None => (ls, None),
        Some(h_t) => {
            let lf = distill_terms(&mut tape, h, &rows, &batch.anchors, h_t, &cfg.loss)?;
            let a = tape.scale(ls, 1.0 - gamma)?;
            let b = tape.scale(lf, gamma)?;
            (tape.add(a, b)?, Some(lf))
        }
    };
    let l_s = tape.value(ls).item().as_f64();
    let l_f = lf.map_or(0.0, |v| tape.value(v).item().as_f64());
    let grads = tape.backward(loss)?;
    let g_only = if teacher.is_some() { gamma } else { 0.0 };
    Ok((DistillLoss::blend(l_s, l_f, g_only), grads))
}
