//! End-to-end experiment runs and parameter sweeps.
//!
//! A run loads the dynamic graph, trains the teacher on the offline
//! snapshots, trains the student over the online steps, and evaluates both
//! at every online step. With an output directory it writes:
//!
//! | file | content |
//! |------|---------|
//! | `report.csv` | `model,time_step,auc_mean,auc_std,params,ratio_vs_teacher` |
//! | `training_log.csv` | `time_step,epoch,L_S,L_F,L_D,wall_ms` (teacher rows use time step 0) |
//! | `teacher.json`, `student.json` | model checkpoints |
//! | `config.txt` | the resolved config, loadable with `run --config` |
//! | `manifest.json` | config, seeds, input content hash and per-step link counts |

mod config;
mod sweep;

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

pub use config::{DataSource, ExperimentConfig, Precision, Shape};
pub use sweep::{apply_axis, run_sweep, SweepAxis, SweepRow, SWEEP_HEADER};

use crate::error::{Error, Result};
use crate::eval::{evaluate_step, EvalReport, EvalRow, StepEval};
use crate::graph::{load_edge_stream, load_snapshots, synth_dynamic_sbm, DynamicGraph};
use crate::model::save_checkpoint;
use crate::scalar::Scalar;
use crate::train::{online_steps, train_student, train_teacher, DistillLoss, Teacher, TrainingLog};

/// Environment variable holding the worker count for seeds and sweep points.
pub const WORKERS_ENV: &str = "DYNKD_WORKERS";

/// Worker count from [`WORKERS_ENV`], defaulting to the available cores.
pub fn workers_from_env() -> Result<usize> {
    match std::env::var(WORKERS_ENV) {
        Ok(v) => match v.trim().parse::<usize>() {
            Ok(n) if n > 0 => Ok(n),
            _ => Err(Error::Config(format!(
                "{WORKERS_ENV} must be a positive integer, got `{v}`"
            ))),
        },
        Err(_) => Ok(std::thread::available_parallelism().map_or(1, |n| n.get())),
    }
}

/// Runs `f` on a thread pool with `workers` threads.
pub fn with_workers<T: Send>(workers: usize, f: impl FnOnce() -> T + Send) -> Result<T> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers.max(1))
        .build()
        .map_err(|e| Error::Config(format!("cannot start {workers} workers: {e}")))?;
    Ok(pool.install(f))
}

/// Loads the configured graph and marks the offline split.
pub fn load_graph(cfg: &ExperimentConfig) -> Result<DynamicGraph> {
    let g = match &cfg.data {
        DataSource::EdgeList { path, bucketing } => load_edge_stream(path, *bucketing)?,
        DataSource::Snapshots { path } => load_snapshots(path)?,
        DataSource::Synthetic(sbm) => synth_dynamic_sbm(sbm)?.graph,
    };
    g.with_split(cfg.m)
}

/// One evaluated online step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    /// 1-based online step.
    pub time_step: usize,
    /// Embedding time; predicts snapshot `t + 1`.
    pub t: usize,
    pub teacher: Option<StepEval>,
    pub student: Option<StepEval>,
    pub teacher_params: Option<usize>,
    pub student_params: usize,
    /// Loss of the final student embeddings.
    pub student_loss: DistillLoss,
}

#[derive(Debug, Clone)]
pub struct RunOutput {
    pub report: EvalReport,
    pub log: TrainingLog,
    pub steps: Vec<StepRecord>,
    pub input_hash: String,
}

impl RunOutput {
    /// Every student test AUC, over steps and seeds.
    pub fn student_aucs(&self) -> Vec<f64> {
        self.steps
            .iter()
            .filter_map(|s| s.student.as_ref())
            .flat_map(|e| e.aucs.iter().copied())
            .collect()
    }

    /// Mean final `L^F` over online steps.
    pub fn mean_student_l_f(&self) -> f64 {
        let n = self.steps.len().max(1) as f64;
        self.steps.iter().map(|s| s.student_loss.l_f).sum::<f64>() / n
    }
}

#[derive(Debug, Serialize)]
struct Manifest<'a> {
    format: &'static str,
    version: u32,
    config: &'a ExperimentConfig,
    config_text: String,
    train_seed: u64,
    eval_seeds: &'a [u64],
    input_hash: &'a str,
    snapshots: usize,
    steps: Vec<ManifestStep>,
}

#[derive(Debug, Serialize)]
struct ManifestStep {
    time_step: usize,
    t: usize,
    links: Option<usize>,
    dropped: Option<usize>,
}

/// A graph and trained teacher shared by runs that differ only in the
/// student.
pub struct Prepared<S: Scalar> {
    pub graph: DynamicGraph,
    pub teacher: Option<Teacher<S>>,
    pub teacher_log: TrainingLog,
}

/// Loads the graph and trains the teacher if the config asks for one.
pub fn prepare<S: Scalar>(cfg: &ExperimentConfig) -> Result<Prepared<S>> {
    cfg.validate()?;
    let graph = load_graph(cfg).map_err(|e| e.in_stage("loading data"))?;
    online_steps(&graph).map_err(|e| e.in_stage("loading data"))?;
    let mut teacher_log = TrainingLog::new();
    let teacher = if cfg.use_teacher {
        let t = train_teacher::<S>(&graph, cfg.teacher_model(), &cfg.teacher_train(), &mut teacher_log)
            .map_err(|e| e.in_stage("teacher training"))?;
        Some(t)
    } else {
        None
    };
    Ok(Prepared {
        graph,
        teacher,
        teacher_log,
    })
}

/// Trains and evaluates the student on prepared data, writing outputs to
/// `out` when given.
pub fn run_prepared<S: Scalar>(cfg: &ExperimentConfig, prep: &Prepared<S>, out: Option<&Path>) -> Result<RunOutput> {
    cfg.validate()?;
    let g = &prep.graph;
    let teacher = prep.teacher.as_ref();
    let mut log = prep.teacher_log.clone();
    let student = train_student(g, teacher, cfg.student_model(), &cfg.student_train(), &mut log)
        .map_err(|e| e.in_stage("student training"))?;

    let eval_l = cfg.student_model().l;
    let mut steps = Vec::with_capacity(student.steps.len());
    let mut report = EvalReport::default();
    for (i, s) in student.steps.iter().enumerate() {
        let time_step = i + 1;
        let stage = |e: Error| e.in_stage("evaluation");
        let teacher_eval = match teacher {
            Some(tm) => {
                let h = tm.infer(g, s.t).map_err(stage)?;
                evaluate_step(&h, g, s.t, eval_l, &cfg.eval_seeds).map_err(stage)?
            }
            None => None,
        };
        let student_eval = evaluate_step(&s.embeddings, g, s.t, eval_l, &cfg.eval_seeds).map_err(stage)?;
        let teacher_params = teacher.map(|tm| tm.parameter_count_at(g, s.t));
        if let (Some(e), Some(p)) = (&teacher_eval, teacher_params) {
            report.rows.push(EvalRow {
                model: "teacher".into(),
                time_step,
                auc_mean: e.auc_mean,
                auc_std: e.auc_std,
                params: p,
                ratio_vs_teacher: 1.0,
            });
        }
        if let Some(e) = &student_eval {
            report.rows.push(EvalRow {
                model: "student".into(),
                time_step,
                auc_mean: e.auc_mean,
                auc_std: e.auc_std,
                params: s.params,
                ratio_vs_teacher: teacher_params.map_or(f64::NAN, |p| s.params as f64 / p as f64),
            });
        }
        steps.push(StepRecord {
            time_step,
            t: s.t,
            teacher: teacher_eval,
            student: student_eval,
            teacher_params,
            student_params: s.params,
            student_loss: s.final_loss,
        });
    }
    let output = RunOutput {
        report,
        log,
        steps,
        input_hash: g.content_hash(),
    };
    if let Some(dir) = out {
        write_outputs(cfg, &output, teacher, &student.model, g, dir).map_err(|e| e.in_stage("writing outputs"))?;
    }
    Ok(output)
}

fn write_outputs<S: Scalar>(
    cfg: &ExperimentConfig,
    run: &RunOutput,
    teacher: Option<&Teacher<S>>,
    student: &crate::model::AttentionModel<S>,
    g: &DynamicGraph,
    dir: &Path,
) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    run.report.write_csv(dir.join("report.csv"))?;
    run.log.write_csv(dir.join("training_log.csv"))?;
    if let Some(t) = teacher {
        save_checkpoint(t.model(), g.node_ids(), dir.join("teacher.json"))?;
    }
    save_checkpoint(student, g.node_ids(), dir.join("student.json"))?;
    let config_path = dir.join("config.txt");
    fs::write(&config_path, cfg.to_text()).map_err(|e| Error::io(&config_path, e))?;
    let manifest = Manifest {
        format: "dynkd-run",
        version: 1,
        config: cfg,
        config_text: cfg.to_text(),
        train_seed: cfg.train.seed,
        eval_seeds: &cfg.eval_seeds,
        input_hash: &run.input_hash,
        snapshots: g.len(),
        steps: run
            .steps
            .iter()
            .map(|s| ManifestStep {
                time_step: s.time_step,
                t: s.t,
                links: s.student.as_ref().map(|e| e.links),
                dropped: s.student.as_ref().map(|e| e.dropped),
            })
            .collect(),
    };
    let path = dir.join("manifest.json");
    fs::write(&path, serde_json::to_string_pretty(&manifest)?).map_err(|e| Error::io(&path, e))
}

/// Runs one experiment at the configured precision.
pub fn run_experiment(cfg: &ExperimentConfig, out: Option<&Path>) -> Result<RunOutput> {
    match cfg.precision {
        Precision::F64 => run_prepared(cfg, &prepare::<f64>(cfg)?, out),
        Precision::F32 => run_prepared(cfg, &prepare::<f32>(cfg)?, out),
    }
}

#[cfg(test)]
mod tests;
