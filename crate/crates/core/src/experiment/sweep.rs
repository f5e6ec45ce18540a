use std::fmt::Write as _;
use std::fs;
use std::path::Path;
use std::str::FromStr;
use std::sync::Mutex;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{prepare, run_prepared, with_workers, ExperimentConfig, Precision, Prepared};
use crate::error::{Error, Result};
use crate::eval::mean_std;
use crate::scalar::Scalar;

pub const SWEEP_HEADER: &str = "axis_value,auc_mean,auc_std,params";

/// Student hyper-parameter varied by a sweep.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepAxis {
    /// Distillation weight.
    Gamma,
    /// Student window length.
    Window,
    /// Student embedding dimension.
    EmbedDim,
    /// Student structural and temporal head count, set together.
    Heads,
}

impl FromStr for SweepAxis {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "gamma" => Ok(Self::Gamma),
            "window" => Ok(Self::Window),
            "embed_dim" => Ok(Self::EmbedDim),
            "heads" => Ok(Self::Heads),
            _ => Err(Error::Config(format!(
                "unknown sweep axis `{s}` (expected gamma, window, embed_dim or heads)"
            ))),
        }
    }
}

impl std::fmt::Display for SweepAxis {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::Gamma => "gamma",
            Self::Window => "window",
            Self::EmbedDim => "embed_dim",
            Self::Heads => "heads",
        })
    }
}

/// `cfg` with the swept value applied.
pub fn apply_axis(cfg: &ExperimentConfig, axis: SweepAxis, value: &str) -> Result<ExperimentConfig> {
    let mut c = cfg.clone();
    match axis {
        SweepAxis::Gamma => c.set("gamma", value)?,
        SweepAxis::Window => c.set("student.l", value)?,
        SweepAxis::EmbedDim => {
            c.student.k = None;
            c.set("student.d", value)?;
        }
        SweepAxis::Heads => {
            c.student.k = None;
            let mut pairs = c.to_pairs();
            pairs.retain(|(k, _)| k != "student.h" && k != "student.g");
            pairs.push(("student.h".into(), value.into()));
            pairs.push(("student.g".into(), value.into()));
            c = ExperimentConfig::from_pairs(pairs.iter().map(|(k, v)| (k.as_str(), v.as_str())))?;
        }
    }
    Ok(c)
}

/// One sweep point: AUC over every online step and evaluation seed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub axis_value: String,
    pub auc_mean: f64,
    pub auc_std: f64,
    /// Student parameters at the first online step.
    pub params: usize,
}

impl SweepRow {
    fn line(&self) -> String {
        format!("{},{},{},{}", self.axis_value, self.auc_mean, self.auc_std, self.params)
    }
}

fn write_rows(path: &Path, rows: &[SweepRow]) -> Result<()> {
    let mut s = String::from(SWEEP_HEADER);
    s.push('\n');
    for r in rows {
        writeln!(s, "{}", r.line()).expect("string write");
    }
    fs::write(path, s).map_err(|e| Error::io(path, e))
}

fn point<S: Scalar>(cfg: &ExperimentConfig, prep: &Prepared<S>, value: &str, dir: &Path) -> Result<SweepRow> {
    let run = run_prepared(cfg, prep, Some(dir))?;
    let (auc_mean, auc_std) = mean_std(&run.student_aucs());
    Ok(SweepRow {
        axis_value: value.to_string(),
        auc_mean,
        auc_std,
        params: run.steps.first().map_or(0, |s| s.student_params),
    })
}

fn sweep_with<S: Scalar>(
    cfg: &ExperimentConfig,
    axis: SweepAxis,
    values: &[String],
    out: &Path,
    workers: usize,
) -> Result<Vec<SweepRow>> {
    let configs = values
        .iter()
        .map(|v| apply_axis(cfg, axis, v))
        .collect::<Result<Vec<_>>>()?;
    fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    let csv = out.join("sweep.csv");
    // every axis varies only the student, so one teacher serves all points
    let prep = with_workers(workers, || prepare::<S>(cfg))??;
    let done: Mutex<Vec<(usize, SweepRow)>> = Mutex::new(Vec::new());
    let results: Vec<Result<()>> = with_workers(workers, || {
        configs
            .par_iter()
            .zip(values)
            .enumerate()
            .map(|(i, (c, v))| {
                let dir = out.join(format!("{axis}={v}"));
                let row = point(c, &prep, v, &dir).map_err(|e| {
                    log::error!("sweep point {axis} = {v} failed: {e}");
                    e
                })?;
                let mut done = done.lock().expect("sweep lock");
                done.push((i, row));
                let rows: Vec<SweepRow> = done.iter().map(|(_, r)| r.clone()).collect();
                write_rows(&csv, &rows)
            })
            .collect()
    })?;
    let mut done = done.into_inner().expect("sweep lock");
    done.sort_by_key(|(i, _)| *i);
    let rows: Vec<SweepRow> = done.into_iter().map(|(_, r)| r).collect();
    write_rows(&csv, &rows)?;
    results.into_iter().collect::<Result<Vec<()>>>()?;
    Ok(rows)
}

/// Runs one experiment per value of `axis` and writes `sweep.csv` plus a
/// run directory per point under `out`.
///
/// Completed points are flushed to `sweep.csv` as they finish; on failure
/// the file keeps every finished point and the first error is returned.
pub fn run_sweep(
    cfg: &ExperimentConfig,
    axis: SweepAxis,
    values: &[String],
    out: &Path,
    workers: usize,
) -> Result<Vec<SweepRow>> {
    if values.is_empty() {
        return Err(Error::Config("sweep needs at least one value".into()));
    }
    match cfg.precision {
        Precision::F64 => sweep_with::<f64>(cfg, axis, values, out, workers),
        Precision::F32 => sweep_with::<f32>(cfg, axis, values, out, workers),
    }
}
