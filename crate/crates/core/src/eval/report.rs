use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const REPORT_HEADER: &str = "model,time_step,auc_mean,auc_std,params,ratio_vs_teacher";

/// One model at one online time step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalRow {
    pub model: String,
    pub time_step: usize,
    pub auc_mean: f64,
    pub auc_std: f64,
    pub params: usize,
    pub ratio_vs_teacher: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub rows: Vec<EvalRow>,
}

impl EvalReport {
    pub fn rows_for<'a>(&'a self, model: &'a str) -> impl Iterator<Item = &'a EvalRow> + 'a {
        self.rows.iter().filter(move |r| r.model == model)
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from(REPORT_HEADER);
        s.push('\n');
        for r in &self.rows {
            writeln!(
                s,
                "{},{},{},{},{},{}",
                r.model, r.time_step, r.auc_mean, r.auc_std, r.params, r.ratio_vs_teacher
            )
            .expect("string write");
        }
        s
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_csv()).map_err(|e| Error::io(path, e))
    }
}

/// Parameter counts of one model, per time step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelCounts {
    pub name: String,
    pub counts: Vec<(usize, usize)>,
}

impl ModelCounts {
    pub fn new(name: impl Into<String>, counts: Vec<(usize, usize)>) -> Self {
        Self {
            name: name.into(),
            counts,
        }
    }

    fn at(&self, step: usize) -> Option<usize> {
        self.counts.iter().find(|c| c.0 == step).map(|c| c.1)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompressionRow {
    pub model: String,
    pub reference: String,
    pub time_step: usize,
    pub params: usize,
    pub reference_params: usize,
    pub ratio: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompressionReport {
    pub rows: Vec<CompressionRow>,
    /// `(model, reference, mean ratio over shared steps)`.
    pub averages: Vec<(String, String, f64)>,
}

/// Parameter-count ratios of every ordered model pair at each time step
/// both report, plus their averages.
pub fn compression_report(models: &[ModelCounts]) -> Result<CompressionReport> {
    if models.len() < 2 {
        return Err(Error::Config("compression report needs at least two models".into()));
    }
    let mut rows = Vec::new();
    let mut averages = Vec::new();
    for a in models {
        for b in models {
            if std::ptr::eq(a, b) {
                continue;
            }
            let mut ratios = Vec::new();
            for &(step, params) in &a.counts {
                if let Some(reference_params) = b.at(step) {
                    let ratio = params as f64 / reference_params as f64;
                    ratios.push(ratio);
                    rows.push(CompressionRow {
                        model: a.name.clone(),
                        reference: b.name.clone(),
                        time_step: step,
                        params,
                        reference_params,
                        ratio,
                    });
                }
            }
            if !ratios.is_empty() {
                let mean = ratios.iter().sum::<f64>() / ratios.len() as f64;
                averages.push((a.name.clone(), b.name.clone(), mean));
            }
        }
    }
    Ok(CompressionReport { rows, averages })
}

impl CompressionReport {
    pub fn ratio(&self, model: &str, reference: &str, step: usize) -> Option<f64> {
        self.rows
            .iter()
            .find(|r| r.model == model && r.reference == reference && r.time_step == step)
            .map(|r| r.ratio)
    }

    pub fn average(&self, model: &str, reference: &str) -> Option<f64> {
        self.averages
            .iter()
            .find(|a| a.0 == model && a.1 == reference)
            .map(|a| a.2)
    }
}
