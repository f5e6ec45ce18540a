use std::fmt::Write as _;
use std::fs;
use std::path::Path;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use super::DistillLoss;
use crate::error::{Error, Result};

pub const LOG_HEADER: &str = "time_step,epoch,L_S,L_F,L_D,wall_ms";

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LogRow {
    /// 0 for the teacher, `1..` for online student steps.
    pub time_step: usize,
    pub epoch: usize,
    pub l_s: f64,
    pub l_f: f64,
    pub l_d: f64,
    pub wall_ms: u64,
}

impl LogRow {
    pub fn new(time_step: usize, epoch: usize, loss: DistillLoss, wall: Duration) -> Self {
        Self {
            time_step,
            epoch,
            l_s: loss.l_s,
            l_f: loss.l_f,
            l_d: loss.l_d,
            wall_ms: wall.as_millis() as u64,
        }
    }
}

/// Per-epoch losses of a run.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainingLog {
    rows: Vec<LogRow>,
}

impl TrainingLog {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, row: LogRow) {
        self.rows.push(row);
    }

    pub fn rows(&self) -> &[LogRow] {
        &self.rows
    }

    /// Rows of one time step, in epoch order.
    pub fn step(&self, time_step: usize) -> impl Iterator<Item = &LogRow> {
        self.rows.iter().filter(move |r| r.time_step == time_step)
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from(LOG_HEADER);
        s.push('\n');
        for r in &self.rows {
            writeln!(
                s,
                "{},{},{},{},{},{}",
                r.time_step, r.epoch, r.l_s, r.l_f, r.l_d, r.wall_ms
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
