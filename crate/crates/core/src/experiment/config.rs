//! Flat `key = value` experiment configuration.
//!
//! Blank lines and lines starting with `#` are ignored. Every key is
//! optional; unknown keys are rejected. Recognized keys:
//!
//! | key | default | meaning |
//! |-----|---------|---------|
//! | `input` | | temporal edge list (`src dst time [weight]`, tab-separated) |
//! | `snapshots` | | directory or manifest written by `ingest` |
//! | `bucket_width` / `bucket_count` | | bucketing for `input` |
//! | `synthetic` | `true` when no input is given | use the stochastic block model below |
//! | `sbm.n`, `sbm.communities`, `sbm.p_in`, `sbm.p_out`, `sbm.snapshots`, `sbm.churn`, `sbm.seed` | 200, 2, 0.1, 0.01, 8, 0.1, 7 | synthetic graph |
//! | `m` | 5 | number of offline snapshots |
//! | `teacher.d`, `teacher.h`, `teacher.g`, `teacher.k`, `teacher.l` | 256, 16, 16, d/g, m | teacher shape |
//! | `student.d`, `student.h`, `student.g`, `student.k`, `student.l` | 64, 2, 2, d/g, 2 | student shape |
//! | `pipeline` | `temporal` | `temporal` or `literal` |
//! | `mask` | `causal` | `causal` or `strict` |
//! | `use_teacher` | `true` | train a teacher and distill from it |
//! | `gamma`, `tau`, `w_neg`, `neg_per_pos`, `candidate_set_size`, `distill_mode` | 0.4, 1, 1, 1, 32, `kl-similarity` | losses |
//! | `epochs`, `teacher.epochs`, `student.epochs` | 200 | training epochs (role keys override `epochs`) |
//! | `lr`, `beta1`, `beta2`, `eps` | 1e-3, 0.9, 0.999, 1e-8 | Adam |
//! | `walk_len`, `walks_per_node`, `context` | 40, 10, 10 | random walks |
//! | `negative_power` | 0.75 | negative sampling exponent |
//! | `anchors_per_batch` | 1 | anchor nodes per mini-batch |
//! | `seed` | 0 | training seed |
//! | `eval_seeds` | `0,1,2,3,4` | evaluation split seeds |
//! | `precision` | `f64` | `f64` or `f32` |

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{Bucketing, SbmConfig};
use crate::model::{MaskMode, ModelConfig, Pipeline};
use crate::train::{DistillMode, TrainConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Precision {
    F32,
    F64,
}

/// Where the dynamic graph comes from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DataSource {
    EdgeList { path: PathBuf, bucketing: Bucketing },
    Snapshots { path: PathBuf },
    Synthetic(SbmConfig),
}

/// Shape of one model; `k` and `l` fall back to `d / g` and `m`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Shape {
    pub d: usize,
    pub h: usize,
    pub g: usize,
    pub k: Option<usize>,
    pub l: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub data: DataSource,
    pub m: usize,
    pub teacher: Shape,
    pub student: Shape,
    pub pipeline: Pipeline,
    pub mask: MaskMode,
    pub use_teacher: bool,
    pub teacher_epochs: usize,
    pub student_epochs: usize,
    /// Loss, optimizer and walk settings; `epochs` is ignored in favor of
    /// the per-role counts.
    pub train: TrainConfig,
    pub eval_seeds: Vec<u64>,
    pub precision: Precision,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            data: DataSource::Synthetic(SbmConfig::default()),
            m: 5,
            teacher: Shape {
                d: 256,
                h: 16,
                g: 16,
                k: None,
                l: None,
            },
            student: Shape {
                d: 64,
                h: 2,
                g: 2,
                k: None,
                l: Some(2),
            },
            pipeline: Pipeline::Temporal,
            mask: MaskMode::Causal,
            use_teacher: true,
            teacher_epochs: 200,
            student_epochs: 200,
            train: TrainConfig::default(),
            eval_seeds: vec![0, 1, 2, 3, 4],
            precision: Precision::F64,
        }
    }
}

fn parse_num<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::Config(format!("`{key}`: cannot parse `{value}`")))
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value {
        "true" | "yes" | "1" => Ok(true),
        "false" | "no" | "0" => Ok(false),
        _ => Err(Error::Config(format!("`{key}`: expected true or false, got `{value}`"))),
    }
}

/// Raw settings before they are resolved into an [`ExperimentConfig`].
#[derive(Debug, Clone, Default)]
struct Raw {
    input: Option<PathBuf>,
    snapshots: Option<PathBuf>,
    bucket_width: Option<u64>,
    bucket_count: Option<usize>,
    synthetic: Option<bool>,
    epochs: Option<usize>,
    teacher_epochs: Option<usize>,
    student_epochs: Option<usize>,
}

impl ExperimentConfig {
    /// Parses a config file's text on top of the defaults.
    pub fn parse(text: &str) -> Result<Self> {
        let mut pairs = Vec::new();
        for (i, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected `key = value`", i + 1)))?;
            pairs.push((k.trim().to_string(), v.trim().to_string()));
        }
        Self::from_pairs(pairs.iter().map(|(k, v)| (k.as_str(), v.as_str())))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg = Self::parse(&text)?;
        // relative data paths are resolved against the config file
        let base = path.parent().unwrap_or(Path::new("."));
        match &mut cfg.data {
            DataSource::EdgeList { path: p, .. } | DataSource::Snapshots { path: p } if p.is_relative() => {
                *p = base.join(&*p);
            }
            _ => {}
        }
        Ok(cfg)
    }

    /// Applies `key = value` pairs in order, later keys winning.
    pub fn from_pairs<'a>(pairs: impl IntoIterator<Item = (&'a str, &'a str)>) -> Result<Self> {
        let mut cfg = Self::default();
        let mut raw = Raw::default();
        let mut sbm = SbmConfig::default();
        let mut seen = BTreeMap::new();
        for (k, v) in pairs {
            seen.insert(k.to_string(), v.to_string());
            cfg.apply(k, v, &mut raw, &mut sbm)?;
        }
        cfg.resolve(raw, sbm)?;
        Ok(cfg)
    }

    fn apply(&mut self, key: &str, v: &str, raw: &mut Raw, sbm: &mut SbmConfig) -> Result<()> {
        let t = &mut self.train;
        match key {
            "input" => raw.input = Some(PathBuf::from(v)),
            "snapshots" => raw.snapshots = Some(PathBuf::from(v)),
            "bucket_width" => raw.bucket_width = Some(parse_num(key, v)?),
            "bucket_count" => raw.bucket_count = Some(parse_num(key, v)?),
            "synthetic" => raw.synthetic = Some(parse_bool(key, v)?),
            "sbm.n" => sbm.n = parse_num(key, v)?,
            "sbm.communities" => sbm.communities = parse_num(key, v)?,
            "sbm.p_in" => sbm.p_in = parse_num(key, v)?,
            "sbm.p_out" => sbm.p_out = parse_num(key, v)?,
            "sbm.snapshots" => sbm.snapshots = parse_num(key, v)?,
            "sbm.churn" => sbm.churn = parse_num(key, v)?,
            "sbm.seed" => sbm.seed = parse_num(key, v)?,
            "m" => self.m = parse_num(key, v)?,
            "teacher.d" => self.teacher.d = parse_num(key, v)?,
            "teacher.h" => self.teacher.h = parse_num(key, v)?,
            "teacher.g" => self.teacher.g = parse_num(key, v)?,
            "teacher.k" => self.teacher.k = Some(parse_num(key, v)?),
            "teacher.l" => self.teacher.l = Some(parse_num(key, v)?),
            "student.d" => self.student.d = parse_num(key, v)?,
            "student.h" => self.student.h = parse_num(key, v)?,
            "student.g" => self.student.g = parse_num(key, v)?,
            "student.k" => self.student.k = Some(parse_num(key, v)?),
            "student.l" => self.student.l = Some(parse_num(key, v)?),
            "pipeline" => {
                self.pipeline = match v {
                    "temporal" => Pipeline::Temporal,
                    "literal" => Pipeline::Literal,
                    _ => return Err(Error::Config(format!("`pipeline`: unknown value `{v}`"))),
                }
            }
            "mask" => {
                self.mask = match v {
                    "causal" => MaskMode::Causal,
                    "strict" => MaskMode::Strict,
                    _ => return Err(Error::Config(format!("`mask`: unknown value `{v}`"))),
                }
            }
            "use_teacher" => self.use_teacher = parse_bool(key, v)?,
            "gamma" => t.loss.gamma = parse_num(key, v)?,
            "tau" => t.loss.tau = parse_num(key, v)?,
            "w_neg" => t.loss.w_neg = parse_num(key, v)?,
            "neg_per_pos" => t.loss.neg_per_pos = parse_num(key, v)?,
            "candidate_set_size" => t.loss.candidate_set_size = parse_num(key, v)?,
            "distill_mode" => t.loss.distill_mode = v.parse::<DistillMode>()?,
            "epochs" => raw.epochs = Some(parse_num(key, v)?),
            "teacher.epochs" => raw.teacher_epochs = Some(parse_num(key, v)?),
            "student.epochs" => raw.student_epochs = Some(parse_num(key, v)?),
            "lr" => t.adam.lr = parse_num(key, v)?,
            "beta1" => t.adam.beta1 = parse_num(key, v)?,
            "beta2" => t.adam.beta2 = parse_num(key, v)?,
            "eps" => t.adam.eps = parse_num(key, v)?,
            "walk_len" => t.walks.walk_len = parse_num(key, v)?,
            "walks_per_node" => t.walks.walks_per_node = parse_num(key, v)?,
            "context" => t.walks.context = parse_num(key, v)?,
            "negative_power" => t.negative_power = parse_num(key, v)?,
            "anchors_per_batch" => t.anchors_per_batch = parse_num(key, v)?,
            "seed" => t.seed = parse_num(key, v)?,
            "eval_seeds" => {
                self.eval_seeds = v
                    .split(',')
                    .map(|s| parse_num(key, s.trim()))
                    .collect::<Result<Vec<u64>>>()?
            }
            "precision" => {
                self.precision = match v {
                    "f64" => Precision::F64,
                    "f32" => Precision::F32,
                    _ => return Err(Error::Config(format!("`precision`: expected f32 or f64, got `{v}`"))),
                }
            }
            _ => return Err(Error::Config(format!("unknown key `{key}`"))),
        }
        Ok(())
    }

    fn resolve(&mut self, raw: Raw, sbm: SbmConfig) -> Result<()> {
        let file_source = match (raw.input, raw.snapshots) {
            (Some(_), Some(_)) => return Err(Error::Config("set only one of `input` and `snapshots`".into())),
            (Some(path), None) => {
                let bucketing = match (raw.bucket_width, raw.bucket_count) {
                    (Some(w), None) => Bucketing::Width(w),
                    (None, Some(c)) => Bucketing::Count(c),
                    _ => {
                        return Err(Error::Config(
                            "`input` needs exactly one of `bucket_width` and `bucket_count`".into(),
                        ))
                    }
                };
                Some(DataSource::EdgeList { path, bucketing })
            }
            (None, Some(path)) => Some(DataSource::Snapshots { path }),
            (None, None) => None,
        };
        self.data = match (file_source, raw.synthetic) {
            (Some(_), Some(true)) => return Err(Error::Config("`synthetic = true` conflicts with a data file".into())),
            (Some(src), _) => src,
            (None, Some(false)) => return Err(Error::Config("no data source configured".into())),
            (None, _) => DataSource::Synthetic(sbm),
        };
        let epochs = raw.epochs.unwrap_or(200);
        self.teacher_epochs = raw.teacher_epochs.unwrap_or(epochs);
        self.student_epochs = raw.student_epochs.unwrap_or(epochs);
        self.train.epochs = self.student_epochs;
        self.validate()
    }

    /// Resolved teacher architecture.
    pub fn teacher_model(&self) -> ModelConfig {
        self.model_config(&self.teacher)
    }

    /// Resolved student architecture.
    pub fn student_model(&self) -> ModelConfig {
        self.model_config(&self.student)
    }

    fn model_config(&self, s: &Shape) -> ModelConfig {
        let mut c = ModelConfig::new(s.d, s.l.unwrap_or(self.m), s.h, s.g);
        if let Some(k) = s.k {
            c.k = k;
        }
        c.pipeline = self.pipeline;
        c.mask = self.mask;
        c
    }

    pub fn teacher_train(&self) -> TrainConfig {
        TrainConfig {
            epochs: self.teacher_epochs,
            ..self.train
        }
    }

    pub fn student_train(&self) -> TrainConfig {
        TrainConfig {
            epochs: self.student_epochs,
            ..self.train
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.m == 0 {
            return Err(Error::Config("m must be at least 1".into()));
        }
        self.teacher_model()
            .validate()
            .map_err(|e| Error::Config(format!("teacher: {e}")))?;
        self.student_model()
            .validate()
            .map_err(|e| Error::Config(format!("student: {e}")))?;
        self.train.validate()?;
        if self.eval_seeds.is_empty() {
            return Err(Error::Config("eval_seeds must not be empty".into()));
        }
        Ok(())
    }

    /// Applies one `key=value` override.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let mut pairs = self.to_pairs();
        pairs.retain(|(k, _)| k != key && !conflicts(k, key));
        pairs.push((key.to_string(), value.to_string()));
        *self = Self::from_pairs(pairs.iter().map(|(k, v)| (k.as_str(), v.as_str())))?;
        Ok(())
    }

    /// The config as `key = value` pairs that parse back to it.
    pub fn to_pairs(&self) -> Vec<(String, String)> {
        let mut p: Vec<(String, String)> = Vec::new();
        let mut put = |k: &str, v: String| p.push((k.to_string(), v));
        match &self.data {
            DataSource::EdgeList { path, bucketing } => {
                put("input", path.display().to_string());
                match bucketing {
                    Bucketing::Width(w) => put("bucket_width", w.to_string()),
                    Bucketing::Count(c) => put("bucket_count", c.to_string()),
                }
            }
            DataSource::Snapshots { path } => put("snapshots", path.display().to_string()),
            DataSource::Synthetic(s) => {
                put("synthetic", "true".into());
                put("sbm.n", s.n.to_string());
                put("sbm.communities", s.communities.to_string());
                put("sbm.p_in", s.p_in.to_string());
                put("sbm.p_out", s.p_out.to_string());
                put("sbm.snapshots", s.snapshots.to_string());
                put("sbm.churn", s.churn.to_string());
                put("sbm.seed", s.seed.to_string());
            }
        }
        put("m", self.m.to_string());
        for (role, s) in [("teacher", &self.teacher), ("student", &self.student)] {
            put(&format!("{role}.d"), s.d.to_string());
            put(&format!("{role}.h"), s.h.to_string());
            put(&format!("{role}.g"), s.g.to_string());
            if let Some(k) = s.k {
                put(&format!("{role}.k"), k.to_string());
            }
            if let Some(l) = s.l {
                put(&format!("{role}.l"), l.to_string());
            }
        }
        put(
            "pipeline",
            match self.pipeline {
                Pipeline::Temporal => "temporal",
                Pipeline::Literal => "literal",
            }
            .into(),
        );
        put(
            "mask",
            match self.mask {
                MaskMode::Causal => "causal",
                MaskMode::Strict => "strict",
            }
            .into(),
        );
        put("use_teacher", self.use_teacher.to_string());
        let t = &self.train;
        put("gamma", t.loss.gamma.to_string());
        put("tau", t.loss.tau.to_string());
        put("w_neg", t.loss.w_neg.to_string());
        put("neg_per_pos", t.loss.neg_per_pos.to_string());
        put("candidate_set_size", t.loss.candidate_set_size.to_string());
        put("distill_mode", t.loss.distill_mode.to_string());
        put("teacher.epochs", self.teacher_epochs.to_string());
        put("student.epochs", self.student_epochs.to_string());
        put("lr", t.adam.lr.to_string());
        put("beta1", t.adam.beta1.to_string());
        put("beta2", t.adam.beta2.to_string());
        put("eps", t.adam.eps.to_string());
        put("walk_len", t.walks.walk_len.to_string());
        put("walks_per_node", t.walks.walks_per_node.to_string());
        put("context", t.walks.context.to_string());
        put("negative_power", t.negative_power.to_string());
        put("anchors_per_batch", t.anchors_per_batch.to_string());
        put("seed", t.seed.to_string());
        put(
            "eval_seeds",
            self.eval_seeds.iter().map(u64::to_string).collect::<Vec<_>>().join(","),
        );
        put(
            "precision",
            match self.precision {
                Precision::F32 => "f32",
                Precision::F64 => "f64",
            }
            .into(),
        );
        p
    }

    /// Config file text that parses back to this config.
    pub fn to_text(&self) -> String {
        self.to_pairs()
            .into_iter()
            .map(|(k, v)| format!("{k} = {v}\n"))
            .collect()
    }
}

/// Keys that select the data source or epoch count exclude each other.
fn conflicts(existing: &str, new: &str) -> bool {
    const SOURCE: [&str; 5] = ["input", "snapshots", "synthetic", "bucket_width", "bucket_count"];
    let source = |k: &str| SOURCE.contains(&k) || k.starts_with("sbm.");
    let epochs = |k: &str| matches!(k, "epochs" | "teacher.epochs" | "student.epochs");
    if matches!(new, "input" | "snapshots" | "synthetic") {
        return source(existing);
    }
    if matches!(new, "bucket_width" | "bucket_count") {
        return matches!(existing, "bucket_width" | "bucket_count");
    }
    if new == "epochs" {
        return epochs(existing);
    }
    false
}
