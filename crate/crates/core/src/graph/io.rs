//! Temporal edge lists in, snapshot manifests out.
//!
//! Edge list: one edge per line, `src<TAB>dst<TAB>timestamp[<TAB>weight]`,
//! `#` starts a comment line. Snapshot directory: `manifest.json` plus one
//! `snapshot_NNNN.tsv` per snapshot holding `src<TAB>dst<TAB>weight` with
//! external ids.

use std::collections::HashMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{DynamicGraph, Snapshot};
use crate::error::{Error, Result};

pub const MANIFEST_FILE: &str = "manifest.json";
const MANIFEST_FORMAT: &str = "dynkd-snapshots";
const MANIFEST_VERSION: u32 = 1;

/// How timestamps map to snapshot indices.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Bucketing {
    /// Bucket `i` covers `[t0 + i * width, t0 + (i + 1) * width)` where `t0`
    /// is the earliest timestamp.
    Width(u64),
    /// The observed time span is cut into this many equal buckets.
    Count(usize),
}

struct RawEdge {
    src: String,
    dst: String,
    ts: u64,
    weight: f64,
    line: usize,
}

fn parse_line(path: &Path, line_no: usize, line: &str) -> Result<Option<RawEdge>> {
    let trimmed = line.trim_end_matches(['\r', '\n']);
    if trimmed.trim().is_empty() || trimmed.starts_with('#') {
        return Ok(None);
    }
    let err = |msg: String| Error::Parse {
        path: path.to_path_buf(),
        line: line_no,
        msg,
    };
    let fields: Vec<&str> = trimmed.split('\t').collect();
    if fields.len() != 3 && fields.len() != 4 {
        return Err(err(format!(
            "expected 3 or 4 tab-separated fields, found {}",
            fields.len()
        )));
    }
    if fields[0].is_empty() || fields[1].is_empty() {
        return Err(err("empty node id".into()));
    }
    let ts = fields[2]
        .trim()
        .parse::<u64>()
        .map_err(|e| err(format!("bad timestamp `{}`: {e}", fields[2])))?;
    let weight = match fields.get(3) {
        Some(w) => w
            .trim()
            .parse::<f64>()
            .map_err(|e| err(format!("bad weight `{w}`: {e}")))?,
        None => 1.0,
    };
    if !(weight > 0.0 && weight.is_finite()) {
        return Err(err(format!("weight must be positive and finite, got {weight}")));
    }
    Ok(Some(RawEdge {
        src: fields[0].to_string(),
        dst: fields[1].to_string(),
        ts,
        weight,
        line: line_no,
    }))
}

/// Parses edge-list text; `path` is used only for error messages.
pub fn parse_edge_stream(path: &Path, text: &str, bucketing: Bucketing) -> Result<DynamicGraph> {
    let mut raw = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if let Some(e) = parse_line(path, i + 1, line)? {
            raw.push(e);
        }
    }
    if raw.is_empty() {
        return Err(Error::Parse {
            path: path.to_path_buf(),
            line: 0,
            msg: "no edges".into(),
        });
    }
    // Ids are assigned in order of first appearance in time, so that the
    // nodes seen up to any snapshot form a prefix of the index.
    raw.sort_by_key(|e| (e.ts, e.line));
    let mut index: HashMap<String, usize> = HashMap::new();
    let mut node_ids = Vec::new();
    let mut intern = |s: &str| -> usize {
        if let Some(&i) = index.get(s) {
            return i;
        }
        index.insert(s.to_string(), node_ids.len());
        node_ids.push(s.to_string());
        node_ids.len() - 1
    };
    let t0 = raw[0].ts;
    let t1 = raw[raw.len() - 1].ts;
    let bucket_of = |ts: u64| -> Result<usize> {
        match bucketing {
            Bucketing::Width(0) | Bucketing::Count(0) => {
                Err(Error::Config("bucket width/count must be positive".into()))
            }
            Bucketing::Width(w) => Ok(((ts - t0) / w) as usize),
            Bucketing::Count(k) => {
                let span = (t1 - t0) as u128 + 1;
                Ok(((ts - t0) as u128 * k as u128 / span) as usize)
            }
        }
    };
    let buckets = match bucketing {
        Bucketing::Count(k) => k,
        Bucketing::Width(_) => bucket_of(t1)? + 1,
    };
    let mut per_bucket: Vec<Vec<(usize, usize, f64)>> = vec![Vec::new(); buckets];
    for e in &raw {
        let (u, v) = (intern(&e.src), intern(&e.dst));
        per_bucket[bucket_of(e.ts)?].push((u, v, e.weight));
    }
    let n = node_ids.len();
    let mut snapshots = Vec::with_capacity(buckets);
    for (t, edges) in per_bucket.into_iter().enumerate() {
        if edges.is_empty() {
            log::warn!("{}: bucket {t} is empty; keeping an empty snapshot", path.display());
        }
        snapshots.push(Snapshot::from_edges(n, edges)?);
    }
    DynamicGraph::new(node_ids, snapshots)
}

pub fn load_edge_stream(path: impl AsRef<Path>, bucketing: Bucketing) -> Result<DynamicGraph> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_edge_stream(path, &text, bucketing)
}

#[derive(Debug, Serialize, Deserialize)]
struct Manifest {
    format: String,
    version: u32,
    nodes: Vec<String>,
    offline: Option<usize>,
    snapshots: Vec<ManifestEntry>,
    content_hash: String,
}

#[derive(Debug, Serialize, Deserialize)]
struct ManifestEntry {
    index: usize,
    file: String,
    nodes: usize,
    edges: usize,
}

fn snapshot_file(t: usize) -> String {
    format!("snapshot_{t:04}.tsv")
}

/// Writes `manifest.json` and per-snapshot edge files into `dir`.
pub fn save_snapshots(g: &DynamicGraph, dir: impl AsRef<Path>) -> Result<PathBuf> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut entries = Vec::with_capacity(g.len());
    for (t, s) in g.snapshots().iter().enumerate() {
        let mut body = String::new();
        for ((u, v), w) in s.edges() {
            body.push_str(&format!("{}\t{}\t{}\n", g.node_id(u), g.node_id(v), w));
        }
        let file = snapshot_file(t);
        let path = dir.join(&file);
        fs::write(&path, body).map_err(|e| Error::io(&path, e))?;
        entries.push(ManifestEntry {
            index: t,
            file,
            nodes: s.num_nodes(),
            edges: s.num_edges(),
        });
    }
    let manifest = Manifest {
        format: MANIFEST_FORMAT.into(),
        version: MANIFEST_VERSION,
        nodes: g.node_ids().to_vec(),
        offline: g.split(),
        snapshots: entries,
        content_hash: g.content_hash(),
    };
    let path = dir.join(MANIFEST_FILE);
    fs::write(&path, serde_json::to_string_pretty(&manifest)?).map_err(|e| Error::io(&path, e))?;
    Ok(path)
}

/// Reads a snapshot directory (or its `manifest.json`) back.
pub fn load_snapshots(path: impl AsRef<Path>) -> Result<DynamicGraph> {
    let path = path.as_ref();
    let (dir, manifest_path) = if path.is_dir() {
        (path.to_path_buf(), path.join(MANIFEST_FILE))
    } else {
        (
            path.parent().map(Path::to_path_buf).unwrap_or_default(),
            path.to_path_buf(),
        )
    };
    let text = fs::read_to_string(&manifest_path).map_err(|e| Error::io(&manifest_path, e))?;
    let manifest: Manifest = serde_json::from_str(&text)?;
    if manifest.format != MANIFEST_FORMAT || manifest.version != MANIFEST_VERSION {
        return Err(Error::Parse {
            path: manifest_path,
            line: 0,
            msg: format!("unsupported manifest {} v{}", manifest.format, manifest.version),
        });
    }
    let index: HashMap<&str, usize> = manifest
        .nodes
        .iter()
        .enumerate()
        .map(|(i, s)| (s.as_str(), i))
        .collect();
    let n = manifest.nodes.len();
    let mut snapshots = Vec::with_capacity(manifest.snapshots.len());
    for entry in &manifest.snapshots {
        let p = dir.join(&entry.file);
        let body = fs::read_to_string(&p).map_err(|e| Error::io(&p, e))?;
        let mut edges = Vec::new();
        for (i, line) in body.lines().enumerate() {
            if line.is_empty() {
                continue;
            }
            let err = |msg: String| Error::Parse {
                path: p.clone(),
                line: i + 1,
                msg,
            };
            let f: Vec<&str> = line.split('\t').collect();
            if f.len() != 3 {
                return Err(err("expected src, dst, weight".into()));
            }
            let lookup = |s: &str| index.get(s).copied().ok_or_else(|| err(format!("unknown node `{s}`")));
            let w = f[2].parse::<f64>().map_err(|e| err(e.to_string()))?;
            edges.push((lookup(f[0])?, lookup(f[1])?, w));
        }
        snapshots.push(Snapshot::from_edges(n, edges)?);
    }
    let g = DynamicGraph::new(manifest.nodes, snapshots)?;
    match manifest.offline {
        Some(m) => g.with_split(m),
        None => Ok(g),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(text: &str, b: Bucketing) -> Result<DynamicGraph> {
        parse_edge_stream(Path::new("mem.tsv"), text, b)
    }

    #[test]
    fn width_bucketing_forces_one_edge_per_snapshot() {
        let g = parse("a\tb\t0\nb\tc\t10\nc\td\t20\n", Bucketing::Width(10)).unwrap();
        assert_eq!(g.len(), 3);
        for s in g.snapshots() {
            assert_eq!(s.num_edges(), 1);
        }
    }

    #[test]
    fn duplicates_collapse_with_summed_weight() {
        let g = parse("a\tb\t0\t1\nb\ta\t1\t1\n", Bucketing::Width(10)).unwrap();
        assert_eq!(g.len(), 1);
        let s = g.snapshot(0);
        assert_eq!(s.num_edges(), 1);
        assert_eq!(s.weight(0, 1), Some(2.0));
    }

    #[test]
    fn comments_and_default_weight() {
        let g = parse("# header\na\tb\t5\n", Bucketing::Count(1)).unwrap();
        assert_eq!(g.snapshot(0).weight(0, 1), Some(1.0));
    }

    #[test]
    fn malformed_line_reports_line_number() {
        let err = parse("a\tb\t0\na\tb\n", Bucketing::Width(1)).unwrap_err();
        match err {
            Error::Parse { line, .. } => assert_eq!(line, 2),
            other => panic!("unexpected {other:?}"),
        }
        let err = parse("a\tb\t0\na\tb\t-3\n", Bucketing::Width(1)).unwrap_err();
        assert!(matches!(err, Error::Parse { line: 2, .. }));
    }

    #[test]
    fn empty_buckets_are_kept() {
        let g = parse("a\tb\t0\nc\td\t30\n", Bucketing::Width(10)).unwrap();
        assert_eq!(g.len(), 4);
        assert_eq!(g.snapshot(1).num_edges(), 0);
        assert_eq!(g.snapshot(2).num_nodes(), 0);
    }

    #[test]
    fn eight_years_of_half_year_buckets() {
        // 8 years of timestamps in seconds, bucketed every half year.
        let half_year = 365 * 86_400 / 2;
        let mut text = String::new();
        for i in 0..160u64 {
            let ts = i * (16 * half_year / 160);
            text.push_str(&format!("u{}\tb{}\t{}\n", i % 13, i % 7, ts));
        }
        let g = parse(&text, Bucketing::Width(half_year)).unwrap();
        assert_eq!(g.len(), 16);
    }

    #[test]
    fn ids_follow_first_appearance_in_time() {
        let g = parse("z\ty\t5\na\tb\t1\n", Bucketing::Width(100)).unwrap();
        assert_eq!(g.node_ids(), &["a", "b", "z", "y"]);
    }

    #[test]
    fn manifest_round_trip() {
        let g = parse("a\tb\t0\t0.5\nb\tc\t10\nc\ta\t12\t3\n", Bucketing::Width(10))
            .unwrap()
            .with_split(1)
            .unwrap();
        let dir = tempfile::tempdir().unwrap();
        save_snapshots(&g, dir.path()).unwrap();
        let back = load_snapshots(dir.path()).unwrap();
        assert_eq!(back, g);
        assert_eq!(back.content_hash(), g.content_hash());
    }
}
