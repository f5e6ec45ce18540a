use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use dynkd::experiment::{run_experiment, run_sweep, with_workers, workers_from_env, ExperimentConfig, SweepAxis};
use dynkd::graph::{load_edge_stream, load_snapshots, save_snapshots, Bucketing, DynamicGraph, MANIFEST_FILE};
use dynkd::Error;

#[derive(Parser)]
#[command(
    name = "dynkd",
    version,
    about = "Dynamic graph embedding with teacher-student distillation"
)]
struct Cli {
    /// Log progress (repeat for debug output).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Bucket a temporal edge list into snapshots.
    Ingest(IngestArgs),
    /// Train teacher and student and evaluate every online step.
    Run(RunArgs),
    /// Run one experiment per value of a student hyper-parameter.
    Sweep(SweepArgs),
}

#[derive(Args)]
#[command(group = clap::ArgGroup::new("bucketing").multiple(false))]
struct IngestArgs {
    /// Edge list (`src dst time [weight]`) or a snapshot directory / manifest.
    #[arg(long)]
    input: PathBuf,
    /// Bucket width in timestamp units.
    #[arg(long, group = "bucketing")]
    bucket_width: Option<u64>,
    /// Number of equal-width buckets over the observed time span.
    #[arg(long, group = "bucketing")]
    bucket_count: Option<usize>,
    /// Output directory for the manifest and snapshot files.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct RunArgs {
    /// Experiment config file (`key = value` lines).
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    gamma: Option<f64>,
    /// Student window length.
    #[arg(long)]
    window: Option<usize>,
    /// Training seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Epochs for both teacher and student.
    #[arg(long)]
    epochs: Option<usize>,
    /// kl-similarity, kl-direct or bce.
    #[arg(long)]
    distill_mode: Option<String>,
    /// Train the student without a teacher.
    #[arg(long)]
    no_teacher: bool,
    /// Extra `key=value` overrides, applied last.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
    /// Run directory.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct SweepArgs {
    #[arg(long)]
    config: PathBuf,
    /// gamma, window, embed_dim or heads.
    #[arg(long)]
    axis: String,
    /// Comma-separated values, or `start:end:step`.
    #[arg(long)]
    values: String,
    /// Extra `key=value` overrides.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
    #[arg(long)]
    out: PathBuf,
}

/// Expands `start:end:step` (inclusive) or splits a comma list.
fn expand_values(spec: &str) -> Result<Vec<String>, Error> {
    let bad = || Error::Config(format!("cannot parse sweep values `{spec}`"));
    let parts: Vec<&str> = spec.split(':').collect();
    if parts.len() == 1 {
        let v: Vec<String> = spec
            .split(',')
            .map(|s| s.trim().to_string())
            .filter(|s| !s.is_empty())
            .collect();
        return if v.is_empty() { Err(bad()) } else { Ok(v) };
    }
    let [start, end, step] = parts[..] else {
        return Err(bad());
    };
    let decimals = step.split_once('.').map_or(0, |(_, f)| f.len());
    let (start, end, step): (f64, f64, f64) = (
        start.parse().map_err(|_| bad())?,
        end.parse().map_err(|_| bad())?,
        step.parse().map_err(|_| bad())?,
    );
    if step <= 0.0 || end < start {
        return Err(bad());
    }
    let n = ((end - start) / step + 1e-9).floor() as usize;
    Ok((0..=n)
        .map(|i| format!("{:.*}", decimals, start + i as f64 * step))
        .collect())
}

fn apply_sets(cfg: &mut ExperimentConfig, sets: &[String]) -> Result<(), Error> {
    for s in sets {
        let (k, v) = s
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("`--set {s}`: expected KEY=VALUE")))?;
        cfg.set(k.trim(), v.trim())?;
    }
    Ok(())
}

fn print_counts(g: &DynamicGraph) {
    println!("snapshot\tnodes\tedges");
    for (t, s) in g.snapshots().iter().enumerate() {
        println!("{t}\t{}\t{}", s.num_nodes(), s.num_edges());
    }
    println!("content_hash\t{}", g.content_hash());
}

fn is_snapshot_dir(p: &Path) -> bool {
    p.is_dir() || p.file_name().is_some_and(|f| f == MANIFEST_FILE)
}

fn ingest(a: IngestArgs) -> Result<(), Error> {
    let g = if is_snapshot_dir(&a.input) {
        load_snapshots(&a.input)?
    } else {
        let bucketing = match (a.bucket_width, a.bucket_count) {
            (Some(w), None) => Bucketing::Width(w),
            (None, Some(c)) => Bucketing::Count(c),
            _ => return Err(Error::Config("edge lists need --bucket-width or --bucket-count".into())),
        };
        load_edge_stream(&a.input, bucketing)?
    };
    let manifest = save_snapshots(&g, &a.out)?;
    print_counts(&g);
    eprintln!("wrote {}", manifest.display());
    Ok(())
}

fn run(a: RunArgs) -> Result<(), Error> {
    let mut cfg = ExperimentConfig::load(&a.config)?;
    if let Some(g) = a.gamma {
        cfg.set("gamma", &g.to_string())?;
    }
    if let Some(l) = a.window {
        cfg.set("student.l", &l.to_string())?;
    }
    if let Some(s) = a.seed {
        cfg.set("seed", &s.to_string())?;
    }
    if let Some(e) = a.epochs {
        cfg.set("epochs", &e.to_string())?;
    }
    if let Some(m) = &a.distill_mode {
        cfg.set("distill_mode", m)?;
    }
    if a.no_teacher {
        cfg.set("use_teacher", "false")?;
    }
    apply_sets(&mut cfg, &a.set)?;
    let out = with_workers(workers_from_env()?, || run_experiment(&cfg, Some(&a.out)))??;
    print!("{}", out.report.to_csv());
    eprintln!("wrote {}", a.out.display());
    Ok(())
}

fn sweep(a: SweepArgs) -> Result<(), Error> {
    let mut cfg = ExperimentConfig::load(&a.config)?;
    apply_sets(&mut cfg, &a.set)?;
    let axis: SweepAxis = a.axis.parse()?;
    let values = expand_values(&a.values)?;
    run_sweep(&cfg, axis, &values, &a.out, workers_from_env()?)?;
    print!(
        "{}",
        std::fs::read_to_string(a.out.join("sweep.csv")).map_err(|e| Error::Io {
            path: a.out.join("sweep.csv"),
            source: e,
        })?
    );
    Ok(())
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Parse { .. } | Error::Config(_) => 2,
        Error::Stage { source, .. } => exit_code(source),
        _ => 1,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    let result = match cli.command {
        Command::Ingest(a) => ingest(a),
        Command::Run(a) => run(a),
        Command::Sweep(a) => sweep(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn expands_ranges_and_lists() {
        assert_eq!(expand_values("0:1:0.1").unwrap().len(), 11);
        assert_eq!(expand_values("0:1:0.1").unwrap()[3], "0.3");
        assert_eq!(expand_values("1:5:1").unwrap(), vec!["1", "2", "3", "4", "5"]);
        assert_eq!(expand_values("16, 32,64").unwrap(), vec!["16", "32", "64"]);
        assert!(expand_values("1:2").is_err());
        assert!(expand_values("").is_err());
    }
}
