use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn dynkd(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_dynkd"))
        .args(args)
        .env("DYNKD_WORKERS", "2")
        .output()
        .expect("spawn dynkd")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

const TINY: &str = "\
sbm.n = 40
sbm.p_in = 0.3
sbm.p_out = 0.02
sbm.snapshots = 5
m = 3
teacher.d = 8
teacher.h = 2
teacher.g = 2
student.d = 4
student.h = 1
student.g = 1
epochs = 2
lr = 0.01
walk_len = 8
walks_per_node = 2
context = 2
anchors_per_batch = 16
candidate_set_size = 8
eval_seeds = 0,1
";

fn write_config(dir: &Path, text: &str) -> String {
    let p = dir.join("exp.conf");
    fs::write(&p, text).unwrap();
    p.display().to_string()
}

#[test]
fn ingest_echoes_counts_and_round_trips() {
    let dir = tempfile::tempdir().unwrap();
    let input = dir.path().join("edges.tsv");
    fs::write(&input, "# src\tdst\ttime\na\tb\t0\nb\tc\t10\nc\ta\t20\t2.5\n").unwrap();
    let out = dir.path().join("snaps");
    let o = dynkd(&[
        "ingest",
        "--input",
        input.to_str().unwrap(),
        "--bucket-width",
        "10",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let text = stdout(&o);
    let counts: Vec<&str> = text.lines().skip(1).take(3).collect();
    assert_eq!(counts, ["0\t2\t1", "1\t2\t1", "2\t2\t1"]);
    assert!(out.join("manifest.json").exists());
    let hash = text
        .lines()
        .find(|l| l.starts_with("content_hash"))
        .unwrap()
        .to_string();

    let again = dir.path().join("again");
    let o = dynkd(&[
        "ingest",
        "--input",
        out.to_str().unwrap(),
        "--out",
        again.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(stdout(&o).contains(&hash));
}

#[test]
fn ingest_parse_error_exits_two_with_line() {
    let dir = tempfile::tempdir().unwrap();
    let input = dir.path().join("bad.tsv");
    fs::write(&input, "a\tb\t0\na\tb\tyesterday\n").unwrap();
    let o = dynkd(&[
        "ingest",
        "--input",
        input.to_str().unwrap(),
        "--bucket-count",
        "2",
        "--out",
        dir.path().join("o").to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains(":2:"), "{}", stderr(&o));
}

#[test]
fn run_writes_report_and_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), TINY);
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    for out in [&a, &b] {
        let o = dynkd(&["run", "--config", &cfg, "--out", out.to_str().unwrap()]);
        assert!(o.status.success(), "{}", stderr(&o));
    }
    let report = fs::read_to_string(a.join("report.csv")).unwrap();
    assert!(report.starts_with("model,time_step,auc_mean,auc_std,params,ratio_vs_teacher\n"));
    // steps with too few unobserved links are skipped for both models
    let rows = report.lines().count() - 1;
    assert!(rows >= 2 && rows.is_multiple_of(2), "{report}");
    assert_eq!(report, fs::read_to_string(b.join("report.csv")).unwrap());
    for f in [
        "training_log.csv",
        "teacher.json",
        "student.json",
        "manifest.json",
        "config.txt",
    ] {
        assert!(a.join(f).exists(), "{f}");
    }
}

#[test]
fn zero_gamma_matches_teacherless_student() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), TINY);
    let with = dir.path().join("with");
    let without = dir.path().join("without");
    let o = dynkd(&[
        "run",
        "--config",
        &cfg,
        "--gamma",
        "0",
        "--distill-mode",
        "kl-similarity",
        "--out",
        with.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let o = dynkd(&[
        "run",
        "--config",
        &cfg,
        "--no-teacher",
        "--out",
        without.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let student = |p: &Path| -> Vec<String> {
        fs::read_to_string(p.join("report.csv"))
            .unwrap()
            .lines()
            .filter(|l| l.starts_with("student,"))
            .map(|l| l.split(',').take(4).collect::<Vec<_>>().join(","))
            .collect()
    };
    assert_eq!(student(&with), student(&without));
}

#[test]
fn config_errors_exit_two() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), &format!("{TINY}colour = red\n"));
    let o = dynkd(&["run", "--config", &cfg, "--out", dir.path().join("o").to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("unknown key `colour`"));
    let cfg = write_config(dir.path(), TINY);
    let o = dynkd(&[
        "run",
        "--config",
        &cfg,
        "--set",
        "gamma=2",
        "--out",
        dir.path().join("o").to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn failing_stage_is_named() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), &format!("{TINY}m = 5\n"));
    let o = dynkd(&["run", "--config", &cfg, "--out", dir.path().join("o").to_str().unwrap()]);
    assert!(!o.status.success());
    assert!(stderr(&o).contains("loading data failed"), "{}", stderr(&o));
}

#[test]
fn sweep_emits_one_row_per_value() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), TINY);
    let out = dir.path().join("sweep");
    let o = dynkd(&[
        "sweep",
        "--config",
        &cfg,
        "--axis",
        "gamma",
        "--values",
        "0:0.2:0.1",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let csv = fs::read_to_string(out.join("sweep.csv")).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines[0], "axis_value,auc_mean,auc_std,params");
    let values: Vec<&str> = lines[1..].iter().map(|l| l.split(',').next().unwrap()).collect();
    assert_eq!(values, ["0.0", "0.1", "0.2"]);
    assert!(out.join("gamma=0.1").join("manifest.json").exists());

    let o = dynkd(&[
        "sweep",
        "--config",
        &cfg,
        "--axis",
        "depth",
        "--values",
        "1",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(2));
}
