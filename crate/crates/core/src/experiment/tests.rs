use super::*;

fn tiny() -> ExperimentConfig {
    ExperimentConfig::parse(
        "sbm.n = 40\nsbm.p_in = 0.3\nsbm.p_out = 0.02\nsbm.snapshots = 5\nm = 3\n\
         teacher.d = 8\nteacher.h = 2\nteacher.g = 2\nstudent.d = 4\nstudent.h = 1\nstudent.g = 1\n\
         epochs = 2\nlr = 0.01\nwalk_len = 8\nwalks_per_node = 2\ncontext = 2\n\
         anchors_per_batch = 16\ncandidate_set_size = 8\neval_seeds = 0,1\n",
    )
    .unwrap()
}

#[test]
fn run_writes_every_output() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny();
    let run = run_experiment(&cfg, Some(dir.path())).unwrap();
    assert_eq!(run.steps.len(), 2);
    for f in [
        "report.csv",
        "training_log.csv",
        "teacher.json",
        "student.json",
        "config.txt",
        "manifest.json",
    ] {
        assert!(dir.path().join(f).exists(), "{f}");
    }
    let reloaded = ExperimentConfig::load(dir.path().join("config.txt")).unwrap();
    assert_eq!(reloaded, cfg);
    let manifest: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["input_hash"], run.input_hash.as_str());
    let csv = fs::read_to_string(dir.path().join("report.csv")).unwrap();
    assert!(csv.starts_with(crate::eval::REPORT_HEADER));
    for s in &run.steps {
        assert!(s.teacher_params.unwrap() > s.student_params);
    }
}

#[test]
fn teacherless_run_reports_nan_ratio() {
    let mut cfg = tiny();
    cfg.set("use_teacher", "false").unwrap();
    let run = run_experiment(&cfg, None).unwrap();
    assert!(run.report.rows_for("teacher").next().is_none());
    assert!(run.report.rows_for("student").all(|r| r.ratio_vs_teacher.is_nan()));
}

#[test]
fn failures_name_the_stage() {
    let mut cfg = tiny();
    cfg.set("m", "5").unwrap();
    let err = run_experiment(&cfg, None).unwrap_err();
    assert!(err.to_string().starts_with("loading data failed"), "{err}");
}

#[test]
fn sweep_reuses_teacher_and_flushes_rows() {
    let dir = tempfile::tempdir().unwrap();
    let values: Vec<String> = ["0", "0.5"].iter().map(|s| s.to_string()).collect();
    let rows = run_sweep(&tiny(), SweepAxis::Gamma, &values, dir.path(), 2).unwrap();
    assert_eq!(rows.len(), 2);
    assert_eq!(rows[0].axis_value, "0");
    let csv = fs::read_to_string(dir.path().join("sweep.csv")).unwrap();
    assert_eq!(csv.lines().count(), 3);
    let t0 = fs::read_to_string(dir.path().join("gamma=0/teacher.json")).unwrap();
    let t1 = fs::read_to_string(dir.path().join("gamma=0.5/teacher.json")).unwrap();
    assert_eq!(t0, t1);
}

#[test]
fn axes_touch_only_the_student() {
    let cfg = tiny();
    let c = apply_axis(&cfg, SweepAxis::Heads, "4").unwrap();
    assert_eq!((c.student.h, c.student.g), (4, 4));
    assert_eq!(c.teacher, cfg.teacher);
    let c = apply_axis(&cfg, SweepAxis::EmbedDim, "8").unwrap();
    assert_eq!(c.student_model().k, 8);
    let c = apply_axis(&cfg, SweepAxis::Window, "3").unwrap();
    assert_eq!(c.student_model().l, 3);
    assert!(apply_axis(&cfg, SweepAxis::Heads, "3").is_err());
    assert!("depth".parse::<SweepAxis>().is_err());
}
