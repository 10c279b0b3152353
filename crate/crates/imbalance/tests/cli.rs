use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn bin() -> &'static str {
    env!("CARGO_BIN_EXE_imbalance")
}

fn run(dir: &Path, args: &[&str]) -> Output {
    Command::new(bin()).current_dir(dir).args(args).output().expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exit code")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn ok(o: Output) -> Output {
    assert_eq!(code(&o), 0, "stdout:\n{}\nstderr:\n{}", stdout(&o), stderr(&o));
    o
}

const DESK: &str = r#"
seed = 3
models = ["naive"]

[rolling]
in_sample_days = 90
out_of_sample_days = 10
train_days = 70
val_days = 20
qh = [1, 25, 49, 73]
bootstrap_draws = 200
max_epochs = 40
patience = 5

[synth]
n_days = 100
txn_rate = 0.3

[tuning]
gamlss_trials = 3
"#;

fn desk() -> (tempfile::TempDir, PathBuf) {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.toml");
    std::fs::write(&cfg, DESK).unwrap();
    ok(run(dir.path(), &["--config", "run.toml", "synth"]));
    (dir, cfg)
}

#[test]
fn synth_is_deterministic_with_the_right_row_count() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    ok(run(d, &["--seed", "1", "synth", "--days", "45", "--panel", "a.csv", "--transactions", "ta.csv"]));
    ok(run(d, &["--seed", "1", "synth", "--days", "45", "--panel", "b.csv", "--transactions", "tb.csv"]));
    let a = std::fs::read(d.join("a.csv")).unwrap();
    assert_eq!(a, std::fs::read(d.join("b.csv")).unwrap());
    assert_eq!(std::fs::read(d.join("ta.csv")).unwrap(), std::fs::read(d.join("tb.csv")).unwrap());
    let rows = String::from_utf8(a).unwrap().lines().count() - 1;
    assert_eq!(rows, 45 * 96);
    ok(run(d, &["--seed", "2", "synth", "--days", "45", "--panel", "c.csv", "--transactions", "tc.csv"]));
    assert_ne!(std::fs::read(d.join("a.csv")).unwrap(), std::fs::read(d.join("c.csv")).unwrap());
}

#[test]
fn configuration_errors_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let o = run(d, &["--seed", "1", "synth", "--days", "10"]);
    assert_eq!(code(&o), 2, "{}", stderr(&o));
    // no seed anywhere
    assert_eq!(code(&run(d, &["synth"])), 2);
    assert_eq!(code(&run(d, &["--seed", "1", "--frobnicate", "synth"])), 2);
    std::fs::write(d.join("bad.toml"), "seed = 1\nunknown_key = 4\n").unwrap();
    assert_eq!(code(&run(d, &["--config", "bad.toml", "synth"])), 2);
    assert_eq!(code(&run(d, &["--config", "missing.toml", "synth"])), 2);
    assert_eq!(code(&run(d, &["--seed", "1", "--models", "naive,bogus", "backtest"])), 2);
    assert_eq!(code(&run(d, &["--seed", "1", "--qh", "0,5", "backtest"])), 2);
    assert_eq!(code(&run(d, &["--seed", "1", "--jobs", "0", "--models", "naive", "backtest"])), 2);
    assert_eq!(code(&run(d, &["--help"])), 0);
}

#[test]
fn naive_desk_run_writes_forty_records() {
    let (dir, _) = desk();
    let d = dir.path();
    ok(run(d, &["--config", "run.toml", "backtest"]));
    let store = std::fs::read_to_string(d.join("out/store.csv")).unwrap();
    assert_eq!(store.lines().count() - 1, 40);
    assert!(store.starts_with("model_id,date,qh,mu_hat,q01,"));
    assert!(d.join("out/store.meta.json").exists());
}

#[test]
fn missing_tuning_file_is_actionable() {
    let (dir, _) = desk();
    let o = run(dir.path(), &["--config", "run.toml", "--models", "naive,probNN.t", "backtest"]);
    assert_eq!(code(&o), 1);
    let e = stderr(&o);
    assert!(e.contains("imbalance tune") && e.contains("probNN.t"), "{e}");
}

#[test]
fn missing_input_file_exits_1() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(dir.path(), &["--seed", "1", "--models", "naive", "backtest"]);
    assert_eq!(code(&o), 1);
    assert!(stderr(&o).contains("panel.csv"));
}

#[test]
fn features_export_and_cleaning_report() {
    let (dir, _) = desk();
    let d = dir.path();
    ok(run(d, &["--config", "run.toml", "--qh", "1,2", "features"]));
    let f = std::fs::read_to_string(d.join("out/features.csv")).unwrap();
    let mut lines = f.lines();
    let header: Vec<&str> = lines.next().unwrap().split(',').collect();
    assert_eq!(&header[..2], &["date", "qh"]);
    assert_eq!(header.len(), 2 + 947);
    assert_eq!(lines.count(), 99 * 2);
    let report: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(d.join("out/cleaning.json")).unwrap()).unwrap();
    assert!(report.is_array());
}

#[test]
fn backtest_with_tuning_and_full_report() {
    let (dir, _) = desk();
    let d = dir.path();
    let models = ["--models", "naive,gamlss.t"];
    let o = run(d, &["--config", "run.toml", models[0], models[1], "--qh", "1,49", "tune"]);
    ok(o);
    let tuned: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(d.join("out/tuned.json")).unwrap()).unwrap();
    assert_eq!(tuned["entries"].as_array().unwrap().len(), 2);
    let trials = std::fs::read_to_string(d.join("out/trials.jsonl")).unwrap();
    assert_eq!(trials.lines().count(), 6);

    // a second tune reuses every trial
    let again = ok(run(d, &["--config", "run.toml", models[0], models[1], "--qh", "1,49", "tune"]));
    assert!(stdout(&again).contains("ran 0 trials"), "{}", stdout(&again));
    assert_eq!(std::fs::read_to_string(d.join("out/tuned.json")).unwrap(), serde_json::to_string_pretty(&tuned).unwrap() + "\n");

    ok(run(d, &["--config", "run.toml", models[0], models[1], "--qh", "1,49", "backtest"]));
    let eval = ok(run(d, &["--config", "run.toml", "--json", "evaluate"]));
    assert!(stdout(&eval).contains("Combination"));
    let rep = d.join("out/reports");
    for name in ["scores", "pinball", "crps_qh", "dm"] {
        let csv = rep.join(format!("{name}.csv"));
        let json = rep.join(format!("{name}.json"));
        assert!(csv.exists() && json.exists(), "{name}");
        let rows: Vec<serde_json::Value> = serde_json::from_str(&std::fs::read_to_string(&json).unwrap()).unwrap();
        assert_eq!(rows.len(), std::fs::read_to_string(&csv).unwrap().lines().count() - 1, "{name}");
    }
    let scores = std::fs::read_to_string(rep.join("scores.csv")).unwrap();
    let ids: Vec<&str> = scores.lines().skip(1).map(|l| l.split(',').next().unwrap()).collect();
    assert_eq!(ids, vec!["naive", "gamlss.t", "Combination"]);
    let pinball = std::fs::read_to_string(rep.join("pinball.csv")).unwrap();
    for id in &ids {
        assert_eq!(pinball.lines().filter(|l| l.starts_with(&format!("{id},"))).count(), 99);
    }
    let dm = std::fs::read_to_string(rep.join("dm.csv")).unwrap();
    let dm_rows: Vec<Vec<&str>> = dm.lines().map(|l| l.split(',').collect()).collect();
    assert_eq!(dm_rows.len(), 4);
    for (i, row) in dm_rows.iter().skip(1).enumerate() {
        assert_eq!(row.len(), 4);
        assert_eq!(row[i + 1], "0.5");
    }
    assert!(std::fs::read_to_string(rep.join("summary.md")).unwrap().contains("| model |"));

    // regenerating the report gives identical bytes
    let snapshot: Vec<(String, Vec<u8>)> = files(&rep);
    ok(run(d, &["--config", "run.toml", "--json", "report"]));
    assert_eq!(files(&rep), snapshot);

    let dmt = ok(run(d, &["--config", "run.toml", "dm-test", "--a", "naive", "--b", "Combination"]));
    assert!(stdout(&dmt).contains("p-value (naive more accurate than Combination)"));
    assert!(stderr(&dmt).contains("fewer than 30 days"));
    let js = ok(run(d, &["--config", "run.toml", "--json", "dm-test", "--a", "naive", "--b", "gamlss.t"]));
    let r: serde_json::Value = serde_json::from_str(&stdout(&js)).unwrap();
    let (pa, pb) = (r["p_a_better"].as_f64().unwrap(), r["p_b_better"].as_f64().unwrap());
    assert!((pa + pb - 1.0).abs() < 1e-12);
    assert_eq!(code(&run(d, &["--config", "run.toml", "dm-test", "--a", "naive", "--b", "lasso"])), 2);
}

fn files(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut out: Vec<(String, Vec<u8>)> = std::fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .map(|p| (p.file_name().unwrap().to_string_lossy().into_owned(), std::fs::read(&p).unwrap()))
        .collect();
    out.sort();
    out
}

#[test]
fn single_model_report_omits_dm() {
    let (dir, _) = desk();
    let d = dir.path();
    ok(run(d, &["--config", "run.toml", "backtest"]));
    let o = ok(run(d, &["--config", "run.toml", "evaluate"]));
    assert!(stderr(&o).contains("DM matrix omitted"));
    assert!(!d.join("out/reports/dm.csv").exists());
    assert!(!d.join("out/reports/scores.json").exists());
}

#[test]
fn reruns_and_job_counts_give_identical_stores() {
    let (dir, _) = desk();
    let d = dir.path();
    let args = |jobs: &'static str, store: &'static str| {
        vec!["--config", "run.toml", "--models", "naive,lasso", "--qh", "1,49", "--jobs", jobs, "backtest", "--store", store]
    };
    ok(run(d, &args("1", "s1.csv")));
    ok(run(d, &args("3", "s3.csv")));
    ok(run(d, &args("3", "s3b.csv")));
    let s1 = std::fs::read(d.join("s1.csv")).unwrap();
    assert_eq!(s1, std::fs::read(d.join("s3.csv")).unwrap());
    assert_eq!(s1, std::fs::read(d.join("s3b.csv")).unwrap());
    assert_eq!(std::fs::read(d.join("s1.meta.json")).unwrap(), std::fs::read(d.join("s3.meta.json")).unwrap());
}

#[test]
fn append_mode_keeps_existing_records() {
    let (dir, _) = desk();
    let d = dir.path();
    ok(run(d, &["--config", "run.toml", "--qh", "1", "backtest"]));
    let first = std::fs::read_to_string(d.join("out/store.csv")).unwrap();
    let o = ok(run(d, &["--config", "run.toml", "--qh", "1,25", "backtest", "--append"]));
    assert!(stdout(&o).contains("20 forecasts written") && stdout(&o).contains("(10 new)"), "{}", stdout(&o));
    let merged = std::fs::read_to_string(d.join("out/store.csv")).unwrap();
    for line in first.lines() {
        assert!(merged.lines().any(|l| l == line));
    }
}
