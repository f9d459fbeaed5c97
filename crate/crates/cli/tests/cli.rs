use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use attn_align::analytic::{curve_from_csv, reports_from_csv, QQReport};
use attn_align::calibration::{grid_from_csv, tau_grid, CalibrationResult};
use attn_align::encoder::{init_encoder, EncoderConfig};
use attn_align::rpe_bias::profile_from_csv;
use attn_align::tasks::needle_points_from_csv;
use tempfile::TempDir;

fn cli(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_attn-align"))
        .args(args)
        .env_remove("ATTN_ALIGN_SEED")
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn ok(args: &[&str]) -> String {
    let o = cli(args);
    assert!(o.status.success(), "{args:?} failed: {}", stderr(&o));
    stdout(&o)
}

fn path(dir: &TempDir, name: &str) -> PathBuf {
    dir.path().join(name)
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// A seeded toy model plus short (128) and long (1024) sequence files.
fn toy_workspace() -> (TempDir, PathBuf, PathBuf, PathBuf) {
    let dir = TempDir::new().unwrap();
    let (model, short, long) = (
        path(&dir, "model.json"),
        path(&dir, "short.jsonl"),
        path(&dir, "long.jsonl"),
    );
    ok(&["init", "--seed", "1", "--out", s(&model)]);
    ok(&[
        "gen",
        "--length",
        "128",
        "--count",
        "4",
        "--seed",
        "1",
        "--out",
        s(&short),
    ]);
    ok(&[
        "gen",
        "--length",
        "1024",
        "--count",
        "2",
        "--seed",
        "2",
        "--out",
        s(&long),
    ]);
    (dir, model, short, long)
}

#[test]
fn calibrate_writes_result_and_grid() {
    let (dir, model, short, long) = toy_workspace();
    let out = path(&dir, "run.json");
    ok(&[
        "calibrate",
        "--model",
        s(&model),
        "--short-seqs",
        s(&short),
        "--long-seqs",
        s(&long),
        "--mode",
        "max",
        "--out",
        s(&out),
    ]);
    let result = CalibrationResult::from_json(&std::fs::read_to_string(&out).unwrap()).unwrap();
    assert!(tau_grid().contains(&result.tau_ex));
    assert!(result.tau_ex < 1.0);
    assert_eq!((result.l_tr, result.l_ex), (128, 1024));
    let grid =
        grid_from_csv(&std::fs::read_to_string(path(&dir, "run.grid.csv")).unwrap()).unwrap();
    assert_eq!(grid.len(), 11);
    assert_eq!(grid[0].tau, 1.0);
}

#[test]
fn calibrate_rejects_bad_input_with_usage_code() {
    let (dir, model, short, long) = toy_workspace();
    let o = cli(&[
        "calibrate",
        "--model",
        s(&model),
        "--short-seqs",
        s(&short),
        "--long-seqs",
        s(&short),
        "--mode",
        "ent",
    ]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("must exceed"), "{}", stderr(&o));

    let o = cli(&[
        "calibrate",
        "--model",
        s(&model),
        "--short-seqs",
        s(&short),
        "--long-seqs",
        s(&long),
        "--mode",
        "median",
    ]);
    assert_eq!(o.status.code(), Some(2));

    let missing = path(&dir, "nope.json");
    let o = cli(&[
        "calibrate",
        "--model",
        s(&missing),
        "--short-seqs",
        s(&short),
        "--long-seqs",
        s(&long),
        "--mode",
        "max",
    ]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("nope.json"));
}

#[test]
fn predict_tau_log_column() {
    let table = ok(&[
        "predict-tau",
        "--l-tr",
        "512",
        "--lengths",
        "1024,2048,4096,8192,15000",
        "--sigma",
        "1",
        "--pmax-tr",
        "0.3",
    ]);
    let rows = curve_from_csv(&table).unwrap();
    let logs: Vec<f64> = rows.iter().map(|r| r.tau_log.unwrap()).collect();
    for (got, want) in logs.iter().zip([0.90, 0.82, 0.75, 0.69, 0.65]) {
        assert!((got - want).abs() <= 0.005, "{got} vs {want}");
    }

    let table = ok(&[
        "predict-tau",
        "--l-tr",
        "512",
        "--lengths",
        "1700,3300,5000",
        "--sigma",
        "1",
        "--lmax",
        "4",
    ]);
    let rows = curve_from_csv(&table).unwrap();
    for (row, want) in rows.iter().zip([0.84, 0.77, 0.73]) {
        assert!((row.tau_log.unwrap() - want).abs() <= 0.005);
    }

    let table = ok(&[
        "predict-tau",
        "--l-tr",
        "512",
        "--lengths",
        "512",
        "--sigma",
        "1",
        "--pmax-tr",
        "0.3",
    ]);
    assert!(table.lines().any(|l| l == "512,1,1,1"), "{table}");
}

#[test]
fn predict_tau_leaves_rootless_cells_empty() {
    let table = ok(&[
        "predict-tau",
        "--l-tr",
        "512",
        "--lengths",
        "2048",
        "--sigma",
        "2",
        "--pmax-tr",
        "0.3",
    ]);
    let row = curve_from_csv(&table).unwrap()[0];
    assert_eq!(row.tau_prop1, None);
    assert!(row.tau_prop2.is_some() && row.tau_log.is_some());
    assert!(table.lines().nth(1).unwrap().starts_with("2048,,"));
}

#[test]
fn predict_tau_needs_fit_inputs() {
    let o = cli(&["predict-tau", "--l-tr", "512", "--lengths", "1024"]);
    assert_eq!(o.status.code(), Some(2));
    let o = cli(&[
        "predict-tau",
        "--l-tr",
        "512",
        "--lengths",
        "1024",
        "--sigma",
        "1",
    ]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn analyze_feeds_predict_tau() {
    let (dir, model, short, long) = toy_workspace();
    let report = path(&dir, "analysis.csv");
    ok(&[
        "analyze",
        "--model",
        s(&model),
        "--seqs",
        s(&short),
        "--seqs",
        s(&long),
        "--out",
        s(&report),
    ]);
    let rows = reports_from_csv(&std::fs::read_to_string(&report).unwrap()).unwrap();
    assert_eq!(
        rows.iter().map(|r| r.length).collect::<Vec<_>>(),
        [128, 1024]
    );
    assert!(rows[1].entropy > rows[0].entropy);
    assert!(rows[1].p_max < rows[0].p_max);

    let curve = curve_from_csv(&ok(&["predict-tau", "--analysis", s(&report)])).unwrap();
    assert_eq!(curve.len(), 2);
    assert_eq!(curve[0].tau_log, Some(1.0));
    assert!(curve[1].tau_prop2.unwrap() < 1.0);
}

#[test]
fn analyze_zeroed_model_is_uniform() {
    let dir = TempDir::new().unwrap();
    let mut weights = init_encoder(&EncoderConfig::with_seed(4)).unwrap();
    weights.zero_attention_logits();
    let model = path(&dir, "flat.json");
    std::fs::write(&model, weights.to_json().unwrap()).unwrap();
    let seqs = path(&dir, "seqs.jsonl");
    ok(&["gen", "--length", "64", "--count", "2", "--out", s(&seqs)]);
    let rows =
        reports_from_csv(&ok(&["analyze", "--model", s(&model), "--seqs", s(&seqs)])).unwrap();
    assert!((rows[0].p_max - 1.0 / 64.0).abs() < 1e-6);
    assert!((rows[0].entropy - 64f64.ln()).abs() < 1e-5);

    let empty = path(&dir, "empty.jsonl");
    std::fs::write(&empty, "").unwrap();
    let o = cli(&["analyze", "--model", s(&model), "--seqs", s(&empty)]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn oracle_exit_codes() {
    let o = cli(&["oracle"]);
    assert_eq!(o.status.code(), Some(0), "{}", stdout(&o));
    assert_eq!(
        stdout(&o).lines().filter(|l| l.starts_with("PASS")).count(),
        5
    );

    let o = cli(&["oracle", "--sabotage-entropy"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stdout(&o).contains("FAIL entropy approximation"));
    assert!(stderr(&o).contains("entropy approximation"));

    let o = cli(&["oracle", "--samples", "100"]);
    assert!(stderr(&o).contains("warning"));
}

#[test]
fn demo_round_trips() {
    let text = ok(&["demo", "--lengths", "64,1024", "--gap", "4", "--sigma", "1"]);
    let points = needle_points_from_csv(&text).unwrap();
    assert_eq!(points.len(), 4);
    assert!(points[3].p_needle > points[1].p_needle);
    assert_eq!(
        text,
        ok(&["demo", "--lengths", "64,1024", "--gap", "4", "--sigma", "1"])
    );
}

#[test]
fn bucket_table_and_qq_round_trip() {
    let (dir, model, short, _) = toy_workspace();
    let profile = profile_from_csv(&ok(&[
        "bucket-table",
        "--model",
        s(&model),
        "--query",
        "3",
        "--length",
        "40",
    ]))
    .unwrap();
    assert_eq!(profile.len(), 40);
    let o = cli(&[
        "bucket-table",
        "--model",
        s(&model),
        "--query",
        "40",
        "--length",
        "40",
    ]);
    assert_eq!(o.status.code(), Some(2));

    let qq = path(&dir, "qq.csv");
    ok(&["qq", "--samples", "2000", "--out", s(&qq)]);
    let report = QQReport::from_csv(&std::fs::read_to_string(&qq).unwrap()).unwrap();
    assert_eq!(report.points.len(), 2000);
    assert!(report.linearity > 0.99);
    ok(&["qq", "--model", s(&model), "--seqs", s(&short)]);
}

#[test]
fn seed_falls_back_to_environment() {
    let with_flag = ok(&["gen", "--length", "16", "--count", "2", "--seed", "9"]);
    let env = Command::new(env!("CARGO_BIN_EXE_attn-align"))
        .args(["gen", "--length", "16", "--count", "2"])
        .env("ATTN_ALIGN_SEED", "9")
        .output()
        .unwrap();
    assert_eq!(with_flag, stdout(&env));
    assert_ne!(with_flag, ok(&["gen", "--length", "16", "--count", "2"]));
}
