//! The `crossview` binary end to end on the small config.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use tempfile::TempDir;

fn quick_conf() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("configs/quick.conf")
}

fn crossview(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_crossview")).args(args).output().unwrap()
}

fn run_in(cmd: &str, out: &Path, extra: &[&str]) -> Output {
    let conf = quick_conf();
    let mut args = vec![cmd, "--config", conf.to_str().unwrap(), "--out", out.to_str().unwrap()];
    args.extend_from_slice(extra);
    crossview(&args)
}

fn read(path: impl AsRef<Path>) -> String {
    std::fs::read_to_string(path).unwrap()
}

fn report_distance(dir: &Path) -> f64 {
    let text = read(dir.join("report.csv"));
    let row = text.lines().nth(1).unwrap();
    row.rsplit(',').next().unwrap().parse().unwrap()
}

#[test]
fn generate_counts_rows_and_repeats_exactly() {
    let a = TempDir::new().unwrap();
    let b = TempDir::new().unwrap();
    for dir in [&a, &b] {
        let out = run_in("generate", dir.path(), &["--set", "data.identities=20"]);
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    }
    let text = read(a.path().join("dataset.csv"));
    assert_eq!(text.lines().count(), 20 * 2 * 4);
    assert_eq!(text, read(b.path().join("dataset.csv")));
}

#[test]
fn generate_rejects_one_view() {
    let dir = TempDir::new().unwrap();
    let out = run_in("generate", dir.path(), &["--set", "data.views=1"]);
    assert_eq!(out.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&out.stderr).contains("at least 2"));
}

#[test]
fn train_writes_checkpoints_logs_and_four_markers() {
    let dir = TempDir::new().unwrap();
    let out = run_in("train", dir.path(), &["--max-outer-iters", "2"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    for name in ["view0.ckpt", "view1.ckpt", "train_log.csv", "phases.csv", "report.csv", "cmc.csv"] {
        assert!(dir.path().join(name).exists(), "{name}");
    }
    assert!(!dir.path().join("public.ckpt").exists());
    assert_eq!(read(dir.path().join("phases.csv")).lines().count(), 1 + 4);
    let log = read(dir.path().join("train_log.csv"));
    assert!(log.starts_with("epoch,phase,loss_softmax_v0,loss_softmax_v1,cv_ec,cv_cl,joint,crossview_dist"));

    // eval on the same directory reproduces the report written by train
    let report = read(dir.path().join("report.csv"));
    let cmc = read(dir.path().join("cmc.csv"));
    let out = run_in("eval", dir.path(), &["--max-outer-iters", "2"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert_eq!(read(dir.path().join("report.csv")), report);
    assert_eq!(read(dir.path().join("cmc.csv")), cmc);
    let header = report.lines().next().unwrap();
    assert!(header.contains("rank1,rank5,rank10,rank20"));
}

#[test]
fn zero_lambdas_leave_views_further_apart() {
    let default = TempDir::new().unwrap();
    let zero = TempDir::new().unwrap();
    assert!(run_in("train", default.path(), &[]).status.success());
    assert!(run_in("train", zero.path(), &["--lambda1", "0", "--lambda2", "0"]).status.success());
    assert!(report_distance(zero.path()) > report_distance(default.path()));
}

#[test]
fn eval_without_checkpoints_names_the_path() {
    let dir = TempDir::new().unwrap();
    let out = run_in("eval", dir.path(), &[]);
    assert_eq!(out.status.code(), Some(5));
    assert!(String::from_utf8_lossy(&out.stderr).contains("view0.ckpt"));
}

#[test]
fn eval_rejects_mismatched_feature_width() {
    let dir = TempDir::new().unwrap();
    assert!(run_in("train", dir.path(), &[]).status.success());
    let out = run_in("eval", dir.path(), &["--set", "data.dim=7"]);
    assert_eq!(out.status.code(), Some(3), "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn gradcheck_passes_and_fails_on_corruption() {
    let dir = TempDir::new().unwrap();
    let out = run_in("gradcheck", dir.path(), &[]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stdout));
    let csv = read(dir.path().join("gradcheck.csv"));
    assert_eq!(csv.lines().count(), 1 + 9);

    let out = run_in("gradcheck", dir.path(), &["--set", "gradcheck.corrupt_cv_ec=0.001"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("cv_ec/embeddings"));
}

#[test]
fn sweep_has_one_row_per_lambda() {
    let dir = TempDir::new().unwrap();
    let out = run_in("sweep", dir.path(), &["--set", "train.learning_rate=3e-4"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let csv = read(dir.path().join("sweep.csv"));
    let rows: Vec<Vec<f64>> = csv
        .lines()
        .skip(1)
        .map(|l| l.split(',').map(|x| x.parse().unwrap()).collect())
        .collect();
    assert_eq!(rows.len(), 4);
    let zero = rows.iter().find(|r| r[0] == 0.0).unwrap()[3];
    assert!(rows.iter().filter(|r| r[0] != 0.0).all(|r| r[3] < zero));
}

#[test]
fn config_errors_exit_with_validation_code() {
    let dir = TempDir::new().unwrap();
    let bad = dir.path().join("bad.conf");
    std::fs::write(&bad, "[train]\nlearning_rat = 0.1\n").unwrap();
    let out = crossview(&["train", "--config", bad.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(3));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("bad.conf:2"), "{err}");
}

#[test]
fn training_from_csv_files() {
    let dir = TempDir::new().unwrap();
    assert!(run_in("generate", dir.path(), &[]).status.success());
    let csv = dir.path().join("dataset.csv");
    let out = run_in("train", dir.path(), &["--set", &format!("data.path={}", csv.display())]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(dir.path().join("view1.ckpt").exists());
}

#[test]
fn divergence_exits_with_numeric_code() {
    let dir = TempDir::new().unwrap();
    let out = run_in(
        "train",
        dir.path(),
        &["--set", "train.learning_rate=50", "--set", "train.momentum=0", "--lambda1", "100"],
    );
    assert_eq!(out.status.code(), Some(4), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(dir.path().join("view0.last_good.ckpt").exists());
}
