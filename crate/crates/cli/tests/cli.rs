use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use adec_core::data::gaussian_blobs;
use adec_core::train::{read_log, TrainState};

const SMALL: &str = "\
# tiny networks so every command finishes in seconds
n_clusters = 3
embed_dim = 3
ae_hidden = 16,16
adv_hidden = 8
batch_size = 32
pretrain_iters = 40
max_iter = 40
update_interval = 10
block_len = 5
disc_pretrain_iters = 10
kmeans_restarts = 2
checkpoint_every = 0
diagnose_iters = 20
sgd_lr = 0.001
";

fn adec(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_adec"))
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) -> String {
    let out = adec(args);
    assert!(
        out.status.success(),
        "{args:?} failed:\n{}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

/// Labelled blobs table plus the small config, in `dir`.
fn setup(dir: &Path) -> (String, String) {
    let ds = gaussian_blobs(150, 6, 3, 6.0, 1).unwrap();
    let labels = ds.labels.as_ref().unwrap();
    let mut text = String::new();
    for i in 0..ds.len() {
        let row: Vec<String> = ds.x.row(i).iter().map(|v| v.to_string()).collect();
        text.push_str(&format!("{},{}\n", row.join(","), labels[i]));
    }
    let data = dir.join("blobs.csv");
    std::fs::write(&data, text).unwrap();
    let cfg = dir.join("small.cfg");
    std::fs::write(&cfg, SMALL).unwrap();
    (data.display().to_string(), cfg.display().to_string())
}

fn s(p: &Path) -> String {
    p.display().to_string()
}

#[test]
fn pipeline_pretrain_cluster_evaluate_plot() {
    let dir = tempfile::tempdir().unwrap();
    let (data, cfg) = setup(dir.path());
    let out = s(&dir.path().join("run"));
    let common = ["--config", &cfg, "--dataset", &data, "--dataset-kind", "table", "--out", &out];

    ok(&[&["pretrain"], &common[..]].concat());
    let run = PathBuf::from(&out);
    assert!(run.join("pretrain.ckpt").exists());
    assert!(!read_log(run.join("metrics_pretrain.csv")).unwrap().is_empty());

    let text = ok(&[&["cluster", "--mode", "idec"], &common[..]].concat());
    assert!(text.contains("idec:"), "{text}");
    let log = run.join("metrics_cluster_idec.csv");
    assert_eq!(read_log(&log).unwrap().last().unwrap().stage, "final");

    let report = ok(&[&["evaluate"], &common[..]].concat());
    assert!(report.contains("acc,"), "{report}");
    assert!(run.join("report.csv").exists());
    let emb = std::fs::read_to_string(run.join("embedding.csv")).unwrap();
    assert_eq!(emb.lines().count(), 151);

    let svg = ok(&["plot", &s(&log), "--columns", "acc,loss_G"]);
    assert!(Path::new(svg.trim()).exists());
}

#[test]
fn flags_override_config_file() {
    let dir = tempfile::tempdir().unwrap();
    let (data, cfg) = setup(dir.path());
    let out = s(&dir.path().join("run"));
    std::fs::write(&cfg, format!("{SMALL}seed = 1\nmode = dec\npretrain_iters = 3\n")).unwrap();
    ok(&[
        "pretrain", "--config", &cfg, "--dataset", &data, "--dataset-kind", "table", "--out", &out,
        "--seed", "5", "--mode", "adec", "--set", "lambda=0.25",
    ]);
    let st = TrainState::load(dir.path().join("run/pretrain.ckpt")).unwrap();
    assert_eq!(st.cfg.seed, 5);
    assert_eq!(st.cfg.mode.name(), "adec");
    assert_eq!(st.cfg.lambda, 0.25);
    assert_eq!(st.cfg.pretrain_iters, 3);
    assert_eq!(st.pretrain_iter, 3);
}

#[test]
fn deterministic_runs_write_identical_logs() {
    let dir = tempfile::tempdir().unwrap();
    let (data, cfg) = setup(dir.path());
    let mut logs = Vec::new();
    for name in ["a", "b"] {
        let out = s(&dir.path().join(name));
        let common = ["--config", &cfg, "--dataset", &data, "--dataset-kind", "table", "--out", &out, "--deterministic"];
        ok(&[&["pretrain"], &common[..]].concat());
        ok(&[&["cluster"], &common[..]].concat());
        logs.push(std::fs::read(dir.path().join(name).join("metrics_cluster_adec.csv")).unwrap());
    }
    assert_eq!(logs[0], logs[1]);
}

#[test]
fn sweep_and_diagnose_write_logs() {
    let dir = tempfile::tempdir().unwrap();
    let (data, cfg) = setup(dir.path());
    let out = s(&dir.path().join("run"));
    let common = ["--config", &cfg, "--dataset", &data, "--dataset-kind", "table", "--out", &out];
    ok(&[&["pretrain"], &common[..]].concat());

    let table = ok(&[&["sweep-gamma", "--gammas", "0.01,1"], &common[..]].concat());
    assert_eq!(table.lines().count(), 3, "{table}");
    assert!(dir.path().join("run/metrics_gamma_1e-2.csv").exists());
    assert!(dir.path().join("run/metrics_gamma_1e0.csv").exists());

    let text = ok(&[&["diagnose", "--mode", "idec"], &common[..]].concat());
    assert!(text.contains("mean delta_fd"), "{text}");
    let rows = read_log(dir.path().join("run/metrics_diagnose_idec.csv")).unwrap();
    assert!(rows.iter().any(|r| r.delta_fd.is_some()));
}

#[test]
fn idx_dataset_with_labels() {
    let data = concat!(env!("CARGO_MANIFEST_DIR"), "/../core/tests/data/mnist2k-images-idx3-ubyte");
    let labels = concat!(env!("CARGO_MANIFEST_DIR"), "/../core/tests/data/mnist2k-labels-idx1-ubyte");
    let dir = tempfile::tempdir().unwrap();
    let out = s(dir.path());
    ok(&[
        "pretrain", "--dataset", data, "--labels", labels, "--out", &out,
        "--set", "pretrain_iters=2", "--set", "ae_hidden=8", "--set", "adv_hidden=4", "--set", "batch_size=16",
    ]);
    let st = TrainState::load(dir.path().join("pretrain.ckpt")).unwrap();
    assert_eq!(st.n_samples, 2000);
}

#[test]
fn check_command_passes() {
    let text = ok(&["check", "--instances", "10"]);
    assert_eq!(text.lines().filter(|l| l.starts_with("ok")).count(), 4, "{text}");
}

#[test]
fn usage_errors_exit_nonzero() {
    let dir = tempfile::tempdir().unwrap();
    let log = dir.path().join("m.csv");
    adec_core::train::write_log(&log, &[]).unwrap();
    ok(&["plot", &s(&log), "--columns", "acc"]);
    let out = adec(&["plot", &s(&log), "--columns", "bogus"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("unknown column"));

    let out = adec(&["pretrain", "--out", &s(dir.path())]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("no dataset"));

    let out = adec(&["cluster", "--mode", "kmeans"]);
    assert_eq!(out.status.code(), Some(2));
}
