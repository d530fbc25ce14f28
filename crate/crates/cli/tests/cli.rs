//! End-to-end tests of the `xfire` binary: every subcommand, the guard
//! rails, and the determinism contract, all at toy scale.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output, Stdio};

use tempfile::TempDir;
use xfire_cli::config::RunConfig;
use xfire_core::eval::EvalReport;
use xfire_core::models::{save_checkpoint, Checkpoint, CheckpointPayload, LstmModel};
use xfire_core::sim::NormStats;

fn xfire() -> Command {
    Command::new(env!("CARGO_BIN_EXE_xfire"))
}

fn run_ok(cmd: &mut Command) -> Output {
    let out = cmd.output().expect("spawning xfire");
    assert!(
        out.status.success(),
        "command failed\nstdout: {}\nstderr: {}",
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr),
    );
    out
}

fn exit_code(out: &Output) -> i32 {
    out.status.code().expect("no exit code")
}

fn stderr_of(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

/// 12 instances of 8 servers x 65 samples; two-epoch training everywhere.
fn tiny_config(dir: &Path) -> PathBuf {
    let mut config = RunConfig::default();
    config.scenario.n_servers = 8;
    config.scenario.n_attacked = 8;
    config.scenario.n_instances = 12;
    config.scenario.pre_len = 30;
    config.scenario.warmup_len = 15;
    config.scenario.plateau_len = 20;
    config.training.autoencoder.max_epochs = 2;
    config.training.cnn.max_epochs = 2;
    config.training.cnn.learning_rate = 1e-4;
    config.training.lstm.max_epochs = 2;
    config.training.ae_train_window_cap = 300;
    config.training.ae_val_window_cap = 80;
    config.training.forest_window_cap = 200;
    config.training.forest_trees = 15;
    let path = dir.join("tiny.json");
    fs::write(&path, serde_json::to_string_pretty(&config).unwrap()).unwrap();
    path
}

fn simulate(config: &Path, out: &Path, extra: &[&str]) {
    run_ok(
        xfire()
            .arg("simulate")
            .arg("--config")
            .arg(config)
            .arg("--seed")
            .arg("5")
            .arg("--out")
            .arg(out)
            .args(extra),
    );
}

fn train(config: &Path, model: &str, data: &Path, out: &Path, extra: &[&str]) {
    run_ok(
        xfire()
            .arg("train")
            .arg(model)
            .arg("--config")
            .arg(config)
            .arg("--data")
            .arg(data)
            .arg("--out")
            .arg(out)
            .args(extra),
    );
}

#[test]
fn simulate_is_deterministic_across_thread_counts() {
    let tmp = TempDir::new().unwrap();
    let config = tiny_config(tmp.path());
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));

    run_ok(
        xfire()
            .arg("simulate")
            .args(["--config"])
            .arg(&config)
            .args(["--seed", "5", "--out"])
            .arg(&a)
            .env("XFIRE_THREADS", "1"),
    );
    run_ok(
        xfire()
            .arg("simulate")
            .args(["--config"])
            .arg(&config)
            .args(["--seed", "5", "--out"])
            .arg(&b)
            .env("XFIRE_THREADS", "4"),
    );

    let manifest_a = fs::read(a.join("manifest.json")).unwrap();
    let manifest_b = fs::read(b.join("manifest.json")).unwrap();
    assert_eq!(manifest_a, manifest_b);
    for i in [0usize, 7, 11] {
        assert_eq!(
            fs::read(xfire_core::io::instance_path(&a, i)).unwrap(),
            fs::read(xfire_core::io::instance_path(&b, i)).unwrap(),
            "instance {i} differs across thread counts",
        );
    }
    assert!(a.join("run_config.json").exists());
}

#[test]
fn simulate_can_export_one_instance_as_csv() {
    let tmp = TempDir::new().unwrap();
    let config = tiny_config(tmp.path());
    let data = tmp.path().join("data");
    simulate(&config, &data, &["--export-csv", "3"]);
    let csv = fs::read_to_string(data.join("instance_00003.csv")).unwrap();
    assert!(csv.starts_with("t,label,s0"));
    // 65 samples plus the header.
    assert_eq!(csv.lines().count(), 66);
}

#[test]
fn train_lstm_writes_checkpoint_and_monotone_curve() {
    let tmp = TempDir::new().unwrap();
    let config = tiny_config(tmp.path());
    let data = tmp.path().join("data");
    simulate(&config, &data, &[]);

    let out = tmp.path().join("lstm");
    train(&config, "lstm", &data, &out, &[]);
    assert!(out.join("lstm.xfck").exists());

    let curve = fs::read_to_string(out.join("lstm_curve.csv")).unwrap();
    let mut lines = curve.lines();
    assert_eq!(lines.next(), Some("epoch,train_loss,val_loss"));
    let epochs: Vec<usize> = lines
        .map(|l| l.split(',').next().unwrap().parse().unwrap())
        .collect();
    assert!(!epochs.is_empty());
    assert!(
        epochs.windows(2).all(|w| w[1] > w[0]),
        "epochs not strictly increasing: {epochs:?}",
    );
}

#[test]
fn train_rf_without_ae_checkpoint_is_a_dependency_error() {
    let tmp = TempDir::new().unwrap();
    let config = tiny_config(tmp.path());
    let data = tmp.path().join("data");
    simulate(&config, &data, &[]);

    let out = xfire()
        .arg("train")
        .arg("rf")
        .arg("--config")
        .arg(&config)
        .arg("--data")
        .arg(&data)
        .arg("--out")
        .arg(tmp.path().join("rf"))
        .output()
        .unwrap();
    assert_eq!(exit_code(&out), 2);
    assert!(stderr_of(&out).contains("--ae-checkpoint"));
}

#[test]
fn full_pipeline_eval_writes_reports_and_sweep() {
    let tmp = TempDir::new().unwrap();
    let config = tiny_config(tmp.path());
    let data = tmp.path().join("data");
    simulate(&config, &data, &[]);

    let (ae, rf, cnn, lstm) = (
        tmp.path().join("ae"),
        tmp.path().join("rf"),
        tmp.path().join("cnn"),
        tmp.path().join("lstm"),
    );
    train(&config, "ae", &data, &ae, &[]);
    train(
        &config,
        "rf",
        &data,
        &rf,
        &["--ae-checkpoint", ae.join("ae.xfck").to_str().unwrap()],
    );
    train(&config, "cnn", &data, &cnn, &[]);
    train(&config, "lstm", &data, &lstm, &[]);

    let eval_dir = tmp.path().join("eval");
    let out = run_ok(
        xfire()
            .arg("eval")
            .arg("--config")
            .arg(&config)
            .arg("--checkpoint")
            .arg(lstm.join("lstm.xfck"))
            .arg("--checkpoint")
            .arg(cnn.join("cnn.xfck"))
            .arg("--checkpoint")
            .arg(rf.join("ae_rf.xfck"))
            .arg("--data")
            .arg(&data)
            .arg("--out")
            .arg(&eval_dir)
            .args(["--buffer", "1..3"]),
    );

    let report: EvalReport =
        serde_json::from_str(&fs::read_to_string(eval_dir.join("report.json")).unwrap()).unwrap();
    assert_eq!(report.rows.len(), 3);
    assert!(report.rows.iter().all(|r| r.condition == "8/8"));
    assert_eq!(report.rows[0].model, "lstm");
    assert!(report.rows[0].events.is_some());
    assert_eq!(report.rows[2].model, "ae_rf");
    assert!(report.rows[2].auc.is_some());

    let markdown = fs::read_to_string(eval_dir.join("report.md")).unwrap();
    assert!(markdown.contains("| condition | model | unit |"));
    let roc = fs::read_to_string(eval_dir.join("roc_points.csv")).unwrap();
    assert!(roc.starts_with("fpr,tpr"));
    let tradeoff = fs::read_to_string(eval_dir.join("tradeoff.csv")).unwrap();
    assert_eq!(tradeoff.lines().count(), 4, "header plus capacities 1..3");
    assert!(String::from_utf8_lossy(&out.stdout).contains("Buffer sweep"));
}

#[test]
fn eval_guards_leakage_and_condition_mismatch() {
    let tmp = TempDir::new().unwrap();
    let config = tiny_config(tmp.path());
    let data = tmp.path().join("data");
    simulate(&config, &data, &[]);
    let lstm = tmp.path().join("lstm");
    train(&config, "lstm", &data, &lstm, &[]);
    let checkpoint = lstm.join("lstm.xfck");

    // Scoring the training split needs an explicit override.
    let leak = xfire()
        .arg("eval")
        .arg("--config")
        .arg(&config)
        .arg("--checkpoint")
        .arg(&checkpoint)
        .arg("--data")
        .arg(&data)
        .arg("--out")
        .arg(tmp.path().join("leak"))
        .args(["--split", "train"])
        .output()
        .unwrap();
    assert_eq!(exit_code(&leak), 2);
    assert!(stderr_of(&leak).contains("leaks training data"));

    run_ok(
        xfire()
            .arg("eval")
            .arg("--config")
            .arg(&config)
            .arg("--checkpoint")
            .arg(&checkpoint)
            .arg("--data")
            .arg(&data)
            .arg("--out")
            .arg(tmp.path().join("leak-ok"))
            .args(["--split", "train", "--allow-leakage"]),
    );

    // A checkpoint trained under 8/8 refuses a 4/8 dataset.
    let other = tmp.path().join("other");
    simulate(&config, &other, &["--attacked", "4"]);
    let mismatch = xfire()
        .arg("eval")
        .arg("--config")
        .arg(&config)
        .arg("--checkpoint")
        .arg(&checkpoint)
        .arg("--data")
        .arg(&other)
        .arg("--out")
        .arg(tmp.path().join("mismatch"))
        .output()
        .unwrap();
    assert_eq!(exit_code(&mismatch), 2);
    assert!(stderr_of(&mismatch).contains("does not match"));
}

#[test]
fn eval_rejects_a_bare_autoencoder() {
    let tmp = TempDir::new().unwrap();
    let config = tiny_config(tmp.path());
    let data = tmp.path().join("data");
    simulate(&config, &data, &[]);
    let ae = tmp.path().join("ae");
    train(&config, "ae", &data, &ae, &[]);

    let out = xfire()
        .arg("eval")
        .arg("--config")
        .arg(&config)
        .arg("--checkpoint")
        .arg(ae.join("ae.xfck"))
        .arg("--data")
        .arg(&data)
        .arg("--out")
        .arg(tmp.path().join("eval"))
        .output()
        .unwrap();
    assert_eq!(exit_code(&out), 2);
    assert!(stderr_of(&out).contains("train rf"));
}

/// An untrained model's zero head scores every sample exactly 0.5, which
/// thresholds to a positive — handy for driving the smoothing buffer.
fn untrained_lstm_checkpoint(path: &Path, width: usize) {
    let model = LstmModel::<f32>::new(width, 4, 3).unwrap();
    let checkpoint = Checkpoint {
        condition: format!("{width}/{width}"),
        config: serde_json::json!({}),
        norm_stats: Some(NormStats {
            global_min: 0.0,
            global_max: 200.0,
        }),
        payload: CheckpointPayload::Lstm(model),
    };
    save_checkpoint(path, &checkpoint).unwrap();
}

#[test]
fn detect_streams_decisions_warns_and_signals_events() {
    let tmp = TempDir::new().unwrap();
    let checkpoint = tmp.path().join("toy.xfck");
    untrained_lstm_checkpoint(&checkpoint, 3);

    let input = tmp.path().join("rows.csv");
    fs::write(
        &input,
        "100,101,99\nnot,numbers,here\n100,101\n102,98,100\n105,103,101\n",
    )
    .unwrap();

    // Three valid rows fill a capacity-3 buffer of all-positive decisions.
    let out = xfire()
        .arg("detect")
        .arg("--checkpoint")
        .arg(&checkpoint)
        .arg("--input")
        .arg(&input)
        .args(["--buffer", "3"])
        .output()
        .unwrap();
    assert_eq!(exit_code(&out), 0, "an event must set exit code 0");
    let stdout = String::from_utf8_lossy(&out.stdout);
    let decisions: Vec<serde_json::Value> = stdout
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect();
    assert_eq!(decisions.len(), 3);
    assert_eq!(decisions[0]["t"], 0);
    assert_eq!(decisions[0]["raw"], 1);
    assert_eq!(decisions[0]["smoothed"], 0);
    assert_eq!(decisions[2]["smoothed"], 1);
    assert!((decisions[1]["p"].as_f64().unwrap() - 0.5).abs() < 1e-12);
    let stderr = stderr_of(&out);
    assert!(stderr.contains("warning: line 2"));
    assert!(stderr.contains("warning: line 3"));
    assert!(stderr.contains("event:"));

    // A buffer longer than the stream never fires: exit code 1.
    let quiet = xfire()
        .arg("detect")
        .arg("--checkpoint")
        .arg(&checkpoint)
        .arg("--input")
        .arg(&input)
        .args(["--buffer", "9"])
        .output()
        .unwrap();
    assert_eq!(exit_code(&quiet), 1);
}

#[test]
fn detect_requires_an_lstm_checkpoint() {
    let tmp = TempDir::new().unwrap();
    let config = tiny_config(tmp.path());
    let data = tmp.path().join("data");
    simulate(&config, &data, &[]);
    let cnn = tmp.path().join("cnn");
    train(&config, "cnn", &data, &cnn, &[]);

    let out = xfire()
        .arg("detect")
        .arg("--checkpoint")
        .arg(cnn.join("cnn.xfck"))
        .arg("--input")
        .arg(data.join("manifest.json"))
        .output()
        .unwrap();
    assert_eq!(exit_code(&out), 2);
    assert!(stderr_of(&out).contains("expected lstm"));
}

#[test]
fn gradcheck_passes_clean_and_fails_corrupted() {
    let clean = xfire()
        .args(["gradcheck", "--trials", "1", "--seed", "41"])
        .stdin(Stdio::null())
        .output()
        .unwrap();
    assert_eq!(exit_code(&clean), 0);
    let stdout = String::from_utf8_lossy(&clean.stdout);
    assert!(stdout.contains("dense"));
    assert!(stdout.contains("lstm_step"));
    assert!(!stdout.contains("FAIL"));

    let corrupt = xfire()
        .args([
            "gradcheck",
            "--trials",
            "1",
            "--seed",
            "41",
            "--corrupt",
            "dense",
        ])
        .output()
        .unwrap();
    assert_eq!(exit_code(&corrupt), 1);
    assert!(String::from_utf8_lossy(&corrupt.stdout).contains("FAIL"));

    let unsupported = xfire()
        .args(["gradcheck", "--corrupt", "conv2d"])
        .output()
        .unwrap();
    assert_eq!(exit_code(&unsupported), 2);
}

#[test]
fn commands_never_mutate_their_input_dataset() {
    let tmp = TempDir::new().unwrap();
    let config = tiny_config(tmp.path());
    let data = tmp.path().join("data");
    simulate(&config, &data, &[]);

    let snapshot = |dir: &Path| -> Vec<(String, Vec<u8>)> {
        let mut files = Vec::new();
        let mut stack = vec![dir.to_path_buf()];
        while let Some(d) = stack.pop() {
            for entry in fs::read_dir(&d).unwrap() {
                let path = entry.unwrap().path();
                if path.is_dir() {
                    stack.push(path);
                } else {
                    files.push((
                        path.strip_prefix(dir).unwrap().display().to_string(),
                        fs::read(&path).unwrap(),
                    ));
                }
            }
        }
        files.sort();
        files
    };
    let before = snapshot(&data);

    let lstm = tmp.path().join("lstm");
    train(&config, "lstm", &data, &lstm, &[]);
    run_ok(
        xfire()
            .arg("eval")
            .arg("--config")
            .arg(&config)
            .arg("--checkpoint")
            .arg(lstm.join("lstm.xfck"))
            .arg("--data")
            .arg(&data)
            .arg("--out")
            .arg(tmp.path().join("eval")),
    );

    assert_eq!(before, snapshot(&data), "input dataset was modified");
}
