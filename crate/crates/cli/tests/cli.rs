//! End-to-end tests of the `mmft` binary: the documented exit codes, file
//! outputs, and byte-level reproducibility of every report.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn mmft() -> Command {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_mmft"));
    // Each test controls its own thread count.
    cmd.env_remove("MMFT_THREADS");
    cmd
}

fn run(cmd: &mut Command) -> Output {
    cmd.output().expect("spawn mmft")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exit code")
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn stdout(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

/// Small dataset + config that train in well under a second.
fn write_tiny_config(dir: &Path) -> PathBuf {
    let path = dir.join("tiny.json");
    std::fs::write(
        &path,
        r#"{
            "d_model": 4, "layers": 1, "heads": 1, "ff_mult": 2,
            "lookback": 4, "wavelet_levels": 1, "tech_lookback": 8,
            "conv_channels": 3, "text_vocab": 64, "text_max_len": 6,
            "macro_lookback": 4, "macro_hidden": 4,
            "gat_layers": 1, "gat_heads": 1, "gat_hidden": 4,
            "learning_rate": 0.001, "epochs": 1, "batch_size": 16,
            "class_horizon": 2, "window_stride": 4, "seed": 7
        }"#,
    )
    .expect("write config");
    path
}

fn gen_tiny(data_dir: &Path) {
    let out = run(mmft()
        .args(["gen", "--out-dir"])
        .arg(data_dir)
        .args(["--set", "n_symbols=2", "--set", "n_days=90", "--set", "n_events=3", "--seed", "7"]));
    assert_eq!(code(&out), 0, "gen failed: {}", stderr(&out));
}

fn read_dir_bytes(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut files: Vec<(String, Vec<u8>)> = std::fs::read_dir(dir)
        .expect("read dir")
        .map(|e| {
            let e = e.expect("dir entry");
            let name = e.file_name().into_string().expect("utf-8 name");
            let bytes = std::fs::read(e.path()).expect("read file");
            (name, bytes)
        })
        .collect();
    files.sort_by(|a, b| a.0.cmp(&b.0));
    files
}

#[test]
fn gen_writes_all_files_and_is_deterministic() {
    let tmp = tempfile::tempdir().unwrap();
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    gen_tiny(&a);
    gen_tiny(&b);

    let files_a = read_dir_bytes(&a);
    let names: Vec<&str> = files_a.iter().map(|(n, _)| n.as_str()).collect();
    assert_eq!(
        names,
        ["docs.jsonl", "events.json", "ledger.json", "macro.csv", "prices.csv"]
    );
    assert_eq!(files_a, read_dir_bytes(&b), "same seed must reproduce every byte");
}

#[test]
fn gen_names_the_unknown_key_and_exits_2() {
    let tmp = tempfile::tempdir().unwrap();
    let out = run(mmft()
        .args(["gen", "--out-dir"])
        .arg(tmp.path().join("d"))
        .args(["--set", "n_dayz=10"]));
    assert_eq!(code(&out), 2);
    assert!(stderr(&out).contains("n_dayz"), "stderr: {}", stderr(&out));

    let out = run(mmft()
        .args(["gen", "--out-dir"])
        .arg(tmp.path().join("d"))
        .args(["--set", "n_days=1"]));
    assert_eq!(code(&out), 2, "invalid value is a parameter error");
}

#[test]
fn train_evaluate_impact_round_trip() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    let run_dir = tmp.path().join("run");
    gen_tiny(&data);
    let cfg = write_tiny_config(tmp.path());

    let out = run(mmft()
        .args(["train", "--config"])
        .arg(&cfg)
        .arg("--data-dir")
        .arg(&data)
        .arg("--out-dir")
        .arg(&run_dir));
    assert_eq!(code(&out), 0, "train failed: {}", stderr(&out));
    for name in ["model.ckpt", "config.json", "train_history.json", "train_history.csv"] {
        assert!(run_dir.join(name).exists(), "missing {name}");
    }
    assert!(stderr(&out).contains("epoch"), "progress log goes to stderr");

    let evaluate = |dir: &Path| {
        let out = run(mmft()
            .args(["evaluate", "--config"])
            .arg(&cfg)
            .arg("--data-dir")
            .arg(&data)
            .arg("--out-dir")
            .arg(dir)
            .arg("--checkpoint")
            .arg(run_dir.join("model.ckpt")));
        assert_eq!(code(&out), 0, "evaluate failed: {}", stderr(&out));
    };
    let (e1, e2) = (tmp.path().join("e1"), tmp.path().join("e2"));
    evaluate(&e1);
    evaluate(&e2);
    let metrics = std::fs::read(e1.join("metrics.json")).unwrap();
    assert_eq!(
        metrics,
        std::fs::read(e2.join("metrics.json")).unwrap(),
        "re-evaluation must reproduce the report byte for byte"
    );
    let parsed: serde_json::Value = serde_json::from_slice(&metrics).unwrap();
    for key in ["rmse", "accuracy", "sharpe_daily", "persistence_rmse", "confusion"] {
        assert!(parsed.get(key).is_some(), "metrics.json lacks {key}");
    }
    let preds = std::fs::read_to_string(e1.join("predictions.csv")).unwrap();
    assert!(preds.starts_with("symbol,date,day,y_hat,actual,class,actual_class\n"));
    assert!(preds.lines().count() > 1, "at least one prediction row");

    let out = run(mmft()
        .args(["impact", "--config"])
        .arg(&cfg)
        .arg("--data-dir")
        .arg(&data)
        .arg("--out-dir")
        .arg(tmp.path().join("imp"))
        .arg("--checkpoint")
        .arg(run_dir.join("model.ckpt"))
        .args(["--horizon", "5"]));
    assert_eq!(code(&out), 0, "impact failed: {}", stderr(&out));
    let report: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(tmp.path().join("imp/impact.json")).unwrap())
            .unwrap();
    assert_eq!(report["events"].as_array().unwrap().len(), 3);
    assert!(!report["type_coefficients"].as_object().unwrap().is_empty());
}

#[test]
fn evaluate_rejects_checkpoint_from_other_config() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    let run_dir = tmp.path().join("run");
    gen_tiny(&data);
    let cfg = write_tiny_config(tmp.path());

    let out = run(mmft()
        .args(["train", "--config"])
        .arg(&cfg)
        .arg("--data-dir")
        .arg(&data)
        .arg("--out-dir")
        .arg(&run_dir));
    assert_eq!(code(&out), 0, "train failed: {}", stderr(&out));

    // A wider model expects different parameter shapes.
    let out = run(mmft()
        .args(["evaluate", "--config"])
        .arg(&cfg)
        .args(["--set", "d_model=8"])
        .arg("--data-dir")
        .arg(&data)
        .arg("--out-dir")
        .arg(tmp.path().join("e"))
        .arg("--checkpoint")
        .arg(run_dir.join("model.ckpt")));
    assert_eq!(code(&out), 3, "stderr: {}", stderr(&out));
    assert!(stderr(&out).contains("shape"), "stderr: {}", stderr(&out));

    let out = run(mmft()
        .args(["evaluate", "--config"])
        .arg(&cfg)
        .arg("--data-dir")
        .arg(&data)
        .arg("--out-dir")
        .arg(tmp.path().join("e"))
        .arg("--checkpoint")
        .arg(run_dir.join("model.ckpt"))
        .args(["--split", "train"]));
    assert_eq!(code(&out), 2, "only val/test are scoreable splits");
}

#[test]
fn missing_data_dir_exits_3() {
    let tmp = tempfile::tempdir().unwrap();
    let out = run(mmft()
        .arg("train")
        .arg("--data-dir")
        .arg(tmp.path().join("nope"))
        .arg("--out-dir")
        .arg(tmp.path().join("out")));
    assert_eq!(code(&out), 3);
    assert!(stderr(&out).contains("prices.csv"), "stderr: {}", stderr(&out));
}

#[test]
fn ablate_parallel_fan_out_matches_sequential() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    gen_tiny(&data);
    let cfg = write_tiny_config(tmp.path());

    let ablate = |dir: &Path, threads: Option<&str>| {
        let mut cmd = mmft();
        cmd.args(["ablate", "--config"])
            .arg(&cfg)
            .arg("--data-dir")
            .arg(&data)
            .arg("--out-dir")
            .arg(dir);
        if let Some(n) = threads {
            cmd.env("MMFT_THREADS", n);
        }
        let out = run(&mut cmd);
        assert_eq!(code(&out), 0, "ablate failed: {}", stderr(&out));
        out
    };
    let (seq, par) = (tmp.path().join("seq"), tmp.path().join("par"));
    ablate(&seq, None);
    ablate(&par, Some("3"));
    assert_eq!(
        std::fs::read(seq.join("ablation.json")).unwrap(),
        std::fs::read(par.join("ablation.json")).unwrap(),
        "thread count must not change the table"
    );

    let table = std::fs::read_to_string(seq.join("ablation.csv")).unwrap();
    let labels: Vec<&str> = table
        .lines()
        .skip(1)
        .map(|l| l.split(',').next().unwrap())
        .collect();
    assert_eq!(
        labels,
        ["full", "without_technical", "without_text", "without_macro", "without_event"]
    );

    let out = run(mmft()
        .args(["ablate", "--config"])
        .arg(&cfg)
        .arg("--data-dir")
        .arg(&data)
        .arg("--out-dir")
        .arg(tmp.path().join("bad"))
        .env("MMFT_THREADS", "zero"));
    assert_eq!(code(&out), 2, "junk MMFT_THREADS is a config error");
}

#[test]
fn converge_check_reports_and_exit_codes() {
    let out = run(mmft().arg("converge-check"));
    assert_eq!(code(&out), 0);
    let report: serde_json::Value = serde_json::from_str(&stdout(&out)).unwrap();
    assert_eq!(report["factor"], 0.5);
    assert_eq!(report["passed"], true);
    assert_eq!(report["distances"].as_array().unwrap().len(), 201);

    // One-step convergence when the quadratic is isotropic.
    let out = run(mmft().args(["converge-check", "--mu", "1", "--l", "1", "--eta", "1", "--steps", "5"]));
    assert_eq!(code(&out), 0);
    let report: serde_json::Value = serde_json::from_str(&stdout(&out)).unwrap();
    assert_eq!(report["distances"][1], 0.0);

    // η = 3/(μ+L) violates the step-size precondition.
    let out = run(mmft().args(["converge-check", "--eta", "0.75"]));
    assert_eq!(code(&out), 2);
    assert!(stderr(&out).contains("eta"), "stderr: {}", stderr(&out));
}

#[test]
fn gradcheck_scopes_and_exit_codes() {
    let out = run(mmft().args(["gradcheck", "--scope", "encoders.macro", "--instances", "1"]));
    assert_eq!(code(&out), 0, "stderr: {}", stderr(&out));
    assert!(stdout(&out).contains("encoders.macro"));
    assert!(stdout(&out).contains("passed"));

    // The architectural alias lands on the event suite.
    let out = run(mmft().args(["gradcheck", "--scope", "encoders.gat", "--instances", "1"]));
    assert_eq!(code(&out), 0, "stderr: {}", stderr(&out));
    assert!(stdout(&out).contains("encoders.event"));

    let out = run(mmft().args(["gradcheck", "--scope", "nonsense"]));
    assert_eq!(code(&out), 2);
    assert!(stderr(&out).contains("nonsense"));
}

#[test]
fn bench_emits_one_row_per_size() {
    let tmp = tempfile::tempdir().unwrap();
    let out = run(mmft()
        .args(["bench", "--sizes", "8,16", "--out-dir"])
        .arg(tmp.path()));
    assert_eq!(code(&out), 0, "stderr: {}", stderr(&out));
    let table = stdout(&out);
    let mut lines = table.lines();
    assert_eq!(lines.next(), Some("size,tcn_ms,attention_ms,gat_ms"));
    let rows: Vec<&str> = lines.collect();
    assert_eq!(rows.len(), 2);
    assert!(rows[0].starts_with("8,"));
    assert!(rows[1].starts_with("16,"));
    assert_eq!(
        std::fs::read_to_string(tmp.path().join("bench.csv")).unwrap(),
        table,
        "bench.csv mirrors stdout"
    );

    let out = run(mmft().args(["bench", "--sizes", " , "]));
    assert_eq!(code(&out), 2, "an empty size list is a usage error");
}
