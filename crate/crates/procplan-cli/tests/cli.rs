//! End-to-end tests of the `procplan` binary: the generate → train → eval →
//! plan pipeline, artifact lineage enforcement, and the exit-code contract
//! (0 success, 2 config error, 3 data error).

use std::path::Path;
use std::process::{Command, Output};

fn run(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_procplan"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("no signal")
}

fn stdout(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

/// Small-but-real experiment flags shared by the pipeline tests.
fn tiny_flags(out_dir: &Path) -> Vec<String> {
    [
        "--out-dir",
        out_dir.to_str().unwrap(),
        "--obs-dim",
        "12",
        "--num-trajectories",
        "40",
        "--horizons",
        "3",
        "--epochs",
        "2",
        "--batch-size",
        "16",
        "--lr",
        "2e-3",
    ]
    .iter()
    .map(|s| s.to_string())
    .collect()
}

fn run_with(cmd: &str, flags: &[String], extra: &[&str]) -> Output {
    let mut args: Vec<&str> = vec![cmd];
    args.extend(flags.iter().map(|s| s.as_str()));
    args.extend(extra);
    run(&args)
}

#[test]
fn pipeline_generates_trains_evals_and_plans() {
    let dir = tempfile::tempdir().unwrap();
    let flags = tiny_flags(dir.path());

    let gen = run_with("generate", &flags, &[]);
    assert_eq!(code(&gen), 0, "{}", stderr(&gen));
    assert!(dir.path().join("dataset.json").is_file());
    assert!(dir.path().join("config.generate.json").is_file());
    assert!(stdout(&gen).contains("config hash"));

    let train = run_with("train", &flags, &[]);
    assert_eq!(code(&train), 0, "{}", stderr(&train));
    assert!(dir.path().join("checkpoint.best.json").is_file());
    assert!(dir.path().join("checkpoint.last.json").is_file());
    let curve = std::fs::read_to_string(dir.path().join("loss_curve.csv")).unwrap();
    assert!(curve.starts_with("epoch,train_loss,test_loss\n"));
    assert_eq!(curve.lines().count(), 3); // header + 2 epochs

    let eval = run_with("eval", &flags, &[]);
    assert_eq!(code(&eval), 0, "{}", stderr(&eval));
    let report = std::fs::read_to_string(dir.path().join("report.csv")).unwrap();
    assert!(report.starts_with("metric,horizon,method,value,seed\n"));
    for method in ["planner-greedy", "planner-beam-k2-n3", "random", "retrieval"] {
        assert!(report.contains(method), "missing {method} in report");
    }
    assert!(dir.path().join("report.txt").is_file());

    let plan = run_with("plan", &flags, &["--index", "1"]);
    assert_eq!(code(&plan), 0, "{}", stderr(&plan));
    let text = stdout(&plan);
    assert!(text.contains("offline match:"));
    assert!(text.contains("gap"));
}

#[test]
fn beam_width_one_buffer_one_matches_greedy_rows() {
    let dir = tempfile::tempdir().unwrap();
    let flags = tiny_flags(dir.path());
    assert_eq!(code(&run_with("generate", &flags, &[])), 0);
    assert_eq!(code(&run_with("train", &flags, &[])), 0);
    let eval = run_with("eval", &flags, &["--beam-width", "1", "--beam-buffer", "1"]);
    assert_eq!(code(&eval), 0, "{}", stderr(&eval));

    let report = std::fs::read_to_string(dir.path().join("report.csv")).unwrap();
    let rows = |method: &str| -> Vec<(String, String, String)> {
        report
            .lines()
            .skip(1)
            .filter_map(|l| {
                let f: Vec<&str> = l.split(',').collect();
                (f[2] == method).then(|| (f[0].to_string(), f[1].to_string(), f[3].to_string()))
            })
            .collect()
    };
    let greedy = rows("planner-greedy");
    let beam = rows("planner-beam-k1-n1");
    assert!(!greedy.is_empty());
    assert_eq!(greedy, beam);
}

#[test]
fn config_errors_exit_2() {
    let dir = tempfile::tempdir().unwrap();

    // Unknown top-level key in a config file.
    let config_path = dir.path().join("config.json");
    std::fs::write(&config_path, r#"{"surprise": 1}"#).unwrap();
    let out = run(&["generate", "--config", config_path.to_str().unwrap()]);
    assert_eq!(code(&out), 2, "{}", stderr(&out));
    assert!(stderr(&out).contains("config error"));

    // Unknown profile.
    let out = run(&["generate", "--profile", "galactic"]);
    assert_eq!(code(&out), 2);

    // Cross-field contradiction via flags: horizon beyond beam n_max.
    let out = run(&["generate", "--horizons", "99"]);
    assert_eq!(code(&out), 2);
    assert!(stderr(&out).contains("n_max"));
}

#[test]
fn data_errors_exit_3_and_force_overrides_lineage() {
    let dir_a = tempfile::tempdir().unwrap();
    let dir_b = tempfile::tempdir().unwrap();
    let flags_a = tiny_flags(dir_a.path());
    let mut flags_b = tiny_flags(dir_b.path());
    flags_b.extend(["--seed".to_string(), "99".to_string()]);

    // Missing dataset.
    let out = run_with("train", &flags_a, &[]);
    assert_eq!(code(&out), 3, "{}", stderr(&out));

    assert_eq!(code(&run_with("generate", &flags_a, &[])), 0);
    assert_eq!(code(&run_with("generate", &flags_b, &[])), 0);
    assert_eq!(code(&run_with("train", &flags_a, &[])), 0);

    // Training config disagrees with the dataset on disk.
    let dataset_a = dir_a.path().join("dataset.json");
    let out = run_with("train", &flags_b, &["--dataset", dataset_a.to_str().unwrap()]);
    assert_eq!(code(&out), 3, "{}", stderr(&out));
    assert!(stderr(&out).contains("--force"));

    // Evaluating checkpoint A against dataset B is refused, unless forced.
    let dataset_b = dir_b.path().join("dataset.json");
    let ckpt_a = dir_a.path().join("checkpoint.best.json");
    let mismatch = [
        "--dataset",
        dataset_b.to_str().unwrap(),
        "--checkpoint",
        ckpt_a.to_str().unwrap(),
    ];
    let out = run_with("eval", &flags_a, &mismatch);
    assert_eq!(code(&out), 3, "{}", stderr(&out));
    assert!(stderr(&out).contains("trained on dataset"));
    let mut forced = mismatch.to_vec();
    forced.push("--force");
    let out = run_with("eval", &flags_a, &forced);
    assert_eq!(code(&out), 0, "{}", stderr(&out));

    // A tampered dataset fails its integrity check.
    let mut value: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(&dataset_a).unwrap()).unwrap();
    value["header"]["config"]["seed"] = serde_json::json!(123456);
    std::fs::write(&dataset_a, serde_json::to_string(&value).unwrap()).unwrap();
    let out = run_with("eval", &flags_a, &[]);
    assert_eq!(code(&out), 3);
    assert!(stderr(&out).contains("integrity"));

    // An unreadable dataset is a data error, with a distinct message.
    std::fs::write(&dataset_a, "{not json").unwrap();
    let out = run_with("eval", &flags_a, &[]);
    assert_eq!(code(&out), 3);
}

#[test]
fn resume_continues_training() {
    let dir = tempfile::tempdir().unwrap();
    let flags = tiny_flags(dir.path());
    assert_eq!(code(&run_with("generate", &flags, &[])), 0);
    assert_eq!(code(&run_with("train", &flags, &[])), 0);

    let last = dir.path().join("checkpoint.last.json");
    let mut resumed: Vec<String> = flags.clone();
    let pos = resumed.iter().position(|f| f == "--epochs").unwrap();
    resumed[pos + 1] = "4".to_string();
    let out = run_with(
        "train",
        &resumed,
        &["--resume", last.to_str().unwrap()],
    );
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let text = stdout(&out);
    assert!(text.contains("resuming from epoch 2"));
    assert!(text.contains("epoch    3"));
    assert!(text.contains("epoch    4"));
    assert!(!text.contains("epoch    1 "));
}
