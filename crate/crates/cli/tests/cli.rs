use std::path::Path;
use std::process::{Command, Output};

const TINY: &str = r#"{
  "net": {"num_bs": 2, "users_per_bs": 2, "antennas": 2},
  "gnn": {"layers": 2, "embed_dim": 8, "hidden": 16},
  "admm": {"restarts": 1, "inner_steps": 300, "inner_tol": 1e-7},
  "dataset": {"train_batches": 2, "val_batches": 1, "test_batches": 1, "batch_size": 3},
  "train": {"epochs": 2, "inner_steps": 2},
  "sweep_corr": [0.5, 0.6]
}"#;

fn cfnoma(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_cfnoma"))
        .current_dir(dir)
        .env("RUST_LOG", "error")
        .args(args)
        .output()
        .unwrap()
}

fn ok(o: &Output) -> String {
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    String::from_utf8(o.stdout.clone()).unwrap()
}

#[test]
fn generate_train_export_evaluate() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("tiny.json"), TINY).unwrap();
    let base = ["--config", "tiny.json", "--out", "run", "--seed", "3"];

    ok(&cfnoma(dir.path(), &[&["generate"], &base[..]].concat()));
    for s in ["train", "validation", "test"] {
        assert!(dir.path().join(format!("run/data/{s}.json")).exists());
    }

    let trained = ok(&cfnoma(
        dir.path(),
        &[&["train"], &base[..], &["--method", "fixed_gnn"]].concat(),
    ));
    assert!(dir.path().join("run/checkpoint.json").exists());
    assert!(dir.path().join("run/train_log.csv").exists());
    let files = ok(&cfnoma(dir.path(), &["export-plots", "--out", "run"]));
    assert!(files.contains("val_loss_fixed_gnn.tsv"));
    let evaluated = ok(&cfnoma(
        dir.path(),
        &[&["evaluate"], &base[..], &["--method", "fixed_gnn"]].concat(),
    ));
    // Same rows apart from the execution time.
    let strip = |s: &str| -> Vec<String> {
        s.lines()
            .map(|l| {
                let mut c: Vec<&str> = l.split(',').collect();
                c.remove(2);
                c.join(",")
            })
            .collect()
    };
    assert_eq!(strip(&trained), strip(&evaluated));

    let echoed: serde_json::Value =
        serde_json::from_slice(&std::fs::read(dir.path().join("run/config.json")).unwrap())
            .unwrap();
    assert_eq!(echoed["seed"], 3);
    assert_eq!(echoed["method"], "fixed_gnn");
}

#[test]
fn compare_and_sweep_tables() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("tiny.json"), TINY).unwrap();
    let methods = [
        "--method",
        "admm_centralized",
        "--method",
        "beta_frozen_oracle",
    ];
    let out = ok(&cfnoma(
        dir.path(),
        &[
            &["compare", "--config", "tiny.json", "--out", "c"],
            &methods[..],
        ]
        .concat(),
    ));
    assert_eq!(out.lines().count(), 3);
    assert!(out.starts_with("Method,Test sum rate (bps/Hz),Execution time,"));
    assert!(dir.path().join("c/results.csv").exists());
    assert!(dir.path().join("c/summary.json").exists());

    let out = ok(&cfnoma(
        dir.path(),
        &[
            &[
                "sweep",
                "--config",
                "tiny.json",
                "--out",
                "s",
                "--override",
                "sweep_corr=[0.5,0.7]",
            ],
            &methods[..],
        ]
        .concat(),
    ));
    assert_eq!(out.lines().count(), 5);
    assert!(out
        .lines()
        .skip(1)
        .all(|l| l.starts_with("0.5,") || l.starts_with("0.7,")));
}

#[test]
fn errors_exit_nonzero_with_a_message() {
    let dir = tempfile::tempdir().unwrap();
    let o = cfnoma(
        dir.path(),
        &["evaluate", "--out", "missing", "--method", "autognn"],
    );
    assert!(!o.status.success());
    assert!(String::from_utf8_lossy(&o.stderr).contains("missing/checkpoint.json"));

    let o = cfnoma(dir.path(), &["compare", "--override", "net.bogus=1"]);
    assert!(!o.status.success());
    assert!(String::from_utf8_lossy(&o.stderr).contains("net.bogus"));

    let o = cfnoma(dir.path(), &["compare", "--config", "nope.json"]);
    assert!(!o.status.success());
    assert!(String::from_utf8_lossy(&o.stderr).contains("nope.json"));

    let o = cfnoma(dir.path(), &["export-plots", "--out", "empty"]);
    assert!(!o.status.success());
    assert!(String::from_utf8_lossy(&o.stderr).contains("summary.json"));

    let o = cfnoma(dir.path(), &["compare", "--method", "sdma"]);
    assert!(!o.status.success());
}
