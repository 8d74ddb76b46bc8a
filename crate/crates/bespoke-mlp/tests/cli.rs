//! End-to-end tests of the command-line interface: artifact layout, exit
//! codes, config handling, and checkpoint resume.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use bespoke_mlp::fixtures::make_blobs;
use bespoke_mlp::optsearch::ParetoFront;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_bespoke-mlp"))
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("spawn CLI")
}

fn run_ok(args: &[&str]) -> String {
    let out = run(args);
    assert!(
        out.status.success(),
        "command {args:?} failed with {:?}:\n{}",
        out.status.code(),
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn assert_exit(args: &[&str], code: i32) -> String {
    let out = run(args);
    assert_eq!(
        out.status.code(),
        Some(code),
        "command {args:?}: expected exit {code}, stderr:\n{}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn write_csv(path: &Path) {
    let d = make_blobs(3, 4, 150, 4.0, 21);
    let mut text = String::from("a,b,c,d,label\n");
    for (row, label) in d.features.iter().zip(&d.labels) {
        for v in row {
            text.push_str(&format!("{v},"));
        }
        text.push_str(&format!("{label}\n"));
    }
    std::fs::write(path, text).unwrap();
}

/// nas + minimize with small budgets; returns (model.json, front.json).
fn chain(dir: &Path, extra_minimize: &[&str]) -> (PathBuf, PathBuf) {
    let csv = dir.join("data.csv");
    write_csv(&csv);
    let out = dir.to_str().unwrap();
    run_ok(&[
        "nas", "--data", csv.to_str().unwrap(), "--budget", "4", "--seed", "3", "--out", out,
    ]);
    let model = dir.join("model.json");
    let mut args = vec![
        "minimize",
        "--model",
        model.to_str().unwrap(),
        "--pop",
        "8",
        "--gens",
        "2",
        "--seed",
        "3",
        "--out",
        out,
    ];
    args.extend_from_slice(extra_minimize);
    run_ok(&args);
    (model, dir.join("front.json"))
}

#[test]
fn full_chain_writes_all_artifacts() {
    let dir = tempfile::tempdir().unwrap();
    let (model, front) = chain(dir.path(), &[]);
    let out = dir.path().to_str().unwrap();

    for name in ["manifest.json", "nas_report.json", "checkpoints.jsonl"] {
        assert!(dir.path().join(name).exists(), "{name} missing after nas/minimize");
    }
    let loaded = ParetoFront::load(&front).unwrap();
    assert!(!loaded.members.is_empty());

    run_ok(&[
        "emit",
        "--front",
        front.to_str().unwrap(),
        "--model",
        model.to_str().unwrap(),
        "--name",
        "clf",
        "--vectors",
        "8",
        "--seed",
        "3",
        "--out",
        out,
    ]);
    let verilog = std::fs::read_to_string(dir.path().join("clf.v")).unwrap();
    assert!(verilog.starts_with("//"));
    assert!(verilog.contains("module clf ("));
    assert!(verilog.trim_end().ends_with("endmodule"));
    let vectors = std::fs::read_to_string(dir.path().join("clf_vectors.txt")).unwrap();
    assert!(vectors.lines().any(|l| !l.starts_with('#')));
    let report: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("report.json")).unwrap())
            .unwrap();
    assert_eq!(report["files"]["verilog"], "clf.v");
    assert!(report["area"]["total"].as_f64().unwrap() > 0.0);
    assert!(report["voltage"].as_f64().unwrap() >= 0.6);

    run_ok(&[
        "pareto-export",
        "--front",
        front.to_str().unwrap(),
        "--seed",
        "3",
        "--out",
        out,
    ]);
    let csv = std::fs::read_to_string(dir.path().join("pareto.csv")).unwrap();
    let mut lines = csv.lines();
    assert!(lines.next().unwrap().starts_with("accuracy_norm,area_norm,"));
    assert_eq!(lines.count(), loaded.members.len());
}

#[test]
fn missing_dataset_exits_with_input_error() {
    let dir = tempfile::tempdir().unwrap();
    let stderr = assert_exit(
        &[
            "nas",
            "--data",
            dir.path().join("nope.csv").to_str().unwrap(),
            "--out",
            dir.path().to_str().unwrap(),
        ],
        2,
    );
    assert!(stderr.contains("nope.csv"), "stderr should name the file: {stderr}");
}

#[test]
fn infeasible_delay_exits_with_constraint_error() {
    let dir = tempfile::tempdir().unwrap();
    let (model, front) = chain(dir.path(), &["--skip-sweep"]);
    let stderr = assert_exit(
        &[
            "emit",
            "--front",
            front.to_str().unwrap(),
            "--model",
            model.to_str().unwrap(),
            "--delay-ms",
            "0.000001",
            "--seed",
            "3",
            "--out",
            dir.path().to_str().unwrap(),
        ],
        3,
    );
    assert!(
        stderr.contains("infeasible") && stderr.contains("achievable"),
        "stderr should report the achievable delay: {stderr}"
    );
}

#[test]
fn emit_index_out_of_range_exits_with_input_error() {
    let dir = tempfile::tempdir().unwrap();
    let (model, front) = chain(dir.path(), &["--skip-sweep"]);
    assert_exit(
        &[
            "emit",
            "--front",
            front.to_str().unwrap(),
            "--model",
            model.to_str().unwrap(),
            "--index",
            "999",
            "--seed",
            "3",
            "--out",
            dir.path().to_str().unwrap(),
        ],
        2,
    );
}

#[test]
fn resumed_search_matches_uninterrupted_run() {
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("data.csv");
    write_csv(&csv);

    let nas_out = dir.path().join("nas");
    run_ok(&[
        "nas",
        "--data",
        csv.to_str().unwrap(),
        "--budget",
        "4",
        "--seed",
        "3",
        "--out",
        nas_out.to_str().unwrap(),
    ]);
    let model = nas_out.join("model.json");

    let minimize = |out: &Path, gens: &str, resume: bool| {
        let mut args = vec![
            "minimize",
            "--model",
            model.to_str().unwrap(),
            "--pop",
            "8",
            "--gens",
            gens,
            "--seed",
            "3",
            "--skip-sweep",
            "--out",
            out.to_str().unwrap(),
        ];
        if resume {
            args.push("--resume");
        }
        run_ok(&args);
    };

    // One uninterrupted run to 4 generations...
    let full = dir.path().join("full");
    minimize(&full, "4", false);
    // ...and one stopped at 2 then resumed to 4 from its checkpoints.
    let resumed = dir.path().join("resumed");
    minimize(&resumed, "2", false);
    minimize(&resumed, "4", true);

    let a = std::fs::read(full.join("front.json")).unwrap();
    let b = std::fs::read(resumed.join("front.json")).unwrap();
    assert_eq!(a, b, "resumed front differs from uninterrupted front");
}

#[test]
fn empty_config_file_falls_back_to_defaults() {
    let dir = tempfile::tempdir().unwrap();
    let (_, front) = chain(dir.path(), &["--skip-sweep"]);
    let cfg = dir.path().join("empty.toml");
    std::fs::write(&cfg, "").unwrap();
    run_ok(&[
        "pareto-export",
        "--front",
        front.to_str().unwrap(),
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        dir.path().to_str().unwrap(),
    ]);
    assert!(dir.path().join("pareto.csv").exists());
}

#[test]
fn unknown_config_key_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.toml");
    std::fs::write(&cfg, "population = 12\n").unwrap();
    let stderr = assert_exit(
        &[
            "pareto-export",
            "--front",
            "whatever.json",
            "--config",
            cfg.to_str().unwrap(),
        ],
        2,
    );
    assert!(stderr.contains("population"), "stderr should name the bad key: {stderr}");
}
