use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_patchrag"))
}

fn run(args: &[&str]) -> Output {
    bin().args(args).env_remove("RUST_LOG").output().unwrap()
}

fn fixtures() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../core/tests/fixtures")
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn unreadable_image_exits_2_with_diagnostic() {
    let out = run(&["tile", "--image", "/definitely/not/here.png"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("error"));
}

#[test]
fn usage_errors_exit_2() {
    assert_eq!(run(&[]).status.code(), Some(2));
    assert_eq!(run(&["run", "--variants", "nope"]).status.code(), Some(2));
    // the oracle needs an instance
    let out = run(&[
        "search",
        "--image",
        s(&fixtures().join("session_image.png")),
        "--question",
        "q",
    ]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn tile_lists_crops() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(&[
        "tile",
        "--image",
        s(&fixtures().join("session_image.png")),
        "--cell-size",
        "16",
        "--out",
        s(dir.path()),
    ]);
    assert!(out.status.success());
    let v: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!((v["rows"].as_u64(), v["cols"].as_u64()), (Some(4), Some(4)));
    assert_eq!(fs::read_dir(dir.path()).unwrap().count(), 16);
}

#[test]
fn gen_suite_run_and_bench() {
    let dir = tempfile::tempdir().unwrap();
    let suite = dir.path().join("suite.jsonl");
    let out = run(&[
        "gen-suite",
        "--count",
        "6",
        "--seed",
        "3",
        "--out",
        s(&suite),
    ]);
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );

    let cfg = dir.path().join("cfg.toml");
    fs::write(
        &cfg,
        "workers = 2\nk_values = [2, 4]\n[search]\nmax_expansions = 32\n",
    )
    .unwrap();
    let results = dir.path().join("results");
    let out = run(&[
        "--config",
        s(&cfg),
        "run",
        "--suite",
        s(&suite),
        "--out",
        s(&results),
    ]);
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let csv = fs::read_to_string(results.join("results.csv")).unwrap();
    // 5 default variants, the three fixed-K ones swept over two K values
    assert_eq!(csv.lines().count(), 1 + 6 * (2 + 3 * 2));
    assert!(results.join("summary.json").exists());

    let out = run(&["bench", "--suite", s(&suite), "--workers", "1"]);
    assert!(out.status.success());
    assert!(String::from_utf8_lossy(&out.stdout).contains("expansion ratio"));

    // instance-driven single commands
    let trace = dir.path().join("trace.jsonl");
    let out = run(&["search", "--instance", s(&suite), "--trace", s(&trace)]);
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let v: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert!(v["selected_k"].as_u64().unwrap() < 64);
    assert!(fs::read_to_string(&trace).unwrap().lines().count() >= 1);

    let out = run(&["score", "--instance", s(&suite)]);
    assert!(out.status.success());
    let v: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(v["scores"].as_array().unwrap().len(), 8);

    let png = dir.path().join("canvas.png");
    let out = run(&[
        "layout",
        "--instance",
        s(&suite),
        "--k",
        "4",
        "--kind",
        "strip-score",
        "--out",
        s(&png),
    ]);
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    assert!(png.exists());
    let out = run(&[
        "layout",
        "--instance",
        s(&suite),
        "--cell-size",
        "32",
        "--mask",
        "1/0/0/0/0/0/0/1",
        "--out",
        s(&png),
    ]);
    assert_eq!(out.status.code(), Some(2), "mask must match the grid");
}

#[test]
fn bad_config_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("cfg.toml");
    fs::write(&cfg, "[search]\nthreshold = 3.0\n").unwrap();
    let out = run(&[
        "--config",
        s(&cfg),
        "gen-suite",
        "--out",
        s(&dir.path().join("x")),
    ]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn replayed_session_answers_offline() {
    let f = fixtures();
    let out = run(&[
        "search",
        "--image",
        s(&f.join("session_image.png")),
        "--question",
        "What is the colour of object #3?",
        "--cell-size",
        "16",
        "--replay",
        s(&f.join("session.jsonl")),
    ]);
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let v: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(v["answer"], "red");
}

#[test]
fn provider_failures_over_limit_exit_1() {
    let dir = tempfile::tempdir().unwrap();
    let suite = dir.path().join("suite.jsonl");
    assert!(run(&["gen-suite", "--count", "3", "--out", s(&suite)])
        .status
        .success());
    let empty = dir.path().join("empty.jsonl");
    fs::write(&empty, "").unwrap();
    let out = run(&[
        "run",
        "--suite",
        s(&suite),
        "--variants",
        "rap-full",
        "--replay",
        s(&empty),
        "--out",
        s(&dir.path().join("r")),
    ]);
    assert_eq!(
        out.status.code(),
        Some(1),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    assert!(dir.path().join("r/results.csv").exists());
}

#[test]
fn empty_suite_succeeds() {
    let dir = tempfile::tempdir().unwrap();
    let suite = dir.path().join("suite.jsonl");
    fs::write(&suite, "").unwrap();
    let out = run(&[
        "run",
        "--suite",
        s(&suite),
        "--out",
        s(&dir.path().join("r")),
    ]);
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
}
