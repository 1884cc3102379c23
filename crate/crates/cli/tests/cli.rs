use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn placerec(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_placerec"))
        .args(args)
        .env_remove("PLACEREC_OUT")
        .env_remove("PLACEREC_THREADS")
        .output()
        .unwrap()
}

fn ok(args: &[&str]) -> Output {
    let out = placerec(args);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    out
}

fn synth(dir: &Path, n: &str, dim: &str, classes: &str) {
    ok(&["synth", "--n", n, "--dim", dim, "--classes", classes, "--seed", "5", "--out", dir.to_str().unwrap()]);
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn synth_reruns_are_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let files = ["reference.phf", "query.phf", "reference.json", "query.json", "ground_truth.csv"];
    synth(dir.path(), "120", "32", "4");
    let first: Vec<Vec<u8>> = files.iter().map(|f| fs::read(dir.path().join(f)).unwrap()).collect();
    synth(dir.path(), "120", "32", "4");
    for (f, before) in files.iter().zip(first) {
        assert_eq!(fs::read(dir.path().join(f)).unwrap(), before, "{f}");
    }
    let config: serde_json::Value = serde_json::from_slice(&fs::read(dir.path().join("run_config.json")).unwrap()).unwrap();
    assert_eq!(config["command"], "synth");
}

#[test]
fn evaluate_compares_backends() {
    let data = tempfile::tempdir().unwrap();
    let out = tempfile::tempdir().unwrap();
    synth(data.path(), "150", "64", "4");
    let stdout = ok(&[
        "evaluate",
        "--reference",
        s(&data.path().join("reference.phf")),
        "--queries",
        s(&data.path().join("query.phf")),
        "--ground-truth",
        s(&data.path().join("ground_truth.csv")),
        "--backend",
        "cosine",
        "--backend",
        "hamming",
        "--backend",
        "partitioned",
        "--bits",
        "512",
        "--taus",
        "50",
        "--out",
        s(out.path()),
    ])
    .stdout;
    assert!(!stdout.is_empty());
    for backend in ["cosine", "hamming", "partitioned"] {
        let csv = fs::read_to_string(out.path().join(format!("pr_{backend}.csv"))).unwrap();
        assert_eq!(csv.lines().count(), 51, "{backend}");
        assert!(out.path().join(format!("report_{backend}.json")).exists());
    }
    let cmp: serde_json::Value = serde_json::from_slice(&fs::read(out.path().join("comparison.json")).unwrap()).unwrap();
    assert!(cmp.is_object() || cmp.is_array());
}

#[test]
fn build_then_query_writes_one_line_per_query() {
    let data = tempfile::tempdir().unwrap();
    synth(data.path(), "80", "32", "3");
    for backend in ["cosine", "hamming", "partitioned"] {
        let index = tempfile::tempdir().unwrap();
        let results = tempfile::tempdir().unwrap();
        ok(&[
            "build",
            "--features",
            s(&data.path().join("reference.phf")),
            "--backend",
            backend,
            "--bits",
            "256",
            "--out",
            s(index.path()),
        ]);
        ok(&[
            "query",
            "--index",
            s(index.path()),
            "--queries",
            s(&data.path().join("query.phf")),
            "--out",
            s(results.path()),
        ]);
        let lines = fs::read_to_string(results.path().join("results.jsonl")).unwrap();
        assert_eq!(lines.lines().count(), 80, "{backend}");
        for line in lines.lines() {
            let row: serde_json::Value = serde_json::from_str(line).unwrap();
            assert!(row["best_distance"].as_f64().unwrap() <= row["second_distance"].as_f64().unwrap());
        }
    }
}

#[test]
fn failures_map_to_exit_codes() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let out = tempfile::tempdir().unwrap();
    synth(a.path(), "40", "16", "0");
    synth(b.path(), "40", "24", "0");
    let code = |args: &[&str]| placerec(args).status.code().unwrap();
    let eval = |reference: &Path, queries: &Path, tolerance: &str| {
        code(&[
            "evaluate",
            "--reference",
            s(reference),
            "--queries",
            s(queries),
            "--ground-truth",
            s(&a.path().join("ground_truth.csv")),
            "--tolerance",
            tolerance,
            "--backend",
            "cosine",
            "--out",
            s(out.path()),
        ])
    };

    let junk = a.path().join("junk.phf");
    fs::write(&junk, b"not a feature file at all, just some bytes").unwrap();
    assert_eq!(code(&["ingest", "--features", s(&junk), "--out", s(out.path())]), 2);
    assert_eq!(eval(&a.path().join("reference.phf"), &b.path().join("query.phf"), "1"), 3);
    assert_eq!(eval(&a.path().join("reference.phf"), &a.path().join("query.phf"), "6"), 5);
    assert_eq!(code(&["build", "--backend", "cosine"]), 64);
    assert_eq!(code(&["--threads", "0", "synth", "--out", s(out.path())]), 64);
    assert_eq!(code(&["--help"]), 0);
}
