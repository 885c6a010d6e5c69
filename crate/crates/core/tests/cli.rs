use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn bsieve(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_bsieve")).args(args).output().expect("binary runs")
}

fn summary(out: &Output) -> Value {
    serde_json::from_slice(&out.stdout).expect("stdout is the JSON summary")
}

fn schema() -> Value {
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("schema/outputs.json");
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

fn schema_header(experiment: &str) -> Vec<String> {
    let s = schema();
    let mut cols: Vec<String> = vec!["config_hash".into(), "seed".into()];
    let columns = s["csv"]["experiments"][experiment]["columns"].as_object().unwrap();
    // serde_json maps are sorted, so compare as sets after the common prefix
    cols.extend(columns.keys().cloned());
    cols
}

fn check_csv(path: &Path, experiment: &str, seed: &str, hash: &str) {
    let mut reader = csv::Reader::from_path(path).unwrap();
    let header: Vec<String> = reader.headers().unwrap().iter().map(String::from).collect();
    let mut want = schema_header(experiment);
    assert_eq!(header[..2], want[..2]);
    let mut got = header[2..].to_vec();
    got.sort();
    let mut rest = want.split_off(2);
    rest.sort();
    assert_eq!(got, rest, "{experiment} columns");
    let mut rows = 0;
    for rec in reader.records() {
        let rec = rec.unwrap();
        assert_eq!(&rec[0], hash);
        assert_eq!(&rec[1], seed);
        rows += 1;
    }
    assert!(rows > 0);
}

#[test]
fn exact_suite_exits_zero() {
    let out = bsieve(&["verify", "--suite", "exact", "--seed", "3"]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let s = summary(&out);
    assert_eq!(s["schema_version"], schema()["schema_version"]);
    assert_eq!(s["experiment"], "verify");
    assert_eq!(s["pass"], true);
    assert_eq!(s["criteria"].as_array().unwrap().len(), 2);
    for key in schema()["summary"]["fields"].as_object().unwrap().keys() {
        assert!(s.get(key).is_some(), "summary lacks {key}");
    }
}

#[test]
fn sieve_run_writes_files_matching_schema() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path().to_str().unwrap();
    let out = bsieve(&["sieve", "--wlaw", "uniform", "--balls", "100", "--reps", "100000", "--seed", "7", "--out", d]);
    assert_eq!(out.status.code(), Some(0));
    let s: Value = serde_json::from_str(&fs::read_to_string(dir.path().join("sieve.json")).unwrap()).unwrap();
    assert_eq!(s, summary(&out));
    assert!(s["metrics"]["tv_vs_geometric_half"].as_f64().unwrap() <= 0.01);
    let hash = s["config_hash"].as_str().unwrap();
    assert_eq!(hash.len(), 64);
    check_csv(&dir.path().join("sieve.csv"), "sieve", "7", hash);
}

#[test]
fn every_experiment_matches_its_schema() {
    let runs: [(&str, Vec<&str>); 5] = [
        ("moments", vec!["moments", "--alpha", "0.5", "--beta", "0.25"]),
        ("sample-z", vec!["sample-z", "--alpha", "0.5", "--beta", "0.5", "--n", "200", "--grid-step", "0.01"]),
        ("prw", vec!["prw", "--xi", "pareto:0.5", "--eta", "pareto:0.25", "--x", "50", "--reps", "200", "--z-draws", "200", "--grid-step", "0.01"]),
        ("markov", vec!["markov", "--chain", "beta-sieve:2,3", "--n", "10", "--reps", "1000"]),
        ("verify", vec!["verify", "--criterion", "2"]),
    ];
    for (name, args) in runs {
        let dir = tempfile::tempdir().unwrap();
        let mut full = args.clone();
        full.extend(["--seed", "11", "--out", dir.path().to_str().unwrap()]);
        let out = bsieve(&full);
        assert!(matches!(out.status.code(), Some(0 | 1)), "{name}: {}", String::from_utf8_lossy(&out.stderr));
        let s = summary(&out);
        assert_eq!(s["experiment"], name);
        assert_eq!(s["pass"] == true, out.status.code() == Some(0));
        check_csv(&dir.path().join(format!("{name}.csv")), name, "11", s["config_hash"].as_str().unwrap());
    }
}

#[test]
fn output_is_identical_across_thread_counts() {
    let run = |threads: &str| {
        let dir = tempfile::tempdir().unwrap();
        let out = bsieve(&[
            "--threads", threads, "sample-z", "--alpha", "0.6", "--beta", "0.3", "--n", "500", "--grid-step", "0.001",
            "--seed", "5", "--out", dir.path().to_str().unwrap(),
        ]);
        assert!(out.status.success() || out.status.code() == Some(1));
        (fs::read(dir.path().join("sample-z.csv")).unwrap(), fs::read(dir.path().join("sample-z.json")).unwrap())
    };
    assert_eq!(run("1"), run("3"));
}

#[test]
fn config_hash_tracks_parameters() {
    let hash = |args: &[&str]| summary(&bsieve(args))["config_hash"].as_str().unwrap().to_string();
    let a = hash(&["moments", "--alpha", "0.5", "--beta", "0.25", "--seed", "1"]);
    assert_eq!(a, hash(&["moments", "--beta", "0.25", "--alpha", "0.5", "--seed", "1", "--format", "json"]));
    assert_ne!(a, hash(&["moments", "--alpha", "0.5", "--beta", "0.25", "--seed", "2"]));
    assert_ne!(a, hash(&["moments", "--alpha", "0.5", "--beta", "0.2", "--seed", "1"]));
}

#[test]
fn invalid_configs_exit_two() {
    for args in [
        vec!["sieve", "--wlaw", "uniform", "--balls", "10"],
        vec!["sieve", "--wlaw", "beta:0,1", "--balls", "10", "--seed", "1"],
        vec!["moments", "--alpha", "0.4", "--beta", "0.6", "--seed", "1"],
        vec!["sample-z", "--alpha", "1.2", "--beta", "0.1", "--seed", "1"],
        vec!["markov", "--chain", "barrier-geometric:1.5", "--n", "5", "--seed", "1"],
        vec!["verify", "--criterion", "99", "--seed", "1"],
    ] {
        let out = bsieve(&args);
        assert_eq!(out.status.code(), Some(2), "{args:?}");
        assert!(!out.stderr.is_empty());
    }
}

#[test]
fn exported_chain_reloads_to_the_same_run() {
    let dir = tempfile::tempdir().unwrap();
    let spec = dir.path().join("chain.json");
    let common = ["--n", "12", "--reps", "2000", "--seed", "9", "--format", "csv"];
    let mut first = vec!["markov", "--chain", "beta-sieve:2,3", "--export", spec.to_str().unwrap()];
    first.extend(common);
    let a = bsieve(&first);
    let file_arg = format!("file:{}", spec.display());
    let mut second = vec!["markov", "--chain", file_arg.as_str()];
    second.extend(common);
    let b = bsieve(&second);
    // same chain and seed, so identical records apart from the hash column
    let strip = |o: &Output| -> Vec<String> {
        String::from_utf8_lossy(&o.stdout).lines().skip(1).map(|l| l.split_once(',').unwrap().1.to_string()).collect()
    };
    assert_eq!(strip(&a), strip(&b));
}
