//! End-to-end runs of the `federl` binary on tiny generated data.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn federl(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_federl"))
        .args(args)
        .env_remove("FEDERL_DATA_ROOT")
        .output()
        .expect("binary runs")
}

fn arg(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn generate(dir: &Path) {
    let out = federl(&[
        "generate", "--out", arg(dir), "--train", "160", "--test", "40", "--proxy", "40", "--size", "8",
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
}

const SMALL: &str = r#"
methods = ["cleanfl", "robustfl", "federl"]
output = "results"

[data]
train = "train"
test = "test"
proxy = "proxy_ood_shapes"
proxy_alt = "proxy_textures"
corruptions = ["gaussian_noise", "contrast"]
severities = [1, 5]

[model]
kind = "mlp"
hidden = [8]

[fed]
clients = 2
global_rounds = 2
batch_size = 16

[dart]
max_epochs = 2
batch_size = 16

[eval]
every = 1

[sweep]
seeds = [1, 2]
time_budgets = [2.0]
t_rob = [1]
ablation = true
proxy_swap = true
"#;

fn small_config(dir: &Path) -> PathBuf {
    let path = dir.join("small.toml");
    fs::write(&path, SMALL).unwrap();
    path
}

fn csv_files(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut files: Vec<_> = fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.extension().is_some_and(|e| e == "csv"))
        .map(|p| (p.file_name().unwrap().to_string_lossy().into_owned(), fs::read(&p).unwrap()))
        .collect();
    files.sort();
    files
}

#[test]
fn smoke_run_writes_tables_and_report() {
    let tmp = tempfile::tempdir().unwrap();
    generate(tmp.path());
    let cfg = small_config(tmp.path());
    let out = federl(&["run", "--config", arg(&cfg)]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let results = tmp.path().join("results");
    for name in ["summary.csv", "trob_sweep.csv", "ablation.csv", "proxy_swap.csv", "records_federl_seed2.csv"] {
        assert!(results.join(name).is_file(), "missing {name}");
    }
    let summary = fs::read_to_string(results.join("summary.csv")).unwrap();
    assert_eq!(summary.lines().count(), 1 + 2 * 3);
    let report = federl(&["report", "--out", arg(&results)]);
    assert!(report.status.success());
    let md = String::from_utf8(report.stdout).unwrap();
    assert!(md.contains("## DART ablation") && md.contains("| no_distillation |"), "{md}");
}

#[test]
fn repeated_runs_write_identical_csvs() {
    let tmp = tempfile::tempdir().unwrap();
    generate(tmp.path());
    let cfg = small_config(tmp.path());
    let mut runs = Vec::new();
    for name in ["a", "b"] {
        let dir = tmp.path().join(name);
        let out = federl(&["run", "--config", arg(&cfg), "--out", arg(&dir), "--seed", "3"]);
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
        runs.push(csv_files(&dir));
    }
    assert!(runs[0].len() > 5);
    assert_eq!(runs[0], runs[1]);
}

#[test]
fn corrupt_materializes_each_spec_once() {
    let tmp = tempfile::tempdir().unwrap();
    generate(tmp.path());
    let test = tmp.path().join("test");
    let args = ["corrupt", "--dataset", arg(&test), "--filters", "gaussian_noise,pixelate", "--severities", "1,3"];
    let first = federl(&args);
    assert!(first.status.success(), "{}", String::from_utf8_lossy(&first.stderr));
    assert_eq!(String::from_utf8_lossy(&first.stdout).trim(), "4 written, 0 reused");
    let second = federl(&args);
    assert_eq!(String::from_utf8_lossy(&second.stdout).trim(), "0 written, 4 reused");
}

#[test]
fn exit_codes() {
    let tmp = tempfile::tempdir().unwrap();
    generate(tmp.path());
    let cfg = small_config(tmp.path());

    let bad = tmp.path().join("bad.toml");
    fs::write(&bad, SMALL.replace("[fed]", "[fed]\nrounds = 3")).unwrap();
    assert_eq!(federl(&["run", "--config", arg(&bad)]).status.code(), Some(1));
    let unknown = federl(&["corrupt", "--dataset", arg(&tmp.path().join("test")), "--filters", "fog"]);
    assert_eq!(unknown.status.code(), Some(1));

    let missing = federl(&["corrupt", "--dataset", arg(&tmp.path().join("nowhere")), "--filters", "contrast"]);
    assert_eq!(missing.status.code(), Some(2));

    let out = tmp.path().join("starved");
    let starved = federl(&[
        "run", "--config", arg(&cfg), "--out", arg(&out), "--method", "robustfl", "--budget-time", "0.5",
    ]);
    assert_eq!(starved.status.code(), Some(3), "{}", String::from_utf8_lossy(&starved.stderr));
}
