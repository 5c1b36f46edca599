//! Helpers for driving the `goplan` binary.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

/// A small but complete run; every stage finishes in a few seconds.
pub const TINY_CONFIG: &str = include_str!("../../../../configs/smoke.conf");

pub fn goplan(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_goplan"))
        .args(args)
        .env("GOPLAN_THREADS", "2")
        .output()
        .expect("failed to launch goplan")
}

pub fn write_config(dir: &Path, name: &str, text: &str) -> PathBuf {
    let path = dir.join(name);
    fs::write(&path, text).unwrap();
    path
}

/// Runs a command with `--config` and `--out`, panicking with its stderr on
/// a nonzero exit.
pub fn run_stage(command: &str, config: &Path, out: &Path, extra: &[&str]) {
    let mut args = vec![command, "--config", config.to_str().unwrap(), "--out", out.to_str().unwrap()];
    args.extend_from_slice(extra);
    let o = goplan(&args);
    assert!(
        o.status.success(),
        "goplan {args:?} exited with {:?}: {}",
        o.status.code(),
        String::from_utf8_lossy(&o.stderr)
    );
}

/// Every stage in order, including evaluation with and without planning.
pub fn run_all(config: &Path, out: &Path) {
    run_stage("gen-data", config, out, &[]);
    run_stage("pretrain", config, out, &[]);
    run_stage("reanalyze", config, out, &[]);
    run_stage("eval", config, out, &[]);
    run_stage("eval", config, out, &["--plan"]);
    run_stage("appendix-a", config, out, &[]);
}

/// Sorted file names in a directory.
pub fn files(dir: &Path) -> Vec<String> {
    let mut names: Vec<String> = fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().file_name().to_string_lossy().into_owned())
        .collect();
    names.sort();
    names
}

/// Runs the whole pipeline twice from scratch and lists the files whose
/// bytes differ, together with the number of CSV files compared.
pub fn rerun_differences(config_text: &str) -> (Vec<String>, usize) {
    let root = tempfile::tempdir().unwrap();
    let config = write_config(root.path(), "run.conf", config_text);
    let (a, b) = (root.path().join("a"), root.path().join("b"));
    run_all(&config, &a);
    run_all(&config, &b);
    let names = files(&a);
    assert_eq!(names, files(&b));
    let csvs = names.iter().filter(|n| n.ends_with(".csv")).count();
    let differing = names
        .into_iter()
        .filter(|n| fs::read(a.join(n)).unwrap() != fs::read(b.join(n)).unwrap())
        .collect();
    (differing, csvs)
}
