#![allow(dead_code)]

use std::f64::consts::TAU;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

pub fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_funbipart"))
}

pub fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

pub fn run_with_threads(args: &[&str], threads: usize) -> Output {
    bin()
        .args(args)
        .env("FUNBIPART_THREADS", threads.to_string())
        .output()
        .expect("binary runs")
}

pub fn code(o: &Output) -> i32 {
    o.status.code().expect("exited normally")
}

pub fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

pub fn path(p: &Path) -> &str {
    p.to_str().expect("utf-8 path")
}

/// Raw recording of strokes at `stroke_hz`: three channels sampled at 50 Hz,
/// the second of which (`ml`) drives alignment.
pub fn write_raw_subject(dir: &Path, name: &str, stroke_hz: f64, seconds: f64, constant_ml: bool) {
    let fs_hz = 50.0;
    let n = (seconds * fs_hz) as usize;
    let mut text = String::from("t,ap,ml,vt\n");
    for i in 0..n {
        let t = i as f64 / fs_hz;
        let ph = TAU * stroke_hz * t;
        let ap = 0.8 * ph.sin() + 0.3 * (2.0 * ph).cos() + 0.05 * (37.0 * t).sin();
        let ml = if constant_ml {
            0.25
        } else {
            ph.sin() + 0.2 * (3.0 * ph + 0.4).sin() + 0.1
        };
        let vt = 1.0 + 0.5 * (ph + 1.0).cos() + 0.1 * (2.0 * ph).sin();
        text.push_str(&format!("{t},{ap},{ml},{vt}\n"));
    }
    fs::write(dir.join(format!("{name}.csv")), text).unwrap();
}

/// Manifest over `(id, stroke_hz, constant_ml, speed)` subjects with raw CSVs.
pub fn write_raw_archive(dir: &Path, subjects: &[(&str, f64, bool, f64)]) -> PathBuf {
    fs::create_dir_all(dir.join("raw")).unwrap();
    let entries: Vec<String> = subjects
        .iter()
        .map(|&(id, hz, constant, speed)| {
            write_raw_subject(&dir.join("raw"), id, hz, 40.0, constant);
            format!(
                r#"{{"id": "{id}", "csv_path": "raw/{id}.csv", "covariates": {{"speed": {speed}}}}}"#
            )
        })
        .collect();
    let manifest = format!(
        r#"{{"version": "1", "sample_rate_hz": 50, "dim_names": ["ap", "ml", "vt"],
            "alignment_dim": "ml", "subjects": [{}]}}"#,
        entries.join(",\n")
    );
    let file = dir.join("manifest.json");
    fs::write(&file, manifest).unwrap();
    file
}

/// Reads a CSV into its header and rows of fields.
pub fn read_csv(p: &Path) -> (Vec<String>, Vec<Vec<String>>) {
    let mut r = csv::Reader::from_path(p).unwrap();
    let header = r.headers().unwrap().iter().map(str::to_owned).collect();
    let rows = r
        .records()
        .map(|rec| rec.unwrap().iter().map(str::to_owned).collect())
        .collect();
    (header, rows)
}

/// Every file below `dir` with its bytes, keyed by relative path.
pub fn snapshot(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_owned()];
    while let Some(d) = stack.pop() {
        for e in fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                let rel = p.strip_prefix(dir).unwrap().to_string_lossy().into_owned();
                out.push((rel, fs::read(&p).unwrap()));
            }
        }
    }
    out.sort();
    out
}

pub const SMALL_FIT_CONFIG: &str = r#"{
  "degrees": {"signal_candidates": [1, 2, 3], "residual_candidates": [1, 2, 3]},
  "em": {"n_starts": 10}
}"#;
