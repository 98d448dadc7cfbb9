use std::collections::BTreeSet;
use std::fs;
use std::path::Path;
use std::process::Command;

use nag_core::grammar::{builtin_grammar, load_grammar};

const FIXTURE: &str = "fn f(int i, int j) {\n    int k = i + j;\n    return i - j;\n}\n";
const MINUS_ONLY: &str = "fn f(int i, int j) {\n    return i - j;\n}\n";

fn nagc(args: &[&str]) -> (i32, String, String) {
    let mut out = Vec::new();
    let mut err = Vec::new();
    let argv = std::iter::once("nagc").chain(args.iter().copied());
    let code = nagc::run(argv, &mut out, &mut err);
    (code, String::from_utf8(out).unwrap(), String::from_utf8(err).unwrap())
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

/// Writes `src` as a one-file corpus and extracts it to `name.jsonl`.
fn extracted(dir: &Path, name: &str, src: &str) -> std::path::PathBuf {
    let corpus = dir.join(format!("{name}_src"));
    fs::create_dir_all(&corpus).unwrap();
    fs::write(corpus.join("a.mexp"), src).unwrap();
    let out = dir.join(format!("{name}.jsonl"));
    let (code, _, err) = nagc(&["extract", "--in", p(&corpus), "--out", p(&out)]);
    assert_eq!(code, 0, "{err}");
    out
}

#[test]
fn usage_errors_exit_one_and_help_exits_zero() {
    assert_eq!(nagc(&["frobnicate"]).0, 1);
    assert_eq!(nagc(&["train", "--bogus"]).0, 1);
    assert_eq!(nagc(&["train", "--data", "x", "--ckpt", "y", "--config", "weird"]).0, 1);
    let (code, out, _) = nagc(&["--help"]);
    assert_eq!(code, 0);
    assert!(out.contains("evaluate"));
}

#[test]
fn missing_data_exits_two() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("nope.jsonl");
    let (code, _, err) = nagc(&["train", "--data", p(&missing), "--ckpt", p(&dir.path().join("m"))]);
    assert_eq!(code, 2);
    assert!(err.contains("nope.jsonl"));
    let (code, _, _) = nagc(&["evaluate", "--data", p(&missing), "--ckpt", p(&dir.path().join("m"))]);
    assert_eq!(code, 2);
}

#[test]
fn binary_reports_exit_codes() {
    let bin = env!("CARGO_BIN_EXE_nagc");
    assert_eq!(Command::new(bin).arg("--version").output().unwrap().status.code(), Some(0));
    assert_eq!(Command::new(bin).arg("nothing").output().unwrap().status.code(), Some(1));
}

#[test]
fn train_evaluate_complete() {
    let dir = tempfile::tempdir().unwrap();
    let data = extracted(dir.path(), "fx", FIXTURE);
    let ckpt = dir.path().join("model");
    let (code, out, err) = nagc(&["train", "--data", p(&data), "--ckpt", p(&ckpt), "--epochs", "3", "--lr", "5e-3"]);
    assert_eq!(code, 0, "{err}");
    assert_eq!(out.lines().count(), 3);

    let report = dir.path().join("report.json");
    let (code, out, err) = nagc(&["evaluate", "--data", p(&data), "--ckpt", p(&ckpt), "--report", p(&report)]);
    assert_eq!(code, 0, "{err}");
    assert_eq!(out.lines().count(), 1);
    let v: serde_json::Value = serde_json::from_str(out.trim()).unwrap();
    let keys: BTreeSet<&str> = v.as_object().unwrap().keys().map(String::as_str).collect();
    assert_eq!(
        keys,
        BTreeSet::from(["acc1", "acc5", "config", "n", "ppl_decision", "ppl_token", "seed", "well_typed", "well_typed_no_unk"])
    );
    assert_eq!(v["n"], 2);
    assert_eq!(fs::read_to_string(&report).unwrap().trim(), out.trim());

    let (code, out, err) = nagc(&["complete", "--ckpt", p(&ckpt), "--sample", p(&data), "--index", "1"]);
    assert_eq!(code, 0, "{err}");
    let lines: Vec<&str> = out.lines().collect();
    assert!(!lines.is_empty() && lines.len() <= 5);
    let mut prev = f64::INFINITY;
    let mut total = 0.0;
    for l in &lines {
        let (pct, expr) = l.split_once("%  ").unwrap_or_else(|| panic!("bad line {l:?}"));
        let pct: f64 = pct.trim().parse().unwrap();
        assert!(pct <= prev + 1e-9);
        prev = pct;
        total += pct;
        assert!(!expr.is_empty());
    }
    assert!(total <= 100.0 + 0.05 * lines.len() as f64);

    let (code, _, _) = nagc(&["complete", "--ckpt", p(&ckpt), "--sample", p(&data), "--index", "9"]);
    assert_eq!(code, 2);
}

#[test]
fn graph_dot_reproduces_the_minus_graph() {
    let dir = tempfile::tempdir().unwrap();
    let data = extracted(dir.path(), "m", MINUS_ONLY);
    let dot = dir.path().join("g.dot");
    let (code, out, err) = nagc(&["graph-dot", "--sample", p(&data), "--out", p(&dot)]);
    assert_eq!(code, 0, "{err}");
    assert_eq!(out.trim(), "11 nodes, 19 edges");
    let text = fs::read_to_string(&dot).unwrap();
    let mut got = Vec::new();
    for line in text.lines().filter(|l| l.contains("->")) {
        let (lhs, attrs) = line.trim().split_once(" [").unwrap();
        let (a, b) = lhs.split_once(" -> ").unwrap();
        let color = attrs.split([',', ']']).find_map(|s| s.trim().strip_prefix("color=")).unwrap();
        let num = |s: &str| s.trim_start_matches('n').parse::<usize>().unwrap();
        got.push((num(a), color.to_string(), num(b)));
    }
    got.sort();
    let mut want: Vec<(usize, String, usize)> = [
        (0, "red", 3),
        (3, "red", 4),
        (0, "red", 6),
        (0, "red", 7),
        (7, "red", 8),
        (1, "orange", 4),
        (2, "orange", 8),
        (4, "green", 5),
        (8, "green", 9),
        (5, "green", 10),
        (6, "green", 10),
        (9, "green", 10),
        (5, "black", 6),
        (6, "black", 7),
        (4, "blue", 6),
        (6, "blue", 8),
        (0, "gray", 10),
        (3, "gray", 5),
        (7, "gray", 9),
    ]
    .into_iter()
    .map(|(a, c, b)| (a, c.to_string(), b))
    .collect();
    want.sort();
    assert_eq!(got, want);
}

#[test]
fn grammar_dump_reparses() {
    let (code, out, _) = nagc(&["grammar", "--dump"]);
    assert_eq!(code, 0);
    let g = load_grammar(&out).unwrap();
    assert_eq!(g.fingerprint(), builtin_grammar().fingerprint());
    let dir = tempfile::tempdir().unwrap();
    let f = dir.path().join("g.txt");
    fs::write(&f, &out).unwrap();
    let (code, summary, _) = nagc(&["grammar", "--file", p(&f)]);
    assert_eq!(code, 0);
    assert!(summary.contains(&g.fingerprint().to_string()));
}

#[test]
fn gen_extract_split_pipeline() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = dir.path().join("corpus");
    let (code, _, err) = nagc(&["gen-corpus", "--seed", "3", "--files", "20", "--out", p(&corpus)]);
    assert_eq!(code, 0, "{err}");
    assert_eq!(fs::read_dir(&corpus).unwrap().count(), 20);
    let data = dir.path().join("all.jsonl");
    assert_eq!(nagc(&["--sequential", "extract", "--in", p(&corpus), "--out", p(&data)]).0, 0);
    let folds = dir.path().join("folds");
    let (code, out, err) = nagc(&["split", "--in", p(&data), "--out-dir", p(&folds)]);
    assert_eq!(code, 0, "{err}");
    serde_json::from_str::<serde_json::Value>(out.trim()).unwrap();
    let total: usize = ["train", "valid", "test"]
        .iter()
        .map(|n| fs::read_to_string(folds.join(format!("{n}.jsonl"))).unwrap().lines().count())
        .sum();
    assert_eq!(total, fs::read_to_string(&data).unwrap().lines().count());
    assert_eq!(nagc(&["split", "--in", p(&data), "--ratio", "1:2", "--out-dir", p(&folds)]).0, 1);
}

#[test]
fn repeated_runs_are_bit_identical() {
    let dir = tempfile::tempdir().unwrap();
    let data = extracted(dir.path(), "fx", FIXTURE);
    let mut files = Vec::new();
    for name in ["a", "b"] {
        let ckpt = dir.path().join(name);
        let (code, _, err) = nagc(&["train", "--data", p(&data), "--ckpt", p(&ckpt), "--epochs", "2", "--seed", "4"]);
        assert_eq!(code, 0, "{err}");
        files.push(ckpt);
    }
    assert_eq!(fs::read(&files[0]).unwrap(), fs::read(&files[1]).unwrap());
    let path = |f: &Path| nag_core::model::manifest_path(f);
    assert_eq!(fs::read(path(&files[0])).unwrap(), fs::read(path(&files[1])).unwrap());
    let eval = || nagc(&["evaluate", "--data", p(&data), "--ckpt", p(&files[0])]);
    let (a, b) = (eval(), eval());
    assert_eq!(a.0, 0);
    assert_eq!(a, b);
}
