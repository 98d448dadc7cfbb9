mod common;

use std::collections::{BTreeSet, HashMap};

use nag_core::exec::Parallelism;
use nag_core::grammar::{type_check, MiniType};
use nag_core::pipeline::lang::parse_program;
use nag_core::pipeline::{
    dedup, extract_samples, generate_corpus, parse_ratio, read_jsonl, split, write_jsonl, PipelineError, Sample,
};

#[test]
fn generated_corpus_is_deterministic_and_well_typed() {
    let g = common::grammar();
    let a = generate_corpus(5, 40, 6);
    assert_eq!(a, generate_corpus(5, 40, 6));
    assert_ne!(a, generate_corpus(6, 40, 6));
    for f in &a {
        parse_program(&f.text).unwrap().check(&g).unwrap_or_else(|e| panic!("{}: {e}", f.name));
    }
}

#[test]
fn two_hundred_files_give_a_thousand_samples() {
    let n = common::corpus(0, 200, 6).len();
    assert!(n >= 1000, "only {n} samples");
}

#[test]
fn extraction_is_deterministic_across_schedules() {
    let g = common::grammar();
    let files = generate_corpus(2, 60, 6);
    let (a, da) = extract_samples(&files, &g, Parallelism::Sequential);
    let (b, db) = extract_samples(&files, &g, Parallelism::Parallel);
    assert!(da.is_empty() && db.is_empty());
    assert_eq!(a, b);
    assert_eq!(a, extract_samples(&files, &g, Parallelism::Sequential).0);
}

/// Variables of a decision string, read straight off its `V` steps.
fn target_vars(target: &str) -> BTreeSet<String> {
    target.split_whitespace().filter_map(|w| w.strip_prefix('V')).map(str::to_string).collect()
}

#[test]
fn samples_satisfy_their_invariants() {
    let g = common::grammar();
    let samples = common::corpus(1, 200, 6);
    let mut types = BTreeSet::new();
    for s in &samples {
        let t = s.target_tree(&g).unwrap();
        assert_eq!(type_check(&g, &t, &s.scope), Ok(s.hole_type), "{}", s.target);
        for v in target_vars(&s.target) {
            assert!(s.scope.contains(&v), "{v} not in scope of {}", s.target);
        }
        for (name, uses) in &s.usages {
            assert!(s.scope.contains(name));
            for u in uses {
                assert!(u.window.contains(name));
            }
        }
        s.validate(&g).unwrap();
        types.insert(s.hole_type);
    }
    assert_eq!(types, BTreeSet::from([MiniType::Int, MiniType::Bool, MiniType::String]));
}

#[test]
fn one_eligible_expression_gives_one_sample() {
    let s = common::samples_of("fn f(int i) {\n    return i;\n}\n");
    assert_eq!(s.len(), 1);
    assert_eq!(s[0].target, "P0 Vi");
    assert_eq!(s[0].hole_type, MiniType::Int);
}

#[test]
fn jsonl_round_trip() {
    let g = common::grammar();
    let samples: Vec<Sample> = common::corpus(3, 120, 6).into_iter().take(500).collect();
    assert_eq!(samples.len(), 500);
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("s.jsonl");
    write_jsonl(&samples, &p).unwrap();
    assert_eq!(read_jsonl(&p, &g).unwrap(), samples);
    let text = std::fs::read_to_string(&p).unwrap();
    assert_eq!(text.lines().count(), 500);
    let first: serde_json::Value = serde_json::from_str(text.lines().next().unwrap()).unwrap();
    let keys: BTreeSet<&str> = first.as_object().unwrap().keys().map(String::as_str).collect();
    assert_eq!(keys, BTreeSet::from(["file", "before", "after", "hole_type", "scope", "usages", "target"]));
}

#[test]
fn jsonl_edge_cases() {
    let g = common::grammar();
    let dir = tempfile::tempdir().unwrap();
    let empty = dir.path().join("empty.jsonl");
    std::fs::write(&empty, "").unwrap();
    assert!(read_jsonl(&empty, &g).unwrap().is_empty());

    let samples = common::samples_of(common::FIXTURE_SRC);
    let p = dir.path().join("cut.jsonl");
    write_jsonl(&samples, &p).unwrap();
    let mut text = std::fs::read_to_string(&p).unwrap();
    text.truncate(text.len() - 10);
    std::fs::write(&p, &text).unwrap();
    let line = samples.len();
    match read_jsonl(&p, &g) {
        Err(e @ PipelineError::Malformed { .. }) => {
            assert!(matches!(e, PipelineError::Malformed { line: l, .. } if l == line));
            assert!(e.to_string().contains(&format!("line {line}")));
        }
        other => panic!("expected a malformed-line error, got {other:?}"),
    }

    // A sample whose target uses a variable outside the scope is rejected on load.
    let mut bad = samples[0].clone();
    bad.target = "P0 Vzz".into();
    let q = dir.path().join("bad.jsonl");
    write_jsonl(&[bad], &q).unwrap();
    assert!(matches!(read_jsonl(&q, &g), Err(PipelineError::Malformed { line: 1, .. })));
}

#[test]
fn dedup_drops_alpha_equivalent_samples() {
    let a = common::samples_of("fn f(int i, int j) {\n    return i - j;\n}\n");
    let b = common::samples_of("fn g(int x, int y) {\n    return x - y;\n}\n");
    let c = common::samples_of("fn g(int x, int y) {\n    return y - x;\n}\n");
    assert_eq!(dedup([a.clone(), b].concat()), a);
    assert_eq!(dedup([a.clone(), c.clone()].concat()), [a, c].concat());
}

#[test]
fn dedup_is_idempotent() {
    let g = common::grammar();
    let (raw, _) = extract_samples(&generate_corpus(4, 150, 6), &g, Parallelism::Sequential);
    let once = dedup(raw.clone());
    assert!(once.len() < raw.len());
    assert_eq!(dedup(once.clone()), once);
}

#[test]
fn split_respects_files_and_ratio() {
    let ratio = parse_ratio("3:1:1").unwrap();
    for seed in 0..10u64 {
        let samples = common::corpus(100 + seed, 180, 6);
        assert!((900..2000).contains(&samples.len()), "{}", samples.len());
        let folds = split(&samples, ratio, seed).unwrap();
        let mut owner: HashMap<&str, usize> = HashMap::new();
        for k in 0..3 {
            for s in folds.get(k) {
                assert_eq!(*owner.entry(s.file.as_str()).or_insert(k), k, "file {} spans folds", s.file);
            }
        }
        let n = samples.len() as f64;
        assert_eq!(folds.train.len() + folds.valid.len() + folds.test.len(), samples.len());
        for (k, want) in [0.6, 0.2, 0.2].into_iter().enumerate() {
            let got = folds.get(k).len() as f64 / n;
            assert!((got - want).abs() <= 0.1 * want, "seed {seed} fold {k}: {got:.3} vs {want}");
        }
    }
}

#[test]
fn five_equal_files_split_three_one_one() {
    let mut samples = Vec::new();
    for k in 0..5 {
        let mut s = common::samples_of("fn f(int i) {\n    return i;\n}\n");
        s[0].file = format!("f{k}");
        samples.extend(s);
    }
    let folds = split(&samples, [3.0, 1.0, 1.0], 9).unwrap();
    assert_eq!([folds.train.len(), folds.valid.len(), folds.test.len()], [3, 1, 1]);
    assert!(matches!(split(&samples[..4], [3.0, 1.0, 1.0], 9), Err(PipelineError::TooFewFiles(4))));
}

#[test]
fn ratio_parsing() {
    assert_eq!(parse_ratio("3:1:1").unwrap(), [3.0, 1.0, 1.0]);
    assert!(parse_ratio("3:1").is_err());
    assert!(parse_ratio("a:b:c").is_err());
    assert!(parse_ratio("0:0:0").is_err());
}
