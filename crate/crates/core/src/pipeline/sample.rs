use std::collections::{BTreeMap, HashMap, HashSet};
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::corpus::SourceFile;
use super::lang::{is_variable_token, parse_program, ExprCodec, HOLE, METHODS};
use crate::exec::Parallelism;
use crate::grammar::{type_report, Grammar, MiniType, TypeEnv};
use crate::syntax::{parse_steps, tree_from_text, PartialAst, Step};

/// Tokens on each side of a variable usage.
pub const USAGE_WINDOW: usize = 5;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Side {
    Before,
    After,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Usage {
    pub side: Side,
    pub window: Vec<String>,
}

/// One hole to fill: the context around a removed expression and the
/// expression itself as a decision sequence.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Sample {
    pub file: String,
    pub before: Vec<String>,
    pub after: Vec<String>,
    pub hole_type: MiniType,
    pub scope: TypeEnv,
    pub usages: BTreeMap<String, Vec<Usage>>,
    pub target: String,
}

impl Sample {
    /// `before`, the hole marker, then `after`.
    pub fn context_with_hole(&self) -> Vec<String> {
        let mut v = Vec::with_capacity(self.before.len() + self.after.len() + 1);
        v.extend(self.before.iter().cloned());
        v.push(HOLE.to_string());
        v.extend(self.after.iter().cloned());
        v
    }

    /// Context tokens without the hole marker.
    pub fn context_tokens(&self) -> impl Iterator<Item = &String> {
        self.before.iter().chain(&self.after)
    }

    pub fn target_tree(&self, g: &Grammar) -> Result<PartialAst, PipelineError> {
        tree_from_text(g, &self.target).map_err(|e| PipelineError::Invalid(e.to_string()))
    }

    /// Checks the sample invariants against `g`.
    pub fn validate(&self, g: &Grammar) -> Result<(), PipelineError> {
        let tree = self.target_tree(g)?;
        for v in tree.variables() {
            if !self.scope.contains(&v) {
                return Err(PipelineError::Invalid(format!("target uses `{v}` outside the scope")));
            }
        }
        let r = type_report(g, &tree, &self.scope);
        if !r.errors.is_empty() || r.ty != Some(self.hole_type) {
            return Err(PipelineError::Invalid(format!(
                "target does not have hole type {} ({:?})",
                self.hole_type, r.errors
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("line {line}: {msg}")]
    Malformed { line: usize, msg: String },
    #[error("invalid sample: {0}")]
    Invalid(String),
    #[error("need at least 5 source files to split, found {0}")]
    TooFewFiles(usize),
    #[error("bad ratio `{0}`")]
    BadRatio(String),
}

fn usages_of(tokens: &[String], hole_at: usize, scope: &TypeEnv) -> BTreeMap<String, Vec<Usage>> {
    let mut out: BTreeMap<String, Vec<Usage>> = BTreeMap::new();
    for (name, _) in scope.iter() {
        out.insert(name.to_string(), Vec::new());
    }
    for (i, t) in tokens.iter().enumerate() {
        if let Some(list) = out.get_mut(t) {
            let lo = i.saturating_sub(USAGE_WINDOW);
            let hi = (i + USAGE_WINDOW + 1).min(tokens.len());
            list.push(Usage {
                side: if i < hole_at { Side::Before } else { Side::After },
                window: tokens[lo..hi].to_vec(),
            });
        }
    }
    out
}

/// Samples of one file, in statement order.
pub fn extract_file(file: &SourceFile, g: &Grammar, codec: &ExprCodec) -> Result<Vec<Sample>, String> {
    let p = parse_program(&file.text).map_err(|e| format!("{}: {e}", file.name))?;
    let mut out = Vec::new();
    for s in p.sites() {
        let env: TypeEnv = s.scope.iter().cloned().collect();
        let Ok(tree) = codec.tree(g, &s.site.expr) else { continue };
        let r = type_report(g, &tree, &env);
        let Some(ty) = r.ty.filter(|_| r.errors.is_empty()) else { continue };
        let (start, end) = (s.site.start, s.site.end);
        let mut ctx: Vec<String> = p.tokens[..start].to_vec();
        ctx.push(HOLE.to_string());
        ctx.extend_from_slice(&p.tokens[end..]);
        out.push(Sample {
            file: file.name.clone(),
            before: p.tokens[..start].to_vec(),
            after: p.tokens[end..].to_vec(),
            hole_type: ty,
            usages: usages_of(&ctx, start, &env),
            scope: env,
            target: tree.decision_text(),
        });
    }
    Ok(out)
}

/// Samples of every parseable file, merged in file order, plus one
/// diagnostic per skipped file.
pub fn extract_samples(files: &[SourceFile], g: &Grammar, par: Parallelism) -> (Vec<Sample>, Vec<String>) {
    let codec = ExprCodec::new(g);
    let results = par.map(files, |f| extract_file(f, g, &codec));
    let mut samples = Vec::new();
    let mut diags = Vec::new();
    for r in results {
        match r {
            Ok(s) => samples.extend(s),
            Err(d) => diags.push(d),
        }
    }
    (samples, diags)
}

/// Identity up to a consistent renaming of identifiers.
pub fn canonical_key(s: &Sample) -> (Vec<String>, String) {
    let mut names: HashMap<String, usize> = HashMap::new();
    let mut canon = |t: &str| -> Option<String> {
        if is_variable_token(t) && t != "Length" && !METHODS.iter().any(|(m, _)| *m == t) {
            let k = names.len();
            Some(format!("#{}", names.entry(t.to_string()).or_insert(k)))
        } else {
            None
        }
    };
    let ctx: Vec<String> = s.context_with_hole().iter().map(|t| canon(t).unwrap_or_else(|| t.clone())).collect();
    let target: Vec<String> = match parse_steps(&s.target) {
        Ok(steps) => steps
            .into_iter()
            .map(|st| match st {
                Step::Variable(v) => format!("V{}", canon(&v).unwrap_or(v)),
                other => other.to_string(),
            })
            .collect(),
        Err(_) => vec![s.target.clone()],
    };
    let mut bag = ctx;
    bag.sort();
    (bag, target.join(" "))
}

/// Keeps the first sample of every canonical-key class.
pub fn dedup(samples: Vec<Sample>) -> Vec<Sample> {
    let mut seen = HashSet::new();
    samples.into_iter().filter(|s| seen.insert(canonical_key(s))).collect()
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Folds {
    pub train: Vec<Sample>,
    pub valid: Vec<Sample>,
    pub test: Vec<Sample>,
}

impl Folds {
    pub fn get(&self, k: usize) -> &[Sample] {
        match k {
            0 => &self.train,
            1 => &self.valid,
            _ => &self.test,
        }
    }
}

pub fn parse_ratio(s: &str) -> Result<[f64; 3], PipelineError> {
    let parts: Vec<f64> = s.split(':').map(|p| p.trim().parse::<f64>()).collect::<Result<_, _>>().map_err(|_| PipelineError::BadRatio(s.into()))?;
    match parts[..] {
        [a, b, c] if a >= 0.0 && b >= 0.0 && c >= 0.0 && a + b + c > 0.0 => Ok([a, b, c]),
        _ => Err(PipelineError::BadRatio(s.into())),
    }
}

/// File-level split: files are shuffled, then each goes to the fold whose
/// sample count lags its target share the most.
pub fn split(samples: &[Sample], ratio: [f64; 3], seed: u64) -> Result<Folds, PipelineError> {
    let mut files: Vec<&str> = Vec::new();
    let mut by_file: HashMap<&str, Vec<&Sample>> = HashMap::new();
    for s in samples {
        let e = by_file.entry(s.file.as_str()).or_default();
        if e.is_empty() {
            files.push(&s.file);
        }
        e.push(s);
    }
    if files.len() < 5 {
        return Err(PipelineError::TooFewFiles(files.len()));
    }
    let total_ratio: f64 = ratio.iter().sum();
    let share = ratio.map(|r| r / total_ratio);
    files.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut counts = [0usize; 3];
    let mut assign: HashMap<&str, usize> = HashMap::new();
    for f in files {
        let n = by_file[f].len();
        let after: usize = counts.iter().sum::<usize>() + n;
        let mut best = 0;
        let mut best_def = f64::NEG_INFINITY;
        for k in 0..3 {
            let deficit = share[k] * after as f64 - counts[k] as f64;
            if deficit > best_def + 1e-12 {
                best = k;
                best_def = deficit;
            }
        }
        counts[best] += n;
        assign.insert(f, best);
    }
    let mut folds = Folds::default();
    for s in samples {
        match assign[s.file.as_str()] {
            0 => folds.train.push(s.clone()),
            1 => folds.valid.push(s.clone()),
            _ => folds.test.push(s.clone()),
        }
    }
    Ok(folds)
}

pub fn write_jsonl(samples: &[Sample], path: &Path) -> Result<(), PipelineError> {
    let mut w = BufWriter::new(File::create(path)?);
    for s in samples {
        serde_json::to_writer(&mut w, s).map_err(|e| PipelineError::Invalid(e.to_string()))?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

/// Reads and validates samples; blank lines are skipped.
pub fn read_jsonl(path: &Path, g: &Grammar) -> Result<Vec<Sample>, PipelineError> {
    let r = BufReader::new(File::open(path)?);
    let mut out = Vec::new();
    for (i, line) in r.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let s: Sample =
            serde_json::from_str(&line).map_err(|e| PipelineError::Malformed { line: i + 1, msg: e.to_string() })?;
        s.validate(g).map_err(|e| PipelineError::Malformed { line: i + 1, msg: e.to_string() })?;
        out.push(s);
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CorpusStats {
    pub samples: usize,
    pub tokens_mean: f64,
    pub tokens_std: f64,
    pub steps_mean: f64,
    pub steps_std: f64,
    pub folds: [usize; 3],
}

fn mean_std(xs: &[f64]) -> (f64, f64) {
    if xs.is_empty() {
        return (0.0, 0.0);
    }
    let n = xs.len() as f64;
    let m = xs.iter().sum::<f64>() / n;
    let v = xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / n;
    (m, v.sqrt())
}

pub fn corpus_stats(folds: &Folds, g: &Grammar) -> CorpusStats {
    let all: Vec<&Sample> = folds.train.iter().chain(&folds.valid).chain(&folds.test).collect();
    let mut toks = Vec::new();
    let mut steps = Vec::new();
    for s in &all {
        if let Ok(t) = s.target_tree(g) {
            toks.push(t.tokens(g).map(|v| v.len()).unwrap_or(0) as f64);
            steps.push(t.history().len() as f64);
        }
    }
    let (tokens_mean, tokens_std) = mean_std(&toks);
    let (steps_mean, steps_std) = mean_std(&steps);
    CorpusStats {
        samples: all.len(),
        tokens_mean,
        tokens_std,
        steps_mean,
        steps_std,
        folds: [folds.train.len(), folds.valid.len(), folds.test.len()],
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grammar::builtin_grammar;
    use crate::pipeline::corpus::generate_corpus;

    fn file(name: &str, text: &str) -> SourceFile {
        SourceFile { name: name.into(), text: text.into() }
    }

    #[test]
    fn one_expression_one_sample() {
        let g = builtin_grammar();
        let codec = ExprCodec::new(&g);
        let s = extract_file(&file("f", "fn f(int i, int j) { return i - j; }"), &g, &codec).unwrap();
        assert_eq!(s.len(), 1);
        assert_eq!(s[0].target, "P5 P0 Vi P0 Vj");
        assert_eq!(s[0].hole_type, MiniType::Int);
        assert_eq!(s[0].after, [";", "}"]);
        assert_eq!(s[0].usages["i"].len(), 1);
        s[0].validate(&g).unwrap();
    }

    #[test]
    fn alpha_equivalent_samples_collapse() {
        let g = builtin_grammar();
        let codec = ExprCodec::new(&g);
        let a = extract_file(&file("a", "fn f(int i) { return i + 1; }"), &g, &codec).unwrap();
        let b = extract_file(&file("b", "fn h(int q) { return q + 1; }"), &g, &codec).unwrap();
        let c = extract_file(&file("c", "fn h(int q) { return q + 2; }"), &g, &codec).unwrap();
        let all: Vec<Sample> = a.into_iter().chain(b).chain(c).collect();
        let d = dedup(all.clone());
        assert_eq!(d.len(), 2);
        assert_eq!(dedup(d.clone()), d);
    }

    #[test]
    fn five_equal_files_split_3_1_1() {
        let g = builtin_grammar();
        let codec = ExprCodec::new(&g);
        let mut all = Vec::new();
        for i in 0..5 {
            all.extend(extract_file(&file(&format!("{i}"), "fn f(int i) { return i; }"), &g, &codec).unwrap());
        }
        let f = split(&all, [3.0, 1.0, 1.0], 9).unwrap();
        assert_eq!([f.train.len(), f.valid.len(), f.test.len()], [3, 1, 1]);
        assert!(matches!(split(&all[..4], [3.0, 1.0, 1.0], 9), Err(PipelineError::TooFewFiles(4))));
    }

    #[test]
    fn corpus_yields_enough_samples() {
        let g = builtin_grammar();
        let files = generate_corpus(1, 200, 6);
        let (s, diags) = extract_samples(&files, &g, Parallelism::Parallel);
        assert!(diags.is_empty());
        assert!(s.len() >= 1000, "{}", s.len());
        for x in &s {
            x.validate(&g).unwrap();
        }
        let (again, _) = extract_samples(&files, &g, Parallelism::Sequential);
        assert_eq!(s, again);
    }

    #[test]
    fn ratio_parsing() {
        assert_eq!(parse_ratio("3:1:1").unwrap(), [3.0, 1.0, 1.0]);
        assert!(parse_ratio("3:1").is_err());
        assert!(parse_ratio("a:b:c").is_err());
    }
}
