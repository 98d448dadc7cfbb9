#![allow(dead_code)]

use nag_core::attrgraph::EdgeType;
use nag_core::exec::Parallelism;
use nag_core::grammar::{builtin_grammar, Grammar};
use nag_core::model::{ConfigName, ContextInput, Dims, EncoderKind, Model, TokenVocab};
use nag_core::pipeline::lang::ExprCodec;
use nag_core::pipeline::{dedup, extract_file, extract_samples, generate_corpus, Sample, SourceFile};
use nag_tensor::{ParamStore, Real, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// `i - j` as a decision sequence.
pub const MINUS: &str = "P5 P0 Vi P0 Vj";

pub const FIXTURE_SRC: &str = "fn f(int i, int j) {\n    int k = i + j;\n    return i - j;\n}\n";

/// Edges of the `i - j` example: Child, NextUse, Parent, NextSibling,
/// NextToken, then the three InhToSyn edges.
pub fn minus_edges() -> Vec<(usize, EdgeType, usize)> {
    use EdgeType::*;
    let mut v = vec![
        (0, Child, 3),
        (3, Child, 4),
        (0, Child, 6),
        (0, Child, 7),
        (7, Child, 8),
        (1, NextUse, 4),
        (2, NextUse, 8),
        (4, Parent, 5),
        (8, Parent, 9),
        (5, Parent, 10),
        (6, Parent, 10),
        (9, Parent, 10),
        (5, NextSibling, 6),
        (6, NextSibling, 7),
        (4, NextToken, 6),
        (6, NextToken, 8),
        (0, InhToSyn, 10),
        (3, InhToSyn, 5),
        (7, InhToSyn, 9),
    ];
    v.sort();
    v
}

pub fn tiny_dims() -> Dims {
    Dims {
        hidden: 8,
        embed: 6,
        edge_label: 4,
        attention: 6,
        gnn_steps: 3,
    }
}

pub fn file(name: &str, text: &str) -> SourceFile {
    SourceFile {
        name: name.to_string(),
        text: text.to_string(),
    }
}

/// Samples of one source text, in statement order.
pub fn samples_of(text: &str) -> Vec<Sample> {
    let g = builtin_grammar();
    extract_file(&file("fixture.mexp", text), &g, &ExprCodec::new(&g)).unwrap()
}

/// The sample whose target is `i - j`.
pub fn minus_sample() -> Sample {
    let g = builtin_grammar();
    samples_of(FIXTURE_SRC)
        .into_iter()
        .find(|s| s.target_tree(&g).unwrap().decision_text() == MINUS)
        .expect("fixture has an `i - j` hole")
}

/// Deduplicated samples of a generated corpus.
pub fn corpus(seed: u64, files: usize, stmts: usize) -> Vec<Sample> {
    let g = builtin_grammar();
    let (s, diags) = extract_samples(&generate_corpus(seed, files, stmts), &g, Parallelism::Sequential);
    assert!(diags.is_empty(), "{diags:?}");
    dedup(s)
}

pub fn model(samples: &[Sample], config: ConfigName, encoder: EncoderKind, dims: Dims, seed: u64) -> Model {
    Model::for_data(&builtin_grammar(), samples, config, encoder, dims, seed).unwrap()
}

/// Every entry redrawn uniformly from `±scale`, biases included.
pub fn scramble<F: Real>(store: &ParamStore<F>, seed: u64, scale: f64) -> ParamStore<F> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    ParamStore::from_tensors(store.iter().map(|(n, t)| {
        let v = (0..t.len()).map(|_| F::of(rng.gen_range(-scale..scale))).collect();
        (n.to_string(), Tensor::new(t.shape().to_vec(), v).unwrap())
    }))
    .unwrap()
}

/// Hand-built sequence-encoder input: every token maps to `<unk>`, every
/// variable to the learned default.
pub fn bare_context(scope: &[&str], spellings: &[&str]) -> ContextInput {
    let mut ids = vec![0; spellings.len()];
    ids.insert(0, 1);
    ContextInput {
        ids,
        hole: 0,
        spellings: spellings.iter().map(|s| s.to_string()).collect(),
        scope: scope.iter().map(|s| s.to_string()).collect(),
        usages: vec![Vec::new(); scope.len()],
        graph: None,
        decls: Vec::new(),
    }
}

pub fn empty_vocab() -> TokenVocab {
    TokenVocab::build(&[])
}

pub fn grammar() -> Grammar {
    builtin_grammar()
}

pub fn grammar_strings(words: &[&str]) -> Vec<String> {
    words.iter().map(|s| s.to_string()).collect()
}
