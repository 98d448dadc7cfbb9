use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use nag_core::eval::{perplexity, EvalConfig};
use nag_core::exec::Parallelism;
use nag_core::grammar::builtin_grammar;
use nag_core::model::{ConfigName, Dims, EncoderKind, Model, TrainConfig};
use nag_core::pipeline::{dedup, extract_samples, generate_corpus, Sample};
use nag_tensor::OptState;

const MODES: [(&str, Parallelism); 2] = [("sequential", Parallelism::Sequential), ("parallel", Parallelism::Parallel)];

fn dims() -> Dims {
    Dims {
        hidden: 32,
        embed: 16,
        edge_label: 8,
        attention: 32,
        gnn_steps: 4,
    }
}

fn samples(n: usize) -> Vec<Sample> {
    let g = builtin_grammar();
    let (s, _) = extract_samples(&generate_corpus(1, 200, 6), &g, Parallelism::Sequential);
    dedup(s).into_iter().take(n).collect()
}

fn extraction(c: &mut Criterion) {
    let g = builtin_grammar();
    let files = generate_corpus(2, 200, 6);
    let mut group = c.benchmark_group("extract");
    for (name, par) in MODES {
        group.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| extract_samples(black_box(&files), &g, par))
        });
    }
    group.finish();
}

fn training_step(c: &mut Criterion) {
    let data = samples(40);
    let g = builtin_grammar();
    let mut group = c.benchmark_group("train_step");
    group.sample_size(10);
    for (name, par) in MODES {
        let mut model = Model::for_data(&g, &data, ConfigName::Nag, EncoderKind::Graph, dims(), 0).unwrap();
        let preps = model.prepare(&data, par).unwrap();
        let refs: Vec<_> = preps.iter().collect();
        let cfg = TrainConfig {
            batch: refs.len(),
            parallelism: par,
            ..TrainConfig::default()
        };
        let mut opt = OptState::new(&model.params, cfg.adam);
        group.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| model.step(&mut opt, black_box(&refs), &cfg).unwrap())
        });
    }
    group.finish();
}

fn evaluation(c: &mut Criterion) {
    let data = samples(60);
    let model = Model::for_data(&builtin_grammar(), &data, ConfigName::Nag, EncoderKind::Graph, dims(), 0).unwrap();
    let preps = model.prepare(&data, Parallelism::Sequential).unwrap();
    let mut group = c.benchmark_group("perplexity");
    group.sample_size(10);
    for (name, par) in MODES {
        let cfg = EvalConfig {
            parallelism: par,
            ..EvalConfig::default()
        };
        group.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| perplexity(&model, black_box(&preps), &cfg).unwrap())
        });
    }
    group.finish();
}

criterion_group!(benches, extraction, training_step, evaluation);
criterion_main!(benches);
