//! Synthetic corpus, sample extraction, deduplication, splits and storage.

pub mod corpus;
pub mod lang;
mod sample;

pub use corpus::{generate_corpus, generate_file, SourceFile};
pub use sample::{
    canonical_key, corpus_stats, dedup, extract_file, extract_samples, parse_ratio, read_jsonl, split, write_jsonl,
    CorpusStats, Folds, PipelineError, Sample, Side, Usage, USAGE_WINDOW,
};
