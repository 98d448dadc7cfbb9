//! `nagc`: corpus generation, sample extraction, training, evaluation and
//! completion from the command line.
//!
//! Exit codes: 0 success, 1 usage error, 2 data or runtime error.

use std::ffi::OsString;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use nag_core::attrgraph::augment_full_tree;
use nag_core::eval::{ablate, evaluate, AblationSetup, EvalConfig};
use nag_core::exec::Parallelism;
use nag_core::grammar::{builtin_grammar, load_grammar, Grammar};
use nag_core::model::{ConfigName, DecoderConfig, Dims, EncoderKind, Model, TrainConfig};
use nag_core::pipeline::lang::ExprCodec;
use nag_core::pipeline::{
    corpus_stats, dedup, extract_samples, generate_corpus, parse_ratio, read_jsonl, split, write_jsonl, Sample,
    SourceFile,
};

pub const USAGE_ERROR: i32 = 1;
pub const DATA_ERROR: i32 = 2;

#[derive(Parser, Debug)]
#[command(name = "nagc", version, about = "Expression completion with attribute-graph decoders")]
struct Cli {
    /// Run everything on one thread.
    #[arg(long, global = true)]
    sequential: bool,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand, Debug)]
enum Cmd {
    /// Write a synthetic corpus of MiniExpr functions.
    GenCorpus {
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 200)]
        files: usize,
        #[arg(long, default_value_t = 6)]
        stmts: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Turn every expression of a corpus into a hole-filling sample.
    Extract {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Keep duplicate samples.
        #[arg(long)]
        keep_duplicates: bool,
    },
    /// Split samples into train/valid/test without splitting files.
    Split {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long, default_value = "3:1:1")]
        ratio: String,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out_dir: PathBuf,
    },
    Train {
        #[arg(long)]
        data: PathBuf,
        #[arg(long, default_value = "nag")]
        config: String,
        #[arg(long, default_value = "graph")]
        encoder: String,
        #[arg(long, default_value_t = 20)]
        epochs: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long, default_value_t = 1e-3)]
        lr: f64,
        /// Grammar file; the built-in MiniExpr grammar by default.
        #[arg(long)]
        grammar: Option<PathBuf>,
    },
    Evaluate {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long, default_value_t = 5)]
        beam: usize,
        /// Also write the report here.
        #[arg(long)]
        report: Option<PathBuf>,
    },
    /// Ranked completions for one sample.
    Complete {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        sample: PathBuf,
        #[arg(long, default_value_t = 0)]
        index: usize,
        #[arg(long, default_value_t = 5)]
        beam: usize,
    },
    /// Attribute graph of a sample's target in DOT.
    GraphDot {
        #[arg(long)]
        sample: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0)]
        index: usize,
        #[arg(long, default_value = "nag")]
        config: String,
    },
    Grammar {
        /// Print the grammar in its text form.
        #[arg(long)]
        dump: bool,
        #[arg(long)]
        file: Option<PathBuf>,
    },
    /// Train and evaluate every decoder configuration.
    Ablate {
        #[arg(long)]
        train: PathBuf,
        #[arg(long)]
        test: PathBuf,
        #[arg(long, default_value_t = 10)]
        epochs: usize,
        #[arg(long, default_value = "0,1,2")]
        seeds: String,
        #[arg(long, default_value = "graph")]
        encoder: String,
        #[arg(long, default_value_t = 1e-3)]
        lr: f64,
        #[arg(long)]
        report: Option<PathBuf>,
    },
}

/// Error with the exit code it maps to.
#[derive(Debug)]
pub struct Failure {
    pub code: i32,
    pub message: String,
}

fn data<E: std::fmt::Display>(e: E) -> Failure {
    Failure {
        code: DATA_ERROR,
        message: e.to_string(),
    }
}

fn usage(msg: impl Into<String>) -> Failure {
    Failure {
        code: USAGE_ERROR,
        message: msg.into(),
    }
}

type CmdResult = Result<(), Failure>;

fn config_of(s: &str) -> Result<ConfigName, Failure> {
    ConfigName::parse(s).ok_or_else(|| usage(format!("unknown config `{s}` (tree, asn, syn, nag)")))
}

fn encoder_of(s: &str) -> Result<EncoderKind, Failure> {
    EncoderKind::parse(s).ok_or_else(|| usage(format!("unknown encoder `{s}` (seq, graph)")))
}

fn grammar_of(path: Option<&Path>) -> Result<Grammar, Failure> {
    match path {
        None => Ok(builtin_grammar()),
        Some(p) => load_grammar(&fs::read_to_string(p).map_err(|e| data(format!("{}: {e}", p.display())))?).map_err(data),
    }
}

fn load_samples(path: &Path, g: &Grammar) -> Result<Vec<Sample>, Failure> {
    let s = read_jsonl(path, g).map_err(|e| data(format!("{}: {e}", path.display())))?;
    if s.is_empty() {
        return Err(data(format!("{}: no samples", path.display())));
    }
    Ok(s)
}

fn pick(samples: &[Sample], index: usize) -> Result<&Sample, Failure> {
    samples
        .get(index)
        .ok_or_else(|| data(format!("sample index {index} out of range ({} samples)", samples.len())))
}

fn read_corpus(dir: &Path) -> Result<Vec<SourceFile>, Failure> {
    let mut paths: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(|e| data(format!("{}: {e}", dir.display())))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "mexp"))
        .collect();
    paths.sort();
    paths
        .into_iter()
        .map(|p| {
            let text = fs::read_to_string(&p).map_err(|e| data(format!("{}: {e}", p.display())))?;
            let name = p.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
            Ok(SourceFile { name, text })
        })
        .collect()
}

fn to_json<T: serde::Serialize>(v: &T) -> Result<String, Failure> {
    serde_json::to_string(v).map_err(data)
}

fn run_cmd(cli: Cli, out: &mut dyn Write, err: &mut dyn Write) -> CmdResult {
    let par = if cli.sequential { Parallelism::Sequential } else { Parallelism::Parallel };
    match cli.cmd {
        Cmd::GenCorpus { seed, files, stmts, out: dir } => {
            fs::create_dir_all(&dir).map_err(data)?;
            let corpus = generate_corpus(seed, files, stmts);
            for f in &corpus {
                fs::write(dir.join(&f.name), &f.text).map_err(data)?;
            }
            writeln!(out, "wrote {} files to {}", corpus.len(), dir.display()).map_err(data)?;
        }
        Cmd::Extract { input, out: path, keep_duplicates } => {
            let g = builtin_grammar();
            let files = read_corpus(&input)?;
            let (samples, diags) = extract_samples(&files, &g, par);
            for d in &diags {
                writeln!(err, "skipped {d}").map_err(data)?;
            }
            let raw = samples.len();
            let samples = if keep_duplicates { samples } else { dedup(samples) };
            write_jsonl(&samples, &path).map_err(data)?;
            writeln!(out, "{} samples ({} before deduplication) from {} files", samples.len(), raw, files.len())
                .map_err(data)?;
        }
        Cmd::Split { input, ratio, seed, out_dir } => {
            let g = builtin_grammar();
            let ratio = parse_ratio(&ratio).map_err(|e| usage(e.to_string()))?;
            let samples = load_samples(&input, &g)?;
            let folds = split(&samples, ratio, seed).map_err(data)?;
            fs::create_dir_all(&out_dir).map_err(data)?;
            for (k, name) in ["train", "valid", "test"].iter().enumerate() {
                write_jsonl(folds.get(k), &out_dir.join(format!("{name}.jsonl"))).map_err(data)?;
            }
            writeln!(out, "{}", to_json(&corpus_stats(&folds, &g))?).map_err(data)?;
        }
        Cmd::Train { data: path, config, encoder, epochs, seed, ckpt, lr, grammar } => {
            let config = config_of(&config)?;
            let encoder = encoder_of(&encoder)?;
            let g = grammar_of(grammar.as_deref())?;
            let samples = load_samples(&path, &g)?;
            let mut model = Model::for_data(&g, &samples, config, encoder, Dims::default(), seed).map_err(data)?;
            let preps = model.prepare(&samples, par).map_err(data)?;
            let mut tc = TrainConfig { epochs, seed, parallelism: par, ..TrainConfig::default() };
            tc.adam.learning_rate = lr;
            let stats = model.train(&preps, &tc).map_err(data)?;
            for s in &stats {
                writeln!(out, "{}", to_json(s)?).map_err(data)?;
            }
            model.save(&ckpt).map_err(data)?;
        }
        Cmd::Evaluate { data: path, ckpt, beam, report } => {
            let model = Model::load(&ckpt).map_err(data)?;
            let samples = load_samples(&path, &model.arch.grammar)?;
            let cfg = EvalConfig { beam, parallelism: par, ..EvalConfig::default() };
            let r = evaluate(&model, &samples, &cfg).map_err(data)?;
            let text = to_json(&r)?;
            if let Some(p) = report {
                fs::write(&p, format!("{text}\n")).map_err(data)?;
            }
            writeln!(out, "{text}").map_err(data)?;
        }
        Cmd::Complete { ckpt, sample, index, beam } => {
            let model = Model::load(&ckpt).map_err(data)?;
            let g = &model.arch.grammar;
            let samples = load_samples(&sample, g)?;
            let s = pick(&samples, index)?;
            let prep = model.arch.prepare(s).map_err(data)?;
            let decoded = model.arch.decode_beam(&model.params, &prep.ctx, beam, 50).map_err(data)?;
            let codec = ExprCodec::new(g);
            for h in &decoded.hypotheses {
                let text = codec.expr(g, &h.tree).map(|e| e.to_text()).map_err(data)?;
                writeln!(out, "{:6.1}%  {text}", 100.0 * h.log_prob.exp()).map_err(data)?;
            }
            if decoded.hypotheses.is_empty() {
                writeln!(err, "no complete hypothesis within the step limit").map_err(data)?;
            }
        }
        Cmd::GraphDot { sample, out: path, index, config } => {
            let g = builtin_grammar();
            let cfg = DecoderConfig::of(config_of(&config)?).graph;
            let samples = load_samples(&sample, &g)?;
            let s = pick(&samples, index)?;
            let tree = s.target_tree(&g).map_err(data)?;
            let graph = augment_full_tree(&g, &tree, &s.scope.names(), cfg).map_err(data)?;
            fs::write(&path, graph.export_dot()).map_err(data)?;
            writeln!(out, "{} nodes, {} edges", graph.len(), graph.edges().len()).map_err(data)?;
        }
        Cmd::Grammar { dump, file } => {
            let g = grammar_of(file.as_deref())?;
            if dump {
                write!(out, "{g}").map_err(data)?;
            } else {
                writeln!(
                    out,
                    "{} symbols, {} productions, fingerprint {}",
                    g.symbols().len(),
                    g.productions().len(),
                    g.fingerprint()
                )
                .map_err(data)?;
            }
        }
        Cmd::Ablate { train, test, epochs, seeds, encoder, lr, report } => {
            let g = builtin_grammar();
            let seeds = seeds
                .split(',')
                .map(|s| s.trim().parse::<u64>().map_err(|_| usage(format!("bad seed `{s}`"))))
                .collect::<Result<Vec<_>, _>>()?;
            let mut setup = AblationSetup {
                seeds,
                encoder: encoder_of(&encoder)?,
                eval: EvalConfig { parallelism: par, ..EvalConfig::default() },
                ..AblationSetup::default()
            };
            setup.train.epochs = epochs;
            setup.train.parallelism = par;
            setup.train.adam.learning_rate = lr;
            let tr = load_samples(&train, &g)?;
            let te = load_samples(&test, &g)?;
            let a = ablate(&g, &tr, &te, &setup).map_err(data)?;
            write!(out, "{}", a.table()).map_err(data)?;
            if let Some(p) = report {
                fs::write(&p, to_json(&a)?).map_err(data)?;
            }
        }
    }
    Ok(())
}

/// Runs `nagc` with `args` (program name first) and returns the exit code.
pub fn run<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { USAGE_ERROR } else { 0 };
            let text = e.render().to_string();
            let _ = if code == 0 { write!(out, "{text}") } else { write!(err, "{text}") };
            return code;
        }
    };
    match run_cmd(cli, out, err) {
        Ok(()) => 0,
        Err(f) => {
            let _ = writeln!(err, "error: {}", f.message);
            f.code
        }
    }
}
