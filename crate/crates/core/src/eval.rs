//! Perplexity, well-typedness, exact-match accuracy and ablation runs.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::exec::Parallelism;
use crate::grammar::{type_report, Grammar};
use crate::model::{ConfigName, Dims, EncoderKind, Model, ModelError, Prepared, Result, TrainConfig};
use crate::pipeline::Sample;
use crate::syntax::tree_from_text;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub ppl_decision: f64,
    pub ppl_token: f64,
    pub well_typed: f64,
    pub well_typed_no_unk: f64,
    pub acc1: f64,
    pub acc5: f64,
    pub n: usize,
    pub config: String,
    pub seed: u64,
}

#[derive(Clone, Copy, Debug)]
pub struct EvalConfig {
    pub beam: usize,
    pub max_steps: usize,
    /// Samples per teacher-forcing tape.
    pub chunk: usize,
    pub parallelism: Parallelism,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            beam: 5,
            max_steps: 50,
            chunk: 10,
            parallelism: Parallelism::default(),
        }
    }
}

/// Decoding outcome of one sample.
#[derive(Clone, Debug, PartialEq)]
pub struct Outcome {
    pub well_typed: bool,
    /// Ill-typed only because of an UNK literal.
    pub unk_only: bool,
    /// Rank of the ground truth among the hypotheses.
    pub rank: Option<usize>,
    pub discarded: usize,
}

/// Summed NLL, decision count and target-token count.
pub fn nll_totals(model: &Model, preps: &[Prepared], cfg: &EvalConfig) -> Result<(f64, usize, usize)> {
    let chunks: Vec<Vec<&Prepared>> = preps.chunks(cfg.chunk.max(1)).map(|c| c.iter().collect()).collect();
    let losses = cfg.parallelism.map(&chunks, |c| model.arch.step_losses(&model.params, c));
    let mut nll = 0.0;
    let mut decisions = 0;
    for l in losses {
        for s in l? {
            nll += s.total();
            decisions += s.steps.len();
        }
    }
    let tokens = preps.iter().map(|p| p.target_tokens).sum();
    Ok((nll, decisions, tokens))
}

/// Per-decision and per-token perplexity.
pub fn perplexity(model: &Model, preps: &[Prepared], cfg: &EvalConfig) -> Result<(f64, f64)> {
    if preps.is_empty() {
        return Err(ModelError::EmptyData);
    }
    let (nll, d, t) = nll_totals(model, preps, cfg)?;
    Ok(((nll / d.max(1) as f64).exp(), (nll / t.max(1) as f64).exp()))
}

fn outcome(g: &Grammar, model: &Model, sample: &Sample, prep: &Prepared, cfg: &EvalConfig) -> Result<Outcome> {
    let decoded = model.arch.decode_beam(&model.params, &prep.ctx, cfg.beam, cfg.max_steps)?;
    let target = prep.tree.decision_text();
    let mut rank = None;
    for (i, h) in decoded.hypotheses.iter().enumerate() {
        let text = h.tree.decision_text();
        let back = tree_from_text(g, &text).map_err(|e| ModelError::Sample(format!("decoded `{text}` is invalid: {e}")))?;
        if back.decision_text() != text {
            return Err(ModelError::Sample(format!("decoded `{text}` does not round-trip")));
        }
        if rank.is_none() && text == target {
            rank = Some(i);
        }
    }
    let (well_typed, unk_only) = match decoded.hypotheses.first() {
        Some(h) => {
            let r = type_report(g, &h.tree, &sample.scope);
            (r.well_typed(sample.hole_type), r.unk_only_failure(sample.hole_type))
        }
        None => (false, false),
    };
    Ok(Outcome {
        well_typed,
        unk_only,
        rank,
        discarded: decoded.discarded,
    })
}

/// Beam-decodes every sample.
pub fn outcomes(model: &Model, samples: &[Sample], preps: &[Prepared], cfg: &EvalConfig) -> Result<Vec<Outcome>> {
    let g = &model.arch.grammar;
    let pairs: Vec<(&Sample, &Prepared)> = samples.iter().zip(preps).collect();
    cfg.parallelism
        .map(&pairs, |(s, p)| outcome(g, model, s, p, cfg))
        .into_iter()
        .collect()
}

/// Well-typed rate of the top hypothesis, and the rate once UNK-only
/// failures are set aside.
pub fn well_typed_rates(outcomes: &[Outcome]) -> (f64, f64) {
    let n = outcomes.len();
    if n == 0 {
        return (0.0, 0.0);
    }
    let ok = outcomes.iter().filter(|o| o.well_typed).count();
    let unk = outcomes.iter().filter(|o| o.unk_only).count();
    let rate = ok as f64 / n as f64;
    let filtered = if n > unk { ok as f64 / (n - unk) as f64 } else { rate };
    (rate, filtered)
}

/// Fraction of samples whose ground truth is among the first `k` hypotheses.
pub fn accuracy_at(outcomes: &[Outcome], k: usize) -> f64 {
    if outcomes.is_empty() {
        return 0.0;
    }
    outcomes.iter().filter(|o| o.rank.is_some_and(|r| r < k)).count() as f64 / outcomes.len() as f64
}

pub fn evaluate(model: &Model, samples: &[Sample], cfg: &EvalConfig) -> Result<EvalReport> {
    if samples.is_empty() {
        return Err(ModelError::EmptyData);
    }
    let preps = model.prepare(samples, cfg.parallelism)?;
    let (ppl_decision, ppl_token) = perplexity(model, &preps, cfg)?;
    let outs = outcomes(model, samples, &preps, cfg)?;
    let (well_typed, well_typed_no_unk) = well_typed_rates(&outs);
    Ok(EvalReport {
        ppl_decision,
        ppl_token,
        well_typed,
        well_typed_no_unk,
        acc1: accuracy_at(&outs, 1),
        acc5: accuracy_at(&outs, 5),
        n: samples.len(),
        config: model.arch.decoder.name.key().to_string(),
        seed: model.seed,
    })
}

type Metric<'a> = &'a dyn Fn(&EvalReport) -> f64;

/// One trained configuration of an ablation.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct AblationRun {
    pub config: ConfigName,
    pub seed: u64,
    pub epochs: usize,
    pub report: EvalReport,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct Ablation {
    pub runs: Vec<AblationRun>,
}

#[derive(Clone, Debug)]
pub struct AblationSetup {
    pub configs: Vec<ConfigName>,
    pub seeds: Vec<u64>,
    pub encoder: EncoderKind,
    pub dims: Dims,
    pub train: TrainConfig,
    pub eval: EvalConfig,
    /// Skip beam search and report perplexities only.
    pub perplexity_only: bool,
}

impl Default for AblationSetup {
    fn default() -> Self {
        AblationSetup {
            configs: ConfigName::ALL.to_vec(),
            seeds: vec![0, 1, 2],
            encoder: EncoderKind::Graph,
            dims: Dims::default(),
            train: TrainConfig::default(),
            eval: EvalConfig::default(),
            perplexity_only: false,
        }
    }
}

/// Trains every configuration under every seed on `train` and evaluates on
/// `test`.
pub fn ablate(base: &Grammar, train: &[Sample], test: &[Sample], setup: &AblationSetup) -> Result<Ablation> {
    let mut out = Ablation::default();
    for &seed in &setup.seeds {
        for &config in &setup.configs {
            let mut model = Model::for_data(base, train, config, setup.encoder, setup.dims, seed)?;
            let preps = model.prepare(train, setup.eval.parallelism)?;
            let tc = TrainConfig { seed, ..setup.train.clone() };
            let epochs = model.train(&preps, &tc)?.len();
            let report = if setup.perplexity_only {
                let tp = model.prepare(test, setup.eval.parallelism)?;
                let (ppl_decision, ppl_token) = perplexity(&model, &tp, &setup.eval)?;
                EvalReport {
                    ppl_decision,
                    ppl_token,
                    well_typed: 0.0,
                    well_typed_no_unk: 0.0,
                    acc1: 0.0,
                    acc5: 0.0,
                    n: test.len(),
                    config: config.key().to_string(),
                    seed,
                }
            } else {
                evaluate(&model, test, &setup.eval)?
            };
            out.runs.push(AblationRun { config, seed, epochs, report });
        }
    }
    Ok(out)
}

impl Ablation {
    pub fn report(&self, config: ConfigName, seed: u64) -> Option<&EvalReport> {
        self.runs.iter().find(|r| r.config == config && r.seed == seed).map(|r| &r.report)
    }

    pub fn seeds(&self) -> Vec<u64> {
        let mut s: Vec<u64> = self.runs.iter().map(|r| r.seed).collect();
        s.dedup();
        s
    }

    /// Seeds where per-decision perplexity is ordered NAG ≤ Syn and
    /// NAG ≤ ASN ≤ Tree.
    pub fn ordered_seeds(&self) -> Vec<u64> {
        self.seeds()
            .into_iter()
            .filter(|&s| {
                let p = |c| self.report(c, s).map(|r| r.ppl_decision);
                match (p(ConfigName::Nag), p(ConfigName::Syn), p(ConfigName::Asn), p(ConfigName::Tree)) {
                    (Some(n), Some(sy), Some(a), Some(t)) => n <= sy && n <= a && a <= t,
                    _ => false,
                }
            })
            .collect()
    }

    /// Configurations as columns, metrics averaged over seeds as rows.
    pub fn table(&self) -> String {
        let configs: Vec<ConfigName> = ConfigName::ALL
            .into_iter()
            .filter(|c| self.runs.iter().any(|r| r.config == *c))
            .collect();
        let mean = |c: ConfigName, f: &dyn Fn(&EvalReport) -> f64| {
            let v: Vec<f64> = self.runs.iter().filter(|r| r.config == c).map(|r| f(&r.report)).collect();
            v.iter().sum::<f64>() / v.len().max(1) as f64
        };
        let mut s = format!("{:<22}", "metric");
        for c in &configs {
            let _ = write!(s, "{:>10}", c.to_string());
        }
        s.push('\n');
        let rows: [(&str, Metric, bool); 5] = [
            ("perplexity/decision", &|r| r.ppl_decision, false),
            ("perplexity/token", &|r| r.ppl_token, false),
            ("well-typed %", &|r| r.well_typed, true),
            ("acc@1 %", &|r| r.acc1, true),
            ("acc@5 %", &|r| r.acc5, true),
        ];
        for (name, f, pct) in rows {
            let _ = write!(s, "{name:<22}");
            for &c in &configs {
                let v = mean(c, f);
                if pct {
                    let _ = write!(s, "{:>10.1}", 100.0 * v);
                } else {
                    let _ = write!(s, "{v:>10.3}");
                }
            }
            s.push('\n');
        }
        s
    }
}
