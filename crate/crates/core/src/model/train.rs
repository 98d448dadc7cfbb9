//! Maximum-likelihood training.

use nag_tensor::{AdamConfig, Gradients, OptState, ParamStore, Tape};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use super::prepare::Prepared;
use super::{Arch, Model, ModelError, Result};
use crate::exec::Parallelism;
use crate::pipeline::Sample;

#[derive(Clone, Debug)]
pub struct TrainConfig {
    pub epochs: usize,
    /// Samples per optimizer step.
    pub batch: usize,
    /// Samples per tape; chunk gradients are summed in chunk order.
    pub chunk: usize,
    pub adam: AdamConfig,
    /// Seeds the per-epoch shuffle.
    pub seed: u64,
    /// Stop once an epoch's per-decision perplexity is at or below this.
    pub stop_below: Option<f64>,
    pub parallelism: Parallelism,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 20,
            batch: 20,
            chunk: 5,
            adam: AdamConfig::default(),
            seed: 0,
            stop_below: None,
            parallelism: Parallelism::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EpochStats {
    pub epoch: usize,
    /// Mean negative log-likelihood per sample.
    pub mean_loss: f64,
    pub ppl_decision: f64,
}

/// Gradient, summed decision NLL and decision count of one chunk.
fn chunk_gradient(arch: &Arch, store: &ParamStore<f32>, chunk: &[&Prepared]) -> Result<(Gradients<f32>, f64, usize)> {
    let mut tape = Tape::new(store);
    let f = arch.forward(&mut tape, chunk)?;
    let nll: f64 = f.steps.iter().map(|s| s.total()).sum();
    let n = f.steps.iter().map(|s| s.steps.len()).sum();
    if !tape.value(f.loss).scalar().is_finite() || !nll.is_finite() {
        return Ok((Gradients::default(), f64::INFINITY, n));
    }
    let g = tape.backward(f.loss)?;
    Ok((g, nll, n))
}

impl Model {
    pub fn prepare(&self, samples: &[Sample], par: Parallelism) -> Result<Vec<Prepared>> {
        par.map(samples, |s| self.arch.prepare(s)).into_iter().collect()
    }

    /// One optimizer step on `batch`; returns its NLL sum and decision count.
    pub fn step(&mut self, opt: &mut OptState<f32>, batch: &[&Prepared], cfg: &TrainConfig) -> Result<(f64, usize)> {
        let chunks: Vec<&[&Prepared]> = batch.chunks(cfg.chunk.max(1)).collect();
        let arch = &self.arch;
        let store = &self.params;
        let results = cfg.parallelism.map(&chunks, |c| chunk_gradient(arch, store, c));
        let mut acc: Option<Gradients<f32>> = None;
        let (mut nll, mut n) = (0.0, 0);
        for r in results {
            let (g, l, k) = r?;
            nll += l;
            n += k;
            match &mut acc {
                None => acc = Some(g),
                Some(a) => a.accumulate(&g),
            }
        }
        if !nll.is_finite() {
            return Ok((nll, n));
        }
        if let Some(g) = acc {
            opt.step(&mut self.params, &g)?;
        }
        Ok((nll, n))
    }

    /// Trains on `data`; returns one entry per completed epoch.
    pub fn train(&mut self, data: &[Prepared], cfg: &TrainConfig) -> Result<Vec<EpochStats>> {
        if data.is_empty() {
            return Err(ModelError::EmptyData);
        }
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let mut order: Vec<usize> = (0..data.len()).collect();
        let mut opt = OptState::new(&self.params, cfg.adam);
        let mut stats = Vec::with_capacity(cfg.epochs);
        for epoch in 0..cfg.epochs {
            order.shuffle(&mut rng);
            let (mut nll, mut n) = (0.0, 0);
            for batch in order.chunks(cfg.batch.max(1)) {
                let preps: Vec<&Prepared> = batch.iter().map(|&i| &data[i]).collect();
                let (l, k) = self.step(&mut opt, &preps, cfg)?;
                if !l.is_finite() {
                    return Err(ModelError::Diverged { epoch });
                }
                nll += l;
                n += k;
            }
            let e = EpochStats {
                epoch,
                mean_loss: nll / data.len() as f64,
                ppl_decision: (nll / n.max(1) as f64).exp(),
            };
            let done = cfg.stop_below.is_some_and(|t| e.ppl_decision <= t);
            stats.push(e);
            if done {
                break;
            }
        }
        Ok(stats)
    }
}
