//! Attribute-state propagation, the three pickers and teacher forcing.

use nag_tensor::{NllGroup, ParamStore, Real, Tape, Tensor, Var};

use super::encoder::ContextStates;
use super::prepare::{Prepared, SiteKind};
use super::{copy_name, Arch, ModelError, Result, DEC_EDGE_LABEL, DEC_LABEL, VAR_U, VAR_W};
use crate::attrgraph::{batch_graphs, AttributeGraph, Edge, EdgeType};
use crate::grammar::{Grammar, LiteralClass};

/// Softmax of `scores` restricted to `idx`, in `f64`.
pub fn softmax_on<F: Real>(scores: &[F], idx: &[usize]) -> Vec<f64> {
    let m = idx.iter().map(|&i| scores[i].as_f64()).fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = idx.iter().map(|&i| (scores[i].as_f64() - m).exp()).collect();
    let z: f64 = e.iter().sum();
    e.into_iter().map(|x| x / z).collect()
}

fn log_sum_exp<F: Real>(scores: &[F], idx: &[usize]) -> f64 {
    let m = idx.iter().map(|&i| scores[i].as_f64()).fold(f64::NEG_INFINITY, f64::max);
    m + idx.iter().map(|&i| (scores[i].as_f64() - m).exp()).sum::<f64>().ln()
}

/// Literal score positions and their spellings: the class vocabulary, then
/// every context token that lexes as the class.
pub fn literal_candidates(g: &Grammar, class: LiteralClass, ctx: &[String]) -> Vec<(usize, String)> {
    let entries = g.literals().entries(class);
    let mut out: Vec<(usize, String)> = entries.iter().cloned().enumerate().collect();
    out.extend(
        ctx.iter()
            .enumerate()
            .filter(|(_, s)| class.lexes(s))
            .map(|(i, s)| (entries.len() + i, s.clone())),
    );
    out
}

/// Orders in-edges so that message sums do not depend on edge order.
pub(crate) fn sort_in_edges(edges: &mut [Edge]) {
    edges.sort_by_key(|e| (e.source, e.etype, e.label));
}

pub(crate) fn incoming(graph: &AttributeGraph) -> Vec<Vec<Edge>> {
    let mut inc = vec![Vec::new(); graph.len()];
    for e in graph.edges() {
        inc[e.target].push(*e);
    }
    for list in &mut inc {
        sort_in_edges(list);
    }
    inc
}

/// Negative log-probabilities of the decisions of one tree.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct StepLoss {
    pub steps: Vec<(SiteKind, f64)>,
}

impl StepLoss {
    pub fn total(&self) -> f64 {
        self.steps.iter().map(|s| s.1).sum()
    }
}

/// Teacher-forced pass over a chunk of samples.
pub struct Forward {
    /// Summed negative log-likelihood of the chunk.
    pub loss: Var,
    pub steps: Vec<StepLoss>,
    /// Picker scores of each decision, per sample.
    pub scores: Vec<Vec<Var>>,
}

impl Arch {
    /// Candidate positions of a picker's score vector.
    pub(crate) fn candidates(&self, kind: SiteKind, n_vars: usize, ctx: &[String]) -> Vec<usize> {
        match kind {
            SiteKind::Production(nt) => self.grammar.productions_for(nt).map(|p| p.id).collect(),
            SiteKind::Variable => (0..n_vars).collect(),
            SiteKind::Literal(c) => literal_candidates(&self.grammar, c, ctx).into_iter().map(|(i, _)| i).collect(),
        }
    }

    /// States of `labels.len()` new nodes; `inputs[i]` lists the in-edges of
    /// node `i` with the location of each source state.
    pub(crate) fn round<F: Real>(
        &self,
        tape: &mut Tape<'_, F>,
        labels: &[usize],
        inputs: &[Vec<(Edge, (Var, usize))>],
    ) -> Result<Var> {
        let n = labels.len();
        let mut msg: Option<Var> = None;
        for t in EdgeType::ALL {
            if !self.decoder.graph.edges.contains(t) {
                continue;
            }
            let mut rows = Vec::new();
            let mut targets = Vec::new();
            let mut lab = Vec::new();
            for (i, list) in inputs.iter().enumerate() {
                for (e, loc) in list.iter().filter(|(e, _)| e.etype == t) {
                    rows.push(*loc);
                    targets.push(i);
                    if self.labeled(t) {
                        let (p, c) = e.label.ok_or_else(|| ModelError::Sample("unlabelled child edge".into()))?;
                        lab.push(self.edge_offsets[p] + c);
                    }
                }
            }
            if rows.is_empty() {
                continue;
            }
            let mut x = tape.gather(&rows)?;
            if self.labeled(t) {
                let table = tape.param(DEC_EDGE_LABEL)?;
                let le = tape.lookup(table, &lab)?;
                x = tape.concat_cols(&[x, le])?;
            }
            let m = self.layers.msg[t.index()].forward(tape, x)?;
            let m = tape.index_add(m, &targets, n)?;
            msg = Some(match msg {
                None => m,
                Some(a) => tape.add(a, m)?,
            });
        }
        let msg = match msg {
            Some(m) => m,
            None => tape.constant(Tensor::zeros(n, self.dims.hidden)),
        };
        let table = tape.param(DEC_LABEL)?;
        let e = tape.lookup(table, labels)?;
        Ok(self.layers.gru.forward(tape, msg, e)?)
    }

    /// Locations of every attribute state of the batched graphs.
    pub(crate) fn propagate<F: Real>(
        &self,
        tape: &mut Tape<'_, F>,
        preps: &[&Prepared],
        encs: &[ContextStates],
    ) -> Result<(AttributeGraph, Vec<(Var, usize)>)> {
        let graphs: Vec<&AttributeGraph> = preps.iter().map(|p| &p.graph).collect();
        let b = batch_graphs(&graphs);
        let n = b.len();
        let mut locs: Vec<Option<(Var, usize)>> = vec![None; n];
        let mut labels = vec![usize::MAX; n];
        for ((p, enc), c) in preps.iter().zip(encs).zip(b.components()) {
            let off = c.nodes.start;
            labels[off..off + p.labels.len()].copy_from_slice(&p.labels);
            locs[off + p.root] = Some(enc.root);
            if enc.vars.len() != p.ctx_nodes.len() {
                return Err(ModelError::Sample("encoder and graph disagree on the scope".into()));
            }
            for (&v, &loc) in p.ctx_nodes.iter().zip(&enc.vars) {
                locs[off + v] = Some(loc);
            }
        }
        let inc = incoming(&b);
        for round in b.rounds() {
            let nodes: Vec<usize> = round.iter().copied().filter(|&v| locs[v].is_none()).collect();
            if nodes.is_empty() {
                continue;
            }
            let mut inputs = Vec::with_capacity(nodes.len());
            for &v in &nodes {
                let mut list = Vec::with_capacity(inc[v].len());
                for e in &inc[v] {
                    let loc = locs[e.source].ok_or(ModelError::Graph(crate::attrgraph::GraphError::UnknownNode(e.source)))?;
                    list.push((*e, loc));
                }
                inputs.push(list);
            }
            let node_labels: Vec<usize> = nodes.iter().map(|&v| labels[v]).collect();
            let h = self.round(tape, &node_labels, &inputs)?;
            for (i, &v) in nodes.iter().enumerate() {
                locs[v] = Some((h, i));
            }
        }
        let locs = locs.into_iter().map(|l| l.expect("every node scheduled")).collect();
        Ok((b, locs))
    }

    fn pool<F: Real>(&self, tape: &mut Tape<'_, F>, vars: &[(Var, usize)]) -> Result<Var> {
        if vars.is_empty() {
            return Ok(tape.constant(Tensor::zeros(1, self.dims.hidden)));
        }
        let m = tape.gather(vars)?;
        Ok(tape.max_pool_rows(m)?)
    }

    pub(crate) fn production_scores<F: Real>(
        &self,
        tape: &mut Tape<'_, F>,
        h: Var,
        enc: &ContextStates,
        vars: &[(Var, usize)],
    ) -> Result<Var> {
        let mut parts = vec![h];
        if self.decoder.attention {
            parts.push(match (enc.tokens, enc.proj) {
                (Some(t), Some(p)) => self.layers.attn.forward_projected(tape, h, t, p)?,
                _ => tape.constant(Tensor::zeros(1, self.dims.hidden)),
            });
        }
        if self.decoder.pooling {
            parts.push(self.pool(tape, vars)?);
        }
        let x = if parts.len() == 1 { h } else { tape.concat_cols(&parts)? };
        Ok(self.layers.prod.forward(tape, x)?)
    }

    pub(crate) fn variable_scores<F: Real>(
        &self,
        tape: &mut Tape<'_, F>,
        h: Var,
        vars: &[(Var, usize)],
    ) -> Result<Var> {
        if vars.is_empty() {
            return Err(ModelError::Sample("variable pick with an empty scope".into()));
        }
        let m = tape.gather(vars)?;
        let w = tape.param(VAR_W)?;
        let a = tape.matmul(h, w)?;
        let bilinear = tape.matmul_bt(a, m)?;
        let u = tape.param(VAR_U)?;
        let linear = tape.matmul_bt(u, m)?;
        Ok(tape.add(bilinear, linear)?)
    }

    pub(crate) fn literal_scores<F: Real>(
        &self,
        tape: &mut Tape<'_, F>,
        h: Var,
        class: LiteralClass,
        enc: &ContextStates,
    ) -> Result<Var> {
        let vocab = self.layers.lit[class.index()].forward(tape, h)?;
        let Some(tokens) = enc.tokens else { return Ok(vocab) };
        let w = tape.param(&copy_name(class))?;
        let a = tape.matmul(h, w)?;
        let copy = tape.matmul_bt(a, tokens)?;
        Ok(tape.concat_cols(&[vocab, copy])?)
    }

    pub(crate) fn scores<F: Real>(
        &self,
        tape: &mut Tape<'_, F>,
        kind: SiteKind,
        h: Var,
        enc: &ContextStates,
        vars: &[(Var, usize)],
    ) -> Result<Var> {
        match kind {
            SiteKind::Production(_) => self.production_scores(tape, h, enc, vars),
            SiteKind::Variable => self.variable_scores(tape, h, vars),
            SiteKind::Literal(c) => self.literal_scores(tape, h, c, enc),
        }
    }

    /// Teacher-forced loss of a chunk of samples.
    pub fn forward<F: Real>(&self, tape: &mut Tape<'_, F>, preps: &[&Prepared]) -> Result<Forward> {
        if preps.is_empty() {
            return Err(ModelError::EmptyData);
        }
        let ctxs: Vec<_> = preps.iter().map(|p| &p.ctx).collect();
        let encs = self.encode(tape, &ctxs)?;
        let (b, locs) = self.propagate(tape, preps, &encs)?;
        let mut all = Vec::new();
        let mut groups = Vec::new();
        let mut width = 0;
        let mut out_scores = Vec::with_capacity(preps.len());
        let mut pending = Vec::new();
        for ((p, enc), c) in preps.iter().zip(&encs).zip(b.components()) {
            let off = c.nodes.start;
            let mut per = Vec::with_capacity(p.decisions.len());
            for d in &p.decisions {
                let h = tape.gather(&[locs[off + d.at]])?;
                let vars: Vec<(Var, usize)> = d.var_states.iter().map(|&v| locs[off + v]).collect();
                let s = self.scores(tape, d.kind, h, enc, &vars)?;
                let cands = self.candidates(d.kind, vars.len(), &p.ctx.spellings);
                groups.push(NllGroup {
                    candidates: cands.iter().map(|&i| width + i).collect(),
                    targets: d.targets.iter().map(|&i| width + i).collect(),
                });
                pending.push((s, cands, d.targets.clone(), d.kind));
                width += tape.value(s).cols();
                all.push(s);
                per.push(s);
            }
            out_scores.push(per);
        }
        let flat = tape.concat_cols(&all)?;
        let loss = tape.nll(flat, groups)?;
        let mut steps = Vec::with_capacity(preps.len());
        let mut it = pending.into_iter();
        for p in preps {
            let mut sl = StepLoss::default();
            for _ in 0..p.decisions.len() {
                let (s, cands, targets, kind) = it.next().expect("one entry per decision");
                let v = tape.value(s).data();
                sl.steps.push((kind, log_sum_exp(v, &cands) - log_sum_exp(v, &targets)));
            }
            steps.push(sl);
        }
        Ok(Forward {
            loss,
            steps,
            scores: out_scores,
        })
    }

    /// Per-decision losses of `preps` without recording gradients.
    pub fn step_losses<F: Real>(&self, store: &ParamStore<F>, preps: &[&Prepared]) -> Result<Vec<StepLoss>> {
        let mut tape = Tape::new(store);
        Ok(self.forward(&mut tape, preps)?.steps)
    }

    /// Scalar loss of `preps`.
    pub fn loss<F: Real>(&self, store: &ParamStore<F>, preps: &[&Prepared]) -> Result<F> {
        let mut tape = Tape::new(store);
        let f = self.forward(&mut tape, preps)?;
        Ok(tape.value(f.loss).scalar())
    }

    /// All attribute states of one sample from a full-graph pass.
    pub fn propagate_states<F: Real>(&self, store: &ParamStore<F>, prep: &Prepared) -> Result<Vec<Tensor<F>>> {
        let mut tape = Tape::new(store);
        let encs = self.encode(&mut tape, &[&prep.ctx])?;
        let (_, locs) = self.propagate(&mut tape, &[prep], &encs)?;
        Ok(locs
            .iter()
            .map(|&(v, r)| Tensor::row(tape.value(v).row_slice(r).to_vec()))
            .collect())
    }
}
