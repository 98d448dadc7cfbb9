//! Incremental decoding: greedy, beam, and decoding forced along a history.

use std::rc::Rc;

use nag_tensor::{ParamStore, Real, Tape, Tensor, Var};

use super::decoder::{literal_candidates, softmax_on, sort_in_edges};
use super::encoder::ContextStates;
use super::prepare::{decision_node, site_kind, track_variables, ContextInput, Prepared, SiteKind};
use super::{Arch, ModelError, Result};
use crate::attrgraph::{Edge, GraphBuilder};
use crate::syntax::{Decision, NodeId, PartialAst};

/// Options at one decision site with their probabilities.
#[derive(Clone, Debug, PartialEq)]
pub struct Distribution {
    pub site: NodeId,
    pub kind: SiteKind,
    pub options: Vec<(Decision, f64)>,
}

impl Distribution {
    pub fn total(&self) -> f64 {
        self.options.iter().map(|o| o.1).sum()
    }

    pub fn prob_of(&self, d: &Decision) -> f64 {
        self.options.iter().filter(|o| &o.0 == d).map(|o| o.1).sum()
    }

    /// Largest option-wise probability difference; options missing on one
    /// side count as 0.
    pub fn max_abs_diff(&self, other: &Distribution) -> f64 {
        let mut m: f64 = 0.0;
        for (d, p) in &self.options {
            m = m.max((p - other.prob_of(d)).abs());
        }
        for (d, p) in &other.options {
            m = m.max((p - self.prob_of(d)).abs());
        }
        m
    }
}

#[derive(Clone, Debug)]
pub struct Hypothesis {
    pub tree: PartialAst,
    pub log_prob: f64,
}

#[derive(Clone, Debug, Default)]
pub struct Decoded {
    /// Complete hypotheses, best first.
    pub hypotheses: Vec<Hypothesis>,
    /// Hypotheses dropped for exceeding the step limit.
    pub discarded: usize,
}

/// Encoder output of one context, detached from any tape.
struct Session<'a, F: Real> {
    arch: &'a Arch,
    store: &'a ParamStore<F>,
    ctx: &'a ContextInput,
    root: Tensor<F>,
    vars: Vec<Tensor<F>>,
    tokens: Option<Tensor<F>>,
    proj: Option<Tensor<F>>,
}

#[derive(Clone)]
struct Hyp<F> {
    ast: PartialAst,
    builder: GraphBuilder,
    states: Vec<Rc<Tensor<F>>>,
    vars: Vec<usize>,
    log_prob: f64,
    steps: usize,
}

fn row_of<F: Real>(tape: &Tape<'_, F>, (v, r): (Var, usize)) -> Tensor<F> {
    Tensor::row(tape.value(v).row_slice(r).to_vec())
}

impl<'a, F: Real> Session<'a, F> {
    fn new(arch: &'a Arch, store: &'a ParamStore<F>, ctx: &'a ContextInput) -> Result<Self> {
        let mut tape = Tape::new(store);
        let enc = arch.encode(&mut tape, &[ctx])?.pop().expect("one context");
        Ok(Session {
            arch,
            store,
            ctx,
            root: row_of(&tape, enc.root),
            vars: enc.vars.iter().map(|&l| row_of(&tape, l)).collect(),
            tokens: enc.tokens.map(|t| tape.value(t).clone()),
            proj: enc.proj.map(|t| tape.value(t).clone()),
        })
    }

    fn start(&self) -> Result<Hyp<F>> {
        let g = &self.arch.grammar;
        let ast = PartialAst::new(g);
        let mut builder = GraphBuilder::new(&self.ctx.scope, self.arch.decoder.graph);
        builder.advance(g, &ast)?;
        let root = builder.ids().inherited(ast.root()).expect("root inherited node");
        let mut states: Vec<Option<Rc<Tensor<F>>>> = vec![None; builder.nodes().len()];
        states[root] = Some(Rc::new(self.root.clone()));
        if builder.ids().ctx.len() != self.vars.len() {
            return Err(ModelError::Sample("encoder and graph disagree on the scope".into()));
        }
        for (&c, v) in builder.ids().ctx.iter().zip(&self.vars) {
            states[c] = Some(Rc::new(v.clone()));
        }
        let states = states
            .into_iter()
            .map(|s| s.ok_or_else(|| ModelError::Sample("unexpected node before the first decision".into())))
            .collect::<Result<_>>()?;
        Ok(Hyp {
            vars: builder.ids().ctx.clone(),
            ast,
            builder,
            states,
            log_prob: 0.0,
            steps: 0,
        })
    }

    fn enc_on(&self, tape: &mut Tape<'_, F>) -> ContextStates {
        let tokens = self.tokens.clone().map(|t| tape.constant(t));
        let proj = self.proj.clone().map(|t| tape.constant(t));
        let root = tape.constant(self.root.clone());
        ContextStates {
            root: (root, 0),
            vars: Vec::new(),
            tokens,
            proj,
        }
    }

    /// Distribution at the next site, or `None` for a complete tree.
    fn distribution(&self, h: &Hyp<F>) -> Result<Option<Distribution>> {
        let g = &self.arch.grammar;
        let Some(site) = h.ast.next_expansion_site(g) else {
            return Ok(None);
        };
        let kind = site_kind(g, &h.ast, site)?;
        let at = decision_node(&h.ast, h.builder.ids(), site, kind)?;
        let mut tape = Tape::new(self.store);
        let enc = self.enc_on(&mut tape);
        let hv = tape.constant((*h.states[at]).clone());
        let vars: Vec<(Var, usize)> = h.vars.iter().map(|&v| (tape.constant((*h.states[v]).clone()), 0)).collect();
        let s = self.arch.scores(&mut tape, kind, hv, &enc, &vars)?;
        Ok(Some(self.arch.options(site, kind, tape.value(s).data(), self.ctx)))
    }

    fn extend(&self, h: &Hyp<F>, d: &Decision, p: f64) -> Result<Hyp<F>> {
        let g = &self.arch.grammar;
        let mut n = h.clone();
        n.ast.apply(g, d)?;
        let old_edges = n.builder.edges().len();
        let new = n.builder.advance(g, &n.ast)?;
        let mut fresh: Vec<Vec<Edge>> = vec![Vec::new(); new.len()];
        for e in &n.builder.edges()[old_edges..] {
            fresh[e.target - new.start].push(*e);
        }
        for (k, id) in new.clone().enumerate() {
            let mut edges = std::mem::take(&mut fresh[k]);
            sort_in_edges(&mut edges);
            let label = self
                .arch
                .label_of(&n.ast, &n.builder.nodes()[id])
                .ok_or_else(|| ModelError::Sample("new context node during decoding".into()))?;
            let mut tape = Tape::new(self.store);
            let inputs: Vec<(Edge, (Var, usize))> = edges
                .iter()
                .map(|e| (*e, (tape.constant((*n.states[e.source]).clone()), 0)))
                .collect();
            let out = self.arch.round(&mut tape, &[label], &[inputs])?;
            n.states.push(Rc::new(tape.value(out).clone()));
        }
        track_variables(g, &n.ast, &n.builder, new, &self.ctx.scope, &mut n.vars);
        n.log_prob += p.ln();
        n.steps += 1;
        Ok(n)
    }
}

/// The first `k` options by probability, ties kept in option order.
fn top_k(options: &[(Decision, f64)], k: usize) -> Vec<(Decision, f64)> {
    let mut idx: Vec<usize> = (0..options.len()).collect();
    idx.sort_by(|&a, &b| options[b].1.total_cmp(&options[a].1));
    idx.into_iter().take(k).map(|i| options[i].clone()).collect()
}

impl Arch {
    /// Options of a picker given its raw scores.
    pub(crate) fn options<F: Real>(
        &self,
        site: NodeId,
        kind: SiteKind,
        scores: &[F],
        ctx: &ContextInput,
    ) -> Distribution {
        let options = match kind {
            SiteKind::Production(nt) => {
                let ids: Vec<usize> = self.grammar.productions_for(nt).map(|p| p.id).collect();
                let probs = softmax_on(scores, &ids);
                ids.into_iter()
                    .zip(probs)
                    .map(|(production, p)| (Decision::Production { node: site, production }, p))
                    .collect()
            }
            SiteKind::Variable => {
                let ids: Vec<usize> = (0..ctx.scope.len()).collect();
                let probs = softmax_on(scores, &ids);
                ctx.scope
                    .iter()
                    .zip(probs)
                    .map(|(name, p)| (Decision::Variable { node: site, name: name.clone() }, p))
                    .collect()
            }
            SiteKind::Literal(class) => {
                let cands = literal_candidates(&self.grammar, class, &ctx.spellings);
                let ids: Vec<usize> = cands.iter().map(|c| c.0).collect();
                let probs = softmax_on(scores, &ids);
                let mut merged: Vec<(String, f64)> = Vec::new();
                for ((_, s), p) in cands.into_iter().zip(probs) {
                    match merged.iter_mut().find(|m| m.0 == s) {
                        Some(m) => m.1 += p,
                        None => merged.push((s, p)),
                    }
                }
                merged
                    .into_iter()
                    .map(|(spelling, p)| (Decision::Literal { node: site, class, spelling }, p))
                    .collect()
            }
        };
        Distribution { site, kind, options }
    }

    /// Beam search keeping `width` hypotheses.
    pub fn decode_beam<F: Real>(
        &self,
        store: &ParamStore<F>,
        ctx: &ContextInput,
        width: usize,
        max_steps: usize,
    ) -> Result<Decoded> {
        let width = width.max(1);
        let s = Session::new(self, store, ctx)?;
        let mut live = vec![s.start()?];
        let mut finished: Vec<Hypothesis> = Vec::new();
        let mut discarded = 0;
        while !live.is_empty() {
            let mut pool: Vec<(f64, usize, Decision, f64)> = Vec::new();
            for (i, h) in live.iter().enumerate() {
                let dist = s.distribution(h)?.expect("live hypotheses are incomplete");
                for (d, p) in top_k(&dist.options, width) {
                    pool.push((h.log_prob + p.ln(), i, d, p));
                }
            }
            pool.sort_by(|a, b| b.0.total_cmp(&a.0));
            let mut next = Vec::with_capacity(width);
            for (_, i, d, p) in pool.into_iter().take(width) {
                let h = s.extend(&live[i], &d, p)?;
                if h.ast.is_complete(&self.grammar) {
                    finished.push(Hypothesis { tree: h.ast, log_prob: h.log_prob });
                } else if h.steps >= max_steps {
                    discarded += 1;
                } else {
                    next.push(h);
                }
            }
            live = next;
            finished.sort_by(|a, b| b.log_prob.total_cmp(&a.log_prob));
            if finished.len() >= width {
                let bar = finished[width - 1].log_prob;
                if live.iter().all(|h| h.log_prob <= bar) {
                    break;
                }
            }
        }
        finished.truncate(width);
        Ok(Decoded { hypotheses: finished, discarded })
    }

    /// Repeated argmax; `None` if the step limit is hit.
    pub fn decode_greedy<F: Real>(
        &self,
        store: &ParamStore<F>,
        ctx: &ContextInput,
        max_steps: usize,
    ) -> Result<Option<Hypothesis>> {
        let s = Session::new(self, store, ctx)?;
        let mut h = s.start()?;
        while let Some(dist) = s.distribution(&h)? {
            if h.steps >= max_steps {
                return Ok(None);
            }
            let (d, p) = top_k(&dist.options, 1).pop().expect("nonempty distribution");
            h = s.extend(&h, &d, p)?;
        }
        Ok(Some(Hypothesis { tree: h.ast, log_prob: h.log_prob }))
    }

    /// Decodes along `history`, returning the distribution seen at every step
    /// and the final attribute states.
    pub fn forced_decode<F: Real>(
        &self,
        store: &ParamStore<F>,
        ctx: &ContextInput,
        history: &[Decision],
    ) -> Result<(Vec<Distribution>, Vec<Tensor<F>>)> {
        let s = Session::new(self, store, ctx)?;
        let mut h = s.start()?;
        let mut dists = Vec::with_capacity(history.len());
        for d in history {
            let dist = s
                .distribution(&h)?
                .ok_or_else(|| ModelError::Sample("history continues past a complete tree".into()))?;
            let p = dist.prob_of(d);
            dists.push(dist);
            h = s.extend(&h, d, p)?;
        }
        Ok((dists, h.states.iter().map(|t| (**t).clone()).collect()))
    }

    /// Teacher-forced distributions of every decision of `prep`.
    pub fn teacher_forced_distributions<F: Real>(
        &self,
        store: &ParamStore<F>,
        prep: &Prepared,
    ) -> Result<Vec<Distribution>> {
        let mut tape = Tape::new(store);
        let f = self.forward(&mut tape, &[prep])?;
        Ok(prep
            .decisions
            .iter()
            .zip(&f.scores[0])
            .map(|(d, &s)| self.options(d.site, d.kind, tape.value(s).data(), &prep.ctx))
            .collect())
    }
}
