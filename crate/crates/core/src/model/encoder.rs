//! Context encoders.

use nag_tensor::layers::GruCell;
use nag_tensor::{ParamSpec, ParamStore, Real, Tape, Tensor, Var};

use super::prepare::{ContextInput, CtxGraph, CTX_EDGE_TYPES};
use super::{Arch, EncoderKind, ModelError, Result, GENC_LABEL, SENC_DEFAULT, SENC_EMB};

/// Encoder output for one context, as rows of recorded tensors.
#[derive(Clone, Debug)]
pub struct ContextStates {
    pub root: (Var, usize),
    pub vars: Vec<(Var, usize)>,
    /// One row per context token, hole excluded.
    pub tokens: Option<Var>,
    /// Attention projection of `tokens`.
    pub proj: Option<Var>,
}

/// Two stacked bidirectional GRU layers.
#[derive(Clone, Debug)]
pub(crate) struct BiGru {
    layers: Vec<(GruCell, GruCell)>,
    half: usize,
}

impl BiGru {
    pub(crate) fn new(prefix: &str, input: usize, half: usize) -> BiGru {
        let layers = (0..2)
            .map(|l| {
                let i = if l == 0 { input } else { 2 * half };
                (
                    GruCell::new(&format!("{prefix}.l{l}.fwd"), i, half),
                    GruCell::new(&format!("{prefix}.l{l}.bwd"), i, half),
                )
            })
            .collect();
        BiGru { layers, half }
    }

    pub(crate) fn declare(&self, spec: &mut ParamSpec) {
        for (f, b) in &self.layers {
            f.declare(spec);
            b.declare(spec);
        }
    }

    fn pass<F: Real>(&self, tape: &mut Tape<'_, F>, cell: &GruCell, x: Var, order: &[usize]) -> Result<Vec<Var>> {
        let mut h = tape.constant(Tensor::zeros(1, self.half));
        let mut out = Vec::with_capacity(order.len());
        for &t in order {
            let xt = tape.gather(&[(x, t)])?;
            h = cell.forward(tape, xt, h)?;
            out.push(h);
        }
        Ok(out)
    }

    /// All top-layer states (`T x 2·half`) and the concatenated final states.
    pub(crate) fn run<F: Real>(&self, tape: &mut Tape<'_, F>, x: Var) -> Result<(Var, Var)> {
        let n = tape.value(x).rows();
        if n == 0 {
            return Err(ModelError::Sample("empty token sequence".into()));
        }
        let fwd: Vec<usize> = (0..n).collect();
        let bwd: Vec<usize> = (0..n).rev().collect();
        let mut x = x;
        let mut last = None;
        for (f, b) in &self.layers {
            let hf = self.pass(tape, f, x, &fwd)?;
            let mut hb = self.pass(tape, b, x, &bwd)?;
            hb.reverse();
            let final_state = tape.concat_cols(&[hf[n - 1], hb[0]])?;
            let sf = tape.concat_rows(&hf)?;
            let sb = tape.concat_rows(&hb)?;
            x = tape.concat_cols(&[sf, sb])?;
            last = Some(final_state);
        }
        Ok((x, last.expect("two layers")))
    }
}

impl Arch {
    pub(crate) fn encode<F: Real>(&self, tape: &mut Tape<'_, F>, ctxs: &[&ContextInput]) -> Result<Vec<ContextStates>> {
        let mut out = match self.encoder {
            EncoderKind::Graph => self.encode_graph(tape, ctxs, self.dims.gnn_steps)?,
            EncoderKind::Seq => ctxs.iter().map(|c| self.encode_seq(tape, c)).collect::<Result<_>>()?,
        };
        if self.decoder.attention {
            for s in &mut out {
                if let Some(t) = s.tokens {
                    s.proj = Some(self.layers.attn.project_memories(tape, t)?);
                }
            }
        }
        Ok(out)
    }

    fn encode_seq<F: Real>(&self, tape: &mut Tape<'_, F>, ctx: &ContextInput) -> Result<ContextStates> {
        let table = tape.param(SENC_EMB)?;
        let x = tape.lookup(table, &ctx.ids)?;
        let (states, fin) = self.layers.senc_ctx.run(tape, x)?;
        let root = self.layers.senc_root.forward(tape, fin)?;
        let rows: Vec<(Var, usize)> = (0..ctx.ids.len()).filter(|&t| t != ctx.hole).map(|t| (states, t)).collect();
        let tokens = if rows.is_empty() { None } else { Some(tape.gather(&rows)?) };
        let mut vars = Vec::with_capacity(ctx.usages.len());
        for windows in &ctx.usages {
            if windows.is_empty() {
                vars.push((tape.param(SENC_DEFAULT)?, 0));
                continue;
            }
            let mut finals = Vec::with_capacity(windows.len());
            for w in windows {
                let xw = tape.lookup(table, w)?;
                finals.push(self.layers.senc_use.run(tape, xw)?.1);
            }
            let stacked = tape.concat_rows(&finals)?;
            vars.push((tape.mean_rows(stacked), 0));
        }
        Ok(ContextStates {
            root: (root, 0),
            vars,
            tokens,
            proj: None,
        })
    }

    /// Runs `steps` rounds of message passing over the union of the context
    /// graphs; returns the node states and each graph's row offset.
    pub(crate) fn graph_states<F: Real>(
        &self,
        tape: &mut Tape<'_, F>,
        graphs: &[&CtxGraph],
        steps: usize,
    ) -> Result<(Var, Vec<usize>)> {
        let mut offsets = Vec::with_capacity(graphs.len());
        let mut labels = Vec::new();
        let mut edges: Vec<Vec<(usize, usize)>> = vec![Vec::new(); CTX_EDGE_TYPES];
        for g in graphs {
            let off = labels.len();
            offsets.push(off);
            labels.extend_from_slice(&g.labels);
            for (k, list) in g.edges.iter().enumerate() {
                edges[k].extend(list.iter().map(|&(s, t)| (s + off, t + off)));
            }
        }
        let n = labels.len();
        let table = tape.param(GENC_LABEL)?;
        let mut h = tape.lookup(table, &labels)?;
        for _ in 0..steps {
            let mut msg: Option<Var> = None;
            for (k, list) in edges.iter().enumerate() {
                if list.is_empty() {
                    continue;
                }
                let rows: Vec<(Var, usize)> = list.iter().map(|&(s, _)| (h, s)).collect();
                let targets: Vec<usize> = list.iter().map(|&(_, t)| t).collect();
                let x = tape.gather(&rows)?;
                let m = self.layers.genc_msg[k].forward(tape, x)?;
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
            h = self.layers.genc_gru.forward(tape, msg, h)?;
        }
        Ok((h, offsets))
    }

    fn encode_graph<F: Real>(
        &self,
        tape: &mut Tape<'_, F>,
        ctxs: &[&ContextInput],
        steps: usize,
    ) -> Result<Vec<ContextStates>> {
        let graphs: Vec<&CtxGraph> = ctxs
            .iter()
            .map(|c| c.graph.as_ref().ok_or_else(|| ModelError::Sample("context has no program graph".into())))
            .collect::<Result<_>>()?;
        let (h, offsets) = self.graph_states(tape, &graphs, steps)?;
        let mut out = Vec::with_capacity(ctxs.len());
        for ((c, g), off) in ctxs.iter().zip(&graphs).zip(offsets) {
            let leaf = |t: usize| (h, off + g.leaves[t]);
            let rows: Vec<(Var, usize)> = (0..g.leaves.len()).filter(|&t| t != c.hole).map(leaf).collect();
            let tokens = if rows.is_empty() { None } else { Some(tape.gather(&rows)?) };
            out.push(ContextStates {
                root: leaf(c.hole),
                vars: c.decls.iter().map(|&t| leaf(t)).collect(),
                tokens,
                proj: None,
            });
        }
        Ok(out)
    }
}

/// Graph-encoder node states of one context after `steps` rounds.
pub fn graph_encoder_states<F: Real>(
    arch: &Arch,
    store: &ParamStore<F>,
    ctx: &ContextInput,
    steps: usize,
) -> Result<Tensor<F>> {
    let g = ctx.graph.as_ref().ok_or_else(|| ModelError::Sample("context has no program graph".into()))?;
    let mut tape = Tape::new(store);
    let (h, _) = arch.graph_states(&mut tape, &[g], steps)?;
    Ok(tape.value(h).clone())
}
