//! Per-sample inputs to the encoders and teacher forcing.

use std::ops::Range;

use super::{Arch, ModelError, Result, TokenVocab};
use crate::attrgraph::{AttrIds, AttributeGraph, Flavor, GraphBuilder, Origin};
use crate::grammar::{Grammar, LiteralClass, SymbolId, SymbolKind, TypeEnv};
use crate::pipeline::lang::{is_variable_token, parse_tokens, CstRef, Stmt, HOLE};
use crate::pipeline::Sample;
use crate::syntax::{Decision, NodeId, PartialAst};

/// Child, NextToken, LastUse and the reverse of each.
pub const CTX_EDGE_TYPES: usize = 6;

/// Program graph of a context: syntax-tree nodes first, then one leaf per
/// token (the hole is a leaf too).
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CtxGraph {
    pub labels: Vec<usize>,
    /// `(source, target)` pairs per edge type, sorted by target then source.
    pub edges: Vec<Vec<(usize, usize)>>,
    /// Node of each context token.
    pub leaves: Vec<usize>,
}

impl CtxGraph {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }
}

/// Encoder input for one hole.
#[derive(Clone, Debug)]
pub struct ContextInput {
    /// Vocabulary rows of the context, hole included.
    pub ids: Vec<usize>,
    pub hole: usize,
    /// Raw context tokens without the hole; rows of the token states.
    pub spellings: Vec<String>,
    pub scope: Vec<String>,
    /// Usage windows of each scope variable as vocabulary rows.
    pub usages: Vec<Vec<Vec<usize>>>,
    pub graph: Option<CtxGraph>,
    /// Token position of each scope variable's declaration.
    pub decls: Vec<usize>,
}

fn collect_decls(stmts: &[Stmt], out: &mut Vec<(String, usize)>) {
    for s in stmts {
        match s {
            Stmt::Decl { name, name_tok, .. } => out.push((name.clone(), *name_tok)),
            Stmt::If { then, els, .. } => {
                collect_decls(then, out);
                if let Some(e) = els {
                    collect_decls(e, out);
                }
            }
            Stmt::While { body, .. } => collect_decls(body, out),
            Stmt::Assign { .. } | Stmt::Return { .. } => {}
        }
    }
}

/// Parses a context (hole included) into its program graph and finds the
/// declaration token of every scope variable.
pub fn build_graph_context(vocab: &TokenVocab, tokens: &[String], scope: &TypeEnv) -> Result<(CtxGraph, Vec<usize>)> {
    let hole = tokens
        .iter()
        .position(|t| t == HOLE)
        .ok_or_else(|| ModelError::Sample("context has no hole".into()))?;
    let p = parse_tokens(tokens.to_vec())?;
    let k = p.cst.nodes.len();
    let mut labels: Vec<usize> = p.cst.nodes.iter().map(|n| vocab.kind_id(n.kind)).collect();
    labels.extend(tokens.iter().map(|t| vocab.id(t, scope)));
    let leaves: Vec<usize> = (0..tokens.len()).map(|t| k + t).collect();

    let mut child = Vec::new();
    for (i, n) in p.cst.nodes.iter().enumerate() {
        for c in &n.children {
            child.push(match *c {
                CstRef::Node(j) => (i, j),
                CstRef::Token(t) => (i, k + t),
            });
        }
    }
    let next: Vec<(usize, usize)> = (1..tokens.len()).map(|t| (k + t - 1, k + t)).collect();
    let mut last = Vec::new();
    let mut seen: std::collections::HashMap<&str, usize> = std::collections::HashMap::new();
    for (t, tok) in tokens.iter().enumerate() {
        if is_variable_token(tok) && t != hole {
            if let Some(&u) = seen.get(tok.as_str()) {
                last.push((k + u, k + t));
            }
            seen.insert(tok, t);
        }
    }
    let mut edges = vec![child, next, last];
    for i in 0..3 {
        let rev = edges[i].iter().map(|&(s, t)| (t, s)).collect();
        edges.push(rev);
    }
    for list in &mut edges {
        list.sort_by_key(|&(s, t)| (t, s));
    }

    let mut decls: Vec<(String, usize)> = p.params.iter().map(|q| (q.name.clone(), q.name_tok)).collect();
    collect_decls(&p.body, &mut decls);
    let mut out = Vec::with_capacity(scope.len());
    for (name, _) in scope.iter() {
        let d = decls
            .iter()
            .filter(|(n, t)| n == name && *t < hole)
            .map(|&(_, t)| t)
            .next_back()
            .ok_or_else(|| ModelError::Sample(format!("no declaration of `{name}` before the hole")))?;
        out.push(d);
    }
    Ok((CtxGraph { labels, edges, leaves }, out))
}

/// Encoder input of `sample` under `arch`.
pub fn prepare_context(arch: &Arch, sample: &Sample) -> Result<ContextInput> {
    let tokens = sample.context_with_hole();
    let scope = &sample.scope;
    let ids = tokens.iter().map(|t| arch.vocab.id(t, scope)).collect();
    let usages = scope
        .iter()
        .map(|(name, _)| {
            sample
                .usages
                .get(name)
                .map(|us| us.iter().map(|u| u.window.iter().map(|t| arch.vocab.id(t, scope)).collect()).collect())
                .unwrap_or_default()
        })
        .collect();
    let (graph, decls) = match arch.encoder {
        super::EncoderKind::Graph => {
            let (g, d) = build_graph_context(&arch.vocab, &tokens, scope)?;
            (Some(g), d)
        }
        super::EncoderKind::Seq => (None, Vec::new()),
    };
    Ok(ContextInput {
        ids,
        hole: sample.before.len(),
        spellings: sample.context_tokens().cloned().collect(),
        scope: scope.names(),
        usages,
        graph,
        decls,
    })
}

/// What the decoder has to pick at a site.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SiteKind {
    Production(SymbolId),
    Variable,
    Literal(LiteralClass),
}

pub(crate) fn site_kind(g: &Grammar, ast: &PartialAst, v: NodeId) -> Result<SiteKind> {
    let sym = ast.node(v)?.label;
    Ok(match g.symbol(sym).kind {
        SymbolKind::Nonterminal => SiteKind::Production(sym),
        SymbolKind::Variable => SiteKind::Variable,
        SymbolKind::Literal(c) => SiteKind::Literal(c),
        SymbolKind::Fixed(_) => return Err(ModelError::Sample(format!("node {v} is not a decision site"))),
    })
}

/// Attribute node whose state drives the decision at `v`: its own inherited
/// node for a nonterminal, the parent's for a slot.
pub(crate) fn decision_node(ast: &PartialAst, ids: &AttrIds, v: NodeId, kind: SiteKind) -> Result<usize> {
    let owner = match kind {
        SiteKind::Production(_) => v,
        _ => ast.parent(v)?.ok_or_else(|| ModelError::Sample("slot without parent".into()))?,
    };
    ids.inherited(owner)
        .ok_or_else(|| ModelError::Sample(format!("node {owner} has no inherited attribute yet")))
}

/// Points variables bound in `new` at their joint nodes.
pub(crate) fn track_variables(
    g: &Grammar,
    ast: &PartialAst,
    b: &GraphBuilder,
    new: Range<usize>,
    scope: &[String],
    states: &mut [usize],
) {
    for id in new {
        let n = &b.nodes()[id];
        if let (Flavor::Joint, Origin::Ast(v)) = (n.flavor, &n.origin) {
            if g.symbol(ast.nodes()[*v].label).kind == SymbolKind::Variable {
                if let Some(i) = scope.iter().position(|s| *s == n.label) {
                    states[i] = id;
                }
            }
        }
    }
}

/// One teacher-forced decision.
#[derive(Clone, Debug)]
pub struct DecisionRec {
    pub site: NodeId,
    pub kind: SiteKind,
    /// Attribute node read by the picker.
    pub at: usize,
    /// Current attribute node of every scope variable.
    pub var_states: Vec<usize>,
    pub decision: Decision,
    /// Positions of the ground truth in the picker's score vector.
    pub targets: Vec<usize>,
}

/// A sample ready for teacher forcing.
#[derive(Clone, Debug)]
pub struct Prepared {
    pub ctx: ContextInput,
    pub graph: AttributeGraph,
    /// Embedding row per attribute node; unused for encoder-seeded nodes.
    pub labels: Vec<usize>,
    pub root: usize,
    pub ctx_nodes: Vec<usize>,
    pub decisions: Vec<DecisionRec>,
    pub target_tokens: usize,
    pub tree: PartialAst,
}

/// Positions in the literal score vector whose spelling is `spelling`, or
/// the UNK entry when there are none.
pub(crate) fn literal_targets(g: &Grammar, class: LiteralClass, spelling: &str, ctx: &[String]) -> Vec<usize> {
    let lits = g.literals();
    let n = lits.entries(class).len();
    let mut t: Vec<usize> = lits.position(class, spelling).into_iter().collect();
    t.extend(
        ctx.iter()
            .enumerate()
            .filter(|(_, s)| class.lexes(s) && *s == spelling)
            .map(|(i, _)| n + i),
    );
    if t.is_empty() {
        t.push(0);
    }
    t
}

impl Arch {
    pub fn prepare(&self, sample: &Sample) -> Result<Prepared> {
        let tree = sample.target_tree(&self.grammar).map_err(|e| ModelError::Sample(e.to_string()))?;
        let ctx = prepare_context(self, sample)?;
        self.prepare_tree(ctx, &tree)
    }

    /// Teacher-forcing records for `tree` in context `ctx`.
    pub fn prepare_tree(&self, ctx: ContextInput, tree: &PartialAst) -> Result<Prepared> {
        let g = &self.grammar;
        if !tree.is_complete(g) {
            return Err(ModelError::Sample("target tree is incomplete".into()));
        }
        let mut ast = PartialAst::new(g);
        let mut b = GraphBuilder::new(&ctx.scope, self.decoder.graph);
        b.advance(g, &ast)?;
        let root = b.ids().inherited(ast.root()).expect("root inherited node");
        let ctx_nodes = b.ids().ctx.clone();
        let mut vars = ctx_nodes.clone();
        let mut decisions = Vec::with_capacity(tree.history().len());
        for d in tree.history() {
            let site = ast
                .next_expansion_site(g)
                .ok_or_else(|| ModelError::Sample("history continues past a complete tree".into()))?;
            if site != d.node() {
                return Err(ModelError::Sample(format!("decision at node {} but next site is {site}", d.node())));
            }
            let kind = site_kind(g, &ast, site)?;
            let at = decision_node(&ast, b.ids(), site, kind)?;
            let targets = match (kind, d) {
                (SiteKind::Production(_), Decision::Production { production, .. }) => vec![*production],
                (SiteKind::Variable, Decision::Variable { name, .. }) => vec![ctx
                    .scope
                    .iter()
                    .position(|s| s == name)
                    .ok_or_else(|| ModelError::Sample(format!("`{name}` is not in scope")))?],
                (SiteKind::Literal(c), Decision::Literal { spelling, .. }) => {
                    literal_targets(g, c, spelling, &ctx.spellings)
                }
                _ => return Err(ModelError::Sample(format!("decision {d:?} does not fit its site"))),
            };
            decisions.push(DecisionRec {
                site,
                kind,
                at,
                var_states: vars.clone(),
                decision: d.clone(),
                targets,
            });
            ast.apply(g, d)?;
            let new = b.advance(g, &ast)?;
            track_variables(g, &ast, &b, new, &ctx.scope, &mut vars);
        }
        let graph = b.finish()?;
        let labels = graph
            .nodes()
            .iter()
            .map(|n| self.label_of(&ast, n).unwrap_or(usize::MAX))
            .collect();
        Ok(Prepared {
            ctx,
            graph,
            labels,
            root,
            ctx_nodes,
            decisions,
            target_tokens: ast.tokens(g)?.len(),
            tree: ast,
        })
    }
}
