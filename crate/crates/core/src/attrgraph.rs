//! Attribute graphs over partial syntax trees.
//!
//! Every nonterminal owns an inherited and a synthesized node, every terminal
//! a single joint node, and every context variable a context node. Ids follow
//! a depth-first walk: inherited on entry, synthesized on exit, joint when a
//! terminal is reached. The context nodes come right after the root's
//! inherited node. Since every edge points from a smaller id to a larger one,
//! a graph built this way grows by appending as the tree is expanded.

use std::collections::BTreeMap;
use std::fmt::{self, Write as _};
use std::ops::Range;

use thiserror::Error;

use crate::grammar::{Grammar, SymbolKind};
use crate::syntax::{NodeId, PartialAst};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum EdgeType {
    Child,
    Parent,
    NextSibling,
    NextUse,
    NextToken,
    InhToSyn,
    NextExp,
}

impl EdgeType {
    pub const ALL: [EdgeType; 7] = [
        EdgeType::Child,
        EdgeType::Parent,
        EdgeType::NextSibling,
        EdgeType::NextUse,
        EdgeType::NextToken,
        EdgeType::InhToSyn,
        EdgeType::NextExp,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        match self {
            EdgeType::Child => "Child",
            EdgeType::Parent => "Parent",
            EdgeType::NextSibling => "NextSibling",
            EdgeType::NextUse => "NextUse",
            EdgeType::NextToken => "NextToken",
            EdgeType::InhToSyn => "InhToSyn",
            EdgeType::NextExp => "NextExp",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        EdgeType::ALL.into_iter().find(|e| e.name() == s)
    }

    fn dot_style(self) -> &'static str {
        match self {
            EdgeType::Child => "color=red",
            EdgeType::Parent => "color=green",
            EdgeType::NextSibling => "color=black",
            EdgeType::NextUse => "color=orange",
            EdgeType::NextToken => "color=blue",
            EdgeType::InhToSyn => "color=gray, style=dashed",
            EdgeType::NextExp => "color=purple, style=dotted",
        }
    }
}

impl fmt::Display for EdgeType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Set of enabled edge types.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct EdgeSet(u8);

impl EdgeSet {
    pub const fn empty() -> Self {
        EdgeSet(0)
    }

    pub fn of(types: &[EdgeType]) -> Self {
        EdgeSet(types.iter().fold(0, |m, t| m | (1 << t.index())))
    }

    pub fn contains(self, t: EdgeType) -> bool {
        self.0 & (1 << t.index()) != 0
    }

    pub fn iter(self) -> impl Iterator<Item = EdgeType> {
        EdgeType::ALL.into_iter().filter(move |t| self.contains(*t))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct GraphConfig {
    pub edges: EdgeSet,
    /// Attach `(production, child index)` labels to Child edges.
    pub labels: bool,
}

impl GraphConfig {
    pub fn tree() -> Self {
        GraphConfig {
            edges: EdgeSet::of(&[EdgeType::Child]),
            labels: false,
        }
    }

    pub fn asn() -> Self {
        GraphConfig {
            edges: EdgeSet::of(&[EdgeType::Child]),
            labels: true,
        }
    }

    pub fn syn() -> Self {
        GraphConfig {
            edges: EdgeSet::of(&[EdgeType::Child, EdgeType::NextExp]),
            labels: false,
        }
    }

    pub fn nag() -> Self {
        GraphConfig {
            edges: EdgeSet::of(&EdgeType::ALL[..6]),
            labels: true,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Flavor {
    Inherited,
    Synthesized,
    Joint,
    Context,
}

impl Flavor {
    pub fn name(self) -> &'static str {
        match self {
            Flavor::Inherited => "inherited",
            Flavor::Synthesized => "synthesized",
            Flavor::Joint => "joint",
            Flavor::Context => "context",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub enum Origin {
    Ast(NodeId),
    /// Index into the context variable list.
    Context(usize),
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct AttrNode {
    pub id: usize,
    pub origin: Origin,
    pub flavor: Flavor,
    /// Symbol name, terminal spelling or variable name.
    pub label: String,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Edge {
    pub source: usize,
    pub etype: EdgeType,
    pub target: usize,
    pub label: Option<(usize, usize)>,
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum GraphError {
    #[error("unknown attribute node {0}")]
    UnknownNode(usize),
    #[error("the root inherited node is initialised by the encoder and has no edges")]
    RootInherited,
    #[error("tree is incomplete")]
    Incomplete,
    #[error("attribute graph has a cycle through {0} nodes")]
    Cycle(usize),
    #[error("edge {0} -> {1} refers to a missing node")]
    DanglingEdge(usize, usize),
    #[error("tree changed in a way that does not extend the graph")]
    NotAnExtension,
    #[error("batch layout does not cover the graph")]
    BadLayout,
}

/// Span of one component inside a batched graph.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Component {
    pub nodes: Range<usize>,
    pub edges: Range<usize>,
    pub rounds: usize,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct AttributeGraph {
    nodes: Vec<AttrNode>,
    edges: Vec<Edge>,
    rounds: Vec<Vec<usize>>,
    components: Vec<Component>,
}

impl AttributeGraph {
    /// Builds and schedules a single-component graph.
    pub fn new(nodes: Vec<AttrNode>, edges: Vec<Edge>) -> Result<Self, GraphError> {
        for e in &edges {
            if e.source >= nodes.len() || e.target >= nodes.len() {
                return Err(GraphError::DanglingEdge(e.source, e.target));
            }
        }
        let rounds = schedule(nodes.len(), &edges)?;
        let components = vec![Component {
            nodes: 0..nodes.len(),
            edges: 0..edges.len(),
            rounds: rounds.len(),
        }];
        Ok(AttributeGraph {
            nodes,
            edges,
            rounds,
            components,
        })
    }

    pub fn empty() -> Self {
        AttributeGraph {
            nodes: Vec::new(),
            edges: Vec::new(),
            rounds: Vec::new(),
            components: Vec::new(),
        }
    }

    pub fn nodes(&self) -> &[AttrNode] {
        &self.nodes
    }

    pub fn edges(&self) -> &[Edge] {
        &self.edges
    }

    pub fn rounds(&self) -> &[Vec<usize>] {
        &self.rounds
    }

    pub fn components(&self) -> &[Component] {
        &self.components
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn edges_of(&self, t: EdgeType) -> impl Iterator<Item = &Edge> {
        self.edges.iter().filter(move |e| e.etype == t)
    }

    pub fn in_edges(&self, v: usize) -> impl Iterator<Item = &Edge> {
        self.edges.iter().filter(move |e| e.target == v)
    }

    /// Round index of every node.
    pub fn round_of(&self) -> Vec<usize> {
        let mut out = vec![0; self.nodes.len()];
        for (r, round) in self.rounds.iter().enumerate() {
            for &v in round {
                out[v] = r;
            }
        }
        out
    }

    /// Nodes without incoming edges.
    pub fn sources(&self) -> Vec<usize> {
        let mut has_in = vec![false; self.nodes.len()];
        for e in &self.edges {
            has_in[e.target] = true;
        }
        (0..self.nodes.len()).filter(|&v| !has_in[v]).collect()
    }

    /// `src etype tgt [label]` lines.
    pub fn debug_dump(&self) -> String {
        let mut s = String::new();
        for e in &self.edges {
            let _ = write!(s, "{} {} {}", e.source, e.etype, e.target);
            if let Some((p, i)) = e.label {
                let _ = write!(s, " {p},{i}");
            }
            s.push('\n');
        }
        s
    }

    /// DOT rendering: one node line per attribute node, edges grouped by type.
    pub fn export_dot(&self) -> String {
        let mut s = String::from("digraph {\n");
        for n in &self.nodes {
            let label = format!("{}:{}:{}", n.id, n.flavor.name(), n.label);
            let _ = writeln!(s, "  n{} [label=\"{}\"];", n.id, escape_dot(&label));
        }
        for t in EdgeType::ALL {
            for e in self.edges_of(t) {
                let _ = write!(s, "  n{} -> n{} [{}", e.source, e.target, t.dot_style());
                if let Some((p, i)) = e.label {
                    let _ = write!(s, ", label=\"({p},{i})\"");
                }
                s.push_str("];\n");
            }
        }
        s.push_str("}\n");
        s
    }
}

fn escape_dot(s: &str) -> String {
    s.replace('\\', "\\\\").replace('"', "\\\"")
}

/// Level-by-level topological layering; round `r` holds the nodes whose
/// predecessors all sit in earlier rounds, in ascending id order.
pub fn schedule(n: usize, edges: &[Edge]) -> Result<Vec<Vec<usize>>, GraphError> {
    let mut indeg = vec![0usize; n];
    let mut out: Vec<Vec<usize>> = vec![Vec::new(); n];
    for e in edges {
        indeg[e.target] += 1;
        out[e.source].push(e.target);
    }
    let mut current: Vec<usize> = (0..n).filter(|&v| indeg[v] == 0).collect();
    let mut rounds = Vec::new();
    let mut seen = 0;
    while !current.is_empty() {
        seen += current.len();
        let mut next = Vec::new();
        for &v in &current {
            for &w in &out[v] {
                indeg[w] -= 1;
                if indeg[w] == 0 {
                    next.push(w);
                }
            }
        }
        next.sort_unstable();
        rounds.push(std::mem::replace(&mut current, next));
    }
    if seen != n {
        return Err(GraphError::Cycle(n - seen));
    }
    Ok(rounds)
}

/// Disjoint union; round `r` of the result is the union of every input's
/// round `r`.
pub fn batch_graphs(graphs: &[&AttributeGraph]) -> AttributeGraph {
    let mut b = AttributeGraph::empty();
    for g in graphs {
        let (no, eo) = (b.nodes.len(), b.edges.len());
        b.nodes.extend(g.nodes.iter().map(|n| AttrNode {
            id: n.id + no,
            ..n.clone()
        }));
        b.edges.extend(g.edges.iter().map(|e| Edge {
            source: e.source + no,
            target: e.target + no,
            ..*e
        }));
        for (r, round) in g.rounds.iter().enumerate() {
            if b.rounds.len() <= r {
                b.rounds.push(Vec::new());
            }
            b.rounds[r].extend(round.iter().map(|v| v + no));
        }
        for c in g.components.iter() {
            b.components.push(Component {
                nodes: c.nodes.start + no..c.nodes.end + no,
                edges: c.edges.start + eo..c.edges.end + eo,
                rounds: c.rounds,
            });
        }
    }
    b
}

/// Splits a batch back into its components.
pub fn unbatch(b: &AttributeGraph) -> Result<Vec<AttributeGraph>, GraphError> {
    let mut out = Vec::with_capacity(b.components.len());
    for c in &b.components {
        let no = c.nodes.start;
        let nodes: Vec<AttrNode> = b
            .nodes
            .get(c.nodes.clone())
            .ok_or(GraphError::BadLayout)?
            .iter()
            .map(|n| AttrNode { id: n.id - no, ..n.clone() })
            .collect();
        let edges: Vec<Edge> = b
            .edges
            .get(c.edges.clone())
            .ok_or(GraphError::BadLayout)?
            .iter()
            .map(|e| Edge {
                source: e.source - no,
                target: e.target - no,
                ..*e
            })
            .collect();
        let rounds: Vec<Vec<usize>> = b.rounds[..c.rounds]
            .iter()
            .map(|r| r.iter().filter(|v| c.nodes.contains(v)).map(|v| v - no).collect())
            .collect();
        out.push(AttributeGraph {
            components: vec![Component {
                nodes: 0..nodes.len(),
                edges: 0..edges.len(),
                rounds: rounds.len(),
            }],
            nodes,
            edges,
            rounds,
        });
    }
    Ok(out)
}

/// One step of the attribute walk.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum AttrEvent {
    Enter(NodeId),
    Leaf(NodeId),
    Exit(NodeId),
}

/// Attribute walk of `ast` up to the first pending site. An unexpanded
/// nonterminal still gets its `Enter`; an unbound slot gets nothing.
pub fn attr_events(g: &Grammar, ast: &PartialAst) -> Vec<AttrEvent> {
    let nodes = ast.nodes();
    let mut out = Vec::with_capacity(nodes.len() * 2);
    let mut stack: Vec<(NodeId, bool)> = vec![(ast.root(), false)];
    while let Some((v, exiting)) = stack.pop() {
        let n = &nodes[v];
        if exiting {
            out.push(AttrEvent::Exit(v));
            continue;
        }
        match &g.symbol(n.label).kind {
            SymbolKind::Nonterminal => {
                out.push(AttrEvent::Enter(v));
                if n.children.is_empty() {
                    break;
                }
                stack.push((v, true));
                stack.extend(n.children.iter().rev().map(|&c| (c, false)));
            }
            SymbolKind::Fixed(_) => out.push(AttrEvent::Leaf(v)),
            SymbolKind::Variable | SymbolKind::Literal(_) => {
                if n.binding.is_none() {
                    break;
                }
                out.push(AttrEvent::Leaf(v));
            }
        }
    }
    out
}

/// Attribute ids owned by syntax nodes and context variables.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct AttrIds {
    /// Inherited node of a nonterminal, joint node of a terminal.
    pub inh: Vec<Option<usize>>,
    /// Synthesized node of a nonterminal, joint node of a terminal.
    pub syn: Vec<Option<usize>>,
    pub ctx: Vec<usize>,
}

impl AttrIds {
    fn ensure(&mut self, n: usize) {
        if self.inh.len() < n {
            self.inh.resize(n, None);
            self.syn.resize(n, None);
        }
    }

    pub fn inherited(&self, v: NodeId) -> Option<usize> {
        self.inh.get(v).copied().flatten()
    }

    pub fn synthesized(&self, v: NodeId) -> Option<usize> {
        self.syn.get(v).copied().flatten()
    }

    /// Recovers the id maps from node origins of a single-component graph.
    pub fn of(graph: &AttributeGraph) -> AttrIds {
        let mut ids = AttrIds::default();
        for n in graph.nodes() {
            match (&n.origin, n.flavor) {
                (Origin::Context(_), _) => ids.ctx.push(n.id),
                (Origin::Ast(v), f) => {
                    ids.ensure(v + 1);
                    if f != Flavor::Synthesized {
                        ids.inh[*v] = Some(n.id);
                    }
                    if f != Flavor::Inherited {
                        ids.syn[*v] = Some(n.id);
                    }
                }
            }
        }
        ids
    }
}

fn is_decision_site(g: &Grammar, ast: &PartialAst, v: NodeId) -> bool {
    let s = g.symbol(ast.nodes()[v].label);
    s.is_nonterminal() || s.is_slot()
}

/// The nonterminal or slot visited right before `v` in preorder.
fn previous_decision(g: &Grammar, ast: &PartialAst, v: NodeId) -> Option<NodeId> {
    let mut prev = None;
    for u in ast.preorder() {
        if u == v {
            return prev;
        }
        if is_decision_site(g, ast, u) {
            prev = Some(u);
        }
    }
    None
}

fn prev_sibling_out(ast: &PartialAst, ids: &AttrIds, v: NodeId) -> Option<usize> {
    ast.last_sibling(v).ok().flatten().and_then(|s| ids.synthesized(s))
}

/// In-edges of attribute node `node` under `cfg`. All sources must already
/// have ids in `ids`.
pub fn compute_edges(
    g: &Grammar,
    ast: &PartialAst,
    ids: &AttrIds,
    ctx_vars: &[String],
    node: &AttrNode,
    cfg: GraphConfig,
) -> Result<Vec<Edge>, GraphError> {
    let target = node.id;
    let mut edges = Vec::new();
    let mut push = |source: Option<usize>, etype: EdgeType, label: Option<(usize, usize)>| {
        if let Some(source) = source {
            if cfg.edges.contains(etype) {
                edges.push(Edge {
                    source,
                    etype,
                    target,
                    label: if cfg.labels { label } else { None },
                });
            }
        }
    };
    let v = match node.origin {
        Origin::Context(_) => return Ok(Vec::new()),
        Origin::Ast(v) => v,
    };
    let an = ast.node(v).map_err(|_| GraphError::UnknownNode(target))?;
    match node.flavor {
        Flavor::Context => return Ok(Vec::new()),
        Flavor::Inherited | Flavor::Joint => {
            let Some(parent) = an.parent else {
                return Err(GraphError::RootInherited);
            };
            let pn = &ast.nodes()[parent];
            let idx = pn.children.iter().position(|&c| c == v).expect("child of parent");
            let label = pn.production.map(|p| (p, idx));
            push(ids.inherited(parent), EdgeType::Child, label);
            if node.flavor == Flavor::Joint {
                let last = ast.last_token(g, v).map_err(|_| GraphError::UnknownNode(target))?;
                push(last.and_then(|u| ids.synthesized(u)), EdgeType::NextToken, None);
                if g.symbol(an.label).kind == SymbolKind::Variable {
                    let prev = ast.last_use(g, v).map_err(|_| GraphError::UnknownNode(target))?;
                    let source = match prev {
                        Some(u) => ids.synthesized(u),
                        None => an
                            .binding
                            .as_ref()
                            .and_then(|name| ctx_vars.iter().position(|c| c == name))
                            .map(|i| ids.ctx[i]),
                    };
                    push(source, EdgeType::NextUse, None);
                }
            }
            push(prev_sibling_out(ast, ids, v), EdgeType::NextSibling, None);
            if is_decision_site(g, ast, v) && (node.flavor == Flavor::Inherited || g.symbol(an.label).is_slot()) {
                let prev = previous_decision(g, ast, v);
                push(prev.and_then(|u| ids.inherited(u)), EdgeType::NextExp, None);
            }
        }
        Flavor::Synthesized => {
            for &c in &an.children {
                push(ids.synthesized(c), EdgeType::Parent, None);
            }
            push(ids.inherited(v), EdgeType::InhToSyn, None);
        }
    }
    Ok(edges)
}

/// Grows an attribute graph alongside a tree expanded left to right.
#[derive(Clone, Debug)]
pub struct GraphBuilder {
    nodes: Vec<AttrNode>,
    edges: Vec<Edge>,
    ids: AttrIds,
    ctx_vars: Vec<String>,
    events: usize,
    cfg: GraphConfig,
}

impl GraphBuilder {
    pub fn new(ctx_vars: &[String], cfg: GraphConfig) -> Self {
        GraphBuilder {
            nodes: Vec::new(),
            edges: Vec::new(),
            ids: AttrIds::default(),
            ctx_vars: ctx_vars.to_vec(),
            events: 0,
            cfg,
        }
    }

    pub fn nodes(&self) -> &[AttrNode] {
        &self.nodes
    }

    pub fn edges(&self) -> &[Edge] {
        &self.edges
    }

    pub fn ids(&self) -> &AttrIds {
        &self.ids
    }

    pub fn ctx_vars(&self) -> &[String] {
        &self.ctx_vars
    }

    pub fn config(&self) -> GraphConfig {
        self.cfg
    }

    fn add_node(&mut self, origin: Origin, flavor: Flavor, label: String) -> usize {
        let id = self.nodes.len();
        self.nodes.push(AttrNode {
            id,
            origin,
            flavor,
            label,
        });
        id
    }

    /// Adds the attribute nodes and edges that `ast` gained since the last
    /// call; returns the new node ids.
    pub fn advance(&mut self, g: &Grammar, ast: &PartialAst) -> Result<Range<usize>, GraphError> {
        let start = self.nodes.len();
        let events = attr_events(g, ast);
        if events.len() < self.events {
            return Err(GraphError::NotAnExtension);
        }
        self.ids.ensure(ast.len());
        for ev in &events[self.events..] {
            let (v, flavor) = match *ev {
                AttrEvent::Enter(v) => (v, Flavor::Inherited),
                AttrEvent::Leaf(v) => (v, Flavor::Joint),
                AttrEvent::Exit(v) => (v, Flavor::Synthesized),
            };
            let an = &ast.nodes()[v];
            let label = ast
                .spelling(g, v)
                .map(str::to_string)
                .unwrap_or_else(|| g.symbol(an.label).name.clone());
            let id = self.add_node(Origin::Ast(v), flavor, label);
            match flavor {
                Flavor::Inherited => self.ids.inh[v] = Some(id),
                Flavor::Synthesized => self.ids.syn[v] = Some(id),
                _ => {
                    self.ids.inh[v] = Some(id);
                    self.ids.syn[v] = Some(id);
                }
            }
            if v == ast.root() && flavor == Flavor::Inherited {
                for i in 0..self.ctx_vars.len() {
                    let name = self.ctx_vars[i].clone();
                    let c = self.add_node(Origin::Context(i), Flavor::Context, name);
                    self.ids.ctx.push(c);
                }
                continue;
            }
            let node = self.nodes[id].clone();
            let new = compute_edges(g, ast, &self.ids, &self.ctx_vars, &node, self.cfg)?;
            self.edges.extend(new);
        }
        self.events = events.len();
        Ok(start..self.nodes.len())
    }

    pub fn finish(self) -> Result<AttributeGraph, GraphError> {
        AttributeGraph::new(self.nodes, self.edges)
    }

    /// Snapshot of the graph built so far, scheduled.
    pub fn graph(&self) -> Result<AttributeGraph, GraphError> {
        AttributeGraph::new(self.nodes.clone(), self.edges.clone())
    }
}

/// Attribute graph of a complete tree.
pub fn augment_full_tree(
    g: &Grammar,
    tree: &PartialAst,
    ctx_vars: &[String],
    cfg: GraphConfig,
) -> Result<AttributeGraph, GraphError> {
    if !tree.is_complete(g) {
        return Err(GraphError::Incomplete);
    }
    let mut b = GraphBuilder::new(ctx_vars, cfg);
    b.advance(g, tree)?;
    b.finish()
}

/// Edge multiset keyed by `(source, type, target, label)`.
pub fn edge_multiset(edges: &[Edge]) -> BTreeMap<Edge, usize> {
    let mut m = BTreeMap::new();
    for e in edges {
        *m.entry(*e).or_insert(0) += 1;
    }
    m
}
