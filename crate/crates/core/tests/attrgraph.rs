mod common;

use std::collections::BTreeMap;

use nag_core::attrgraph::{
    augment_full_tree, batch_graphs, compute_edges, edge_multiset, unbatch, AttrIds, AttributeGraph, Edge, EdgeType,
    Flavor, GraphBuilder, GraphConfig,
};
use nag_core::grammar::{builtin_grammar, Grammar, SymbolKind};
use nag_core::syntax::{random_tree, tree_from_text, PartialAst};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn ctx() -> Vec<String> {
    vec!["i".into(), "j".into()]
}

fn configs() -> [GraphConfig; 4] {
    [GraphConfig::tree(), GraphConfig::asn(), GraphConfig::syn(), GraphConfig::nag()]
}

fn triples(edges: &[Edge]) -> Vec<(usize, EdgeType, usize)> {
    let mut v: Vec<_> = edges.iter().map(|e| (e.source, e.etype, e.target)).collect();
    v.sort();
    v
}

/// Edge rules written out directly over the finished tree.
struct Oracle<'a> {
    g: &'a Grammar,
    t: &'a PartialAst,
    inh: Vec<usize>,
    syn: Vec<usize>,
    ctx: Vec<usize>,
    leaves: Vec<usize>,
    next: usize,
}

impl<'a> Oracle<'a> {
    fn new(g: &'a Grammar, t: &'a PartialAst, n_ctx: usize) -> Self {
        let mut o = Oracle {
            g,
            t,
            inh: vec![usize::MAX; t.len()],
            syn: vec![usize::MAX; t.len()],
            ctx: Vec::new(),
            leaves: Vec::new(),
            next: 0,
        };
        o.number(t.root(), n_ctx);
        o
    }

    fn fresh(&mut self) -> usize {
        self.next += 1;
        self.next - 1
    }

    fn number(&mut self, v: usize, n_ctx: usize) {
        let n = &self.t.nodes()[v];
        if self.g.symbol(n.label).is_terminal() {
            let id = self.fresh();
            self.inh[v] = id;
            self.syn[v] = id;
            self.leaves.push(v);
            return;
        }
        self.inh[v] = self.fresh();
        if v == self.t.root() {
            for _ in 0..n_ctx {
                let c = self.fresh();
                self.ctx.push(c);
            }
        }
        for &c in &n.children.clone() {
            self.number(c, n_ctx);
        }
        self.syn[v] = self.fresh();
    }

    fn edges(&self, names: &[String]) -> Vec<Edge> {
        let mut out = Vec::new();
        let e = |s: usize, t: EdgeType, d: usize, l: Option<(usize, usize)>| Edge {
            source: s,
            etype: t,
            target: d,
            label: l,
        };
        for (v, n) in self.t.nodes().iter().enumerate() {
            let terminal = self.g.symbol(n.label).is_terminal();
            if let Some(p) = n.parent {
                let pn = &self.t.nodes()[p];
                let k = pn.children.iter().position(|&c| c == v).unwrap();
                out.push(e(self.inh[p], EdgeType::Child, self.inh[v], Some((pn.production.unwrap(), k))));
                if k > 0 {
                    out.push(e(self.syn[pn.children[k - 1]], EdgeType::NextSibling, self.inh[v], None));
                }
            }
            if terminal {
                let pos = self.leaves.iter().position(|&u| u == v).unwrap();
                if pos > 0 {
                    out.push(e(self.syn[self.leaves[pos - 1]], EdgeType::NextToken, self.inh[v], None));
                }
                if self.g.symbol(n.label).kind == SymbolKind::Variable {
                    let name = n.binding.as_ref().unwrap();
                    let prev = self.leaves[..pos]
                        .iter()
                        .rev()
                        .find(|&&u| {
                            let un = &self.t.nodes()[u];
                            self.g.symbol(un.label).kind == SymbolKind::Variable && un.binding.as_ref() == Some(name)
                        })
                        .map(|&u| self.syn[u])
                        .or_else(|| names.iter().position(|c| c == name).map(|i| self.ctx[i]));
                    if let Some(s) = prev {
                        out.push(e(s, EdgeType::NextUse, self.inh[v], None));
                    }
                }
            } else {
                for &c in &n.children {
                    out.push(e(self.syn[c], EdgeType::Parent, self.syn[v], None));
                }
                out.push(e(self.inh[v], EdgeType::InhToSyn, self.syn[v], None));
            }
        }
        out
    }
}

fn random_trees(n: usize, seed: u64) -> Vec<PartialAst> {
    let g = builtin_grammar();
    let names: Vec<String> = ["i", "j", "k"].iter().map(|s| s.to_string()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| {
            let budget = rng.gen_range(0..10);
            random_tree(&g, &mut rng, &names, budget)
        })
        .collect()
}

#[test]
fn minus_example_matches_hand_listed_edges() {
    let g = builtin_grammar();
    let t = tree_from_text(&g, common::MINUS).unwrap();
    let gr = augment_full_tree(&g, &t, &ctx(), GraphConfig::nag()).unwrap();
    assert_eq!(gr.len(), 11);
    assert_eq!(triples(gr.edges()), common::minus_edges());
    let m = edge_multiset(gr.edges());
    assert!(m.values().all(|&c| c == 1));
}

#[test]
fn full_edge_set_matches_direct_rules() {
    let g = builtin_grammar();
    for (k, t) in random_trees(500, 3).iter().enumerate() {
        let names = ctx();
        let gr = augment_full_tree(&g, t, &names, GraphConfig::nag()).unwrap();
        let o = Oracle::new(&g, t, names.len());
        assert_eq!(edge_multiset(gr.edges()), edge_multiset(&o.edges(&names)), "tree {k}: {}", t.decision_text());
    }
}

fn acyclic(n: usize, edges: &[Edge]) -> bool {
    let mut adj = vec![Vec::new(); n];
    for e in edges {
        adj[e.source].push(e.target);
    }
    // 0 unseen, 1 on stack, 2 done
    let mut state = vec![0u8; n];
    fn visit(v: usize, adj: &[Vec<usize>], state: &mut [u8]) -> bool {
        state[v] = 1;
        for &w in &adj[v] {
            if state[w] == 1 || (state[w] == 0 && !visit(w, adj, state)) {
                return false;
            }
        }
        state[v] = 2;
        true
    }
    (0..n).all(|v| state[v] != 0 || visit(v, &adj, &mut state))
}

/// Longest-path depth of every node.
fn depths(n: usize, edges: &[Edge]) -> Vec<usize> {
    let mut d = vec![0; n];
    loop {
        let mut changed = false;
        for e in edges {
            if d[e.target] < d[e.source] + 1 {
                d[e.target] = d[e.source] + 1;
                changed = true;
            }
        }
        if !changed {
            return d;
        }
    }
}

#[test]
fn random_graphs_are_scheduled_dags() {
    let g = builtin_grammar();
    for t in random_trees(300, 9) {
        for cfg in configs() {
            let gr = augment_full_tree(&g, &t, &ctx(), cfg).unwrap();
            assert!(acyclic(gr.len(), gr.edges()));
            let round = gr.round_of();
            assert_eq!(round, depths(gr.len(), gr.edges()));
            for r in gr.rounds() {
                assert!(r.windows(2).all(|w| w[0] < w[1]));
            }
            for e in gr.edges() {
                assert!(round[e.source] < round[e.target]);
                assert_eq!(e.label.is_some(), e.etype == EdgeType::Child && cfg.labels);
                assert!(cfg.edges.contains(e.etype));
            }
            if cfg == GraphConfig::nag() {
                let mut want = vec![0];
                want.extend(gr.nodes().iter().filter(|n| n.flavor == Flavor::Context).map(|n| n.id));
                want.sort();
                assert_eq!(gr.sources(), want);
            }
            for n in gr.nodes().iter().filter(|n| n.flavor == Flavor::Context) {
                assert_eq!(gr.in_edges(n.id).count(), 0);
                assert!(gr.edges().iter().all(|e| e.source != n.id || e.etype == EdgeType::NextUse));
            }
        }
    }
}

#[test]
fn next_exp_only_in_syn() {
    let g = builtin_grammar();
    for t in random_trees(100, 4) {
        for cfg in configs() {
            let gr = augment_full_tree(&g, &t, &ctx(), cfg).unwrap();
            let has = gr.edges_of(EdgeType::NextExp).count() > 0;
            assert_eq!(has, cfg == GraphConfig::syn());
        }
    }
}

#[test]
fn incremental_edges_equal_full_edges() {
    let g = builtin_grammar();
    for t in random_trees(200, 21) {
        for cfg in configs() {
            let full = augment_full_tree(&g, &t, &ctx(), cfg).unwrap();
            let mut b = GraphBuilder::new(&ctx(), cfg);
            let mut a = PartialAst::new(&g);
            b.advance(&g, &a).unwrap();
            for d in t.history() {
                a.apply(&g, d).unwrap();
                b.advance(&g, &a).unwrap();
            }
            let inc = b.finish().unwrap();
            assert_eq!(edge_multiset(inc.edges()), edge_multiset(full.edges()));
            assert_eq!(inc, full);
        }
    }
}

#[test]
fn compute_edges_is_pure() {
    let g = builtin_grammar();
    for t in random_trees(50, 2) {
        let gr = augment_full_tree(&g, &t, &ctx(), GraphConfig::nag()).unwrap();
        let ids = AttrIds::of(&gr);
        for n in gr.nodes().iter().skip(1) {
            let a = compute_edges(&g, &t, &ids, &ctx(), n, GraphConfig::nag()).unwrap();
            let b = compute_edges(&g, &t, &ids, &ctx(), n, GraphConfig::nag()).unwrap();
            assert_eq!(a, b);
            let mut into: Vec<Edge> = gr.in_edges(n.id).copied().collect();
            let mut a = a;
            into.sort();
            a.sort();
            assert_eq!(a, into);
        }
    }
}

#[test]
fn batching_round_trips() {
    let g = builtin_grammar();
    let trees = random_trees(50, 8);
    let graphs: Vec<AttributeGraph> = trees
        .iter()
        .enumerate()
        .map(|(k, t)| augment_full_tree(&g, t, &ctx(), configs()[k % 4]).unwrap())
        .collect();
    let refs: Vec<&AttributeGraph> = graphs.iter().collect();
    let b = batch_graphs(&refs);
    assert_eq!(b.len(), graphs.iter().map(|g| g.len()).sum::<usize>());
    assert_eq!(b.edges().len(), graphs.iter().map(|g| g.edges().len()).sum::<usize>());
    assert_eq!(b.rounds().len(), graphs.iter().map(|g| g.rounds().len()).max().unwrap());
    assert_eq!(unbatch(&b).unwrap(), graphs);
    let round = b.round_of();
    for e in b.edges() {
        assert!(round[e.source] < round[e.target]);
    }
}

/// Minimal DOT reader: `digraph { stmt* }` with node and edge statements and
/// bracketed attribute lists.
mod dot {
    use std::collections::BTreeMap;

    #[derive(Debug, PartialEq)]
    enum Tok {
        Id(String),
        Arrow,
        Sym(char),
    }

    fn lex(s: &str) -> Result<Vec<Tok>, String> {
        let cs: Vec<char> = s.chars().collect();
        let mut out = Vec::new();
        let mut i = 0;
        while i < cs.len() {
            let c = cs[i];
            if c.is_whitespace() {
                i += 1;
            } else if c == '-' && cs.get(i + 1) == Some(&'>') {
                out.push(Tok::Arrow);
                i += 2;
            } else if "{}[];,=".contains(c) {
                out.push(Tok::Sym(c));
                i += 1;
            } else if c == '"' {
                let mut v = String::new();
                i += 1;
                loop {
                    match cs.get(i) {
                        None => return Err("unterminated string".into()),
                        Some('"') => break,
                        Some('\\') => {
                            v.push(*cs.get(i + 1).ok_or("dangling escape")?);
                            i += 2;
                        }
                        Some(&ch) => {
                            v.push(ch);
                            i += 1;
                        }
                    }
                }
                i += 1;
                out.push(Tok::Id(v));
            } else if c.is_ascii_alphanumeric() || c == '_' {
                let st = i;
                while i < cs.len() && (cs[i].is_ascii_alphanumeric() || cs[i] == '_' || cs[i] == '.') {
                    i += 1;
                }
                out.push(Tok::Id(cs[st..i].iter().collect()));
            } else {
                return Err(format!("unexpected `{c}`"));
            }
        }
        Ok(out)
    }

    pub type Attrs = BTreeMap<String, String>;

    #[derive(Debug, Default)]
    pub struct Graph {
        pub nodes: Vec<(String, Attrs)>,
        pub edges: Vec<(String, String, Attrs)>,
    }

    pub fn parse(s: &str) -> Result<Graph, String> {
        let toks = lex(s)?;
        let mut p = 0;
        let id = |p: &mut usize| match toks.get(*p) {
            Some(Tok::Id(v)) => {
                *p += 1;
                Ok(v.clone())
            }
            t => Err(format!("expected id, found {t:?}")),
        };
        let sym = |p: &mut usize, c: char| {
            if toks.get(*p) == Some(&Tok::Sym(c)) {
                *p += 1;
                Ok(())
            } else {
                Err(format!("expected `{c}` at token {}", *p))
            }
        };
        if id(&mut p)? != "digraph" {
            return Err("not a digraph".into());
        }
        if let Some(Tok::Id(_)) = toks.get(p) {
            p += 1;
        }
        sym(&mut p, '{')?;
        let mut g = Graph::default();
        while toks.get(p) != Some(&Tok::Sym('}')) {
            let a = id(&mut p)?;
            let mut chain = vec![a];
            while toks.get(p) == Some(&Tok::Arrow) {
                p += 1;
                chain.push(id(&mut p)?);
            }
            let mut attrs = Attrs::new();
            while toks.get(p) == Some(&Tok::Sym('[')) {
                p += 1;
                while toks.get(p) != Some(&Tok::Sym(']')) {
                    let k = id(&mut p)?;
                    sym(&mut p, '=')?;
                    let v = id(&mut p)?;
                    attrs.insert(k, v);
                    if matches!(toks.get(p), Some(Tok::Sym(',' | ';'))) {
                        p += 1;
                    }
                }
                p += 1;
            }
            if toks.get(p) == Some(&Tok::Sym(';')) {
                p += 1;
            }
            if chain.len() == 1 {
                g.nodes.push((chain.pop().unwrap(), attrs));
            } else {
                for w in chain.windows(2) {
                    g.edges.push((w[0].clone(), w[1].clone(), attrs.clone()));
                }
            }
        }
        p += 1;
        if p != toks.len() {
            return Err("trailing tokens".into());
        }
        Ok(g)
    }
}

fn color(t: EdgeType) -> &'static str {
    match t {
        EdgeType::Child => "red",
        EdgeType::Parent => "green",
        EdgeType::NextSibling => "black",
        EdgeType::NextUse => "orange",
        EdgeType::NextToken => "blue",
        EdgeType::InhToSyn => "gray",
        EdgeType::NextExp => "purple",
    }
}

#[test]
fn dot_output_parses_and_mirrors_the_graph() {
    let g = builtin_grammar();
    let empty = dot::parse(&AttributeGraph::empty().export_dot()).unwrap();
    assert!(empty.nodes.is_empty() && empty.edges.is_empty());

    let mut trees = random_trees(40, 17);
    trees.push(tree_from_text(&g, common::MINUS).unwrap());
    let mut quoted = PartialAst::new(&g);
    quoted.apply_production(&g, 0, 2).unwrap();
    quoted.bind_terminal(&g, 1, "\"a\\\"b\"").unwrap();
    trees.push(quoted);
    for t in &trees {
        for cfg in configs() {
            let gr = augment_full_tree(&g, t, &ctx(), cfg).unwrap();
            let d = dot::parse(&gr.export_dot()).unwrap();
            assert_eq!(d.nodes.len(), gr.len());
            for (k, (name, attrs)) in d.nodes.iter().enumerate() {
                let n = &gr.nodes()[k];
                assert_eq!(name, &format!("n{k}"));
                assert_eq!(attrs["label"], format!("{}:{}:{}", n.id, n.flavor.name(), n.label));
            }
            let mut by_color: BTreeMap<String, usize> = BTreeMap::new();
            for (s, t, attrs) in &d.edges {
                assert!(s.starts_with('n') && t.starts_with('n'));
                *by_color.entry(attrs["color"].clone()).or_insert(0) += 1;
            }
            let mut want: BTreeMap<String, usize> = BTreeMap::new();
            for e in gr.edges() {
                *want.entry(color(e.etype).to_string()).or_insert(0) += 1;
            }
            assert_eq!(by_color, want);
            // Edge lines come grouped by type.
            let order: Vec<&str> = d.edges.iter().map(|e| e.2["color"].as_str()).collect();
            let mut seen: Vec<&str> = Vec::new();
            for c in order {
                if seen.last() != Some(&c) {
                    assert!(!seen.contains(&c), "edge type {c} split into two groups");
                    seen.push(c);
                }
            }
        }
    }
}

#[test]
fn debug_dump_lists_every_edge() {
    let g = builtin_grammar();
    let t = tree_from_text(&g, common::MINUS).unwrap();
    let gr = augment_full_tree(&g, &t, &ctx(), GraphConfig::asn()).unwrap();
    let dump = gr.debug_dump();
    assert_eq!(dump.lines().count(), gr.edges().len());
    for (line, e) in dump.lines().zip(gr.edges()) {
        let f: Vec<&str> = line.split(' ').collect();
        assert_eq!(f[0].parse::<usize>().unwrap(), e.source);
        assert_eq!(EdgeType::parse(f[1]), Some(e.etype));
        assert_eq!(f[2].parse::<usize>().unwrap(), e.target);
        let (p, c) = e.label.unwrap();
        assert_eq!(f[3], format!("{p},{c}"));
    }
}

#[test]
fn single_production_tree() {
    let g = nag_core::grammar::load_grammar("S -> \"x\"\n").unwrap();
    let mut t = PartialAst::new(&g);
    t.apply_production(&g, 0, 0).unwrap();
    let gr = augment_full_tree(&g, &t, &[], GraphConfig::nag()).unwrap();
    assert_eq!(gr.len(), 3);
    assert_eq!(
        triples(gr.edges()),
        vec![(0, EdgeType::Child, 1), (0, EdgeType::InhToSyn, 2), (1, EdgeType::Parent, 2)]
    );
}

#[test]
fn incomplete_tree_is_rejected() {
    let g = builtin_grammar();
    let t = PartialAst::replay(&g, &tree_from_text(&g, common::MINUS).unwrap().history()[..2]).unwrap();
    assert!(augment_full_tree(&g, &t, &ctx(), GraphConfig::nag()).is_err());
}
