//! Partial syntax trees grown one decision at a time.

use std::fmt;

use rand::Rng;
use thiserror::Error;

use crate::grammar::{Grammar, LiteralClass, SymbolId, SymbolKind};

pub type NodeId = usize;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct AstNode {
    pub id: NodeId,
    pub label: SymbolId,
    pub parent: Option<NodeId>,
    pub children: Vec<NodeId>,
    /// Production used to expand this node, if any.
    pub production: Option<usize>,
    /// Spelling picked for a variable or literal slot.
    pub binding: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub enum Decision {
    Production { node: NodeId, production: usize },
    Variable { node: NodeId, name: String },
    Literal { node: NodeId, class: LiteralClass, spelling: String },
}

impl Decision {
    pub fn node(&self) -> NodeId {
        match self {
            Decision::Production { node, .. } | Decision::Variable { node, .. } | Decision::Literal { node, .. } => {
                *node
            }
        }
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum SyntaxError {
    #[error("unknown node {0}")]
    UnknownNode(NodeId),
    #[error("production {production} does not expand `{found}`")]
    LhsMismatch { production: usize, found: String },
    #[error("unknown production {0}")]
    UnknownProduction(usize),
    #[error("node {0} is already expanded")]
    AlreadyExpanded(NodeId),
    #[error("node {0} cannot be bound")]
    NotBindable(NodeId),
    #[error("node {0} is already bound")]
    AlreadyBound(NodeId),
    #[error("`{spelling}` is not a valid {what}")]
    BadSpelling { what: &'static str, spelling: String },
    #[error("malformed sequence: {0}")]
    Malformed(String),
    #[error("tree is incomplete")]
    Incomplete,
    #[error("decision does not fit the next site: {0}")]
    GrammarMismatch(String),
    #[error("node {0} is not a variable occurrence")]
    NotVariable(NodeId),
}

/// Tree under construction plus the decisions that produced it.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PartialAst {
    nodes: Vec<AstNode>,
    history: Vec<Decision>,
}

impl PartialAst {
    pub fn new(g: &Grammar) -> Self {
        PartialAst {
            nodes: vec![AstNode {
                id: 0,
                label: g.start(),
                parent: None,
                children: Vec::new(),
                production: None,
                binding: None,
            }],
            history: Vec::new(),
        }
    }

    pub fn root(&self) -> NodeId {
        0
    }

    pub fn nodes(&self) -> &[AstNode] {
        &self.nodes
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn node(&self, v: NodeId) -> Result<&AstNode, SyntaxError> {
        self.nodes.get(v).ok_or(SyntaxError::UnknownNode(v))
    }

    pub fn history(&self) -> &[Decision] {
        &self.history
    }

    fn is_site(&self, g: &Grammar, n: &AstNode) -> bool {
        let sym = g.symbol(n.label);
        match sym.kind {
            SymbolKind::Nonterminal => n.children.is_empty(),
            SymbolKind::Variable | SymbolKind::Literal(_) => n.binding.is_none(),
            SymbolKind::Fixed(_) => false,
        }
    }

    /// Nodes in depth-first, left-to-right preorder.
    pub fn preorder(&self) -> Vec<NodeId> {
        let mut out = Vec::with_capacity(self.nodes.len());
        let mut stack = vec![self.root()];
        while let Some(v) = stack.pop() {
            out.push(v);
            stack.extend(self.nodes[v].children.iter().rev());
        }
        out
    }

    /// Left-most, bottom-most pending site: the first unexpanded nonterminal
    /// or unbound slot in preorder.
    pub fn next_expansion_site(&self, g: &Grammar) -> Option<NodeId> {
        let mut stack = vec![self.root()];
        while let Some(v) = stack.pop() {
            let n = &self.nodes[v];
            if self.is_site(g, n) {
                return Some(v);
            }
            stack.extend(n.children.iter().rev());
        }
        None
    }

    /// All pending sites in preorder.
    pub fn frontier(&self, g: &Grammar) -> Vec<NodeId> {
        self.preorder()
            .into_iter()
            .filter(|&v| self.is_site(g, &self.nodes[v]))
            .collect()
    }

    pub fn is_complete(&self, g: &Grammar) -> bool {
        self.next_expansion_site(g).is_none()
    }

    pub fn apply_production(&mut self, g: &Grammar, v: NodeId, p: usize) -> Result<(), SyntaxError> {
        let prod = g.production(p).ok_or(SyntaxError::UnknownProduction(p))?;
        let node = self.node(v)?;
        if node.label != prod.lhs {
            return Err(SyntaxError::LhsMismatch {
                production: p,
                found: g.symbol(node.label).name.clone(),
            });
        }
        if node.production.is_some() {
            return Err(SyntaxError::AlreadyExpanded(v));
        }
        let base = self.nodes.len();
        for (i, &s) in prod.rhs.iter().enumerate() {
            self.nodes.push(AstNode {
                id: base + i,
                label: s,
                parent: Some(v),
                children: Vec::new(),
                production: None,
                binding: None,
            });
        }
        let n = &mut self.nodes[v];
        n.children = (base..base + prod.rhs.len()).collect();
        n.production = Some(p);
        self.history.push(Decision::Production { node: v, production: p });
        Ok(())
    }

    pub fn bind_terminal(&mut self, g: &Grammar, v: NodeId, spelling: &str) -> Result<(), SyntaxError> {
        let node = self.node(v)?;
        let kind = g.symbol(node.label).kind.clone();
        let decision = match kind {
            SymbolKind::Variable => {
                if !is_identifier(spelling) {
                    return Err(SyntaxError::BadSpelling {
                        what: "variable name",
                        spelling: spelling.to_string(),
                    });
                }
                Decision::Variable {
                    node: v,
                    name: spelling.to_string(),
                }
            }
            SymbolKind::Literal(class) => {
                if !class.lexes(spelling) && spelling != class.unk() {
                    return Err(SyntaxError::BadSpelling {
                        what: class.name(),
                        spelling: spelling.to_string(),
                    });
                }
                Decision::Literal {
                    node: v,
                    class,
                    spelling: spelling.to_string(),
                }
            }
            _ => return Err(SyntaxError::NotBindable(v)),
        };
        if node.binding.is_some() {
            return Err(SyntaxError::AlreadyBound(v));
        }
        self.nodes[v].binding = Some(spelling.to_string());
        self.history.push(decision);
        Ok(())
    }

    /// Applies `d` at whatever node it names.
    pub fn apply(&mut self, g: &Grammar, d: &Decision) -> Result<(), SyntaxError> {
        match d {
            Decision::Production { node, production } => self.apply_production(g, *node, *production),
            Decision::Variable { node, name } => self.bind_terminal(g, *node, name),
            Decision::Literal { node, spelling, .. } => self.bind_terminal(g, *node, spelling),
        }
    }

    /// Rebuilds a tree from its history.
    pub fn replay(g: &Grammar, history: &[Decision]) -> Result<PartialAst, SyntaxError> {
        let mut a = PartialAst::new(g);
        for d in history {
            a.apply(g, d)?;
        }
        Ok(a)
    }

    pub fn parent(&self, v: NodeId) -> Result<Option<NodeId>, SyntaxError> {
        Ok(self.node(v)?.parent)
    }

    pub fn children(&self, v: NodeId) -> Result<&[NodeId], SyntaxError> {
        Ok(&self.node(v)?.children)
    }

    /// Index of `v` among its parent's children.
    pub fn child_index(&self, v: NodeId) -> Result<Option<usize>, SyntaxError> {
        match self.node(v)?.parent {
            None => Ok(None),
            Some(p) => Ok(self.nodes[p].children.iter().position(|&c| c == v)),
        }
    }

    pub fn last_sibling(&self, v: NodeId) -> Result<Option<NodeId>, SyntaxError> {
        match (self.node(v)?.parent, self.child_index(v)?) {
            (Some(p), Some(i)) if i > 0 => Ok(Some(self.nodes[p].children[i - 1])),
            _ => Ok(None),
        }
    }

    /// Terminals that precede `v` in preorder. In a tree grown left to right
    /// these are exactly the terminals generated before `v`.
    fn terminals_before(&self, g: &Grammar, v: NodeId) -> Vec<NodeId> {
        let mut out = Vec::new();
        for u in self.preorder() {
            if u == v {
                break;
            }
            if g.symbol(self.nodes[u].label).is_terminal() {
                out.push(u);
            }
        }
        out
    }

    /// Most recent terminal before `v`, fixed or bound.
    pub fn last_token(&self, g: &Grammar, v: NodeId) -> Result<Option<NodeId>, SyntaxError> {
        self.node(v)?;
        Ok(self.terminals_before(g, v).last().copied())
    }

    /// Previous occurrence of the variable bound at `v`, or `None` when the
    /// nearest earlier use is in the context.
    pub fn last_use(&self, g: &Grammar, v: NodeId) -> Result<Option<NodeId>, SyntaxError> {
        let node = self.node(v)?;
        if g.symbol(node.label).kind != SymbolKind::Variable {
            return Err(SyntaxError::NotVariable(v));
        }
        let Some(name) = &node.binding else {
            return Err(SyntaxError::NotVariable(v));
        };
        Ok(self
            .terminals_before(g, v)
            .into_iter()
            .rev()
            .find(|&u| self.nodes[u].binding.as_ref() == Some(name)))
    }

    /// Spelling of a terminal node, if known.
    pub fn spelling<'a>(&'a self, g: &'a Grammar, v: NodeId) -> Option<&'a str> {
        let n = &self.nodes[v];
        match &g.symbol(n.label).kind {
            SymbolKind::Fixed(s) => Some(s),
            SymbolKind::Variable | SymbolKind::Literal(_) => n.binding.as_deref(),
            SymbolKind::Nonterminal => None,
        }
    }

    /// Left-to-right terminal spellings of a complete tree.
    pub fn tokens(&self, g: &Grammar) -> Result<Vec<String>, SyntaxError> {
        let mut out = Vec::new();
        for v in self.preorder() {
            let n = &self.nodes[v];
            let sym = g.symbol(n.label);
            if sym.is_nonterminal() {
                if n.children.is_empty() {
                    return Err(SyntaxError::Incomplete);
                }
                continue;
            }
            out.push(self.spelling(g, v).ok_or(SyntaxError::Incomplete)?.to_string());
        }
        Ok(out)
    }

    /// Names of variables bound anywhere in the tree, in order of first use.
    pub fn variables(&self) -> Vec<String> {
        let mut out: Vec<String> = Vec::new();
        for d in &self.history {
            if let Decision::Variable { name, .. } = d {
                if !out.contains(name) {
                    out.push(name.clone());
                }
            }
        }
        out
    }

    /// History as whitespace-separated records.
    pub fn decision_text(&self) -> String {
        decisions_to_text(&self.history)
    }
}

/// Identifier shape shared by the grammar's variables and the program lexer.
pub fn is_identifier(s: &str) -> bool {
    let mut cs = s.chars();
    matches!(cs.next(), Some(c) if c.is_ascii_alphabetic() || c == '_')
        && cs.all(|c| c.is_ascii_alphanumeric() || c == '_')
}

/// A decision without the node it applies to; replay assigns nodes in
/// expansion order.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub enum Step {
    Production(usize),
    Variable(String),
    Literal(LiteralClass, String),
}

impl fmt::Display for Step {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Step::Production(p) => write!(f, "P{p}"),
            Step::Variable(v) => write!(f, "V{v}"),
            Step::Literal(c, s) => write!(f, "L{c}:{s}"),
        }
    }
}

impl Step {
    pub fn parse(record: &str) -> Result<Step, SyntaxError> {
        let bad = || SyntaxError::Malformed(format!("bad record `{record}`"));
        let (tag, rest) = record.split_at(record.char_indices().nth(1).map_or(record.len(), |(i, _)| i));
        match tag {
            "P" => rest.parse().map(Step::Production).map_err(|_| bad()),
            "V" if is_identifier(rest) => Ok(Step::Variable(rest.to_string())),
            "L" => {
                let (class, spelling) = rest.split_once(':').ok_or_else(bad)?;
                let class = LiteralClass::parse(class).ok_or_else(bad)?;
                if spelling.is_empty() || spelling.chars().any(char::is_whitespace) {
                    return Err(bad());
                }
                Ok(Step::Literal(class, spelling.to_string()))
            }
            _ => Err(bad()),
        }
    }
}

pub fn decisions_to_text(history: &[Decision]) -> String {
    history
        .iter()
        .map(|d| match d {
            Decision::Production { production, .. } => Step::Production(*production),
            Decision::Variable { name, .. } => Step::Variable(name.clone()),
            Decision::Literal { class, spelling, .. } => Step::Literal(*class, spelling.clone()),
        })
        .map(|s| s.to_string())
        .collect::<Vec<_>>()
        .join(" ")
}

pub fn parse_steps(text: &str) -> Result<Vec<Step>, SyntaxError> {
    let steps: Vec<Step> = text.split_whitespace().map(Step::parse).collect::<Result<_, _>>()?;
    if steps.is_empty() {
        return Err(SyntaxError::Malformed("empty sequence".into()));
    }
    Ok(steps)
}

/// Replays steps at successive expansion sites; the result must be complete.
pub fn tree_from_steps(g: &Grammar, steps: &[Step]) -> Result<PartialAst, SyntaxError> {
    if steps.is_empty() {
        return Err(SyntaxError::Malformed("empty sequence".into()));
    }
    let mut a = PartialAst::new(g);
    for (i, step) in steps.iter().enumerate() {
        let site = a
            .next_expansion_site(g)
            .ok_or_else(|| SyntaxError::Malformed(format!("trailing record {i}: `{step}`")))?;
        let kind = &g.symbol(a.nodes[site].label).kind;
        let fits = matches!(
            (kind, step),
            (SymbolKind::Nonterminal, Step::Production(_))
                | (SymbolKind::Variable, Step::Variable(_))
        ) || matches!((kind, step), (SymbolKind::Literal(k), Step::Literal(c, _)) if k == c);
        if !fits {
            return Err(SyntaxError::GrammarMismatch(format!(
                "record {i} `{step}` at `{}`",
                g.symbol(a.nodes[site].label).name
            )));
        }
        match step {
            Step::Production(p) => a.apply_production(g, site, *p)?,
            Step::Variable(s) | Step::Literal(_, s) => a.bind_terminal(g, site, s)?,
        }
    }
    if !a.is_complete(g) {
        return Err(SyntaxError::Incomplete);
    }
    Ok(a)
}

pub fn tree_from_text(g: &Grammar, text: &str) -> Result<PartialAst, SyntaxError> {
    tree_from_steps(g, &parse_steps(text)?)
}

/// Random complete tree over `g`. Once `budget` productions have been used,
/// only productions without nonterminal children are taken where possible.
pub fn random_tree<R: Rng>(g: &Grammar, rng: &mut R, vars: &[String], budget: usize) -> PartialAst {
    let mut a = PartialAst::new(g);
    let mut used = 0;
    while let Some(site) = a.next_expansion_site(g) {
        let label = a.nodes[site].label;
        match &g.symbol(label).kind {
            SymbolKind::Nonterminal => {
                let all: Vec<usize> = g.productions_for(label).map(|p| p.id).collect();
                let leaves: Vec<usize> = all
                    .iter()
                    .copied()
                    .filter(|&p| g.productions()[p].rhs.iter().all(|s| !g.symbol(*s).is_nonterminal()))
                    .collect();
                let pool = if used >= budget && !leaves.is_empty() { &leaves } else { &all };
                let p = pool[rng.gen_range(0..pool.len())];
                a.apply_production(g, site, p).expect("valid production");
                used += 1;
            }
            SymbolKind::Variable => {
                let name = if vars.is_empty() {
                    "x".to_string()
                } else {
                    vars[rng.gen_range(0..vars.len())].clone()
                };
                a.bind_terminal(g, site, &name).expect("bindable");
            }
            SymbolKind::Literal(class) => {
                let entries = g.literals().entries(*class);
                let s = entries[rng.gen_range(0..entries.len())].clone();
                a.bind_terminal(g, site, &s).expect("bindable");
            }
            SymbolKind::Fixed(_) => unreachable!("fixed terminals are never sites"),
        }
    }
    a
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grammar::builtin_grammar;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn minus_tree(g: &Grammar) -> PartialAst {
        tree_from_text(g, "P5 P0 Vi P0 Vj").unwrap()
    }

    #[test]
    fn new_tree_is_single_site() {
        let g = builtin_grammar();
        let a = PartialAst::new(&g);
        assert_eq!(a.len(), 1);
        assert_eq!(g.symbol(a.node(0).unwrap().label).name, "Expr");
        assert_eq!(a.frontier(&g), vec![0]);
        assert_eq!(PartialAst::replay(&g, &[]).unwrap(), a);
    }

    #[test]
    fn left_child_expands_first() {
        let g = builtin_grammar();
        let mut a = PartialAst::new(&g);
        a.apply_production(&g, 0, 5).unwrap();
        assert_eq!(a.children(0).unwrap().len(), 3);
        assert_eq!(a.next_expansion_site(&g), Some(1));
        assert_eq!(a.len(), 4);
        let names: Vec<_> = a.children(0).unwrap().iter().map(|&c| g.symbol(a.nodes[c].label).name.clone()).collect();
        assert_eq!(names, ["Expr", "\"-\"", "Expr"]);
    }

    #[test]
    fn production_errors() {
        let g = builtin_grammar();
        let mut a = PartialAst::new(&g);
        a.apply_production(&g, 0, 5).unwrap();
        assert!(matches!(a.apply_production(&g, 2, 0), Err(SyntaxError::LhsMismatch { .. })));
        assert_eq!(a.apply_production(&g, 0, 5), Err(SyntaxError::AlreadyExpanded(0)));
        assert_eq!(a.apply_production(&g, 9, 5), Err(SyntaxError::UnknownNode(9)));
    }

    #[test]
    fn binding_rules() {
        let g = builtin_grammar();
        let mut a = PartialAst::new(&g);
        a.apply_production(&g, 0, 5).unwrap();
        a.apply_production(&g, 1, 0).unwrap();
        a.bind_terminal(&g, 4, "i").unwrap();
        assert_eq!(a.history().len(), 3);
        assert!(matches!(a.history()[2], Decision::Variable { .. }));
        assert_eq!(a.bind_terminal(&g, 2, "-"), Err(SyntaxError::NotBindable(2)));
        assert_eq!(a.bind_terminal(&g, 4, "j"), Err(SyntaxError::AlreadyBound(4)));
    }

    #[test]
    fn minus_tokens_and_lookups() {
        let g = builtin_grammar();
        let a = minus_tree(&g);
        assert_eq!(a.tokens(&g).unwrap(), ["i", "-", "j"]);
        // Nodes: 0 root, 1 left Expr, 2 "-", 3 right Expr, 4 i, 5 j.
        assert_eq!(a.last_use(&g, 5).unwrap(), None);
        assert_eq!(a.last_token(&g, 5).unwrap(), Some(2));
        assert_eq!(a.last_token(&g, 4).unwrap(), None);
        assert_eq!(a.last_sibling(1).unwrap(), None);
        assert_eq!(a.last_sibling(3).unwrap(), Some(2));
        let b = tree_from_text(&g, "P4 P0 Vi P0 Vi").unwrap();
        assert_eq!(b.last_use(&g, 5).unwrap(), Some(4));
    }

    #[test]
    fn empty_sequence_is_malformed() {
        let g = builtin_grammar();
        assert!(matches!(tree_from_text(&g, ""), Err(SyntaxError::Malformed(_))));
        assert!(matches!(tree_from_text(&g, "P5 P0"), Err(SyntaxError::Incomplete)));
        assert!(matches!(tree_from_text(&g, "P0 Vi P0"), Err(SyntaxError::Malformed(_))));
        assert!(matches!(tree_from_text(&g, "Vi"), Err(SyntaxError::GrammarMismatch(_))));
        assert!(matches!(tree_from_text(&g, "P1 Lbool:true"), Err(SyntaxError::GrammarMismatch(_))));
    }

    #[test]
    fn random_trees_round_trip_and_replay() {
        let g = builtin_grammar();
        let vars = vec!["a".to_string(), "b".to_string()];
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..1000 {
            let t = random_tree(&g, &mut rng, &vars, 6);
            assert!(t.is_complete(&g));
            let back = tree_from_text(&g, &t.decision_text()).unwrap();
            assert_eq!(back, t);
            assert_eq!(PartialAst::replay(&g, t.history()).unwrap(), t);
        }
    }
}
