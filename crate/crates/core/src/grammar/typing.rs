use std::fmt;

use serde::de::{MapAccess, Visitor};
use serde::ser::SerializeMap;
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

use super::{Grammar, LiteralClass, LiteralVocab, Production, SymbolKind};
use crate::syntax::{NodeId, PartialAst};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum MiniType {
    Int,
    Bool,
    String,
    IntArray,
}

impl MiniType {
    pub const ALL: [MiniType; 4] = [MiniType::Int, MiniType::Bool, MiniType::String, MiniType::IntArray];

    pub fn name(self) -> &'static str {
        match self {
            MiniType::Int => "int",
            MiniType::Bool => "bool",
            MiniType::String => "string",
            MiniType::IntArray => "int[]",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        MiniType::ALL.into_iter().find(|t| t.name() == s)
    }

    pub fn of_literal(class: LiteralClass) -> Self {
        match class {
            LiteralClass::Int => MiniType::Int,
            LiteralClass::String => MiniType::String,
            LiteralClass::Bool => MiniType::Bool,
        }
    }
}

impl fmt::Display for MiniType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl Serialize for MiniType {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(self.name())
    }
}

impl<'de> Deserialize<'de> for MiniType {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        MiniType::parse(&s).ok_or_else(|| serde::de::Error::custom(format!("unknown type `{s}`")))
    }
}

/// Variables in scope, in declaration order.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct TypeEnv {
    vars: Vec<(String, MiniType)>,
}

impl TypeEnv {
    pub fn new() -> Self {
        Self::default()
    }

    /// Adds a binding; returns false if the name is already present.
    pub fn insert(&mut self, name: impl Into<String>, ty: MiniType) -> bool {
        let name = name.into();
        if self.get(&name).is_some() {
            return false;
        }
        self.vars.push((name, ty));
        true
    }

    pub fn get(&self, name: &str) -> Option<MiniType> {
        self.vars.iter().find(|(n, _)| n == name).map(|(_, t)| *t)
    }

    pub fn contains(&self, name: &str) -> bool {
        self.get(name).is_some()
    }

    pub fn position(&self, name: &str) -> Option<usize> {
        self.vars.iter().position(|(n, _)| n == name)
    }

    pub fn len(&self) -> usize {
        self.vars.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vars.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, MiniType)> {
        self.vars.iter().map(|(n, t)| (n.as_str(), *t))
    }

    pub fn names(&self) -> Vec<String> {
        self.vars.iter().map(|(n, _)| n.clone()).collect()
    }
}

impl FromIterator<(String, MiniType)> for TypeEnv {
    fn from_iter<I: IntoIterator<Item = (String, MiniType)>>(iter: I) -> Self {
        let mut env = TypeEnv::new();
        for (n, t) in iter {
            env.insert(n, t);
        }
        env
    }
}

impl Serialize for TypeEnv {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        let mut m = s.serialize_map(Some(self.vars.len()))?;
        for (n, t) in &self.vars {
            m.serialize_entry(n, t)?;
        }
        m.end()
    }
}

impl<'de> Deserialize<'de> for TypeEnv {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        struct EnvVisitor;
        impl<'de> Visitor<'de> for EnvVisitor {
            type Value = TypeEnv;
            fn expecting(&self, f: &mut fmt::Formatter) -> fmt::Result {
                f.write_str("a map from variable names to types")
            }
            fn visit_map<A: MapAccess<'de>>(self, mut map: A) -> Result<TypeEnv, A::Error> {
                let mut env = TypeEnv::new();
                while let Some((name, ty)) = map.next_entry::<String, MiniType>()? {
                    if !env.insert(name.clone(), ty) {
                        return Err(serde::de::Error::custom(format!("duplicate variable `{name}`")));
                    }
                }
                Ok(env)
            }
        }
        d.deserialize_map(EnvVisitor)
    }
}

/// Shape of a production as far as typing is concerned.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub enum Operator {
    Variable,
    Literal(LiteralClass),
    Binary(String),
    Unary(String),
    Length,
    Index,
    Method(String, usize),
    Other,
}

fn fixed<'a>(g: &'a Grammar, p: &Production, i: usize) -> Option<&'a str> {
    match &g.symbol(p.rhs[i]).kind {
        SymbolKind::Fixed(s) => Some(s),
        _ => None,
    }
}

/// Recognises the operator a production encodes from its rhs pattern.
pub fn classify(g: &Grammar, p: &Production) -> Operator {
    let nt = |i: usize| g.symbol(p.rhs[i]).is_nonterminal();
    let n = p.rhs.len();
    match n {
        1 => match g.symbol(p.rhs[0]).kind {
            SymbolKind::Variable => Operator::Variable,
            SymbolKind::Literal(c) => Operator::Literal(c),
            _ => Operator::Other,
        },
        2 if !nt(0) && nt(1) => fixed(g, p, 0).map_or(Operator::Other, |s| Operator::Unary(s.into())),
        3 if nt(0) && nt(2) => fixed(g, p, 1).map_or(Operator::Other, |s| Operator::Binary(s.into())),
        3 if nt(0) && fixed(g, p, 1) == Some(".") && fixed(g, p, 2) == Some("Length") => Operator::Length,
        4 if nt(0) && fixed(g, p, 1) == Some("[") && nt(2) && fixed(g, p, 3) == Some("]") => Operator::Index,
        _ if n >= 5
            && nt(0)
            && fixed(g, p, 1) == Some(".")
            && fixed(g, p, 2).is_some()
            && fixed(g, p, 3) == Some("(")
            && fixed(g, p, n - 1) == Some(")") =>
        {
            // Arguments alternate with commas between the parentheses.
            let inner = &p.rhs[4..n - 1];
            let ok = inner.iter().enumerate().all(|(i, s)| {
                if i % 2 == 0 {
                    g.symbol(*s).is_nonterminal()
                } else {
                    g.symbol(*s).kind == SymbolKind::Fixed(",".into())
                }
            }) && !inner.is_empty()
                && inner.len() % 2 == 1;
            if ok {
                Operator::Method(fixed(g, p, 2).unwrap().into(), inner.len().div_ceil(2))
            } else {
                Operator::Other
            }
        }
        _ => Operator::Other,
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum TypeError {
    #[error("unbound variable `{0}`")]
    Unbound(String),
    #[error("`{op}` cannot take ({})", .found.iter().map(|t| t.name()).collect::<Vec<_>>().join(", "))]
    Mismatch { op: String, found: Vec<MiniType> },
    #[error("expression uses an unknown literal")]
    UnkLiteral,
    #[error("production {0} has no typing rule")]
    NoRule(usize),
    #[error("expression is incomplete")]
    Incomplete,
}

/// Outcome of checking one expression. `ty` is the type assuming UNK
/// literals have their class type.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TypeReport {
    pub ty: Option<MiniType>,
    pub errors: Vec<TypeError>,
    pub has_unk: bool,
}

impl TypeReport {
    pub fn well_typed(&self, expected: MiniType) -> bool {
        self.errors.is_empty() && !self.has_unk && self.ty == Some(expected)
    }

    /// Fails only because of an UNK literal.
    pub fn unk_only_failure(&self, expected: MiniType) -> bool {
        self.errors.is_empty() && self.has_unk && self.ty == Some(expected)
    }
}

fn binary(op: &str, l: MiniType, r: MiniType) -> Option<MiniType> {
    use MiniType::*;
    match (op, l, r) {
        ("+", Int, Int) => Some(Int),
        ("+", String, String) => Some(String),
        ("-" | "*" | "%", Int, Int) => Some(Int),
        ("<" | ">" | "<=" | ">=", Int, Int) => Some(Bool),
        ("==" | "!=", a, b) if a == b => Some(Bool),
        ("&&" | "||", Bool, Bool) => Some(Bool),
        _ => None,
    }
}

fn method(name: &str, recv: MiniType, args: &[MiniType]) -> Option<MiniType> {
    use MiniType::*;
    match (name, recv, args) {
        ("StartsWith" | "Contains", String, [String]) => Some(Bool),
        ("Substring", String, [Int, Int]) => Some(String),
        ("IndexOf", String, [String]) => Some(Int),
        _ => None,
    }
}

struct Checker<'a> {
    g: &'a Grammar,
    a: &'a PartialAst,
    env: &'a TypeEnv,
    errors: Vec<TypeError>,
    has_unk: bool,
}

impl Checker<'_> {
    fn mismatch(&mut self, op: &str, found: Vec<MiniType>) -> Option<MiniType> {
        self.errors.push(TypeError::Mismatch {
            op: op.to_string(),
            found,
        });
        None
    }

    fn visit(&mut self, v: NodeId) -> Option<MiniType> {
        let node = &self.a.nodes()[v];
        let Some(pid) = node.production else {
            self.errors.push(TypeError::Incomplete);
            return None;
        };
        let p = &self.g.productions()[pid];
        let kids: Vec<NodeId> = node.children.clone();
        let sub: Vec<NodeId> = p
            .rhs
            .iter()
            .zip(&kids)
            .filter(|(s, _)| self.g.symbol(**s).is_nonterminal())
            .map(|(_, &c)| c)
            .collect();
        match classify(self.g, p) {
            Operator::Variable => {
                let name = self.a.nodes()[kids[0]].binding.clone();
                match name {
                    None => {
                        self.errors.push(TypeError::Incomplete);
                        None
                    }
                    Some(n) => match self.env.get(&n) {
                        Some(t) => Some(t),
                        None => {
                            self.errors.push(TypeError::Unbound(n));
                            None
                        }
                    },
                }
            }
            Operator::Literal(c) => {
                match &self.a.nodes()[kids[0]].binding {
                    None => {
                        self.errors.push(TypeError::Incomplete);
                        return None;
                    }
                    Some(s) if LiteralVocab::is_unk(s) => self.has_unk = true,
                    Some(_) => {}
                }
                Some(MiniType::of_literal(c))
            }
            Operator::Binary(op) => {
                let l = self.visit(sub[0])?;
                let r = self.visit(sub[1])?;
                binary(&op, l, r).or_else(|| self.mismatch(&op, vec![l, r]))
            }
            Operator::Unary(op) => {
                let t = self.visit(sub[0])?;
                match (op.as_str(), t) {
                    ("!", MiniType::Bool) => Some(MiniType::Bool),
                    ("-", MiniType::Int) => Some(MiniType::Int),
                    _ => self.mismatch(&op, vec![t]),
                }
            }
            Operator::Length => {
                let t = self.visit(sub[0])?;
                match t {
                    MiniType::String | MiniType::IntArray => Some(MiniType::Int),
                    _ => self.mismatch(".Length", vec![t]),
                }
            }
            Operator::Index => {
                let a = self.visit(sub[0]);
                let i = self.visit(sub[1]);
                let (a, i) = (a?, i?);
                match (a, i) {
                    (MiniType::IntArray, MiniType::Int) => Some(MiniType::Int),
                    _ => self.mismatch("[]", vec![a, i]),
                }
            }
            Operator::Method(name, _) => {
                let types: Vec<Option<MiniType>> = sub.iter().map(|&c| self.visit(c)).collect();
                let types: Vec<MiniType> = types.into_iter().collect::<Option<_>>()?;
                method(&name, types[0], &types[1..]).or_else(|| self.mismatch(&format!(".{name}"), types))
            }
            Operator::Other => {
                self.errors.push(TypeError::NoRule(pid));
                None
            }
        }
    }
}

/// Checks the subtree rooted at the tree's root, collecting every error.
pub fn type_report(g: &Grammar, a: &PartialAst, env: &TypeEnv) -> TypeReport {
    let mut c = Checker {
        g,
        a,
        env,
        errors: Vec::new(),
        has_unk: false,
    };
    let ty = c.visit(a.root());
    TypeReport {
        ty: if c.errors.is_empty() { ty } else { None },
        errors: c.errors,
        has_unk: c.has_unk,
    }
}

/// Type of a complete expression. UNK literals are reported as
/// [`TypeError::UnkLiteral`] once everything else checks.
pub fn type_check(g: &Grammar, a: &PartialAst, env: &TypeEnv) -> Result<MiniType, TypeError> {
    let r = type_report(g, a, env);
    if let Some(e) = r.errors.into_iter().next() {
        return Err(e);
    }
    if r.has_unk {
        return Err(TypeError::UnkLiteral);
    }
    r.ty.ok_or(TypeError::Incomplete)
}
