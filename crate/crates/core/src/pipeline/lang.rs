//! MiniExpr programs: lexer, parser, printer and the concrete syntax tree
//! the graph encoder runs over.

use std::collections::HashMap;
use std::fmt::Write as _;

use thiserror::Error;

use crate::grammar::{classify, Grammar, LiteralClass, MiniType, Operator};
use crate::syntax::{is_identifier, tree_from_steps, PartialAst, Step, SyntaxError};

/// Marks the removed expression in a context.
pub const HOLE: &str = "<HOLE>";

pub const KEYWORDS: [&str; 10] = ["fn", "if", "else", "while", "return", "int", "bool", "string", "true", "false"];

const TWO_CHAR: [&str; 6] = ["<=", ">=", "==", "!=", "&&", "||"];
const ONE_CHAR: &str = "+-*%<>!.[](){},;=";

pub const METHODS: [(&str, usize); 4] = [("StartsWith", 1), ("Contains", 1), ("Substring", 2), ("IndexOf", 1)];

/// Interior node kinds of the concrete syntax tree.
pub const CST_KINDS: [&str; 15] = [
    "Program", "Param", "Type", "Block", "Decl", "Assign", "If", "While", "Return", "Binary", "Not", "Length", "Call",
    "Index", "Paren",
];

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum LangError {
    #[error("lex error at byte {pos}: {msg}")]
    Lex { pos: usize, msg: String },
    #[error("parse error at token {pos}: {msg}")]
    Parse { pos: usize, msg: String },
    #[error("type error: {0}")]
    Type(String),
    #[error(transparent)]
    Syntax(#[from] SyntaxError),
}

pub fn lex(src: &str) -> Result<Vec<String>, LangError> {
    let bytes = src.as_bytes();
    let mut out = Vec::new();
    let mut i = 0;
    while i < bytes.len() {
        let c = bytes[i];
        if c.is_ascii_whitespace() {
            i += 1;
        } else if src[i..].starts_with(HOLE) {
            out.push(HOLE.to_string());
            i += HOLE.len();
        } else if c.is_ascii_alphabetic() || c == b'_' {
            let s = i;
            while i < bytes.len() && (bytes[i].is_ascii_alphanumeric() || bytes[i] == b'_') {
                i += 1;
            }
            out.push(src[s..i].to_string());
        } else if c.is_ascii_digit() {
            let s = i;
            while i < bytes.len() && bytes[i].is_ascii_digit() {
                i += 1;
            }
            out.push(src[s..i].to_string());
        } else if c == b'"' {
            let s = i;
            i += 1;
            loop {
                match bytes.get(i) {
                    None => return Err(LangError::Lex { pos: s, msg: "unterminated string".into() }),
                    Some(b'"') => break,
                    Some(b) if b.is_ascii_whitespace() => {
                        return Err(LangError::Lex { pos: i, msg: "whitespace in string literal".into() })
                    }
                    Some(_) => i += 1,
                }
            }
            i += 1;
            out.push(src[s..i].to_string());
        } else if i + 1 < bytes.len() && TWO_CHAR.contains(&&src[i..i + 2]) {
            out.push(src[i..i + 2].to_string());
            i += 2;
        } else if ONE_CHAR.as_bytes().contains(&c) {
            out.push((c as char).to_string());
            i += 1;
        } else {
            let ch = src[i..].chars().next().unwrap();
            return Err(LangError::Lex { pos: i, msg: format!("unexpected `{ch}`") });
        }
    }
    Ok(out)
}

pub fn is_variable_token(t: &str) -> bool {
    is_identifier(t) && !KEYWORDS.contains(&t)
}

/// Joins tokens the way the printer lays out source text.
pub fn join_tokens(tokens: &[String]) -> String {
    let mut out = String::new();
    let mut prev: Option<&str> = None;
    for t in tokens {
        let t = t.as_str();
        let space = match prev {
            None => false,
            Some("(" | "[" | "." | "!") => false,
            Some(p) => match t {
                ")" | "]" | "," | "." | "[" | ";" => false,
                "(" => !(is_variable_token(p)),
                _ => !(p == "(" || p == "["),
            },
        };
        if space {
            out.push(' ');
        }
        out.push_str(t);
        prev = Some(t);
    }
    out
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Expr {
    Var(String),
    Lit(LiteralClass, String),
    Binary(String, Box<Expr>, Box<Expr>),
    Not(Box<Expr>),
    Length(Box<Expr>),
    Index(Box<Expr>, Box<Expr>),
    Call(Box<Expr>, String, Vec<Expr>),
    Hole,
}

fn binary_prec(op: &str) -> u8 {
    match op {
        "||" => 1,
        "&&" => 2,
        "==" | "!=" => 3,
        "<" | ">" | "<=" | ">=" => 4,
        "+" | "-" => 5,
        "*" | "%" => 6,
        _ => 0,
    }
}

const NOT_PREC: u8 = 7;
const POSTFIX_PREC: u8 = 8;
const ATOM_PREC: u8 = 9;

impl Expr {
    fn prec(&self) -> u8 {
        match self {
            Expr::Binary(op, ..) => binary_prec(op),
            Expr::Not(_) => NOT_PREC,
            Expr::Length(_) | Expr::Index(..) | Expr::Call(..) => POSTFIX_PREC,
            _ => ATOM_PREC,
        }
    }

    /// Tokens with the fewest parentheses that reparse to the same tree.
    pub fn tokens(&self) -> Vec<String> {
        let mut out = Vec::new();
        self.emit(&mut out);
        out
    }

    fn emit_wrapped(&self, out: &mut Vec<String>, wrap: bool) {
        if wrap {
            out.push("(".into());
            self.emit(out);
            out.push(")".into());
        } else {
            self.emit(out);
        }
    }

    fn emit(&self, out: &mut Vec<String>) {
        match self {
            Expr::Var(v) => out.push(v.clone()),
            Expr::Lit(_, s) => out.push(s.clone()),
            Expr::Hole => out.push(HOLE.into()),
            Expr::Binary(op, l, r) => {
                let p = binary_prec(op);
                l.emit_wrapped(out, l.prec() < p);
                out.push(op.clone());
                r.emit_wrapped(out, r.prec() <= p);
            }
            Expr::Not(e) => {
                out.push("!".into());
                e.emit_wrapped(out, e.prec() < NOT_PREC);
            }
            Expr::Length(e) => {
                e.emit_wrapped(out, e.prec() < POSTFIX_PREC);
                out.extend([".".to_string(), "Length".to_string()]);
            }
            Expr::Index(a, i) => {
                a.emit_wrapped(out, a.prec() < POSTFIX_PREC);
                out.push("[".into());
                i.emit(out);
                out.push("]".into());
            }
            Expr::Call(r, m, args) => {
                r.emit_wrapped(out, r.prec() < POSTFIX_PREC);
                out.extend([".".to_string(), m.clone(), "(".to_string()]);
                for (k, a) in args.iter().enumerate() {
                    if k > 0 {
                        out.push(",".into());
                    }
                    a.emit(out);
                }
                out.push(")".into());
            }
        }
    }

    pub fn to_text(&self) -> String {
        join_tokens(&self.tokens())
    }

    pub fn contains_hole(&self) -> bool {
        match self {
            Expr::Hole => true,
            Expr::Var(_) | Expr::Lit(..) => false,
            Expr::Binary(_, l, r) | Expr::Index(l, r) => l.contains_hole() || r.contains_hole(),
            Expr::Not(e) | Expr::Length(e) => e.contains_hole(),
            Expr::Call(r, _, a) => r.contains_hole() || a.iter().any(Expr::contains_hole),
        }
    }
}

/// Maps between program expressions and grammar trees.
#[derive(Clone, Debug)]
pub struct ExprCodec {
    ops: HashMap<Operator, usize>,
}

impl ExprCodec {
    pub fn new(g: &Grammar) -> Self {
        let mut ops = HashMap::new();
        for p in g.productions() {
            ops.entry(classify(g, p)).or_insert(p.id);
        }
        ExprCodec { ops }
    }

    fn prod(&self, op: Operator) -> Result<usize, LangError> {
        self.ops
            .get(&op)
            .copied()
            .ok_or_else(|| LangError::Type(format!("grammar has no production for {op:?}")))
    }

    /// Decision steps in expansion order.
    pub fn steps(&self, e: &Expr) -> Result<Vec<Step>, LangError> {
        let mut out = Vec::new();
        self.push_steps(e, &mut out)?;
        Ok(out)
    }

    fn push_steps(&self, e: &Expr, out: &mut Vec<Step>) -> Result<(), LangError> {
        match e {
            Expr::Var(v) => {
                out.push(Step::Production(self.prod(Operator::Variable)?));
                out.push(Step::Variable(v.clone()));
            }
            Expr::Lit(c, s) => {
                out.push(Step::Production(self.prod(Operator::Literal(*c))?));
                out.push(Step::Literal(*c, s.clone()));
            }
            Expr::Binary(op, l, r) => {
                out.push(Step::Production(self.prod(Operator::Binary(op.clone()))?));
                self.push_steps(l, out)?;
                self.push_steps(r, out)?;
            }
            Expr::Not(x) => {
                out.push(Step::Production(self.prod(Operator::Unary("!".into()))?));
                self.push_steps(x, out)?;
            }
            Expr::Length(x) => {
                out.push(Step::Production(self.prod(Operator::Length)?));
                self.push_steps(x, out)?;
            }
            Expr::Index(a, i) => {
                out.push(Step::Production(self.prod(Operator::Index)?));
                self.push_steps(a, out)?;
                self.push_steps(i, out)?;
            }
            Expr::Call(r, m, args) => {
                out.push(Step::Production(self.prod(Operator::Method(m.clone(), args.len()))?));
                self.push_steps(r, out)?;
                for a in args {
                    self.push_steps(a, out)?;
                }
            }
            Expr::Hole => return Err(LangError::Type("hole inside an expression".into())),
        }
        Ok(())
    }

    pub fn tree(&self, g: &Grammar, e: &Expr) -> Result<PartialAst, LangError> {
        Ok(tree_from_steps(g, &self.steps(e)?)?)
    }

    /// Inverse of [`tree`](Self::tree) for complete trees.
    pub fn expr(&self, g: &Grammar, t: &PartialAst) -> Result<Expr, LangError> {
        self.expr_at(g, t, t.root())
    }

    fn expr_at(&self, g: &Grammar, t: &PartialAst, v: usize) -> Result<Expr, LangError> {
        let n = &t.nodes()[v];
        let pid = n.production.ok_or(SyntaxError::Incomplete)?;
        let p = &g.productions()[pid];
        let sub: Vec<usize> = p
            .rhs
            .iter()
            .zip(&n.children)
            .filter(|(s, _)| g.symbol(**s).is_nonterminal())
            .map(|(_, &c)| c)
            .collect();
        let leaf = || -> Result<String, LangError> {
            Ok(t.nodes()[n.children[0]].binding.clone().ok_or(SyntaxError::Incomplete)?)
        };
        let kid = |i: usize| -> Result<Box<Expr>, LangError> { Ok(Box::new(self.expr_at(g, t, sub[i])?)) };
        Ok(match classify(g, p) {
            Operator::Variable => Expr::Var(leaf()?),
            Operator::Literal(c) => Expr::Lit(c, leaf()?),
            Operator::Binary(op) => Expr::Binary(op, kid(0)?, kid(1)?),
            Operator::Unary(_) => Expr::Not(kid(0)?),
            Operator::Length => Expr::Length(kid(0)?),
            Operator::Index => Expr::Index(kid(0)?, kid(1)?),
            Operator::Method(m, k) => {
                let args = (1..=k).map(|i| kid(i).map(|b| *b)).collect::<Result<_, _>>()?;
                Expr::Call(kid(0)?, m, args)
            }
            Operator::Other => return Err(LangError::Type(format!("production {pid} is not an expression form"))),
        })
    }
}

/// Reference from a syntax node to a child node or to a token.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CstRef {
    Node(usize),
    Token(usize),
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CstNode {
    pub kind: &'static str,
    pub children: Vec<CstRef>,
}

/// Concrete syntax tree; node 0 is the program.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Cst {
    pub nodes: Vec<CstNode>,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ExprSite {
    pub expr: Expr,
    /// Token range of the expression.
    pub start: usize,
    pub end: usize,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Stmt {
    Decl { ty: MiniType, name: String, name_tok: usize, init: ExprSite },
    Assign { name: String, value: ExprSite },
    If { cond: ExprSite, then: Vec<Stmt>, els: Option<Vec<Stmt>> },
    While { cond: ExprSite, body: Vec<Stmt> },
    Return { value: ExprSite },
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Param {
    pub ty: MiniType,
    pub name: String,
    pub name_tok: usize,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Program {
    pub name: String,
    pub params: Vec<Param>,
    pub body: Vec<Stmt>,
    pub tokens: Vec<String>,
    pub cst: Cst,
}

struct Parser<'a> {
    toks: &'a [String],
    pos: usize,
    cst: Cst,
}

type PResult<T> = Result<T, LangError>;

impl<'a> Parser<'a> {
    fn peek(&self) -> Option<&str> {
        self.toks.get(self.pos).map(String::as_str)
    }

    fn peek_at(&self, k: usize) -> Option<&str> {
        self.toks.get(self.pos + k).map(String::as_str)
    }

    fn err<T>(&self, msg: impl Into<String>) -> PResult<T> {
        Err(LangError::Parse { pos: self.pos, msg: msg.into() })
    }

    fn node(&mut self, kind: &'static str) -> usize {
        self.cst.nodes.push(CstNode { kind, children: Vec::new() });
        self.cst.nodes.len() - 1
    }

    fn attach(&mut self, parent: usize, child: CstRef) {
        self.cst.nodes[parent].children.push(child);
    }

    fn expect(&mut self, parent: usize, tok: &str) -> PResult<usize> {
        if self.peek() == Some(tok) {
            let i = self.pos;
            self.attach(parent, CstRef::Token(i));
            self.pos += 1;
            Ok(i)
        } else {
            self.err(format!("expected `{tok}`, found `{}`", self.peek().unwrap_or("end of input")))
        }
    }

    fn ident(&mut self, parent: usize) -> PResult<(String, usize)> {
        match self.peek() {
            Some(t) if is_variable_token(t) => {
                let t = t.to_string();
                let i = self.pos;
                self.attach(parent, CstRef::Token(i));
                self.pos += 1;
                Ok((t, i))
            }
            other => self.err(format!("expected identifier, found `{}`", other.unwrap_or("end of input"))),
        }
    }

    fn at_type(&self) -> bool {
        matches!(self.peek(), Some("int" | "bool" | "string"))
    }

    fn ty(&mut self, parent: usize) -> PResult<MiniType> {
        let n = self.node("Type");
        self.attach(parent, CstRef::Node(n));
        let t = match self.peek() {
            Some("int") => {
                self.expect(n, "int")?;
                if self.peek() == Some("[") {
                    self.expect(n, "[")?;
                    self.expect(n, "]")?;
                    MiniType::IntArray
                } else {
                    MiniType::Int
                }
            }
            Some("bool") => {
                self.expect(n, "bool")?;
                MiniType::Bool
            }
            Some("string") => {
                self.expect(n, "string")?;
                MiniType::String
            }
            _ => return self.err("expected a type"),
        };
        Ok(t)
    }

    fn program(&mut self) -> PResult<(String, Vec<Param>, Vec<Stmt>)> {
        let root = self.node("Program");
        self.expect(root, "fn")?;
        let (name, _) = self.ident(root)?;
        self.expect(root, "(")?;
        let mut params = Vec::new();
        if self.peek() != Some(")") {
            loop {
                let p = self.node("Param");
                self.attach(root, CstRef::Node(p));
                let ty = self.ty(p)?;
                let (pname, tok) = self.ident(p)?;
                params.push(Param { ty, name: pname, name_tok: tok });
                if self.peek() == Some(",") {
                    self.expect(root, ",")?;
                } else {
                    break;
                }
            }
        }
        self.expect(root, ")")?;
        let body = self.block(root)?;
        if self.pos != self.toks.len() {
            return self.err("trailing tokens after function body");
        }
        Ok((name, params, body))
    }

    fn block(&mut self, parent: usize) -> PResult<Vec<Stmt>> {
        let b = self.node("Block");
        self.attach(parent, CstRef::Node(b));
        self.expect(b, "{")?;
        let mut out = Vec::new();
        while self.peek() != Some("}") {
            if self.peek().is_none() {
                return self.err("unterminated block");
            }
            out.push(self.stmt(b)?);
        }
        self.expect(b, "}")?;
        Ok(out)
    }

    fn site(&mut self, parent: usize) -> PResult<ExprSite> {
        let start = self.pos;
        let (expr, r) = self.expr()?;
        self.attach(parent, r);
        Ok(ExprSite { expr, start, end: self.pos })
    }

    fn stmt(&mut self, parent: usize) -> PResult<Stmt> {
        let s = match self.peek() {
            Some("if") => {
                let n = self.node("If");
                self.attach(parent, CstRef::Node(n));
                self.expect(n, "if")?;
                self.expect(n, "(")?;
                let cond = self.site(n)?;
                self.expect(n, ")")?;
                let then = self.block(n)?;
                let els = if self.peek() == Some("else") {
                    self.expect(n, "else")?;
                    Some(self.block(n)?)
                } else {
                    None
                };
                Stmt::If { cond, then, els }
            }
            Some("while") => {
                let n = self.node("While");
                self.attach(parent, CstRef::Node(n));
                self.expect(n, "while")?;
                self.expect(n, "(")?;
                let cond = self.site(n)?;
                self.expect(n, ")")?;
                let body = self.block(n)?;
                Stmt::While { cond, body }
            }
            Some("return") => {
                let n = self.node("Return");
                self.attach(parent, CstRef::Node(n));
                self.expect(n, "return")?;
                let value = self.site(n)?;
                self.expect(n, ";")?;
                Stmt::Return { value }
            }
            _ if self.at_type() => {
                let n = self.node("Decl");
                self.attach(parent, CstRef::Node(n));
                let ty = self.ty(n)?;
                let (name, name_tok) = self.ident(n)?;
                self.expect(n, "=")?;
                let init = self.site(n)?;
                self.expect(n, ";")?;
                Stmt::Decl { ty, name, name_tok, init }
            }
            Some(t) if is_variable_token(t) && self.peek_at(1) == Some("=") => {
                let n = self.node("Assign");
                self.attach(parent, CstRef::Node(n));
                let (name, _) = self.ident(n)?;
                self.expect(n, "=")?;
                let value = self.site(n)?;
                self.expect(n, ";")?;
                Stmt::Assign { name, value }
            }
            other => return self.err(format!("expected a statement, found `{}`", other.unwrap_or("end of input"))),
        };
        Ok(s)
    }

    fn expr(&mut self) -> PResult<(Expr, CstRef)> {
        self.binary(1)
    }

    fn binary(&mut self, level: u8) -> PResult<(Expr, CstRef)> {
        if level > 6 {
            return self.unary();
        }
        let (mut lhs, mut lref) = self.binary(level + 1)?;
        while let Some(op) = self.peek().filter(|t| binary_prec(t) == level).map(str::to_string) {
            let n = self.node("Binary");
            self.attach(n, lref);
            let op_tok = self.pos;
            self.attach(n, CstRef::Token(op_tok));
            self.pos += 1;
            let (rhs, rref) = self.binary(level + 1)?;
            self.attach(n, rref);
            lhs = Expr::Binary(op, Box::new(lhs), Box::new(rhs));
            lref = CstRef::Node(n);
        }
        Ok((lhs, lref))
    }

    fn unary(&mut self) -> PResult<(Expr, CstRef)> {
        if self.peek() == Some("!") {
            let n = self.node("Not");
            self.expect(n, "!")?;
            let (e, r) = self.unary()?;
            self.attach(n, r);
            return Ok((Expr::Not(Box::new(e)), CstRef::Node(n)));
        }
        self.postfix()
    }

    fn postfix(&mut self) -> PResult<(Expr, CstRef)> {
        let (mut e, mut r) = self.primary()?;
        loop {
            match self.peek() {
                Some(".") => {
                    let name = self.peek_at(1).unwrap_or("").to_string();
                    if name == "Length" {
                        let n = self.node("Length");
                        self.attach(n, r);
                        self.expect(n, ".")?;
                        self.expect(n, "Length")?;
                        e = Expr::Length(Box::new(e));
                        r = CstRef::Node(n);
                        continue;
                    }
                    let Some(&(_, arity)) = METHODS.iter().find(|(m, _)| *m == name) else {
                        return self.err(format!("unknown member `{name}`"));
                    };
                    let n = self.node("Call");
                    self.attach(n, r);
                    self.expect(n, ".")?;
                    self.expect(n, &name)?;
                    self.expect(n, "(")?;
                    let mut args = Vec::new();
                    for k in 0..arity {
                        if k > 0 {
                            self.expect(n, ",")?;
                        }
                        let (a, ar) = self.expr()?;
                        self.attach(n, ar);
                        args.push(a);
                    }
                    self.expect(n, ")")?;
                    e = Expr::Call(Box::new(e), name, args);
                    r = CstRef::Node(n);
                }
                Some("[") => {
                    let n = self.node("Index");
                    self.attach(n, r);
                    self.expect(n, "[")?;
                    let (i, ir) = self.expr()?;
                    self.attach(n, ir);
                    self.expect(n, "]")?;
                    e = Expr::Index(Box::new(e), Box::new(i));
                    r = CstRef::Node(n);
                }
                _ => return Ok((e, r)),
            }
        }
    }

    fn primary(&mut self) -> PResult<(Expr, CstRef)> {
        let Some(t) = self.peek().map(str::to_string) else {
            return self.err("expected an expression, found end of input");
        };
        let i = self.pos;
        let e = if t == "(" {
            let n = self.node("Paren");
            self.expect(n, "(")?;
            let (e, r) = self.expr()?;
            self.attach(n, r);
            self.expect(n, ")")?;
            return Ok((e, CstRef::Node(n)));
        } else if t == HOLE {
            Expr::Hole
        } else if let Some(c) = LiteralClass::of_token(&t) {
            Expr::Lit(c, t)
        } else if is_variable_token(&t) {
            Expr::Var(t)
        } else {
            return self.err(format!("expected an expression, found `{t}`"));
        };
        self.pos += 1;
        Ok((e, CstRef::Token(i)))
    }
}

/// Parses one function over an already lexed token list.
pub fn parse_tokens(tokens: Vec<String>) -> Result<Program, LangError> {
    let mut p = Parser { toks: &tokens, pos: 0, cst: Cst::default() };
    let (name, params, body) = p.program()?;
    let cst = p.cst;
    Ok(Program { name, params, body, tokens, cst })
}

pub fn parse_program(src: &str) -> Result<Program, LangError> {
    parse_tokens(lex(src)?)
}

fn push_stmts(out: &mut String, stmts: &[Stmt], depth: usize) {
    let pad = "    ".repeat(depth);
    for s in stmts {
        match s {
            Stmt::Decl { ty, name, init, .. } => {
                let _ = writeln!(out, "{pad}{ty} {name} = {};", init.expr.to_text());
            }
            Stmt::Assign { name, value } => {
                let _ = writeln!(out, "{pad}{name} = {};", value.expr.to_text());
            }
            Stmt::Return { value } => {
                let _ = writeln!(out, "{pad}return {};", value.expr.to_text());
            }
            Stmt::If { cond, then, els } => {
                let _ = writeln!(out, "{pad}if ({}) {{", cond.expr.to_text());
                push_stmts(out, then, depth + 1);
                match els {
                    Some(e) => {
                        let _ = writeln!(out, "{pad}}} else {{");
                        push_stmts(out, e, depth + 1);
                        let _ = writeln!(out, "{pad}}}");
                    }
                    None => {
                        let _ = writeln!(out, "{pad}}}");
                    }
                }
            }
            Stmt::While { cond, body } => {
                let _ = writeln!(out, "{pad}while ({}) {{", cond.expr.to_text());
                push_stmts(out, body, depth + 1);
                let _ = writeln!(out, "{pad}}}");
            }
        }
    }
}

/// Source text for a function. Expression sites in `body` need not have
/// valid token ranges.
pub fn print_program(name: &str, params: &[(MiniType, String)], body: &[Stmt]) -> String {
    let ps: Vec<String> = params.iter().map(|(t, n)| format!("{t} {n}")).collect();
    let mut out = format!("fn {name}({}) {{\n", ps.join(", "));
    push_stmts(&mut out, body, 1);
    out.push_str("}\n");
    out
}

/// A statement expression together with the variables visible before it.
#[derive(Clone, Debug)]
pub struct ScopedSite<'a> {
    pub site: &'a ExprSite,
    pub scope: Vec<(String, MiniType)>,
    /// Type the statement requires, when it fixes one.
    pub expected: Option<MiniType>,
}

impl Program {
    pub fn sites(&self) -> Vec<ScopedSite<'_>> {
        let mut out = Vec::new();
        let mut scope: Vec<(String, MiniType)> = self.params.iter().map(|p| (p.name.clone(), p.ty)).collect();
        walk(&self.body, &mut scope, &mut out);
        out
    }

    /// Type-checks every statement using the rules of `g`.
    pub fn check(&self, g: &Grammar) -> Result<(), LangError> {
        let codec = ExprCodec::new(g);
        for s in self.sites() {
            let env = s.scope.iter().cloned().collect();
            let tree = codec.tree(g, &s.site.expr)?;
            let ty = crate::grammar::type_check(g, &tree, &env)
                .map_err(|e| LangError::Type(format!("{}: {e}", s.site.expr.to_text())))?;
            if let Some(want) = s.expected {
                if ty != want {
                    return Err(LangError::Type(format!("{} has type {ty}, expected {want}", s.site.expr.to_text())));
                }
            }
        }
        Ok(())
    }
}

fn walk<'a>(stmts: &'a [Stmt], scope: &mut Vec<(String, MiniType)>, out: &mut Vec<ScopedSite<'a>>) {
    let mark = scope.len();
    for s in stmts {
        match s {
            Stmt::Decl { ty, name, init, .. } => {
                out.push(ScopedSite { site: init, scope: scope.clone(), expected: Some(*ty) });
                scope.push((name.clone(), *ty));
            }
            Stmt::Assign { name, value } => {
                let want = scope.iter().rev().find(|(n, _)| n == name).map(|(_, t)| *t);
                out.push(ScopedSite { site: value, scope: scope.clone(), expected: want });
            }
            Stmt::Return { value } => out.push(ScopedSite { site: value, scope: scope.clone(), expected: None }),
            Stmt::If { cond, then, els } => {
                out.push(ScopedSite { site: cond, scope: scope.clone(), expected: Some(MiniType::Bool) });
                walk(then, scope, out);
                if let Some(e) = els {
                    walk(e, scope, out);
                }
            }
            Stmt::While { cond, body } => {
                out.push(ScopedSite { site: cond, scope: scope.clone(), expected: Some(MiniType::Bool) });
                walk(body, scope, out);
            }
        }
    }
    scope.truncate(mark);
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grammar::builtin_grammar;

    const SRC: &str = "fn f(int i, string s, int[] xs) {\n    int j = i + 1;\n    if (s.StartsWith(\"ab\") && j > 2) {\n        j = (j - i) * 2;\n    } else {\n        j = xs[0];\n    }\n    while (!(j < 3)) {\n        j = j - 1;\n    }\n    return s.Substring(0, j).Length;\n}\n";

    #[test]
    fn lex_operators_and_strings() {
        let t = lex("a<=b&&!c.Length<\"x\"").unwrap();
        assert_eq!(t, ["a", "<=", "b", "&&", "!", "c", ".", "Length", "<", "\"x\""]);
        assert!(lex("\"a b\"").is_err());
        assert!(lex("a # b").is_err());
        assert_eq!(lex("x = <HOLE>;").unwrap(), ["x", "=", HOLE, ";"]);
    }

    #[test]
    fn parse_and_print_round_trip() {
        let p = parse_program(SRC).unwrap();
        assert_eq!(p.params.len(), 3);
        assert_eq!(p.body.len(), 4);
        let params: Vec<(MiniType, String)> = p.params.iter().map(|x| (x.ty, x.name.clone())).collect();
        let text = print_program(&p.name, &params, &p.body);
        assert_eq!(text, SRC);
        p.check(&builtin_grammar()).unwrap();
    }

    #[test]
    fn minimal_parentheses() {
        for src in ["(a - b) - c", "a - (b - c)", "!(a && b)", "(a + b).Length", "a * (b + c) % d", "!!a"] {
            let p = parse_program(&format!("fn f() {{ return {src}; }}")).unwrap();
            let Stmt::Return { value } = &p.body[0] else { panic!() };
            let printed = value.expr.to_text();
            let again = parse_program(&format!("fn f() {{ return {printed}; }}")).unwrap();
            let Stmt::Return { value: v2 } = &again.body[0] else { panic!() };
            assert_eq!(v2.expr, value.expr, "{src} -> {printed}");
        }
        let p = parse_program("fn f() { return (a - b) - c; }").unwrap();
        let Stmt::Return { value } = &p.body[0] else { panic!() };
        assert_eq!(value.expr.to_text(), "a - b - c");
    }

    #[test]
    fn cst_covers_every_token_once() {
        let p = parse_program(SRC).unwrap();
        let mut seen = vec![0; p.tokens.len()];
        for n in &p.cst.nodes {
            for c in &n.children {
                if let CstRef::Token(t) = c {
                    seen[*t] += 1;
                }
            }
        }
        assert!(seen.iter().all(|&c| c == 1));
        // every node except the root has exactly one parent
        let mut parents = vec![0; p.cst.nodes.len()];
        for n in &p.cst.nodes {
            for c in &n.children {
                if let CstRef::Node(k) = c {
                    parents[*k] += 1;
                }
            }
        }
        assert_eq!(parents[0], 0);
        assert!(parents[1..].iter().all(|&c| c == 1));
    }

    #[test]
    fn sites_and_scopes() {
        let p = parse_program(SRC).unwrap();
        let sites = p.sites();
        assert_eq!(sites.len(), 7);
        assert_eq!(sites[0].scope.len(), 3);
        assert_eq!(sites[1].scope.len(), 4);
        let s = &sites[0].site;
        assert_eq!(p.tokens[s.start..s.end], ["i", "+", "1"]);
    }

    #[test]
    fn hole_parses_as_expression() {
        let p = parse_program("fn f(int a) { int b = <HOLE>; return b; }").unwrap();
        let Stmt::Decl { init, .. } = &p.body[0] else { panic!() };
        assert_eq!(init.expr, Expr::Hole);
    }

    #[test]
    fn codec_round_trip() {
        let g = builtin_grammar();
        let codec = ExprCodec::new(&g);
        let p = parse_program(SRC).unwrap();
        for s in p.sites() {
            let t = codec.tree(&g, &s.site.expr).unwrap();
            assert_eq!(codec.expr(&g, &t).unwrap(), s.site.expr);
        }
        let t = codec.tree(&g, &Expr::Binary("-".into(), Box::new(Expr::Var("i".into())), Box::new(Expr::Var("j".into())))).unwrap();
        assert_eq!(t.decision_text(), "P5 P0 Vi P0 Vj");
    }

    #[test]
    fn type_errors_reported() {
        let g = builtin_grammar();
        let p = parse_program("fn f(bool b) { int x = b + 1; }").unwrap();
        assert!(matches!(p.check(&g), Err(LangError::Type(_))));
        let p = parse_program("fn f(int b) { bool x = b + 1; }").unwrap();
        assert!(matches!(p.check(&g), Err(LangError::Type(_))));
    }
}
