//! Random, well-typed MiniExpr functions.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::lang::{print_program, Expr, ExprSite, Stmt};
use crate::grammar::{LiteralClass, MiniType};

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SourceFile {
    pub name: String,
    pub text: String,
}

const NAMES: [&str; 34] = [
    "a", "b", "c", "d", "i", "j", "k", "m", "n", "x", "y", "z", "s", "t", "u", "w", "p", "q", "r", "v", "flag", "ok",
    "done", "len", "idx", "cnt", "sum", "acc", "name", "text", "word", "xs", "ys", "nums",
];

const STRINGS: [&str; 10] = ["\"\"", "\"a\"", "\"b\"", "\"ab\"", "\"x\"", "\"-\"", "\"hello\"", "\"abc\"", "\"_\"", "\":\""];

const LEAF_P: [f64; 4] = [0.45, 0.7, 0.9, 1.0];

struct Gen {
    rng: ChaCha8Rng,
    scope: Vec<(String, MiniType)>,
}

fn site(expr: Expr) -> ExprSite {
    ExprSite { expr, start: 0, end: 0 }
}

impl Gen {
    fn fresh_name(&mut self) -> Option<String> {
        let free: Vec<&str> = NAMES.iter().copied().filter(|n| !self.scope.iter().any(|(s, _)| s == n)).collect();
        free.choose(&mut self.rng).map(|s| s.to_string())
    }

    fn vars_of(&self, ty: MiniType) -> Vec<String> {
        self.scope.iter().filter(|(_, t)| *t == ty).map(|(n, _)| n.clone()).collect()
    }

    fn has(&self, ty: MiniType) -> bool {
        self.scope.iter().any(|(_, t)| *t == ty)
    }

    fn literal(&mut self, ty: MiniType) -> Expr {
        match ty {
            MiniType::Int => {
                let v: u32 = if self.rng.gen_bool(0.8) { self.rng.gen_range(0..=3) } else { self.rng.gen_range(4..=20) };
                Expr::Lit(LiteralClass::Int, v.to_string())
            }
            MiniType::Bool => Expr::Lit(LiteralClass::Bool, if self.rng.gen_bool(0.5) { "true" } else { "false" }.into()),
            MiniType::String => Expr::Lit(LiteralClass::String, STRINGS.choose(&mut self.rng).unwrap().to_string()),
            MiniType::IntArray => unreachable!("arrays have no literal form"),
        }
    }

    fn leaf(&mut self, ty: MiniType) -> Expr {
        let vars = self.vars_of(ty);
        if ty == MiniType::IntArray || (!vars.is_empty() && self.rng.gen_bool(0.7)) {
            Expr::Var(vars.choose(&mut self.rng).expect("array variable in scope").clone())
        } else {
            self.literal(ty)
        }
    }

    fn bin(&mut self, op: &str, ty: MiniType, depth: usize) -> Expr {
        let l = self.expr(ty, depth + 1);
        let r = self.expr(ty, depth + 1);
        Expr::Binary(op.into(), Box::new(l), Box::new(r))
    }

    fn pick<'a>(&mut self, ops: &[&'a str]) -> &'a str {
        ops.choose(&mut self.rng).unwrap()
    }

    fn expr(&mut self, ty: MiniType, depth: usize) -> Expr {
        if ty == MiniType::IntArray || self.rng.gen_bool(LEAF_P[depth.min(3)]) {
            return self.leaf(ty);
        }
        let d = depth + 1;
        match ty {
            MiniType::Int => {
                let arr = self.has(MiniType::IntArray);
                let mut forms: Vec<(u8, f64)> = vec![(0, 3.0), (1, 1.0), (3, 0.5)];
                if arr {
                    forms.push((2, 1.0));
                }
                match weighted(&mut self.rng, &forms) {
                    0 => {
                        let op = self.pick(&["+", "-", "*", "%"]);
                        self.bin(op, MiniType::Int, depth)
                    }
                    1 => {
                        let recv = if arr && self.rng.gen_bool(0.5) {
                            self.leaf(MiniType::IntArray)
                        } else {
                            self.expr(MiniType::String, d)
                        };
                        Expr::Length(Box::new(recv))
                    }
                    2 => {
                        let a = self.leaf(MiniType::IntArray);
                        let i = self.expr(MiniType::Int, d);
                        Expr::Index(Box::new(a), Box::new(i))
                    }
                    _ => {
                        let r = self.expr(MiniType::String, d);
                        let a = self.expr(MiniType::String, d + 1);
                        Expr::Call(Box::new(r), "IndexOf".into(), vec![a])
                    }
                }
            }
            MiniType::Bool => match weighted(&mut self.rng, &[(0, 3.0), (1, 1.5), (2, 1.0), (3, 0.7), (4, 1.0)]) {
                0 => {
                    let op = self.pick(&["<", ">", "<=", ">="]);
                    self.bin(op, MiniType::Int, depth)
                }
                1 => {
                    let op = self.pick(&["==", "!="]);
                    let t = *[MiniType::Int, MiniType::Int, MiniType::Bool, MiniType::String].choose(&mut self.rng).unwrap();
                    self.bin(op, t, depth)
                }
                2 => {
                    let op = self.pick(&["&&", "||"]);
                    self.bin(op, MiniType::Bool, depth)
                }
                3 => Expr::Not(Box::new(self.expr(MiniType::Bool, d))),
                _ => {
                    let m = self.pick(&["StartsWith", "Contains"]);
                    let r = self.expr(MiniType::String, d);
                    let a = self.expr(MiniType::String, d + 1);
                    Expr::Call(Box::new(r), m.into(), vec![a])
                }
            },
            MiniType::String => {
                if self.rng.gen_bool(0.6) {
                    self.bin("+", MiniType::String, depth)
                } else {
                    let r = self.expr(MiniType::String, d);
                    let a = self.expr(MiniType::Int, d + 1);
                    let b = self.expr(MiniType::Int, d + 1);
                    Expr::Call(Box::new(r), "Substring".into(), vec![a, b])
                }
            }
            MiniType::IntArray => unreachable!(),
        }
    }

    fn value_type(&mut self) -> MiniType {
        *[MiniType::Int, MiniType::Int, MiniType::Int, MiniType::Bool, MiniType::String].choose(&mut self.rng).unwrap()
    }

    fn simple(&mut self) -> Stmt {
        let assignable: Vec<(String, MiniType)> =
            self.scope.iter().filter(|(_, t)| *t != MiniType::IntArray).cloned().collect();
        if !assignable.is_empty() && self.rng.gen_bool(0.45) {
            let (name, ty) = assignable.choose(&mut self.rng).unwrap().clone();
            let value = site(self.expr(ty, 0));
            return Stmt::Assign { name, value };
        }
        let ty = self.value_type();
        let init = site(self.expr(ty, 0));
        match self.fresh_name() {
            Some(name) => {
                self.scope.push((name.clone(), ty));
                Stmt::Decl { ty, name, name_tok: 0, init }
            }
            None => Stmt::Return { value: init },
        }
    }

    fn block(&mut self, n: usize) -> Vec<Stmt> {
        let mark = self.scope.len();
        let out = (0..n).map(|_| self.simple()).collect();
        self.scope.truncate(mark);
        out
    }

    fn stmt(&mut self) -> Stmt {
        match weighted(&mut self.rng, &[(0, 6.5), (1, 1.5), (2, 1.0)]) {
            0 => self.simple(),
            1 => {
                let cond = site(self.expr(MiniType::Bool, 0));
                let k = self.rng.gen_range(1..=2);
                let then = self.block(k);
                let els = if self.rng.gen_bool(0.3) { Some(self.block(1)) } else { None };
                Stmt::If { cond, then, els }
            }
            _ => {
                let cond = site(self.expr(MiniType::Bool, 0));
                let body = self.block(1);
                Stmt::While { cond, body }
            }
        }
    }
}

fn weighted<R: Rng>(rng: &mut R, items: &[(u8, f64)]) -> u8 {
    let total: f64 = items.iter().map(|(_, w)| w).sum();
    let mut x = rng.gen_range(0.0..total);
    for &(v, w) in items {
        if x < w {
            return v;
        }
        x -= w;
    }
    items.last().unwrap().0
}

/// One function of `stmts` top-level statements.
pub fn generate_file(rng_seed: u64, index: usize, stmts: usize) -> SourceFile {
    let mut g = Gen { rng: ChaCha8Rng::seed_from_u64(rng_seed), scope: Vec::new() };
    let n_params = g.rng.gen_range(1..=3);
    let mut params = Vec::new();
    for _ in 0..n_params {
        let ty = *[MiniType::Int, MiniType::Int, MiniType::String, MiniType::Bool, MiniType::IntArray]
            .choose(&mut g.rng)
            .unwrap();
        let name = g.fresh_name().expect("name pool");
        g.scope.push((name.clone(), ty));
        params.push((ty, name));
    }
    let mut body: Vec<Stmt> = (0..stmts).map(|_| g.stmt()).collect();
    if g.rng.gen_bool(0.6) {
        let ty = g.value_type();
        body.push(Stmt::Return { value: site(g.expr(ty, 0)) });
    }
    SourceFile { name: format!("{index:04}.mexp"), text: print_program(&format!("f{index}"), &params, &body) }
}

/// `n_files` functions, deterministic in `seed`.
pub fn generate_corpus(seed: u64, n_files: usize, stmts: usize) -> Vec<SourceFile> {
    let mut master = ChaCha8Rng::seed_from_u64(seed);
    (0..n_files).map(|i| generate_file(master.gen(), i, stmts)).collect()
}
