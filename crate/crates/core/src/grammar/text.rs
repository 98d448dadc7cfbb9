//! Line-oriented grammar format.
//!
//! ```text
//! @start Expr
//! @variable Var
//! @literal IntLit int
//! @literals int: 0, 1, 2
//! Expr -> Expr "+" Expr
//! ```
//!
//! Quoted rhs items are fixed terminals, `#` starts a comment. Without an
//! `@start` header the first left-hand side is the start symbol.

use std::collections::HashMap;
use std::fmt;

use super::{Grammar, GrammarError, LiteralClass, LiteralVocab, Production, Symbol, SymbolId, SymbolKind};

pub const BUILTIN_GRAMMAR: &str = r#"# MiniExpr expressions
@start Expr
@variable Var
@literal IntLit int
@literal StrLit string
@literal BoolLit bool
@literals int: 0, 1, 2
@literals string: ""
@literals bool: true, false
Expr -> Var
Expr -> IntLit
Expr -> StrLit
Expr -> BoolLit
Expr -> Expr "+" Expr
Expr -> Expr "-" Expr
Expr -> Expr "*" Expr
Expr -> Expr "%" Expr
Expr -> Expr "<" Expr
Expr -> Expr ">" Expr
Expr -> Expr "<=" Expr
Expr -> Expr ">=" Expr
Expr -> Expr "==" Expr
Expr -> Expr "!=" Expr
Expr -> Expr "&&" Expr
Expr -> Expr "||" Expr
Expr -> "!" Expr
Expr -> Expr "." "Length"
Expr -> Expr "[" Expr "]"
Expr -> Expr "." "StartsWith" "(" Expr ")"
Expr -> Expr "." "Contains" "(" Expr ")"
Expr -> Expr "." "Substring" "(" Expr "," Expr ")"
Expr -> Expr "." "IndexOf" "(" Expr ")"
"#;

fn err(line: usize, msg: impl Into<String>) -> GrammarError {
    GrammarError::Parse { line, msg: msg.into() }
}

fn strip_comment(line: &str) -> &str {
    let mut in_quote = false;
    for (i, c) in line.char_indices() {
        match c {
            '"' => in_quote = !in_quote,
            '#' if !in_quote => return &line[..i],
            _ => {}
        }
    }
    line
}

/// Splits on whitespace, keeping `"..."` items whole.
fn rhs_items(text: &str, line: usize) -> Result<Vec<String>, GrammarError> {
    let mut out = Vec::new();
    let mut chars = text.chars().peekable();
    while let Some(&c) = chars.peek() {
        if c.is_whitespace() {
            chars.next();
            continue;
        }
        let mut item = String::new();
        if c == '"' {
            item.push(chars.next().unwrap());
            loop {
                match chars.next() {
                    Some('"') => {
                        item.push('"');
                        break;
                    }
                    Some(ch) => item.push(ch),
                    None => return Err(err(line, "unterminated quote")),
                }
            }
            if item.len() == 2 {
                return Err(err(line, "empty terminal spelling"));
            }
        } else {
            while let Some(&ch) = chars.peek() {
                if ch.is_whitespace() {
                    break;
                }
                if ch == '"' {
                    return Err(err(line, "quote inside symbol name"));
                }
                item.push(ch);
                chars.next();
            }
        }
        out.push(item);
    }
    Ok(out)
}

fn literal_list(text: &str, line: usize) -> Result<Vec<String>, GrammarError> {
    let mut out = Vec::new();
    let mut cur = String::new();
    let mut in_quote = false;
    for c in text.chars() {
        match c {
            '"' => {
                in_quote = !in_quote;
                cur.push(c);
            }
            ',' if !in_quote => {
                out.push(std::mem::take(&mut cur));
            }
            _ => cur.push(c),
        }
    }
    if in_quote {
        return Err(err(line, "unterminated quote"));
    }
    out.push(cur);
    let items: Vec<String> = out.into_iter().map(|s| s.trim().to_string()).collect();
    if items.len() == 1 && items[0].is_empty() {
        return Ok(Vec::new());
    }
    if items.iter().any(String::is_empty) {
        return Err(err(line, "empty literal entry"));
    }
    Ok(items)
}

fn is_ident(s: &str) -> bool {
    let mut cs = s.chars();
    matches!(cs.next(), Some(c) if c.is_ascii_alphabetic() || c == '_')
        && cs.all(|c| c.is_ascii_alphanumeric() || c == '_')
}

pub fn load_grammar(text: &str) -> Result<Grammar, GrammarError> {
    let mut start: Option<(String, usize)> = None;
    let mut slots: Vec<(String, SymbolKind)> = Vec::new();
    let mut vocab: [Vec<String>; 3] = Default::default();
    let mut rules: Vec<(usize, String, Vec<String>)> = Vec::new();

    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let body = strip_comment(raw).trim();
        if body.is_empty() {
            continue;
        }
        if let Some(rest) = body.strip_prefix('@') {
            let (kw, arg) = rest.split_once(char::is_whitespace).unwrap_or((rest, ""));
            let arg = arg.trim();
            match kw {
                "start" => {
                    if !is_ident(arg) {
                        return Err(err(line, format!("bad start symbol `{arg}`")));
                    }
                    start = Some((arg.to_string(), line));
                }
                "variable" => {
                    if !is_ident(arg) {
                        return Err(err(line, format!("bad variable symbol `{arg}`")));
                    }
                    slots.push((arg.to_string(), SymbolKind::Variable));
                }
                "literal" => {
                    let parts: Vec<&str> = arg.split_whitespace().collect();
                    let [name, class] = parts[..] else {
                        return Err(err(line, "expected `@literal Name class`"));
                    };
                    let class = LiteralClass::parse(class)
                        .ok_or_else(|| err(line, format!("unknown literal class `{class}`")))?;
                    if !is_ident(name) {
                        return Err(err(line, format!("bad literal symbol `{name}`")));
                    }
                    slots.push((name.to_string(), SymbolKind::Literal(class)));
                }
                "literals" => {
                    let (class, list) = arg
                        .split_once(':')
                        .ok_or_else(|| err(line, "expected `@literals class: a, b`"))?;
                    let class = LiteralClass::parse(class.trim())
                        .ok_or_else(|| err(line, format!("unknown literal class `{}`", class.trim())))?;
                    vocab[class.index()].extend(literal_list(list, line)?);
                }
                _ => return Err(err(line, format!("unknown directive `@{kw}`"))),
            }
            continue;
        }
        let (lhs, rhs) = body
            .split_once("->")
            .ok_or_else(|| err(line, "expected `Lhs -> rhs`"))?;
        let lhs = lhs.trim();
        if !is_ident(lhs) {
            return Err(err(line, format!("bad left-hand side `{lhs}`")));
        }
        let items = rhs_items(rhs, line)?;
        if items.is_empty() {
            return Err(GrammarError::EmptyRhs { line });
        }
        rules.push((line, lhs.to_string(), items));
    }

    if rules.is_empty() {
        return Err(err(0, "grammar has no productions"));
    }

    let mut symbols: Vec<Symbol> = Vec::new();
    let mut ids: HashMap<String, SymbolId> = HashMap::new();
    let mut add = |symbols: &mut Vec<Symbol>, name: &str, kind: SymbolKind| -> Result<SymbolId, GrammarError> {
        if ids.contains_key(name) {
            return Err(GrammarError::DuplicateSymbol(name.to_string()));
        }
        let id = SymbolId(symbols.len());
        symbols.push(Symbol {
            name: name.to_string(),
            kind,
        });
        ids.insert(name.to_string(), id);
        Ok(id)
    };
    for (name, kind) in &slots {
        add(&mut symbols, name, kind.clone())?;
    }
    let mut seen_lhs: Vec<&str> = Vec::new();
    for (_, lhs, _) in &rules {
        if !seen_lhs.contains(&lhs.as_str()) {
            seen_lhs.push(lhs);
            add(&mut symbols, lhs, SymbolKind::Nonterminal)?;
        }
    }
    let mut productions = Vec::with_capacity(rules.len());
    for (line, lhs, items) in &rules {
        let mut rhs = Vec::with_capacity(items.len());
        for item in items {
            let id = if item.starts_with('"') {
                match ids_lookup(&symbols, item) {
                    Some(id) => id,
                    None => {
                        let spelling = item[1..item.len() - 1].to_string();
                        add(&mut symbols, item, SymbolKind::Fixed(spelling))?
                    }
                }
            } else {
                ids_lookup(&symbols, item).ok_or_else(|| GrammarError::Undeclared {
                    line: *line,
                    name: item.clone(),
                })?
            };
            rhs.push(id);
        }
        productions.push(Production {
            id: productions.len(),
            lhs: ids_lookup(&symbols, lhs).expect("lhs registered"),
            rhs,
        });
    }

    let start = match start {
        Some((name, line)) => ids_lookup(&symbols, &name).ok_or(GrammarError::Undeclared { line, name })?,
        None => productions[0].lhs,
    };
    Grammar::from_parts(symbols, productions, start, LiteralVocab::new(vocab)?)
}

fn ids_lookup(symbols: &[Symbol], name: &str) -> Option<SymbolId> {
    symbols.iter().position(|s| s.name == name).map(SymbolId)
}

impl fmt::Display for Grammar {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "@start {}", self.symbol(self.start()).name)?;
        for s in self.symbols() {
            match &s.kind {
                SymbolKind::Variable => writeln!(f, "@variable {}", s.name)?,
                SymbolKind::Literal(c) => writeln!(f, "@literal {} {}", s.name, c)?,
                _ => {}
            }
        }
        for c in LiteralClass::ALL {
            let known = self.literals().known(c);
            if !known.is_empty() {
                writeln!(f, "@literals {}: {}", c, known.join(", "))?;
            }
        }
        for p in self.productions() {
            write!(f, "{} ->", self.symbol(p.lhs).name)?;
            for s in &p.rhs {
                write!(f, " {}", self.symbol(*s).name)?;
            }
            writeln!(f)?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grammar::builtin_grammar;

    #[test]
    fn single_rule() {
        let g = load_grammar("Expr -> Expr \"+\" Expr\n").unwrap();
        assert_eq!(g.productions().len(), 1);
        assert_eq!(g.productions()[0].rhs.len(), 3);
    }

    #[test]
    fn undeclared_symbol_is_named() {
        let e = load_grammar("Expr -> Foo \"+\"\n").unwrap_err();
        assert_eq!(
            e,
            GrammarError::Undeclared {
                line: 1,
                name: "Foo".into()
            }
        );
    }

    #[test]
    fn empty_rhs_and_parse_errors_carry_lines() {
        assert_eq!(
            load_grammar("# c\nExpr -> \"a\"\nExpr ->\n").unwrap_err(),
            GrammarError::EmptyRhs { line: 3 }
        );
        assert!(matches!(
            load_grammar("Expr \"a\"\n").unwrap_err(),
            GrammarError::Parse { line: 1, .. }
        ));
        assert!(matches!(
            load_grammar("@literal X float\n").unwrap_err(),
            GrammarError::Parse { line: 1, .. }
        ));
    }

    #[test]
    fn builtin_round_trips() {
        let g = builtin_grammar();
        let again = load_grammar(&g.to_string()).unwrap();
        assert_eq!(g, again);
        assert_eq!(again.to_string(), g.to_string());
    }

    #[test]
    fn literal_lists_keep_quoted_commas() {
        let g = load_grammar("@literal S string\n@literals string: \",\", \"a\"\nE -> S\n").unwrap();
        assert_eq!(g.literals().known(LiteralClass::String), ["\",\"", "\"a\""]);
        let again = load_grammar(&g.to_string()).unwrap();
        assert_eq!(g, again);
    }

    #[test]
    fn unproductive_nonterminal_rejected() {
        // B appears only on the right, so it is undeclared rather than unproductive.
        assert!(matches!(
            load_grammar("A -> B\n").unwrap_err(),
            GrammarError::Undeclared { .. }
        ));
    }

    #[test]
    fn bad_literals_rejected() {
        assert!(matches!(
            load_grammar("@literals int: 1, x\nE -> \"a\"\n").unwrap_err(),
            GrammarError::BadLiteral { .. }
        ));
        assert!(matches!(
            load_grammar("@literals bool: true, true\nE -> \"a\"\n").unwrap_err(),
            GrammarError::DuplicateLiteral { .. }
        ));
    }
}
