//! The MiniExpr expression grammar, its text format, production masks,
//! literal vocabularies and the type rules used to judge generated code.

mod text;
mod typing;

use std::collections::HashMap;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use text::{load_grammar, BUILTIN_GRAMMAR};
pub use typing::{classify, type_check, type_report, MiniType, Operator, TypeEnv, TypeError, TypeReport};

/// Score used for masked-out productions.
pub const MASKED: f64 = f64::NEG_INFINITY;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LiteralClass {
    Int,
    String,
    Bool,
}

impl LiteralClass {
    pub const ALL: [LiteralClass; 3] = [LiteralClass::Int, LiteralClass::String, LiteralClass::Bool];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        match self {
            LiteralClass::Int => "int",
            LiteralClass::String => "string",
            LiteralClass::Bool => "bool",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        LiteralClass::ALL.into_iter().find(|c| c.name() == s)
    }

    pub fn unk(self) -> &'static str {
        match self {
            LiteralClass::Int => "UNK_INT_LITERAL",
            LiteralClass::String => "UNK_STRING_LITERAL",
            LiteralClass::Bool => "UNK_BOOL_LITERAL",
        }
    }

    /// Whether a source token spells a literal of this class.
    pub fn lexes(self, token: &str) -> bool {
        match self {
            LiteralClass::Int => !token.is_empty() && token.bytes().all(|b| b.is_ascii_digit()),
            LiteralClass::String => token.len() >= 2 && token.starts_with('"') && token.ends_with('"'),
            LiteralClass::Bool => token == "true" || token == "false",
        }
    }

    pub fn of_token(token: &str) -> Option<Self> {
        LiteralClass::ALL.into_iter().find(|c| c.lexes(token))
    }
}

impl fmt::Display for LiteralClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub enum SymbolKind {
    Nonterminal,
    /// A terminal with exactly one spelling.
    Fixed(String),
    /// A slot filled with an in-scope variable name.
    Variable,
    /// A slot filled with a literal of the given class.
    Literal(LiteralClass),
}

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct Symbol {
    pub name: String,
    pub kind: SymbolKind,
}

impl Symbol {
    pub fn is_nonterminal(&self) -> bool {
        self.kind == SymbolKind::Nonterminal
    }

    pub fn is_slot(&self) -> bool {
        matches!(self.kind, SymbolKind::Variable | SymbolKind::Literal(_))
    }

    pub fn is_terminal(&self) -> bool {
        !self.is_nonterminal()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct SymbolId(pub usize);

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Production {
    pub id: usize,
    pub lhs: SymbolId,
    pub rhs: Vec<SymbolId>,
}

/// Per-class literal spellings. Index 0 of every class is its UNK entry.
#[derive(Clone, Debug, PartialEq, Eq, Default)]
pub struct LiteralVocab {
    classes: [Vec<String>; 3],
}

impl LiteralVocab {
    /// Builds a vocabulary from known spellings (UNK is prepended).
    pub fn new(entries: [Vec<String>; 3]) -> Result<Self, GrammarError> {
        let mut classes: [Vec<String>; 3] = Default::default();
        for class in LiteralClass::ALL {
            let list = &entries[class.index()];
            let mut out = vec![class.unk().to_string()];
            for s in list {
                if !class.lexes(s) {
                    return Err(GrammarError::BadLiteral {
                        class,
                        spelling: s.clone(),
                    });
                }
                if out.contains(s) {
                    return Err(GrammarError::DuplicateLiteral {
                        class,
                        spelling: s.clone(),
                    });
                }
                out.push(s.clone());
            }
            classes[class.index()] = out;
        }
        Ok(LiteralVocab { classes })
    }

    /// All entries of a class, UNK first.
    pub fn entries(&self, class: LiteralClass) -> &[String] {
        &self.classes[class.index()]
    }

    /// Known spellings of a class, without UNK.
    pub fn known(&self, class: LiteralClass) -> &[String] {
        &self.classes[class.index()][1..]
    }

    pub fn position(&self, class: LiteralClass, spelling: &str) -> Option<usize> {
        self.entries(class).iter().position(|s| s == spelling)
    }

    pub fn is_unk(spelling: &str) -> bool {
        LiteralClass::ALL.iter().any(|c| c.unk() == spelling)
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum GrammarError {
    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("line {line}: undeclared symbol `{name}`")]
    Undeclared { line: usize, name: String },
    #[error("line {line}: production has an empty right-hand side")]
    EmptyRhs { line: usize },
    #[error("nonterminal `{0}` has no production")]
    Unproductive(String),
    #[error("symbol `{0}` is declared twice")]
    DuplicateSymbol(String),
    #[error("duplicate {class} literal {spelling}")]
    DuplicateLiteral { class: LiteralClass, spelling: String },
    #[error("`{spelling}` is not a {class} literal")]
    BadLiteral { class: LiteralClass, spelling: String },
    #[error("`{0}` is not a nonterminal")]
    NotNonterminal(String),
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Grammar {
    symbols: Vec<Symbol>,
    productions: Vec<Production>,
    start: SymbolId,
    literals: LiteralVocab,
    by_name: HashMap<String, SymbolId>,
}

impl Grammar {
    pub(crate) fn from_parts(
        symbols: Vec<Symbol>,
        productions: Vec<Production>,
        start: SymbolId,
        literals: LiteralVocab,
    ) -> Result<Self, GrammarError> {
        let mut by_name = HashMap::new();
        for (i, s) in symbols.iter().enumerate() {
            if by_name.insert(s.name.clone(), SymbolId(i)).is_some() {
                return Err(GrammarError::DuplicateSymbol(s.name.clone()));
            }
        }
        for s in &symbols {
            if s.is_nonterminal() {
                let id = by_name[&s.name];
                if !productions.iter().any(|p| p.lhs == id) {
                    return Err(GrammarError::Unproductive(s.name.clone()));
                }
            }
        }
        if !symbols[start.0].is_nonterminal() {
            return Err(GrammarError::NotNonterminal(symbols[start.0].name.clone()));
        }
        Ok(Grammar {
            symbols,
            productions,
            start,
            literals,
            by_name,
        })
    }

    pub fn symbols(&self) -> &[Symbol] {
        &self.symbols
    }

    pub fn symbol(&self, id: SymbolId) -> &Symbol {
        &self.symbols[id.0]
    }

    pub fn lookup(&self, name: &str) -> Option<SymbolId> {
        self.by_name.get(name).copied()
    }

    pub fn productions(&self) -> &[Production] {
        &self.productions
    }

    pub fn production(&self, id: usize) -> Option<&Production> {
        self.productions.get(id)
    }

    pub fn start(&self) -> SymbolId {
        self.start
    }

    pub fn literals(&self) -> &LiteralVocab {
        &self.literals
    }

    /// Same grammar with a different literal vocabulary.
    pub fn with_literals(&self, literals: LiteralVocab) -> Grammar {
        Grammar {
            literals,
            ..self.clone()
        }
    }

    pub fn productions_for(&self, nt: SymbolId) -> impl Iterator<Item = &Production> {
        self.productions.iter().filter(move |p| p.lhs == nt)
    }

    /// `0` for productions of `nt`, [`MASKED`] for every other production.
    pub fn production_mask(&self, nt: SymbolId) -> Result<Vec<f64>, GrammarError> {
        let sym = self.symbol(nt);
        if !sym.is_nonterminal() {
            return Err(GrammarError::NotNonterminal(sym.name.clone()));
        }
        Ok(self
            .productions
            .iter()
            .map(|p| if p.lhs == nt { 0.0 } else { MASKED })
            .collect())
    }

    /// Slot symbol used for variables, if the grammar has one.
    pub fn variable_symbol(&self) -> Option<SymbolId> {
        self.symbols
            .iter()
            .position(|s| s.kind == SymbolKind::Variable)
            .map(SymbolId)
    }

    pub fn literal_symbol(&self, class: LiteralClass) -> Option<SymbolId> {
        self.symbols
            .iter()
            .position(|s| s.kind == SymbolKind::Literal(class))
            .map(SymbolId)
    }

    /// Offset of `(production, child)` pairs in a dense child-label table.
    pub fn child_label_offsets(&self) -> Vec<usize> {
        let mut acc = 0;
        self.productions
            .iter()
            .map(|p| {
                let o = acc;
                acc += p.rhs.len();
                o
            })
            .collect()
    }

    pub fn child_label_count(&self) -> usize {
        self.productions.iter().map(|p| p.rhs.len()).sum()
    }

    /// Stable content hash of the text form.
    pub fn fingerprint(&self) -> String {
        use sha2::{Digest, Sha256};
        let digest = Sha256::digest(self.to_string().as_bytes());
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }
}

/// The canonical MiniExpr grammar.
pub fn builtin_grammar() -> Grammar {
    load_grammar(BUILTIN_GRAMMAR).expect("builtin grammar parses")
}
