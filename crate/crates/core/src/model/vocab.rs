//! Encoder token vocabulary.

use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};

use crate::grammar::{LiteralClass, MiniType, TypeEnv};
use crate::pipeline::lang::{is_variable_token, CST_KINDS, HOLE, METHODS};
use crate::pipeline::Sample;

pub const UNK: &str = "<unk>";
pub const ID: &str = "<id>";

fn unk_of(class: LiteralClass) -> String {
    format!("<unk:{}>", class.name())
}

fn typed_id(ty: MiniType) -> String {
    format!("<id:{}>", ty.name())
}

/// Symbol for an interior syntax-tree node.
pub fn kind_symbol(kind: &str) -> String {
    format!("#{kind}")
}

/// Maps raw context tokens to embedding rows. Identifiers become typed
/// placeholders so that encodings do not depend on names.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(from = "Vec<String>", into = "Vec<String>")]
pub struct TokenVocab {
    symbols: Vec<String>,
    index: HashMap<String, usize>,
}

impl From<Vec<String>> for TokenVocab {
    fn from(symbols: Vec<String>) -> Self {
        let index = symbols.iter().enumerate().map(|(i, s)| (s.clone(), i)).collect();
        TokenVocab { symbols, index }
    }
}

impl From<TokenVocab> for Vec<String> {
    fn from(v: TokenVocab) -> Self {
        v.symbols
    }
}

fn specials() -> Vec<String> {
    let mut out = vec![UNK.to_string(), HOLE.to_string(), ID.to_string()];
    out.extend(LiteralClass::ALL.iter().map(|&c| unk_of(c)));
    out.extend([MiniType::Int, MiniType::Bool, MiniType::String, MiniType::IntArray].map(typed_id));
    out.extend(CST_KINDS.iter().map(|k| kind_symbol(k)));
    out
}

/// Surface class of a raw token, before vocabulary lookup.
fn shape(token: &str, scope: &TypeEnv) -> String {
    if token == HOLE {
        return HOLE.to_string();
    }
    if let Some(ty) = scope.get(token) {
        return typed_id(ty);
    }
    let member = token == "Length" || METHODS.iter().any(|(m, _)| *m == token);
    if !member && LiteralClass::of_token(token).is_none() && is_variable_token(token) {
        return ID.to_string();
    }
    token.to_string()
}

impl TokenVocab {
    /// Special symbols plus every token shape seen in `samples`, sorted.
    pub fn build<'a>(samples: impl IntoIterator<Item = &'a Sample>) -> TokenVocab {
        let mut seen: BTreeMap<String, usize> = BTreeMap::new();
        for s in samples {
            for t in s.context_tokens() {
                *seen.entry(shape(t, &s.scope)).or_insert(0) += 1;
            }
        }
        let mut symbols = specials();
        for k in seen.into_keys() {
            if !symbols.contains(&k) {
                symbols.push(k);
            }
        }
        TokenVocab::from(symbols)
    }

    pub fn len(&self) -> usize {
        self.symbols.len()
    }

    pub fn is_empty(&self) -> bool {
        self.symbols.is_empty()
    }

    pub fn symbols(&self) -> &[String] {
        &self.symbols
    }

    pub fn get(&self, symbol: &str) -> Option<usize> {
        self.index.get(symbol).copied()
    }

    /// Row of a raw token seen in a context with the given scope.
    pub fn id(&self, token: &str, scope: &TypeEnv) -> usize {
        let s = shape(token, scope);
        if let Some(i) = self.get(&s) {
            return i;
        }
        let fallback = match LiteralClass::of_token(token) {
            Some(c) => unk_of(c),
            None => UNK.to_string(),
        };
        self.get(&fallback).unwrap_or(0)
    }

    pub fn kind_id(&self, kind: &str) -> usize {
        self.get(&kind_symbol(kind)).unwrap_or(0)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identifiers_are_typed_and_literals_fall_back() {
        let mut scope = TypeEnv::new();
        scope.insert("i", MiniType::Int);
        let v = TokenVocab::from(specials());
        assert_eq!(v.symbols()[v.id("i", &scope)], "<id:int>");
        assert_eq!(v.symbols()[v.id("q", &scope)], ID);
        assert_eq!(v.symbols()[v.id("17", &scope)], "<unk:int>");
        assert_eq!(v.symbols()[v.id("\"zz\"", &scope)], "<unk:string>");
        assert_eq!(v.symbols()[v.id("{", &scope)], UNK);
        assert_eq!(v.symbols()[v.id(HOLE, &scope)], HOLE);
    }

    #[test]
    fn serde_round_trip() {
        let v = TokenVocab::from(specials());
        let j = serde_json::to_string(&v).unwrap();
        let back: TokenVocab = serde_json::from_str(&j).unwrap();
        assert_eq!(v, back);
    }
}
