//! Context encoders, the attribute-graph decoder, training and search.

mod checkpoint;
mod decoder;
mod encoder;
mod prepare;
mod search;
mod train;
mod vocab;


use std::collections::BTreeMap;
use std::fmt;

use nag_tensor::layers::{Attention, GruCell, Linear};
use nag_tensor::{init_params, ParamSpec, ParamStore, Real, TensorError};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::attrgraph::{AttrNode, EdgeType, Flavor, GraphConfig, GraphError, Origin};
use crate::grammar::{Grammar, GrammarError, LiteralClass, LiteralVocab, SymbolKind};
use crate::pipeline::lang::LangError;
use crate::pipeline::Sample;
use crate::syntax::{PartialAst, SyntaxError};

pub use checkpoint::{manifest_path, Manifest};
pub use decoder::{literal_candidates, softmax_on, Forward, StepLoss};
pub use encoder::{graph_encoder_states, ContextStates};
pub use prepare::{
    build_graph_context, prepare_context, ContextInput, CtxGraph, DecisionRec, Prepared, SiteKind, CTX_EDGE_TYPES,
};
pub use search::{Decoded, Distribution, Hypothesis};
pub use train::{EpochStats, TrainConfig};
pub use vocab::{kind_symbol, TokenVocab};

#[derive(Debug, Error)]
pub enum ModelError {
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error(transparent)]
    Syntax(#[from] SyntaxError),
    #[error(transparent)]
    Grammar(#[from] GrammarError),
    #[error("context: {0}")]
    Context(#[from] LangError),
    #[error("sample: {0}")]
    Sample(String),
    #[error("loss became non-finite in epoch {epoch}")]
    Diverged { epoch: usize },
    #[error("nothing to train on")]
    EmptyData,
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("manifest: {0}")]
    Manifest(String),
}

pub type Result<T, E = ModelError> = std::result::Result<T, E>;

/// The four decoder variants compared in ablations.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ConfigName {
    Tree,
    Asn,
    Syn,
    Nag,
}

impl ConfigName {
    pub const ALL: [ConfigName; 4] = [ConfigName::Tree, ConfigName::Asn, ConfigName::Syn, ConfigName::Nag];

    pub fn key(self) -> &'static str {
        match self {
            ConfigName::Tree => "tree",
            ConfigName::Asn => "asn",
            ConfigName::Syn => "syn",
            ConfigName::Nag => "nag",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        ConfigName::ALL.into_iter().find(|c| c.key() == s.to_ascii_lowercase())
    }
}

impl fmt::Display for ConfigName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ConfigName::Tree => "Tree",
            ConfigName::Asn => "ASN",
            ConfigName::Syn => "Syn",
            ConfigName::Nag => "NAG",
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct DecoderConfig {
    pub name: ConfigName,
    pub graph: GraphConfig,
    /// Attend over context tokens when picking productions.
    pub attention: bool,
    /// Max-pool the variable states into the production picker.
    pub pooling: bool,
}

impl DecoderConfig {
    pub fn of(name: ConfigName) -> Self {
        let (graph, extra) = match name {
            ConfigName::Tree => (GraphConfig::tree(), false),
            ConfigName::Asn => (GraphConfig::asn(), false),
            ConfigName::Syn => (GraphConfig::syn(), false),
            ConfigName::Nag => (GraphConfig::nag(), true),
        };
        DecoderConfig {
            name,
            graph,
            attention: extra,
            pooling: extra,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EncoderKind {
    Seq,
    Graph,
}

impl EncoderKind {
    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "seq" => Some(EncoderKind::Seq),
            "graph" | "g" => Some(EncoderKind::Graph),
            _ => None,
        }
    }

    pub fn key(self) -> &'static str {
        match self {
            EncoderKind::Seq => "seq",
            EncoderKind::Graph => "graph",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Dims {
    pub hidden: usize,
    /// Token embedding width of the sequence encoder.
    pub embed: usize,
    pub edge_label: usize,
    pub attention: usize,
    /// Propagation steps of the graph encoder.
    pub gnn_steps: usize,
}

impl Default for Dims {
    fn default() -> Self {
        Dims {
            hidden: 64,
            embed: 32,
            edge_label: 32,
            attention: 64,
            gnn_steps: 8,
        }
    }
}

/// Embedding rows for attribute-node labels.
#[derive(Clone, Debug)]
struct Labels {
    inh: Vec<Option<usize>>,
    syn: Vec<Option<usize>>,
    term: Vec<Option<usize>>,
    lit: [usize; 3],
    count: usize,
}

impl Labels {
    fn new(g: &Grammar) -> Labels {
        let n = g.symbols().len();
        let mut l = Labels {
            inh: vec![None; n],
            syn: vec![None; n],
            term: vec![None; n],
            lit: [0; 3],
            count: 0,
        };
        for (i, s) in g.symbols().iter().enumerate() {
            match s.kind {
                SymbolKind::Nonterminal => {
                    l.inh[i] = Some(l.count);
                    l.syn[i] = Some(l.count + 1);
                    l.count += 2;
                }
                SymbolKind::Fixed(_) | SymbolKind::Variable => {
                    l.term[i] = Some(l.count);
                    l.count += 1;
                }
                SymbolKind::Literal(_) => {}
            }
        }
        for c in LiteralClass::ALL {
            l.lit[c.index()] = l.count;
            l.count += g.literals().entries(c).len();
        }
        l
    }
}

/// Parameter names of every layer.
#[derive(Clone, Debug)]
struct Layers {
    msg: Vec<Linear>,
    gru: GruCell,
    prod: Linear,
    attn: Attention,
    lit: Vec<Linear>,
    genc_msg: Vec<Linear>,
    genc_gru: GruCell,
    senc_ctx: encoder::BiGru,
    senc_use: encoder::BiGru,
    senc_root: Linear,
}

const DEC_LABEL: &str = "dec.label";
const DEC_EDGE_LABEL: &str = "dec.edge_label";
const VAR_W: &str = "dec.var.w";
const VAR_U: &str = "dec.var.u";
const GENC_LABEL: &str = "genc.label";
const SENC_EMB: &str = "senc.emb";
const SENC_DEFAULT: &str = "senc.default";

fn copy_name(c: LiteralClass) -> String {
    format!("dec.copy.{}", c.name())
}

/// Everything about a model except its parameter values.
#[derive(Clone, Debug)]
pub struct Arch {
    pub grammar: Grammar,
    pub decoder: DecoderConfig,
    pub encoder: EncoderKind,
    pub dims: Dims,
    pub vocab: TokenVocab,
    labels: Labels,
    edge_offsets: Vec<usize>,
    layers: Layers,
}

impl Arch {
    pub fn new(grammar: Grammar, decoder: DecoderConfig, encoder: EncoderKind, dims: Dims, vocab: TokenVocab) -> Arch {
        let d = dims.hidden;
        let half = d / 2;
        let layers = Layers {
            msg: EdgeType::ALL.iter().map(|t| Linear::new(&format!("dec.msg.{}", t.name()))).collect(),
            gru: GruCell::new("dec.gru", d, d),
            prod: Linear::new("dec.prod"),
            attn: Attention::new("dec.attn", dims.attention),
            lit: LiteralClass::ALL.iter().map(|c| Linear::new(&format!("dec.lit.{}", c.name()))).collect(),
            genc_msg: (0..CTX_EDGE_TYPES).map(|k| Linear::new(&format!("genc.msg{k}"))).collect(),
            genc_gru: GruCell::new("genc.gru", d, d),
            senc_ctx: encoder::BiGru::new("senc.ctx", dims.embed, half),
            senc_use: encoder::BiGru::new("senc.use", dims.embed, half),
            senc_root: Linear::new("senc.root"),
        };
        Arch {
            labels: Labels::new(&grammar),
            edge_offsets: grammar.child_label_offsets(),
            grammar,
            decoder,
            encoder,
            dims,
            vocab,
            layers,
        }
    }

    fn production_input_dim(&self) -> usize {
        let d = self.dims.hidden;
        d + if self.decoder.attention { d } else { 0 } + if self.decoder.pooling { d } else { 0 }
    }

    fn labeled(&self, t: EdgeType) -> bool {
        t == EdgeType::Child && self.decoder.graph.labels
    }

    pub fn spec(&self) -> ParamSpec {
        let d = self.dims.hidden;
        let g = &self.grammar;
        let l = &self.layers;
        let mut spec = ParamSpec::new();
        spec.embedding(DEC_LABEL, self.labels.count, d);
        if self.decoder.graph.labels {
            spec.embedding(DEC_EDGE_LABEL, g.child_label_count().max(1), self.dims.edge_label);
        }
        for t in self.decoder.graph.edges.iter() {
            let input = d + if self.labeled(t) { self.dims.edge_label } else { 0 };
            l.msg[t.index()].declare(&mut spec, input, d);
        }
        l.gru.declare(&mut spec);
        l.prod.declare(&mut spec, self.production_input_dim(), g.productions().len());
        if self.decoder.attention {
            l.attn.declare(&mut spec, d, d);
        }
        spec.matrix(VAR_W, d, d);
        spec.matrix(VAR_U, 1, d);
        for c in LiteralClass::ALL {
            l.lit[c.index()].declare(&mut spec, d, g.literals().entries(c).len());
            spec.matrix(copy_name(c), d, d);
        }
        match self.encoder {
            EncoderKind::Graph => {
                spec.embedding(GENC_LABEL, self.vocab.len(), d);
                for m in &l.genc_msg {
                    m.declare(&mut spec, d, d);
                }
                l.genc_gru.declare(&mut spec);
            }
            EncoderKind::Seq => {
                spec.embedding(SENC_EMB, self.vocab.len(), self.dims.embed);
                l.senc_ctx.declare(&mut spec);
                l.senc_use.declare(&mut spec);
                l.senc_root.declare(&mut spec, 2 * half_of(d), d);
                spec.embedding(SENC_DEFAULT, 1, 2 * half_of(d));
            }
        }
        spec
    }

    pub fn init_params<F: Real>(&self, seed: u64) -> Result<ParamStore<F>> {
        Ok(init_params(&self.spec(), seed)?)
    }

    /// Embedding row of an attribute node; `None` for context nodes.
    pub fn label_of(&self, ast: &PartialAst, node: &AttrNode) -> Option<usize> {
        let Origin::Ast(v) = node.origin else { return None };
        let sym = ast.nodes()[v].label;
        match node.flavor {
            Flavor::Inherited => self.labels.inh[sym.0],
            Flavor::Synthesized => self.labels.syn[sym.0],
            Flavor::Context => None,
            Flavor::Joint => match self.grammar.symbol(sym).kind {
                SymbolKind::Literal(c) => {
                    let pos = self.grammar.literals().position(c, &node.label).unwrap_or(0);
                    Some(self.labels.lit[c.index()] + pos)
                }
                _ => self.labels.term[sym.0],
            },
        }
    }
}

fn half_of(d: usize) -> usize {
    d / 2
}

/// A parameterised model.
#[derive(Clone, Debug)]
pub struct Model {
    pub arch: Arch,
    pub params: ParamStore<f32>,
    pub seed: u64,
}

impl Model {
    pub fn new(arch: Arch, seed: u64) -> Result<Model> {
        let params = arch.init_params(seed)?;
        Ok(Model { arch, params, seed })
    }

    /// Builds the literal and token vocabularies from `train` and
    /// initialises parameters.
    pub fn for_data(
        base: &Grammar,
        train: &[Sample],
        config: ConfigName,
        encoder: EncoderKind,
        dims: Dims,
        seed: u64,
    ) -> Result<Model> {
        let grammar = base.with_literals(literal_vocab(base, train, LITERAL_VOCAB_SIZE)?);
        let vocab = TokenVocab::build(train);
        Model::new(Arch::new(grammar, DecoderConfig::of(config), encoder, dims, vocab), seed)
    }
}

/// Known spellings per literal class kept by [`literal_vocab`].
pub const LITERAL_VOCAB_SIZE: usize = 20;

/// The `top` most frequent literal spellings of each class in the targets
/// of `samples`; ties broken by spelling.
pub fn literal_vocab(g: &Grammar, samples: &[Sample], top: usize) -> Result<LiteralVocab> {
    let mut counts: [BTreeMap<String, usize>; 3] = Default::default();
    for s in samples {
        let tree = s.target_tree(g).map_err(|e| ModelError::Sample(e.to_string()))?;
        for n in tree.nodes() {
            if let (SymbolKind::Literal(c), Some(b)) = (&g.symbol(n.label).kind, &n.binding) {
                if !LiteralVocab::is_unk(b) {
                    *counts[c.index()].entry(b.clone()).or_insert(0) += 1;
                }
            }
        }
    }
    let entries = counts.map(|m| {
        let mut v: Vec<(String, usize)> = m.into_iter().collect();
        v.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
        v.into_iter().take(top).map(|(s, _)| s).collect()
    });
    Ok(LiteralVocab::new(entries)?)
}
