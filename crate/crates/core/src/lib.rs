//! Graph-structured generative model of expressions: grammar-driven tree
//! expansion, attribute graphs, message passing and beam search.

pub mod attrgraph;
pub mod eval;
pub mod exec;
pub mod grammar;
pub mod model;
pub mod pipeline;
pub mod syntax;
