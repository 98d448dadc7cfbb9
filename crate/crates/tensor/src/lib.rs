//! Minimal dense tensor core with reverse-mode automatic differentiation.
//!
//! Everything is a row-major matrix: vectors are `1 x n` rows. Computations are
//! recorded on a [`Tape`]; [`Tape::backward`] walks the record in reverse and
//! returns gradients for every parameter drawn from the [`ParamStore`] plus any
//! input created with [`Tape::input`].
//!
//! The crate is generic over [`Real`] so the same model code runs in `f32` for
//! training and `f64` for finite-difference verification.

mod adam;
mod checkpoint;
mod error;
pub mod gradcheck;
pub mod layers;
mod params;
mod real;
mod tape;
mod tensor;

pub use adam::{AdamConfig, OptState};
pub use checkpoint::{read_checkpoint, write_checkpoint, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use error::TensorError;
pub use params::{init_params, ParamKind, ParamSpec, ParamStore};
pub use real::Real;
pub use tape::{Gradients, NllGroup, Tape, Var};
pub use tensor::Tensor;

pub type Result<T, E = TensorError> = std::result::Result<T, E>;
