//! Grammar-constrained natural-language-to-code generation trained with a
//! GAN objective.
//!
//! The crate bundles a small reverse-mode autodiff engine, a context-free
//! grammar kernel with an AST/action transition system, an attention-based
//! encoder-decoder generator with pointer copy, a tree-encoding
//! discriminator, and the training regimes that tie them together. The
//! `codegan` binary is the operator surface.

pub mod autodiff;
pub mod data;
pub mod error;
pub mod grammar;
pub mod model;
pub mod rng;
pub mod training;

pub use error::{Error, Result};
