//! Minimal reverse-mode automatic differentiation over dense f32 arrays.
//!
//! A [`Value`] is a node in a dynamically built computation graph: forward
//! data, a same-shape gradient buffer, and a record of the producing
//! operation. [`Value::backward`] walks the graph in reverse topological
//! order and accumulates gradients into every reachable leaf that requires
//! them. Model math is 32-bit; the finite-difference oracle in
//! [`gradcheck`] re-evaluates recorded graphs in 64-bit.

mod adam;
mod init;
mod kernels;
mod store;
mod value;

pub mod gradcheck;

pub use adam::{AdamConfig, AdamState};
pub use init::{xavier_bound, xavier_uniform_init};
pub use store::ParameterStore;
pub use value::{Tensor, Value};
