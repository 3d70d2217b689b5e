//! Dense `f64` tensors, a per-forward dynamic graph with reverse-mode
//! differentiation, Adam with parameter groups, and the `FAFW` weight format.
//!
//! Everything is single-threaded and deterministic: identical inputs produce
//! bit-identical values and gradients.

pub mod adam;
pub mod checkpoint;
mod error;
pub mod gradcheck;
mod graph;
mod kernels;
mod params;
mod tensor;

pub use adam::{Adam, ParamGroup};
pub use error::{Result, TensorError};
pub use graph::{Grads, Graph, Var};
pub use params::{name_seed, standard_normal, trunc_normal, Param, ParamId, ParamStore};
pub use tensor::Tensor;
