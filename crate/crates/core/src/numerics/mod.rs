//! Deterministic numeric core: tensors, a recorded gradient tape, layers,
//! checkpoint I/O and a finite-difference gradient checker.

pub mod checkpoint;
pub mod gradcheck;
pub mod graph;
pub mod layers;
pub mod params;
pub mod tensor;

pub use gradcheck::{grad_check, relative_error, GradCheckReport};
pub use graph::{Gradients, Graph, Var};
pub use layers::{AttentionBlock, FeedForward, GruCell, LayerNorm, Linear, SelfAttention};
pub use params::{ParamId, ParamStore};
pub use tensor::{log_add, logsumexp, Real, Tensor};
