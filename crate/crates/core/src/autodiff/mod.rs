//! Reverse-mode automatic differentiation on a define-by-run tape.
//!
//! The tape is rebuilt every forward pass: ops record a node when at least one
//! operand is bound to a live [`Tape`], and [`Tape::backward`] walks the nodes
//! in reverse insertion order, accumulating adjoints into watched leaves.
//! Everything is `f64`. Stochastic ops (dropout, additive noise) draw from a
//! caller-supplied RNG and save their realisation, so one forward/backward
//! pair is self-consistent and a re-run with the same seed is bit-identical.

mod ops;
mod optim;
mod tape;
mod tensor;

pub use optim::{zero_grads, Method, Optimizer};
pub use tape::Tape;
pub use tensor::Tensor;

pub mod gradcheck;
