//! Risk models: the plain MLP used on expression features, the
//! student/teacher pair with exponential moving-average weights, the
//! two-branch attention fusion model, and checkpoint I/O.

mod checkpoint;
mod fusion;
mod mlp;
mod pair;

pub use checkpoint::{load_checkpoint_into, save_checkpoint};
pub use fusion::{init_fusion, FusionContext, FusionModel, FusionSpec};
pub use mlp::{init_mlp, Mlp, MlpSpec};
pub use pair::StudentTeacherPair;

use crate::autodiff::Tensor;

/// Anything with a flat list of named parameter tensors.
pub trait Model {
    /// Parameters in a stable order. Every tensor must carry a unique name.
    fn params(&self) -> Vec<&Tensor>;

    /// Deep copy: fresh storage, no tape bindings, no gradients.
    fn clone_detached(&self) -> Self;
}
