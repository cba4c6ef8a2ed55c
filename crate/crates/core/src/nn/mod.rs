//! Minimal feed-forward network engine.
//!
//! Networks are short chains of dense layers. Gradients are computed by
//! explicit backpropagation through a cached forward pass; everything is
//! `f64` so finite-difference checks have headroom.

mod adam;
mod gradcheck;
mod layer;
mod loss;
mod params;
mod tensor;

pub use adam::{AdamConfig, AdamState};
pub use gradcheck::{finite_diff_gradient, relative_error};
pub use layer::{Activation, DenseLayer, Network, NetworkRole};
pub use loss::softmax_cross_entropy;
pub use params::{LayerSlot, ModelParams};
pub use tensor::Tensor;
