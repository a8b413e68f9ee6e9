//! Minimal deterministic neural-network engine: dense, 2-D convolution,
//! flatten and dropout layers, softmax cross-entropy, Adam, and gradients
//! with respect to both parameters and inputs.

mod adam;
pub mod checkpoint;
mod layer;
mod loss;
mod network;
mod ops;

pub use adam::{adam_step, AdamConfig, AdamState};
pub use layer::{Activation, LayerSpec, Padding};
pub(crate) use loss::softmax_ce_grad;
pub use loss::{argmax, cross_entropy, one_hot, PROB_FLOOR};
pub use network::{conv2d_forward, init_network, ForwardCache, Mode, Network};
