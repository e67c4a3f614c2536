//! Small dense-network engine: initialisation, forward pass, hand-derived
//! backpropagation and Adam.

mod adam;
mod mlp;

pub use adam::{AdamConfig, AdamState};
pub use mlp::{backward, mse, mse_grad, Activation, Batch, Gradients, Layer, LossKind, MlpParams, Trace};
