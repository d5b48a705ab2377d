//! Minimal dense-layer toolkit with analytic reverse-mode gradients.
//!
//! No computation-graph autograd: every layer pairs a forward pass with a
//! hand-written backward pass, and the whole stack is validated against
//! central finite differences (see [`gradcheck`] and the `verify` module).

pub mod adam;
pub mod gradcheck;
pub mod layers;
pub mod params;
pub mod tensor;

pub use adam::{adam_step_slice, Adam, AdamConfig};
pub use layers::{
    dropout_backward, dropout_forward, max_pool_rows_backward, max_pool_rows_forward,
    relu_backward, relu_forward, sigmoid_backward, sigmoid_forward, softmax_rows_backward,
    softmax_rows_forward, Linear, Mlp,
};
pub use params::ParamSet;
pub use tensor::{Real, Tensor2D};
