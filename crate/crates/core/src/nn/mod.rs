//! A small batched tensor engine sized for the VGG-like classifier: valid 3×3
//! convolutions, 2×2 max pooling, dense layers, ReLU and sigmoid, each with an
//! explicit reverse-mode backward pass, plus BCE loss and ADAM.

mod adam;
mod checkpoint;
pub mod layers;
mod linalg;
mod model;
mod tensor;

pub use adam::{adam_step, AdamConfig, AdamState};
pub use layers::{bce_grad, bce_loss, PROBABILITY_CLAMP};
pub use model::{images_to_tensor, Architecture, ForwardCache, ModelParams};
pub use tensor::Tensor;
