//! Toy-scale conditional GAN generators for the three lifting stages, their
//! losses, WGAN-GP training and gradient verification.
//!
//! All network tensors are `[N, C, D, H, W]`. Image tensors use `D = 1`;
//! volume tensors map `(D, H, W)` to the grid's `(z, y, x)`, so a field's
//! x-fastest storage is also the tensor's W-fastest storage.

mod convert;
pub mod gradcheck;
pub mod graph;
pub mod kernels;
pub mod loss;
pub mod model;
pub mod spec;
pub mod tensor;
pub mod train;

#[cfg(test)]
mod tests;

pub use convert::{field_to_tensor, image_input, map_channels, tensor_to_field, tensor_to_map};
pub use gradcheck::{grad_check, gradient_suite, GradCheckOptions, GradCheckReport};
pub use graph::{Graph, Var};
pub use loss::{total_generator_loss, LossParts, LossWeights};
pub use model::{WeightMeta, WeightStore};
pub use spec::{NetKind, NetPair, NetSpec};
pub use tensor::Tensor;
pub use train::{train, Example, LossRecord, TrainConfig};
