//! Differentiable primitives the restoration network is built from.
//!
//! Every operation preserves spatial resolution. Backward passes are written
//! by hand and checked against central differences by [`gradcheck`].

mod activation;
mod conv;
mod deform;
pub mod gradcheck;
mod tensor;

pub use activation::{leaky_relu, leaky_relu_backward, sigmoid, sigmoid_backward, sigmoid_scalar, LEAKY_SLOPE};
pub use conv::{conv2d, conv2d_backward, ConvGrads};
pub use deform::{bilinear_sample, deformable_conv, deformable_conv_backward, sample_plane, DeformGrads};
pub use tensor::{Scalar, Tensor};

/// A feature tensor (N×C×H×W).
pub type FeatureMap = Tensor<f32>;
