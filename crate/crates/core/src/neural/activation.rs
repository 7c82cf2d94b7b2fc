use super::tensor::{Scalar, Tensor};
use crate::error::Result;

/// Negative-side slope of the leaky rectifier used throughout the network.
pub const LEAKY_SLOPE: f64 = 0.1;

pub fn leaky_relu<T: Scalar>(x: &Tensor<T>) -> Tensor<T> {
    let s = T::from_f64(LEAKY_SLOPE);
    x.map(|v| if v > T::zero() { v } else { v * s })
}

/// Gradient through [`leaky_relu`] given its pre-activation input.
pub fn leaky_relu_backward<T: Scalar>(pre: &Tensor<T>, grad: &Tensor<T>) -> Result<Tensor<T>> {
    let s = T::from_f64(LEAKY_SLOPE);
    pre.zip_map(grad, |v, g| if v > T::zero() { g } else { g * s })
}

#[inline]
pub fn sigmoid_scalar<T: Scalar>(v: T) -> T {
    T::one() / (T::one() + (-v).exp())
}

pub fn sigmoid<T: Scalar>(x: &Tensor<T>) -> Tensor<T> {
    x.map(sigmoid_scalar)
}

/// Gradient through [`sigmoid`] given its output.
pub fn sigmoid_backward<T: Scalar>(out: &Tensor<T>, grad: &Tensor<T>) -> Result<Tensor<T>> {
    out.zip_map(grad, |s, g| g * s * (T::one() - s))
}
