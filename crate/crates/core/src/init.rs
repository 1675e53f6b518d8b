//! Weight initialisation helpers.

use rand::Rng;

use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Bound of `kaiming_uniform(a = √5)`, the default for linear and conv
/// weights: `1 / √fan_in`.
pub fn kaiming_bound(fan_in: usize) -> f64 {
    1.0 / (fan_in as f64).sqrt()
}

pub fn uniform<T: Scalar>(shape: &[usize], bound: f64, rng: &mut impl Rng) -> Tensor<T> {
    Tensor::from_fn(shape, |_| T::lit(rng.random_range(-bound..=bound)))
}
