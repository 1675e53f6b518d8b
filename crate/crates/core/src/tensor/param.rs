use super::Tensor;
use crate::scalar::Scalar;

/// A named, trainable tensor. Names are dotted paths unique within a model,
/// e.g. `msd.stage2.vss.dwconv.weight`.
#[derive(Debug, Clone)]
pub struct Parameter<T: Scalar> {
    pub name: String,
    pub tensor: Tensor<T>,
}

impl<T: Scalar> Parameter<T> {
    pub fn new(name: impl Into<String>, tensor: Tensor<T>) -> Self {
        Self {
            name: name.into(),
            tensor: tensor.into_parameter(),
        }
    }

    pub fn numel(&self) -> usize {
        self.tensor.numel()
    }

    pub fn shape(&self) -> &[usize] {
        self.tensor.shape()
    }

    /// Replaces the value, keeping the name; the new tensor is a fresh leaf.
    pub fn set(&mut self, tensor: Tensor<T>) {
        debug_assert_eq!(tensor.shape(), self.tensor.shape(), "{}", self.name);
        self.tensor = tensor.into_parameter();
    }
}
