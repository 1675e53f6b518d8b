//! Parameterised building blocks.

use std::sync::Mutex;

use crate::error::Result;
use crate::init::{kaiming_bound, uniform};
use crate::model::flops::FlopTrace;
use crate::rng::SeedStream;
use crate::scalar::Scalar;
use crate::tensor::{BatchNormStats, Parameter, Tensor};

pub const LAYER_NORM_EPS: f64 = 1e-6;
pub const BATCH_NORM_EPS: f64 = 1e-5;
pub const BATCH_NORM_MOMENTUM: f64 = 0.1;

/// Anything holding named parameters.
pub trait Module<T: Scalar> {
    fn params(&self) -> Vec<&Parameter<T>>;
    fn params_mut(&mut self) -> Vec<&mut Parameter<T>>;
    fn batch_norms(&self) -> Vec<&BatchNorm2d<T>> {
        Vec::new()
    }
}

#[derive(Debug, Clone)]
pub struct Linear<T: Scalar> {
    pub weight: Parameter<T>,
    pub bias: Option<Parameter<T>>,
}

impl<T: Scalar> Linear<T> {
    pub fn new(name: &str, din: usize, dout: usize, bias: bool, seeds: &SeedStream) -> Self {
        let mut rng = seeds.child(name).rng();
        let bound = kaiming_bound(din);
        let weight = Parameter::new(
            format!("{name}.weight"),
            uniform(&[dout, din], bound, &mut rng),
        );
        let bias =
            bias.then(|| Parameter::new(format!("{name}.bias"), uniform(&[dout], bound, &mut rng)));
        Self { weight, bias }
    }

    pub fn din(&self) -> usize {
        self.weight.shape()[1]
    }

    pub fn dout(&self) -> usize {
        self.weight.shape()[0]
    }

    pub fn forward(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        x.linear(&self.weight.tensor, self.bias.as_ref().map(|b| &b.tensor))
    }

    pub fn trace(&self, positions: usize, trace: &mut FlopTrace) {
        let name = self.weight.name.trim_end_matches(".weight");
        trace.record(
            name,
            "linear",
            (positions * self.din() * self.dout()) as u64,
        );
    }
}

impl<T: Scalar> Module<T> for Linear<T> {
    fn params(&self) -> Vec<&Parameter<T>> {
        std::iter::once(&self.weight)
            .chain(self.bias.as_ref())
            .collect()
    }

    fn params_mut(&mut self) -> Vec<&mut Parameter<T>> {
        std::iter::once(&mut self.weight)
            .chain(self.bias.as_mut())
            .collect()
    }
}

#[derive(Debug, Clone)]
pub struct Conv2d<T: Scalar> {
    pub weight: Parameter<T>,
    pub bias: Option<Parameter<T>>,
    pub stride: usize,
    pub padding: usize,
    pub groups: usize,
}

impl<T: Scalar> Conv2d<T> {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        name: &str,
        cin: usize,
        cout: usize,
        kernel: usize,
        stride: usize,
        groups: usize,
        bias: bool,
        seeds: &SeedStream,
    ) -> Self {
        let mut rng = seeds.child(name).rng();
        let fan_in = cin / groups * kernel * kernel;
        let bound = kaiming_bound(fan_in);
        let weight = Parameter::new(
            format!("{name}.weight"),
            uniform(&[cout, cin / groups, kernel, kernel], bound, &mut rng),
        );
        let bias =
            bias.then(|| Parameter::new(format!("{name}.bias"), uniform(&[cout], bound, &mut rng)));
        Self {
            weight,
            bias,
            stride,
            padding: kernel / 2,
            groups,
        }
    }

    pub fn cout(&self) -> usize {
        self.weight.shape()[0]
    }

    pub fn kernel(&self) -> usize {
        self.weight.shape()[2]
    }

    pub fn forward(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        x.conv2d(
            &self.weight.tensor,
            self.bias.as_ref().map(|b| &b.tensor),
            self.stride,
            self.padding,
            self.groups,
        )
    }

    /// Records MACs for an `[B, C, H, W]` input and returns the output shape.
    pub fn trace(&self, input: [usize; 4], trace: &mut FlopTrace) -> [usize; 4] {
        let [b, _, h, w] = input;
        let k = self.kernel();
        let oh = (h + 2 * self.padding - k) / self.stride + 1;
        let ow = (w + 2 * self.padding - k) / self.stride + 1;
        let cin_per_group = self.weight.shape()[1];
        let name = self.weight.name.trim_end_matches(".weight");
        trace.record(
            name,
            "conv2d",
            (b * oh * ow * self.cout() * cin_per_group * k * k) as u64,
        );
        [b, self.cout(), oh, ow]
    }
}

impl<T: Scalar> Module<T> for Conv2d<T> {
    fn params(&self) -> Vec<&Parameter<T>> {
        std::iter::once(&self.weight)
            .chain(self.bias.as_ref())
            .collect()
    }

    fn params_mut(&mut self) -> Vec<&mut Parameter<T>> {
        std::iter::once(&mut self.weight)
            .chain(self.bias.as_mut())
            .collect()
    }
}

#[derive(Debug, Clone)]
pub struct LayerNorm<T: Scalar> {
    pub gamma: Parameter<T>,
    pub beta: Parameter<T>,
}

impl<T: Scalar> LayerNorm<T> {
    pub fn new(name: &str, channels: usize) -> Self {
        Self {
            gamma: Parameter::new(format!("{name}.weight"), Tensor::ones(&[channels])),
            beta: Parameter::new(format!("{name}.bias"), Tensor::zeros(&[channels])),
        }
    }

    pub fn forward(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        x.layer_norm(
            &self.gamma.tensor,
            &self.beta.tensor,
            T::lit(LAYER_NORM_EPS),
        )
    }
}

impl<T: Scalar> Module<T> for LayerNorm<T> {
    fn params(&self) -> Vec<&Parameter<T>> {
        vec![&self.gamma, &self.beta]
    }

    fn params_mut(&mut self) -> Vec<&mut Parameter<T>> {
        vec![&mut self.gamma, &mut self.beta]
    }
}

/// Batch norm with running statistics behind a mutex, so forward passes take
/// `&self` and a frozen model can be shared across threads.
#[derive(Debug)]
pub struct BatchNorm2d<T: Scalar> {
    pub name: String,
    pub gamma: Parameter<T>,
    pub beta: Parameter<T>,
    stats: Mutex<BatchNormStats<T>>,
}

impl<T: Scalar> Clone for BatchNorm2d<T> {
    fn clone(&self) -> Self {
        Self {
            name: self.name.clone(),
            gamma: self.gamma.clone(),
            beta: self.beta.clone(),
            stats: Mutex::new(self.stats()),
        }
    }
}

impl<T: Scalar> BatchNorm2d<T> {
    pub fn new(name: &str, channels: usize) -> Self {
        Self {
            name: name.to_string(),
            gamma: Parameter::new(format!("{name}.weight"), Tensor::ones(&[channels])),
            beta: Parameter::new(format!("{name}.bias"), Tensor::zeros(&[channels])),
            stats: Mutex::new(BatchNormStats::new(channels)),
        }
    }

    pub fn stats(&self) -> BatchNormStats<T> {
        self.stats.lock().unwrap().clone()
    }

    pub fn set_stats(&self, stats: BatchNormStats<T>) {
        *self.stats.lock().unwrap() = stats;
    }

    pub fn forward(&self, x: &Tensor<T>, training: bool) -> Result<Tensor<T>> {
        let mut stats = self.stats.lock().unwrap();
        x.batch_norm(
            &mut stats,
            &self.gamma.tensor,
            &self.beta.tensor,
            training,
            T::lit(BATCH_NORM_MOMENTUM),
            T::lit(BATCH_NORM_EPS),
        )
    }
}

impl<T: Scalar> Module<T> for BatchNorm2d<T> {
    fn params(&self) -> Vec<&Parameter<T>> {
        vec![&self.gamma, &self.beta]
    }

    fn params_mut(&mut self) -> Vec<&mut Parameter<T>> {
        vec![&mut self.gamma, &mut self.beta]
    }

    fn batch_norms(&self) -> Vec<&BatchNorm2d<T>> {
        vec![self]
    }
}

/// Bias-free convolution, batch norm, ReLU6.
#[derive(Debug, Clone)]
pub struct ConvBnRelu6<T: Scalar> {
    pub conv: Conv2d<T>,
    pub bn: BatchNorm2d<T>,
}

impl<T: Scalar> ConvBnRelu6<T> {
    pub fn new(
        name: &str,
        cin: usize,
        cout: usize,
        kernel: usize,
        stride: usize,
        seeds: &SeedStream,
    ) -> Self {
        Self {
            conv: Conv2d::new(
                &format!("{name}.conv"),
                cin,
                cout,
                kernel,
                stride,
                1,
                false,
                seeds,
            ),
            bn: BatchNorm2d::new(&format!("{name}.bn"), cout),
        }
    }

    pub fn forward(&self, x: &Tensor<T>, training: bool) -> Result<Tensor<T>> {
        Ok(self.bn.forward(&self.conv.forward(x)?, training)?.relu6())
    }

    pub fn trace(&self, input: [usize; 4], trace: &mut FlopTrace) -> [usize; 4] {
        self.conv.trace(input, trace)
    }
}

impl<T: Scalar> Module<T> for ConvBnRelu6<T> {
    fn params(&self) -> Vec<&Parameter<T>> {
        let mut p = self.conv.params();
        p.extend(self.bn.params());
        p
    }

    fn params_mut(&mut self) -> Vec<&mut Parameter<T>> {
        let mut p = self.conv.params_mut();
        p.extend(self.bn.params_mut());
        p
    }

    fn batch_norms(&self) -> Vec<&BatchNorm2d<T>> {
        vec![&self.bn]
    }
}
