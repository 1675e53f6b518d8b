//! Convolutional pyramid encoder.
//!
//! Stand-in backbone: a stride-4 stem of two stride-2 conv-BN-ReLU6 layers,
//! then four stages of two 3×3 conv-BN-ReLU6 blocks, with a stride-2
//! conv-BN-ReLU6 downsample in front of stages 2-4. Produces features at
//! strides 4, 8, 16 and 32.

use super::config::ModelConfig;
use super::flops::FlopTrace;
use super::layers::{BatchNorm2d, ConvBnRelu6, Module};
use crate::error::Result;
use crate::rng::SeedStream;
use crate::scalar::Scalar;
use crate::tensor::{Parameter, Tensor};

#[derive(Debug, Clone)]
struct EncoderStage<T: Scalar> {
    down: Option<ConvBnRelu6<T>>,
    blocks: [ConvBnRelu6<T>; 2],
}

#[derive(Debug, Clone)]
pub struct Encoder<T: Scalar> {
    stem: [ConvBnRelu6<T>; 2],
    stages: Vec<EncoderStage<T>>,
}

impl<T: Scalar> Encoder<T> {
    pub fn new(cfg: &ModelConfig, seeds: &SeedStream) -> Self {
        let dims = cfg.encoder_dims;
        let stem_mid = (dims[0] / 2).max(1);
        let stem = [
            ConvBnRelu6::new("encoder.stem.0", cfg.in_channels, stem_mid, 3, 2, seeds),
            ConvBnRelu6::new("encoder.stem.1", stem_mid, dims[0], 3, 2, seeds),
        ];
        let stages = (0..4)
            .map(|s| {
                let name = format!("encoder.stage{}", s + 1);
                EncoderStage {
                    down: (s > 0).then(|| {
                        ConvBnRelu6::new(&format!("{name}.down"), dims[s - 1], dims[s], 3, 2, seeds)
                    }),
                    blocks: [
                        ConvBnRelu6::new(&format!("{name}.block0"), dims[s], dims[s], 3, 1, seeds),
                        ConvBnRelu6::new(&format!("{name}.block1"), dims[s], dims[s], 3, 1, seeds),
                    ],
                }
            })
            .collect();
        Self { stem, stages }
    }

    /// Four feature maps `[B, C_s, H / 2^(s+1), W / 2^(s+1)]`, finest first.
    pub fn forward(&self, image: &Tensor<T>, training: bool) -> Result<[Tensor<T>; 4]> {
        let mut x = self.stem[1].forward(&self.stem[0].forward(image, training)?, training)?;
        let mut feats = Vec::with_capacity(4);
        for stage in &self.stages {
            if let Some(down) = &stage.down {
                x = down.forward(&x, training)?;
            }
            for block in &stage.blocks {
                x = block.forward(&x, training)?;
            }
            feats.push(x.clone());
        }
        Ok(feats.try_into().expect("four stages"))
    }

    pub fn trace(&self, input: [usize; 4], trace: &mut FlopTrace) -> [[usize; 4]; 4] {
        let mut s = self.stem[1].trace(self.stem[0].trace(input, trace), trace);
        let mut shapes = [[0; 4]; 4];
        for (i, stage) in self.stages.iter().enumerate() {
            if let Some(down) = &stage.down {
                s = down.trace(s, trace);
            }
            for block in &stage.blocks {
                s = block.trace(s, trace);
            }
            shapes[i] = s;
        }
        shapes
    }

    fn layers(&self) -> impl Iterator<Item = &ConvBnRelu6<T>> {
        self.stem.iter().chain(
            self.stages
                .iter()
                .flat_map(|s| s.down.iter().chain(s.blocks.iter())),
        )
    }
}

impl<T: Scalar> Module<T> for Encoder<T> {
    fn params(&self) -> Vec<&Parameter<T>> {
        self.layers().flat_map(|l| l.params()).collect()
    }

    fn params_mut(&mut self) -> Vec<&mut Parameter<T>> {
        let stem = self.stem.iter_mut();
        let stages = self
            .stages
            .iter_mut()
            .flat_map(|s| s.down.iter_mut().chain(s.blocks.iter_mut()));
        stem.chain(stages).flat_map(|l| l.params_mut()).collect()
    }

    fn batch_norms(&self) -> Vec<&BatchNorm2d<T>> {
        self.layers().map(|l| &l.bn).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::no_grad;

    #[test]
    fn feature_strides() {
        let cfg = ModelConfig::default();
        let enc = Encoder::<f32>::new(&cfg, &SeedStream::new(0));
        let feats = no_grad(|| enc.forward(&Tensor::zeros(&[1, 3, 64, 64]), false)).unwrap();
        let shapes: Vec<&[usize]> = feats.iter().map(|f| f.shape()).collect();
        assert_eq!(
            shapes,
            vec![
                &[1, 64, 16, 16][..],
                &[1, 128, 8, 8],
                &[1, 256, 4, 4],
                &[1, 512, 2, 2]
            ]
        );
        assert!(feats.iter().all(|f| !f.has_non_finite()));
        let mut trace = FlopTrace::default();
        let traced = enc.trace([1, 3, 64, 64], &mut trace);
        for (t, f) in traced.iter().zip(&feats) {
            assert_eq!(&t[..], f.shape());
        }
    }
}
