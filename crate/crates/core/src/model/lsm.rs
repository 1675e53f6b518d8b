//! Local supervision: train-only auxiliary heads on decoder stages 2-4.

use rand::Rng;

use super::config::ModelConfig;
use super::flops::FlopTrace;
use super::layers::{BatchNorm2d, Conv2d, ConvBnRelu6, Module};
use crate::error::{arg_err, shape_err, Result};
use crate::rng::SeedStream;
use crate::scalar::Scalar;
use crate::tensor::{Parameter, Tensor, UpsampleMode};

/// Two parallel conv-BN-ReLU6 branches (3×3 and 1×1) summed, then dropout,
/// a 1×1 head to `K` classes, and bilinear upsampling to the image size.
#[derive(Debug, Clone)]
pub struct LsmBlock<T: Scalar> {
    pub branch3: ConvBnRelu6<T>,
    pub branch1: ConvBnRelu6<T>,
    pub head: Conv2d<T>,
    pub dropout_p: f64,
}

impl<T: Scalar> LsmBlock<T> {
    pub fn new(
        name: &str,
        channels: usize,
        num_classes: usize,
        dropout_p: f64,
        seeds: &SeedStream,
    ) -> Self {
        Self {
            branch3: ConvBnRelu6::new(&format!("{name}.branch3"), channels, channels, 3, 1, seeds),
            branch1: ConvBnRelu6::new(&format!("{name}.branch1"), channels, channels, 1, 1, seeds),
            head: Conv2d::new(
                &format!("{name}.head"),
                channels,
                num_classes,
                1,
                1,
                1,
                true,
                seeds,
            ),
            dropout_p,
        }
    }

    /// `feat` is a channels-last stage output; the result is `[B, K, H, W]`.
    pub fn forward(
        &self,
        feat: &Tensor<T>,
        h: usize,
        w: usize,
        rng: &mut impl Rng,
    ) -> Result<Tensor<T>> {
        let x = feat.nhwc_to_nchw()?;
        let (fh, fw) = (x.dim(2), x.dim(3));
        if !h.is_multiple_of(fh) || !w.is_multiple_of(fw) || h / fh != w / fw {
            return Err(shape_err!(
                "lsm: cannot upsample {fh}x{fw} to {h}x{w} by an integer factor"
            ));
        }
        let merged = self
            .branch3
            .forward(&x, true)?
            .add(&self.branch1.forward(&x, true)?)?;
        let dropped = merged.dropout(self.dropout_p, true, rng)?;
        self.head
            .forward(&dropped)?
            .upsample(h / fh, UpsampleMode::Bilinear)
    }

    pub fn trace(&self, input: [usize; 4], trace: &mut FlopTrace) {
        let nchw = [input[0], input[3], input[1], input[2]];
        self.branch3.trace(nchw, trace);
        self.branch1.trace(nchw, trace);
        self.head.trace(nchw, trace);
    }
}

impl<T: Scalar> Module<T> for LsmBlock<T> {
    fn params(&self) -> Vec<&Parameter<T>> {
        let mut p = self.branch3.params();
        p.extend(self.branch1.params());
        p.extend(self.head.params());
        p
    }

    fn params_mut(&mut self) -> Vec<&mut Parameter<T>> {
        let mut p = self.branch3.params_mut();
        p.extend(self.branch1.params_mut());
        p.extend(self.head.params_mut());
        p
    }

    fn batch_norms(&self) -> Vec<&BatchNorm2d<T>> {
        vec![&self.branch3.bn, &self.branch1.bn]
    }
}

/// One [`LsmBlock`] per decoder stage 2, 3, 4.
#[derive(Debug, Clone)]
pub struct Lsm<T: Scalar> {
    pub blocks: Vec<LsmBlock<T>>,
}

impl<T: Scalar> Lsm<T> {
    pub fn new(cfg: &ModelConfig, seeds: &SeedStream) -> Self {
        let blocks = (1..4)
            .map(|s| {
                LsmBlock::new(
                    &format!("lsm.stage{}", s + 1),
                    cfg.decoder_dims[s],
                    cfg.num_classes,
                    cfg.dropout_p,
                    seeds,
                )
            })
            .collect();
        Self { blocks }
    }

    /// Sum of the three block outputs at `h × w`.
    pub fn aggregate(
        &self,
        stage_feats: &[Tensor<T>],
        h: usize,
        w: usize,
        rng: &mut impl Rng,
    ) -> Result<Tensor<T>> {
        if stage_feats.len() != 3 {
            return Err(arg_err!(
                "lsm expects 3 stage features, got {}",
                stage_feats.len()
            ));
        }
        let mut total: Option<Tensor<T>> = None;
        for (block, feat) in self.blocks.iter().zip(stage_feats) {
            let y = block.forward(feat, h, w, rng)?;
            total = Some(match total {
                None => y,
                Some(t) => t.add(&y)?,
            });
        }
        Ok(total.expect("three blocks"))
    }

    pub fn trace(&self, stage_shapes: &[[usize; 4]; 3], trace: &mut FlopTrace) {
        for (block, &s) in self.blocks.iter().zip(stage_shapes) {
            block.trace(s, trace);
        }
    }
}

impl<T: Scalar> Module<T> for Lsm<T> {
    fn params(&self) -> Vec<&Parameter<T>> {
        self.blocks.iter().flat_map(|b| b.params()).collect()
    }

    fn params_mut(&mut self) -> Vec<&mut Parameter<T>> {
        self.blocks
            .iter_mut()
            .flat_map(|b| b.params_mut())
            .collect()
    }

    fn batch_norms(&self) -> Vec<&BatchNorm2d<T>> {
        self.blocks.iter().flat_map(|b| b.batch_norms()).collect()
    }
}

#[cfg(test)]
mod tests {
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    use super::*;

    fn feat(c: usize, side: usize, seed: u64) -> Tensor<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Tensor::from_fn(&[2, side, side, c], |_| rng.random_range(-1.0..1.0))
    }

    fn block(c: usize) -> LsmBlock<f64> {
        LsmBlock::new("lsm.t", c, 3, 0.1, &SeedStream::new(4))
    }

    #[test]
    fn zero_features_give_head_bias() {
        let b = block(4);
        let y = b
            .forward(
                &Tensor::zeros(&[2, 2, 2, 4]),
                8,
                8,
                &mut ChaCha8Rng::seed_from_u64(0),
            )
            .unwrap();
        assert_eq!(y.shape(), &[2, 3, 8, 8]);
        let bias = b.head.bias.as_ref().unwrap().tensor.to_vec();
        for (i, v) in y.data().iter().enumerate() {
            assert!((v - bias[(i / 64) % 3]).abs() < 1e-12);
        }
    }

    #[test]
    fn output_is_image_sized_at_any_stride() {
        let b = block(4);
        for side in [1, 2, 4] {
            let y = b
                .forward(&feat(4, side, 1), 16, 16, &mut ChaCha8Rng::seed_from_u64(0))
                .unwrap();
            assert_eq!(y.shape(), &[2, 3, 16, 16]);
        }
        assert!(b
            .forward(&feat(4, 3, 1), 16, 16, &mut ChaCha8Rng::seed_from_u64(0))
            .is_err());
    }

    #[test]
    fn zeroed_branch_drops_out() {
        let mut b = block(4);
        b.branch1.conv.weight.set(Tensor::zeros(&[4, 4, 1, 1]));
        let x = feat(4, 2, 2);
        let y = b
            .forward(&x, 4, 4, &mut ChaCha8Rng::seed_from_u64(9))
            .unwrap();
        let only3 = b.branch3.forward(&x.nhwc_to_nchw().unwrap(), true).unwrap();
        let manual = b
            .head
            .forward(
                &only3
                    .dropout(0.1, true, &mut ChaCha8Rng::seed_from_u64(9))
                    .unwrap(),
            )
            .unwrap()
            .upsample(2, UpsampleMode::Bilinear)
            .unwrap();
        assert_eq!(y.to_vec(), manual.to_vec());
    }

    #[test]
    fn aggregate_is_the_sum_of_blocks() {
        let cfg = ModelConfig::toy(3);
        let lsm = Lsm::<f64>::new(&cfg, &SeedStream::new(0));
        let feats = [feat(16, 4, 1), feat(32, 2, 2), feat(64, 1, 3)];
        let total = lsm
            .aggregate(&feats, 16, 16, &mut ChaCha8Rng::seed_from_u64(5))
            .unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let parts: Vec<Tensor<f64>> = lsm
            .blocks
            .iter()
            .zip(&feats)
            .map(|(b, f)| b.forward(f, 16, 16, &mut rng).unwrap())
            .collect();
        let manual = parts[0].add(&parts[1]).unwrap().add(&parts[2]).unwrap();
        assert_eq!(total.to_vec(), manual.to_vec());
        assert!(lsm.aggregate(&feats[..2], 16, 16, &mut rng).is_err());
    }
}
