//! Decoder: VSS stages joined by patch expansion and additive skips, ending
//! in a 1×1 classification head and 4× bilinear upsampling.

use super::config::ModelConfig;
use super::flops::FlopTrace;
use super::layers::{Conv2d, Module};
use super::vss::{PatchExpand, VssBlock};
use crate::error::{arg_err, shape_err, Result};
use crate::rng::SeedStream;
use crate::scalar::Scalar;
use crate::tensor::{Parameter, Tensor, UpsampleMode};

/// Logits plus the channels-last outputs of decoder stages 2, 3 and 4.
#[derive(Debug, Clone)]
pub struct DecoderOutput<T: Scalar> {
    pub logits: Tensor<T>,
    pub stage_feats: [Tensor<T>; 3],
}

#[derive(Debug, Clone)]
pub struct Msd<T: Scalar> {
    /// `vss[s]` is stage `s + 1`.
    pub vss: Vec<VssBlock<T>>,
    /// `expand[s]` brings stage `s + 2` up to stage `s + 1`.
    pub expand: Vec<PatchExpand<T>>,
    pub head: Conv2d<T>,
}

impl<T: Scalar> Msd<T> {
    pub fn new(cfg: &ModelConfig, seeds: &SeedStream) -> Self {
        let dims = cfg.decoder_dims;
        let vss = (0..4)
            .map(|s| {
                VssBlock::new(
                    &format!("msd.stage{}.vss", s + 1),
                    dims[s],
                    cfg.ssm_expand,
                    cfg.d_state,
                    seeds,
                )
            })
            .collect();
        let expand = (0..3)
            .map(|s| {
                PatchExpand::new(
                    &format!("msd.stage{}.expand", s + 1),
                    dims[s + 1],
                    dims[s],
                    seeds,
                )
            })
            .collect();
        let head = Conv2d::new("msd.head", dims[0], cfg.num_classes, 1, 1, 1, true, seeds);
        Self { vss, expand, head }
    }

    /// `features` are the encoder maps `[B, C, H, W]`, finest first.
    pub fn forward(&self, features: &[Tensor<T>]) -> Result<DecoderOutput<T>> {
        if features.len() != 4 {
            return Err(arg_err!(
                "decoder expects 4 feature maps, got {}",
                features.len()
            ));
        }
        let skips: Vec<Tensor<T>> = features
            .iter()
            .map(|f| f.nchw_to_nhwc())
            .collect::<Result<_>>()?;
        let mut x = self.vss[3].forward(&skips[3])?;
        let mut stage_out = vec![x.clone()];
        for s in (0..3).rev() {
            let up = self.expand[s].forward(&x)?;
            if up.shape() != skips[s].shape() {
                return Err(shape_err!(
                    "stage {}: expanded {:?} does not match skip {:?}",
                    s + 1,
                    up.shape(),
                    skips[s].shape()
                ));
            }
            x = self.vss[s].forward(&up.add(&skips[s])?)?;
            stage_out.push(x.clone());
        }
        // stage_out = [s4, s3, s2, s1]
        let logits = self
            .head
            .forward(&x.nhwc_to_nchw()?)?
            .upsample(4, UpsampleMode::Bilinear)?;
        let stage_feats = [
            stage_out[2].clone(),
            stage_out[1].clone(),
            stage_out[0].clone(),
        ];
        Ok(DecoderOutput {
            logits,
            stage_feats,
        })
    }

    /// `features` are encoder shapes `[B, C, H, W]`; returns the channels-last
    /// shapes of stages 2-4.
    pub fn trace(&self, features: &[[usize; 4]; 4], trace: &mut FlopTrace) -> [[usize; 4]; 3] {
        let nhwc = |s: [usize; 4]| [s[0], s[2], s[3], s[1]];
        let mut x = nhwc(features[3]);
        self.vss[3].trace(x, trace);
        let mut shapes = vec![x];
        for s in (0..3).rev() {
            x = self.expand[s].trace(x, trace);
            self.vss[s].trace(x, trace);
            shapes.push(x);
        }
        self.head.trace([x[0], x[3], x[1], x[2]], trace);
        [shapes[2], shapes[1], shapes[0]]
    }
}

impl<T: Scalar> Module<T> for Msd<T> {
    fn params(&self) -> Vec<&Parameter<T>> {
        let mut p: Vec<&Parameter<T>> = Vec::new();
        for s in (0..4).rev() {
            if s < 3 {
                p.extend(self.expand[s].params());
            }
            p.extend(self.vss[s].params());
        }
        p.extend(self.head.params());
        p
    }

    fn params_mut(&mut self) -> Vec<&mut Parameter<T>> {
        let mut p: Vec<&mut Parameter<T>> = Vec::new();
        let mut vss: Vec<&mut VssBlock<T>> = self.vss.iter_mut().collect();
        let mut expand: Vec<&mut PatchExpand<T>> = self.expand.iter_mut().collect();
        for s in (0..4).rev() {
            if s < 3 {
                p.extend(expand.pop().unwrap().params_mut());
            }
            p.extend(vss.pop().unwrap().params_mut());
        }
        p.extend(self.head.params_mut());
        p
    }
}
