//! The UNetMamba network.
//!
//! Parameter names are dotted paths rooted at `encoder`, `msd` or `lsm`;
//! parameter counts and FLOP traces are grouped by that first segment.

mod checkpoint;
pub mod config;
pub mod encoder;
pub mod flops;
pub mod layers;
pub mod lsm;
pub mod msd;
pub mod vss;

use std::collections::BTreeMap;

use rand::Rng;

pub use checkpoint::{read_manifest, ManifestEntry, BUFFER_MANIFEST, PARAM_MANIFEST};
pub use config::ModelConfig;
pub use encoder::Encoder;
pub use flops::{FlopEntry, FlopTrace, SCAN_MACS_PER_STATE};
pub use layers::{BatchNorm2d, Module};
pub use lsm::{Lsm, LsmBlock};
pub use msd::{DecoderOutput, Msd};
pub use vss::{PatchExpand, VssBlock};

use crate::error::Result;
use crate::rng::SeedStream;
use crate::scalar::Scalar;
use crate::tensor::{Parameter, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Infer,
}

/// Training-mode outputs; `aux_logits` is the summed LSM prediction when the
/// LSM is enabled.
#[derive(Debug, Clone)]
pub struct TrainOutput<T: Scalar> {
    pub logits: Tensor<T>,
    pub aux_logits: Option<Tensor<T>>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParamCount {
    pub total: usize,
    pub by_module: BTreeMap<String, usize>,
}

impl ParamCount {
    pub fn module(&self, name: &str) -> usize {
        self.by_module.get(name).copied().unwrap_or(0)
    }
}

#[derive(Debug, Clone)]
pub struct UNetMamba<T: Scalar> {
    pub config: ModelConfig,
    pub encoder: Encoder<T>,
    pub msd: Msd<T>,
    pub lsm: Option<Lsm<T>>,
}

impl<T: Scalar> UNetMamba<T> {
    /// Builds the model from `config.seed`. Every layer draws from a stream
    /// keyed by its own name, so toggling the LSM leaves the other weights
    /// untouched.
    pub fn new(config: ModelConfig) -> Result<Self> {
        config.validate()?;
        let seeds = SeedStream::new(config.seed).child("init");
        Ok(Self {
            encoder: Encoder::new(&config, &seeds),
            msd: Msd::new(&config, &seeds),
            lsm: config.lsm_enabled.then(|| Lsm::new(&config, &seeds)),
            config,
        })
    }

    /// Training forward pass: batch statistics in every batch norm, dropout
    /// active, and the LSM evaluated when present.
    pub fn forward_train(&self, image: &Tensor<T>, rng: &mut impl Rng) -> Result<TrainOutput<T>> {
        self.config.check_input(image.shape())?;
        let feats = self.encoder.forward(image, true)?;
        let dec = self.msd.forward(&feats)?;
        let aux_logits = match &self.lsm {
            Some(lsm) => Some(lsm.aggregate(&dec.stage_feats, image.dim(2), image.dim(3), rng)?),
            None => None,
        };
        Ok(TrainOutput {
            logits: dec.logits,
            aux_logits,
        })
    }

    /// Inference: running statistics, no dropout, and no LSM.
    pub fn infer(&self, image: &Tensor<T>) -> Result<Tensor<T>> {
        self.config.check_input(image.shape())?;
        let feats = self.encoder.forward(image, false)?;
        Ok(self.msd.forward(&feats)?.logits)
    }

    pub fn count_params(&self) -> ParamCount {
        let mut by_module = BTreeMap::new();
        for p in self.params() {
            let key = p.name.split('.').next().unwrap_or("").to_string();
            *by_module.entry(key).or_insert(0) += p.numel();
        }
        ParamCount {
            total: by_module.values().sum(),
            by_module,
        }
    }

    /// Analytic MAC count for an `[B, C, H, W]` input. The LSM appears only
    /// in the training graph.
    pub fn count_flops(&self, input: [usize; 4], mode: Mode) -> Result<FlopTrace> {
        self.config.check_input(&input)?;
        let mut trace = FlopTrace::default();
        let feats = self.encoder.trace(input, &mut trace);
        let stages = self.msd.trace(&feats, &mut trace);
        if let (Mode::Train, Some(lsm)) = (mode, &self.lsm) {
            lsm.trace(&stages, &mut trace);
        }
        Ok(trace)
    }

    /// Parameters sorted by name.
    pub fn named_params(&self) -> BTreeMap<&str, &Parameter<T>> {
        self.params()
            .into_iter()
            .map(|p| (p.name.as_str(), p))
            .collect()
    }
}

impl<T: Scalar> Module<T> for UNetMamba<T> {
    fn params(&self) -> Vec<&Parameter<T>> {
        let mut p = self.encoder.params();
        p.extend(self.msd.params());
        if let Some(lsm) = &self.lsm {
            p.extend(lsm.params());
        }
        p
    }

    fn params_mut(&mut self) -> Vec<&mut Parameter<T>> {
        let mut p = self.encoder.params_mut();
        p.extend(self.msd.params_mut());
        if let Some(lsm) = &mut self.lsm {
            p.extend(lsm.params_mut());
        }
        p
    }

    fn batch_norms(&self) -> Vec<&BatchNorm2d<T>> {
        let mut b = self.encoder.batch_norms();
        if let Some(lsm) = &self.lsm {
            b.extend(lsm.batch_norms());
        }
        b
    }
}
