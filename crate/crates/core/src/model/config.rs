use crate::error::{Error, Result};

/// Architectural hyper-parameters.
///
/// Stage indices run from 1 (finest, stride 4) to 4 (coarsest, stride 32);
/// `encoder_dims[s - 1]` and `decoder_dims[s - 1]` are the channel widths of
/// stage `s`.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelConfig {
    pub in_channels: usize,
    pub num_classes: usize,
    pub encoder_dims: [usize; 4],
    pub decoder_dims: [usize; 4],
    pub d_state: usize,
    pub ssm_expand: usize,
    pub lsm_enabled: bool,
    pub dropout_p: f64,
    pub seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            in_channels: 3,
            num_classes: 7,
            encoder_dims: [64, 128, 256, 512],
            decoder_dims: [64, 128, 256, 512],
            d_state: 16,
            ssm_expand: 2,
            lsm_enabled: true,
            dropout_p: 0.1,
            seed: 0,
        }
    }
}

impl ModelConfig {
    /// Small configuration used by tests and the toy training run.
    pub fn toy(num_classes: usize) -> Self {
        Self {
            num_classes,
            encoder_dims: [8, 16, 32, 64],
            decoder_dims: [8, 16, 32, 64],
            d_state: 4,
            ..Self::default()
        }
    }

    /// Input sides must be multiples of this.
    pub const SIZE_MULTIPLE: usize = 32;

    pub fn validate(&self) -> Result<()> {
        if self.num_classes < 2 {
            return Err(Error::Config(format!(
                "num_classes must be >= 2, got {}",
                self.num_classes
            )));
        }
        if self.encoder_dims != self.decoder_dims {
            return Err(Error::Config(format!(
                "skip fusion by addition needs decoder_dims == encoder_dims, got {:?} vs {:?}",
                self.decoder_dims, self.encoder_dims
            )));
        }
        if self.encoder_dims.contains(&0) || self.in_channels == 0 {
            return Err(Error::Config("channel widths must be positive".into()));
        }
        if self.d_state == 0 || self.ssm_expand == 0 {
            return Err(Error::Config(
                "d_state and ssm_expand must be positive".into(),
            ));
        }
        if !(0.0..1.0).contains(&self.dropout_p) {
            return Err(Error::Config(format!(
                "dropout_p must lie in [0, 1), got {}",
                self.dropout_p
            )));
        }
        Ok(())
    }

    pub fn check_input(&self, shape: &[usize]) -> Result<()> {
        if shape.len() != 4 || shape[1] != self.in_channels {
            return Err(Error::Shape(format!(
                "expected image [B, {}, H, W], got {:?}",
                self.in_channels, shape
            )));
        }
        let (h, w) = (shape[2], shape[3]);
        if h % Self::SIZE_MULTIPLE != 0 || w % Self::SIZE_MULTIPLE != 0 {
            return Err(Error::Argument(format!(
                "image size {h}x{w} must be a multiple of {} on both sides",
                Self::SIZE_MULTIPLE
            )));
        }
        Ok(())
    }
}
