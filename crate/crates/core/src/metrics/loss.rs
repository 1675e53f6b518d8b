//! Dice and cross-entropy losses and their weighted combination.

use crate::error::{shape_err, Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Probabilities below this are clamped before taking the log.
pub const LOG_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossConfig {
    /// Weight of the auxiliary cross-entropy.
    pub alpha: f64,
    pub dice_smooth: f64,
    pub ignore_index: u8,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            alpha: 0.4,
            dice_smooth: 1e-6,
            ignore_index: 255,
        }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        if self.alpha.is_nan()
            || self.alpha < 0.0
            || self.dice_smooth.is_nan()
            || self.dice_smooth <= 0.0
        {
            return Err(Error::Config(format!(
                "need alpha >= 0 and dice_smooth > 0, got {} and {}",
                self.alpha, self.dice_smooth
            )));
        }
        Ok(())
    }
}

/// Per-sample Dice summed over classes:
/// `1 − (2/N) Σₙ Σₖ ŷy / (ŷ + y + ε)` for `probs, onehot: [N, K]`.
///
/// The smoothing term sits in the denominator only, so classes that are
/// absent from both the prediction and the label contribute 0 rather than
/// 0/0.
pub fn dice_loss<T: Scalar>(probs: &Tensor<T>, onehot: &Tensor<T>, eps: f64) -> Result<Tensor<T>> {
    let n = check_pair("dice_loss", probs, onehot)?;
    let num = probs.mul(onehot)?;
    let den = probs.add(onehot)?.add_scalar(T::lit(eps));
    let per = num.div(&den)?.sum();
    Ok(per.mul_scalar(T::lit(-2.0 / n as f64)).add_scalar(T::one()))
}

/// `−(1/N) Σₙ Σₖ ŷ log y` with `log` clamped at [`LOG_FLOOR`].
pub fn cross_entropy_loss<T: Scalar>(probs: &Tensor<T>, onehot: &Tensor<T>) -> Result<Tensor<T>> {
    let n = check_pair("cross_entropy_loss", probs, onehot)?;
    let ll = probs.log_clamped(T::lit(LOG_FLOOR)).mul(onehot)?.sum();
    Ok(ll.mul_scalar(T::lit(-1.0 / n as f64)))
}

fn check_pair<T: Scalar>(what: &str, probs: &Tensor<T>, onehot: &Tensor<T>) -> Result<usize> {
    if probs.rank() != 2 || probs.shape() != onehot.shape() {
        return Err(shape_err!(
            "{what}: probs {:?} vs onehot {:?}",
            probs.shape(),
            onehot.shape()
        ));
    }
    if probs.dim(0) == 0 {
        return Err(Error::EmptyBatch(format!("{what}: no scored pixels")));
    }
    Ok(probs.dim(0))
}

/// Softmax probabilities `[N, K]` of the scored pixels of `logits: [B, K, H, W]`
/// together with their one-hot targets. `labels` is `[B, H, W]` row-major.
pub fn pixel_probs<T: Scalar>(
    logits: &Tensor<T>,
    labels: &[u8],
    ignore_index: u8,
) -> Result<(Tensor<T>, Tensor<T>)> {
    if logits.rank() != 4 {
        return Err(shape_err!(
            "logits must be [B, K, H, W], got {:?}",
            logits.shape()
        ));
    }
    let k = logits.dim(1);
    let pixels = logits.numel() / k;
    if labels.len() != pixels {
        return Err(shape_err!(
            "logits {:?} cover {pixels} pixels but {} labels were given",
            logits.shape(),
            labels.len()
        ));
    }
    let mut rows = Vec::with_capacity(pixels);
    let mut onehot = Vec::with_capacity(pixels * k);
    for (i, &l) in labels.iter().enumerate() {
        if l == ignore_index {
            continue;
        }
        if l as usize >= k {
            return Err(Error::Argument(format!(
                "label {l} at pixel {i} is not below K = {k}"
            )));
        }
        rows.push(i);
        onehot.extend((0..k).map(|c| if c == l as usize { T::one() } else { T::zero() }));
    }
    if rows.is_empty() {
        return Err(Error::EmptyBatch(
            "every pixel carries the ignore index".into(),
        ));
    }
    let flat = logits.nchw_to_nhwc()?.reshape(&[pixels, k])?;
    let probs = flat.select_rows(&rows)?.softmax(1)?;
    let onehot = Tensor::new(&[rows.len(), k], onehot)?;
    Ok((probs, onehot))
}

/// Scalar loss terms, for logging.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossComponents {
    pub dice: f64,
    pub ce: f64,
    pub aux_ce: Option<f64>,
    pub alpha: f64,
}

impl LossComponents {
    /// `(dice + ce) + α·aux_ce`, the aux term only when present.
    pub fn total(&self) -> f64 {
        let main = self.dice + self.ce;
        match self.aux_ce {
            Some(aux) => main + self.alpha * aux,
            None => main,
        }
    }
}

#[derive(Debug, Clone)]
pub struct LossOutput<T: Scalar> {
    pub loss: Tensor<T>,
    pub components: LossComponents,
}

/// Dice + CE on the main logits, plus `α·CE` on the auxiliary logits when
/// given.
pub fn total_loss<T: Scalar>(
    logits: &Tensor<T>,
    aux_logits: Option<&Tensor<T>>,
    labels: &[u8],
    cfg: &LossConfig,
) -> Result<LossOutput<T>> {
    let (probs, onehot) = pixel_probs(logits, labels, cfg.ignore_index)?;
    let dice = dice_loss(&probs, &onehot, cfg.dice_smooth)?;
    let ce = cross_entropy_loss(&probs, &onehot)?;
    let mut loss = dice.add(&ce)?;
    let aux_ce = match aux_logits {
        Some(aux) => {
            if aux.shape() != logits.shape() {
                return Err(shape_err!(
                    "aux logits {:?} vs logits {:?}",
                    aux.shape(),
                    logits.shape()
                ));
            }
            let (aux_probs, _) = pixel_probs(aux, labels, cfg.ignore_index)?;
            let aux_ce = cross_entropy_loss(&aux_probs, &onehot)?;
            loss = loss.add(&aux_ce.mul_scalar(T::lit(cfg.alpha)))?;
            Some(aux_ce.item().as_f64())
        }
        None => None,
    };
    let components = LossComponents {
        dice: dice.item().as_f64(),
        ce: ce.item().as_f64(),
        aux_ce,
        alpha: cfg.alpha,
    };
    if loss.has_non_finite() {
        return Err(Error::Numeric(format!(
            "loss is not finite: {components:?}"
        )));
    }
    Ok(LossOutput { loss, components })
}
