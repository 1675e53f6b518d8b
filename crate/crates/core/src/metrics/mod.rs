//! Training losses and confusion-matrix metrics.

mod confusion;
mod loss;

pub use confusion::MetricAccumulator;
pub use loss::{
    cross_entropy_loss, dice_loss, pixel_probs, total_loss, LossComponents, LossConfig, LossOutput,
};
