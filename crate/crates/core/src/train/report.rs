//! Parameter and MAC report.

use serde_json::{json, Value};

use crate::error::Result;
use crate::model::{Mode, ModelConfig, UNetMamba};

/// Efficiency figures published for the reference model, printed next to
/// ours for comparison. Our encoder is a stand-in, so only the LSM delta and
/// the train-only FLOP constancy are expected to carry over.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ReferenceFigures {
    pub params_m_with_lsm: f64,
    pub params_m_without_lsm: f64,
    pub flops_g: f64,
    pub input_side: usize,
}

impl ReferenceFigures {
    /// Rounded to two decimals, as published.
    pub fn lsm_delta_m(&self) -> f64 {
        ((self.params_m_with_lsm - self.params_m_without_lsm) * 100.0).round() / 100.0
    }
}

pub const REFERENCE_FIGURES: ReferenceFigures = ReferenceFigures {
    params_m_with_lsm: 14.76,
    params_m_without_lsm: 13.89,
    flops_g: 100.52,
    input_side: 1024,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StatsOptions {
    pub height: usize,
    pub width: usize,
    pub with_lsm: bool,
}

impl Default for StatsOptions {
    fn default() -> Self {
        Self {
            height: 1024,
            width: 1024,
            with_lsm: false,
        }
    }
}

/// Builds the model (LSM present iff `with_lsm`) and reports its parameter
/// counts and inference MACs for a single `H × W` image.
pub fn stats_report(cfg: &ModelConfig, opts: StatsOptions) -> Result<Value> {
    let cfg = ModelConfig {
        lsm_enabled: opts.with_lsm,
        ..cfg.clone()
    };
    let model = UNetMamba::<f32>::new(cfg.clone())?;
    let input = [1, cfg.in_channels, opts.height, opts.width];
    let params = model.count_params();
    let infer = model.count_flops(input, Mode::Infer)?;
    let mut report = json!({
        "input": input,
        "params": {
            "total": params.total,
            "by_module": params.by_module,
        },
        "infer_macs": {
            "total": infer.total(),
            "gmacs": infer.total() as f64 / 1e9,
            "by_module": infer.by_module(),
            "by_op": infer.by_op(),
        },
        "reference": {
            "params_m_with_lsm": REFERENCE_FIGURES.params_m_with_lsm,
            "params_m_without_lsm": REFERENCE_FIGURES.params_m_without_lsm,
            "lsm_delta_m": REFERENCE_FIGURES.lsm_delta_m(),
            "flops_g": REFERENCE_FIGURES.flops_g,
            "input": [REFERENCE_FIGURES.input_side, REFERENCE_FIGURES.input_side],
        },
    });
    if opts.with_lsm {
        let train = model.count_flops(input, Mode::Train)?;
        report["lsm"] = json!({
            "params": params.module("lsm"),
            "params_m": params.module("lsm") as f64 / 1e6,
            "train_macs": train.total() - infer.total(),
        });
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn with_lsm_keeps_infer_macs() {
        let cfg = ModelConfig::toy(3);
        let small = StatsOptions {
            height: 64,
            width: 64,
            with_lsm: false,
        };
        let a = stats_report(&cfg, small).unwrap();
        let b = stats_report(
            &cfg,
            StatsOptions {
                with_lsm: true,
                ..small
            },
        )
        .unwrap();
        assert_eq!(a["infer_macs"], b["infer_macs"]);
        assert!(a.get("lsm").is_none());
        assert!(b["lsm"]["params"].as_u64().unwrap() > 0);
        assert!(b["lsm"]["train_macs"].as_u64().unwrap() > 0);
    }

    #[test]
    fn halving_the_side_quarters_the_macs() {
        let cfg = ModelConfig::default();
        let full = stats_report(&cfg, StatsOptions::default()).unwrap();
        let half = stats_report(
            &cfg,
            StatsOptions {
                height: 512,
                width: 512,
                with_lsm: false,
            },
        )
        .unwrap();
        for op in ["conv2d", "selective_scan", "linear"] {
            let f = full["infer_macs"]["by_op"][op].as_u64().unwrap();
            let h = half["infer_macs"]["by_op"][op].as_u64().unwrap();
            assert_eq!(f, 4 * h, "{op}");
        }
    }
}
