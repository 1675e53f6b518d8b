//! Analytic multiply-accumulate accounting.
//!
//! Layers describe their cost from shapes alone; nothing is executed. The
//! reported unit is MACs, which is what common "FLOPs" counters print.

use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tape;

/// MACs per `(position, channel, state)` of one selective scan: discretise,
/// state update, output contraction.
pub const SCAN_MACS_PER_STATE: u64 = 6;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FlopEntry {
    /// Layer path, e.g. `msd.stage2.vss.in_main`.
    pub name: String,
    pub op: &'static str,
    pub macs: u64,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct FlopTrace {
    pub entries: Vec<FlopEntry>,
}

impl FlopTrace {
    pub fn record(&mut self, name: &str, op: &'static str, macs: u64) {
        self.entries.push(FlopEntry {
            name: name.to_string(),
            op,
            macs,
        });
    }

    pub fn total(&self) -> u64 {
        self.entries.iter().map(|e| e.macs).sum()
    }

    /// Totals keyed by the first path segment (`encoder`, `msd`, `lsm`).
    pub fn by_module(&self) -> BTreeMap<String, u64> {
        let mut out = BTreeMap::new();
        for e in &self.entries {
            let key = e.name.split('.').next().unwrap_or("").to_string();
            *out.entry(key).or_insert(0) += e.macs;
        }
        out
    }

    pub fn by_op(&self) -> BTreeMap<&'static str, u64> {
        let mut out = BTreeMap::new();
        for e in &self.entries {
            *out.entry(e.op).or_insert(0) += e.macs;
        }
        out
    }

    pub fn entries_under(&self, prefix: &str) -> impl Iterator<Item = &FlopEntry> {
        let exact = prefix.to_string();
        let dotted = format!("{prefix}.");
        self.entries
            .iter()
            .filter(move |e| e.name == exact || e.name.starts_with(&dotted))
    }
}

/// Ops that contribute no multiply-accumulates.
const ZERO_COST_OPS: &[&str] = &[
    "add",
    "add_scalar",
    "sub",
    "mul",
    "mul_scalar",
    "div",
    "neg",
    "exp",
    "log",
    "sigmoid",
    "silu",
    "relu",
    "relu6",
    "softplus",
    "softmax",
    "sum",
    "reshape",
    "permute",
    "select_rows",
    "layer_norm",
    "batch_norm",
    "batch_norm_eval",
    "upsample",
    "dropout",
    "cross_scan_expand",
    "cross_scan_merge",
];

impl FlopTrace {
    /// Counts MACs from an executed graph instead of layer descriptions.
    ///
    /// Entries are named `<op>#<tape position>`. Any op without a known cost
    /// rule is rejected so new primitives cannot silently count as free.
    pub fn from_tape<T: Scalar>(tape: &Tape<T>) -> Result<FlopTrace> {
        let mut trace = FlopTrace::default();
        for (i, (op, out, inputs)) in tape.entries().into_iter().enumerate() {
            let out_numel: usize = out.iter().product();
            let macs = match op {
                "conv2d" => {
                    let w = inputs[1];
                    out_numel * w[1] * w[2] * w[3]
                }
                "linear" => out_numel * inputs[1][1],
                "selective_scan" => out_numel * inputs[2][1] * SCAN_MACS_PER_STATE as usize,
                _ if ZERO_COST_OPS.contains(&op) => continue,
                _ => return Err(Error::Untraceable(op.to_string())),
            };
            trace.record(&format!("{op}#{i}"), op, macs as u64);
        }
        Ok(trace)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tensor;

    #[test]
    fn tape_counts_conv_and_linear() {
        let x = Tensor::<f64>::ones(&[1, 1, 2, 2]).into_parameter();
        let w = Tensor::<f64>::ones(&[1, 1, 1, 1]);
        let y = x.conv2d(&w, None, 1, 0, 1).unwrap();
        let lw = Tensor::<f64>::ones(&[3, 2]);
        let z = y.reshape(&[2, 2]).unwrap().linear(&lw, None).unwrap().sum();
        let trace = FlopTrace::from_tape(&Tape::record(&z)).unwrap();
        assert_eq!(trace.by_op()["conv2d"], 4);
        assert_eq!(trace.by_op()["linear"], 2 * 3 * 2);
    }

    #[test]
    fn module_grouping() {
        let mut t = FlopTrace::default();
        t.record("encoder.stem.0", "conv2d", 5);
        t.record("msd.stage1.vss.out", "linear", 7);
        t.record("msd.head", "conv2d", 1);
        assert_eq!(t.by_module()["msd"], 8);
        assert_eq!(t.entries_under("msd.stage1").count(), 1);
        assert_eq!(t.total(), 13);
    }
}
