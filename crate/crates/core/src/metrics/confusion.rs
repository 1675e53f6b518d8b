//! Confusion matrix and the scores derived from it.

use serde_json::json;

use crate::error::{Error, Result};

/// `K × K` pixel counts; rows are ground truth, columns are predictions.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MetricAccumulator {
    k: usize,
    matrix: Vec<u64>,
}

impl MetricAccumulator {
    pub fn new(num_classes: usize) -> Self {
        Self {
            k: num_classes,
            matrix: vec![0; num_classes * num_classes],
        }
    }

    pub fn num_classes(&self) -> usize {
        self.k
    }

    pub fn get(&self, label: usize, pred: usize) -> u64 {
        self.matrix[label * self.k + pred]
    }

    pub fn total(&self) -> u64 {
        self.matrix.iter().sum()
    }

    /// Adds one count per pixel whose label is not `ignore_index`.
    pub fn update(&mut self, pred: &[usize], label: &[u8], ignore_index: u8) -> Result<()> {
        if pred.len() != label.len() {
            return Err(Error::Shape(format!(
                "{} predictions vs {} labels",
                pred.len(),
                label.len()
            )));
        }
        // validate first so a bad batch leaves the counts untouched
        for (i, (&p, &l)) in pred.iter().zip(label).enumerate() {
            if l != ignore_index && (l as usize >= self.k || p >= self.k) {
                return Err(Error::Argument(format!(
                    "pixel {i}: class ids (label {l}, pred {p}) must be below K = {}",
                    self.k
                )));
            }
        }
        for (&p, &l) in pred.iter().zip(label) {
            if l != ignore_index {
                self.matrix[l as usize * self.k + p] += 1;
            }
        }
        Ok(())
    }

    pub fn merge(&mut self, other: &MetricAccumulator) -> Result<()> {
        if other.k != self.k {
            return Err(Error::Argument(format!(
                "cannot merge K = {} into K = {}",
                other.k, self.k
            )));
        }
        for (a, b) in self.matrix.iter_mut().zip(&other.matrix) {
            *a += b;
        }
        Ok(())
    }

    /// `(tp, fp, fn)` of class `c`.
    fn counts(&self, c: usize) -> (u64, u64, u64) {
        let tp = self.get(c, c);
        let col: u64 = (0..self.k).map(|r| self.get(r, c)).sum();
        let row: u64 = (0..self.k).map(|p| self.get(c, p)).sum();
        (tp, col - tp, row - tp)
    }

    fn non_empty(&self) -> Result<()> {
        if self.total() == 0 {
            return Err(Error::EmptyBatch(
                "no scored pixels in the accumulator".into(),
            ));
        }
        Ok(())
    }

    /// IoU per class; `None` for classes that appear in neither labels nor
    /// predictions.
    pub fn per_class_iou(&self) -> Vec<Option<f64>> {
        (0..self.k)
            .map(|c| {
                let (tp, fp, fn_) = self.counts(c);
                let den = tp + fp + fn_;
                (den > 0).then(|| tp as f64 / den as f64)
            })
            .collect()
    }

    pub fn per_class_f1(&self) -> Vec<Option<f64>> {
        (0..self.k)
            .map(|c| {
                let (tp, fp, fn_) = self.counts(c);
                let den = 2 * tp + fp + fn_;
                (den > 0).then(|| 2.0 * tp as f64 / den as f64)
            })
            .collect()
    }

    fn mean_present(values: Vec<Option<f64>>) -> f64 {
        let present: Vec<f64> = values.into_iter().flatten().collect();
        present.iter().sum::<f64>() / present.len() as f64
    }

    pub fn miou(&self) -> Result<f64> {
        self.non_empty()?;
        Ok(Self::mean_present(self.per_class_iou()))
    }

    pub fn mf1(&self) -> Result<f64> {
        self.non_empty()?;
        Ok(Self::mean_present(self.per_class_f1()))
    }

    pub fn oa(&self) -> Result<f64> {
        self.non_empty()?;
        let diag: u64 = (0..self.k).map(|c| self.get(c, c)).sum();
        Ok(diag as f64 / self.total() as f64)
    }

    /// One JSON object: `miou`, `mf1`, `oa`, `per_class_iou` (null for
    /// classes never seen).
    pub fn report(&self) -> Result<serde_json::Value> {
        Ok(json!({
            "miou": self.miou()?,
            "mf1": self.mf1()?,
            "oa": self.oa()?,
            "per_class_iou": self.per_class_iou(),
        }))
    }
}
