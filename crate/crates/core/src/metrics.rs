//! Confusion matrices, accuracy, per-class IoU, and mIoU.

use alloc::collections::BTreeMap;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// `k × k` counts; rows are ground truth, columns are predictions.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    k: usize,
    counts: Vec<u64>,
}

impl ConfusionMatrix {
    pub fn new(k: usize) -> Self {
        Self { k, counts: vec![0; k * k] }
    }

    pub fn classes(&self) -> usize {
        self.k
    }

    pub fn accumulate(&mut self, gt: usize, pred: usize) -> Result<()> {
        for index in [gt, pred] {
            if index >= self.k {
                return Err(Error::IndexOutOfRange { index, classes: self.k });
            }
        }
        self.counts[gt * self.k + pred] += 1;
        Ok(())
    }

    pub fn get(&self, gt: usize, pred: usize) -> u64 {
        self.counts[gt * self.k + pred]
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    pub fn trace(&self) -> u64 {
        (0..self.k).map(|c| self.get(c, c)).sum()
    }

    /// Ground-truth count of class `c`.
    pub fn support(&self, c: usize) -> u64 {
        (0..self.k).map(|p| self.get(c, p)).sum()
    }

    pub fn predicted(&self, c: usize) -> u64 {
        (0..self.k).map(|g| self.get(g, c)).sum()
    }

    /// Elementwise sum, for merging partial matrices.
    pub fn merge(&mut self, other: &ConfusionMatrix) -> Result<()> {
        if other.k != self.k {
            return Err(Error::DimensionMismatch { expected: self.k, actual: other.k });
        }
        for (a, b) in self.counts.iter_mut().zip(&other.counts) {
            *a += b;
        }
        Ok(())
    }

    pub fn accuracy(&self) -> Result<f64> {
        match self.total() {
            0 => Err(Error::EmptyMatrix),
            t => Ok(self.trace() as f64 / t as f64),
        }
    }

    /// `(TP, FP, FN)` for class `c`.
    pub fn tp_fp_fn(&self, c: usize) -> (u64, u64, u64) {
        let tp = self.get(c, c);
        (tp, self.predicted(c) - tp, self.support(c) - tp)
    }

    /// IoU of class `c`; a class that never occurs in ground truth or
    /// predictions scores 0 here and is left out of [`miou`](Self::miou).
    pub fn iou(&self, c: usize) -> Result<f64> {
        if self.total() == 0 {
            return Err(Error::EmptyMatrix);
        }
        if c >= self.k {
            return Err(Error::IndexOutOfRange { index: c, classes: self.k });
        }
        let (tp, fp, fn_) = self.tp_fp_fn(c);
        let denom = tp + fp + fn_;
        Ok(if denom == 0 { 0.0 } else { tp as f64 / denom as f64 })
    }

    pub fn is_populated(&self, c: usize) -> bool {
        let (tp, fp, fn_) = self.tp_fp_fn(c);
        tp + fp + fn_ > 0
    }

    /// Mean IoU over classes with `TP + FP + FN > 0`.
    pub fn miou(&self) -> Result<f64> {
        if self.total() == 0 {
            return Err(Error::EmptyMatrix);
        }
        let mut sum = 0.0;
        let mut n = 0usize;
        for c in (0..self.k).filter(|&c| self.is_populated(c)) {
            sum += self.iou(c)?;
            n += 1;
        }
        Ok(sum / n as f64)
    }
}

/// How region accuracy is averaged.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Averaging {
    /// Over all scored objects pooled across scenes.
    #[default]
    Micro,
    /// Mean of per-scene accuracies.
    Macro,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub task: String,
    pub accuracy: f64,
    pub miou: f64,
    /// Populated classes only.
    pub per_class_iou: BTreeMap<String, f64>,
    /// Ground-truth count per class, all classes.
    pub support: BTreeMap<String, u64>,
}

impl MetricsReport {
    pub fn from_confusion(task: &str, cm: &ConfusionMatrix, class_names: &[String]) -> Result<Self> {
        if class_names.len() != cm.classes() {
            return Err(Error::LengthMismatch { expected: cm.classes(), actual: class_names.len() });
        }
        let mut per_class_iou = BTreeMap::new();
        let mut support = BTreeMap::new();
        for (c, name) in class_names.iter().enumerate() {
            if cm.is_populated(c) {
                per_class_iou.insert(name.clone(), cm.iou(c)?);
            }
            support.insert(name.clone(), cm.support(c));
        }
        Ok(Self { task: task.into(), accuracy: cm.accuracy()?, miou: cm.miou()?, per_class_iou, support })
    }
}

/// Mean of per-scene accuracies, skipping scenes with nothing scored.
pub fn macro_accuracy(per_scene: &[ConfusionMatrix]) -> Result<f64> {
    let accs: Vec<f64> = per_scene.iter().filter(|cm| cm.total() > 0).map(|cm| cm.trace() as f64 / cm.total() as f64).collect();
    if accs.is_empty() {
        return Err(Error::EmptyMatrix);
    }
    Ok(accs.iter().sum::<f64>() / accs.len() as f64)
}

/// Confusion matrix from parallel ground-truth and prediction slices.
pub fn confusion_from_pairs(k: usize, gt: &[usize], pred: &[usize]) -> Result<ConfusionMatrix> {
    if gt.len() != pred.len() {
        return Err(Error::LengthMismatch { expected: gt.len(), actual: pred.len() });
    }
    let mut cm = ConfusionMatrix::new(k);
    for (&g, &p) in gt.iter().zip(pred) {
        cm.accumulate(g, p)?;
    }
    Ok(cm)
}
