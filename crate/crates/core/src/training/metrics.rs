//! Confusion-matrix segmentation metrics.
//!
//! Rows of the confusion matrix are ground truth, columns predictions.
//! A class that appears in neither is left out of the mean pixel accuracy
//! and the mean IoU.

use std::collections::BTreeMap;
use std::fmt;

use super::loss::LabelMap;
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ConfusionMatrix {
    pub num_classes: usize,
    pub counts: Vec<u64>,
}

impl ConfusionMatrix {
    pub fn new(num_classes: usize) -> Self {
        Self { num_classes, counts: vec![0; num_classes * num_classes] }
    }

    pub fn get(&self, truth: usize, pred: usize) -> u64 {
        self.counts[truth * self.num_classes + pred]
    }

    pub fn add(&mut self, truth: &LabelMap, pred: &LabelMap) -> Result<()> {
        if truth.data.len() != pred.data.len() {
            return Err(Error::Shape(format!("{} labels vs {} predictions", truth.data.len(), pred.data.len())));
        }
        let k = self.num_classes;
        for (&t, &p) in truth.data.iter().zip(&pred.data) {
            let (t, p) = (t as usize, p as usize);
            if t >= k || p >= k {
                return Err(Error::Label { label: t.max(p), num_classes: k });
            }
            self.counts[t * k + p] += 1;
        }
        Ok(())
    }

    pub fn merge(&mut self, other: &ConfusionMatrix) {
        for (a, b) in self.counts.iter_mut().zip(&other.counts) {
            *a += b;
        }
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    pub fn report(&self) -> MetricsReport {
        let k = self.num_classes;
        let total = self.total();
        let diag: u64 = (0..k).map(|c| self.get(c, c)).sum();
        let mut iou = BTreeMap::new();
        let mut recall_sum = 0.0;
        for c in 0..k {
            let tp = self.get(c, c);
            let gt: u64 = (0..k).map(|p| self.get(c, p)).sum();
            let pred: u64 = (0..k).map(|t| self.get(t, c)).sum();
            if gt + pred == 0 {
                continue;
            }
            iou.insert(c, tp as f64 / (gt + pred - tp) as f64);
            recall_sum += if gt == 0 { 0.0 } else { tp as f64 / gt as f64 };
        }
        let present = iou.len().max(1) as f64;
        MetricsReport {
            overall_accuracy: if total == 0 { 0.0 } else { diag as f64 / total as f64 },
            mean_pixel_accuracy: recall_sum / present,
            mean_iou: iou.values().sum::<f64>() / present,
            iou_per_class: iou,
            confusion: self.clone(),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct MetricsReport {
    pub overall_accuracy: f64,
    pub mean_pixel_accuracy: f64,
    /// Only classes present in ground truth or prediction.
    pub iou_per_class: BTreeMap<usize, f64>,
    pub mean_iou: f64,
    pub confusion: ConfusionMatrix,
}

pub const CLASS_NAMES: [&str; 3] = ["shadow", "ground", "layover"];

impl fmt::Display for MetricsReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "oa = {:.6}", self.overall_accuracy)?;
        writeln!(f, "mpa = {:.6}", self.mean_pixel_accuracy)?;
        for (c, v) in &self.iou_per_class {
            let name = CLASS_NAMES.get(*c).copied().unwrap_or("class");
            writeln!(f, "iou[{c}:{name}] = {v:.6}")?;
        }
        writeln!(f, "miou = {:.6}", self.mean_iou)?;
        let k = self.confusion.num_classes;
        write!(f, "confusion (rows truth, cols prediction):")?;
        for t in 0..k {
            write!(f, "\n ")?;
            for p in 0..k {
                write!(f, " {}", self.confusion.get(t, p))?;
            }
        }
        Ok(())
    }
}

pub fn metrics(truth: &[LabelMap], pred: &[LabelMap], num_classes: usize) -> Result<MetricsReport> {
    let mut cm = ConfusionMatrix::new(num_classes);
    for (t, p) in truth.iter().zip(pred) {
        cm.add(t, p)?;
    }
    Ok(cm.report())
}
