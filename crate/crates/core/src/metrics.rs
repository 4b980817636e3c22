//! Segmentation metrics over a confusion matrix.
//!
//! Rows are ground truth, columns are predictions. For a class subset `S`:
//!
//! * PA = Σ_{c∈S} n_cc / Σ_{c∈S} row_c
//! * MA = mean over c ∈ S of n_cc / row_c
//! * IoU_c = n_cc / (row_c + col_c − n_cc), mIoU = mean over S
//!
//! Classes of `S` that never occur in the ground truth are left out of the MA
//! and mIoU means. hIoU is the harmonic mean of the seen and unseen mIoU.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Label value excluded from evaluation.
pub const IGNORE_LABEL: usize = 255;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConfusionMatrix {
    classes: usize,
    counts: Vec<u64>,
}

impl ConfusionMatrix {
    pub fn new(classes: usize) -> Result<Self> {
        if classes == 0 || classes > IGNORE_LABEL {
            return Err(Error::Domain(format!(
                "confusion matrix supports 1..={IGNORE_LABEL} classes, got {classes}"
            )));
        }
        Ok(Self {
            classes,
            counts: vec![0; classes * classes],
        })
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    /// `cm[gt][pred]`.
    pub fn get(&self, gt: usize, pred: usize) -> u64 {
        self.counts[gt * self.classes + pred]
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    pub fn row_sum(&self, gt: usize) -> u64 {
        self.counts[gt * self.classes..(gt + 1) * self.classes]
            .iter()
            .sum()
    }

    pub fn col_sum(&self, pred: usize) -> u64 {
        (0..self.classes).map(|g| self.get(g, pred)).sum()
    }

    fn check(&self, label: usize) -> Result<()> {
        if label >= self.classes {
            return Err(Error::LabelOutOfRange {
                label,
                classes: self.classes,
            });
        }
        Ok(())
    }

    /// Adds one count per pixel whose ground truth is not [`IGNORE_LABEL`].
    /// Labels are validated before anything is counted.
    pub fn accumulate(&mut self, pred: &[usize], gt: &[usize]) -> Result<()> {
        if pred.len() != gt.len() {
            return Err(Error::shape("accumulate", gt.len(), pred.len()));
        }
        for (&p, &g) in pred.iter().zip(gt) {
            if g == IGNORE_LABEL {
                continue;
            }
            self.check(g)?;
            self.check(p)?;
        }
        for (&p, &g) in pred.iter().zip(gt) {
            if g != IGNORE_LABEL {
                self.counts[g * self.classes + p] += 1;
            }
        }
        Ok(())
    }

    pub fn merge(&mut self, other: &Self) -> Result<()> {
        if other.classes != self.classes {
            return Err(Error::shape(
                "ConfusionMatrix::merge",
                self.classes,
                other.classes,
            ));
        }
        self.counts
            .iter_mut()
            .zip(&other.counts)
            .for_each(|(a, b)| *a += b);
        Ok(())
    }

    pub fn compute_metrics(&self, subset: &[usize]) -> Result<SegMetrics> {
        if subset.is_empty() {
            return Err(Error::UndefinedMetric("empty class subset".into()));
        }
        for &c in subset {
            self.check(c)?;
        }
        let mut correct = 0u64;
        let mut pixels = 0u64;
        let mut acc_sum = 0.0;
        let mut iou_sum = 0.0;
        let mut present = 0usize;
        for &c in subset {
            let row = self.row_sum(c);
            if row == 0 {
                continue;
            }
            let hit = self.get(c, c);
            let union = row + self.col_sum(c) - hit;
            correct += hit;
            pixels += row;
            acc_sum += hit as f64 / row as f64;
            iou_sum += hit as f64 / union as f64;
            present += 1;
        }
        if present == 0 {
            return Err(Error::UndefinedMetric(format!(
                "no ground-truth pixels for classes {subset:?}"
            )));
        }
        Ok(SegMetrics {
            pa: correct as f64 / pixels as f64,
            ma: acc_sum / present as f64,
            miou: iou_sum / present as f64,
        })
    }
}

/// Fractions in `[0, 1]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SegMetrics {
    pub pa: f64,
    pub ma: f64,
    pub miou: f64,
}

impl SegMetrics {
    pub fn percent(&self) -> Self {
        Self {
            pa: 100.0 * self.pa,
            ma: 100.0 * self.ma,
            miou: 100.0 * self.miou,
        }
    }
}

/// Harmonic mean `2ab / (a + b)` of seen and unseen mIoU (any common scale).
pub fn hiou(seen_miou: f64, unseen_miou: f64) -> Result<f64> {
    if !(seen_miou >= 0.0 && unseen_miou >= 0.0) || !(seen_miou + unseen_miou).is_finite() {
        return Err(Error::Domain(format!(
            "hIoU needs non-negative inputs, got ({seen_miou}, {unseen_miou})"
        )));
    }
    let sum = seen_miou + unseen_miou;
    if sum == 0.0 {
        return Err(Error::UndefinedMetric(
            "hIoU of two zero mIoU values".into(),
        ));
    }
    Ok(2.0 * seen_miou * unseen_miou / sum)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn perfect_prediction_is_diagonal() {
        let mut cm = ConfusionMatrix::new(3).unwrap();
        let labels = [0, 1, 2, 2, 1, 0, 0];
        cm.accumulate(&labels, &labels).unwrap();
        assert_eq!((0..3).map(|c| cm.get(c, c)).sum::<u64>(), 7);
        assert_eq!(cm.total(), 7);
        let m = cm.compute_metrics(&[0, 1, 2]).unwrap();
        assert_eq!((m.pa, m.ma, m.miou), (1.0, 1.0, 1.0));
    }

    #[test]
    fn ignored_ground_truth_is_skipped() {
        let mut cm = ConfusionMatrix::new(2).unwrap();
        cm.accumulate(&[0, 1, 1], &[IGNORE_LABEL; 3]).unwrap();
        assert_eq!(cm, ConfusionMatrix::new(2).unwrap());
    }

    #[test]
    fn three_pixel_hand_count() {
        let mut cm = ConfusionMatrix::new(2).unwrap();
        cm.accumulate(&[0, 0, 1], &[0, 1, 1]).unwrap();
        assert_eq!(
            (cm.get(0, 0), cm.get(1, 0), cm.get(1, 1), cm.get(0, 1)),
            (1, 1, 1, 0)
        );
    }

    #[test]
    fn two_class_hand_arithmetic() {
        // cm = [[1, 1], [0, 2]]
        let mut cm = ConfusionMatrix::new(2).unwrap();
        cm.accumulate(&[0, 1, 1, 1], &[0, 0, 1, 1]).unwrap();
        let m = cm.compute_metrics(&[0, 1]).unwrap();
        assert!((m.pa - 0.75).abs() < 1e-15);
        assert!((m.ma - 0.75).abs() < 1e-15);
        assert!((m.miou - (0.5 + 2.0 / 3.0) / 2.0).abs() < 1e-15);
        assert!((m.miou - 0.5833).abs() < 1e-4);
    }

    #[test]
    fn absent_class_excluded_from_means() {
        // class 2 is predicted once but never occurs in the ground truth
        let mut cm = ConfusionMatrix::new(3).unwrap();
        cm.accumulate(&[0, 1, 2], &[0, 1, 1]).unwrap();
        let with = cm.compute_metrics(&[0, 1, 2]).unwrap();
        let without = cm.compute_metrics(&[0, 1]).unwrap();
        assert_eq!(with, without);
    }

    #[test]
    fn undefined_subsets() {
        let mut cm = ConfusionMatrix::new(3).unwrap();
        cm.accumulate(&[0], &[0]).unwrap();
        assert!(matches!(
            cm.compute_metrics(&[]),
            Err(Error::UndefinedMetric(_))
        ));
        assert!(matches!(
            cm.compute_metrics(&[1, 2]),
            Err(Error::UndefinedMetric(_))
        ));
    }

    #[test]
    fn bad_labels_leave_matrix_untouched() {
        let mut cm = ConfusionMatrix::new(2).unwrap();
        let err = cm.accumulate(&[0, 1], &[0, 5]).unwrap_err();
        assert!(matches!(
            err,
            Error::LabelOutOfRange {
                label: 5,
                classes: 2
            }
        ));
        assert!(cm.accumulate(&[7], &[0]).is_err());
        assert_eq!(cm.total(), 0);
    }

    #[test]
    fn hiou_values() {
        assert!((hiou(71.6, 37.5).unwrap() - 49.2).abs() <= 0.05);
        assert!((hiou(72.0, 35.4).unwrap() - 47.5).abs() <= 0.05);
        assert!((hiou(0.4, 0.4).unwrap() - 0.4).abs() < 1e-15);
        assert_eq!(hiou(0.5, 0.0).unwrap(), 0.0);
        assert!(hiou(0.0, 0.0).is_err());
        assert!(hiou(-1.0, 2.0).is_err());
    }
}
