//! Confusion-matrix bookkeeping and mean intersection-over-union.

use crate::{Error, Result};

pub const IGNORE_CLASS: usize = usize::MAX;

#[derive(Debug, Clone)]
pub struct ConfusionMatrix {
    pub k: usize,
    /// counts[true * k + pred]
    pub counts: Vec<u64>,
}

impl ConfusionMatrix {
    pub fn new(k: usize) -> Self {
        Self { k, counts: vec![0; k * k] }
    }

    pub fn update(&mut self, truth: &[usize], pred: &[usize]) -> Result<()> {
        if truth.len() != pred.len() {
            return Err(Error::InvalidArgument {
                op: "confusion_update",
                msg: format!("length mismatch {} vs {}", truth.len(), pred.len()),
            });
        }
        for (&t, &p) in truth.iter().zip(pred) {
            if t == IGNORE_CLASS {
                continue;
            }
            if t >= self.k || p >= self.k {
                return Err(Error::InvalidArgument {
                    op: "confusion_update",
                    msg: format!("class out of range: true {} pred {} (k={})", t, p, self.k),
                });
            }
            self.counts[t * self.k + p] += 1;
        }
        Ok(())
    }

    /// Per-class IoU = tp / (tp + fp + fn); classes absent from both truth
    /// and prediction are excluded from the mean.
    pub fn miou(&self) -> f64 {
        self.miou_ignoring(&[]).expect("no classes ignored")
    }

    /// mIoU over classes not listed in `ignore`.
    pub fn miou_ignoring(&self, ignore: &[usize]) -> Result<f64> {
        if (0..self.k).all(|c| ignore.contains(&c)) {
            return Err(Error::InvalidArgument {
                op: "miou",
                msg: "all classes ignored".into(),
            });
        }
        let mut sum = 0.0;
        let mut present = 0usize;
        for c in 0..self.k {
            if ignore.contains(&c) {
                continue;
            }
            let tp = self.counts[c * self.k + c];
            let row: u64 = (0..self.k).map(|j| self.counts[c * self.k + j]).sum();
            let col: u64 = (0..self.k).map(|i| self.counts[i * self.k + c]).sum();
            let denom = row + col - tp;
            if denom == 0 {
                continue;
            }
            sum += tp as f64 / denom as f64;
            present += 1;
        }
        Ok(if present == 0 {
            0.0
        } else {
            sum / present as f64
        })
    }
}

/// One serialized training-progress record (JSON lines).
#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct MetricRecord {
    pub step: usize,
    pub loss: f64,
    pub miou: Option<f64>,
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn worked_example() {
        // [[3,1],[1,3]]: IoU per class = 3/5, mean 0.6
        let mut cm = ConfusionMatrix::new(2);
        cm.counts = vec![3, 1, 1, 3];
        assert!((cm.miou() - 0.6).abs() < 1e-12);
    }

    #[test]
    fn perfect_prediction_is_one() {
        let mut cm = ConfusionMatrix::new(3);
        cm.update(&[0, 1, 2, 2], &[0, 1, 2, 2]).unwrap();
        assert_eq!(cm.miou(), 1.0);
    }

    #[test]
    fn absent_class_excluded() {
        let mut cm = ConfusionMatrix::new(3);
        cm.update(&[0, 0, 1], &[0, 0, 1]).unwrap();
        // class 2 never appears; mean over classes 0 and 1 only
        assert_eq!(cm.miou(), 1.0);
    }

    #[test]
    fn ignore_class_skipped() {
        let mut cm = ConfusionMatrix::new(2);
        cm.update(&[0, IGNORE_CLASS], &[1, 1]).unwrap();
        assert_eq!(cm.counts.iter().sum::<u64>(), 1);
    }

    #[test]
    fn ignore_set_restricts_the_mean() {
        let mut cm = ConfusionMatrix::new(3);
        // class 0 perfect, class 1 half right (pred as 2), class 2 unseen
        cm.update(&[0, 0, 1, 1], &[0, 0, 1, 2]).unwrap();
        let full = cm.miou_ignoring(&[]).unwrap();
        assert!(full < 1.0);
        assert_eq!(cm.miou_ignoring(&[1, 2]).unwrap(), 1.0);
        assert!(cm.miou_ignoring(&[0, 1, 2]).is_err());
    }

    #[test]
    fn rejects_out_of_range() {
        let mut cm = ConfusionMatrix::new(2);
        assert!(cm.update(&[2], &[0]).is_err());
        assert!(cm.update(&[0], &[5]).is_err());
    }
}
