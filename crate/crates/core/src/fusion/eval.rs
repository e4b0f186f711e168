use ndarray::ArrayView2;
use serde::{Deserialize, Serialize};

use crate::dataspace::{bucketize, Bucket, ClassStats};
use crate::error::{RacError, Result};
use crate::losses::{balanced_error, bucket_accuracy, per_class_accuracy, predict, topk_accuracy, Branch, BucketAccuracy};

/// Moving-average window over classes.
pub const MOVING_AVERAGE_WINDOW: usize = 20;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BranchMetrics {
    pub top1: f64,
    pub top5: f64,
    pub balanced_error: f64,
    pub buckets: BucketAccuracy,
    pub per_class: Vec<Option<f64>>,
    pub moving_average: Vec<Option<f64>>,
}

impl BranchMetrics {
    pub fn compute(logits: ArrayView2<'_, f64>, labels: &[usize], buckets: &[Bucket]) -> Result<Self> {
        let classes = logits.ncols();
        let preds = predict(logits);
        let per_class = per_class_accuracy(&preds, labels, classes);
        Ok(BranchMetrics {
            top1: topk_accuracy(logits, labels, 1)?,
            top5: topk_accuracy(logits, labels, 5.min(classes))?,
            balanced_error: balanced_error(&preds, labels, classes)?.value,
            buckets: bucket_accuracy(&per_class, buckets)?,
            moving_average: moving_average(&per_class, MOVING_AVERAGE_WINDOW),
            per_class,
        })
    }
}

/// Centered moving average over classes in index order, window truncated at
/// both ends; classes without a value are skipped.
pub fn moving_average(values: &[Option<f64>], window: usize) -> Vec<Option<f64>> {
    let half = window / 2;
    (0..values.len())
        .map(|c| {
            let lo = c.saturating_sub(half);
            let hi = (c + window - half).min(values.len());
            let vals: Vec<f64> = values[lo..hi].iter().flatten().copied().collect();
            (!vals.is_empty()).then(|| vals.iter().sum::<f64>() / vals.len() as f64)
        })
        .collect()
}

/// Per-branch and fused metrics on one evaluation set. Buckets come from
/// the training counts.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub counts: Vec<usize>,
    pub buckets: Vec<Bucket>,
    pub loss: f64,
    pub output: Branch,
    pub base: Option<BranchMetrics>,
    pub ret: Option<BranchMetrics>,
    pub fused: Option<BranchMetrics>,
}

impl EvalReport {
    pub fn new(
        train_stats: &ClassStats,
        labels: &[usize],
        loss: f64,
        output: Branch,
        logits: [(Branch, Option<ArrayView2<'_, f64>>); 3],
    ) -> Result<Self> {
        let buckets = bucketize(train_stats)?;
        let mut report = EvalReport {
            counts: train_stats.counts.clone(),
            buckets: buckets.clone(),
            loss,
            output,
            base: None,
            ret: None,
            fused: None,
        };
        for (branch, values) in logits {
            let Some(values) = values else { continue };
            if values.ncols() != buckets.len() {
                return Err(RacError::DimensionMismatch {
                    expected: buckets.len(),
                    got: values.ncols(),
                });
            }
            let m = Some(BranchMetrics::compute(values, labels, &buckets)?);
            match branch {
                Branch::Base => report.base = m,
                Branch::Ret => report.ret = m,
                Branch::Fused => report.fused = m,
            }
        }
        Ok(report)
    }

    pub fn branch(&self, branch: Branch) -> Option<&BranchMetrics> {
        match branch {
            Branch::Base => self.base.as_ref(),
            Branch::Ret => self.ret.as_ref(),
            Branch::Fused => self.fused.as_ref(),
        }
    }

    /// Metrics of the trained output (fused, or the only branch).
    pub fn primary(&self) -> &BranchMetrics {
        self.branch(self.output).expect("output branch evaluated")
    }

    pub fn per_class_csv(&self) -> String {
        let mut out = String::from("class_id,count,bucket,acc_base,acc_ret,acc_fused\n");
        let cell = |b: Branch, c: usize| {
            self.branch(b)
                .and_then(|m| m.per_class[c])
                .map(|a| format!("{a}"))
                .unwrap_or_default()
        };
        for c in 0..self.counts.len() {
            out.push_str(&format!(
                "{c},{},{},{},{},{}\n",
                self.counts[c],
                self.buckets[c].as_str(),
                cell(Branch::Base, c),
                cell(Branch::Ret, c),
                cell(Branch::Fused, c),
            ));
        }
        out
    }

    pub fn moving_average_csv(&self) -> String {
        let mut out = String::from("class_id,ma_base,ma_ret,ma_fused\n");
        let cell = |b: Branch, c: usize| {
            self.branch(b)
                .and_then(|m| m.moving_average[c])
                .map(|a| format!("{a}"))
                .unwrap_or_default()
        };
        for c in 0..self.counts.len() {
            out.push_str(&format!(
                "{c},{},{},{}\n",
                cell(Branch::Base, c),
                cell(Branch::Ret, c),
                cell(Branch::Fused, c)
            ));
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn moving_average_window() {
        let v: Vec<Option<f64>> = (0..5).map(|i| Some(i as f64)).collect();
        let ma = moving_average(&v, 2);
        assert_eq!(ma, vec![Some(0.0), Some(0.5), Some(1.5), Some(2.5), Some(3.5)]);
        assert_eq!(moving_average(&[None, Some(1.0)], 20), vec![Some(1.0), Some(1.0)]);
        assert_eq!(moving_average(&v, 20).len(), 5);
    }
}
