use serde::{Deserialize, Serialize};

use super::Dataset;
use crate::error::{RacError, Result};

/// Frequency bucket of a class, by its training count.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Bucket {
    Many,
    Med,
    Few,
}

impl Bucket {
    pub const ALL: [Bucket; 3] = [Bucket::Many, Bucket::Med, Bucket::Few];

    pub fn as_str(self) -> &'static str {
        match self {
            Bucket::Many => "many",
            Bucket::Med => "med",
            Bucket::Few => "few",
        }
    }
}

impl std::fmt::Display for Bucket {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Per-class training counts plus the few/medium/many thresholds.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassStats {
    pub counts: Vec<usize>,
    pub total: usize,
    /// Classes with fewer samples than this are "few".
    pub few_below: usize,
    /// Classes with at most this many samples (and not few) are "med".
    pub med_at_most: usize,
}

pub const DEFAULT_FEW_BELOW: usize = 20;
pub const DEFAULT_MED_AT_MOST: usize = 100;

impl ClassStats {
    /// Builds stats from raw counts with the default thresholds, scaled
    /// down linearly when the largest class has fewer than 1000 samples.
    pub fn from_counts(counts: Vec<usize>) -> Self {
        let total = counts.iter().sum();
        let n_max = counts.iter().copied().max().unwrap_or(0);
        let (few_below, med_at_most) = if n_max < 1000 {
            let scale = n_max as f64 / 1000.0;
            let few = ((DEFAULT_FEW_BELOW as f64 * scale).round() as usize).max(1);
            let med = ((DEFAULT_MED_AT_MOST as f64 * scale).round() as usize).max(few);
            (few, med)
        } else {
            (DEFAULT_FEW_BELOW, DEFAULT_MED_AT_MOST)
        };
        ClassStats {
            counts,
            total,
            few_below,
            med_at_most,
        }
    }

    pub fn with_thresholds(mut self, few_below: usize, med_at_most: usize) -> Result<Self> {
        if few_below > med_at_most {
            return Err(RacError::config(format!(
                "few threshold {few_below} exceeds medium threshold {med_at_most}"
            )));
        }
        self.few_below = few_below;
        self.med_at_most = med_at_most;
        Ok(self)
    }

    pub fn classes(&self) -> usize {
        self.counts.len()
    }

    pub fn bucket_of(&self, count: usize) -> Bucket {
        if count < self.few_below {
            Bucket::Few
        } else if count <= self.med_at_most {
            Bucket::Med
        } else {
            Bucket::Many
        }
    }

    /// Fails if any class has no training samples.
    pub fn require_nonzero(&self) -> Result<()> {
        match self.counts.iter().position(|&n| n == 0) {
            Some(c) => Err(RacError::input(format!("class {c} has zero training samples"))),
            None => Ok(()),
        }
    }
}

pub fn class_frequencies(dataset: &Dataset) -> ClassStats {
    let mut counts = vec![0usize; dataset.classes()];
    for s in dataset.samples() {
        counts[s.label] += 1;
    }
    ClassStats::from_counts(counts)
}

pub fn bucketize(stats: &ClassStats) -> Result<Vec<Bucket>> {
    if stats.few_below > stats.med_at_most {
        return Err(RacError::config(format!(
            "few threshold {} exceeds medium threshold {}",
            stats.few_below, stats.med_at_most
        )));
    }
    Ok(stats.counts.iter().map(|&n| stats.bucket_of(n)).collect())
}
