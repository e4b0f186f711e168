//! Labeled feature datasets: synthetic long-tail generation, LTDS file
//! ingestion, class statistics and frequency buckets.

mod generate;
mod ltds;
mod names;
mod stats;

pub use generate::{
    class_counts, generate_auxiliary, generate_longtail, make_balanced_testset, AuxConfig,
    ClassGeometry, GenConfig, Profile,
};
pub use ltds::{read_ltds, read_names, write_ltds, write_names};
pub use names::{render_label_text, LabelVocab, VocabMode};
pub use stats::{bucketize, class_frequencies, Bucket, ClassStats};

use serde::{Deserialize, Serialize};

use crate::error::{RacError, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    pub features: Vec<f64>,
    pub label: usize,
}

/// A set of labeled samples with a fixed class count and feature dimension.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    samples: Vec<Sample>,
    classes: usize,
    dim: usize,
    split: Split,
}

impl Dataset {
    pub fn new(samples: Vec<Sample>, classes: usize, dim: usize, split: Split) -> Result<Self> {
        if samples.is_empty() {
            return Err(RacError::input("dataset must contain at least one sample"));
        }
        if classes == 0 || dim == 0 {
            return Err(RacError::input("class count and dimension must be positive"));
        }
        for (i, s) in samples.iter().enumerate() {
            if s.features.len() != dim {
                return Err(RacError::DimensionMismatch {
                    expected: dim,
                    got: s.features.len(),
                });
            }
            if s.label >= classes {
                return Err(RacError::input(format!(
                    "sample {i} has label {} but the dataset declares {classes} classes",
                    s.label
                )));
            }
        }
        Ok(Dataset {
            samples,
            classes,
            dim,
            split,
        })
    }

    pub fn samples(&self) -> &[Sample] {
        &self.samples
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn split(&self) -> Split {
        self.split
    }

    pub fn labels(&self) -> Vec<usize> {
        self.samples.iter().map(|s| s.label).collect()
    }

    /// Row-major feature matrix, one row per sample.
    pub fn feature_matrix(&self) -> ndarray::Array2<f64> {
        let flat: Vec<f64> = self
            .samples
            .iter()
            .flat_map(|s| s.features.iter().copied())
            .collect();
        ndarray::Array2::from_shape_vec((self.len(), self.dim), flat)
            .expect("rows validated at construction")
    }

    /// Keeps the samples at `indices`, in the given order.
    pub fn subset(&self, indices: &[usize]) -> Result<Dataset> {
        let samples = indices
            .iter()
            .map(|&i| {
                self.samples
                    .get(i)
                    .cloned()
                    .ok_or_else(|| RacError::input(format!("sample index {i} out of range")))
            })
            .collect::<Result<Vec<_>>>()?;
        Dataset::new(samples, self.classes, self.dim, self.split)
    }
}
