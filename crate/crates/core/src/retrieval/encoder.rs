use ndarray::Array2;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::ann::KeyStore;
use crate::dataspace::Dataset;
use crate::error::{RacError, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum EncoderSpec {
    Identity { dim: usize },
    RandomProjection { input_dim: usize, dim: usize, seed: u64 },
}

/// The frozen key encoder. Weights are fixed at construction.
#[derive(Clone, Debug, PartialEq)]
pub struct FrozenEncoder {
    spec: EncoderSpec,
    projection: Option<Array2<f64>>,
}

impl FrozenEncoder {
    pub fn identity(dim: usize) -> Self {
        FrozenEncoder {
            spec: EncoderSpec::Identity { dim },
            projection: None,
        }
    }

    /// Gaussian projection scaled by `1/sqrt(dim)`, roughly norm-preserving.
    pub fn random_projection(input_dim: usize, dim: usize, seed: u64) -> Result<Self> {
        Self::from_spec(EncoderSpec::RandomProjection { input_dim, dim, seed })
    }

    pub fn from_spec(spec: EncoderSpec) -> Result<Self> {
        let projection = match spec {
            EncoderSpec::Identity { dim } => {
                if dim == 0 {
                    return Err(RacError::config("encoder dimension must be positive"));
                }
                None
            }
            EncoderSpec::RandomProjection { input_dim, dim, seed } => {
                if input_dim == 0 || dim == 0 {
                    return Err(RacError::config("encoder dimensions must be positive"));
                }
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                let scale = 1.0 / (dim as f64).sqrt();
                Some(Array2::from_shape_simple_fn((input_dim, dim), || {
                    let z: f64 = StandardNormal.sample(&mut rng);
                    z * scale
                }))
            }
        };
        Ok(FrozenEncoder { spec, projection })
    }

    pub fn spec(&self) -> &EncoderSpec {
        &self.spec
    }

    pub fn input_dim(&self) -> usize {
        match self.spec {
            EncoderSpec::Identity { dim } => dim,
            EncoderSpec::RandomProjection { input_dim, .. } => input_dim,
        }
    }

    pub fn output_dim(&self) -> usize {
        match self.spec {
            EncoderSpec::Identity { dim } | EncoderSpec::RandomProjection { dim, .. } => dim,
        }
    }

    pub fn encode(&self, x: &[f64]) -> Result<Vec<f32>> {
        if x.len() != self.input_dim() {
            return Err(RacError::DimensionMismatch {
                expected: self.input_dim(),
                got: x.len(),
            });
        }
        Ok(match &self.projection {
            None => x.iter().map(|&v| v as f32).collect(),
            Some(p) => (0..p.ncols())
                .map(|j| x.iter().zip(p.column(j)).map(|(a, b)| a * b).sum::<f64>() as f32)
                .collect(),
        })
    }
}

/// One key per sample, ids `first_id..first_id + N`.
pub fn encode_keys(encoder: &FrozenEncoder, dataset: &Dataset, first_id: u64) -> Result<KeyStore> {
    if dataset.dim() != encoder.input_dim() {
        return Err(RacError::DimensionMismatch {
            expected: encoder.input_dim(),
            got: dataset.dim(),
        });
    }
    let mut keys = Vec::with_capacity(dataset.len() * encoder.output_dim());
    for s in dataset.samples() {
        keys.extend(encoder.encode(&s.features)?);
    }
    let ids = (first_id..first_id + dataset.len() as u64).collect();
    KeyStore::new(encoder.output_dim(), keys, ids)
}
