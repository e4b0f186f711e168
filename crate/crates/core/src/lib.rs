//! Retrieval augmented classification for long-tail data.
//!
//! A two-branch classifier: a trainable base head on the input features,
//! fused with a retrieval branch that looks up the nearest stored keys in
//! an approximate k-NN index, assembles their label text, and classifies
//! that text with a small bag-of-tokens encoder.
//!
//! - [`dataspace`]: synthetic long-tail datasets, LTDS files, class statistics
//! - [`ann`]: exact and HNSW indexes, recall and timing, index files
//! - [`losses`]: re-weighted, logit-adjusted cross-entropy family and metrics
//! - [`autodiff`]: layers with hand-written backward passes, optimizers, gradient checking
//! - [`retrieval`]: key encoder, tokenizer, text assembly, text encoders, k-NN baseline
//! - [`fusion`]: the fused model, training, evaluation and ablation sweeps

pub mod ann;
pub mod autodiff;
pub mod dataspace;
pub mod error;
pub mod fusion;
pub mod losses;
pub mod retrieval;

pub use error::{RacError, Result};
