//! On-disk artifacts shared between commands.
//!
//! An index directory holds `index.racidx`, `texts.tsv` and
//! `retrieval.json`. A model directory holds `model.ckpt` and `model.json`.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use rac_core::ann::{load_index, save_index, IndexSpec};
use rac_core::autodiff::{load_checkpoint, save_checkpoint, OptimState};
use rac_core::dataspace::{read_ltds, read_names, ClassStats, Dataset, LabelVocab, Split, VocabMode};
use rac_core::fusion::{ModelSpec, RacModel, TrainConfig};
use rac_core::retrieval::{EncoderSpec, FixedEmbeddings, FrozenEncoder, RetrievalModule, TextStore, Tokenizer};
use rac_core::{RacError, Result};

pub const INDEX_FILE: &str = "index.racidx";
pub const TEXTS_FILE: &str = "texts.tsv";
pub const RETRIEVAL_FILE: &str = "retrieval.json";
pub const CHECKPOINT_FILE: &str = "model.ckpt";
pub const MODEL_FILE: &str = "model.json";

pub fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| RacError::io(path, e))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value).expect("serializable");
    write_text(path, &(text + "\n"))
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path, what: &'static str) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| RacError::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| RacError::format(what, e.to_string()))
}

pub fn read_dataset(path: &Path, split: Split) -> Result<Dataset> {
    read_ltds(path, split)
}

/// Class names from `<path>.names`, else `class_000`-style names.
pub fn dataset_names(path: &Path, classes: usize) -> Result<Vec<String>> {
    match read_names(path)? {
        Some(names) => Ok(LabelVocab::new(&VocabMode::Custom(names), classes)?.names().to_vec()),
        None => Ok(LabelVocab::new(&VocabMode::SingleToken, classes)?.names().to_vec()),
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SourceRecord {
    pub tag: String,
    pub path: PathBuf,
    pub first_id: u64,
    pub records: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RetrievalManifest {
    pub encoder: EncoderSpec,
    pub index: IndexSpec,
    pub sources: Vec<SourceRecord>,
}

pub fn save_retrieval(dir: &Path, module: &RetrievalModule, manifest: &RetrievalManifest) -> Result<()> {
    save_index(&module.index, &dir.join(INDEX_FILE))?;
    module.store.write(&dir.join(TEXTS_FILE))?;
    write_json(&dir.join(RETRIEVAL_FILE), manifest)
}

pub fn load_retrieval(dir: &Path) -> Result<(RetrievalModule, RetrievalManifest)> {
    let manifest: RetrievalManifest = read_json(&dir.join(RETRIEVAL_FILE), "retrieval manifest")?;
    let mut index = load_index(&dir.join(INDEX_FILE))?;
    index.set_ef_search(manifest.index.hnsw.ef_search);
    let store = TextStore::read(&dir.join(TEXTS_FILE))?;
    let encoder = FrozenEncoder::from_spec(manifest.encoder.clone())?;
    Ok((RetrievalModule::new(encoder, index, store)?, manifest))
}

/// Companion of a checkpoint: everything needed to rebuild the model.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelManifest {
    pub spec: ModelSpec,
    pub train: TrainConfig,
    pub train_stats: ClassStats,
    /// Tokenizer words in id order, starting at id 1.
    pub vocabulary: Vec<String>,
    pub index_dir: Option<PathBuf>,
    pub fixed_embeddings: Option<PathBuf>,
}

pub fn save_model(dir: &Path, model: &RacModel, optim: Option<&OptimState>, manifest: &ModelManifest) -> Result<()> {
    save_checkpoint(&dir.join(CHECKPOINT_FILE), &model.params(), optim)?;
    write_json(&dir.join(MODEL_FILE), manifest)
}

pub fn read_model_manifest(dir: &Path) -> Result<ModelManifest> {
    read_json(&dir.join(MODEL_FILE), "model manifest")
}

/// Rebuilds a model from a model directory. `tokenizer` must reproduce the
/// saved vocabulary when the model has a retrieval branch.
pub fn load_model(dir: &Path, manifest: &ModelManifest, tokenizer: Option<&Tokenizer>) -> Result<RacModel> {
    if manifest.spec.use_ret {
        let tok = tokenizer.ok_or_else(|| RacError::config("this model needs its retrieval index"))?;
        if tok.words() != manifest.vocabulary.as_slice() {
            return Err(RacError::config("index vocabulary differs from the one the model was trained with"));
        }
    }
    let fixed = match &manifest.fixed_embeddings {
        Some(p) if manifest.spec.use_ret => Some(FixedEmbeddings::read(p)?),
        _ => None,
    };
    let mut model = RacModel::new(manifest.spec.clone(), tokenizer, fixed.as_ref())?;
    let ckpt = load_checkpoint(&dir.join(CHECKPOINT_FILE))?;
    ckpt.restore(&mut model.params_mut())?;
    Ok(model)
}
