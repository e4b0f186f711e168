use std::collections::HashSet;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{RacError, Result};

const ONSETS: &[&str] = &[
    "b", "d", "f", "g", "k", "l", "m", "n", "p", "r", "s", "t", "v", "z", "br", "kr", "st", "tr",
];
const VOWELS: &[&str] = &["a", "e", "i", "o", "u", "ai", "ou"];

/// How class ids are turned into label text.
#[derive(Clone, Debug, PartialEq)]
pub enum VocabMode {
    /// `class_007`.
    SingleToken,
    /// 2 to 4 pseudo-words per class, drawn from `seed`. No word is shared
    /// between two classes of the same vocabulary.
    MultiToken { seed: u64 },
    /// Names given explicitly, one per class.
    Custom(Vec<String>),
}

/// Rendered label text for every class of a dataset.
#[derive(Clone, Debug, PartialEq)]
pub struct LabelVocab {
    names: Vec<String>,
}

impl LabelVocab {
    pub fn new(mode: &VocabMode, classes: usize) -> Result<Self> {
        let names = match mode {
            VocabMode::SingleToken => (0..classes).map(|c| format!("class_{c:03}")).collect(),
            VocabMode::MultiToken { seed } => multi_token_names(*seed, classes),
            VocabMode::Custom(names) => {
                if names.len() < classes {
                    return Err(RacError::input(format!(
                        "missing custom name for class {} ({} names for {classes} classes)",
                        names.len(),
                        names.len()
                    )));
                }
                names[..classes].to_vec()
            }
        };
        Ok(LabelVocab { names })
    }

    pub fn name(&self, class_id: usize) -> Result<&str> {
        self.names
            .get(class_id)
            .map(String::as_str)
            .ok_or_else(|| RacError::input(format!("no label text for class {class_id}")))
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn classes(&self) -> usize {
        self.names.len()
    }
}

/// Renders a single class label. Builds the whole vocabulary, so prefer
/// [`LabelVocab`] when rendering many labels.
pub fn render_label_text(class_id: usize, classes: usize, mode: &VocabMode) -> Result<String> {
    if class_id >= classes {
        return Err(RacError::input(format!(
            "class {class_id} out of range for {classes} classes"
        )));
    }
    LabelVocab::new(mode, classes)?.name(class_id).map(str::to_owned)
}

fn pseudo_word(rng: &mut ChaCha8Rng) -> String {
    let syllables = rng.random_range(2..=3);
    (0..syllables)
        .map(|_| {
            let onset = ONSETS[rng.random_range(0..ONSETS.len())];
            let vowel = VOWELS[rng.random_range(0..VOWELS.len())];
            format!("{onset}{vowel}")
        })
        .collect()
}

fn multi_token_names(seed: u64, classes: usize) -> Vec<String> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut used = HashSet::new();
    (0..classes)
        .map(|_| {
            let words = rng.random_range(2..=4);
            let mut name = Vec::with_capacity(words);
            while name.len() < words {
                let w = pseudo_word(&mut rng);
                if used.insert(w.clone()) {
                    name.push(w);
                }
            }
            name.join(" ")
        })
        .collect()
}
