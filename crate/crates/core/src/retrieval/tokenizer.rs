use std::collections::HashMap;

use crate::autodiff::PAD;

pub const MAX_TOKENS: usize = 76;

/// Lowercases and splits on anything that is not alphanumeric or `_`.
pub fn split_words(text: &str) -> Vec<String> {
    text.split(|c: char| !(c.is_alphanumeric() || c == '_'))
        .filter(|w| !w.is_empty())
        .map(str::to_lowercase)
        .collect()
}

/// Word-level vocabulary. Ids start at 1; 0 is padding and also stands in
/// for words first seen after the vocabulary was frozen.
#[derive(Clone, Debug, PartialEq)]
pub struct Tokenizer {
    ids: HashMap<String, u32>,
    words: Vec<String>,
    frozen: bool,
    max_tokens: usize,
}

impl Default for Tokenizer {
    fn default() -> Self {
        Tokenizer::new(MAX_TOKENS)
    }
}

impl Tokenizer {
    pub fn new(max_tokens: usize) -> Self {
        Tokenizer {
            ids: HashMap::new(),
            words: Vec::new(),
            frozen: false,
            max_tokens,
        }
    }

    /// Builds a frozen vocabulary from `texts`, ids in order of first sight.
    pub fn fit<'a>(texts: impl IntoIterator<Item = &'a str>, max_tokens: usize) -> Self {
        let mut tok = Tokenizer::new(max_tokens);
        for t in texts {
            tok.grow(t);
        }
        tok.freeze();
        tok
    }

    pub fn grow(&mut self, text: &str) {
        assert!(!self.frozen, "vocabulary is frozen");
        for w in split_words(text) {
            if !self.ids.contains_key(&w) {
                self.words.push(w.clone());
                self.ids.insert(w, self.words.len() as u32);
            }
        }
    }

    pub fn freeze(&mut self) {
        self.frozen = true;
    }

    /// Number of ids including padding.
    pub fn vocab_size(&self) -> usize {
        self.words.len() + 1
    }

    pub fn max_tokens(&self) -> usize {
        self.max_tokens
    }

    pub fn words(&self) -> &[String] {
        &self.words
    }

    pub fn id(&self, word: &str) -> u32 {
        self.ids.get(word).copied().unwrap_or(PAD)
    }

    /// Token ids of the first `max_tokens` words.
    pub fn encode(&self, text: &str) -> Vec<u32> {
        split_words(text)
            .iter()
            .take(self.max_tokens)
            .map(|w| self.id(w))
            .collect()
    }

    pub fn decode(&self, ids: &[u32]) -> Vec<&str> {
        ids.iter()
            .filter(|&&t| t != PAD)
            .filter_map(|&t| self.words.get(t as usize - 1).map(String::as_str))
            .collect()
    }
}
