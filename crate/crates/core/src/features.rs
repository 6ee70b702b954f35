//! The three engineered length features of a token.
//!
//! Features are fed to the models raw. Ablation replaces a feature by `0.0`,
//! which none of the raw values can take, so "ablated" stays distinguishable
//! from "sentence-initial" (`rel_len = 1.0`).

use thiserror::Error;

use crate::corpus::{SentenceGroup, TokenRecord};
use crate::store::{EmbeddingStore, StoreError, TokenKey};

pub const FEATURE_NAMES: [&str; 3] = ["tok_len", "word_char_len", "rel_len"];

#[derive(Debug, Error)]
pub enum FeatureError {
    #[error("empty word")]
    EmptyWord,
    #[error(transparent)]
    Store(#[from] StoreError),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FeatureVector {
    /// Subword pieces the encoder's tokenizer produced for the word.
    pub tok_len: u32,
    /// UTF-8 byte length of the word.
    pub word_char_len: u32,
    /// `word_char_len` relative to the preceding word in the sentence.
    pub rel_len: f64,
}

impl FeatureVector {
    pub fn to_array(self) -> [f64; 3] {
        [self.tok_len as f64, self.word_char_len as f64, self.rel_len]
    }
}

/// UTF-8 byte count, not scalar-value count: "мир" is 6, "你好" is 6.
pub fn word_char_len(word: &str) -> Result<u32, FeatureError> {
    if word.is_empty() {
        return Err(FeatureError::EmptyWord);
    }
    Ok(word.len() as u32)
}

pub fn rel_len(current: &TokenRecord, previous: Option<&TokenRecord>) -> Result<f64, FeatureError> {
    let cur = word_char_len(&current.word)?;
    match previous {
        None => Ok(1.0),
        Some(prev) => Ok(cur as f64 / word_char_len(&prev.word)? as f64),
    }
}

pub fn tok_len(store: &EmbeddingStore, key: &TokenKey) -> Result<u32, FeatureError> {
    Ok(store.lookup(key)?.tok_len as u32)
}

/// Features for every token of one sentence, `rel_len` chained left to right.
pub fn featurize_sentence(
    group: &SentenceGroup<'_>,
    store: &EmbeddingStore,
) -> Result<Vec<FeatureVector>, FeatureError> {
    let mut out = Vec::with_capacity(group.len());
    let mut previous: Option<&TokenRecord> = None;
    for &rec in group {
        let entry = store.lookup_record(rec)?;
        out.push(FeatureVector {
            tok_len: entry.tok_len as u32,
            word_char_len: word_char_len(&rec.word)?,
            rel_len: rel_len(rec, previous)?,
        });
        previous = Some(rec);
    }
    Ok(out)
}

/// Features for every corpus record, aligned with `corpus.records()`.
pub fn featurize_corpus(
    corpus: &crate::corpus::Corpus,
    store: &EmbeddingStore,
) -> Result<Vec<FeatureVector>, FeatureError> {
    let index: std::collections::HashMap<(&str, u32, u32), usize> = corpus
        .records()
        .iter()
        .enumerate()
        .map(|(i, r)| ((r.dataset.as_str(), r.sentence_id, r.word_id), i))
        .collect();
    let mut out = vec![None; corpus.len()];
    for group in crate::corpus::group_sentences(corpus) {
        let feats = featurize_sentence(&group, store)?;
        for (rec, f) in group.iter().zip(feats) {
            out[index[&(rec.dataset.as_str(), rec.sentence_id, rec.word_id)]] = Some(f);
        }
    }
    Ok(out.into_iter().map(|f| f.expect("every record lies in one group")).collect())
}
