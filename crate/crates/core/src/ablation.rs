//! Zero-replacement feature ablation.
//!
//! A mask zeroes selected engineered features at the model input during
//! inference only. The trained weights are never touched.

use std::fmt;
use std::str::FromStr;

use crate::corpus::Corpus;
use crate::evaluation::{evaluate_corpus, EvalError, EvalReport};
use crate::features::{FeatureVector, FEATURE_NAMES};
use crate::models::{predict, Model, ModelError};
use crate::store::EmbeddingStore;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash)]
pub struct AblationMask {
    pub zero_tok_len: bool,
    pub zero_word_char_len: bool,
    pub zero_rel_len: bool,
}

impl AblationMask {
    pub const NONE: AblationMask = AblationMask::from_bits(0);

    /// Bit 0 is `tok_len`, bit 1 `word_char_len`, bit 2 `rel_len`.
    pub const fn from_bits(bits: u8) -> Self {
        Self {
            zero_tok_len: bits & 1 != 0,
            zero_word_char_len: bits & 2 != 0,
            zero_rel_len: bits & 4 != 0,
        }
    }

    pub fn bits(self) -> u8 {
        self.zero_tok_len as u8 | (self.zero_word_char_len as u8) << 1 | (self.zero_rel_len as u8) << 2
    }

    pub fn flags(self) -> [bool; 3] {
        [self.zero_tok_len, self.zero_word_char_len, self.zero_rel_len]
    }

    pub fn is_identity(self) -> bool {
        self.bits() == 0
    }

    /// The seven non-empty masks: singletons, then pairs, then all three.
    pub fn sweep_order() -> [AblationMask; 7] {
        [1, 2, 4, 3, 5, 6, 7].map(Self::from_bits)
    }
}

impl fmt::Display for AblationMask {
    /// `none` for the identity, otherwise e.g. `-tok_len,rel_len`.
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.is_identity() {
            return f.write_str("none");
        }
        let names: Vec<&str> = self
            .flags()
            .iter()
            .zip(FEATURE_NAMES)
            .filter(|(on, _)| **on)
            .map(|(_, n)| n)
            .collect();
        write!(f, "-{}", names.join(","))
    }
}

impl FromStr for AblationMask {
    type Err = String;

    /// Accepts `none`, or a comma list of feature names with an optional leading `-`.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let s = s.trim();
        if s == "none" || s.is_empty() {
            return Ok(Self::NONE);
        }
        let mut bits = 0u8;
        for part in s.trim_start_matches('-').split(',') {
            let part = part.trim();
            let idx = FEATURE_NAMES
                .iter()
                .position(|n| *n == part)
                .ok_or_else(|| format!("unknown feature `{part}` (tok_len, word_char_len, rel_len)"))?;
            bits |= 1 << idx;
        }
        Ok(Self::from_bits(bits))
    }
}

/// Model input for `features` with masked components replaced by `0.0`.
pub fn apply_mask(features: &FeatureVector, mask: AblationMask) -> [f64; 3] {
    let mut x = features.to_array();
    for (v, zero) in x.iter_mut().zip(mask.flags()) {
        if zero {
            *v = 0.0;
        }
    }
    x
}

#[derive(Debug, thiserror::Error)]
pub enum AblationError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Eval(#[from] EvalError),
}

#[derive(Debug, Clone, PartialEq)]
pub struct AblationRow {
    pub mask: AblationMask,
    pub report: EvalReport,
}

/// The unablated reference row followed by the seven ablations, in table order.
pub fn ablation_sweep(
    model: &Model,
    corpus: &Corpus,
    store: &EmbeddingStore,
) -> Result<Vec<AblationRow>, AblationError> {
    std::iter::once(AblationMask::NONE)
        .chain(AblationMask::sweep_order())
        .map(|mask| {
            let preds = predict(model, corpus, Some(store), mask)?;
            Ok(AblationRow {
                mask,
                report: evaluate_corpus(&preds, corpus)?,
            })
        })
        .collect()
}

pub const CSV_HEADER: [&str; 6] = ["mask", "ffd_avg", "ffd_std", "trt_avg", "trt_std", "overall"];

pub fn write_ablation_csv<W: std::io::Write>(writer: W, rows: &[AblationRow]) -> csv::Result<()> {
    let mut wtr = csv::Writer::from_writer(writer);
    wtr.write_record(CSV_HEADER)?;
    for row in rows {
        let r = &row.report;
        let cells = [r.mae[0], r.mae[1], r.mae[2], r.mae[3], r.overall].map(|v| v.to_string());
        wtr.write_record(std::iter::once(row.mask.to_string()).chain(cells))?;
    }
    wtr.flush()?;
    Ok(())
}
