//! Token-level eye-tracking corpora in the canonical CSV layout.
//!
//! One row per word:
//!
//! ```text
//! dataset,language,sentence_id,word_id,word,FFDAvg,FFDStd,TRTAvg,TRTStd
//! ```
//!
//! Target cells are either all present or all empty. Empty cells mark an
//! unlabeled (test) token; `0` is a legal scaled value and never means absent.

use std::collections::{HashMap, HashSet};
use std::fmt;
use std::io::{Read, Write};
use std::path::Path;
use std::str::FromStr;

use thiserror::Error;

pub const HEADER: [&str; 9] = [
    "dataset",
    "language",
    "sentence_id",
    "word_id",
    "word",
    "FFDAvg",
    "FFDStd",
    "TRTAvg",
    "TRTStd",
];

/// Upper bound of the scaled target range.
pub const TARGET_MAX: f64 = 100.0;

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("line {line}: malformed row: {reason}")]
    MalformedRow { line: u64, reason: String },
    #[error("line {line}: {column}={value} outside [0, 100]")]
    TargetOutOfRange {
        line: u64,
        column: &'static str,
        value: f64,
    },
    #[error("line {line}: {split} split requires targets")]
    MissingTargets { line: u64, split: Split },
    #[error("line {line}: duplicate key ({dataset}, {sentence_id}, {word_id})")]
    DuplicateKey {
        line: u64,
        dataset: String,
        sentence_id: u32,
        word_id: u32,
    },
    #[error("sentence ({dataset}, {sentence_id}): word ids are not contiguous from 0")]
    NonContiguousWordIds { dataset: String, sentence_id: u32 },
    #[error("bad header: expected `{}`", HEADER.join(","))]
    BadHeader,
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Split {
    Train,
    Dev,
    Test,
}

impl Split {
    pub fn requires_targets(self) -> bool {
        matches!(self, Split::Train | Split::Dev)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Dev => "dev",
            Split::Test => "test",
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Split {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "train" => Ok(Split::Train),
            "dev" => Ok(Split::Dev),
            "test" => Ok(Split::Test),
            other => Err(format!("unknown split `{other}` (train, dev, test)")),
        }
    }
}

/// The four eye-tracking targets, in scaled units.
///
/// Component order is fixed everywhere in the crate: FFDAvg, FFDStd, TRTAvg, TRTStd.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TargetVector {
    pub ffd_avg: f64,
    pub ffd_std: f64,
    pub trt_avg: f64,
    pub trt_std: f64,
}

impl TargetVector {
    pub const NAMES: [&'static str; 4] = ["FFDAvg", "FFDStd", "TRTAvg", "TRTStd"];

    /// Builds a target vector, rejecting any component outside `[0, 100]`.
    pub fn new(values: [f64; 4]) -> Result<Self, (usize, f64)> {
        for (i, &v) in values.iter().enumerate() {
            if !(0.0..=TARGET_MAX).contains(&v) {
                return Err((i, v));
            }
        }
        Ok(Self::from_array_unchecked(values))
    }

    pub(crate) fn from_array_unchecked(values: [f64; 4]) -> Self {
        Self {
            ffd_avg: values[0],
            ffd_std: values[1],
            trt_avg: values[2],
            trt_std: values[3],
        }
    }

    pub fn to_array(self) -> [f64; 4] {
        [self.ffd_avg, self.ffd_std, self.trt_avg, self.trt_std]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TokenRecord {
    pub dataset: String,
    pub language: String,
    pub sentence_id: u32,
    pub word_id: u32,
    pub word: String,
    pub targets: Option<TargetVector>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Corpus {
    records: Vec<TokenRecord>,
    split: Split,
}

impl Corpus {
    /// Validates `records` against every corpus invariant.
    ///
    /// Errors number records as file lines would, with the header on line 1.
    pub fn new(records: Vec<TokenRecord>, split: Split) -> Result<Self, CorpusError> {
        let lines: Vec<u64> = (0..records.len() as u64).map(|i| i + 2).collect();
        Self::validated(records, split, &lines)
    }

    fn validated(
        records: Vec<TokenRecord>,
        split: Split,
        lines: &[u64],
    ) -> Result<Self, CorpusError> {
        let mut seen = HashSet::with_capacity(records.len());
        let mut sentence_words: HashMap<(&str, u32), Vec<u32>> = HashMap::new();
        for (i, rec) in records.iter().enumerate() {
            let line = lines[i];
            if rec.word.trim().is_empty() {
                return Err(CorpusError::MalformedRow {
                    line,
                    reason: "empty word".into(),
                });
            }
            match rec.targets {
                None if split.requires_targets() => {
                    return Err(CorpusError::MissingTargets { line, split })
                }
                Some(t) => {
                    if let Err((col, value)) = TargetVector::new(t.to_array()) {
                        return Err(CorpusError::TargetOutOfRange {
                            line,
                            column: TargetVector::NAMES[col],
                            value,
                        });
                    }
                }
                None => {}
            }
            if !seen.insert((rec.dataset.as_str(), rec.sentence_id, rec.word_id)) {
                return Err(CorpusError::DuplicateKey {
                    line,
                    dataset: rec.dataset.clone(),
                    sentence_id: rec.sentence_id,
                    word_id: rec.word_id,
                });
            }
            sentence_words
                .entry((rec.dataset.as_str(), rec.sentence_id))
                .or_default()
                .push(rec.word_id);
        }
        // Reported in first-appearance order so the error is stable across runs.
        let mut order: Vec<(&str, u32)> = Vec::new();
        let mut listed = HashSet::new();
        for rec in &records {
            let key = (rec.dataset.as_str(), rec.sentence_id);
            if listed.insert(key) {
                order.push(key);
            }
        }
        for key in order {
            let ids = &sentence_words[&key];
            // ids are unique, so contiguity from 0 means max == len - 1
            let max = ids.iter().copied().max().unwrap_or(0);
            if max as usize != ids.len() - 1 {
                return Err(CorpusError::NonContiguousWordIds {
                    dataset: key.0.to_string(),
                    sentence_id: key.1,
                });
            }
        }
        Ok(Self { records, split })
    }

    pub fn records(&self) -> &[TokenRecord] {
        &self.records
    }

    pub fn split(&self) -> Split {
        self.split
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// Gold targets for every record, or `None` if any record is unlabeled.
    pub fn targets(&self) -> Option<Vec<TargetVector>> {
        self.records.iter().map(|r| r.targets).collect()
    }

    /// Distinct dataset names in first-appearance order.
    pub fn dataset_names(&self) -> Vec<String> {
        let mut seen = HashSet::new();
        self.records
            .iter()
            .filter(|r| seen.insert(r.dataset.as_str()))
            .map(|r| r.dataset.clone())
            .collect()
    }
}

/// A sentence: records sharing `(dataset, sentence_id)`, ordered by `word_id`.
pub type SentenceGroup<'a> = Vec<&'a TokenRecord>;

/// Splits a corpus into sentences, in order of each sentence's first record.
pub fn group_sentences(corpus: &Corpus) -> Vec<SentenceGroup<'_>> {
    let mut index: HashMap<(&str, u32), usize> = HashMap::new();
    let mut groups: Vec<SentenceGroup<'_>> = Vec::new();
    for rec in corpus.records() {
        let slot = *index
            .entry((rec.dataset.as_str(), rec.sentence_id))
            .or_insert_with(|| {
                groups.push(Vec::new());
                groups.len() - 1
            });
        groups[slot].push(rec);
    }
    for g in &mut groups {
        g.sort_by_key(|r| r.word_id);
    }
    groups
}

pub fn parse_corpus(path: impl AsRef<Path>, split: Split) -> Result<Corpus, CorpusError> {
    let file = std::fs::File::open(path)?;
    read_corpus(file, split)
}

pub fn read_corpus<R: Read>(reader: R, split: Split) -> Result<Corpus, CorpusError> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .from_reader(reader);
    let header = rdr.headers()?.clone();
    if header.len() != HEADER.len() || header.iter().zip(HEADER).any(|(a, b)| a != b) {
        return Err(CorpusError::BadHeader);
    }

    let mut records = Vec::new();
    let mut lines = Vec::new();
    for row in rdr.records() {
        let row = row?;
        let line = row.position().map_or(0, |p| p.line());
        records.push(parse_row(&row, line)?);
        lines.push(line);
    }
    Corpus::validated(records, split, &lines)
}

fn parse_row(row: &csv::StringRecord, line: u64) -> Result<TokenRecord, CorpusError> {
    let malformed = |reason: String| CorpusError::MalformedRow { line, reason };
    if row.len() != HEADER.len() {
        return Err(malformed(format!(
            "expected {} fields, found {}",
            HEADER.len(),
            row.len()
        )));
    }
    let parse_id = |idx: usize| -> Result<u32, CorpusError> {
        row[idx]
            .trim()
            .parse::<u32>()
            .map_err(|_| malformed(format!("{} `{}` is not a non-negative integer", HEADER[idx], &row[idx])))
    };
    let dataset = row[0].trim();
    let language = row[1].trim();
    if dataset.is_empty() {
        return Err(malformed("empty dataset".into()));
    }
    if language.is_empty() {
        return Err(malformed("empty language".into()));
    }
    let sentence_id = parse_id(2)?;
    let word_id = parse_id(3)?;
    let word = &row[4];
    if word.trim().is_empty() {
        return Err(malformed("empty word".into()));
    }

    let cells: Vec<&str> = (5..9).map(|i| row[i].trim()).collect();
    let empty = cells.iter().filter(|c| c.is_empty()).count();
    let targets = match empty {
        4 => None,
        0 => {
            let mut values = [0.0; 4];
            for (k, cell) in cells.iter().enumerate() {
                let v: f64 = cell.parse().map_err(|_| {
                    malformed(format!("{} `{cell}` is not a number", HEADER[5 + k]))
                })?;
                if !v.is_finite() {
                    return Err(malformed(format!("{} is not finite", HEADER[5 + k])));
                }
                values[k] = v;
            }
            match TargetVector::new(values) {
                Ok(t) => Some(t),
                Err((col, value)) => {
                    return Err(CorpusError::TargetOutOfRange {
                        line,
                        column: TargetVector::NAMES[col],
                        value,
                    })
                }
            }
        }
        _ => return Err(malformed("target cells must be all present or all empty".into())),
    };

    Ok(TokenRecord {
        dataset: dataset.to_string(),
        language: language.to_string(),
        sentence_id,
        word_id,
        word: word.to_string(),
        targets,
    })
}

/// Writes records in the canonical layout. Absent targets become empty cells.
pub fn write_records<'a, W: Write>(
    writer: W,
    records: impl IntoIterator<Item = &'a TokenRecord>,
) -> Result<(), CorpusError> {
    let mut wtr = csv::Writer::from_writer(writer);
    wtr.write_record(HEADER)?;
    for rec in records {
        let ids = [rec.sentence_id.to_string(), rec.word_id.to_string()];
        let targets: [String; 4] = match rec.targets {
            Some(t) => t.to_array().map(|v| v.to_string()),
            None => Default::default(),
        };
        wtr.write_record(
            [rec.dataset.as_str(), rec.language.as_str(), &ids[0], &ids[1], rec.word.as_str()]
                .into_iter()
                .chain(targets.iter().map(String::as_str)),
        )?;
    }
    wtr.flush()?;
    Ok(())
}

pub fn write_corpus<W: Write>(writer: W, corpus: &Corpus) -> Result<(), CorpusError> {
    write_records(writer, corpus.records())
}
