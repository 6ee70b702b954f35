//! Precomputed per-token embeddings and subword counts.
//!
//! The on-disk layout is little-endian throughout:
//!
//! ```text
//! magic     8 bytes  "GAZEEMB1"
//! version   u32      1
//! dim       u32
//! count     u64
//! datasets  u16 n, then n × (u16 byte length, UTF-8 name)
//! records   count × (u16 dataset_index, u32 sentence_id, u32 word_id,
//!                    u16 tok_len, dim × f32)
//! trailer   u32      CRC-32 (IEEE) of every preceding byte
//! ```
//!
//! Records are written sorted by key, so two stores holding the same entries
//! serialize to the same bytes.

use std::collections::{BTreeMap, HashMap};
use std::path::Path;

use thiserror::Error;

use crate::corpus::{Corpus, TokenRecord};

pub const MAGIC: &[u8; 8] = b"GAZEEMB1";
pub const VERSION: u32 = 1;

const FIXED_HEADER_LEN: usize = 8 + 4 + 4 + 8;
const KEY_LEN: usize = 2 + 4 + 4;

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("vector has {found} components, store dim is {expected}")]
    DimMismatch { expected: usize, found: usize },
    #[error("non-finite value at component {index} of {key}")]
    NonFiniteValue { key: TokenKey, index: usize },
    #[error("bad magic bytes")]
    BadMagic,
    #[error("unsupported store version {0}")]
    UnsupportedVersion(u32),
    #[error("file truncated at byte {offset} while reading {what}")]
    TruncatedFile { offset: usize, what: &'static str },
    #[error("checksum mismatch: stored {stored:#010x}, computed {computed:#010x}")]
    ChecksumMismatch { stored: u32, computed: u32 },
    #[error("invalid store: {0}")]
    Invalid(String),
    #[error("no embedding for {0}")]
    MissingEmbedding(String),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct TokenKey {
    pub dataset_index: u16,
    pub sentence_id: u32,
    pub word_id: u32,
}

impl std::fmt::Display for TokenKey {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "key(dataset #{}, sentence {}, word {})",
            self.dataset_index, self.sentence_id, self.word_id
        )
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StoreEntry {
    pub tok_len: u16,
    pub vector: Vec<f32>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingStore {
    dim: usize,
    dataset_names: Vec<String>,
    dataset_lookup: HashMap<String, u16>,
    entries: BTreeMap<TokenKey, StoreEntry>,
}

impl EmbeddingStore {
    pub fn new(dim: usize, dataset_names: Vec<String>) -> Result<Self, StoreError> {
        if dim == 0 || dim > u32::MAX as usize {
            return Err(StoreError::Invalid(format!("dim {dim} out of range")));
        }
        if dataset_names.len() > u16::MAX as usize {
            return Err(StoreError::Invalid("too many datasets".into()));
        }
        let mut dataset_lookup = HashMap::with_capacity(dataset_names.len());
        for (i, name) in dataset_names.iter().enumerate() {
            if name.len() > u16::MAX as usize {
                return Err(StoreError::Invalid(format!("dataset name too long: {name}")));
            }
            if dataset_lookup.insert(name.clone(), i as u16).is_some() {
                return Err(StoreError::Invalid(format!("duplicate dataset name {name}")));
            }
        }
        Ok(Self {
            dim,
            dataset_names,
            dataset_lookup,
            entries: BTreeMap::new(),
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn dataset_names(&self) -> &[String] {
        &self.dataset_names
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entries(&self) -> impl Iterator<Item = (&TokenKey, &StoreEntry)> {
        self.entries.iter()
    }

    /// Inserts or replaces an entry after checking the store invariants.
    pub fn insert(&mut self, key: TokenKey, tok_len: u16, vector: Vec<f32>) -> Result<(), StoreError> {
        self.check_entry(&key, tok_len, &vector)?;
        self.entries.insert(key, StoreEntry { tok_len, vector });
        Ok(())
    }

    fn check_entry(&self, key: &TokenKey, tok_len: u16, vector: &[f32]) -> Result<(), StoreError> {
        if key.dataset_index as usize >= self.dataset_names.len() {
            return Err(StoreError::Invalid(format!(
                "dataset index {} outside table of {}",
                key.dataset_index,
                self.dataset_names.len()
            )));
        }
        if tok_len == 0 {
            return Err(StoreError::Invalid(format!("tok_len 0 for {key}")));
        }
        if vector.len() != self.dim {
            return Err(StoreError::DimMismatch {
                expected: self.dim,
                found: vector.len(),
            });
        }
        if let Some(index) = vector.iter().position(|v| !v.is_finite()) {
            return Err(StoreError::NonFiniteValue { key: *key, index });
        }
        Ok(())
    }

    pub fn key_for(&self, dataset: &str, sentence_id: u32, word_id: u32) -> Option<TokenKey> {
        self.dataset_lookup.get(dataset).map(|&dataset_index| TokenKey {
            dataset_index,
            sentence_id,
            word_id,
        })
    }

    pub fn lookup(&self, key: &TokenKey) -> Result<&StoreEntry, StoreError> {
        self.entries
            .get(key)
            .ok_or_else(|| StoreError::MissingEmbedding(key.to_string()))
    }

    pub fn lookup_record(&self, rec: &TokenRecord) -> Result<&StoreEntry, StoreError> {
        self.key_for(&rec.dataset, rec.sentence_id, rec.word_id)
            .and_then(|k| self.entries.get(&k))
            .ok_or_else(|| {
                StoreError::MissingEmbedding(format!(
                    "({}, sentence {}, word {})",
                    rec.dataset, rec.sentence_id, rec.word_id
                ))
            })
    }

    /// Fails with the first corpus token that has no entry.
    pub fn check_covers(&self, corpus: &Corpus) -> Result<(), StoreError> {
        for rec in corpus.records() {
            self.lookup_record(rec)?;
        }
        Ok(())
    }

    pub fn serialized_len(&self) -> usize {
        FIXED_HEADER_LEN
            + 2
            + self.dataset_names.iter().map(|n| 2 + n.len()).sum::<usize>()
            + self.entries.len() * record_len(self.dim)
            + 4
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>, StoreError> {
        let mut out = Vec::with_capacity(self.serialized_len());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(self.dim as u32).to_le_bytes());
        out.extend_from_slice(&(self.entries.len() as u64).to_le_bytes());
        out.extend_from_slice(&(self.dataset_names.len() as u16).to_le_bytes());
        for name in &self.dataset_names {
            out.extend_from_slice(&(name.len() as u16).to_le_bytes());
            out.extend_from_slice(name.as_bytes());
        }
        for (key, entry) in &self.entries {
            self.check_entry(key, entry.tok_len, &entry.vector)?;
            out.extend_from_slice(&key.dataset_index.to_le_bytes());
            out.extend_from_slice(&key.sentence_id.to_le_bytes());
            out.extend_from_slice(&key.word_id.to_le_bytes());
            out.extend_from_slice(&entry.tok_len.to_le_bytes());
            for v in &entry.vector {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        let crc = crc32fast::hash(&out);
        out.extend_from_slice(&crc.to_le_bytes());
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, StoreError> {
        let mut cur = Cursor { bytes, pos: 0 };
        if cur.take(8, "magic")? != MAGIC {
            return Err(StoreError::BadMagic);
        }
        let version = cur.u32("version")?;
        if version != VERSION {
            return Err(StoreError::UnsupportedVersion(version));
        }
        let dim = cur.u32("dim")? as usize;
        let count = cur.u64("count")?;
        let n_datasets = cur.u16("dataset table")? as usize;
        let mut names = Vec::with_capacity(n_datasets);
        for _ in 0..n_datasets {
            let len = cur.u16("dataset name")? as usize;
            let raw = cur.take(len, "dataset name")?;
            let name = std::str::from_utf8(raw)
                .map_err(|_| StoreError::Invalid("dataset name is not UTF-8".into()))?;
            names.push(name.to_string());
        }

        // The record block must fit before the trailer; otherwise the file was cut short.
        let body = (bytes.len() - cur.pos).saturating_sub(4);
        let needed = (count as u128) * record_len(dim) as u128;
        if needed > body as u128 {
            let whole = body / record_len(dim).max(1);
            return Err(StoreError::TruncatedFile {
                offset: bytes.len(),
                what: if whole as u64 >= count { "trailer" } else { "record" },
            });
        }
        let mut raw_records = Vec::with_capacity(count as usize);
        for _ in 0..count {
            let key = TokenKey {
                dataset_index: cur.u16("record")?,
                sentence_id: cur.u32("record")?,
                word_id: cur.u32("record")?,
            };
            let tok_len = cur.u16("record")?;
            let payload = cur.take(dim * 4, "record")?;
            let vector = payload
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
                .collect::<Vec<_>>();
            raw_records.push((key, tok_len, vector));
        }
        let covered = cur.pos;
        let stored = cur.u32("trailer")?;
        if cur.pos != bytes.len() {
            return Err(StoreError::Invalid(format!(
                "{} trailing bytes after checksum",
                bytes.len() - cur.pos
            )));
        }
        let computed = crc32fast::hash(&bytes[..covered]);
        if stored != computed {
            return Err(StoreError::ChecksumMismatch { stored, computed });
        }

        let mut store = Self::new(dim, names)?;
        let mut prev: Option<TokenKey> = None;
        for (key, tok_len, vector) in raw_records {
            if prev.is_some_and(|p| p >= key) {
                return Err(StoreError::Invalid(format!("records not strictly sorted at {key}")));
            }
            prev = Some(key);
            store.insert(key, tok_len, vector)?;
        }
        Ok(store)
    }
}

fn record_len(dim: usize) -> usize {
    KEY_LEN + 2 + 4 * dim
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize, what: &'static str) -> Result<&'a [u8], StoreError> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or(StoreError::TruncatedFile {
                offset: self.bytes.len(),
                what,
            })?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u16(&mut self, what: &'static str) -> Result<u16, StoreError> {
        let b = self.take(2, what)?;
        Ok(u16::from_le_bytes([b[0], b[1]]))
    }

    fn u32(&mut self, what: &'static str) -> Result<u32, StoreError> {
        let b = self.take(4, what)?;
        Ok(u32::from_le_bytes(b.try_into().unwrap()))
    }

    fn u64(&mut self, what: &'static str) -> Result<u64, StoreError> {
        let b = self.take(8, what)?;
        Ok(u64::from_le_bytes(b.try_into().unwrap()))
    }
}

pub fn write_store(
    entries: impl IntoIterator<Item = (TokenKey, StoreEntry)>,
    dim: usize,
    dataset_names: Vec<String>,
    path: impl AsRef<Path>,
) -> Result<(), StoreError> {
    let mut store = EmbeddingStore::new(dim, dataset_names)?;
    for (key, entry) in entries {
        store.insert(key, entry.tok_len, entry.vector)?;
    }
    std::fs::write(path, store.to_bytes()?)?;
    Ok(())
}

pub fn read_store(path: impl AsRef<Path>) -> Result<EmbeddingStore, StoreError> {
    EmbeddingStore::from_bytes(&std::fs::read(path)?)
}

/// A store with a zero vector and `tok_len = 1` for every corpus token, so the
/// pipeline runs without any encoder.
pub fn zero_store(corpus: &Corpus, dim: usize) -> Result<EmbeddingStore, StoreError> {
    zero_store_for(std::iter::once(corpus), dim)
}

/// [`zero_store`] over several corpora, e.g. train and dev together.
pub fn zero_store_for<'a>(
    corpora: impl IntoIterator<Item = &'a Corpus>,
    dim: usize,
) -> Result<EmbeddingStore, StoreError> {
    let corpora: Vec<&Corpus> = corpora.into_iter().collect();
    let mut names: Vec<String> = Vec::new();
    for c in &corpora {
        for n in c.dataset_names() {
            if !names.contains(&n) {
                names.push(n);
            }
        }
    }
    let mut store = EmbeddingStore::new(dim, names)?;
    for c in &corpora {
        for rec in c.records() {
            let key = store
                .key_for(&rec.dataset, rec.sentence_id, rec.word_id)
                .expect("dataset registered above");
            store.insert(key, 1, vec![0.0; dim])?;
        }
    }
    Ok(store)
}
