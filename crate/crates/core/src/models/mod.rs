//! Regression models over engineered features and frozen embeddings.

pub mod baselines;
pub mod checkpoint;
pub mod fusion;

use thiserror::Error;

pub use baselines::{fit_linear, fit_linear_raw, fit_median, LinearModel, MedianBaseline};
pub use fusion::{FusionGrads, FusionModel, ForwardCache, Mode, ParamSlot, N_FEATURES, N_OUTPUTS};

use crate::ablation::{apply_mask, AblationMask};
use crate::corpus::{Corpus, TARGET_MAX};
use crate::features::{featurize_corpus, FeatureError};
use crate::store::{EmbeddingStore, StoreError};

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("input has {found} embedding components, model expects {expected}")]
    DimMismatch { expected: usize, found: usize },
    #[error("forward cache does not belong to the current parameters")]
    StaleCache,
    #[error("training corpus is empty")]
    EmptyCorpus,
    #[error("corpus has unlabeled tokens")]
    MissingTargets,
    #[error("need at least {needed} tokens, found {found}")]
    TooFewTokens { needed: usize, found: usize },
    #[error("singular design matrix; use a positive ridge lambda")]
    SingularSystem,
    #[error("{0} requires an embedding store")]
    MissingStore(&'static str),
    #[error("invalid model: {0}")]
    InvalidModel(String),
    #[error(transparent)]
    Checkpoint(#[from] checkpoint::CheckpointError),
    #[error(transparent)]
    Feature(#[from] FeatureError),
    #[error(transparent)]
    Store(#[from] StoreError),
}

/// Any model the harness can fit, save and evaluate.
#[derive(Debug, Clone, PartialEq)]
pub enum Model {
    /// Embedding ⊕ features network.
    Fusion(FusionModel),
    /// Same network with no embedding input.
    Mlp(FusionModel),
    Median(MedianBaseline),
    Linear(LinearModel),
}

impl Model {
    pub fn kind_name(&self) -> &'static str {
        match self {
            Model::Fusion(_) => "fusion",
            Model::Mlp(_) => "mlp",
            Model::Median(_) => "median",
            Model::Linear(_) => "linear",
        }
    }
}

pub fn clip_output(y: [f64; N_OUTPUTS]) -> [f64; N_OUTPUTS] {
    y.map(|v| v.clamp(0.0, TARGET_MAX))
}

/// Inference-mode predictions aligned with `corpus.records()`.
///
/// Masked features are zeroed before the forward pass and outputs are clipped
/// to the target range. The median baseline ignores features, so it needs no store.
pub fn predict(
    model: &Model,
    corpus: &Corpus,
    store: Option<&EmbeddingStore>,
    mask: AblationMask,
) -> Result<Vec<[f64; N_OUTPUTS]>, ModelError> {
    if let Model::Median(m) = model {
        return Ok(vec![clip_output(m.medians); corpus.len()]);
    }
    let store = store.ok_or(ModelError::MissingStore(model.kind_name()))?;
    let features = featurize_corpus(corpus, store)?;
    let mut out = Vec::with_capacity(corpus.len());
    let mut embedding = Vec::new();
    for (rec, f) in corpus.records().iter().zip(&features) {
        let x = apply_mask(f, mask);
        let y = match model {
            Model::Fusion(net) => {
                let entry = store.lookup_record(rec)?;
                if entry.vector.len() != net.dim() {
                    return Err(ModelError::DimMismatch {
                        expected: net.dim(),
                        found: entry.vector.len(),
                    });
                }
                embedding.clear();
                embedding.extend(entry.vector.iter().map(|&v| v as f64));
                net.predict_one(&embedding, x)?
            }
            Model::Mlp(net) => net.predict_one(&[], x)?,
            Model::Linear(lin) => lin.predict_one(x),
            Model::Median(_) => unreachable!(),
        };
        out.push(clip_output(y));
    }
    Ok(out)
}
