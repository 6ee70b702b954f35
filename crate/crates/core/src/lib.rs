//! Token-level eye-tracking feature prediction.
//!
//! Three engineered length features per word are concatenated with a frozen
//! first-subtoken contextual embedding and fed to a small regression network
//! that predicts FFDAvg, FFDStd, TRTAvg and TRTStd. The crate also carries the
//! feature-only baselines, MAE reporting and a zero-replacement ablation sweep.

pub mod ablation;
pub mod cli;
pub mod corpus;
pub mod evaluation;
pub mod features;
pub mod models;
pub mod rng;
pub mod store;
pub mod training;

pub use ablation::{ablation_sweep, apply_mask, AblationMask};
pub use corpus::{group_sentences, parse_corpus, Corpus, Split, TargetVector, TokenRecord};
pub use evaluation::{emit_results_table, evaluate_sliced, mae, EvalReport};
pub use features::{featurize_sentence, FeatureVector};
pub use models::{predict, FusionModel, Model};
pub use store::{read_store, write_store, zero_store, EmbeddingStore, TokenKey};
pub use training::{train, HyperParams, TrainLog};
