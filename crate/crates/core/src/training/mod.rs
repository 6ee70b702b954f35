//! Mini-batch MSE training of the fusion network with epoch-wise dev selection.

pub mod config;
pub mod optim;

use rand::seq::SliceRandom;
use thiserror::Error;

pub use config::{ConfigError, HyperParams};
pub use optim::{adamw_step, lr_at, warmup_steps, OptimError, OptimizerState};

use crate::ablation::{apply_mask, AblationMask};
use crate::corpus::{Corpus, TargetVector};
use crate::evaluation::{mae, EvalError, EvalReport};
use crate::features::{featurize_corpus, FeatureError, FeatureVector};
use crate::models::{clip_output, FusionGrads, FusionModel, Mode, ModelError, N_OUTPUTS};
use crate::rng::{self, SeedStreams};
use crate::store::{EmbeddingStore, StoreEntry};

#[derive(Debug, Error)]
pub enum TrainError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("{0} corpus has unlabeled tokens")]
    MissingTargets(&'static str),
    #[error("{0} corpus is empty")]
    EmptyCorpus(&'static str),
    #[error("non-finite loss at epoch {epoch}, step {step}")]
    NonFiniteLoss { epoch: usize, step: u64 },
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Feature(#[from] FeatureError),
    #[error(transparent)]
    Optim(#[from] OptimError),
    #[error(transparent)]
    Eval(#[from] EvalError),
}

/// Mean squared error over the four targets and its gradient w.r.t. `pred`.
pub fn mse_loss(pred: &[f64; N_OUTPUTS], target: &TargetVector) -> (f64, [f64; N_OUTPUTS]) {
    let t = target.to_array();
    let mut loss = 0.0;
    let mut grad = [0.0; N_OUTPUTS];
    for k in 0..N_OUTPUTS {
        let d = pred[k] - t[k];
        loss += d * d;
        grad[k] = 2.0 * d / N_OUTPUTS as f64;
    }
    (loss / N_OUTPUTS as f64, grad)
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochLog {
    /// 1-based.
    pub epoch: usize,
    pub train_mse: f64,
    pub dev: EvalReport,
    /// Learning rate of the epoch's last optimizer step.
    pub lr: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct TrainLog {
    pub entries: Vec<EpochLog>,
    /// Epoch whose parameters were returned; `None` when no epoch ran.
    pub best_epoch: Option<usize>,
}

pub const TRAIN_LOG_HEADER: [&str; 8] = [
    "epoch",
    "train_mse",
    "dev_ffd_avg",
    "dev_ffd_std",
    "dev_trt_avg",
    "dev_trt_std",
    "dev_overall",
    "lr",
];

impl TrainLog {
    pub fn write_csv<W: std::io::Write>(&self, writer: W) -> csv::Result<()> {
        let mut wtr = csv::Writer::from_writer(writer);
        wtr.write_record(TRAIN_LOG_HEADER)?;
        for e in &self.entries {
            let d = &e.dev;
            let cells = [
                e.epoch.to_string(),
                e.train_mse.to_string(),
                d.mae[0].to_string(),
                d.mae[1].to_string(),
                d.mae[2].to_string(),
                d.mae[3].to_string(),
                d.overall.to_string(),
                e.lr.to_string(),
            ];
            wtr.write_record(&cells)?;
        }
        wtr.flush()?;
        Ok(())
    }
}

struct Prepared<'a> {
    entries: Vec<&'a StoreEntry>,
    features: Vec<FeatureVector>,
    targets: Vec<TargetVector>,
}

fn prepare<'a>(corpus: &Corpus, store: &'a EmbeddingStore, name: &'static str) -> Result<Prepared<'a>, TrainError> {
    let targets = corpus.targets().ok_or(TrainError::MissingTargets(name))?;
    if targets.is_empty() {
        return Err(TrainError::EmptyCorpus(name));
    }
    let features = featurize_corpus(corpus, store)?;
    let entries = corpus
        .records()
        .iter()
        .map(|r| store.lookup_record(r))
        .collect::<Result<Vec<_>, _>>()
        .map_err(FeatureError::from)?;
    Ok(Prepared { entries, features, targets })
}

fn widen(entry: &StoreEntry, use_embeddings: bool, buf: &mut Vec<f64>) {
    buf.clear();
    if use_embeddings {
        buf.extend(entry.vector.iter().map(|&v| v as f64));
    }
}

/// Trains the fusion network on embeddings plus features.
pub fn train(
    train: &Corpus,
    dev: &Corpus,
    store: &EmbeddingStore,
    hp: &HyperParams,
) -> Result<(FusionModel, TrainLog), TrainError> {
    train_network(train, dev, store, hp, true)
}

/// Trains the features-only MLP baseline with the same procedure.
pub fn train_mlp(
    train: &Corpus,
    dev: &Corpus,
    store: &EmbeddingStore,
    hp: &HyperParams,
) -> Result<(FusionModel, TrainLog), TrainError> {
    train_network(train, dev, store, hp, false)
}

fn evaluate_network(net: &FusionModel, data: &Prepared<'_>, use_embeddings: bool) -> Result<EvalReport, TrainError> {
    let mut emb = Vec::with_capacity(net.dim());
    let mut preds = Vec::with_capacity(data.targets.len());
    for (entry, f) in data.entries.iter().zip(&data.features) {
        widen(entry, use_embeddings, &mut emb);
        preds.push(clip_output(net.predict_one(&emb, apply_mask(f, AblationMask::NONE))?));
    }
    Ok(mae(&preds, &data.targets)?)
}

fn train_network(
    train: &Corpus,
    dev: &Corpus,
    store: &EmbeddingStore,
    hp: &HyperParams,
    use_embeddings: bool,
) -> Result<(FusionModel, TrainLog), TrainError> {
    hp.validate()?;
    let train_data = prepare(train, store, "train")?;
    let dev_data = prepare(dev, store, "dev")?;

    let streams = SeedStreams::new(hp.seed);
    let dim = if use_embeddings { store.dim() } else { 0 };
    let mut model = FusionModel::initialized(dim, hp.hidden, hp.dropout, &mut streams.stream(rng::INIT))?;
    if hp.epochs == 0 {
        return Ok((model, TrainLog::default()));
    }
    let mut shuffle_rng = streams.stream(rng::SHUFFLE);
    let mut dropout_rng = streams.stream(rng::DROPOUT);

    let n = train_data.targets.len();
    let steps_per_epoch = n.div_ceil(hp.batch_size) as u64;
    let total_steps = hp.epochs as u64 * steps_per_epoch;

    let mut state = OptimizerState::new();
    let mut grads = FusionGrads::zeros_like(&model);
    let mut order: Vec<usize> = (0..n).collect();
    let mut emb = Vec::with_capacity(dim);
    let mut step = 0u64;
    let mut log = TrainLog::default();
    let mut best: Option<(f64, FusionModel)> = None;

    for epoch in 1..=hp.epochs {
        order.shuffle(&mut shuffle_rng);
        let mut epoch_loss = 0.0;
        let mut lr = 0.0;
        for batch in order.chunks(hp.batch_size) {
            grads.fill_zero();
            let scale = 1.0 / batch.len() as f64;
            let mut batch_loss = 0.0;
            for &i in batch {
                widen(train_data.entries[i], use_embeddings, &mut emb);
                let x = apply_mask(&train_data.features[i], AblationMask::NONE);
                let (y, cache) = model.forward(&emb, x, Mode::Train(&mut dropout_rng))?;
                let (loss, g) = mse_loss(&y, &train_data.targets[i]);
                batch_loss += loss;
                model.accumulate_backward(&cache, g.map(|v| v * scale), &mut grads)?;
            }
            step += 1;
            if !batch_loss.is_finite() {
                return Err(TrainError::NonFiniteLoss { epoch, step });
            }
            epoch_loss += batch_loss;
            lr = lr_at(step, total_steps, hp);
            adamw_step(&mut model.param_slots(), &grads.slices(), &mut state, hp, lr)?;
        }
        if !model.is_finite() {
            return Err(TrainError::NonFiniteLoss { epoch, step });
        }
        let report = evaluate_network(&model, &dev_data, use_embeddings)?;
        if !report.overall.is_finite() {
            return Err(TrainError::NonFiniteLoss { epoch, step });
        }
        if best.as_ref().is_none_or(|(b, _)| report.overall < *b) {
            best = Some((report.overall, model.clone()));
            log.best_epoch = Some(epoch);
        }
        log.entries.push(EpochLog {
            epoch,
            train_mse: epoch_loss / n as f64,
            dev: report,
            lr,
        });
    }
    let (_, best_model) = best.expect("at least one epoch ran");
    Ok((best_model, log))
}
