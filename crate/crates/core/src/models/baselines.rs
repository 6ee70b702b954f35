//! Feature-only baselines: per-target median and closed-form ridge regression.

use nalgebra::{DMatrix, DVector};

use super::ModelError;
use crate::corpus::Corpus;
use crate::features::{featurize_corpus, FeatureVector};
use crate::store::EmbeddingStore;

use super::fusion::{N_FEATURES, N_OUTPUTS};

/// Predicts the training median of each target for every token.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MedianBaseline {
    pub medians: [f64; N_OUTPUTS],
}

/// `y = Wᵀx + b` over the three raw features, one column per target.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LinearModel {
    /// `weights[feature][target]`.
    pub weights: [[f64; N_OUTPUTS]; N_FEATURES],
    pub bias: [f64; N_OUTPUTS],
    pub ridge_lambda: f64,
}

impl LinearModel {
    pub fn predict_one(&self, x: [f64; N_FEATURES]) -> [f64; N_OUTPUTS] {
        let mut y = self.bias;
        for (xi, row) in x.iter().zip(&self.weights) {
            for (yk, w) in y.iter_mut().zip(row) {
                *yk += xi * w;
            }
        }
        y
    }
}

/// Median of a non-empty slice; even counts average the two central values.
pub fn median(values: &mut [f64]) -> f64 {
    let n = values.len();
    assert!(n > 0, "median of empty slice");
    let mid = n / 2;
    let (lower, upper, _) = values.select_nth_unstable_by(mid, f64::total_cmp);
    let upper = *upper;
    if n % 2 == 1 {
        upper
    } else {
        let lower_max = lower.iter().copied().max_by(f64::total_cmp).expect("n >= 2");
        (lower_max + upper) / 2.0
    }
}

pub fn fit_median(train: &Corpus) -> Result<MedianBaseline, ModelError> {
    let targets = train.targets().ok_or(ModelError::MissingTargets)?;
    if targets.is_empty() {
        return Err(ModelError::EmptyCorpus);
    }
    let mut medians = [0.0; N_OUTPUTS];
    for (k, m) in medians.iter_mut().enumerate() {
        let mut column: Vec<f64> = targets.iter().map(|t| t.to_array()[k]).collect();
        *m = median(&mut column);
    }
    Ok(MedianBaseline { medians })
}

pub fn fit_linear(
    train: &Corpus,
    store: &EmbeddingStore,
    ridge_lambda: f64,
) -> Result<LinearModel, ModelError> {
    let targets = train.targets().ok_or(ModelError::MissingTargets)?;
    let features = featurize_corpus(train, store)?;
    let y: Vec<[f64; N_OUTPUTS]> = targets.iter().map(|t| t.to_array()).collect();
    fit_linear_raw(&features, &y, ridge_lambda)
}

/// Ridge solution with an unpenalized intercept.
///
/// Solves the penalized least-squares problem through a QR factorization of
/// the design stacked on `sqrt(λ)·I` rows, which has the same minimizer as
/// `(XᵀX + λI)⁻¹Xᵀy` without squaring the condition number.
pub fn fit_linear_raw(
    features: &[FeatureVector],
    targets: &[[f64; N_OUTPUTS]],
    ridge_lambda: f64,
) -> Result<LinearModel, ModelError> {
    if !(ridge_lambda >= 0.0 && ridge_lambda.is_finite()) {
        return Err(ModelError::InvalidModel(format!("ridge lambda {ridge_lambda} must be finite and >= 0")));
    }
    let n = features.len();
    assert_eq!(n, targets.len());
    if n < N_FEATURES + 1 {
        return Err(ModelError::TooFewTokens { needed: N_FEATURES + 1, found: n });
    }
    let cols = N_FEATURES + 1;
    let extra = if ridge_lambda > 0.0 { N_FEATURES } else { 0 };
    let rows = n + extra;
    let mut x = DMatrix::<f64>::zeros(rows, cols);
    let mut y = DMatrix::<f64>::zeros(rows, N_OUTPUTS);
    for (i, (f, t)) in features.iter().zip(targets).enumerate() {
        for (j, v) in f.to_array().into_iter().enumerate() {
            x[(i, j)] = v;
        }
        x[(i, N_FEATURES)] = 1.0;
        for (k, &v) in t.iter().enumerate() {
            y[(i, k)] = v;
        }
    }
    let root = ridge_lambda.sqrt();
    for j in 0..extra {
        x[(n + j, j)] = root;
    }

    let qr = x.qr();
    let r = qr.r();
    let diag_max = (0..cols).map(|i| r[(i, i)].abs()).fold(0.0, f64::max);
    if (0..cols).any(|i| r[(i, i)].abs() <= diag_max * 1e-10) || diag_max == 0.0 {
        return Err(ModelError::SingularSystem);
    }
    let qty = qr.q().transpose() * y;
    let mut weights = [[0.0; N_OUTPUTS]; N_FEATURES];
    let mut bias = [0.0; N_OUTPUTS];
    for k in 0..N_OUTPUTS {
        let rhs = DVector::from_iterator(cols, (0..cols).map(|i| qty[(i, k)]));
        let w = r
            .solve_upper_triangular(&rhs)
            .ok_or(ModelError::SingularSystem)?;
        for j in 0..N_FEATURES {
            weights[j][k] = w[j];
        }
        bias[k] = w[N_FEATURES];
    }
    let model = LinearModel { weights, bias, ridge_lambda };
    if model.weights.iter().flatten().chain(&model.bias).any(|v| !v.is_finite()) {
        return Err(ModelError::SingularSystem);
    }
    Ok(model)
}
