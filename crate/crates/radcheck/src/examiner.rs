//! Binary Real/Fake classifier over concatenated image-sentence features.
//!
//! Training is deterministic full-batch subgradient descent on the
//! L2-regularized hinge loss with step size 1/(lambda * t) and an iterate
//! projection onto the ball of radius 1/sqrt(lambda). Any convex solver that
//! reaches the same objective value is interchangeable; this one needs no
//! dependencies and reproduces bit-for-bit.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::corpus::{Corpus, Split};
use crate::embed::{featurize_pairs, EmbeddingProvider, FeatureVector, FEATURE_DIM};
use crate::error::{Error, Result};
use crate::hash::{child_seed, fnv1a64};
use crate::pairs::{build_pairs, Label};
use crate::synth::FakeRecord;

/// Solver hyperparameters.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainParams {
    /// L2 regularization strength.
    pub lambda: f64,
    /// Maximum full-batch epochs.
    pub epochs: usize,
    /// Recorded in model metadata; the solver itself is deterministic.
    pub seed: u64,
    /// Early-stop threshold on per-epoch objective improvement.
    pub tol: f64,
    /// Weight classes by inverse frequency instead of uniformly.
    pub balance_classes: bool,
}

impl Default for TrainParams {
    fn default() -> Self {
        TrainParams {
            lambda: 1e-4,
            epochs: 200,
            seed: 0,
            tol: 1e-6,
            balance_classes: false,
        }
    }
}

/// Provenance stored alongside model parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelMetadata {
    pub provider_id: String,
    pub seed: u64,
    pub lambda: f64,
    pub epochs: usize,
    pub train_fingerprint: String,
}

/// A trained linear decision function over 1024-d features.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExaminerModel {
    pub weights: Vec<f32>,
    pub bias: f32,
    pub metadata: ModelMetadata,
}

/// Classifier output for one feature.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Prediction {
    pub label: Label,
    pub score: f64,
}

/// Evaluation metrics; `auc` is None when the eval set has a single class.
/// `confusion` is [[TN, FP], [FN, TP]] with Real as the positive class.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalMetrics {
    pub accuracy: f64,
    pub auc: Option<f64>,
    pub n: usize,
    pub confusion: [[usize; 2]; 2],
}

fn label_sign(label: Label) -> f64 {
    match label {
        Label::Real => 1.0,
        Label::Fake => -1.0,
    }
}

fn dot(w: &[f64], x: &FeatureVector) -> f64 {
    w.iter().zip(x.values()).map(|(&a, &b)| a * f64::from(b)).sum()
}

/// L2-regularized average hinge objective:
/// lambda/2 * |w|^2 + mean_i c_i * max(0, 1 - y_i (w.x_i + b)).
pub fn hinge_objective(
    w: &[f64],
    b: f64,
    features: &[FeatureVector],
    ys: &[f64],
    lambda: f64,
) -> f64 {
    weighted_hinge_objective(w, b, features, ys, None, lambda)
}

fn weighted_hinge_objective(
    w: &[f64],
    b: f64,
    features: &[FeatureVector],
    ys: &[f64],
    example_weights: Option<&[f64]>,
    lambda: f64,
) -> f64 {
    let reg: f64 = 0.5 * lambda * w.iter().map(|v| v * v).sum::<f64>();
    let n = features.len() as f64;
    let mut loss = 0.0;
    for (i, (x, &y)) in features.iter().zip(ys).enumerate() {
        let c = example_weights.map_or(1.0, |cw| cw[i]);
        let margin = y * (dot(w, x) + b);
        loss += c * (1.0 - margin).max(0.0);
    }
    reg + loss / n
}

/// Subgradient of [`hinge_objective`] at (w, b); the hinge term contributes
/// nothing at margin exactly 1.
pub fn hinge_subgradient(
    w: &[f64],
    b: f64,
    features: &[FeatureVector],
    ys: &[f64],
    lambda: f64,
) -> (Vec<f64>, f64) {
    weighted_hinge_subgradient(w, b, features, ys, None, lambda)
}

fn weighted_hinge_subgradient(
    w: &[f64],
    b: f64,
    features: &[FeatureVector],
    ys: &[f64],
    example_weights: Option<&[f64]>,
    lambda: f64,
) -> (Vec<f64>, f64) {
    let n = features.len() as f64;
    let mut gw: Vec<f64> = w.iter().map(|v| lambda * v).collect();
    let mut gb = 0.0;
    for (i, (x, &y)) in features.iter().zip(ys).enumerate() {
        let c = example_weights.map_or(1.0, |cw| cw[i]);
        let margin = y * (dot(w, x) + b);
        if margin < 1.0 {
            let scale = c * y / n;
            for (g, &v) in gw.iter_mut().zip(x.values()) {
                *g -= scale * f64::from(v);
            }
            gb -= scale;
        }
    }
    (gw, gb)
}

fn fingerprint(features: &[FeatureVector], labels: &[Label]) -> String {
    let mut bytes = Vec::with_capacity(features.len() * 4 + labels.len());
    for (x, &label) in features.iter().zip(labels) {
        for &v in x.values() {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
        bytes.push(match label {
            Label::Real => 1,
            Label::Fake => 0,
        });
    }
    format!("{:016x}", fnv1a64(&bytes))
}

/// Train the linear examiner. Deterministic for a fixed input order.
pub fn train(
    features: &[FeatureVector],
    labels: &[Label],
    params: &TrainParams,
    provider_id: &str,
) -> Result<ExaminerModel> {
    if features.len() != labels.len() {
        return Err(Error::Validation(format!(
            "{} features but {} labels",
            features.len(),
            labels.len()
        )));
    }
    let n_real = labels.iter().filter(|&&l| l == Label::Real).count();
    let n_fake = labels.len() - n_real;
    if n_real == 0 || n_fake == 0 {
        return Err(Error::Training(
            "training data must contain both Real and Fake examples".into(),
        ));
    }
    if params.lambda <= 0.0 {
        return Err(Error::Training("lambda must be positive".into()));
    }

    let ys: Vec<f64> = labels.iter().map(|&l| label_sign(l)).collect();
    let example_weights: Option<Vec<f64>> = params.balance_classes.then(|| {
        let n = labels.len() as f64;
        let w_real = n / (2.0 * n_real as f64);
        let w_fake = n / (2.0 * n_fake as f64);
        labels
            .iter()
            .map(|&l| if l == Label::Real { w_real } else { w_fake })
            .collect()
    });

    let mut w = vec![0.0f64; FEATURE_DIM];
    let mut b = 0.0f64;
    let radius = 1.0 / params.lambda.sqrt();
    let mut prev = weighted_hinge_objective(&w, b, features, &ys, example_weights.as_deref(), params.lambda);

    for t in 1..=params.epochs {
        let (gw, gb) = weighted_hinge_subgradient(
            &w,
            b,
            features,
            &ys,
            example_weights.as_deref(),
            params.lambda,
        );
        let eta = 1.0 / (params.lambda * t as f64);
        for (wi, gi) in w.iter_mut().zip(&gw) {
            *wi -= eta * gi;
        }
        b -= eta * gb;

        let norm = w.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm > radius {
            let scale = radius / norm;
            for wi in w.iter_mut() {
                *wi *= scale;
            }
        }

        let objective = weighted_hinge_objective(
            &w,
            b,
            features,
            &ys,
            example_weights.as_deref(),
            params.lambda,
        );
        if (prev - objective).abs() < params.tol {
            break;
        }
        prev = objective;
    }

    Ok(ExaminerModel {
        weights: w.into_iter().map(|v| v as f32).collect(),
        bias: b as f32,
        metadata: ModelMetadata {
            provider_id: provider_id.to_string(),
            seed: params.seed,
            lambda: params.lambda,
            epochs: params.epochs,
            train_fingerprint: fingerprint(features, labels),
        },
    })
}

/// Score a feature: `w . x + b`. Label is Real iff the score is >= 0
/// (ties resolve to Real so uncertain sentences survive verification).
pub fn predict(model: &ExaminerModel, feature: &FeatureVector) -> Result<Prediction> {
    if model.weights.len() != feature.values().len() {
        return Err(Error::Dimension {
            expected: model.weights.len(),
            got: feature.values().len(),
        });
    }
    let score: f64 = model
        .weights
        .iter()
        .zip(feature.values())
        .map(|(&w, &x)| f64::from(w) * f64::from(x))
        .sum::<f64>()
        + f64::from(model.bias);
    let label = if score >= 0.0 { Label::Real } else { Label::Fake };
    Ok(Prediction { label, score })
}

/// Rank-based ROC AUC with Real as the positive class and ties counted as
/// one half. None when either class is absent.
pub fn roc_auc(scores: &[f64], labels: &[Label]) -> Option<f64> {
    let n_pos = labels.iter().filter(|&&l| l == Label::Real).count();
    let n_neg = labels.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return None;
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].partial_cmp(&scores[b]).expect("finite scores"));

    // Average ranks over tied scores (1-based ranks).
    let mut ranks = vec![0.0f64; scores.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        let avg_rank = (i + j + 2) as f64 / 2.0;
        for &idx in &order[i..=j] {
            ranks[idx] = avg_rank;
        }
        i = j + 1;
    }

    let rank_sum: f64 = labels
        .iter()
        .zip(&ranks)
        .filter(|(&l, _)| l == Label::Real)
        .map(|(_, &r)| r)
        .sum();
    let auc = (rank_sum - (n_pos * (n_pos + 1)) as f64 / 2.0) / (n_pos as f64 * n_neg as f64);
    Some(auc)
}

/// Accuracy, AUC and the confusion matrix on a labeled feature set.
pub fn evaluate(
    model: &ExaminerModel,
    features: &[FeatureVector],
    labels: &[Label],
) -> Result<EvalMetrics> {
    if features.is_empty() || features.len() != labels.len() {
        return Err(Error::Validation("evaluation set is empty or misaligned".into()));
    }
    let mut scores = Vec::with_capacity(features.len());
    let mut confusion = [[0usize; 2]; 2];
    let mut correct = 0usize;
    for (x, &truth) in features.iter().zip(labels) {
        let prediction = predict(model, x)?;
        scores.push(prediction.score);
        if prediction.label == truth {
            correct += 1;
        }
        match (truth, prediction.label) {
            (Label::Fake, Label::Fake) => confusion[0][0] += 1,
            (Label::Fake, Label::Real) => confusion[0][1] += 1,
            (Label::Real, Label::Fake) => confusion[1][0] += 1,
            (Label::Real, Label::Real) => confusion[1][1] += 1,
        }
    }
    Ok(EvalMetrics {
        accuracy: correct as f64 / labels.len() as f64,
        auc: roc_auc(&scores, labels),
        n: labels.len(),
        confusion,
    })
}

const MODEL_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct ModelFile {
    version: u32,
    weights: Vec<f32>,
    bias: f32,
    metadata: ModelMetadata,
}

/// Persist the model as JSON; round-trips exactly at f32 precision.
pub fn save(model: &ExaminerModel, path: &Path) -> Result<()> {
    let file = ModelFile {
        version: MODEL_VERSION,
        weights: model.weights.clone(),
        bias: model.bias,
        metadata: model.metadata.clone(),
    };
    let json = serde_json::to_string_pretty(&file).map_err(|e| Error::Format(e.to_string()))?;
    std::fs::write(path, json + "\n")?;
    Ok(())
}

pub fn load(path: &Path) -> Result<ExaminerModel> {
    let text = std::fs::read_to_string(path)?;
    let file: ModelFile =
        serde_json::from_str(&text).map_err(|e| Error::Format(format!("model file: {e}")))?;
    if file.version != MODEL_VERSION {
        return Err(Error::Format(format!(
            "unsupported model version {}",
            file.version
        )));
    }
    if file.weights.len() != FEATURE_DIM {
        return Err(Error::Format(format!(
            "model has {} weights, expected {FEATURE_DIM}",
            file.weights.len()
        )));
    }
    if file.weights.iter().any(|w| !w.is_finite()) || !file.bias.is_finite() {
        return Err(Error::Format("model has non-finite parameters".into()));
    }
    Ok(ExaminerModel {
        weights: file.weights,
        bias: file.bias,
        metadata: file.metadata,
    })
}

/// Parameters for split-level cross-validation.
#[derive(Debug, Clone)]
pub struct CvParams {
    pub folds: usize,
    pub ratios: [f64; 3],
    pub seed: u64,
    pub train: TrainParams,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FoldMetrics {
    pub fold: usize,
    pub split_seed: u64,
    pub n_train: usize,
    pub n_test: usize,
    pub metrics: EvalMetrics,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CvReport {
    pub folds: Vec<FoldMetrics>,
    pub mean_accuracy: f64,
    /// Largest absolute deviation of any fold from the mean.
    pub max_deviation: f64,
}

/// Repeat the split/train/evaluate pipeline over `folds` reshuffled
/// patient splits and report the accuracy distribution.
pub fn cross_validate(
    corpus: &Corpus,
    fakes: &[FakeRecord],
    provider: &dyn EmbeddingProvider,
    params: &CvParams,
) -> Result<CvReport> {
    if params.folds == 0 {
        return Err(Error::Validation("folds must be >= 1".into()));
    }
    let mut folds = Vec::with_capacity(params.folds);
    for fold in 0..params.folds {
        let split_seed = child_seed(params.seed, &format!("fold:{fold}"));
        let splits = crate::corpus::split_by_patient(corpus, params.ratios, split_seed)?;
        let pairs = build_pairs(corpus, fakes, &splits)?;
        let train_pairs: Vec<_> = pairs.iter().filter(|p| p.split == Split::Train).cloned().collect();
        let test_pairs: Vec<_> = pairs.iter().filter(|p| p.split == Split::Test).cloned().collect();
        let (train_x, train_y) = featurize_pairs(&train_pairs, provider)?;
        let (test_x, test_y) = featurize_pairs(&test_pairs, provider)?;
        let fold_params = TrainParams {
            seed: split_seed,
            ..params.train.clone()
        };
        let model = train(&train_x, &train_y, &fold_params, provider.provider_id())?;
        let metrics = evaluate(&model, &test_x, &test_y)?;
        folds.push(FoldMetrics {
            fold,
            split_seed,
            n_train: train_x.len(),
            n_test: test_x.len(),
            metrics,
        });
    }
    let mean_accuracy =
        folds.iter().map(|f| f.metrics.accuracy).sum::<f64>() / folds.len() as f64;
    let max_deviation = folds
        .iter()
        .map(|f| (f.metrics.accuracy - mean_accuracy).abs())
        .fold(0.0, f64::max);
    Ok(CvReport {
        folds,
        mean_accuracy,
        max_deviation,
    })
}

pub fn write_metrics_json(metrics: &EvalMetrics, path: &Path) -> Result<()> {
    let json = serde_json::to_string_pretty(metrics).map_err(|e| Error::Format(e.to_string()))?;
    std::fs::write(path, json + "\n")?;
    Ok(())
}
