//! Shared-covariance linear discriminant analysis over preprocessed samples.
//!
//! The model is the Gaussian class-conditional classifier with a pooled,
//! shrunk covariance. Posteriors are the softmax of the linear discriminants
//! `w_k . x + b_k` where `w_k` solves `cov_shrunk * w_k = mu_k` and
//! `b_k = -1/2 mu_k . w_k + ln(prior_k)`.

use std::cmp::Ordering;

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::signal::{preprocess, ProbVector, SignalError};
use crate::types::{Intent, Recording};

pub const DEFAULT_SHRINKAGE: f64 = 1e-3;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ClassifierError {
    #[error("class `{intent}` has {count} samples, at least 2 required")]
    ClassAbsent { intent: Intent, count: usize },
    #[error("regularized covariance is not positive definite")]
    SingularCovariance,
    #[error("shrinkage {0} outside [0, 1]")]
    InvalidShrinkage(f64),
    #[error("sample has {got} features, expected {expected}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error(transparent)]
    Signal(#[from] SignalError),
}

/// How class priors are set at fit time.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PriorMode {
    #[default]
    Empirical,
    Uniform,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LdaConfig {
    pub shrinkage: f64,
    pub priors: PriorMode,
}

impl Default for LdaConfig {
    fn default() -> Self {
        Self { shrinkage: DEFAULT_SHRINKAGE, priors: PriorMode::Empirical }
    }
}

/// Row-major samples with their intent labels.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct LabeledDataset {
    dim: usize,
    x: Vec<f64>,
    y: Vec<Intent>,
}

impl LabeledDataset {
    pub fn new(dim: usize) -> Self {
        Self { dim, x: Vec::new(), y: Vec::new() }
    }

    pub fn push(&mut self, row: &[f64], label: Intent) -> Result<(), ClassifierError> {
        if row.len() != self.dim {
            return Err(ClassifierError::DimensionMismatch { expected: self.dim, got: row.len() });
        }
        self.x.extend_from_slice(row);
        self.y.push(label);
        Ok(())
    }

    /// Preprocessed labeled samples of every recording, in order.
    pub fn from_recordings<'a>(recordings: impl IntoIterator<Item = &'a Recording>) -> Result<Self, ClassifierError> {
        let mut data = Self::new(crate::types::CHANNELS);
        for rec in recordings {
            for (sample, intent) in rec.labeled() {
                data.push(&preprocess(&sample.channels)?, intent)?;
            }
        }
        Ok(data)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.x[i * self.dim..(i + 1) * self.dim]
    }

    pub fn label(&self, i: usize) -> Intent {
        self.y[i]
    }

    pub fn labels(&self) -> &[Intent] {
        &self.y
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        self.x.chunks_exact(self.dim.max(1))
    }

    pub fn class_counts(&self) -> [usize; 3] {
        let mut counts = [0; 3];
        for y in &self.y {
            counts[y.index()] += 1;
        }
        counts
    }
}

/// Something that turns a preprocessed sample into class probabilities.
pub trait IntentClassifier {
    fn predict_proba(&self, x: &[f64]) -> ProbVector;
}

#[derive(Debug, Clone, PartialEq)]
pub struct LdaModel {
    /// 3 x d, rows in intent order.
    pub means: DMatrix<f64>,
    /// Pooled within-class covariance.
    pub cov: DMatrix<f64>,
    pub cov_shrunk: DMatrix<f64>,
    pub priors: [f64; 3],
    /// 3 x d discriminant coefficients, rows in intent order.
    pub weights: DMatrix<f64>,
    pub biases: [f64; 3],
    pub shrinkage: f64,
}

fn lexicographic(a: &[f64], b: &[f64]) -> Ordering {
    a.iter().zip(b).map(|(x, y)| x.total_cmp(y)).find(|o| o.is_ne()).unwrap_or(Ordering::Equal)
}

/// Fits with empirical priors.
pub fn fit(data: &LabeledDataset, shrinkage: f64) -> Result<LdaModel, ClassifierError> {
    fit_with(data, &LdaConfig { shrinkage, priors: PriorMode::Empirical })
}

pub fn fit_with(data: &LabeledDataset, config: &LdaConfig) -> Result<LdaModel, ClassifierError> {
    let gamma = config.shrinkage;
    if !(0.0..=1.0).contains(&gamma) {
        return Err(ClassifierError::InvalidShrinkage(gamma));
    }
    let d = data.dim();
    let counts = data.class_counts();
    for intent in Intent::ALL {
        if counts[intent.index()] < 2 {
            return Err(ClassifierError::ClassAbsent { intent, count: counts[intent.index()] });
        }
    }

    // Rows are summed in sorted order within each class so the model does
    // not depend on sample order.
    let mut by_class: [Vec<usize>; 3] = Default::default();
    for (i, y) in data.labels().iter().enumerate() {
        by_class[y.index()].push(i);
    }
    for idx in &mut by_class {
        idx.sort_by(|&a, &b| lexicographic(data.row(a), data.row(b)));
    }

    let mut means = DMatrix::zeros(3, d);
    for (k, idx) in by_class.iter().enumerate() {
        let mut acc = vec![0.0; d];
        for &i in idx {
            for (a, v) in acc.iter_mut().zip(data.row(i)) {
                *a += v;
            }
        }
        for (j, a) in acc.iter().enumerate() {
            means[(k, j)] = a / idx.len() as f64;
        }
    }

    let mut scatter = DMatrix::<f64>::zeros(d, d);
    let mut centered = vec![0.0; d];
    for (k, idx) in by_class.iter().enumerate() {
        for &i in idx {
            for (j, c) in centered.iter_mut().enumerate() {
                *c = data.row(i)[j] - means[(k, j)];
            }
            for r in 0..d {
                for c in 0..=r {
                    scatter[(r, c)] += centered[r] * centered[c];
                }
            }
        }
    }
    let denom = (data.len() - 3) as f64;
    let mut cov = DMatrix::zeros(d, d);
    for r in 0..d {
        for c in 0..=r {
            let v = scatter[(r, c)] / denom;
            cov[(r, c)] = v;
            cov[(c, r)] = v;
        }
    }

    let priors = match config.priors {
        PriorMode::Empirical => counts.map(|c| c as f64 / data.len() as f64),
        PriorMode::Uniform => [1.0 / 3.0; 3],
    };
    let cov_shrunk = shrink(&cov, gamma);
    LdaModel::from_parts(means, cov, cov_shrunk, priors, gamma)
}

/// `(1 - gamma) * cov + gamma * (trace / d) * I`
pub fn shrink(cov: &DMatrix<f64>, gamma: f64) -> DMatrix<f64> {
    let d = cov.nrows();
    let target = cov.trace() / d as f64;
    let mut out = cov * (1.0 - gamma);
    for i in 0..d {
        out[(i, i)] += gamma * target;
    }
    out
}

impl LdaModel {
    /// Derives weights and biases from class means and the regularized
    /// covariance.
    pub fn from_parts(
        means: DMatrix<f64>,
        cov: DMatrix<f64>,
        cov_shrunk: DMatrix<f64>,
        priors: [f64; 3],
        shrinkage: f64,
    ) -> Result<Self, ClassifierError> {
        let chol: Cholesky<f64, Dyn> = Cholesky::new(cov_shrunk.clone()).ok_or(ClassifierError::SingularCovariance)?;
        // A zero or vanishing pivot still factors in floating point; treat it
        // as singular.
        let l = chol.l_dirty();
        let max_diag = (0..l.nrows()).map(|i| l[(i, i)]).fold(0.0f64, f64::max);
        let min_diag = (0..l.nrows()).map(|i| l[(i, i)]).fold(f64::INFINITY, f64::min);
        // Negated so a NaN pivot also counts as singular.
        #[allow(clippy::neg_cmp_op_on_partial_ord)]
        let singular = !(min_diag > max_diag * 1e-10);
        if singular {
            return Err(ClassifierError::SingularCovariance);
        }
        let solved = chol.solve(&means.transpose());
        let weights = solved.transpose();
        let mut biases = [0.0; 3];
        for (k, b) in biases.iter_mut().enumerate() {
            *b = -0.5 * means.row(k).dot(&weights.row(k)) + priors[k].ln();
        }
        if weights.iter().any(|w| !w.is_finite()) {
            return Err(ClassifierError::SingularCovariance);
        }
        Ok(Self { means, cov, cov_shrunk, priors, weights, biases, shrinkage })
    }

    pub fn dim(&self) -> usize {
        self.means.ncols()
    }

    /// Linear discriminant scores in intent order.
    pub fn discriminants(&self, x: &[f64]) -> [f64; 3] {
        debug_assert_eq!(x.len(), self.dim());
        std::array::from_fn(|k| {
            let row = self.weights.row(k);
            row.iter().zip(x).map(|(w, v)| w * v).sum::<f64>() + self.biases[k]
        })
    }

    pub fn weight_matrix(&self) -> &DMatrix<f64> {
        &self.weights
    }

    pub fn weight_row(&self, intent: Intent) -> Vec<f64> {
        self.weights.row(intent.index()).iter().copied().collect()
    }

    pub fn mean_row(&self, intent: Intent) -> DVector<f64> {
        self.means.row(intent.index()).transpose()
    }
}

pub fn softmax(scores: [f64; 3]) -> ProbVector {
    let max = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exp = scores.map(|s| (s - max).exp());
    let sum: f64 = exp.iter().sum();
    ProbVector(exp.map(|e| e / sum))
}

pub fn predict_proba(model: &LdaModel, x: &[f64]) -> ProbVector {
    softmax(model.discriminants(x))
}

impl IntentClassifier for LdaModel {
    fn predict_proba(&self, x: &[f64]) -> ProbVector {
        predict_proba(self, x)
    }
}

/// Rows of [`LdaModel::weights`], in intent order.
pub fn weight_matrix(model: &LdaModel) -> &DMatrix<f64> {
    model.weight_matrix()
}

/// Population variance of the weights for one intent.
pub fn weight_variance(model: &LdaModel, intent: Intent) -> f64 {
    population_variance(&model.weight_row(intent))
}

/// Divides by n. Deviations are taken from the first value before the mean
/// is removed, so a constant row gives exactly zero.
pub fn population_variance(values: &[f64]) -> f64 {
    let Some(&pivot) = values.first() else { return 0.0 };
    let n = values.len() as f64;
    let shift = values.iter().map(|v| v - pivot).sum::<f64>() / n;
    values.iter().map(|v| (v - pivot - shift).powi(2)).sum::<f64>() / n
}
