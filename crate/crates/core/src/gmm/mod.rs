//! Gaussian-mixture pose classifier.
//!
//! Every pose class gets its own mixture of `K` Gaussians fitted by EM on that
//! class's samples. A pose is assigned to the class maximizing
//! `log prior + log mixture density`; ties go to the lowest class index.

mod em;
mod eval;

use alloc::string::String;
use alloc::vec::Vec;

use crate::features::{NormalizedPose, ReferenceIndices, FEATURE_DIM};
use crate::linalg;
use crate::rng::SeededRng;
use crate::skeleton::UpperBodyJoints;

pub use em::{em_fit, EmTrace};
pub use eval::{evaluate, split, ConfusionMatrix, EvaluationReport};

const LN_2PI: f64 = 1.837_877_066_409_345_5;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum GmmError {
    #[error("class {label:?} has {count} samples, needs at least {needed}")]
    InsufficientSamples { label: String, count: usize, needed: usize },
    #[error("covariance of class {label:?} component {component} is not positive definite")]
    SingularCovariance { label: String, component: usize },
    #[error("expected dimension {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("dataset is empty")]
    EmptyDataset,
    #[error("label {0:?} is not known to the classifier")]
    UnknownLabel(String),
    #[error("non-finite feature value in sample {0}")]
    NonFiniteSample(usize),
    #[error("invalid model: {0}")]
    InvalidModel(&'static str),
    #[error("invalid training configuration: {0}")]
    InvalidConfig(&'static str),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "lowercase"))]
pub enum CovarianceKind {
    #[default]
    #[cfg_attr(feature = "serde", serde(alias = "diag"))]
    Diagonal,
    Full,
}

/// Component covariance. `Full` is row-major `dim × dim`.
#[derive(Debug, Clone, PartialEq)]
pub enum Covariance {
    Diagonal(Vec<f64>),
    Full(Vec<f64>),
}

impl Covariance {
    pub fn kind(&self) -> CovarianceKind {
        match self {
            Covariance::Diagonal(_) => CovarianceKind::Diagonal,
            Covariance::Full(_) => CovarianceKind::Full,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GaussianComponent {
    pub weight: f64,
    pub mean: Vec<f64>,
    pub covariance: Covariance,
}

impl GaussianComponent {
    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    /// `log N(x; mean, cov)`. Assumes `x.len() == self.dim()`.
    ///
    /// Returns `None` when a full covariance is not positive definite.
    pub fn log_pdf(&self, x: &[f64]) -> Option<f64> {
        let n = self.dim();
        match &self.covariance {
            Covariance::Diagonal(var) => {
                let mut quad = 0.0;
                let mut log_det = 0.0;
                for i in 0..n {
                    let d = x[i] - self.mean[i];
                    quad += d * d / var[i];
                    log_det += libm::log(var[i]);
                }
                Some(-0.5 * (n as f64 * LN_2PI + log_det + quad))
            }
            Covariance::Full(cov) => {
                let l = linalg::cholesky(cov, n)?;
                let d: Vec<f64> = x.iter().zip(&self.mean).map(|(a, b)| a - b).collect();
                let quad = linalg::mahalanobis_sq(&l, n, &d);
                Some(-0.5 * (n as f64 * LN_2PI + linalg::log_det_from_cholesky(&l, n) + quad))
            }
        }
    }

    fn validate(&self, dim: usize) -> Result<(), GmmError> {
        if self.mean.len() != dim {
            return Err(GmmError::DimensionMismatch { expected: dim, got: self.mean.len() });
        }
        if !(self.weight > 0.0 && self.weight <= 1.0) {
            return Err(GmmError::InvalidModel("component weight outside (0, 1]"));
        }
        if self.mean.iter().any(|v| !v.is_finite()) {
            return Err(GmmError::InvalidModel("non-finite mean"));
        }
        match &self.covariance {
            Covariance::Diagonal(v) => {
                if v.len() != dim {
                    return Err(GmmError::DimensionMismatch { expected: dim, got: v.len() });
                }
                if v.iter().any(|s| !(*s > 0.0 && s.is_finite())) {
                    return Err(GmmError::InvalidModel("variance must be positive and finite"));
                }
            }
            Covariance::Full(m) => {
                if m.len() != dim * dim {
                    return Err(GmmError::DimensionMismatch { expected: dim * dim, got: m.len() });
                }
                for i in 0..dim {
                    for j in 0..i {
                        if m[i * dim + j] != m[j * dim + i] {
                            return Err(GmmError::InvalidModel("covariance is not symmetric"));
                        }
                    }
                }
                if linalg::cholesky(m, dim).is_none() {
                    return Err(GmmError::InvalidModel("covariance is not positive definite"));
                }
            }
        }
        Ok(())
    }
}

/// Numerically stable `log Σ exp(v)`. Empty input gives `-inf`.
pub fn log_sum_exp(values: &[f64]) -> f64 {
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    max + libm::log(values.iter().map(|v| libm::exp(v - max)).sum::<f64>())
}

/// Mixture for one pose class.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassModel {
    pub label: String,
    pub components: Vec<GaussianComponent>,
}

impl ClassModel {
    pub fn dim(&self) -> usize {
        self.components.first().map_or(0, |c| c.dim())
    }
}

/// `log Σ_k w_k N(x; μ_k, Σ_k)`.
pub fn log_density(model: &ClassModel, x: &[f64]) -> Result<f64, GmmError> {
    let dim = model.dim();
    if x.len() != dim {
        return Err(GmmError::DimensionMismatch { expected: dim, got: x.len() });
    }
    let terms: Vec<f64> =
        model.components.iter().map(|c| libm::log(c.weight) + c.log_pdf(x).unwrap_or(f64::NEG_INFINITY)).collect();
    Ok(log_sum_exp(&terms))
}

#[derive(Debug, Clone, PartialEq)]
pub enum Classification {
    Accepted {
        class: usize,
        label: String,
        score: f64,
        log_density: f64,
    },
    /// Best class fell below the rejection threshold.
    Rejected {
        class: usize,
        log_density: f64,
    },
}

impl Classification {
    pub fn label(&self) -> Option<&str> {
        match self {
            Classification::Accepted { label, .. } => Some(label),
            Classification::Rejected { .. } => None,
        }
    }
}

/// Trained recognition model.
#[derive(Debug, Clone, PartialEq)]
pub struct GmmClassifier {
    classes: Vec<ClassModel>,
    priors: Vec<f64>,
    rejection_log_density: Option<f64>,
    feature_dim: usize,
    reference_indices: ReferenceIndices,
    covariance_kind: CovarianceKind,
}

impl GmmClassifier {
    /// Assembles a classifier from parts, checking every model invariant.
    pub fn new(
        classes: Vec<ClassModel>,
        priors: Vec<f64>,
        reference_indices: ReferenceIndices,
        rejection_log_density: Option<f64>,
    ) -> Result<Self, GmmError> {
        let first = classes.first().ok_or(GmmError::InvalidModel("no classes"))?;
        let feature_dim = first.dim();
        let covariance_kind =
            first.components.first().ok_or(GmmError::InvalidModel("class without components"))?.covariance.kind();
        if priors.len() != classes.len() {
            return Err(GmmError::InvalidModel("one prior per class required"));
        }
        if priors.iter().any(|p| !(*p > 0.0 && p.is_finite())) {
            return Err(GmmError::InvalidModel("priors must be positive"));
        }
        if (priors.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return Err(GmmError::InvalidModel("priors must sum to 1"));
        }
        for (i, class) in classes.iter().enumerate() {
            if class.components.is_empty() {
                return Err(GmmError::InvalidModel("class without components"));
            }
            if classes[..i].iter().any(|c| c.label == class.label) {
                return Err(GmmError::InvalidModel("duplicate class label"));
            }
            let mut weight_sum = 0.0;
            for comp in &class.components {
                comp.validate(feature_dim)?;
                if comp.covariance.kind() != covariance_kind {
                    return Err(GmmError::InvalidModel("mixed covariance kinds"));
                }
                weight_sum += comp.weight;
            }
            if (weight_sum - 1.0).abs() > 1e-9 {
                return Err(GmmError::InvalidModel("component weights must sum to 1"));
            }
        }
        if rejection_log_density.is_some_and(|t| t.is_nan()) {
            return Err(GmmError::InvalidModel("rejection threshold is NaN"));
        }
        Ok(GmmClassifier { classes, priors, rejection_log_density, feature_dim, reference_indices, covariance_kind })
    }

    pub fn classes(&self) -> &[ClassModel] {
        &self.classes
    }

    pub fn labels(&self) -> impl Iterator<Item = &str> {
        self.classes.iter().map(|c| c.label.as_str())
    }

    pub fn class_index(&self, label: &str) -> Option<usize> {
        self.classes.iter().position(|c| c.label == label)
    }

    pub fn priors(&self) -> &[f64] {
        &self.priors
    }

    pub fn feature_dim(&self) -> usize {
        self.feature_dim
    }

    pub fn reference_indices(&self) -> ReferenceIndices {
        self.reference_indices
    }

    pub fn covariance_kind(&self) -> CovarianceKind {
        self.covariance_kind
    }

    pub fn rejection_log_density(&self) -> Option<f64> {
        self.rejection_log_density
    }

    pub fn set_rejection_log_density(&mut self, threshold: Option<f64>) {
        self.rejection_log_density = threshold;
    }

    pub fn classify(&self, x: &[f64]) -> Result<Classification, GmmError> {
        self.classify_with_priors(x, &self.priors)
    }

    /// Like [`classify`](Self::classify) with caller-supplied, possibly
    /// unnormalized, class priors.
    pub fn classify_with_priors(&self, x: &[f64], priors: &[f64]) -> Result<Classification, GmmError> {
        if x.len() != self.feature_dim {
            return Err(GmmError::DimensionMismatch { expected: self.feature_dim, got: x.len() });
        }
        if priors.len() != self.classes.len() {
            return Err(GmmError::DimensionMismatch { expected: self.classes.len(), got: priors.len() });
        }
        let mut best: Option<(usize, f64, f64)> = None;
        for (i, (class, prior)) in self.classes.iter().zip(priors).enumerate() {
            let density = log_density(class, x)?;
            let score = libm::log(*prior) + density;
            // strict comparison keeps the lowest index on ties
            if best.is_none_or(|(_, s, _)| score > s) {
                best = Some((i, score, density));
            }
        }
        let (class, score, density) = best.expect("classifier has at least one class");
        if self.rejection_log_density.is_some_and(|t| density < t) {
            return Ok(Classification::Rejected { class, log_density: density });
        }
        Ok(Classification::Accepted { class, label: self.classes[class].label.clone(), score, log_density: density })
    }
}

/// Training hyper-parameters.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default))]
pub struct TrainingConfig {
    pub components_per_class: usize,
    pub covariance_kind: CovarianceKind,
    pub max_iterations: usize,
    pub log_likelihood_tolerance: f64,
    pub variance_floor: f64,
    pub ridge_lambda: f64,
    pub rng_seed: u64,
    pub reference_indices: ReferenceIndices,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        TrainingConfig {
            components_per_class: 1,
            covariance_kind: CovarianceKind::Diagonal,
            max_iterations: 200,
            log_likelihood_tolerance: 1e-6,
            variance_floor: 1e-6,
            ridge_lambda: 1e-4,
            rng_seed: 0,
            reference_indices: ReferenceIndices::DEFAULT,
        }
    }
}

impl TrainingConfig {
    fn validate(&self) -> Result<(), GmmError> {
        if self.components_per_class == 0 {
            return Err(GmmError::InvalidConfig("components_per_class must be at least 1"));
        }
        if self.max_iterations == 0 {
            return Err(GmmError::InvalidConfig("max_iterations must be at least 1"));
        }
        if !(self.log_likelihood_tolerance > 0.0) {
            return Err(GmmError::InvalidConfig("log_likelihood_tolerance must be positive"));
        }
        if !(self.variance_floor > 0.0) {
            return Err(GmmError::InvalidConfig("variance_floor must be positive"));
        }
        if !(self.ridge_lambda > 0.0) {
            return Err(GmmError::InvalidConfig("ridge_lambda must be positive"));
        }
        Ok(())
    }
}

/// Feature vectors tagged with class labels.
///
/// The label set is kept in first-seen order unless declared up front; that
/// order becomes the class index order of a trained classifier.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct LabeledDataset {
    labels: Vec<String>,
    records: Vec<(usize, Vec<f64>)>,
}

impl LabeledDataset {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with_labels<I, S>(labels: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let mut ds = Self::new();
        for l in labels {
            ds.label_index(&l.into());
        }
        ds
    }

    fn label_index(&mut self, label: &str) -> usize {
        match self.labels.iter().position(|l| l == label) {
            Some(i) => i,
            None => {
                self.labels.push(label.into());
                self.labels.len() - 1
            }
        }
    }

    pub fn push(&mut self, label: &str, features: Vec<f64>) {
        let i = self.label_index(label);
        self.records.push((i, features));
    }

    /// Normalizes raw joints before storing them.
    pub fn push_joints(
        &mut self,
        label: &str,
        joints: &UpperBodyJoints,
        reference: ReferenceIndices,
    ) -> Result<(), crate::features::Degenerate> {
        let pose = crate::features::normalize(joints, reference)?;
        self.push(label, pose.0.to_vec());
        Ok(())
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &[f64])> {
        self.records.iter().map(|(i, f)| (self.labels[*i].as_str(), f.as_slice()))
    }

    pub(crate) fn records(&self) -> &[(usize, Vec<f64>)] {
        &self.records
    }

    pub fn class_samples(&self, class: usize) -> Vec<&[f64]> {
        self.records.iter().filter(|(i, _)| *i == class).map(|(_, f)| f.as_slice()).collect()
    }

    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = alloc::vec![0; self.labels.len()];
        for (i, _) in &self.records {
            counts[*i] += 1;
        }
        counts
    }

    fn empty_like(&self) -> Self {
        LabeledDataset { labels: self.labels.clone(), records: Vec::new() }
    }
}

/// Fits one mixture per label and sets priors to the empirical class frequencies.
pub fn train(data: &LabeledDataset, config: &TrainingConfig) -> Result<GmmClassifier, GmmError> {
    train_with_traces(data, config).map(|(c, _)| c)
}

/// [`train`], also returning the EM trace of every class in label order.
pub fn train_with_traces(
    data: &LabeledDataset,
    config: &TrainingConfig,
) -> Result<(GmmClassifier, Vec<EmTrace>), GmmError> {
    config.validate()?;
    if data.is_empty() {
        return Err(GmmError::EmptyDataset);
    }
    let dim = data.records[0].1.len();
    for (n, (_, f)) in data.records.iter().enumerate() {
        if f.len() != dim {
            return Err(GmmError::DimensionMismatch { expected: dim, got: f.len() });
        }
        if f.iter().any(|v| !v.is_finite()) {
            return Err(GmmError::NonFiniteSample(n));
        }
    }
    let needed = config.components_per_class + 1;
    let counts = data.class_counts();
    for (label, &count) in data.labels.iter().zip(&counts) {
        if count < needed {
            return Err(GmmError::InsufficientSamples { label: label.clone(), count, needed });
        }
    }

    let mut classes = Vec::with_capacity(data.labels.len());
    let mut traces = Vec::with_capacity(data.labels.len());
    for (class, label) in data.labels.iter().enumerate() {
        let samples = data.class_samples(class);
        let mut rng = SeededRng::derive(config.rng_seed, class as u64);
        let (components, trace) =
            em_fit(&samples, config.components_per_class, config, &mut rng).map_err(|e| match e {
                GmmError::SingularCovariance { component, .. } => {
                    GmmError::SingularCovariance { label: label.clone(), component }
                }
                other => other,
            })?;
        classes.push(ClassModel { label: label.clone(), components });
        traces.push(trace);
    }
    let total = data.len() as f64;
    let mut priors: Vec<f64> = counts.iter().map(|&c| c as f64 / total).collect();
    // exact division can leave the sum a few ulps off 1; fold the residue into the largest prior
    let residue = 1.0 - priors.iter().sum::<f64>();
    if let Some(max) = priors.iter_mut().max_by(|a, b| a.total_cmp(b)) {
        *max += residue;
    }
    let classifier = GmmClassifier::new(classes, priors, config.reference_indices, None)?;
    Ok((classifier, traces))
}

/// Convenience wrapper classifying a [`NormalizedPose`].
pub fn classify(classifier: &GmmClassifier, pose: &NormalizedPose) -> Result<Classification, GmmError> {
    debug_assert_eq!(pose.len(), FEATURE_DIM);
    classifier.classify(pose)
}

#[cfg(test)]
mod tests;
