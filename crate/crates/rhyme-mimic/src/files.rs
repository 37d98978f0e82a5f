//! On-disk formats: trained models, labeled datasets and rhyme scripts.

use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use rhyme_mimic_core::game::{GameError, RhymeScript};
use rhyme_mimic_core::gmm::{
    ClassModel, Covariance, CovarianceKind, GaussianComponent, GmmClassifier, LabeledDataset, TrainingConfig,
};
use rhyme_mimic_core::{normalize, select_upper_body, ConfidenceThreshold, ReferenceIndices};
use serde::{Deserialize, Serialize};

use crate::wire;

pub const MODEL_FORMAT: &str = "rhyme-mimic-model";
pub const MODEL_VERSION: u32 = 1;

#[derive(Debug, thiserror::Error)]
pub enum ModelIoError {
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("model file version {found}, this build reads version {expected}")]
    VersionMismatch { found: u32, expected: u32 },
    #[error("corrupt model file: {0}")]
    CorruptModel(String),
}

#[derive(Debug, Serialize, Deserialize)]
struct ModelFile {
    format: String,
    version: u32,
    feature_dim: usize,
    reference_indices: ReferenceIndices,
    covariance_kind: CovarianceKind,
    rejection_log_density: Option<f64>,
    classes: Vec<ClassEntry>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    training: Option<TrainingConfig>,
}

#[derive(Debug, Serialize, Deserialize)]
struct ClassEntry {
    label: String,
    prior: f64,
    components: Vec<ComponentEntry>,
}

#[derive(Debug, Serialize, Deserialize)]
struct ComponentEntry {
    weight: f64,
    mean: Vec<f64>,
    /// Variances for diagonal models, row-major matrix for full ones.
    covariance: Vec<f64>,
}

#[derive(Deserialize)]
struct VersionProbe {
    #[serde(default)]
    format: Option<String>,
    version: u32,
}

/// Serializes a classifier. `training` is recorded for provenance only.
pub fn model_to_string(classifier: &GmmClassifier, training: Option<&TrainingConfig>) -> String {
    let file = ModelFile {
        format: MODEL_FORMAT.into(),
        version: MODEL_VERSION,
        feature_dim: classifier.feature_dim(),
        reference_indices: classifier.reference_indices(),
        covariance_kind: classifier.covariance_kind(),
        rejection_log_density: classifier.rejection_log_density(),
        classes: classifier
            .classes()
            .iter()
            .zip(classifier.priors())
            .map(|(c, &prior)| ClassEntry {
                label: c.label.clone(),
                prior,
                components: c
                    .components
                    .iter()
                    .map(|k| ComponentEntry {
                        weight: k.weight,
                        mean: k.mean.clone(),
                        covariance: match &k.covariance {
                            Covariance::Diagonal(v) | Covariance::Full(v) => v.clone(),
                        },
                    })
                    .collect(),
            })
            .collect(),
        training: training.cloned(),
    };
    let mut s = serde_json::to_string_pretty(&file).expect("model serializes");
    s.push('\n');
    s
}

pub fn model_from_str(text: &str) -> Result<GmmClassifier, ModelIoError> {
    let probe: VersionProbe = serde_json::from_str(text).map_err(|e| ModelIoError::CorruptModel(e.to_string()))?;
    if probe.format.as_deref().is_some_and(|f| f != MODEL_FORMAT) {
        return Err(ModelIoError::CorruptModel(format!("unexpected format tag {:?}", probe.format)));
    }
    if probe.version != MODEL_VERSION {
        return Err(ModelIoError::VersionMismatch { found: probe.version, expected: MODEL_VERSION });
    }
    let file: ModelFile = serde_json::from_str(text).map_err(|e| ModelIoError::CorruptModel(e.to_string()))?;
    let dim = file.feature_dim;
    let mut classes = Vec::with_capacity(file.classes.len());
    let mut priors = Vec::with_capacity(file.classes.len());
    for class in file.classes {
        let mut components = Vec::with_capacity(class.components.len());
        for c in class.components {
            if c.mean.len() != dim {
                return Err(ModelIoError::CorruptModel(format!(
                    "class {:?}: mean has {} values",
                    class.label,
                    c.mean.len()
                )));
            }
            let covariance = match file.covariance_kind {
                CovarianceKind::Diagonal if c.covariance.len() == dim => Covariance::Diagonal(c.covariance),
                CovarianceKind::Full if c.covariance.len() == dim * dim => Covariance::Full(c.covariance),
                _ => {
                    return Err(ModelIoError::CorruptModel(format!(
                        "class {:?}: covariance has {} values",
                        class.label,
                        c.covariance.len()
                    )))
                }
            };
            components.push(GaussianComponent { weight: c.weight, mean: c.mean, covariance });
        }
        classes.push(ClassModel { label: class.label, components });
        priors.push(class.prior);
    }
    GmmClassifier::new(classes, priors, file.reference_indices, file.rejection_log_density)
        .map_err(|e| ModelIoError::CorruptModel(e.to_string()))
}

pub fn save_model(path: &Path, classifier: &GmmClassifier, training: Option<&TrainingConfig>) -> std::io::Result<()> {
    fs::write(path, model_to_string(classifier, training))
}

pub fn load_model(path: &Path) -> Result<GmmClassifier, ModelIoError> {
    model_from_str(&fs::read_to_string(path)?)
}

#[derive(Debug, thiserror::Error)]
pub enum DatasetError {
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("line {line}: {message}")]
    BadRecord { line: usize, message: String },
}

/// One dataset line: either precomputed features or raw keypoint triples.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DatasetRecord {
    pub label: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub features: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub joints: Option<Vec<[f64; 3]>>,
}

/// A dataset read from disk, with the raw-joint rows that were skipped
/// because of low confidence or degenerate geometry.
#[derive(Debug, Clone)]
pub struct DatasetFile {
    pub dataset: LabeledDataset,
    pub skipped: Vec<(usize, String)>,
}

/// Reads newline-delimited dataset records. Raw-joint rows go through the
/// same selection and normalization as live frames.
pub fn read_dataset(
    reader: impl BufRead,
    reference: ReferenceIndices,
    threshold: ConfidenceThreshold,
) -> Result<DatasetFile, DatasetError> {
    let mut dataset = LabeledDataset::new();
    let mut skipped = Vec::new();
    for (n, line) in reader.lines().enumerate() {
        let line = line?;
        let line_no = n + 1;
        if line.trim().is_empty() {
            continue;
        }
        let rec: DatasetRecord = serde_json::from_str(&line)
            .map_err(|e| DatasetError::BadRecord { line: line_no, message: e.to_string() })?;
        match (rec.features, rec.joints) {
            (Some(features), None) => dataset.push(&rec.label, features),
            (None, Some(joints)) => {
                let flat: Vec<f64> = joints.iter().flatten().copied().collect();
                let doc = serde_json::json!({ "people": [{ "pose_keypoints_2d": flat }] });
                let frame = wire::parse_value(&doc, None)
                    .map_err(|e| DatasetError::BadRecord { line: line_no, message: e.to_string() })?
                    .people
                    .remove(0);
                let upper = match select_upper_body(&frame, threshold) {
                    Ok(u) => u,
                    Err(r) => {
                        skipped.push((line_no, r.to_string()));
                        continue;
                    }
                };
                match normalize(&upper, reference) {
                    Ok(p) => dataset.push(&rec.label, p.0.to_vec()),
                    Err(d) => skipped.push((line_no, d.to_string())),
                }
            }
            _ => {
                return Err(DatasetError::BadRecord {
                    line: line_no,
                    message: "record needs exactly one of `features` or `joints`".into(),
                })
            }
        }
    }
    Ok(DatasetFile { dataset, skipped })
}

pub fn load_dataset(
    path: &Path,
    reference: ReferenceIndices,
    threshold: ConfidenceThreshold,
) -> Result<DatasetFile, DatasetError> {
    read_dataset(BufReader::new(fs::File::open(path)?), reference, threshold)
}

pub fn write_dataset(mut w: impl Write, dataset: &LabeledDataset) -> std::io::Result<()> {
    for (label, features) in dataset.iter() {
        let rec = DatasetRecord { label: label.into(), features: Some(features.to_vec()), joints: None };
        serde_json::to_writer(&mut w, &rec)?;
        w.write_all(b"\n")?;
    }
    w.flush()
}

#[derive(Debug, thiserror::Error)]
pub enum ScriptError {
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("script does not parse: {0}")]
    Parse(#[from] serde_json::Error),
    #[error(transparent)]
    Invalid(#[from] GameError),
}

pub fn script_from_str(text: &str) -> Result<RhymeScript, ScriptError> {
    let script: RhymeScript = serde_json::from_str(text)?;
    script.validate()?;
    Ok(script)
}

pub fn load_script(path: &Path) -> Result<RhymeScript, ScriptError> {
    script_from_str(&fs::read_to_string(path)?)
}

pub fn script_to_string(script: &RhymeScript) -> String {
    let mut s = serde_json::to_string_pretty(script).expect("script serializes");
    s.push('\n');
    s
}
