//! Accuracy evaluation and stratified splitting.

use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use super::{Classification, GmmClassifier, GmmError, LabeledDataset};
use crate::rng::SeededRng;

/// Counts indexed `[true class][predicted class]`; the extra last column
/// counts rejected samples.
#[derive(Debug, Clone, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct ConfusionMatrix {
    pub labels: Vec<String>,
    pub counts: Vec<Vec<usize>>,
}

impl ConfusionMatrix {
    fn new(labels: Vec<String>) -> Self {
        let n = labels.len();
        ConfusionMatrix { labels, counts: vec![vec![0; n + 1]; n] }
    }

    pub fn rejected_column(&self) -> usize {
        self.labels.len()
    }

    pub fn row_total(&self, class: usize) -> usize {
        self.counts[class].iter().sum()
    }
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct EvaluationReport {
    pub total: usize,
    pub correct: usize,
    pub accuracy: f64,
    /// `None` for classes absent from the evaluated data.
    pub per_class_recall: Vec<Option<f64>>,
    pub confusion: ConfusionMatrix,
}

pub fn evaluate(classifier: &GmmClassifier, test: &LabeledDataset) -> Result<EvaluationReport, GmmError> {
    if test.is_empty() {
        return Err(GmmError::EmptyDataset);
    }
    let labels: Vec<String> = classifier.labels().map(String::from).collect();
    let mut confusion = ConfusionMatrix::new(labels);
    let mut correct = 0;
    for (label, features) in test.iter() {
        let truth = classifier.class_index(label).ok_or_else(|| GmmError::UnknownLabel(label.into()))?;
        let column = match classifier.classify(features)? {
            Classification::Accepted { class, .. } => class,
            Classification::Rejected { .. } => confusion.rejected_column(),
        };
        if column == truth {
            correct += 1;
        }
        confusion.counts[truth][column] += 1;
    }
    let per_class_recall = (0..confusion.labels.len())
        .map(|c| {
            let total = confusion.row_total(c);
            (total > 0).then(|| confusion.counts[c][c] as f64 / total as f64)
        })
        .collect();
    let total = test.len();
    Ok(EvaluationReport { total, correct, accuracy: correct as f64 / total as f64, per_class_recall, confusion })
}

/// Stratified split: each class is shuffled independently and its first
/// `round(train_fraction · count)` samples (clamped so both sides keep at
/// least one) go to the training set.
pub fn split(
    data: &LabeledDataset,
    train_fraction: f64,
    rng_seed: u64,
) -> Result<(LabeledDataset, LabeledDataset), GmmError> {
    if !(train_fraction > 0.0 && train_fraction < 1.0) {
        return Err(GmmError::InvalidConfig("train_fraction must lie strictly between 0 and 1"));
    }
    let mut train = data.empty_like();
    let mut test = data.empty_like();
    for (class, label) in data.labels().iter().enumerate() {
        let mut members: Vec<usize> =
            data.records().iter().enumerate().filter(|(_, (c, _))| *c == class).map(|(i, _)| i).collect();
        let count = members.len();
        if count < 2 {
            return Err(GmmError::InsufficientSamples { label: label.clone(), count, needed: 2 });
        }
        let mut rng = SeededRng::derive(rng_seed, class as u64);
        rng.shuffle(&mut members);
        let n_train = (libm::round(train_fraction * count as f64) as usize).clamp(1, count - 1);
        for (pos, &i) in members.iter().enumerate() {
            let record = data.records()[i].clone();
            if pos < n_train {
                train.records.push(record);
            } else {
                test.records.push(record);
            }
        }
    }
    Ok((train, test))
}
