//! Recognition node: keypoint frames in, pose labels out.

use std::sync::{Arc, Mutex};

use rhyme_mimic_core::features::Degenerate;
use rhyme_mimic_core::gmm::{Classification, GmmClassifier};
use rhyme_mimic_core::{normalize, select_person, select_upper_body, ConfidenceThreshold, Rejection};
use serde::{Deserialize, Serialize};

use crate::bus::{topics, BusMessage};
use crate::node::{Context, Node};
use crate::wire::{self, FrameRecord};

/// Payload of `pose/classified`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PoseClassification {
    pub timestamp_ms: u64,
    pub label: String,
    pub class: usize,
    pub score: f64,
    pub log_density: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub enum FrameOutcome {
    Classified(PoseClassification),
    NoPerson,
    LowConfidence(Rejection),
    Degenerate(Degenerate),
    /// Below the classifier's rejection threshold.
    Unrecognized {
        class: usize,
        log_density: f64,
    },
}

/// Skip and output counters of the recognition pipeline.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct PipelineStats {
    pub frames: u64,
    pub classified: u64,
    pub no_person: u64,
    pub low_confidence: u64,
    pub degenerate: u64,
    pub unrecognized: u64,
    pub malformed: u64,
}

impl PipelineStats {
    pub fn count(&mut self, outcome: &FrameOutcome) {
        self.frames += 1;
        match outcome {
            FrameOutcome::Classified(_) => self.classified += 1,
            FrameOutcome::NoPerson => self.no_person += 1,
            FrameOutcome::LowConfidence(_) => self.low_confidence += 1,
            FrameOutcome::Degenerate(_) => self.degenerate += 1,
            FrameOutcome::Unrecognized { .. } => self.unrecognized += 1,
        }
    }

    pub fn skipped(&self) -> u64 {
        self.frames - self.classified
    }
}

/// select_person, select_upper_body, normalize, classify.
pub fn classify_record(
    classifier: &GmmClassifier,
    threshold: ConfidenceThreshold,
    record: &FrameRecord,
) -> FrameOutcome {
    let Some(person) = select_person(&record.people) else { return FrameOutcome::NoPerson };
    let joints = match select_upper_body(person, threshold) {
        Ok(j) => j,
        Err(r) => return FrameOutcome::LowConfidence(r),
    };
    let pose = match normalize(&joints, classifier.reference_indices()) {
        Ok(p) => p,
        Err(d) => return FrameOutcome::Degenerate(d),
    };
    match classifier.classify(&pose) {
        Ok(Classification::Accepted { class, label, score, log_density }) => {
            FrameOutcome::Classified(PoseClassification {
                timestamp_ms: record.timestamp_ms,
                label,
                class,
                score,
                log_density,
            })
        }
        Ok(Classification::Rejected { class, log_density }) => FrameOutcome::Unrecognized { class, log_density },
        // a 16-dimensional pose always matches a loaded model
        Err(e) => unreachable!("feature dimension checked at load: {e}"),
    }
}

pub struct PoseNode {
    classifier: GmmClassifier,
    threshold: ConfidenceThreshold,
    stats: Arc<Mutex<PipelineStats>>,
}

impl PoseNode {
    pub fn new(classifier: GmmClassifier, threshold: ConfidenceThreshold) -> Self {
        PoseNode { classifier, threshold, stats: Arc::default() }
    }

    pub fn stats(&self) -> Arc<Mutex<PipelineStats>> {
        self.stats.clone()
    }
}

impl Node for PoseNode {
    fn name(&self) -> &str {
        "pose-recognition"
    }

    fn subscriptions(&self) -> Vec<String> {
        vec![topics::POSE_FRAMES.into()]
    }

    fn on_message(&mut self, msg: &BusMessage, ctx: &mut Context<'_>) {
        let record = match wire::parse_value(&msg.payload, Some(msg.timestamp_ms)) {
            Ok(r) => r,
            Err(e) => {
                log::warn!("pose node: skipping frame from {}: {e}", msg.node_id);
                self.stats.lock().unwrap_or_else(|e| e.into_inner()).malformed += 1;
                return;
            }
        };
        let outcome = classify_record(&self.classifier, self.threshold, &record);
        self.stats.lock().unwrap_or_else(|e| e.into_inner()).count(&outcome);
        if let FrameOutcome::Classified(c) = outcome {
            ctx.publish(topics::POSE_CLASSIFIED, serde_json::to_value(&c).expect("classification serializes"));
        }
    }
}
