//! Keypoint wire format: one JSON document per frame, newline-delimited in
//! streams.
//!
//! ```json
//! {"people":[{"pose_keypoints_2d":[x0,y0,c0, x1,y1,c1, ...]}],"timestamp_ms":66}
//! ```
//!
//! Unknown fields (face and hand keypoints, `version`, ...) are ignored.

use std::io::BufRead;

use rhyme_mimic_core::skeleton::FrameError;
use rhyme_mimic_core::{Keypoint, SkeletonFrame, SkeletonModel};
use serde::{Deserialize, Serialize};
use serde_json::Value;

/// Spacing assumed between frames that carry no `timestamp_ms`.
pub const DEFAULT_FRAME_INTERVAL_MS: u64 = 33;

#[derive(Debug, thiserror::Error)]
pub enum IngestError {
    #[error("malformed frame document: {0}")]
    MalformedDocument(String),
    #[error("person {person}: {count} keypoint triples, expected 18 or 25")]
    BadJointCount { person: usize, count: usize },
    #[error("person {person}: non-finite value at keypoint {joint}")]
    NonFiniteValue { person: usize, joint: usize },
    #[error("person {person}: confidence {value} of keypoint {joint} outside [0, 1]")]
    ConfidenceOutOfRange { person: usize, joint: usize, value: f64 },
}

#[derive(Debug, thiserror::Error)]
pub enum StreamError {
    #[error("line {line}: {source}")]
    Frame { line: usize, source: IngestError },
    #[error("line {line}: timestamp {timestamp_ms} goes backwards")]
    NonMonotonicTimestamp { line: usize, timestamp_ms: u64 },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Deserialize)]
struct RawDocument {
    people: Vec<RawPerson>,
    #[serde(default)]
    timestamp_ms: Option<u64>,
}

#[derive(Deserialize)]
struct RawPerson {
    pose_keypoints_2d: Vec<Option<f64>>,
}

#[derive(Serialize)]
struct OutDocument<'a> {
    people: Vec<OutPerson>,
    #[serde(skip_serializing_if = "Option::is_none")]
    timestamp_ms: Option<&'a u64>,
}

#[derive(Serialize)]
struct OutPerson {
    pose_keypoints_2d: Vec<f64>,
}

/// All persons detected in one frame.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameRecord {
    pub timestamp_ms: u64,
    pub people: Vec<SkeletonFrame>,
}

/// Parses one frame document. A missing `timestamp_ms` reads as 0.
pub fn parse_frame(raw: &[u8]) -> Result<Vec<SkeletonFrame>, IngestError> {
    parse_document(raw, None).map(|r| r.people)
}

/// Parses one frame document, using `default_timestamp_ms` when the
/// document has none.
pub fn parse_document(raw: &[u8], default_timestamp_ms: Option<u64>) -> Result<FrameRecord, IngestError> {
    let doc = serde_json::from_slice(raw).map_err(|e| IngestError::MalformedDocument(e.to_string()))?;
    build_record(doc, default_timestamp_ms)
}

/// Parses a frame document already decoded into a JSON value.
pub fn parse_value(value: &Value, default_timestamp_ms: Option<u64>) -> Result<FrameRecord, IngestError> {
    let doc = RawDocument::deserialize(value).map_err(|e| IngestError::MalformedDocument(e.to_string()))?;
    build_record(doc, default_timestamp_ms)
}

fn build_record(doc: RawDocument, default_timestamp_ms: Option<u64>) -> Result<FrameRecord, IngestError> {
    let timestamp_ms = doc.timestamp_ms.or(default_timestamp_ms).unwrap_or(0);
    let people = doc
        .people
        .into_iter()
        .enumerate()
        .map(|(person, p)| person_frame(person, &p.pose_keypoints_2d, timestamp_ms))
        .collect::<Result<_, _>>()?;
    Ok(FrameRecord { timestamp_ms, people })
}

fn person_frame(person: usize, flat: &[Option<f64>], timestamp_ms: u64) -> Result<SkeletonFrame, IngestError> {
    if !flat.len().is_multiple_of(3) {
        return Err(IngestError::MalformedDocument(format!(
            "person {person}: pose_keypoints_2d has {} values, not a multiple of 3",
            flat.len()
        )));
    }
    let count = flat.len() / 3;
    if SkeletonModel::from_joint_count(count).is_none() {
        return Err(IngestError::BadJointCount { person, count });
    }
    let mut joints = Vec::with_capacity(count);
    for (joint, t) in flat.chunks_exact(3).enumerate() {
        match (t[0], t[1], t[2]) {
            (Some(x), Some(y), Some(confidence)) => joints.push(Keypoint { x, y, confidence }),
            _ => return Err(IngestError::NonFiniteValue { person, joint }),
        }
    }
    SkeletonFrame::new(joints, timestamp_ms, person).map_err(|e| match e {
        FrameError::BadJointCount(count) => IngestError::BadJointCount { person, count },
        FrameError::NonFiniteValue { joint } => IngestError::NonFiniteValue { person, joint },
        FrameError::ConfidenceOutOfRange { joint, value } => IngestError::ConfidenceOutOfRange { person, joint, value },
    })
}

/// Serializes persons back into one frame document.
pub fn to_value(people: &[SkeletonFrame], timestamp_ms: Option<u64>) -> Value {
    let doc = OutDocument {
        people: people
            .iter()
            .map(|p| OutPerson {
                pose_keypoints_2d: p.joints().iter().flat_map(|k| [k.x, k.y, k.confidence]).collect(),
            })
            .collect(),
        timestamp_ms: timestamp_ms.as_ref(),
    };
    serde_json::to_value(doc).expect("frame document serializes")
}

pub fn serialize_frame(people: &[SkeletonFrame], timestamp_ms: Option<u64>) -> Vec<u8> {
    serde_json::to_vec(&to_value(people, timestamp_ms)).expect("frame document serializes")
}

/// Reads a newline-delimited stream. Blank lines are skipped; frame `i`
/// without a timestamp gets `i × 33 ms`.
pub fn read_stream(reader: impl BufRead) -> Result<Vec<FrameRecord>, StreamError> {
    let mut out: Vec<FrameRecord> = Vec::new();
    for (n, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let default = out.len() as u64 * DEFAULT_FRAME_INTERVAL_MS;
        let rec = parse_document(line.as_bytes(), Some(default))
            .map_err(|source| StreamError::Frame { line: n + 1, source })?;
        if let Some(prev) = out.last() {
            if rec.timestamp_ms < prev.timestamp_ms {
                return Err(StreamError::NonMonotonicTimestamp { line: n + 1, timestamp_ms: rec.timestamp_ms });
            }
        }
        out.push(rec);
    }
    Ok(out)
}

pub fn write_stream(mut w: impl std::io::Write, frames: &[FrameRecord]) -> std::io::Result<()> {
    for f in frames {
        serde_json::to_writer(&mut w, &to_value(&f.people, Some(f.timestamp_ms)))?;
        w.write_all(b"\n")?;
    }
    w.flush()
}
