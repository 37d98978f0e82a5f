//! Skeleton layouts and upper-body joint extraction.
//!
//! The pose estimator emits one of two layouts, COCO (18 joints) or BODY_25
//! (25 joints). Both share the same anatomical upper-body joints, so either is
//! reduced to the same eight slots:
//!
//! | slot | joint          | coco | body25 |
//! |------|----------------|------|--------|
//! | 1    | neck           | 1    | 1      |
//! | 2    | right shoulder | 2    | 2      |
//! | 3    | right elbow    | 3    | 3      |
//! | 4    | right wrist    | 4    | 4      |
//! | 5    | left shoulder  | 5    | 5      |
//! | 6    | left elbow     | 6    | 6      |
//! | 7    | left wrist     | 7    | 7      |
//! | 8    | right hip      | 8    | 9      |
//!
//! BODY_25 inserts a mid-hip joint at index 8, which is why the right hip
//! moves to index 9.

use alloc::vec::Vec;
use core::fmt;

use crate::features::Point;

/// Number of upper-body joints used for classification.
pub const UPPER_BODY_JOINTS: usize = 8;

const COCO18_UPPER_BODY: [usize; UPPER_BODY_JOINTS] = [1, 2, 3, 4, 5, 6, 7, 8];
const BODY25_UPPER_BODY: [usize; UPPER_BODY_JOINTS] = [1, 2, 3, 4, 5, 6, 7, 9];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub enum SkeletonModel {
    Coco18,
    Body25,
}

impl SkeletonModel {
    pub const fn joint_count(self) -> usize {
        match self {
            SkeletonModel::Coco18 => 18,
            SkeletonModel::Body25 => 25,
        }
    }

    /// Infers the layout from the number of joints in a detection.
    pub fn from_joint_count(count: usize) -> Option<Self> {
        match count {
            18 => Some(SkeletonModel::Coco18),
            25 => Some(SkeletonModel::Body25),
            _ => None,
        }
    }

    /// Source indices of the eight upper-body slots in this layout.
    pub const fn upper_body_indices(self) -> [usize; UPPER_BODY_JOINTS] {
        match self {
            SkeletonModel::Coco18 => COCO18_UPPER_BODY,
            SkeletonModel::Body25 => BODY25_UPPER_BODY,
        }
    }
}

/// One detected joint in image coordinates.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Keypoint {
    pub x: f64,
    pub y: f64,
    pub confidence: f64,
}

impl Keypoint {
    pub const fn new(x: f64, y: f64, confidence: f64) -> Self {
        Keypoint { x, y, confidence }
    }

    pub fn point(&self) -> Point {
        Point::new(self.x, self.y)
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum FrameError {
    #[error("expected 18 or 25 joints, got {0}")]
    BadJointCount(usize),
    #[error("non-finite value at joint {joint}")]
    NonFiniteValue { joint: usize },
    #[error("confidence {value} at joint {joint} is outside [0, 1]")]
    ConfidenceOutOfRange { joint: usize, value: f64 },
}

/// The joints of one person in one frame.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct SkeletonFrame {
    model: SkeletonModel,
    joints: Vec<Keypoint>,
    pub timestamp_ms: u64,
    pub person_index: usize,
}

impl SkeletonFrame {
    /// Builds a frame, inferring the layout from the joint count.
    pub fn new(joints: Vec<Keypoint>, timestamp_ms: u64, person_index: usize) -> Result<Self, FrameError> {
        let model = SkeletonModel::from_joint_count(joints.len()).ok_or(FrameError::BadJointCount(joints.len()))?;
        for (joint, kp) in joints.iter().enumerate() {
            if !(kp.x.is_finite() && kp.y.is_finite() && kp.confidence.is_finite()) {
                return Err(FrameError::NonFiniteValue { joint });
            }
            if !(0.0..=1.0).contains(&kp.confidence) {
                return Err(FrameError::ConfidenceOutOfRange { joint, value: kp.confidence });
            }
        }
        Ok(SkeletonFrame { model, joints, timestamp_ms, person_index })
    }

    pub fn model(&self) -> SkeletonModel {
        self.model
    }

    pub fn joints(&self) -> &[Keypoint] {
        &self.joints
    }

    /// Axis-aligned bounding-box area of the joints with nonzero confidence.
    pub fn confident_extent(&self) -> f64 {
        let mut it = self.joints.iter().filter(|kp| kp.confidence > 0.0);
        let Some(first) = it.next() else { return 0.0 };
        let (mut x0, mut x1, mut y0, mut y1) = (first.x, first.x, first.y, first.y);
        for kp in it {
            x0 = x0.min(kp.x);
            x1 = x1.max(kp.x);
            y0 = y0.min(kp.y);
            y1 = y1.max(kp.y);
        }
        (x1 - x0) * (y1 - y0)
    }
}

/// Minimum joint confidence; joints must score strictly above it.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(try_from = "f64", into = "f64"))]
pub struct ConfidenceThreshold(f64);

impl ConfidenceThreshold {
    pub const DEFAULT: ConfidenceThreshold = ConfidenceThreshold(0.5);

    pub fn new(c: f64) -> Option<Self> {
        (0.0..=1.0).contains(&c).then_some(ConfidenceThreshold(c))
    }

    pub fn value(self) -> f64 {
        self.0
    }
}

impl Default for ConfidenceThreshold {
    fn default() -> Self {
        Self::DEFAULT
    }
}

impl TryFrom<f64> for ConfidenceThreshold {
    type Error = &'static str;

    fn try_from(c: f64) -> Result<Self, Self::Error> {
        ConfidenceThreshold::new(c).ok_or("confidence threshold must lie in [0, 1]")
    }
}

impl From<ConfidenceThreshold> for f64 {
    fn from(c: ConfidenceThreshold) -> f64 {
        c.0
    }
}

/// Positions of upper-body joints 1..=8, stored at slots 0..8.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct UpperBodyJoints {
    pub positions: [Point; UPPER_BODY_JOINTS],
}

impl UpperBodyJoints {
    pub const fn new(positions: [Point; UPPER_BODY_JOINTS]) -> Self {
        UpperBodyJoints { positions }
    }

    /// Position of joint `j`, numbered from 1.
    pub fn joint(&self, j: usize) -> Point {
        self.positions[j - 1]
    }
}

/// Frame skipped because an upper-body joint was not confident enough.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Rejection {
    /// Upper-body joint number (1..=8) of the first failing joint.
    pub joint: usize,
    pub confidence: f64,
}

impl fmt::Display for Rejection {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "joint {} confidence {} not above threshold", self.joint, self.confidence)
    }
}

/// Extracts the eight upper-body joints if every one is strictly above `threshold`.
pub fn select_upper_body(frame: &SkeletonFrame, threshold: ConfidenceThreshold) -> Result<UpperBodyJoints, Rejection> {
    let c = threshold.value();
    let mut positions = [Point::default(); UPPER_BODY_JOINTS];
    for (slot, &src) in frame.model.upper_body_indices().iter().enumerate() {
        let kp = frame.joints[src];
        if !(kp.confidence > c) {
            return Err(Rejection { joint: slot + 1, confidence: kp.confidence });
        }
        positions[slot] = kp.point();
    }
    Ok(UpperBodyJoints { positions })
}

/// Picks the detection with the largest confident bounding box.
///
/// Ties go to the earliest detection.
pub fn select_person(frames: &[SkeletonFrame]) -> Option<&SkeletonFrame> {
    let mut best: Option<(&SkeletonFrame, f64)> = None;
    for f in frames {
        let area = f.confident_extent();
        match best {
            Some((_, a)) if a >= area => {}
            _ => best = Some((f, area)),
        }
    }
    best.map(|(f, _)| f)
}
