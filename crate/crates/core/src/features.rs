//! Normalized pose features.
//!
//! Each upper-body joint `j` maps to
//!
//! ```text
//! fx(j) = (x_j - x0) / |x_a - x_b|
//! fy(j) = (y_j - y0) / |y_c - y_d|
//! ```
//!
//! where `(a, b, c, d)` are the reference joints (default `(1, 2, 3, 4)`) and
//! `(x0, y0)` is the intersection of the line through joints `a, b` with the
//! line through joints `c, d`. Lines are infinite: the neck/shoulder and
//! elbow/wrist segments almost never cross as segments.

use core::ops::Deref;

use crate::skeleton::{UpperBodyJoints, UPPER_BODY_JOINTS};

pub const FEATURE_DIM: usize = 2 * UPPER_BODY_JOINTS;

/// Below this magnitude a line determinant or denominator is treated as zero.
pub const DEGENERACY_EPS: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Default)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Point {
    pub x: f64,
    pub y: f64,
}

impl Point {
    pub const fn new(x: f64, y: f64) -> Self {
        Point { x, y }
    }

    fn sub(self, o: Point) -> Point {
        Point::new(self.x - o.x, self.y - o.y)
    }

    fn cross(self, o: Point) -> f64 {
        self.x * o.y - self.y * o.x
    }
}

pub type ReferencePoint = Point;

#[derive(Debug, Clone, Copy, PartialEq, Eq, thiserror::Error)]
pub enum Degenerate {
    #[error("reference lines are parallel or a reference pair is coincident")]
    ParallelLines,
    #[error("horizontal reference width is zero")]
    ZeroWidth,
    #[error("vertical reference height is zero")]
    ZeroHeight,
}

/// Intersection of the infinite line through `a1, a2` with the one through `b1, b2`.
pub fn intersect_lines(a1: Point, a2: Point, b1: Point, b2: Point) -> Result<ReferencePoint, Degenerate> {
    let da = a2.sub(a1);
    let db = b2.sub(b1);
    let det = da.cross(db);
    if !(det.abs() >= DEGENERACY_EPS) {
        return Err(Degenerate::ParallelLines);
    }
    let t = b1.sub(a1).cross(db) / det;
    Ok(Point::new(a1.x + t * da.x, a1.y + t * da.y))
}

/// The four joints (numbered 1..=8) defining the normalization frame.
///
/// Joints `a, b` give the horizontal scale and first reference line; joints
/// `c, d` give the vertical scale and second line.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(try_from = "[usize; 4]", into = "[usize; 4]"))]
pub struct ReferenceIndices([usize; 4]);

impl ReferenceIndices {
    pub const DEFAULT: ReferenceIndices = ReferenceIndices([1, 2, 3, 4]);

    pub fn new(idx: [usize; 4]) -> Option<Self> {
        let in_range = idx.iter().all(|&j| (1..=UPPER_BODY_JOINTS).contains(&j));
        (in_range && idx[0] != idx[1] && idx[2] != idx[3]).then_some(ReferenceIndices(idx))
    }

    pub fn get(self) -> [usize; 4] {
        self.0
    }
}

impl Default for ReferenceIndices {
    fn default() -> Self {
        Self::DEFAULT
    }
}

impl TryFrom<[usize; 4]> for ReferenceIndices {
    type Error = &'static str;

    fn try_from(v: [usize; 4]) -> Result<Self, Self::Error> {
        ReferenceIndices::new(v).ok_or("reference indices must be joints 1..=8 with distinct pairs")
    }
}

impl From<ReferenceIndices> for [usize; 4] {
    fn from(r: ReferenceIndices) -> Self {
        r.0
    }
}

/// Feature vector laid out as `x1, y1, x2, y2, ..., x8, y8`.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct NormalizedPose(pub [f64; FEATURE_DIM]);

impl NormalizedPose {
    pub fn joint(&self, j: usize) -> (f64, f64) {
        (self.0[2 * (j - 1)], self.0[2 * (j - 1) + 1])
    }

    pub fn from_slice(v: &[f64]) -> Option<Self> {
        <[f64; FEATURE_DIM]>::try_from(v).ok().map(NormalizedPose)
    }
}

impl Deref for NormalizedPose {
    type Target = [f64];

    fn deref(&self) -> &[f64] {
        &self.0
    }
}

pub fn normalize(joints: &UpperBodyJoints, reference: ReferenceIndices) -> Result<NormalizedPose, Degenerate> {
    let [a, b, c, d] = reference.get();
    let (pa, pb, pc, pd) = (joints.joint(a), joints.joint(b), joints.joint(c), joints.joint(d));
    let origin = intersect_lines(pa, pb, pc, pd)?;
    let width = (pa.x - pb.x).abs();
    let height = (pc.y - pd.y).abs();
    if !(width >= DEGENERACY_EPS) {
        return Err(Degenerate::ZeroWidth);
    }
    if !(height >= DEGENERACY_EPS) {
        return Err(Degenerate::ZeroHeight);
    }
    let mut out = [0.0; FEATURE_DIM];
    for (j, p) in joints.positions.iter().enumerate() {
        out[2 * j] = (p.x - origin.x) / width;
        out[2 * j + 1] = (p.y - origin.y) / height;
    }
    if out.iter().any(|v| !v.is_finite()) {
        return Err(Degenerate::ParallelLines);
    }
    Ok(NormalizedPose(out))
}
