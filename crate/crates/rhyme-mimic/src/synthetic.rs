//! Synthetic data: eight anchor poses, feature-space training clusters and
//! recorded-looking keypoint streams for whole game sessions.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rhyme_mimic_core::game::{RhymeLine, RhymeScript};
use rhyme_mimic_core::gmm::LabeledDataset;
use rhyme_mimic_core::{normalize, Keypoint, NormalizedPose, Point, ReferenceIndices, SkeletonFrame, UpperBodyJoints};
use serde::{Deserialize, Serialize};

use crate::nodes::LatencyModel;
use crate::wire::{FrameRecord, DEFAULT_FRAME_INTERVAL_MS};

/// Arm configuration of one pose: right elbow, right wrist, left elbow,
/// left wrist, in body coordinates (neck at the origin, y down, pixels at
/// unit scale). The person faces the camera, so their right side is on the
/// image left.
#[derive(Debug, Clone, Copy)]
pub struct Anchor {
    pub label: &'static str,
    pub arms: [(f64, f64); 4],
}

pub const ANCHORS: [Anchor; 8] = [
    Anchor { label: "arms_up", arms: [(-50.0, -45.0), (-55.0, -95.0), (50.0, -45.0), (55.0, -95.0)] },
    Anchor { label: "arms_crossed", arms: [(-45.0, 70.0), (35.0, 10.0), (45.0, 70.0), (-35.0, 15.0)] },
    Anchor { label: "spin_hands", arms: [(-20.0, 100.0), (-40.0, 55.0), (20.0, 100.0), (40.0, 55.0)] },
    Anchor { label: "hands_on_head", arms: [(-80.0, -25.0), (-20.0, -60.0), (80.0, -25.0), (20.0, -60.0)] },
    Anchor { label: "arms_out", arms: [(-90.0, 15.0), (-135.0, 40.0), (90.0, 15.0), (135.0, 40.0)] },
    Anchor { label: "wave_right", arms: [(-80.0, -10.0), (-85.0, -60.0), (48.0, 60.0), (50.0, 110.0)] },
    Anchor { label: "hands_on_hips", arms: [(-80.0, 70.0), (-30.0, 140.0), (80.0, 70.0), (30.0, 140.0)] },
    Anchor { label: "clap", arms: [(-40.0, 40.0), (-5.0, -10.0), (40.0, 40.0), (5.0, -10.0)] },
];

// fixed joints of the body frame, coco order, arms filled in per pose
const BODY: [(f64, f64); 18] = [
    (0.0, -45.0),   // nose
    (0.0, 0.0),     // neck
    (-40.0, 5.0),   // right shoulder
    (0.0, 0.0),     // right elbow
    (0.0, 0.0),     // right wrist
    (40.0, 5.0),    // left shoulder
    (0.0, 0.0),     // left elbow
    (0.0, 0.0),     // left wrist
    (-25.0, 150.0), // right hip
    (-27.0, 230.0),
    (-28.0, 310.0),
    (25.0, 150.0), // left hip
    (27.0, 230.0),
    (28.0, 310.0),
    (-8.0, -52.0), // eyes
    (8.0, -52.0),
    (-18.0, -48.0), // ears
    (18.0, -48.0),
];

pub fn anchor(label: &str) -> Option<&'static Anchor> {
    ANCHORS.iter().find(|a| a.label == label)
}

impl Anchor {
    /// The 18 body-frame joint positions.
    pub fn body(&self) -> [(f64, f64); 18] {
        let mut j = BODY;
        j[3] = self.arms[0];
        j[4] = self.arms[1];
        j[6] = self.arms[2];
        j[7] = self.arms[3];
        j
    }

    pub fn upper_body(&self) -> UpperBodyJoints {
        let b = self.body();
        UpperBodyJoints::new([1, 2, 3, 4, 5, 6, 7, 8].map(|i| Point::new(b[i].0, b[i].1)))
    }

    pub fn features(&self) -> NormalizedPose {
        normalize(&self.upper_body(), ReferenceIndices::DEFAULT).expect("anchor poses are non-degenerate")
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum SyntheticError {
    #[error("class count must be between 1 and {max}, got {got}", max = ANCHORS.len())]
    ClassCount { got: usize },
    #[error("spread must be finite and non-negative, got {0}")]
    Spread(f64),
    #[error("held pattern has {got} entries for {lines} lines")]
    HeldLength { got: usize, lines: usize },
    #[error("pose class {0:?} has no anchor")]
    UnknownPose(String),
}

/// Isotropic Gaussian clusters of `per_class` samples around the first
/// `classes` anchors' feature vectors, with standard deviation `spread` in
/// every feature dimension. Samples are interleaved class by class.
pub fn gen_synthetic(
    classes: usize,
    per_class: usize,
    spread: f64,
    seed: u64,
) -> Result<LabeledDataset, SyntheticError> {
    if classes == 0 || classes > ANCHORS.len() {
        return Err(SyntheticError::ClassCount { got: classes });
    }
    if !(spread.is_finite() && spread >= 0.0) {
        return Err(SyntheticError::Spread(spread));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let anchors = &ANCHORS[..classes];
    let mut data = LabeledDataset::with_labels(anchors.iter().map(|a| a.label));
    let centers: Vec<NormalizedPose> = anchors.iter().map(Anchor::features).collect();
    let normal = Normal::new(0.0, 1.0).expect("unit normal");
    for _ in 0..per_class {
        for (a, c) in anchors.iter().zip(&centers) {
            let x = c.iter().map(|m| m + spread * normal.sample(&mut rng)).collect();
            data.push(a.label, x);
        }
    }
    Ok(data)
}

/// The bundled eight-line rhyme, one anchor pose per line.
pub fn demo_script() -> RhymeScript {
    let lines: [(&str, &str, &str); 8] = [
        ("Reach up high and touch the sky", "arms_up", "Great stretching!"),
        ("Fold your arms and hold them tight", "arms_crossed", "Nice and tight!"),
        ("Roll your hands round and round", "spin_hands", "Lovely rolling!"),
        ("Hands on your head, quiet as a mouse", "hands_on_head", "Well done!"),
        ("Stretch out wide like a bird", "arms_out", "You can fly!"),
        ("Wave hello to all your friends", "wave_right", "Hello to you too!"),
        ("Hands on hips and stand up tall", "hands_on_hips", "So tall!"),
        ("Clap your hands above your head", "clap", "Bravo!"),
    ];
    let lines = lines
        .iter()
        .enumerate()
        .map(|(i, (lyric, pose, cheer))| RhymeLine {
            index: i,
            lyric_text: lyric.to_string(),
            pose_class: pose.to_string(),
            audio_ref: format!("audio/line{}.ogg", i + 1),
            image_ref: format!("images/{pose}.png"),
            gesture_ref: Some(format!("gestures/{pose}")),
            sing_duration_ms: 3000 + 250 * (i as u64 % 3),
            wait_timeout_ms: 6000,
            gesture_duration_ms: Some(2500),
            encourage_text: cheer.to_string(),
        })
        .collect();
    let mut script = RhymeScript::new("Touch the Sky", lines);
    script.repeat_limit = 1;
    script.match_streak = 5;
    script
}

/// Which lines of a generated stream contain a held target pose.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StreamTruth {
    pub script_title: String,
    pub seed: u64,
    pub held: Vec<bool>,
    /// Expected recorded time at which each line is entered.
    pub line_start_ms: Vec<u64>,
    pub expected_end_ms: u64,
}

/// Knobs of [`gen_session_stream`].
#[derive(Debug, Clone, PartialEq)]
pub struct StreamOptions {
    pub seed: u64,
    pub latency: LatencyModel,
    /// Pixel noise added to every keypoint.
    pub jitter_px: f64,
    /// Delay between the start of a wait and the child taking the pose.
    pub reaction_ms: u64,
    /// How long a held pose is kept.
    pub hold_ms: u64,
    /// Frames with a low-confidence wrist, one every `n` frames.
    pub dropout_every: Option<u64>,
    /// Add a smaller bystander in some frames.
    pub bystander: bool,
}

impl Default for StreamOptions {
    fn default() -> Self {
        StreamOptions {
            seed: 0,
            latency: LatencyModel::default(),
            jitter_px: 1.0,
            reaction_ms: 300,
            hold_ms: 1200,
            dropout_every: Some(37),
            bystander: true,
        }
    }
}

#[derive(Debug, Clone, Copy)]
struct Segment {
    end: u64,
    pose: usize,
}

/// Builds a keypoint stream for a whole session of `script` in which the
/// child imitates exactly the lines flagged in `held`.
///
/// The session timeline is derived from the script and latency model: a
/// line is sung for as long as its slowest peripheral takes, then the game
/// waits. On held lines the target pose appears shortly after the wait
/// starts and lasts long enough for a full match streak; elsewhere the
/// child shows a different pose, with a brief flicker of the target that is
/// too short to count.
pub fn gen_session_stream(
    script: &RhymeScript,
    held: &[bool],
    options: &StreamOptions,
) -> Result<(Vec<FrameRecord>, StreamTruth), SyntheticError> {
    if held.len() != script.lines.len() {
        return Err(SyntheticError::HeldLength { got: held.len(), lines: script.lines.len() });
    }
    let index_of = |pose: &str| {
        ANCHORS.iter().position(|a| a.label == pose).ok_or_else(|| SyntheticError::UnknownPose(pose.to_string()))
    };
    let frame = DEFAULT_FRAME_INTERVAL_MS;
    let lat = &options.latency;
    let streak = u64::from(script.match_streak.max(1));
    let mut segments = Vec::new();
    let mut line_start_ms = Vec::new();
    let mut t = 0u64;
    for (line, &is_held) in script.lines.iter().zip(held) {
        let target = index_of(&line.pose_class)?;
        let distractor = (target + 3) % ANCHORS.len();
        line_start_ms.push(t);
        let sing = lat.display_ms.max(line.sing_duration_ms).max(line.gesture_duration_ms.unwrap_or(lat.motion_ms));
        let encourage = lat.tts_ms.max(lat.display_ms);
        if is_held {
            let wait = t + sing;
            // frames sit on a fixed grid; the match lands on the
            // streak-th target frame
            let first = (wait + options.reaction_ms).div_ceil(frame) * frame;
            let dropped = |ts: u64| options.dropout_every.is_some_and(|k| (ts / frame) % k == k - 1);
            let matched = (0..)
                .map(|i| first + i * frame)
                .filter(|&ts| !dropped(ts))
                .nth(streak as usize - 1)
                .expect("unbounded grid");
            segments.push(Segment { end: first, pose: distractor });
            t = matched + encourage;
            // the child stops posing once the line is over
            segments.push(Segment { end: (first + options.hold_ms).min(t), pose: target });
            segments.push(Segment { end: t, pose: distractor });
        } else {
            let flicker = (t + sing + options.reaction_ms + 200).div_ceil(frame) * frame;
            let blip = (streak - 1).clamp(1, 3) * frame;
            // every sing-and-wait cycle times out, the last one advances
            t += u64::from(script.repeat_limit + 1) * (sing + line.wait_timeout_ms);
            segments.push(Segment { end: flicker, pose: distractor });
            segments.push(Segment { end: flicker + blip, pose: target });
            segments.push(Segment { end: t, pose: distractor });
        }
    }
    let expected_end_ms = t;
    let tail = expected_end_ms + 1000;
    if let Some(last) = segments.last().copied() {
        segments.push(Segment { end: tail, pose: last.pose });
    }

    let mut rng = ChaCha8Rng::seed_from_u64(options.seed);
    let jitter = Normal::new(0.0, options.jitter_px.max(0.0)).expect("jitter deviation is finite");
    let mut frames = Vec::new();
    let mut seg = 0;
    let mut ts = 0;
    while ts < tail {
        while segments[seg].end <= ts {
            seg += 1;
        }
        let n = ts / frame;
        let sway = 8.0 * (n as f64 / 45.0).sin();
        let pose = &ANCHORS[segments[seg].pose];
        let mut child = render(pose, (320.0 + sway, 140.0), 1.0, &jitter, &mut rng);
        if options.dropout_every.is_some_and(|k| n % k == k - 1) {
            // right wrist occluded
            child[4].confidence = 0.3;
        }
        let mut people = vec![SkeletonFrame::new(child, ts, 0).expect("rendered skeleton is valid")];
        if options.bystander && n.is_multiple_of(5) {
            let other = &ANCHORS[(n as usize / 5) % ANCHORS.len()];
            let kp = render(other, (560.0, 200.0), 0.4, &jitter, &mut rng);
            // the bystander is listed first so selection must look at size
            people.insert(0, SkeletonFrame::new(kp, ts, 1).expect("rendered skeleton is valid"));
        }
        frames.push(FrameRecord { timestamp_ms: ts, people });
        ts += frame;
    }
    let truth = StreamTruth {
        script_title: script.title.clone(),
        seed: options.seed,
        held: held.to_vec(),
        line_start_ms,
        expected_end_ms,
    };
    Ok((frames, truth))
}

fn render(pose: &Anchor, origin: (f64, f64), scale: f64, jitter: &Normal<f64>, rng: &mut ChaCha8Rng) -> Vec<Keypoint> {
    pose.body()
        .iter()
        .map(|&(x, y)| {
            let confidence = 0.75 + 0.2 * rng.random::<f64>();
            Keypoint::new(
                origin.0 + scale * x + jitter.sample(rng),
                origin.1 + scale * y + jitter.sample(rng),
                confidence,
            )
        })
        .collect()
}
