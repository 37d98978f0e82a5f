//! Nodes of the robot graph: camera replay, pose recognition, game master
//! and the four simulated peripherals.

pub mod engine;
pub mod peripheral;
pub mod pose;
pub mod replay;

pub use engine::{EngineNode, EngineOptions, EngineOutput, StateUpdate, WozRequest};
pub use peripheral::{AckStatus, LatencyModel, PeripheralAck, PeripheralLog, PeripheralNode, ResourceCatalog};
pub use pose::{classify_record, FrameOutcome, PipelineStats, PoseClassification, PoseNode};
pub use replay::{load_stream, ReplayError, ReplayNode, ReplaySource};
