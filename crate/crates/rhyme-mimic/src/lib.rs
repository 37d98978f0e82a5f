//! Runtime side of the rhyme imitation game: skeleton wire format, model and
//! dataset files, the message bus, the robot nodes and session assembly.

pub mod app;
pub mod bus;
pub mod clock;
pub mod config;
pub mod files;
pub mod node;
pub mod nodes;
pub mod session;
pub mod synthetic;
pub mod wire;
