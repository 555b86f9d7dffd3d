//! Building blocks for retrieval-augmented in-context agents: demonstration
//! data, distances and their calibration, exact nearest-neighbour retrieval,
//! the retrieve-and-play baseline with its interpolated extension, binary
//! codecs, and two small environment families to exercise them.

pub mod agents;
pub mod codec;
pub mod distance;
pub mod envs;
pub mod error;
pub mod par;
pub mod retrieval;
pub mod types;

pub use error::{Error, Result};
