//! Parametric half of the retrieval-augmented agent: a small causal
//! transformer over retrieved (state, reward, action) contexts, trained
//! through the distance-weighted blend with retrieve-and-play.

pub mod checkpoint;
pub mod config;
pub mod loss;
pub mod model;
pub mod policy;
pub mod train;

pub use config::{ModelConfig, TrainConfig};
pub use model::SeqModel;
pub use policy::RegentPolicy;
