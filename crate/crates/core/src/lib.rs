pub mod cli;
pub mod data;
pub mod encoder;
pub mod error;
pub mod hv;
pub mod model;
pub mod persist;
pub mod rng;
pub mod stats;

pub use error::{HdError, Result};
pub use hv::{BinaryHV, IntHV};
pub use model::{BinarizerMode, Model, TrainConfig};
