pub mod bloom;
pub mod builder;
pub mod classifier;
pub mod cleaner;
pub mod config;
pub mod device;
pub mod dram;
pub mod engine;
pub mod error;
pub mod index;
pub mod metrics;
pub mod model;

pub use config::EngineConfig;
pub use engine::{Engine, GetOutcome, HitKind};
pub use error::{Error, Result};
pub use model::{Key, Timestamp};
