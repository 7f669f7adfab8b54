//! Trace tooling for the hybrid cache: the trace file format, a calibrated
//! synthetic workload generator, and replay of traces against the engine and
//! against reference policies.

pub mod baseline;
pub mod error;
pub mod replay;
pub mod trace;
pub mod workload;

pub use error::{HarnessError, Result};
pub use replay::{replay, replay_results, sweep, Policy, ReplayOptions, Replayer, SweepParam, SweepRow};
pub use trace::{Op, TraceEvent};
pub use workload::{generate, SizeDist, WorkloadSpec};
