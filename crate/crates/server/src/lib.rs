//! memcached-compatible network front end, benchmark and command-line tools
//! for the hybrid cache.

pub mod bench;
pub mod cli;
pub mod error;
pub mod protocol;
pub mod server;
pub mod session;

pub use error::{CliError, Result};
pub use session::{Clock, Session};
