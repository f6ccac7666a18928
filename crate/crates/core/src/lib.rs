//! Asynchronous many-task runtime. Tasks run on a pluggable scheduler and
//! reach objects on other localities through a global address space.

pub mod agas;
pub mod bench;
pub mod counters;
pub mod error;
pub mod parcelport;
pub mod runtime;
pub mod scheduler;
pub mod tasking;

pub use agas::Gid;
pub use error::{Error, Result};
pub use parcelport::{Action, Value};
pub use runtime::{Cluster, Runtime, RuntimeConfig};
