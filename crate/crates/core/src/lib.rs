//! Query planning for switch-accelerated network telemetry: refinement plans,
//! register sizing, per-window operator mapping and load estimation.

pub mod bootstrap;
pub mod cost;
pub mod error;
pub mod forecast;
pub mod harness;
pub mod load;
pub mod mapping;
pub mod pipeline;
pub mod query;
pub mod synth;
pub mod trace;
pub mod workload;

pub use error::{Error, Result};
