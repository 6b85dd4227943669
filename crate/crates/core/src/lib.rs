//! Incremental self-supervised representation learning on temporally split
//! transaction graphs, with a phishing-account classification harness.

pub mod config;
pub mod diff;
pub mod downstream;
pub mod encoder;
pub mod error;
pub mod graph;
pub mod incremental;
pub mod ingest;
pub mod pipeline;
pub mod pretext;
pub mod synth;
mod util;

pub use error::{Error, Result};
