//! Retweet-network analysis of unreliable news diffusion.
//!
//! The crate reads tweet records, builds the weighted retweet graph, finds
//! communities with Louvain, scores users and URLs, and runs the statistical
//! comparisons on top. [`pipeline::run_pipeline`] chains every stage.

pub mod community;
pub mod config;
pub mod error;
pub mod graph;
pub mod ingest;
pub mod metrics;
pub mod pipeline;
pub mod stats;
pub mod synth;

pub use error::{Error, Result};
