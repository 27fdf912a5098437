//! Tracking-enhanced prompting for video object segmentation.
//!
//! A baseline segmenter propagates each object's first-frame mask. Objects
//! that are tiny or distinguished only by a semantic attribute also get an
//! auxiliary localiser (a box tracker or a text-conditioned detector), and a
//! per-frame gate decides when the auxiliary box should re-prompt the
//! segmenter. Backends are traits with deterministic mocks and a
//! line-delimited JSON protocol for out-of-process models; a scenario
//! simulator and a J/F evaluation suite close the loop.

pub mod backends;
pub mod classification;
pub mod config;
pub mod dataset;
pub mod error;
pub mod fusion;
pub mod geometry;
pub mod metrics;
pub mod pipeline;
pub mod protocol;
pub mod simulator;

pub use error::{Error, Result};
