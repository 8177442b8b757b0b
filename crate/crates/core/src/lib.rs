//! Car-following trajectory toolkit: pair extraction from multi-agent
//! scenes, anomaly assessment, trajectory enhancement and regime labelling.

// negated comparisons double as NaN rejection
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod assess;
pub mod enhance;
pub mod error;
pub mod ingest;
pub mod pipeline;
pub mod regime;
pub mod select;
pub mod synth;
pub mod trajkit;

pub use error::{Error, Result};
