//! Schema-guided dialogue state tracking.
//!
//! Schema descriptions act as queries and dialogue turns as context for a
//! single shared encoder with five task heads; a rule-based tracker folds the
//! per-turn predictions into a dialogue state, scored with the usual
//! goal-accuracy metrics.

pub mod config;
pub mod data;
pub mod error;
pub mod metrics;
pub mod model;
pub mod normalize;
pub mod pipeline;
pub mod predict;
pub mod qa;
pub mod sgd_json;
pub mod synth;
pub mod tokenizer;
pub mod tracker;
pub mod train;

pub use error::{Error, Result};
