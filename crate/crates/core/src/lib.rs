//! Weakly supervised risk-object identification for driving scenes.
//!
//! A spatio-temporal interaction graph over tracked agents predicts whether
//! the driver keeps going or alters course. Masking each agent in turn and
//! watching the `Continue` confidence recover identifies the agent that
//! caused the change. An encoder-decoder anticipating the driver's maneuver
//! feeds its hidden state into the response classifier, and pedestrian
//! attentiveness adjusts the final risk ranking.
//!
//! A synthetic world generator with a known causal agent per clip serves as
//! the ground-truth oracle for training and evaluation.

pub mod actionnet;
pub mod attention;
pub mod cli;
pub mod cells;
pub mod error;
pub mod fusion;
pub mod graphnet;
pub mod intervene;
pub mod metrics;
pub mod params;
pub mod plot;
pub mod registry;
pub mod synthgen;
pub mod train;
pub mod types;

pub use error::{Error, Result};
