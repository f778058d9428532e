//! Experiment harness around `hfrec-core`: dataset synthesis, degradation,
//! training, evaluation, ablation and loss-weight sweeps.

pub mod commands;
pub mod config;
pub mod data;
pub mod error;
pub mod pipeline;
