//! Evaluation framework for reason-responsiveness of vision-language driving
//! decisions: scenario presets, prompt composition, model gateway, experiment
//! orchestration, logit statistics and reporting.

pub mod config;
pub mod error;
pub mod gateway;
pub mod key;
pub mod orchestrator;
pub mod prompt;
pub mod report;
pub mod scenario;
pub mod stats;

pub use error::{Error, Result};
