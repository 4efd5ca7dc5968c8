//! Synthetic sequences, tracking metrics, the extraction benchmark and the
//! ablation driver.

pub mod ablation;
pub mod bench;
pub mod config;
pub mod metrics;
pub mod synth;
