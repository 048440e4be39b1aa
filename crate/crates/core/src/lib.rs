//! Robust autobidding under uncertain click-through and conversion rates.
//!
//! The crate provides the bid formulas and dual fits of five policies, a
//! first-price auction simulator, dataset generation and loading, metric
//! computation, brute-force reference oracles and an experiment sweep
//! runner.

pub mod bidding;
pub mod datasets;
pub mod metrics;
pub mod oracle;
pub mod simulator;
pub mod sweep;
pub mod types;
pub mod uncertainty;
pub mod verify;

pub use types::*;
