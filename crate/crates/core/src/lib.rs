//! Hedging strategies and investment portfolios for claims that depend on
//! the portfolio's own past.
//!
//! The market has two traded instruments, a bank account and a zero-coupon
//! bond maturing at the horizon, driven by a one-factor short rate.

pub mod asian;
pub mod continuous_ratchet;
pub mod discrete_ratchet;
pub mod error;
pub mod harness;
pub mod market;
pub mod obpi;
pub mod stats;
pub mod withdrawal;

pub use error::{Error, Result};

/// Library version, recorded in run manifests.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");
