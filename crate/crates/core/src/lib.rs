//! Federated averaging simulator with layer-by-layer feature diagnostics.
//!
//! The crate is `no_std` + `alloc`: every routine is a pure function of its
//! inputs and an explicit seed. File formats, configuration, and the CLI live
//! in the companion `fedlens` crate.
#![no_std]

extern crate alloc;

pub mod data;
pub mod error;
pub mod fed;
pub mod linalg;
pub mod metrics;
pub mod nn;
pub mod rng;

pub use error::{Error, Result};
