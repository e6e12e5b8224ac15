//! Link-level simulation library for soft-input soft-output massive
//! MU-MIMO data detection.
//!
//! The crate provides a Gram-domain AMP detector with exact and
//! hardware-style bit-domain max-log denoisers, a linear MMSE baseline,
//! channel generators, per-UE convolutional coding with max-log BCJR
//! decoding, models of the detector ASIC's arithmetic units, and a
//! reproducible Monte-Carlo packet-error-rate harness.

pub mod arith;
pub mod baselines;
pub mod channel;
pub mod coding;
pub mod constellation;
pub mod detector;
pub mod error;
pub mod harness;

pub use constellation::{BitPriors, Constellation, Scheme};
pub use detector::{DetectorOutput, GramData, LamaParams};
pub use error::{Error, Result};
pub use harness::{PerResult, SimConfig};
