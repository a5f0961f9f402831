//! Fast-feedback calibration of drifting quantum gates.
//!
//! The crate simulates small qubit registers shot by shot and runs two families
//! of online calibration protocols against them:
//!
//! * [`ioc`]: indefinite-outcome circuits, where every single measurement
//!   nudges the control parameters (single-parameter, multi-parameter via a
//!   sensitivity Jacobian, and batched variants, plus gain/depth schedulers).
//! * [`doc`]: definite-outcome circuits, where failures are counted and the
//!   error magnitude is estimated with a coin-flip direction.
//!
//! Supporting modules provide the statevector kernel ([`sim`]), gate families
//! and fidelity metrics ([`gates`]), drift processes ([`drift`]), circuits and
//! sensitivities ([`circuits`]), a five-qubit-code harness ([`qec`]), the batch
//! Rabi baseline ([`rabi`]), closed-form predictions ([`analytics`]) and the
//! config-driven experiment runner ([`runner`]).

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod analytics;
pub mod circuits;
pub mod doc;
pub mod drift;
pub mod error;
pub mod gates;
pub mod ioc;
pub mod qec;
pub mod rabi;
pub mod rng;
pub mod runner;
pub mod sim;

pub use error::{Error, Result};
