//! Sparse spectral adaptation of frozen weight matrices.
//!
//! A frozen weight `W0` is moved into the Hartley domain, a small set of
//! frequency positions is chosen (part by spectral energy, part at random),
//! and only the coefficients at those positions are trained. The update is
//! folded back with the inverse transform: `W = W0 + alpha * idht2(dH)`.
//!
//! Modules, bottom-up:
//!
//! * [`numerics`]: dense matrices, the seeded PRNG, Kaiming init and a
//!   central-difference gradient oracle.
//! * [`hartley`]: forward and inverse 2D Hartley transforms plus a direct
//!   DFT oracle.
//! * [`spectrum`]: energy maps, frequency selection and masking.
//! * [`adapter`]: the spectral adapter layer and a LoRA baseline.
//! * [`accounting`]: parameter, byte and FLOP budgets.
//! * [`harness`]: experiments, checkpoints, file formats and reports.

pub mod accounting;
pub mod adapter;
mod error;
pub mod harness;
pub mod hartley;
pub mod numerics;
pub mod spectrum;

pub use error::{Error, Result};
