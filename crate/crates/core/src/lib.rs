//! Simulation and optimization toolkit for bit-serial mixed-precision
//! matrix multiplication under significance-gated undervolting (GAV).
//!
//! The crate models an accelerator built around a parallel array of
//! inner-product elements (iPEs) that multiplies two 1-bit matrices per
//! clock cycle. Multi-bit GEMMs are decomposed into bit-significance
//! passes, and the supply voltage of the compute array is switched per
//! pass between a safe (guarded) level and an aggressive (approximate)
//! level. Approximate passes produce timing-violation bit errors, which
//! are reproduced here in two independent ways:
//!
//! * [`oracle`] — an event-driven gate-delay simulation of one iPE
//!   (AND layer plus balanced adder tree) under scaled delays, used as
//!   the calibration and validation reference.
//! * [`errmodel`] — a calibrated look-up-table model of per-bit flip
//!   probabilities, conditioned on the exact output value, the previous
//!   output bin and already-sampled higher-significance bit errors.
//!
//! On top of the [`engine`] sit the [`power`] model (calibrated per
//! precision and undervolting schedule), the [`metrics`] error
//! statistics, a quantized network executor in [`nn`], and the exact
//! per-layer protection-level allocator in [`allocator`].

pub mod allocator;
pub mod engine;
pub mod errmodel;
pub mod error;
pub mod io;
pub mod manifest;
pub mod matrix;
pub mod metrics;
pub mod nn;
pub mod oracle;
pub mod power;
pub mod rng;
pub mod schedule;
pub mod sweep;
pub mod validate;

pub use error::{Error, Result};
pub use matrix::{BitSlicedMatrix, IntMatrix, Signedness};
pub use schedule::{ArrayShape, GavSchedule, VoltageMode};
