//! Correction of non-uniform rotational distortion (NURD) in endoscopic
//! OCT B-scan sequences.
//!
//! A rotating endoscopic probe never spins perfectly evenly; friction and
//! torque losses displace A-lines along the angular axis and smear the
//! resulting B-scans. This crate implements a self-supervised correction
//! pipeline around a stacked cross-attention network that treats each
//! A-line as a token:
//!
//! - [`numerics`] — dense 2-D tensors, the fixed differentiable op set, and
//!   a finite-difference gradient oracle.
//! - [`frames`] — B-scan containers, phantom generation, image I/O.
//! - [`distortion`] — distortion vectors, the differentiable circular warp,
//!   and cumulative-vector composition for streaming correction.
//! - [`model`] — the stacked cross-attention network with hand-written
//!   forward and backward passes.
//! - [`training`] — synthetic-pair synthesis, the three losses, and the
//!   SGD loop.
//! - [`inference`] — streaming sequence correction and latency reporting.
//! - [`evaluation`] — the 5-frame STD metric, vector MAE, and a classical
//!   cross-correlation + dynamic-programming baseline aligner.
//!
//! Everything is deterministic: stochastic procedures take an explicit
//! [`numerics::RngState`] and the same seed reproduces results bit-exactly
//! on every platform.

pub mod distortion;
pub mod error;
pub mod evaluation;
pub mod frames;
pub mod inference;
mod io_util;
pub mod model;
pub mod numerics;
pub mod training;

pub use error::{Error, Result};
