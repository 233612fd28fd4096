//! Conditional simulation of stationary max-stable processes in mixed
//! moving maxima form.
//!
//! The crate covers unconditional simulation, the conditioning geometry
//! (envelopes, curve intersections, region weights), scenario enumeration
//! and sampling of the critical atoms, the full conditional sampler, a
//! lattice (max-linear) variant with a rejection oracle, and a scoring
//! harness with a Gaussian-transform baseline.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod conditional;
pub mod config;
pub mod discrete;
pub mod error;
pub mod geometry;
pub mod model;
pub mod numeric;
pub mod scenario;
pub mod scoring;
pub mod shapes;
pub mod study;
pub mod uncond;

pub use error::{Error, Result};
