//! Numerical laboratory for a two-level system exchanging `m` photons with a
//! single field mode under a rotating-wave interaction, with an optional
//! time-dependent drive envelope.
//!
//! The crate builds the model operators on a truncated Fock space, verifies
//! that the relevant-operator hierarchies close under commutation with the
//! Hamiltonian (solving for the structure constants numerically), integrates
//! the resulting mean-value and Lagrange-multiplier flows, constructs
//! maximum-entropy density matrices from constraint sets, and cross-checks
//! everything against exact evolution of the full state.

pub mod algebra;
pub mod dynamics;
pub mod error;
pub mod mep;
pub mod model;
pub mod operator;

pub use error::{Error, Result};
pub use num_complex::Complex64 as C64;
