//! Deterministic two-photon nonlinear-sign (NS) and controlled-Z gates built on
//! the two-photon quantum Rabi model.
//!
//! The crate is organised bottom-up:
//!
//! - [`hilbert`]: truncated Fock ⊗ qubit spaces, operators, states and metrics.
//! - [`models`]: Hamiltonian builders for the strong-coupling, perturbative
//!   ultrastrong (Bloch-Siegert) and dispersive regimes, plus the parameter
//!   solvers that make each NS protocol resonant.
//! - [`dynamics`]: Schrödinger, Lindblad and dressed-state master-equation
//!   propagators.
//! - [`gates`]: NS protocols, the beam splitter lifted to Fock space and the
//!   two-rail C-Z composition.
//! - [`waveguide`]: discretized-waveguide catch / interact / release of
//!   Lorentzian photon wavepackets.
//!
//! All frequencies are angular frequencies in rad/ns and all times are in ns.
//! [`units`] converts from the GHz / MHz / μs⁻¹ conventions used in configs.

pub mod dynamics;
pub mod error;
pub mod gates;
pub mod hilbert;
pub mod models;
pub mod units;
pub mod waveguide;

pub use error::{Error, Result};
pub use num_complex::Complex64 as C64;

/// Crate version, recorded in result manifests.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");
