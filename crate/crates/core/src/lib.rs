//! Mixed quantum-classical and exact simulation of spontaneous emission for a
//! few-level atom in a one-dimensional multimode cavity.
//!
//! Two solvers share the same observable contracts:
//!
//! * [`mtef`]: multi-trajectory Ehrenfest dynamics. The field modes are
//!   classical oscillators whose initial conditions are drawn from the vacuum
//!   Wigner function ([`sampling`]); the atom is a density matrix evolving in
//!   the instantaneous field of each trajectory.
//! * [`exact`]: Schrödinger propagation in an excitation-truncated
//!   atom ⊗ Fock basis.
//!
//! Field observables are normal ordered, so the vacuum contributes zero to
//! photon number, intensity and the second-order correlation numerator.
//! Everything is in atomic units.

pub mod error;
pub mod exact;
pub mod model;
pub mod mtef;
pub mod observables;
pub mod sampling;
pub mod stats;

pub use error::{Error, Result};
pub use num_complex::Complex64;
