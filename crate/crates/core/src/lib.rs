//! Quantum process tomography for the two bound vibrational bands of atoms in
//! a vertical 1-D optical lattice.
//!
//! The crate is organized bottom-up:
//!
//! * [`lattice`]: band structure, bound states, displacement coupling and
//!   Landau–Zener escape rates of a sinusoidal lattice under gravity.
//! * [`states`]: 2×2 density matrices, projective measurements onto the
//!   non-orthogonal analysis set and linear-inversion state tomography.
//! * [`channels`]: Choi, Kraus and Bloch-affine representations of qubit
//!   channels, plus the named analytic channels.
//! * [`mle`]: maximum-likelihood Choi estimation over completely positive maps.
//! * [`sim`]: simulator of the preparation / evolution / measurement
//!   protocol that produces tomography datasets with a known channel.

pub mod channels;
pub mod constants;
mod error;
pub mod lattice;
mod linalg;
pub mod mle;
pub mod sim;
pub mod states;

pub use error::{Error, Result};
pub use num_complex::Complex64;
