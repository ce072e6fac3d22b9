//! Central electron spin dephasing in a dilute ¹³C bath under dynamical decoupling.
//!
//! The crate is organised bottom-up:
//!
//! - [`lattice`]: diamond lattice around a vacancy, random isotope placement and
//!   point-dipole hyperfine tensors.
//! - [`hamiltonian`]: conditional nuclear Hamiltonians `H_0` / `H_1` for the
//!   electron in `m_s = 0` / `m_s = 1`.
//! - [`clusters`]: disjoint partition of the bath into strongly coupled groups.
//! - [`sequences`]: CPMG, XY-n, UDD and fixed-spacing pulse timelines,
//!   composite pulses and timing quantization.
//! - [`propagate`]: branch propagators, coherence curves for ideal and finite
//!   pulses, and single-pulse fidelities.
//! - [`analysis`]: stretched-exponential fits and T2 scaling.
//!
//! Units are fixed crate-wide: angular frequencies in rad/µs, times in µs,
//! lengths in Å, fields in tesla and ħ = 1.

pub mod analysis;
pub mod clusters;
pub mod error;
pub mod hamiltonian;
pub mod lattice;
pub mod linalg;
pub mod propagate;
pub mod sequences;
pub mod units;

pub use error::{Error, Result};
