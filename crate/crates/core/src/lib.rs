//! Forward simulation and inverse fitting for optically spin-polarized S=1
//! point defects: spin Hamiltonian and resonance fields, population
//! bookkeeping, optical-pumping rate networks, spin-lattice relaxation,
//! pulse-sequence decays and CW spectra.

// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod constants;
pub mod error;
pub mod lsq;
pub mod photodynamics;
pub mod populations;
pub mod relaxation;
pub mod sequences;
pub mod spectra;
pub mod spin;

pub use error::{Error, Result};
