//! Physical constants and reference values shared across the toolkit.
//!
//! Internal units are MHz, mT, K and s. Energies of spin levels are carried
//! as frequencies (MHz); phonon energies in meV.

/// Electron gyromagnetic ratio used for field/frequency conversion (MHz/mT).
pub const GAMMA_E_MHZ_PER_MT: f64 = 28.025;

/// g-value at which [`GAMMA_E_MHZ_PER_MT`] applies.
pub const G_REFERENCE: f64 = 2.0028;

/// Boltzmann constant in meV/K.
pub const K_B_MEV_PER_K: f64 = 0.086_173_33;

/// h/k_B expressed in K per MHz, for converting level frequencies to
/// Boltzmann exponents.
pub const H_OVER_K_B_K_PER_MHZ: f64 = 4.799_243_073_366_221e-5;

/// Default room-temperature reference for dark intensities (K).
pub const ROOM_TEMPERATURE_K: f64 = 292.0;

/// Default X-band microwave frequency (MHz).
pub const X_BAND_MHZ: f64 = 9750.0;
