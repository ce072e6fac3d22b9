//! Physical constants in the crate's unit system (rad/µs, µs, Å, T, ħ = 1).

use std::f64::consts::TAU;

/// Vacuum permeability over 4π, T·m/A.
pub const MU0_OVER_4PI: f64 = 1.0e-7;
/// Reduced Planck constant, J·s.
pub const HBAR: f64 = 1.054_571_817e-34;

/// Electron gyromagnetic ratio, rad·s⁻¹·T⁻¹ (|γ_e|/2π = 28.025 GHz/T).
pub const GAMMA_E: f64 = TAU * 28.025e9;
/// ¹³C gyromagnetic ratio, rad·s⁻¹·T⁻¹ (γ/2π = 10.7084 MHz/T).
pub const GAMMA_C13: f64 = TAU * 10.7084e6;

/// Conventional cubic lattice constant of diamond, Å.
pub const DIAMOND_LATTICE_CONSTANT: f64 = 3.567;
/// C–C bond length, Å.
pub const DIAMOND_BOND_LENGTH: f64 = DIAMOND_LATTICE_CONSTANT * 0.433_012_701_892_219_3;

/// NV ground-state zero-field splitting, rad/µs.
pub const NV_ZERO_FIELD_SPLITTING: f64 = TAU * 2870.0;
/// ¹⁴N hyperfine splitting seen by the electron, rad/µs.
pub const N14_HYPERFINE: f64 = TAU * 2.1;

/// rad/s → rad/µs.
pub const PER_SECOND_TO_PER_MICROSECOND: f64 = 1.0e-6;

/// Converts an ordinary frequency in MHz to angular frequency in rad/µs.
pub fn mhz(f: f64) -> f64 {
    TAU * f
}

/// Converts an ordinary frequency in kHz to angular frequency in rad/µs.
pub fn khz(f: f64) -> f64 {
    TAU * f * 1.0e-3
}

/// Converts angular frequency in rad/µs to kHz.
pub fn to_khz(omega: f64) -> f64 {
    omega / TAU * 1.0e3
}

/// Dipolar prefactor (μ0/4π)·ħ·γ_a·γ_b in rad/µs·Å³, with γ in rad·s⁻¹·T⁻¹.
pub fn dipolar_prefactor(gamma_a: f64, gamma_b: f64) -> f64 {
    // 1 Å³ = 1e-30 m³
    MU0_OVER_4PI * HBAR * gamma_a * gamma_b * 1.0e30 * PER_SECOND_TO_PER_MICROSECOND
}
