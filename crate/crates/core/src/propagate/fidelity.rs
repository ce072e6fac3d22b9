//! Electron-only pulse fidelity under static detuning.

use nalgebra::Matrix2;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use super::finite::{pulse_segments, PulseErrorModel};
use crate::sequences::PulseEvent;
use crate::Result;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FidelityConvention {
    /// `|Tr(U_t† U)| / d`.
    #[default]
    TraceOverlap,
    /// `|Tr(U_t† U)|² / d²`.
    SquaredOverlap,
}

/// `exp(−i·angle·(cos φ σx + sin φ σy)/2)`.
pub fn rotation(phase: f64, angle: f64) -> Matrix2<Complex64> {
    let (s, c) = (0.5 * angle).sin_cos();
    let off = Complex64::new(0.0, -s);
    Matrix2::new(
        Complex64::new(c, 0.0),
        off * Complex64::from_polar(1.0, -phase),
        off * Complex64::from_polar(1.0, phase),
        Complex64::new(c, 0.0),
    )
}

/// `exp(−i·angle·σz/2)`.
pub fn z_rotation(angle: f64) -> Matrix2<Complex64> {
    Matrix2::new(
        Complex64::from_polar(1.0, -0.5 * angle),
        Complex64::new(0.0, 0.0),
        Complex64::new(0.0, 0.0),
        Complex64::from_polar(1.0, 0.5 * angle),
    )
}

/// Ideal action of the five-pulse composite: a 60° `z` rotation followed by
/// a π rotation about `base_phase`.
pub fn composite_target(base_phase: f64) -> Matrix2<Complex64> {
    rotation(base_phase, std::f64::consts::PI) * z_rotation(60f64.to_radians())
}

/// Constant-drive step: `H = (Ω/2)(cos φ σx + sin φ σy) + Δ|1⟩⟨1|` for `dt`.
fn driven_step(omega: f64, phase: f64, detuning: f64, dt: f64) -> Matrix2<Complex64> {
    // H = Δ/2·1 + h·σ with h = (Ω/2 cos φ, Ω/2 sin φ, −Δ/2)
    let h = [0.5 * omega * phase.cos(), 0.5 * omega * phase.sin(), -0.5 * detuning];
    let norm = (h[0] * h[0] + h[1] * h[1] + h[2] * h[2]).sqrt();
    let global = Complex64::from_polar(1.0, -0.5 * detuning * dt);
    if norm == 0.0 {
        return Matrix2::identity() * global;
    }
    let (s, c) = (norm * dt).sin_cos();
    let n = [h[0] / norm, h[1] / norm, h[2] / norm];
    let mi = Complex64::new(0.0, -s);
    let u = Matrix2::new(
        Complex64::new(c, 0.0) + mi * n[2],
        mi * Complex64::new(n[0], -n[1]),
        mi * Complex64::new(n[0], n[1]),
        Complex64::new(c, 0.0) - mi * n[2],
    );
    u * global
}

/// Electron propagator over the span of `events` (first start to last end)
/// for one detuning line.
pub(crate) fn electron_unitary(events: &[PulseEvent], err: &PulseErrorModel, detuning: f64) -> Result<Matrix2<Complex64>> {
    let mut u = Matrix2::identity();
    let mut cursor = events.first().map_or(0.0, PulseEvent::start);
    for ev in events {
        let gap = ev.start() - cursor;
        if gap > 0.0 {
            u = driven_step(0.0, 0.0, detuning, gap) * u;
        }
        if ev.is_ideal() {
            u = rotation(ev.phase, ev.nominal_angle * (1.0 + err.amplitude_error)) * u;
        } else {
            for (omega, dt) in pulse_segments(ev, err)? {
                u = driven_step(omega, ev.phase, detuning, dt) * u;
            }
        }
        cursor = ev.end();
    }
    Ok(u)
}

/// Detuning-averaged fidelity of `events` against `target`.
pub fn pulse_fidelity(
    events: &[PulseEvent],
    err: &PulseErrorModel,
    target: &Matrix2<Complex64>,
    convention: FidelityConvention,
) -> Result<f64> {
    err.validate()?;
    let mut f = 0.0;
    for &(detuning, weight) in &err.detunings {
        let u = electron_unitary(events, err, detuning)?;
        let overlap = (target.adjoint() * u).trace().norm() / 2.0;
        f += weight
            * match convention {
                FidelityConvention::TraceOverlap => overlap,
                FidelityConvention::SquaredOverlap => overlap * overlap,
            };
    }
    Ok(f)
}
