//! Decoupling pulse timelines.
//!
//! Pulse centres are placed exactly; delays are measured centre to centre and
//! the total time includes the pulse durations. XY-16 and longer are built by
//! appending the phase-inverted (+π) copy of the previous block:
//! `XY-2m = XY-m ‖ XY-m + π` for `m ≥ 8`.

use std::f64::consts::{FRAC_PI_2, PI, TAU};

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PulseShape {
    IdealInstant,
    Square,
    /// Truncated at ±2σ, so σ = duration / 4.
    Gaussian,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PulseEvent {
    /// Rotation axis angle in the transverse plane, radians.
    pub phase: f64,
    pub nominal_angle: f64,
    pub shape: PulseShape,
    /// µs; zero iff ideal-instant.
    pub duration: f64,
    /// µs.
    pub center_time: f64,
}

impl PulseEvent {
    pub fn ideal_pi(phase: f64, center_time: f64) -> Self {
        Self { phase, nominal_angle: PI, shape: PulseShape::IdealInstant, duration: 0.0, center_time }
    }

    pub fn start(&self) -> f64 {
        self.center_time - 0.5 * self.duration
    }

    pub fn end(&self) -> f64 {
        self.center_time + 0.5 * self.duration
    }

    pub fn is_ideal(&self) -> bool {
        self.shape == PulseShape::IdealInstant
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PulseSequence {
    pub name: String,
    /// µs.
    pub total_time: f64,
    pub events: Vec<PulseEvent>,
}

impl PulseSequence {
    fn invalid(&self, reason: impl Into<String>) -> Error {
        Error::InvalidSequence { name: self.name.clone(), reason: reason.into() }
    }

    /// Checks ordering, containment and non-overlap.
    pub fn validate(&self) -> Result<()> {
        if !(self.total_time > 0.0) {
            return Err(self.invalid("total time must be positive"));
        }
        let mut prev_end = 0.0;
        let mut prev_center = f64::NEG_INFINITY;
        for (i, e) in self.events.iter().enumerate() {
            if e.duration < 0.0 || (e.duration == 0.0) != e.is_ideal() {
                return Err(self.invalid(format!("event {i}: duration inconsistent with shape")));
            }
            if !(e.center_time > 0.0 && e.center_time < self.total_time) {
                return Err(self.invalid(format!("event {i}: centre {} outside (0, T)", e.center_time)));
            }
            if !(e.center_time > prev_center) {
                return Err(self.invalid(format!("event {i}: centres not strictly increasing")));
            }
            // one-ulp-scale slack for back-to-back composite sub-pulses
            let slack = 1e-12 * self.total_time;
            if e.start() < prev_end - slack {
                return Err(self.invalid(format!("event {i} overlaps its predecessor")));
            }
            prev_end = e.end();
            prev_center = e.center_time;
        }
        if prev_end > self.total_time * (1.0 + 1e-12) {
            return Err(self.invalid("last pulse extends past the end of the sequence"));
        }
        Ok(())
    }

    pub fn centers(&self) -> Vec<f64> {
        self.events.iter().map(|e| e.center_time).collect()
    }

    pub fn phases(&self) -> Vec<f64> {
        self.events.iter().map(|e| e.phase).collect()
    }

    pub fn all_ideal(&self) -> bool {
        self.events.iter().all(PulseEvent::is_ideal)
    }

    /// Replaces every ideal π pulse by a finite pulse of the given shape.
    pub fn with_finite_pulses(&self, shape: PulseShape, duration: f64) -> Result<Self> {
        if shape == PulseShape::IdealInstant || !(duration > 0.0) {
            return Err(Error::InvalidParameter("finite pulses need a non-ideal shape and positive duration".into()));
        }
        let mut out = self.clone();
        for e in &mut out.events {
            e.shape = shape;
            e.duration = duration;
        }
        out.validate()?;
        Ok(out)
    }

    /// Replaces every pulse by the five-pulse composite centred on it.
    pub fn with_composite_pulses(&self, shape: PulseShape, sub_duration: f64) -> Result<Self> {
        let mut events = Vec::with_capacity(5 * self.events.len());
        for e in &self.events {
            let mut parts = composite_pi(e.phase, shape, sub_duration)?;
            for p in &mut parts {
                p.center_time += e.center_time;
            }
            events.extend(parts);
        }
        let out = Self { name: format!("{}-composite", self.name), total_time: self.total_time, events };
        out.validate()?;
        Ok(out)
    }
}

fn build(name: String, total_time: f64, centers: Vec<f64>, phases: Vec<f64>) -> Result<PulseSequence> {
    let events = centers
        .into_iter()
        .zip(phases)
        .map(|(c, p)| PulseEvent::ideal_pi(p, c))
        .collect();
    let seq = PulseSequence { name, total_time, events };
    seq.validate()?;
    Ok(seq)
}

fn check_n_t(n: usize, total_time: f64) -> Result<()> {
    if n < 1 {
        return Err(Error::InvalidParameter("need at least one pulse".into()));
    }
    if !(total_time > 0.0 && total_time.is_finite()) {
        return Err(Error::InvalidParameter(format!("total time {total_time} must be positive")));
    }
    Ok(())
}

fn cpmg_centers(n: usize, total_time: f64) -> Vec<f64> {
    (1..=n)
        .map(|k| (2 * k - 1) as f64 * total_time / (2 * n) as f64)
        .collect()
}

/// Equally spaced π pulses about X at `(2k−1)·T/(2n)`.
pub fn cpmg(n: usize, total_time: f64) -> Result<PulseSequence> {
    check_n_t(n, total_time)?;
    build(format!("CPMG-{n}"), total_time, cpmg_centers(n, total_time), vec![0.0; n])
}

/// Uhrig spacing, `t_k = T·sin²(πk/(2n+2))`. For one or two pulses this is
/// the equal spacing, which is used verbatim so the two agree bit for bit.
pub fn udd(n: usize, total_time: f64) -> Result<PulseSequence> {
    check_n_t(n, total_time)?;
    if n <= 2 {
        return build(format!("UDD-{n}"), total_time, cpmg_centers(n, total_time), vec![0.0; n]);
    }
    let centers = (1..=n)
        .map(|k| {
            let s = (PI * k as f64 / (2 * n + 2) as f64).sin();
            total_time * s * s
        })
        .collect();
    build(format!("UDD-{n}"), total_time, centers, vec![0.0; n])
}

/// Phase list of the XY-n super-cycle.
pub fn xy_phases(n: usize) -> Result<Vec<f64>> {
    const X: f64 = 0.0;
    const Y: f64 = FRAC_PI_2;
    match n {
        4 => Ok(vec![X, Y, X, Y]),
        8 => Ok(vec![X, Y, X, Y, Y, X, Y, X]),
        16 | 32 | 64 => {
            let half = xy_phases(n / 2)?;
            let inverted: Vec<f64> = half.iter().map(|p| (p + PI).rem_euclid(TAU)).collect();
            Ok(half.into_iter().chain(inverted).collect())
        }
        _ => Err(Error::UnsupportedXy(n)),
    }
}

/// CPMG spacings with XY-family phase cycling.
pub fn xy_family(n: usize, total_time: f64) -> Result<PulseSequence> {
    let phases = xy_phases(n)?;
    check_n_t(n, total_time)?;
    build(format!("XY-{n}"), total_time, cpmg_centers(n, total_time), phases)
}

/// `(τ − π − 2τ − π − τ)^n_blocks`.
pub fn fixed_spacing_cpmg(tau: f64, n_blocks: usize) -> Result<PulseSequence> {
    if !(tau > 0.0) || n_blocks < 1 {
        return Err(Error::InvalidParameter("fixed-spacing CPMG needs tau > 0 and at least one block".into()));
    }
    let n = 2 * n_blocks;
    let centers = (1..=n).map(|k| (2 * k - 1) as f64 * tau).collect();
    build(format!("CPMG-fixed-{n_blocks}"), 4.0 * tau * n_blocks as f64, centers, vec![0.0; n])
}

/// Sub-pulse phase offsets of the five-pulse composite π, degrees.
pub const COMPOSITE_PHASES_DEG: [f64; 5] = [30.0, 0.0, 90.0, 0.0, 30.0];

/// Five back-to-back π rotations at `base_phase + {30°, 0°, 90°, 0°, 30°}`,
/// centred on time zero. Their product is a π rotation about `base_phase`
/// preceded by a 60° `z` rotation.
pub fn composite_pi(base_phase: f64, shape: PulseShape, duration: f64) -> Result<Vec<PulseEvent>> {
    let (shape, duration) = match shape {
        PulseShape::IdealInstant => (shape, 0.0),
        _ if duration > 0.0 => (shape, duration),
        _ => return Err(Error::InvalidParameter("composite sub-pulse duration must be positive".into())),
    };
    // ideal sub-pulses are separated by a vanishing gap so centres stay ordered
    let pitch = if duration > 0.0 { duration } else { 1e-9 };
    Ok(COMPOSITE_PHASES_DEG
        .iter()
        .enumerate()
        .map(|(i, deg)| PulseEvent {
            phase: (base_phase + deg.to_radians()).rem_euclid(TAU),
            nominal_angle: PI,
            shape,
            duration,
            center_time: (i as f64 - 2.0) * pitch,
        })
        .collect())
}

/// Rounds `t` to the nearest multiple of `grid`, halves rounding up.
fn round_to_grid(t: f64, grid: f64) -> f64 {
    let steps = (t / grid + 0.5).floor();
    let inv = 1.0 / grid;
    // divide by an exact integer reciprocal where possible (e.g. 2 ns grids)
    if (inv - inv.round()).abs() < 1e-9 * inv {
        steps / inv.round()
    } else {
        steps * grid
    }
}

/// Moves every pulse centre onto a `grid`-µs clock.
pub fn quantize_timing(seq: &PulseSequence, grid: f64) -> Result<PulseSequence> {
    if !(grid > 0.0) {
        return Err(Error::InvalidParameter("quantization grid must be positive".into()));
    }
    let mut out = seq.clone();
    for e in &mut out.events {
        e.center_time = round_to_grid(e.center_time, grid);
    }
    for i in 1..out.events.len() {
        if out.events[i].center_time <= out.events[i - 1].center_time {
            return Err(Error::QuantizationCollision(i - 1, i));
        }
    }
    out.validate()?;
    Ok(out)
}

/// Sequence families that can be rescaled to any total time.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "family", content = "n", rename_all = "snake_case")]
pub enum SequenceTemplate {
    Cpmg(usize),
    Udd(usize),
    Xy(usize),
}

impl SequenceTemplate {
    pub fn pulses(&self) -> usize {
        match *self {
            Self::Cpmg(n) | Self::Udd(n) | Self::Xy(n) => n,
        }
    }

    pub fn build(&self, total_time: f64) -> Result<PulseSequence> {
        match *self {
            Self::Cpmg(n) => cpmg(n, total_time),
            Self::Udd(n) => udd(n, total_time),
            Self::Xy(n) => xy_family(n, total_time),
        }
    }

    /// Equal spacing allows echo revivals; Uhrig spacing does not.
    pub fn commensurate(&self) -> bool {
        !matches!(self, Self::Udd(_))
    }

    /// Total time at which the `m`-th commensurate revival occurs, given the
    /// nuclear Larmor period: every free interval is a whole number of periods
    /// when the edge delay `T/(2n)` equals `m` periods.
    pub fn revival_time(&self, m: usize, larmor_period: f64) -> Option<f64> {
        self.commensurate()
            .then(|| 2.0 * self.pulses() as f64 * m as f64 * larmor_period)
    }
}

/// How the nominal ideal π pulses of a template are realised.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "model", rename_all = "snake_case")]
pub enum PulseModel {
    Ideal,
    /// µs.
    Square { duration: f64 },
    /// µs, full ±2σ width.
    Gaussian { duration: f64 },
    /// Five-pulse composite per π pulse; `duration` is per sub-pulse.
    Composite { shape: PulseShape, duration: f64 },
}

impl PulseModel {
    pub fn is_ideal(&self) -> bool {
        matches!(self, Self::Ideal)
    }

    pub fn apply(&self, nominal: &PulseSequence) -> Result<PulseSequence> {
        match *self {
            Self::Ideal => Ok(nominal.clone()),
            Self::Square { duration } => nominal.with_finite_pulses(PulseShape::Square, duration),
            Self::Gaussian { duration } => nominal.with_finite_pulses(PulseShape::Gaussian, duration),
            Self::Composite { shape, duration } => nominal.with_composite_pulses(shape, duration),
        }
    }
}
