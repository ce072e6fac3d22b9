//! Run configuration: a versioned TOML document.

use std::path::PathBuf;

use serde::{Deserialize, Serialize};
use spinecho::analysis::KMode;
use spinecho::hamiltonian::{SecondOrderOptions, MAX_CLUSTER_QUBITS};
use spinecho::lattice::LatticeConfig;
use spinecho::propagate::PulseErrorModel;
use spinecho::sequences::{PulseModel, PulseShape, SequenceTemplate};
use spinecho::units;

use crate::error::ConfigError;

pub const SCHEMA: &str = "spinecho/1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub schema: String,
    #[serde(default)]
    pub name: Option<String>,
    /// Seeds the lattice draw.
    #[serde(default)]
    pub seed: u64,
    pub bath: BathSpec,
    pub field: FieldSpec,
    #[serde(default)]
    pub partition: PartitionSpec,
    #[serde(default)]
    pub second_order: SecondOrderSpec,
    pub sequences: Vec<SequenceSpec>,
    pub sweep: Sweep,
    #[serde(default)]
    pub pulses: PulseSpec,
    #[serde(default)]
    pub fit: FitSpec,
    /// Rounds pulse centres to this grid before propagation (ideal pulses).
    #[serde(default)]
    pub quantization_grid_ns: Option<f64>,
    #[serde(default)]
    pub output_dir: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "snake_case", deny_unknown_fields)]
pub enum BathSpec {
    Lattice {
        #[serde(default = "default_radius")]
        radius_sites: u32,
        #[serde(default = "default_abundance")]
        abundance: f64,
        /// Baths with any hyperfine norm above this are redrawn.
        #[serde(default = "default_cutoff")]
        strong_hf_cutoff_khz: Option<f64>,
        #[serde(default = "default_attempts")]
        max_attempts: u32,
    },
    File {
        path: PathBuf,
    },
}

fn default_radius() -> u32 {
    10
}
fn default_abundance() -> f64 {
    0.011
}
fn default_cutoff() -> Option<f64> {
    Some(300.0)
}
fn default_attempts() -> u32 {
    50
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FieldSpec {
    pub b_tesla: [f64; 3],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PartitionSpec {
    pub max_size: usize,
    pub threshold_khz: f64,
}

impl Default for PartitionSpec {
    fn default() -> Self {
        Self { max_size: 6, threshold_khz: 0.1 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SecondOrderSpec {
    #[serde(default)]
    pub mediated_coupling: bool,
    #[serde(default)]
    pub enhanced_zeeman: bool,
    #[serde(default = "default_zfs")]
    pub zero_field_splitting_mhz: f64,
}

fn default_zfs() -> f64 {
    2870.0
}

impl Default for SecondOrderSpec {
    fn default() -> Self {
        Self { mediated_coupling: false, enhanced_zeeman: false, zero_field_splitting_mhz: default_zfs() }
    }
}

impl SecondOrderSpec {
    pub fn options(&self) -> SecondOrderOptions {
        SecondOrderOptions {
            enable_mediated_coupling: self.mediated_coupling,
            enable_enhanced_zeeman: self.enhanced_zeeman,
            zero_field_splitting: units::mhz(self.zero_field_splitting_mhz),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Family {
    Cpmg,
    Udd,
    Xy,
}

impl Family {
    pub fn label(self) -> &'static str {
        match self {
            Self::Cpmg => "cpmg",
            Self::Udd => "udd",
            Self::Xy => "xy",
        }
    }

    pub fn template(self, n: usize) -> SequenceTemplate {
        match self {
            Self::Cpmg => SequenceTemplate::Cpmg(n),
            Self::Udd => SequenceTemplate::Udd(n),
            Self::Xy => SequenceTemplate::Xy(n),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SequenceSpec {
    pub family: Family,
    /// Pulse counts; for fixed spacing, the pulse counts along the curve.
    pub n: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case", deny_unknown_fields)]
pub enum Sweep {
    /// `points` equally spaced total times in `(0, t_max]`, with `t_max`
    /// either absolute or `t_max_larmor_per_pulse · n · P_Larmor`.
    Grid {
        points: usize,
        #[serde(default)]
        t_max_us: Option<f64>,
        #[serde(default)]
        t_max_larmor_per_pulse: Option<f64>,
    },
    /// Commensurate revival peaks `T = 2·n·m·P_Larmor` for each multiple `m`.
    Revivals { multiples: Vec<usize> },
    /// CPMG with the edge delay held at each `τ`; `n` lists pulse counts.
    FixedSpacing { tau_us: Vec<f64> },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InputState {
    /// Along the first pulse's rotation axis.
    Parallel,
    Perpendicular,
}

impl InputState {
    pub fn phase(self) -> f64 {
        match self {
            Self::Parallel => 0.0,
            Self::Perpendicular => std::f64::consts::FRAC_PI_2,
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            Self::Parallel => "par",
            Self::Perpendicular => "perp",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ShapeSpec {
    Ideal,
    Square,
    Gaussian,
    Composite,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PulseSpec {
    pub shape: ShapeSpec,
    /// Per pulse, or per sub-pulse for composites.
    #[serde(default)]
    pub duration_ns: Option<f64>,
    /// Sub-pulse shape of composites.
    #[serde(default)]
    pub composite_shape: Option<ShapeSpec>,
    /// Square-pulse Rabi frequency; absent means π-calibrated.
    #[serde(default)]
    pub rabi_mhz: Option<f64>,
    /// Average over the three ¹⁴N hyperfine lines.
    #[serde(default = "yes")]
    pub nitrogen14: bool,
    #[serde(default)]
    pub amplitude_error: f64,
    #[serde(default = "default_step")]
    pub step_ns: f64,
    #[serde(default = "default_inputs")]
    pub inputs: Vec<InputState>,
}

fn yes() -> bool {
    true
}
fn default_step() -> f64 {
    1.0
}
fn default_inputs() -> Vec<InputState> {
    vec![InputState::Parallel]
}

impl Default for PulseSpec {
    fn default() -> Self {
        Self {
            shape: ShapeSpec::Ideal,
            duration_ns: None,
            composite_shape: None,
            rabi_mhz: None,
            nitrogen14: true,
            amplitude_error: 0.0,
            step_ns: default_step(),
            inputs: default_inputs(),
        }
    }
}

impl PulseSpec {
    pub fn model(&self) -> Result<PulseModel, String> {
        let duration = || {
            self.duration_ns
                .filter(|d| *d > 0.0)
                .map(|d| d * 1e-3)
                .ok_or_else(|| "finite pulses need a positive duration_ns".to_string())
        };
        Ok(match self.shape {
            ShapeSpec::Ideal => PulseModel::Ideal,
            ShapeSpec::Square => PulseModel::Square { duration: duration()? },
            ShapeSpec::Gaussian => PulseModel::Gaussian { duration: duration()? },
            ShapeSpec::Composite => {
                let shape = match self.composite_shape.unwrap_or(ShapeSpec::Gaussian) {
                    ShapeSpec::Ideal => PulseShape::IdealInstant,
                    ShapeSpec::Square => PulseShape::Square,
                    ShapeSpec::Gaussian => PulseShape::Gaussian,
                    ShapeSpec::Composite => return Err("composite sub-pulses cannot be composite".into()),
                };
                let duration = if shape == PulseShape::IdealInstant { 0.0 } else { duration()? };
                PulseModel::Composite { shape, duration }
            }
        })
    }

    pub fn error_model(&self) -> PulseErrorModel {
        let rabi = self.rabi_mhz.map(units::mhz);
        let mut err = if self.nitrogen14 { PulseErrorModel::nitrogen14(rabi) } else { PulseErrorModel::perfect() };
        err.rabi_frequency = rabi;
        err.amplitude_error = self.amplitude_error;
        err.step = self.step_ns * 1e-3;
        err
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum KSpec {
    Fixed(f64),
    Named(KName),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KName {
    Free,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FitSpec {
    /// `"free"` or a fixed exponent. Revival envelopes always use 3.
    pub k: KSpec,
}

impl Default for FitSpec {
    fn default() -> Self {
        Self { k: KSpec::Named(KName::Free) }
    }
}

impl FitSpec {
    pub fn mode(&self) -> KMode {
        match self.k {
            KSpec::Fixed(k) => KMode::Fixed(k),
            KSpec::Named(KName::Free) => KMode::Free,
        }
    }
}

/// 1-based line of the first occurrence of `needle` in `source`.
pub fn line_of(source: &str, needle: &str) -> Option<usize> {
    source.lines().position(|l| l.contains(needle)).map(|i| i + 1)
}

impl RunConfig {
    /// Parses and validates. Errors carry the line they refer to.
    pub fn parse(source: &str) -> Result<Self, ConfigError> {
        let cfg: RunConfig = toml::from_str(source).map_err(|e| {
            let line = e.span().map(|s| source[..s.start.min(source.len())].matches('\n').count() + 1);
            ConfigError::new(line, e.message().to_string())
        })?;
        cfg.check(source)?;
        Ok(cfg)
    }

    pub fn lattice(&self) -> Option<(LatticeConfig, u32)> {
        match &self.bath {
            BathSpec::Lattice { radius_sites, abundance, strong_hf_cutoff_khz, max_attempts } => Some((
                LatticeConfig {
                    radius_sites: *radius_sites,
                    abundance: *abundance,
                    seed: self.seed,
                    strong_hf_cutoff: *strong_hf_cutoff_khz,
                    ..Default::default()
                },
                *max_attempts,
            )),
            BathSpec::File { .. } => None,
        }
    }

    /// Schema and physics sanity checks; no computation.
    pub fn check(&self, source: &str) -> Result<(), ConfigError> {
        let at = |needle: &str, msg: String| Err(ConfigError::new(line_of(source, needle), msg));
        if self.schema != SCHEMA {
            return at("schema", format!("unsupported schema {:?}, expected {SCHEMA:?}", self.schema));
        }
        if let Some((lat, attempts)) = self.lattice() {
            if let Err(e) = lat.validate() {
                return at("[bath]", e.to_string());
            }
            if attempts == 0 {
                return at("max_attempts", "max_attempts must be at least 1".into());
            }
        }
        if !self.field.b_tesla.iter().all(|b| b.is_finite()) || self.field.b_tesla.iter().all(|b| *b == 0.0) {
            return at("b_tesla", "field must be finite and non-zero".into());
        }
        let p = &self.partition;
        if p.max_size == 0 || p.max_size > MAX_CLUSTER_QUBITS {
            return at("max_size", format!("max_size must be in 1..={MAX_CLUSTER_QUBITS}"));
        }
        if !(p.threshold_khz >= 0.0) {
            return at("threshold_khz", "threshold_khz must be non-negative".into());
        }
        if let Err(e) = self.second_order.options().validate() {
            return at("[second_order]", e.to_string());
        }
        if self.sequences.is_empty() {
            return at("sequences", "at least one sequence is required".into());
        }
        for s in &self.sequences {
            let fam = format!("\"{}\"", s.family.label());
            if s.n.is_empty() {
                return at(&fam, format!("{} has an empty n list", s.family.label()));
            }
            for &n in &s.n {
                if let Err(e) = s.family.template(n).build(1.0) {
                    return at(&fam, e.to_string());
                }
            }
        }
        let model = match self.pulses.model() {
            Ok(m) => m,
            Err(e) => return at("[pulses]", e),
        };
        match &self.sweep {
            Sweep::Grid { points, t_max_us, t_max_larmor_per_pulse } => {
                if *points == 0 {
                    return at("points", "points must be positive".into());
                }
                match (t_max_us, t_max_larmor_per_pulse) {
                    (Some(t), None) | (None, Some(t)) if *t > 0.0 && t.is_finite() => {}
                    (Some(_), Some(_)) | (None, None) => {
                        return at("mode", "grid needs exactly one of t_max_us or t_max_larmor_per_pulse".into())
                    }
                    _ => return at("t_max", "grid end time must be positive".into()),
                }
            }
            Sweep::Revivals { multiples } => {
                if multiples.is_empty() || multiples.contains(&0) || multiples.windows(2).any(|w| w[1] <= w[0]) {
                    return at("multiples", "multiples must be positive and increasing".into());
                }
                if let Some(s) = self.sequences.iter().find(|s| s.n.iter().any(|&n| !s.family.template(n).commensurate())) {
                    return at(
                        &format!("\"{}\"", s.family.label()),
                        format!("revivals require commensurate spacing; {} is not", s.family.label()),
                    );
                }
            }
            Sweep::FixedSpacing { tau_us } => {
                if tau_us.is_empty() || tau_us.iter().any(|t| !(*t > 0.0)) {
                    return at("tau_us", "tau_us must be a non-empty list of positive delays".into());
                }
                for s in &self.sequences {
                    if s.family != Family::Cpmg {
                        return at(&format!("\"{}\"", s.family.label()), "fixed spacing supports cpmg only".into());
                    }
                    if s.n.iter().any(|n| n % 2 == 1) || s.n.windows(2).any(|w| w[1] <= w[0]) {
                        return at("n =", "fixed-spacing pulse counts must be even and increasing".into());
                    }
                }
            }
        }
        if !model.is_ideal() && !matches!(self.sweep, Sweep::Grid { .. }) {
            return at("[pulses]", "finite pulses are supported with the grid sweep only".into());
        }
        if !model.is_ideal() {
            if let Err(e) = self.pulses.error_model().validate() {
                return at("[pulses]", e.to_string());
            }
        }
        if let Some(g) = self.quantization_grid_ns {
            if !(g > 0.0) {
                return at("quantization_grid_ns", "quantization grid must be positive".into());
            }
            if !model.is_ideal() {
                return at("quantization_grid_ns", "quantization applies to ideal pulses only".into());
            }
        }
        if let KSpec::Fixed(k) = self.fit.k {
            if !(k > 0.0) {
                return at("k =", "fixed exponent must be positive".into());
            }
        }
        Ok(())
    }
}
