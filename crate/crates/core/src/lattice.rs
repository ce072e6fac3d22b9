//! Diamond lattice around a vacancy, random ¹³C placement and point-dipole
//! hyperfine tensors.
//!
//! The vacancy sits at the origin on a lattice site of the conventional
//! diamond cubic cell. The nitrogen neighbour along `[111]` is excluded from
//! isotope placement, as is the vacancy itself.
//!
//! Randomness comes from `ChaCha8Rng::seed_from_u64(seed)`. Cell layers along
//! `x` use independent streams (`set_stream(layer)`, `layer = i + radius`), so
//! the occupancy of any layer does not depend on how many draws other layers
//! consumed. Inside a layer, sites are visited in `(j, k, basis)` order with
//! one uniform draw per site.

use std::fmt::Write as _;

use nalgebra::{Matrix3, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::units::{self, DIAMOND_BOND_LENGTH, DIAMOND_LATTICE_CONSTANT, GAMMA_C13, GAMMA_E};
use crate::{Error, Result};

/// Fractional coordinates of the eight atoms of the conventional cell.
const BASIS: [[f64; 3]; 8] = [
    [0.0, 0.0, 0.0],
    [0.0, 0.5, 0.5],
    [0.5, 0.0, 0.5],
    [0.5, 0.5, 0.0],
    [0.25, 0.25, 0.25],
    [0.25, 0.75, 0.75],
    [0.75, 0.25, 0.75],
    [0.75, 0.75, 0.25],
];

/// Fractional position of the nitrogen atom relative to the vacancy.
const NITROGEN: [f64; 3] = [0.25, 0.25, 0.25];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatticeConfig {
    /// Conventional cells enumerated in each direction from the defect.
    pub radius_sites: u32,
    /// ¹³C abundance in `[0, 1]`.
    pub abundance: f64,
    pub seed: u64,
    /// Å.
    pub lattice_constant: f64,
    /// Regeneration threshold on the hyperfine norm, kHz.
    pub strong_hf_cutoff: Option<f64>,
}

impl Default for LatticeConfig {
    fn default() -> Self {
        Self {
            radius_sites: 10,
            abundance: 0.011,
            seed: 0,
            lattice_constant: DIAMOND_LATTICE_CONSTANT,
            strong_hf_cutoff: Some(300.0),
        }
    }
}

impl LatticeConfig {
    pub fn validate(&self) -> Result<()> {
        if self.radius_sites < 1 {
            return Err(Error::InvalidParameter("radius_sites must be at least 1".into()));
        }
        if !(0.0..=1.0).contains(&self.abundance) {
            return Err(Error::InvalidParameter(format!(
                "abundance {} outside [0, 1]",
                self.abundance
            )));
        }
        if !(self.lattice_constant > 0.0) {
            return Err(Error::InvalidParameter("lattice_constant must be positive".into()));
        }
        if let Some(c) = self.strong_hf_cutoff {
            if !(c > 0.0) {
                return Err(Error::InvalidParameter("strong_hf_cutoff must be positive".into()));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NuclearSite {
    /// Å, relative to the vacancy.
    pub position: Vector3<f64>,
    /// rad·s⁻¹·T⁻¹.
    pub gamma_n: f64,
    /// Symmetric hyperfine tensor, rad/µs.
    pub hyperfine: Matrix3<f64>,
}

impl NuclearSite {
    /// Largest singular value of the hyperfine tensor, rad/µs.
    pub fn hyperfine_norm(&self) -> f64 {
        self.hyperfine
            .singular_values()
            .iter()
            .fold(0.0_f64, |m, &s| m.max(s))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SpinBath {
    pub sites: Vec<NuclearSite>,
    /// Tesla.
    pub b_field: Vector3<f64>,
    /// Bare nuclear Larmor angular frequency γ_n·|B|, rad/µs.
    pub omega_l: f64,
    pub seed_used: u64,
    pub abundance: f64,
}

impl SpinBath {
    pub fn len(&self) -> usize {
        self.sites.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sites.is_empty()
    }

    /// Unit vector along the field.
    pub fn field_direction(&self) -> Vector3<f64> {
        let n = self.b_field.norm();
        if n > 0.0 {
            self.b_field / n
        } else {
            Vector3::z()
        }
    }

    /// Nuclear Larmor period 2π/ω_L, µs.
    pub fn larmor_period(&self) -> f64 {
        std::f64::consts::TAU / self.omega_l
    }

    /// A bath built from explicit sites, e.g. for tests or synthetic inputs.
    pub fn from_sites(sites: Vec<NuclearSite>, b_field: Vector3<f64>) -> Self {
        let gamma = sites.first().map_or(GAMMA_C13, |s| s.gamma_n);
        Self {
            sites,
            b_field,
            omega_l: larmor(gamma, &b_field),
            seed_used: 0,
            abundance: 0.0,
        }
    }
}

fn larmor(gamma_n: f64, b: &Vector3<f64>) -> f64 {
    gamma_n * b.norm() * units::PER_SECOND_TO_PER_MICROSECOND
}

/// Point-dipole hyperfine tensor `b·(3 n̂n̂ᵀ − 1)/r³` in rad/µs for a nucleus at
/// `position` (Å).
pub fn point_dipole_hyperfine(position: &Vector3<f64>, gamma_e: f64, gamma_n: f64) -> Result<Matrix3<f64>> {
    let r = position.norm();
    // small slack so the nearest neighbours themselves are accepted
    if !(r >= DIAMOND_BOND_LENGTH * (1.0 - 1e-6)) {
        return Err(Error::TooClose { r });
    }
    let n = position / r;
    let b = units::dipolar_prefactor(gamma_e, gamma_n) / (r * r * r);
    let mut a = Matrix3::zeros();
    for i in 0..3 {
        for j in 0..3 {
            let delta = if i == j { 1.0 } else { 0.0 };
            a[(i, j)] = b * (3.0 * (n[i] * n[j]) - delta);
        }
    }
    Ok(a)
}

/// Every carbon position (Å) within `radius` conventional cells of the vacancy,
/// excluding the vacancy and the nitrogen site, grouped by `x` layer.
fn carbon_layers(radius: u32, a: f64) -> Vec<Vec<Vector3<f64>>> {
    let r = radius as i64;
    (-r..=r)
        .map(|i| {
            let mut layer = Vec::with_capacity(((2 * r + 1) * (2 * r + 1) * 8) as usize);
            for j in -r..=r {
                for k in -r..=r {
                    for b in BASIS.iter() {
                        let f = [i as f64 + b[0], j as f64 + b[1], k as f64 + b[2]];
                        if f == [0.0, 0.0, 0.0] || f == NITROGEN {
                            continue;
                        }
                        layer.push(Vector3::new(f[0] * a, f[1] * a, f[2] * a));
                    }
                }
            }
            layer
        })
        .collect()
}

/// Number of candidate carbon sites for the given radius.
pub fn candidate_site_count(radius: u32) -> usize {
    let side = 2 * radius as usize + 1;
    side * side * side * BASIS.len() - 2
}

/// Randomly populates the lattice with ¹³C and fills in hyperfine tensors.
///
/// An empty bath is a legal result.
pub fn generate_bath(config: &LatticeConfig, b_field: Vector3<f64>) -> Result<SpinBath> {
    config.validate()?;
    if !(b_field.norm() > 0.0) {
        return Err(Error::InvalidParameter("magnetic field must be non-zero".into()));
    }
    let mut sites = Vec::new();
    for (layer_idx, layer) in carbon_layers(config.radius_sites, config.lattice_constant)
        .into_iter()
        .enumerate()
    {
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        rng.set_stream(layer_idx as u64);
        for pos in layer {
            let u: f64 = rng.gen();
            if u < config.abundance {
                let hyperfine = point_dipole_hyperfine(&pos, GAMMA_E, GAMMA_C13)?;
                sites.push(NuclearSite {
                    position: pos,
                    gamma_n: GAMMA_C13,
                    hyperfine,
                });
            }
        }
    }
    Ok(SpinBath {
        sites,
        b_field,
        omega_l: larmor(GAMMA_C13, &b_field),
        seed_used: config.seed,
        abundance: config.abundance,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HyperfineVerdict {
    Accepted,
    /// Index of the first site above the cutoff.
    Rejected { site: usize },
}

/// Checks whether any site's hyperfine norm exceeds `cutoff_khz`.
pub fn filter_strong_hyperfine(bath: &SpinBath, cutoff_khz: f64) -> Result<HyperfineVerdict> {
    if !(cutoff_khz > 0.0) {
        return Err(Error::InvalidParameter("hyperfine cutoff must be positive".into()));
    }
    Ok(bath
        .sites
        .iter()
        .position(|s| units::to_khz(s.hyperfine_norm()) > cutoff_khz)
        .map_or(HyperfineVerdict::Accepted, |site| HyperfineVerdict::Rejected { site }))
}

/// Generates baths until one passes the strong-hyperfine filter (when a
/// cutoff is configured). Attempt `i` uses `seed + i·0x9E3779B97F4A7C15`
/// (wrapping), so neighbouring user seeds never share a retry.
pub fn generate_accepted_bath(config: &LatticeConfig, b_field: Vector3<f64>, max_attempts: u32) -> Result<SpinBath> {
    let Some(cutoff) = config.strong_hf_cutoff else {
        return generate_bath(config, b_field);
    };
    for attempt in 0..max_attempts.max(1) {
        let cfg = LatticeConfig {
            seed: retry_seed(config.seed, attempt),
            ..config.clone()
        };
        let bath = generate_bath(&cfg, b_field)?;
        if filter_strong_hyperfine(&bath, cutoff)? == HyperfineVerdict::Accepted {
            return Ok(bath);
        }
    }
    Err(Error::InvalidParameter(format!(
        "no bath without couplings above {cutoff} kHz within {max_attempts} seeds"
    )))
}

/// Seed of regeneration attempt `attempt`.
pub fn retry_seed(seed: u64, attempt: u32) -> u64 {
    seed.wrapping_add((attempt as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15))
}

const BATH_MAGIC: &str = "# spinecho bath v1";

/// Text serialisation: a commented header followed by one site per line,
/// `x y z axx axy axz ayy ayz azz`. Floats use shortest round-trip notation so
/// a reload is bit-identical.
pub fn write_bath(bath: &SpinBath) -> String {
    let mut out = String::new();
    let g = bath.sites.first().map_or(GAMMA_C13, |s| s.gamma_n);
    let b = bath.b_field;
    writeln!(out, "{BATH_MAGIC}").unwrap();
    writeln!(out, "# seed = {}", bath.seed_used).unwrap();
    writeln!(out, "# abundance = {:?}", bath.abundance).unwrap();
    writeln!(out, "# b_field_t = {:?} {:?} {:?}", b.x, b.y, b.z).unwrap();
    writeln!(out, "# gamma_n = {g:?}").unwrap();
    writeln!(out, "# sites = {}", bath.sites.len()).unwrap();
    for s in &bath.sites {
        let p = s.position;
        let a = s.hyperfine;
        writeln!(
            out,
            "{:?} {:?} {:?} {:?} {:?} {:?} {:?} {:?} {:?}",
            p.x,
            p.y,
            p.z,
            a[(0, 0)],
            a[(0, 1)],
            a[(0, 2)],
            a[(1, 1)],
            a[(1, 2)],
            a[(2, 2)]
        )
        .unwrap();
    }
    out
}

pub fn read_bath(text: &str) -> Result<SpinBath> {
    let err = |line: usize, msg: &str| Error::BathFormat { line, msg: msg.to_string() };
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, l)) if l.trim() == BATH_MAGIC => {}
        _ => return Err(err(1, "missing bath header")),
    }
    let mut seed = None;
    let mut abundance = None;
    let mut field = None;
    let mut gamma = GAMMA_C13;
    let mut expected = None;
    let mut sites = Vec::new();
    for (idx, raw) in lines {
        let line_no = idx + 1;
        let line = raw.trim();
        if line.is_empty() {
            continue;
        }
        if let Some(rest) = line.strip_prefix('#') {
            let Some((key, value)) = rest.split_once('=') else { continue };
            let value = value.trim();
            let num = |v: &str| v.parse::<f64>().map_err(|e| err(line_no, &e.to_string()));
            match key.trim() {
                "seed" => seed = Some(value.parse::<u64>().map_err(|e| err(line_no, &e.to_string()))?),
                "abundance" => abundance = Some(num(value)?),
                "gamma_n" => gamma = num(value)?,
                "sites" => expected = Some(value.parse::<usize>().map_err(|e| err(line_no, &e.to_string()))?),
                "b_field_t" => {
                    let v = value.split_whitespace().map(num).collect::<Result<Vec<_>>>()?;
                    if v.len() != 3 {
                        return Err(err(line_no, "b_field_t needs three components"));
                    }
                    field = Some(Vector3::new(v[0], v[1], v[2]));
                }
                _ => {}
            }
            continue;
        }
        let v = line
            .split_whitespace()
            .map(|t| t.parse::<f64>().map_err(|e| err(line_no, &e.to_string())))
            .collect::<Result<Vec<_>>>()?;
        if v.len() != 9 {
            return Err(err(line_no, "expected 9 columns"));
        }
        let hyperfine = Matrix3::new(v[3], v[4], v[5], v[4], v[6], v[7], v[5], v[7], v[8]);
        sites.push(NuclearSite {
            position: Vector3::new(v[0], v[1], v[2]),
            gamma_n: gamma,
            hyperfine,
        });
    }
    let b_field = field.ok_or_else(|| err(1, "missing b_field_t"))?;
    if let Some(n) = expected {
        if n != sites.len() {
            return Err(err(1, &format!("header declares {n} sites, found {}", sites.len())));
        }
    }
    Ok(SpinBath {
        sites,
        b_field,
        omega_l: larmor(gamma, &b_field),
        seed_used: seed.unwrap_or(0),
        abundance: abundance.unwrap_or(0.0),
    })
}
