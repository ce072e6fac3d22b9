//! Conditional nuclear Hamiltonians for a cluster of bath spins.
//!
//! With the electron in `m_s = 0` the nuclei see only their Zeeman term and
//! their mutual dipolar coupling; in `m_s = 1` the `z` row of each hyperfine
//! tensor is added on top. Optional second-order corrections come from
//! virtual transitions to the other electron levels across the zero-field
//! splitting `Δ`:
//!
//! - electron-mediated coupling, `−(1/Δ) Σ_{j≠k} Σ_{a=x,y} K_j^a K_k^a` in
//!   `m_s = 0` and `+(1/2Δ)` times the same sum in `m_s = 1`, where
//!   `K_j^a = Σ_b A_j^{ab} I_j^b`;
//! - hyperfine-enhanced Zeeman, `−(2γ_e/Δ) Σ_j Σ_{a=x,y} B_a K_j^a` in
//!   `m_s = 0` and `+(γ_e/Δ) Σ_j Σ_{a=x,y} B_a K_j^a − (1/2Δ) Σ_j (A_j^x × A_j^y)·I_j`
//!   in `m_s = 1`.
//!
//! Terms proportional to the identity are dropped; they only shift the
//! electron resonance.

use nalgebra::{Matrix3, Vector3};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::lattice::SpinBath;
use crate::linalg::{CMatrix, ZERO};
use crate::units::{self, GAMMA_E};
use crate::{Error, Result};

/// Hard cap on the number of spins in one dense cluster (4096 states).
pub const MAX_CLUSTER_QUBITS: usize = 12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SecondOrderOptions {
    pub enable_mediated_coupling: bool,
    pub enable_enhanced_zeeman: bool,
    /// rad/µs.
    pub zero_field_splitting: f64,
}

impl SecondOrderOptions {
    pub fn off() -> Self {
        Self {
            enable_mediated_coupling: false,
            enable_enhanced_zeeman: false,
            zero_field_splitting: units::NV_ZERO_FIELD_SPLITTING,
        }
    }

    pub fn full() -> Self {
        Self {
            enable_mediated_coupling: true,
            enable_enhanced_zeeman: true,
            zero_field_splitting: units::NV_ZERO_FIELD_SPLITTING,
        }
    }

    pub fn any(&self) -> bool {
        self.enable_mediated_coupling || self.enable_enhanced_zeeman
    }

    pub fn validate(&self) -> Result<()> {
        if self.any() && !(self.zero_field_splitting > 0.0) {
            return Err(Error::InvalidParameter(
                "zero_field_splitting must be positive when second-order terms are enabled".into(),
            ));
        }
        Ok(())
    }
}

impl Default for SecondOrderOptions {
    fn default() -> Self {
        Self::off()
    }
}

#[derive(Debug, Clone)]
pub struct ClusterHamiltonians {
    pub indices: Vec<usize>,
    pub h0: CMatrix,
    pub h1: CMatrix,
}

impl ClusterHamiltonians {
    pub fn size(&self) -> usize {
        self.indices.len()
    }

    pub fn dim(&self) -> usize {
        self.h0.nrows()
    }

    /// The trivial zero-spin cluster (1×1 zero matrices).
    pub fn empty() -> Self {
        Self {
            indices: Vec::new(),
            h0: CMatrix::zeros(1, 1),
            h1: CMatrix::zeros(1, 1),
        }
    }
}

/// Spin-1/2 operators `(Ix, Iy, Iz)` of qubit `site` embedded in a `g`-spin
/// register. Site 0 is the most significant tensor factor; `|0⟩` has `Iz = +1/2`.
pub fn spin_half_operators(g: usize, site: usize) -> Result<[CMatrix; 3]> {
    if g > MAX_CLUSTER_QUBITS {
        return Err(Error::Dimension { size: g, cap: MAX_CLUSTER_QUBITS });
    }
    if site >= g {
        return Err(Error::IndexOutOfRange { index: site, len: g });
    }
    let dim = 1usize << g;
    let mask = 1usize << (g - 1 - site);
    let mut ix = CMatrix::zeros(dim, dim);
    let mut iy = CMatrix::zeros(dim, dim);
    let mut iz = CMatrix::zeros(dim, dim);
    for col in 0..dim {
        let row = col ^ mask;
        let down = col & mask != 0;
        ix[(row, col)] = Complex64::new(0.5, 0.0);
        iy[(row, col)] = Complex64::new(0.0, if down { -0.5 } else { 0.5 });
        iz[(col, col)] = Complex64::new(if down { -0.5 } else { 0.5 }, 0.0);
    }
    Ok([ix, iy, iz])
}

/// Dipolar tensor `b·(1 − 3 n̂n̂ᵀ)` (rad/µs) between two nuclei of equal γ,
/// entering as `Σ_ab I_j^a D^{ab} I_k^b`.
pub fn dipolar_pair_term(pos_j: &Vector3<f64>, pos_k: &Vector3<f64>, gamma_n: f64) -> Result<Matrix3<f64>> {
    let d = pos_k - pos_j;
    let r = d.norm();
    if !(r > 0.0) {
        return Err(Error::InvalidParameter("coincident nuclear positions".into()));
    }
    let n = d / r;
    let b = units::dipolar_prefactor(gamma_n, gamma_n) / (r * r * r);
    Ok(Matrix3::from_fn(|a, c| {
        let delta = if a == c { 1.0 } else { 0.0 };
        b * (delta - 3.0 * (n[a] * n[c]))
    }))
}

fn axpy_real(target: &mut CMatrix, coeff: f64, op: &CMatrix) {
    if coeff != 0.0 {
        *target += op * Complex64::new(coeff, 0.0);
    }
}

/// `Σ_b v_b I^b` for a single site.
fn vector_coupling(ops: &[CMatrix; 3], v: &Vector3<f64>) -> CMatrix {
    let dim = ops[0].nrows();
    let mut out = CMatrix::zeros(dim, dim);
    for b in 0..3 {
        axpy_real(&mut out, v[b], &ops[b]);
    }
    out
}

fn check_indices(bath: &SpinBath, indices: &[usize]) -> Result<()> {
    if indices.len() > MAX_CLUSTER_QUBITS {
        return Err(Error::Dimension { size: indices.len(), cap: MAX_CLUSTER_QUBITS });
    }
    for (p, &i) in indices.iter().enumerate() {
        if i >= bath.len() {
            return Err(Error::IndexOutOfRange { index: i, len: bath.len() });
        }
        if indices[..p].contains(&i) {
            return Err(Error::InvalidParameter(format!("duplicate site index {i}")));
        }
    }
    Ok(())
}

fn site_operators(g: usize) -> Result<Vec<[CMatrix; 3]>> {
    (0..g).map(|s| spin_half_operators(g, s)).collect()
}

/// Second-order additions `(ΔH_0, ΔH_1)` for a cluster.
pub fn second_order_terms(bath: &SpinBath, indices: &[usize], opts: &SecondOrderOptions) -> Result<(CMatrix, CMatrix)> {
    check_indices(bath, indices)?;
    opts.validate()?;
    let g = indices.len();
    let dim = 1usize << g;
    let mut d0 = CMatrix::zeros(dim, dim);
    let mut d1 = CMatrix::zeros(dim, dim);
    if !opts.any() || g == 0 {
        return Ok((d0, d1));
    }
    let ops = site_operators(g)?;
    let delta = opts.zero_field_splitting;
    // K_j^a for a = x, y
    let k: Vec<[CMatrix; 2]> = indices
        .iter()
        .zip(&ops)
        .map(|(&i, o)| {
            let a = &bath.sites[i].hyperfine;
            [
                vector_coupling(o, &a.row(0).transpose()),
                vector_coupling(o, &a.row(1).transpose()),
            ]
        })
        .collect();

    if opts.enable_mediated_coupling {
        for j in 0..g {
            for l in (j + 1)..g {
                for a in 0..2 {
                    // ordered pairs (j,l) and (l,j); operators on distinct sites commute
                    let prod = &k[j][a] * &k[l][a];
                    axpy_real(&mut d0, -2.0 / delta, &prod);
                    axpy_real(&mut d1, 1.0 / delta, &prod);
                }
            }
        }
    }

    if opts.enable_enhanced_zeeman {
        let gamma_b = bath.b_field * GAMMA_E * units::PER_SECOND_TO_PER_MICROSECOND;
        for (j, &i) in indices.iter().enumerate() {
            for a in 0..2 {
                axpy_real(&mut d0, -2.0 * gamma_b[a] / delta, &k[j][a]);
                axpy_real(&mut d1, gamma_b[a] / delta, &k[j][a]);
            }
            let hf = &bath.sites[i].hyperfine;
            let ax: Vector3<f64> = hf.row(0).transpose();
            let ay: Vector3<f64> = hf.row(1).transpose();
            let cross = ax.cross(&ay);
            d1 -= vector_coupling(&ops[j], &cross) * Complex64::new(0.5 / delta, 0.0);
        }
    }
    Ok((d0, d1))
}

/// Builds `H_0` and `H_1` (rad/µs) on the `2^g` space of the listed sites.
pub fn build_cluster_hamiltonians(
    bath: &SpinBath,
    indices: &[usize],
    opts: &SecondOrderOptions,
) -> Result<ClusterHamiltonians> {
    check_indices(bath, indices)?;
    let g = indices.len();
    let dim = 1usize << g;
    let ops = site_operators(g)?;
    let zeeman = bath.field_direction() * bath.omega_l;
    let mut h0 = CMatrix::from_element(dim, dim, ZERO);
    for (j, &i) in indices.iter().enumerate() {
        h0 += vector_coupling(&ops[j], &zeeman);
        for (l, &m) in indices.iter().enumerate().skip(j + 1) {
            let dip = dipolar_pair_term(&bath.sites[i].position, &bath.sites[m].position, bath.sites[i].gamma_n)
                .map_err(|_| Error::CoincidentSites(i, m))?;
            for a in 0..3 {
                for b in 0..3 {
                    if dip[(a, b)] != 0.0 {
                        h0 += (&ops[j][a] * &ops[l][b]) * Complex64::new(dip[(a, b)], 0.0);
                    }
                }
            }
        }
    }
    let mut h1 = h0.clone();
    for (j, &i) in indices.iter().enumerate() {
        let row: Vector3<f64> = bath.sites[i].hyperfine.row(2).transpose();
        h1 += vector_coupling(&ops[j], &row);
    }
    if opts.any() {
        let (d0, d1) = second_order_terms(bath, indices, opts)?;
        h0 += d0;
        h1 += d1;
    }
    Ok(ClusterHamiltonians { indices: indices.to_vec(), h0, h1 })
}
