//! Dense complex matrix helpers and Hermitian exponentials.

use nalgebra::DMatrix;
use num_complex::Complex64;

use crate::{Error, Result};

pub type CMatrix = DMatrix<Complex64>;

pub const ZERO: Complex64 = Complex64 { re: 0.0, im: 0.0 };
pub const ONE: Complex64 = Complex64 { re: 1.0, im: 0.0 };
pub const I: Complex64 = Complex64 { re: 0.0, im: 1.0 };

/// Frobenius norm of `h − h†` relative to the norm of `h` (absolute if `h` is zero).
pub fn hermiticity_defect(h: &CMatrix) -> f64 {
    let diff = (h - h.adjoint()).norm();
    let scale = h.norm();
    if scale > 0.0 {
        diff / scale
    } else {
        diff
    }
}

/// Frobenius norm of `u†u − 1`.
pub fn unitarity_defect(u: &CMatrix) -> f64 {
    let d = u.nrows();
    (u.adjoint() * u - CMatrix::identity(d, d)).norm()
}

/// Kronecker product `a ⊗ b`.
pub fn kron(a: &CMatrix, b: &CMatrix) -> CMatrix {
    a.kronecker(b)
}

/// Eigendecomposition `h = V diag(λ) V†` of a Hermitian matrix, kept around so
/// that `exp(−i h t)` can be formed for many `t` at the cost of one product.
#[derive(Debug, Clone)]
pub struct HermitianSpectrum {
    pub values: Vec<f64>,
    pub vectors: CMatrix,
}

impl HermitianSpectrum {
    /// Relative Hermiticity tolerance accepted on input.
    pub const TOLERANCE: f64 = 1e-10;

    pub fn new(h: &CMatrix) -> Result<Self> {
        if h.nrows() != h.ncols() {
            return Err(Error::InvalidParameter(format!(
                "expected a square matrix, got {}x{}",
                h.nrows(),
                h.ncols()
            )));
        }
        let defect = hermiticity_defect(h);
        if defect > Self::TOLERANCE {
            return Err(Error::NotHermitian(defect));
        }
        // symmetrise away rounding before handing to the Hermitian solver
        let sym = (h + h.adjoint()) * Complex64::new(0.5, 0.0);
        let eig = sym.symmetric_eigen();
        Ok(Self {
            values: eig.eigenvalues.iter().copied().collect(),
            vectors: eig.eigenvectors,
        })
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }

    /// Phases `exp(−i λ_k t)`.
    pub fn phases(&self, t: f64) -> Vec<Complex64> {
        self.values
            .iter()
            .map(|&l| Complex64::from_polar(1.0, -l * t))
            .collect()
    }

    /// `exp(−i h t)`.
    pub fn propagator(&self, t: f64) -> CMatrix {
        let phases = self.phases(t);
        let mut scaled = self.vectors.clone();
        for (j, mut col) in scaled.column_iter_mut().enumerate() {
            col *= phases[j];
        }
        scaled * self.vectors.adjoint()
    }
}

/// Unitary propagator `U = exp(−i h t)` for a Hermitian generator `h` (rad/µs) and time `t` (µs).
pub fn evolve(h: &CMatrix, t: f64) -> Result<CMatrix> {
    if t == 0.0 {
        return Ok(CMatrix::identity(h.nrows(), h.ncols()));
    }
    Ok(HermitianSpectrum::new(h)?.propagator(t))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    #[test]
    fn zero_time_is_identity() {
        let h = CMatrix::from_row_slice(2, 2, &[c(1.0, 0.0), c(0.3, 0.2), c(0.3, -0.2), c(-0.5, 0.0)]);
        assert_eq!(evolve(&h, 0.0).unwrap(), CMatrix::identity(2, 2));
    }

    #[test]
    fn rejects_non_hermitian() {
        let h = CMatrix::from_row_slice(2, 2, &[ONE, ONE, ZERO, ONE]);
        assert!(matches!(evolve(&h, 1.0), Err(Error::NotHermitian(_))));
    }

    #[test]
    fn larmor_period_returns_to_identity_up_to_phase() {
        let omega = 0.37;
        let h = CMatrix::from_diagonal(&nalgebra::DVector::from_vec(vec![c(0.5 * omega, 0.0), c(-0.5 * omega, 0.0)]));
        let u = evolve(&h, std::f64::consts::TAU / omega).unwrap();
        // spin-1/2 picks up −1 over one full turn
        assert!((u + CMatrix::identity(2, 2)).norm() < 1e-12);
    }
}
