//! Independent full-Hilbert-space reference.
//!
//! Operators are assembled from explicit Kronecker products of Pauli
//! matrices over `electron ⊗ spin_0 ⊗ … ⊗ spin_{n-1}`, and propagators come
//! from a scaled-and-squared Taylor series instead of an eigendecomposition.

#![allow(dead_code)]

use nalgebra::{DMatrix, Vector3};
use num_complex::Complex64;
use spinecho::lattice::SpinBath;
use spinecho::sequences::PulseSequence;

pub type M = DMatrix<Complex64>;

fn c(re: f64, im: f64) -> Complex64 {
    Complex64::new(re, im)
}

/// Half Pauli matrices `σ/2` for axis 0, 1, 2.
pub fn half_pauli(axis: usize) -> M {
    let v = match axis {
        0 => [c(0.0, 0.0), c(0.5, 0.0), c(0.5, 0.0), c(0.0, 0.0)],
        1 => [c(0.0, 0.0), c(0.0, -0.5), c(0.0, 0.5), c(0.0, 0.0)],
        _ => [c(0.5, 0.0), c(0.0, 0.0), c(0.0, 0.0), c(-0.5, 0.0)],
    };
    M::from_row_slice(2, 2, &v)
}

pub fn kron_chain(factors: &[M]) -> M {
    factors.iter().skip(1).fold(factors[0].clone(), |acc, f| acc.kronecker(f))
}

/// `I^axis` of spin `site` in an `n`-spin register.
pub fn spin_op(n: usize, site: usize, axis: usize) -> M {
    let factors: Vec<M> = (0..n).map(|j| if j == site { half_pauli(axis) } else { M::identity(2, 2) }).collect();
    kron_chain(&factors)
}

/// `exp(−i H t)` by Taylor series with scaling and squaring.
pub fn expm(h: &M, t: f64) -> M {
    let d = h.nrows();
    let a = h * c(0.0, -t);
    let norm = a.iter().map(|z| z.norm()).fold(0.0, f64::max) * d as f64;
    let mut s = 0;
    while norm / 2f64.powi(s) > 0.25 {
        s += 1;
    }
    let a = a / c(2f64.powi(s), 0.0);
    let mut term = M::identity(d, d);
    let mut sum = M::identity(d, d);
    for k in 1..30 {
        term = &term * &a / c(k as f64, 0.0);
        sum += &term;
        if term.iter().map(|z| z.norm()).fold(0.0, f64::max) < 1e-18 {
            break;
        }
    }
    for _ in 0..s {
        sum = &sum * &sum;
    }
    sum
}

/// Nuclear blocks `(H_0, H_1)` without second-order terms.
pub fn nuclear_blocks(bath: &SpinBath) -> (M, M) {
    let n = bath.len();
    let d = 1usize << n;
    let ops: Vec<[M; 3]> = (0..n).map(|j| [spin_op(n, j, 0), spin_op(n, j, 1), spin_op(n, j, 2)]).collect();
    let mut h0 = M::zeros(d, d);
    let bn = bath.b_field.norm();
    let bhat = if bn > 0.0 { bath.b_field / bn } else { Vector3::z() };
    for (j, site) in bath.sites.iter().enumerate() {
        let omega = site.gamma_n * bn * 1e-6;
        for a in 0..3 {
            h0 += &ops[j][a] * c(omega * bhat[a], 0.0);
        }
    }
    for j in 0..n {
        for k in (j + 1)..n {
            let (sj, sk) = (&bath.sites[j], &bath.sites[k]);
            let rv = sk.position - sj.position;
            let r = rv.norm();
            let u = rv / r;
            // μ0/4π · ħ γ_j γ_k / r³, SI with r in Å, converted to rad/µs
            let pref = 1e-7 * 1.054_571_817e-34 * sj.gamma_n * sk.gamma_n / (r * 1e-10).powi(3) * 1e-6;
            for a in 0..3 {
                for b in 0..3 {
                    let delta = if a == b { 1.0 } else { 0.0 };
                    let coef = pref * (delta - 3.0 * u[a] * u[b]);
                    h0 += &ops[j][a] * &ops[k][b] * c(coef, 0.0);
                }
            }
        }
    }
    let mut h1 = h0.clone();
    for (j, site) in bath.sites.iter().enumerate() {
        for b in 0..3 {
            h1 += &ops[j][b] * c(site.hyperfine[(2, b)], 0.0);
        }
    }
    (h0, h1)
}

/// Joint `|0⟩⟨0| ⊗ H_0 + |1⟩⟨1| ⊗ H_1`.
pub fn joint_hamiltonian(bath: &SpinBath) -> M {
    let (h0, h1) = nuclear_blocks(bath);
    let p0 = M::from_row_slice(2, 2, &[c(1.0, 0.0), c(0.0, 0.0), c(0.0, 0.0), c(0.0, 0.0)]);
    let p1 = M::from_row_slice(2, 2, &[c(0.0, 0.0), c(0.0, 0.0), c(0.0, 0.0), c(1.0, 0.0)]);
    p0.kronecker(&h0) + p1.kronecker(&h1)
}

/// Electron π rotation about `cos φ x + sin φ y`.
pub fn pi_pulse(phase: f64) -> M {
    M::from_row_slice(
        2,
        2,
        &[c(0.0, 0.0), c(0.0, -1.0) * Complex64::from_polar(1.0, -phase), c(0.0, -1.0) * Complex64::from_polar(1.0, phase), c(0.0, 0.0)],
    )
}

/// Electron signal after an ideal-pulse sequence, starting from `|+⟩` with
/// the bath maximally mixed, projected on the direction the same pulses
/// give without a bath.
pub fn signal(bath: &SpinBath, seq: &PulseSequence) -> f64 {
    let h = joint_hamiltonian(bath);
    let d = h.nrows() / 2;
    let mut u = M::identity(2 * d, 2 * d);
    let mut bare = M::identity(2, 2);
    let mut cursor = 0.0;
    // symmetric sequences repeat interval lengths; exponentiate each once
    let mut cache: Vec<(f64, M)> = Vec::new();
    let mut step = |dt: f64| -> M {
        if let Some((_, e)) = cache.iter().find(|(t, _)| *t == dt) {
            return e.clone();
        }
        let e = expm(&h, dt);
        cache.push((dt, e.clone()));
        e
    };
    for ev in &seq.events {
        u = step(ev.center_time - cursor) * u;
        let p = pi_pulse(ev.phase);
        u = p.kronecker(&M::identity(d, d)) * u;
        bare = p * bare;
        cursor = ev.center_time;
    }
    u = step(seq.total_time - cursor) * u;
    // X = U (|0⟩ + |1⟩) ⊗ 1, columns are bath basis states
    let x = u.columns(0, d) + u.columns(d, d);
    let top = x.rows(0, d);
    let bottom = x.rows(d, d);
    let value = (bottom * top.adjoint()).trace() / c(d as f64, 0.0);
    let e = &bare * M::from_column_slice(2, 1, &[c(1.0, 0.0), c(1.0, 0.0)]);
    let r = e[(1, 0)] * e[(0, 0)].conj();
    let r = r / r.norm();
    0.5 + 0.5 * (r.conj() * value).re
}
