//! Electron coherence under a pulse sequence.
//!
//! With instantaneous π pulses the joint propagator stays block diagonal in
//! the electron basis, so each cluster only needs its two branch
//! propagators. The branch that starts in `m_s = α` evolves under `H_α` until
//! the first pulse, then under the other manifold, and so on. For a maximally
//! mixed bath the coherence factor of one cluster is
//! `L_c = Tr(V_1† V_0) / 2^g`, and disjoint clusters multiply:
//! `s(t) = ½ + ½·Re Π_c L_c`.
//!
//! Work items (time points) are evaluated in parallel; every product over
//! clusters runs in fixed cluster order, so the result is bitwise independent
//! of the worker count.

mod fidelity;
mod finite;

pub use fidelity::{
    composite_target, pulse_fidelity, rotation, z_rotation, FidelityConvention,
};
pub use finite::{
    coherence_finite_bath, coherence_finite_pulses, coherence_finite_sequence, PulseErrorModel,
    DEFAULT_STEP,
};

use std::collections::HashMap;

use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::clusters::Partition;
use crate::hamiltonian::{build_cluster_hamiltonians, ClusterHamiltonians, SecondOrderOptions};
use crate::lattice::SpinBath;
use crate::linalg::{CMatrix, HermitianSpectrum};
use crate::sequences::{fixed_spacing_cpmg, quantize_timing, PulseSequence, SequenceTemplate};
use crate::{Error, Result};

pub use crate::linalg::evolve;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoherenceCurve {
    /// µs.
    pub times: Vec<f64>,
    /// 1 = full coherence, 0.5 = none.
    pub signal: Vec<f64>,
    pub uncertainty: Vec<f64>,
}

impl CoherenceCurve {
    pub fn new(times: Vec<f64>, signal: Vec<f64>) -> Self {
        let uncertainty = vec![0.0; times.len()];
        Self { times, signal, uncertainty }
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn validate(&self) -> Result<()> {
        if self.signal.len() != self.times.len() || self.uncertainty.len() != self.times.len() {
            return Err(Error::InvalidParameter("curve columns differ in length".into()));
        }
        if self.times.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::InvalidParameter("curve times must be strictly increasing".into()));
        }
        if let Some(s) = self.signal.iter().find(|s| !((2.0 * *s - 1.0).abs() <= 1.0 + 1e-9)) {
            return Err(Error::InvalidParameter(format!("signal value {s} outside [0, 1]")));
        }
        Ok(())
    }
}

/// Free-evolution intervals between ideal pulses, edges included.
pub fn free_intervals(seq: &PulseSequence) -> Result<Vec<f64>> {
    if let Some(i) = seq.events.iter().position(|e| !e.is_ideal()) {
        return Err(Error::NonIdealPulse(i));
    }
    let mut out = Vec::with_capacity(seq.events.len() + 1);
    let mut last = 0.0;
    for e in &seq.events {
        out.push(e.center_time - last);
        last = e.center_time;
    }
    out.push(seq.total_time - last);
    Ok(out)
}

/// Branch propagators `(V_0, V_1)` for a sequence of ideal π pulses.
pub fn branch_propagators(ch: &ClusterHamiltonians, seq: &PulseSequence) -> Result<(CMatrix, CMatrix)> {
    let intervals = free_intervals(seq)?;
    let s0 = HermitianSpectrum::new(&ch.h0)?;
    let s1 = HermitianSpectrum::new(&ch.h1)?;
    let d = ch.dim();
    let mut v = [CMatrix::identity(d, d), CMatrix::identity(d, d)];
    for (i, &tau) in intervals.iter().enumerate() {
        let u = [s0.propagator(tau), s1.propagator(tau)];
        for (alpha, m) in v.iter_mut().enumerate() {
            let label = (alpha + i) % 2;
            *m = &u[label] * &*m;
        }
    }
    let [v0, v1] = v;
    Ok((v0, v1))
}

/// A cluster prepared for repeated propagation: both spectra plus the change
/// of basis `W = P_0† P_1` between the eigenbases of `H_0` and `H_1`.
#[derive(Debug, Clone)]
pub struct ClusterModel {
    pub hamiltonians: ClusterHamiltonians,
    spectrum0: HermitianSpectrum,
    spectrum1: HermitianSpectrum,
    w: CMatrix,
    /// Summed hyperfine norm of the member spins, rad/µs.
    pub hyperfine_weight: f64,
}

impl ClusterModel {
    pub fn new(hamiltonians: ClusterHamiltonians, hyperfine_weight: f64) -> Result<Self> {
        let spectrum0 = HermitianSpectrum::new(&hamiltonians.h0)?;
        let spectrum1 = HermitianSpectrum::new(&hamiltonians.h1)?;
        let w = spectrum0.vectors.adjoint() * &spectrum1.vectors;
        Ok(Self { hamiltonians, spectrum0, spectrum1, w, hyperfine_weight })
    }

    pub fn dim(&self) -> usize {
        self.spectrum0.dim()
    }

    pub(crate) fn spectra(&self) -> (&HermitianSpectrum, &HermitianSpectrum) {
        (&self.spectrum0, &self.spectrum1)
    }

    /// Branch products `[V_0, V_1]` in the eigenbasis of `H_0` (first
    /// interval starts with branch α in manifold α).
    fn branch_products(&self, intervals: &[f64]) -> [CMatrix; 2] {
        let d = self.dim();
        let mut m = [CMatrix::identity(d, d), CMatrix::identity(d, d)];
        let mut u1_cache: HashMap<u64, CMatrix> = HashMap::new();
        for (i, &tau) in intervals.iter().enumerate() {
            if tau == 0.0 {
                continue;
            }
            for (alpha, mat) in m.iter_mut().enumerate() {
                if (alpha + i) % 2 == 0 {
                    let ph = self.spectrum0.phases(tau);
                    for (r, mut row) in mat.row_iter_mut().enumerate() {
                        row *= ph[r];
                    }
                } else {
                    let u1 = u1_cache.entry(tau.to_bits()).or_insert_with(|| {
                        let ph = self.spectrum1.phases(tau);
                        let mut scaled = self.w.clone();
                        for (j, mut col) in scaled.column_iter_mut().enumerate() {
                            col *= ph[j];
                        }
                        scaled * self.w.adjoint()
                    });
                    *mat = &*u1 * &*mat;
                }
            }
        }
        m
    }

    fn trace_overlap(&self, m0: &CMatrix, m1: &CMatrix) -> Complex64 {
        let tr = m1.iter().zip(m0.iter()).fold(Complex64::new(0.0, 0.0), |acc, (a, b)| acc + a.conj() * b);
        tr / self.dim() as f64
    }

    /// `L_c = Tr(V_1† V_0)/d` for the given free intervals.
    pub fn overlap(&self, intervals: &[f64]) -> Complex64 {
        let [m0, m1] = self.branch_products(intervals);
        self.trace_overlap(&m0, &m1)
    }

    /// `L_c` for `counts[i]` repetitions of a block with an even number of
    /// pulses, using block powers instead of re-multiplying every interval.
    pub fn periodic_overlaps(&self, block: &[f64], counts: &[usize]) -> Vec<Complex64> {
        debug_assert!(block.len() % 2 == 1, "block must contain an even number of pulses");
        let [b0, b1] = self.branch_products(block);
        let d = self.dim();
        let mut order: Vec<usize> = (0..counts.len()).collect();
        order.sort_by_key(|&i| counts[i]);
        let mut out = vec![Complex64::new(0.0, 0.0); counts.len()];
        let (mut p0, mut p1, mut done) = (CMatrix::identity(d, d), CMatrix::identity(d, d), 0usize);
        for i in order {
            let step = counts[i] - done;
            if step > 0 {
                p0 = matrix_power(&b0, step) * p0;
                p1 = matrix_power(&b1, step) * p1;
                done = counts[i];
            }
            out[i] = self.trace_overlap(&p0, &p1);
        }
        out
    }
}

fn matrix_power(m: &CMatrix, mut e: usize) -> CMatrix {
    let mut base = m.clone();
    let mut acc = CMatrix::identity(m.nrows(), m.ncols());
    while e > 0 {
        if e & 1 == 1 {
            acc = &acc * &base;
        }
        e >>= 1;
        if e > 0 {
            base = &base * &base;
        }
    }
    acc
}

/// Bath prepared for coherence calculations: one [`ClusterModel`] per cluster
/// of a partition.
#[derive(Debug, Clone)]
pub struct BathModel {
    pub clusters: Vec<ClusterModel>,
}

impl BathModel {
    pub fn new(bath: &SpinBath, partition: &Partition, opts: &SecondOrderOptions) -> Result<Self> {
        let clusters = partition
            .clusters
            .par_iter()
            .map(|idx| {
                let ch = build_cluster_hamiltonians(bath, idx, opts)?;
                let weight = idx.iter().map(|&i| bath.sites[i].hyperfine_norm()).sum();
                ClusterModel::new(ch, weight)
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { clusters })
    }

    pub fn from_clusters(clusters: Vec<ClusterModel>) -> Self {
        Self { clusters }
    }

    /// `Π_c L_c` in cluster order.
    pub fn overlap(&self, seq: &PulseSequence) -> Result<Complex64> {
        let intervals = free_intervals(seq)?;
        Ok(self.clusters.iter().fold(Complex64::new(1.0, 0.0), |acc, c| acc * c.overlap(&intervals)))
    }

    /// `½ + ½·Re Π_c L_c`.
    pub fn signal(&self, seq: &PulseSequence) -> Result<f64> {
        Ok(0.5 + 0.5 * self.overlap(seq)?.re)
    }

    /// Index of the cluster with the largest summed hyperfine coupling.
    pub fn dominant_cluster(&self) -> Option<usize> {
        self.clusters
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.hyperfine_weight.total_cmp(&b.1.hyperfine_weight).then(b.0.cmp(&a.0)))
            .map(|(i, _)| i)
    }
}

/// Signal for each time, scaling `template` to `total_time = t`. Returns
/// `s = 1` at `t = 0`. When `grid` is set, pulse centres are quantized first.
pub fn coherence_ideal(
    model: &BathModel,
    template: &SequenceTemplate,
    times: &[f64],
    grid: Option<f64>,
) -> Result<CoherenceCurve> {
    let signal = times
        .par_iter()
        .map(|&t| {
            if t == 0.0 {
                return Ok(1.0);
            }
            let mut seq = template.build(t)?;
            if let Some(g) = grid {
                seq = quantize_timing(&seq, g)?;
            }
            model.signal(&seq)
        })
        .collect::<Result<Vec<_>>>()?;
    let curve = CoherenceCurve::new(times.to_vec(), signal);
    curve.validate()?;
    Ok(curve)
}

/// Convenience wrapper building the [`BathModel`] first.
pub fn coherence_ideal_for_bath(
    bath: &SpinBath,
    partition: &Partition,
    opts: &SecondOrderOptions,
    template: &SequenceTemplate,
    times: &[f64],
) -> Result<CoherenceCurve> {
    let model = BathModel::new(bath, partition, opts)?;
    coherence_ideal(&model, template, times, None)
}

/// Fixed-spacing CPMG: the pulse spacing stays at `2τ` and the curve runs
/// over the number of `(τ−π−2τ−π−τ)` blocks.
pub fn coherence_fixed_spacing(model: &BathModel, tau: f64, blocks: &[usize]) -> Result<CoherenceCurve> {
    if blocks.first().map_or(true, |&b| b == 0) || blocks.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::InvalidParameter("block counts must be positive and increasing".into()));
    }
    let one = fixed_spacing_cpmg(tau, 1)?;
    let block = free_intervals(&one)?;
    let per_cluster: Vec<Vec<Complex64>> = model.clusters.par_iter().map(|c| c.periodic_overlaps(&block, blocks)).collect();
    let signal = (0..blocks.len())
        .map(|i| 0.5 + 0.5 * per_cluster.iter().fold(Complex64::new(1.0, 0.0), |acc, v| acc * v[i]).re)
        .collect();
    let curve = CoherenceCurve::new(blocks.iter().map(|&n| n as f64 * one.total_time).collect(), signal);
    curve.validate()?;
    Ok(curve)
}

/// Evaluates an explicit list of ideal-pulse sequences.
pub fn coherence_sequences(model: &BathModel, seqs: &[PulseSequence]) -> Result<CoherenceCurve> {
    let signal = seqs.par_iter().map(|s| model.signal(s)).collect::<Result<Vec<_>>>()?;
    let curve = CoherenceCurve::new(seqs.iter().map(|s| s.total_time).collect(), signal);
    curve.validate()?;
    Ok(curve)
}
