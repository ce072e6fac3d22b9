mod support;

use nalgebra::{Matrix3, Vector3};
use num_complex::Complex64;
use spinecho::clusters::Partition;
use spinecho::hamiltonian::{build_cluster_hamiltonians, SecondOrderOptions};
use spinecho::lattice::{candidate_site_count, generate_bath, point_dipole_hyperfine, LatticeConfig, NuclearSite, SpinBath};
use spinecho::linalg::{CMatrix, HermitianSpectrum};
use spinecho::propagate::{coherence_ideal, BathModel};
use spinecho::sequences::SequenceTemplate;
use spinecho::units::{GAMMA_C13, GAMMA_E};
use support::bruteforce;

fn off_axis_bath(n: usize) -> SpinBath {
    let sites = (0..n)
        .map(|j| {
            let f = j as f64;
            let position = Vector3::new(2.5 + 0.7 * f, -1.8 + 1.1 * (f * 1.3).sin(), 1.9 + 0.6 * (f * 0.7).cos());
            NuclearSite { position, gamma_n: GAMMA_C13, hyperfine: point_dipole_hyperfine(&(position * 1.8), GAMMA_E, GAMMA_C13).unwrap() }
        })
        .collect();
    SpinBath::from_sites(sites, Vector3::new(0.0004, -0.0002, 0.003))
}

fn max_diff(a: &CMatrix, b: &CMatrix) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| (x - y).norm()).fold(0.0, f64::max)
}

#[test]
fn taylor_series_agrees_with_spectral_propagator() {
    let d = 16;
    let h = CMatrix::from_fn(d, d, |i, j| {
        let (a, b) = (i.min(j) as f64, i.max(j) as f64);
        let re = (0.37 * a + 1.3 * b).sin();
        let im = if i == j { 0.0 } else { (0.9 * a - 0.4 * b).cos() * if i < j { 1.0 } else { -1.0 } };
        Complex64::new(re, im)
    });
    let spec = HermitianSpectrum::new(&h).unwrap();
    for t in [0.01, 0.7, 13.0] {
        assert!(max_diff(&spec.propagator(t), &bruteforce::expm(&h, t)) < 1e-11);
    }
}

#[test]
fn kronecker_builder_matches_bit_builder() {
    let bath = off_axis_bath(4);
    let ch = build_cluster_hamiltonians(&bath, &[0, 1, 2, 3], &SecondOrderOptions::off()).unwrap();
    let (h0, h1) = bruteforce::nuclear_blocks(&bath);
    assert!(max_diff(&ch.h0, &h0) < 1e-13);
    assert!(max_diff(&ch.h1, &h1) < 1e-13);
}

#[test]
fn cluster_coherence_matches_full_space_propagation() {
    let bath = off_axis_bath(4);
    let model = BathModel::new(&bath, &Partition::single(4), &SecondOrderOptions::off()).unwrap();
    let times = [0.8, 3.1, 7.7, 19.0, 44.0];
    for template in [SequenceTemplate::Cpmg(1), SequenceTemplate::Cpmg(4), SequenceTemplate::Udd(3), SequenceTemplate::Xy(4)] {
        let curve = coherence_ideal(&model, &template, &times, None).unwrap();
        for (&t, &s) in times.iter().zip(&curve.signal) {
            let reference = bruteforce::signal(&bath, &template.build(t).unwrap());
            assert!((s - reference).abs() < 1e-9, "{template:?} t={t}: {s} vs {reference}");
        }
    }
}

#[test]
fn mean_occupancy_is_binomial() {
    let cfg = |seed| LatticeConfig { radius_sites: 3, abundance: 0.011, seed, strong_hf_cutoff: None, ..Default::default() };
    let n = candidate_site_count(3) as f64;
    let seeds = 1000;
    let total: usize = (0..seeds).map(|s| generate_bath(&cfg(s), Vector3::new(0.0, 0.0, 0.003)).unwrap().len()).sum();
    let mean = total as f64 / seeds as f64;
    let expected = n * 0.011;
    let sigma = (n * 0.011 * 0.989 / seeds as f64).sqrt();
    assert!((mean - expected).abs() < 3.0 * sigma, "mean {mean}, expected {expected} ± {sigma}");
}

#[test]
fn hyperfine_matches_closed_form_at_five_angstrom() {
    let a = point_dipole_hyperfine(&Vector3::new(0.0, 0.0, 5.0), GAMMA_E, GAMMA_C13).unwrap();
    assert!((a[(2, 2)] - 1.9990611855643987).abs() < 1e-12);
    let expected = Matrix3::from_diagonal(&Vector3::new(-0.5, -0.5, 1.0)) * a[(2, 2)];
    assert!((a - expected).abs().max() < 1e-15);
}
