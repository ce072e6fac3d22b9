use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use spinecho::analysis::{fit_decay, KMode};
use spinecho::propagate::CoherenceCurve;

#[test]
fn noisy_t2_within_three_sigma_of_truth() {
    let (a, t2, k) = (0.5, 100.0, 3.0);
    let times: Vec<f64> = (1..=50).map(|i| 4.0 * i as f64).collect();
    let noise = Normal::new(0.0, 0.01).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let trials = 100;
    let mut hits = 0;
    for _ in 0..trials {
        let signal: Vec<f64> = times.iter().map(|t| 0.5 + a * (-(t / t2).powf(k)).exp() + noise.sample(&mut rng)).collect();
        let mut curve = CoherenceCurve::new(times.clone(), signal);
        curve.uncertainty = vec![0.01; times.len()];
        let fit = fit_decay(&curve, KMode::Free).unwrap();
        if (fit.t2 - t2).abs() <= 3.0 * fit.sigma_t2 {
            hits += 1;
        }
    }
    assert!(hits >= 95, "{hits}/{trials} trials within 3σ");
}

#[test]
fn uniform_weights_scale_errors_by_residual() {
    let times: Vec<f64> = (1..=40).map(|i| 5.0 * i as f64).collect();
    let noise = Normal::new(0.0, 0.02).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let signal: Vec<f64> = times.iter().map(|t| 0.5 + 0.45 * (-(t / 90.0f64).powi(4)).exp() + noise.sample(&mut rng)).collect();
    let unweighted = fit_decay(&CoherenceCurve::new(times.clone(), signal.clone()), KMode::Free).unwrap();
    let mut weighted_curve = CoherenceCurve::new(times.clone(), signal);
    weighted_curve.uncertainty = vec![0.02; times.len()];
    let weighted = fit_decay(&weighted_curve, KMode::Free).unwrap();
    assert!((unweighted.t2 - weighted.t2).abs() < 1e-8);
    // reduced χ² is near 1 when the stated uncertainty is right
    let ratio = unweighted.sigma_t2 / weighted.sigma_t2;
    assert!((0.7..1.3).contains(&ratio), "{ratio}");
}
