//! Stretched-exponential decay fits and T2 scaling.
//!
//! Model: `s(t) = 0.5 + A·exp(−(t/T2)^k)` with the baseline fixed at 0.5.
//! Fits minimise `Σ w_i (s_i − model_i)²` with `w_i = 1/σ_i²` when every
//! point carries a positive uncertainty and `w_i = 1` otherwise.
//!
//! The optimiser is Levenberg-Marquardt in `(A, ln T2, k)` with box bounds
//! `0 < A ≤ 0.6` and `3 ≤ k ≤ 6`, started from every point of the grid
//! `A ∈ {0.3, 0.5}`, `T2 = t_max·10^{−2, −1.5, …, 1}`, `k ∈ {3, 4, 5}`.
//! The lowest objective wins; ties keep the earliest start.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};
use thiserror::Error;

use crate::propagate::CoherenceCurve;

pub const BASELINE: f64 = 0.5;
pub const AMPLITUDE_MAX: f64 = 0.6;
pub const K_MIN: f64 = 3.0;
pub const K_MAX: f64 = 6.0;
/// Exponent used for revival envelopes.
pub const ENVELOPE_K: f64 = 3.0;

const AMPLITUDE_MIN: f64 = 1e-9;
const MIN_POINTS: usize = 5;
const MIN_DROP: f64 = 0.1;
const MIN_PEAKS: usize = 4;
/// Largest T2 accepted, as a multiple of the last sample time.
const T2_CEILING: f64 = 1e3;
const MAX_ITER: usize = 500;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum FitError {
    #[error("T2 out of window: {0}")]
    OutOfWindow(String),
    #[error("invalid fit input: {0}")]
    InvalidInput(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", content = "k", rename_all = "snake_case")]
pub enum KMode {
    Free,
    Fixed(f64),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecayFit {
    pub amplitude: f64,
    /// µs.
    pub t2: f64,
    pub k: f64,
    pub sigma_amplitude: f64,
    pub sigma_t2: f64,
    /// Zero when `k_fixed`.
    pub sigma_k: f64,
    /// `sqrt(Σ w r²)`.
    pub residual_norm: f64,
    pub k_fixed: bool,
    /// Free `k` ended on 3 or 6.
    pub k_at_bound: bool,
    /// `A` ended on 0.6.
    pub amplitude_at_bound: bool,
}

#[derive(Debug, Clone, Copy)]
struct Params {
    a: f64,
    u: f64,
    k: f64,
}

impl Params {
    fn t2(&self) -> f64 {
        self.u.exp()
    }
}

struct Problem<'a> {
    t: &'a [f64],
    y: &'a [f64],
    w: Vec<f64>,
    free_k: bool,
    u_max: f64,
    weighted: bool,
}

impl<'a> Problem<'a> {
    fn new(curve: &'a CoherenceCurve, free_k: bool) -> Result<Self, FitError> {
        if curve.signal.len() != curve.times.len() || curve.uncertainty.len() != curve.times.len() {
            return Err(FitError::InvalidInput("curve columns differ in length".into()));
        }
        if curve.times.iter().chain(&curve.signal).any(|v| !v.is_finite()) || curve.times.iter().any(|&t| t < 0.0) {
            return Err(FitError::InvalidInput("times must be finite and non-negative, signal finite".into()));
        }
        let weighted = !curve.uncertainty.is_empty() && curve.uncertainty.iter().all(|&s| s > 0.0 && s.is_finite());
        let w = if weighted {
            curve.uncertainty.iter().map(|s| 1.0 / (s * s)).collect()
        } else {
            vec![1.0; curve.times.len()]
        };
        let t_max = curve.times.iter().cloned().fold(0.0, f64::max);
        if !(t_max > 0.0) {
            return Err(FitError::InvalidInput("all sample times are zero".into()));
        }
        Ok(Self { t: &curve.times, y: &curve.signal, w, free_k, u_max: (T2_CEILING * t_max).ln(), weighted })
    }

    fn n_params(&self) -> usize {
        if self.free_k {
            3
        } else {
            2
        }
    }

    /// Weighted residuals `√w (y − m)` and the Jacobian of the model term
    /// `√w m` with respect to `(A, u, k)`.
    fn evaluate(&self, p: &Params) -> (DVector<f64>, DMatrix<f64>) {
        let n = self.t.len();
        let mut r = DVector::zeros(n);
        let mut j = DMatrix::zeros(n, self.n_params());
        for i in 0..n {
            let sw = self.w[i].sqrt();
            let t = self.t[i];
            let (x, log_ratio) = if t > 0.0 {
                let l = t.ln() - p.u;
                ((p.k * l).exp(), l)
            } else {
                (0.0, 0.0)
            };
            let e = (-x).exp();
            r[i] = sw * (self.y[i] - BASELINE - p.a * e);
            j[(i, 0)] = sw * e;
            j[(i, 1)] = sw * p.a * e * x * p.k;
            if self.free_k {
                j[(i, 2)] = -sw * p.a * e * x * log_ratio;
            }
        }
        (r, j)
    }

    fn clamp(&self, mut p: Params) -> Params {
        p.a = p.a.clamp(AMPLITUDE_MIN, AMPLITUDE_MAX);
        p.u = p.u.min(self.u_max);
        if self.free_k {
            p.k = p.k.clamp(K_MIN, K_MAX);
        }
        p
    }

    fn pinned(&self, p: &Params, i: usize, g: f64) -> bool {
        match i {
            0 => (p.a >= AMPLITUDE_MAX && g > 0.0) || (p.a <= AMPLITUDE_MIN && g < 0.0),
            1 => p.u >= self.u_max && g > 0.0,
            _ => (p.k >= K_MAX && g > 0.0) || (p.k <= K_MIN && g < 0.0),
        }
    }

    fn apply(&self, p: &Params, delta: &DVector<f64>) -> Params {
        let mut q = *p;
        q.a += delta[0];
        q.u += delta[1];
        if self.free_k {
            q.k += delta[2];
        }
        self.clamp(q)
    }

    fn minimise(&self, start: Params) -> (Params, f64) {
        let mut p = self.clamp(start);
        let (mut r, mut j) = self.evaluate(&p);
        let mut cost = r.norm_squared();
        let mut lambda = 1e-3;
        for _ in 0..MAX_ITER {
            let g = j.transpose() * &r;
            // parameters pinned on a bound with the gradient pushing outwards
            // are held fixed for this step
            let free: Vec<usize> = (0..g.len()).filter(|&i| !self.pinned(&p, i, g[i])).collect();
            if free.is_empty() {
                break;
            }
            let jf = j.select_columns(&free);
            let jtj = jf.transpose() * &jf;
            let gf = jf.transpose() * &r;
            let mut improved = false;
            while lambda < 1e16 {
                let mut a = jtj.clone();
                for d in 0..a.nrows() {
                    a[(d, d)] += lambda * jtj[(d, d)].max(1e-12);
                }
                let Some(step) = a.cholesky().map(|c| c.solve(&gf)) else {
                    lambda *= 10.0;
                    continue;
                };
                let mut delta = DVector::zeros(g.len());
                for (s, &i) in free.iter().enumerate() {
                    delta[i] = step[s];
                }
                let q = self.apply(&p, &delta);
                let (rq, jq) = self.evaluate(&q);
                let cq = rq.norm_squared();
                if cq <= cost {
                    let converged = cost - cq <= 1e-15 * cost.max(1e-300) && delta.amax() < 1e-12;
                    p = q;
                    r = rq;
                    j = jq;
                    cost = cq;
                    lambda = (lambda * 0.3).max(1e-12);
                    improved = !converged;
                    break;
                }
                lambda *= 10.0;
            }
            if !improved {
                break;
            }
        }
        (p, cost)
    }
}

fn starts(t_max: f64, free_k: bool, fixed_k: f64) -> Vec<Params> {
    let ks: &[f64] = if free_k { &[3.0, 4.0, 5.0] } else { &[fixed_k] };
    let mut out = Vec::new();
    for &a in &[0.3, 0.5] {
        for e in 0..7 {
            let t2 = t_max * 10f64.powf(-2.0 + 0.5 * e as f64);
            for &k in ks {
                out.push(Params { a, u: t2.ln(), k });
            }
        }
    }
    out
}

fn fit_unchecked(curve: &CoherenceCurve, k_mode: KMode) -> Result<DecayFit, FitError> {
    let (free_k, fixed_k) = match k_mode {
        KMode::Free => (true, 0.0),
        KMode::Fixed(k) => {
            if !(k > 0.0 && k.is_finite()) {
                return Err(FitError::InvalidInput(format!("fixed exponent {k} must be positive")));
            }
            (false, k)
        }
    };
    let prob = Problem::new(curve, free_k)?;
    let t_max = curve.times.iter().cloned().fold(0.0, f64::max);
    let mut best: Option<(Params, f64)> = None;
    for s in starts(t_max, free_k, fixed_k) {
        let (p, c) = prob.minimise(s);
        if best.map_or(true, |(_, bc)| c < bc) {
            best = Some((p, c));
        }
    }
    let (p, cost) = best.expect("non-empty start grid");
    if p.u >= prob.u_max - 1e-9 {
        return Err(FitError::OutOfWindow(format!("fitted T2 exceeds {T2_CEILING}× the sampled range")));
    }
    let (_, j) = prob.evaluate(&p);
    let n = curve.len();
    let np = prob.n_params();
    let scale = if prob.weighted || n <= np { 1.0 } else { cost / (n - np) as f64 };
    let cov = (j.transpose() * &j).try_inverse().map(|c| c * scale);
    let sd = |i: usize| cov.as_ref().map_or(f64::NAN, |c| c[(i, i)].max(0.0).sqrt());
    let k_at_bound = free_k && ((p.k - K_MIN).abs() < 1e-9 || (p.k - K_MAX).abs() < 1e-9);
    Ok(DecayFit {
        amplitude: p.a,
        t2: p.t2(),
        k: p.k,
        sigma_amplitude: sd(0),
        sigma_t2: p.t2() * sd(1),
        sigma_k: if free_k { sd(2) } else { 0.0 },
        residual_norm: cost.sqrt(),
        k_fixed: !free_k,
        k_at_bound,
        amplitude_at_bound: (p.a - AMPLITUDE_MAX).abs() < 1e-12,
    })
}

/// Fits a decay curve. Needs at least five points and a drop of at least
/// 0.1 from the first sample to the lowest one.
pub fn fit_decay(curve: &CoherenceCurve, k_mode: KMode) -> Result<DecayFit, FitError> {
    if curve.len() < MIN_POINTS {
        return Err(FitError::OutOfWindow(format!("{} points, need {MIN_POINTS}", curve.len())));
    }
    let first = curve.signal.first().copied().unwrap_or(1.0);
    let low = curve.signal.iter().cloned().fold(f64::INFINITY, f64::min);
    if first - low < MIN_DROP {
        return Err(FitError::OutOfWindow(format!("no decay: signal drops by {:.3}, need {MIN_DROP}", first - low)));
    }
    fit_unchecked(curve, k_mode)
}

/// Fits `k = 3` to a train of revival maxima.
pub fn revival_envelope(peaks: &CoherenceCurve) -> Result<DecayFit, FitError> {
    if peaks.len() < MIN_PEAKS {
        return Err(FitError::OutOfWindow(format!("{} revival peaks, need {MIN_PEAKS}", peaks.len())));
    }
    fit_unchecked(peaks, KMode::Fixed(ENVELOPE_K))
}

/// Gradient of `Σ w (s − m)²` with respect to `(A, T2, k)` at `fit`.
/// The `k` entry is zero for fixed-exponent fits.
pub fn objective_gradient(curve: &CoherenceCurve, fit: &DecayFit) -> Result<[f64; 3], FitError> {
    let prob = Problem::new(curve, !fit.k_fixed)?;
    let p = Params { a: fit.amplitude, u: fit.t2.ln(), k: fit.k };
    let (r, j) = prob.evaluate(&p);
    let g = j.transpose() * r * -2.0;
    Ok([g[0], g[1] / fit.t2, if fit.k_fixed { 0.0 } else { g[2] }])
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScalingFit {
    /// Slope of ln T2 against ln n.
    pub exponent: f64,
    pub exponent_stderr: f64,
    /// 95 % two-sided interval on the exponent.
    pub exponent_ci95: (f64, f64),
    /// T2 at n = 1 extrapolated from the fit, µs.
    pub prefactor: f64,
    /// `(n, T2)` rows in input order.
    pub table: Vec<(usize, f64)>,
}

/// Ordinary least squares of `ln T2` on `ln n`.
pub fn t2_scaling(fits: &[(usize, DecayFit)]) -> Result<ScalingFit, FitError> {
    let rows: Vec<(usize, f64)> = fits.iter().map(|(n, f)| (*n, f.t2)).collect();
    t2_scaling_values(&rows)
}

/// As [`t2_scaling`] for bare `(n, T2)` pairs.
pub fn t2_scaling_values(rows: &[(usize, f64)]) -> Result<ScalingFit, FitError> {
    if rows.len() < 3 {
        return Err(FitError::InvalidInput(format!("{} pulse counts, need 3", rows.len())));
    }
    if let Some((n, t2)) = rows.iter().find(|(n, t2)| *n == 0 || !(*t2 > 0.0) || !t2.is_finite()) {
        return Err(FitError::InvalidInput(format!("n = {n} has non-positive T2 {t2}")));
    }
    let x: Vec<f64> = rows.iter().map(|(n, _)| (*n as f64).ln()).collect();
    let y: Vec<f64> = rows.iter().map(|(_, t)| t.ln()).collect();
    let m = x.len() as f64;
    let mx = x.iter().sum::<f64>() / m;
    let my = y.iter().sum::<f64>() / m;
    let sxx: f64 = x.iter().map(|v| (v - mx).powi(2)).sum();
    if sxx == 0.0 {
        return Err(FitError::InvalidInput("pulse counts must not all be equal".into()));
    }
    let sxy: f64 = x.iter().zip(&y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let sse: f64 = x.iter().zip(&y).map(|(a, b)| (b - intercept - slope * a).powi(2)).sum();
    let dof = m - 2.0;
    let stderr = (sse / dof / sxx).sqrt();
    let tq = StudentsT::new(0.0, 1.0, dof).map(|d| d.inverse_cdf(0.975)).unwrap_or(f64::NAN);
    Ok(ScalingFit {
        exponent: slope,
        exponent_stderr: stderr,
        exponent_ci95: (slope - tq * stderr, slope + tq * stderr),
        prefactor: intercept.exp(),
        table: rows.to_vec(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn synthetic(a: f64, t2: f64, k: f64, t_max: f64, n: usize) -> CoherenceCurve {
        let times: Vec<f64> = (1..=n).map(|i| t_max * i as f64 / n as f64).collect();
        let signal = times.iter().map(|t| BASELINE + a * (-(t / t2).powf(k)).exp()).collect();
        CoherenceCurve::new(times, signal)
    }

    #[test]
    fn noiseless_recovery() {
        let c = synthetic(0.5, 100.0, 3.0, 250.0, 40);
        let f = fit_decay(&c, KMode::Free).unwrap();
        assert!((f.amplitude / 0.5 - 1.0).abs() < 1e-6);
        assert!((f.t2 / 100.0 - 1.0).abs() < 1e-6);
        assert!((f.k / 3.0 - 1.0).abs() < 1e-6);
        let c = synthetic(0.42, 37.0, 4.4, 80.0, 30);
        let f = fit_decay(&c, KMode::Free).unwrap();
        assert!((f.t2 / 37.0 - 1.0).abs() < 1e-6 && (f.k / 4.4 - 1.0).abs() < 1e-6);
        assert!(!f.k_at_bound);
    }

    #[test]
    fn envelope_recovers_cubic() {
        let c = synthetic(0.45, 220.0, 3.0, 600.0, 6);
        let f = revival_envelope(&c).unwrap();
        assert!((f.t2 / 220.0 - 1.0).abs() < 1e-6 && f.k_fixed && f.k == 3.0);
        let short = synthetic(0.45, 220.0, 3.0, 600.0, 3);
        assert!(matches!(revival_envelope(&short), Err(FitError::OutOfWindow(_))));
    }

    #[test]
    fn flat_curve_is_out_of_window() {
        let c = CoherenceCurve::new((1..10).map(f64::from).collect(), vec![1.0; 9]);
        assert!(matches!(fit_decay(&c, KMode::Free), Err(FitError::OutOfWindow(_))));
        let few = synthetic(0.5, 1.0, 3.0, 3.0, 4);
        assert!(matches!(fit_decay(&few, KMode::Free), Err(FitError::OutOfWindow(_))));
    }

    #[test]
    fn stationary_at_optimum() {
        let mut c = synthetic(0.5, 100.0, 4.0, 250.0, 50);
        for (i, s) in c.signal.iter_mut().enumerate() {
            *s += 0.01 * ((i * 7919 % 97) as f64 / 48.0 - 1.0);
        }
        let f = fit_decay(&c, KMode::Free).unwrap();
        let g = objective_gradient(&c, &f).unwrap();
        assert!(g.iter().map(|v| v * v).sum::<f64>().sqrt() < 1e-8, "{g:?}");
    }

    #[test]
    fn time_scaling_scales_t2() {
        let mut c = synthetic(0.5, 100.0, 3.5, 250.0, 30);
        for (i, s) in c.signal.iter_mut().enumerate() {
            *s += 0.005 * ((i * 31 % 11) as f64 / 5.0 - 1.0);
        }
        let f = fit_decay(&c, KMode::Free).unwrap();
        let mut scaled = c.clone();
        scaled.times.iter_mut().for_each(|t| *t *= 7.0);
        let g = fit_decay(&scaled, KMode::Free).unwrap();
        assert!((g.t2 / (7.0 * f.t2) - 1.0).abs() < 1e-9);
        assert!((g.k - f.k).abs() < 1e-9 && (g.amplitude - f.amplitude).abs() < 1e-9);
    }

    #[test]
    fn bound_is_flagged() {
        // exponent 8 lies above the allowed range
        let c = synthetic(0.5, 50.0, 8.0, 100.0, 30);
        let f = fit_decay(&c, KMode::Free).unwrap();
        assert!(f.k_at_bound && f.k == K_MAX);
        // the remaining coordinates are still stationary
        let g = objective_gradient(&c, &f).unwrap();
        assert!(g[0].abs() < 1e-8 && g[1].abs() < 1e-8 && g[2] < 0.0, "{g:?}");
    }

    #[test]
    fn scaling_exponents() {
        let lin: Vec<(usize, f64)> = [2, 4, 8, 16].iter().map(|&n| (n, 5.0 * n as f64)).collect();
        assert!((t2_scaling_values(&lin).unwrap().exponent - 1.0).abs() < 1e-12);
        let two_thirds: Vec<(usize, f64)> = [2, 4, 8, 16].iter().map(|&n| (n, 5.0 * (n as f64).powf(2.0 / 3.0))).collect();
        assert!((t2_scaling_values(&two_thirds).unwrap().exponent - 2.0 / 3.0).abs() < 1e-12);
        let table = [(2, 11.8), (4, 26.0), (8, 51.0), (16, 100.0), (32, 190.0), (64, 340.0)];
        let s = t2_scaling_values(&table).unwrap();
        assert!((s.exponent - 0.9663730979053978).abs() < 1e-12);
        assert!(s.exponent_ci95.0 < s.exponent && s.exponent < s.exponent_ci95.1);
        assert!(t2_scaling_values(&table[..2]).is_err());
        assert!(t2_scaling_values(&[(2, 1.0), (4, 0.0), (8, 3.0)]).is_err());
    }
}
