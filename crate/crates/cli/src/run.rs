//! End-to-end runs: bath, partition, sweeps, fits, CSV and manifest output.

use std::fs;
use std::path::{Path, PathBuf};

use nalgebra::Vector3;
use serde::Serialize;
use sha2::{Digest, Sha256};
use spinecho::analysis::{fit_decay, revival_envelope, t2_scaling, DecayFit, FitError, ScalingFit};
use spinecho::clusters::{partition_bath, Partition};
use spinecho::lattice::{generate_accepted_bath, read_bath, write_bath, SpinBath};
use spinecho::propagate::{
    coherence_finite_bath, coherence_fixed_spacing, coherence_ideal, coherence_sequences, BathModel, CoherenceCurve,
};
use spinecho::sequences::quantize_timing;
use spinecho::units;
use spinecho::Error as CoreError;

use crate::config::{BathSpec, InputState, RunConfig, Sweep};
use crate::error::{ConfigError, RunError};

pub const MANIFEST_SCHEMA: &str = "spinecho-manifest/1";
pub const OUTPUT_DIR_ENV: &str = "SPINECHO_OUTPUT_DIR";
pub const DEFAULT_OUTPUT_DIR: &str = "spinecho-out";

/// Command-line values that take precedence over the config file.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub max_cluster_size: Option<usize>,
    pub threshold_khz: Option<f64>,
}

impl Overrides {
    pub fn apply(&self, cfg: &mut RunConfig) {
        if let Some(s) = self.seed {
            cfg.seed = s;
        }
        if let Some(m) = self.max_cluster_size {
            cfg.partition.max_size = m;
        }
        if let Some(t) = self.threshold_khz {
            cfg.partition.threshold_khz = t;
        }
    }
}

/// Flag, then config file, then `SPINECHO_OUTPUT_DIR`, then `spinecho-out`.
pub fn resolve_output_dir(flag: Option<&Path>, cfg: &RunConfig, env: Option<&str>) -> PathBuf {
    flag.map(Path::to_path_buf)
        .or_else(|| cfg.output_dir.clone())
        .or_else(|| env.filter(|e| !e.is_empty()).map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from(DEFAULT_OUTPUT_DIR))
}

#[derive(Debug, Clone, Serialize)]
pub struct BathRecord {
    pub file: String,
    pub sha256: String,
    pub spins: usize,
    pub seed_used: u64,
    pub larmor_period_us: f64,
    pub strongest_hyperfine_khz: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct PartitionRecord {
    pub max_size: usize,
    pub threshold_khz: f64,
    pub largest: usize,
    pub clusters: Vec<Vec<usize>>,
}

#[derive(Debug, Clone, Serialize)]
pub struct CurveRecord {
    pub file: String,
    pub family: String,
    /// Pulses per sequence; absent for fixed-spacing curves.
    pub n: Option<usize>,
    pub input: Option<InputState>,
    pub tau_us: Option<f64>,
    pub points: usize,
    pub sha256: String,
    pub fit: FitRecord,
}

#[derive(Debug, Clone, Serialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum FitRecord {
    Ok {
        #[serde(flatten)]
        fit: DecayFit,
        /// Fixed-spacing fits are indicative only.
        indicative: bool,
    },
    OutOfWindow {
        reason: String,
    },
    Failed {
        reason: String,
    },
}

impl FitRecord {
    fn from_result(r: Result<DecayFit, FitError>, indicative: bool) -> Self {
        match r {
            Ok(fit) => Self::Ok { fit, indicative },
            Err(FitError::OutOfWindow(reason)) => Self::OutOfWindow { reason },
            Err(e) => Self::Failed { reason: e.to_string() },
        }
    }

    pub fn fit(&self) -> Option<&DecayFit> {
        match self {
            Self::Ok { fit, .. } => Some(fit),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct ScalingRecord {
    pub family: String,
    pub input: Option<InputState>,
    #[serde(flatten)]
    pub scaling: ScalingFit,
}

#[derive(Debug, Clone, Serialize)]
pub struct SkippedRecord {
    pub family: String,
    pub n: usize,
    pub reason: String,
}

#[derive(Debug, Clone, Serialize)]
pub struct Manifest {
    pub schema: String,
    pub generator: String,
    pub config: RunConfig,
    pub bath: BathRecord,
    pub partition: PartitionRecord,
    pub curves: Vec<CurveRecord>,
    pub scaling: Vec<ScalingRecord>,
    pub skipped: Vec<SkippedRecord>,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

pub fn curve_csv(curve: &CoherenceCurve) -> String {
    let mut out = String::from("time_us,signal,uncertainty\n");
    for i in 0..curve.len() {
        out.push_str(&format!("{:?},{:?},{:?}\n", curve.times[i], curve.signal[i], curve.uncertainty[i]));
    }
    out
}

/// Reads a curve written by [`curve_csv`].
pub fn parse_curve_csv(text: &str) -> Result<CoherenceCurve, String> {
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, h)) if h.trim() == "time_us,signal,uncertainty" => {}
        _ => return Err("line 1: expected header time_us,signal,uncertainty".into()),
    }
    let mut curve = CoherenceCurve::new(vec![], vec![]);
    for (i, line) in lines {
        if line.trim().is_empty() {
            continue;
        }
        let v: Vec<f64> = line
            .split(',')
            .map(|f| f.trim().parse::<f64>())
            .collect::<Result<_, _>>()
            .map_err(|e| format!("line {}: {e}", i + 1))?;
        if v.len() != 3 {
            return Err(format!("line {}: expected 3 columns", i + 1));
        }
        curve.times.push(v[0]);
        curve.signal.push(v[1]);
        curve.uncertainty.push(v[2]);
    }
    curve.validate().map_err(|e| e.to_string())?;
    Ok(curve)
}

/// Builds or loads the bath described by `cfg`. Relative bath paths resolve
/// against `base_dir`.
pub fn prepare_bath(cfg: &RunConfig, base_dir: &Path) -> Result<SpinBath, RunError> {
    let b = Vector3::from(cfg.field.b_tesla);
    match &cfg.bath {
        BathSpec::Lattice { .. } => {
            let (lattice, attempts) = cfg.lattice().expect("lattice spec");
            generate_accepted_bath(&lattice, b, attempts).map_err(|e| ConfigError::new(None, e.to_string()).into())
        }
        BathSpec::File { path } => {
            let full = if path.is_absolute() { path.clone() } else { base_dir.join(path) };
            let text = fs::read_to_string(&full)
                .map_err(|e| ConfigError::new(None, format!("cannot read bath file {}: {e}", full.display())))?;
            let loaded = read_bath(&text).map_err(|e| ConfigError::new(None, format!("{}: {e}", full.display())))?;
            let mut bath = SpinBath::from_sites(loaded.sites, b);
            bath.seed_used = loaded.seed_used;
            bath.abundance = loaded.abundance;
            Ok(bath)
        }
    }
}

struct Job {
    family: String,
    n: Option<usize>,
    input: Option<InputState>,
    tau_us: Option<f64>,
    file: String,
}

/// Executes the run and writes `bath.txt`, one CSV per curve and
/// `manifest.json` into `out_dir`.
pub fn run(cfg: &RunConfig, base_dir: &Path, out_dir: &Path) -> Result<Manifest, RunError> {
    cfg.check("")?;
    let bath = prepare_bath(cfg, base_dir)?;
    let bath_text = write_bath(&bath);
    let partition = partition_bath(&bath, cfg.partition.max_size, units::khz(cfg.partition.threshold_khz))?;
    let model = BathModel::new(&bath, &partition, &cfg.second_order.options())?;
    let period = bath.larmor_period();
    let pulse_model = cfg.pulses.model().map_err(|e| ConfigError::new(None, e))?;
    let err_model = cfg.pulses.error_model();
    let grid = cfg.quantization_grid_ns.map(|g| g * 1e-3);
    let k_mode = cfg.fit.mode();

    let mut curves: Vec<(Job, CoherenceCurve, FitRecord)> = Vec::new();
    let mut skipped = Vec::new();
    for spec in &cfg.sequences {
        let fam = spec.family.label().to_string();
        match &cfg.sweep {
            Sweep::Grid { points, t_max_us, t_max_larmor_per_pulse } => {
                for &n in &spec.n {
                    let t_max = t_max_us.unwrap_or_else(|| t_max_larmor_per_pulse.unwrap_or(1.0) * n as f64 * period);
                    let times: Vec<f64> = (1..=*points).map(|i| t_max * i as f64 / *points as f64).collect();
                    let tmpl = spec.family.template(n);
                    if pulse_model.is_ideal() {
                        let curve = match coherence_ideal(&model, &tmpl, &times, grid) {
                            Ok(c) => c,
                            Err(e @ CoreError::QuantizationCollision(..)) => {
                                skipped.push(SkippedRecord { family: fam.clone(), n, reason: e.to_string() });
                                continue;
                            }
                            Err(e) => return Err(e.into()),
                        };
                        let fit = FitRecord::from_result(fit_decay(&curve, k_mode), false);
                        let file = format!("{fam}-{n:03}.csv");
                        curves.push((Job { family: fam.clone(), n: Some(n), input: None, tau_us: None, file }, curve, fit));
                    } else {
                        for &input in &cfg.pulses.inputs {
                            let curve = coherence_finite_bath(&model, &tmpl, &pulse_model, &err_model, input.phase(), &times)?;
                            let fit = FitRecord::from_result(fit_decay(&curve, k_mode), false);
                            let file = format!("{fam}-{n:03}-{}.csv", input.label());
                            curves.push((Job { family: fam.clone(), n: Some(n), input: Some(input), tau_us: None, file }, curve, fit));
                        }
                    }
                }
            }
            Sweep::Revivals { multiples } => {
                for &n in &spec.n {
                    let tmpl = spec.family.template(n);
                    let seqs = multiples
                        .iter()
                        .map(|&m| {
                            let t = tmpl.revival_time(m, period).expect("validated as commensurate");
                            let s = tmpl.build(t)?;
                            match grid {
                                Some(g) => quantize_timing(&s, g),
                                None => Ok(s),
                            }
                        })
                        .collect::<Result<Vec<_>, _>>();
                    let seqs = match seqs {
                        Ok(s) => s,
                        Err(e @ CoreError::QuantizationCollision(..)) => {
                            skipped.push(SkippedRecord { family: fam.clone(), n, reason: e.to_string() });
                            continue;
                        }
                        Err(e) => return Err(e.into()),
                    };
                    let curve = coherence_sequences(&model, &seqs)?;
                    let fit = FitRecord::from_result(revival_envelope(&curve), false);
                    let file = format!("{fam}-{n:03}-revivals.csv");
                    curves.push((Job { family: fam.clone(), n: Some(n), input: None, tau_us: None, file }, curve, fit));
                }
            }
            Sweep::FixedSpacing { tau_us } => {
                let blocks: Vec<usize> = spec.n.iter().map(|n| n / 2).collect();
                for (i, &tau) in tau_us.iter().enumerate() {
                    let curve = coherence_fixed_spacing(&model, tau, &blocks)?;
                    let fit = FitRecord::from_result(fit_decay(&curve, k_mode), true);
                    let file = format!("{fam}-fixed-{i:02}.csv");
                    curves.push((Job { family: fam.clone(), n: None, input: None, tau_us: Some(tau), file }, curve, fit));
                }
            }
        }
    }

    let mut scaling = Vec::new();
    if !matches!(cfg.sweep, Sweep::FixedSpacing { .. }) {
        let mut groups: Vec<(String, Option<InputState>)> = Vec::new();
        for (job, _, _) in &curves {
            let key = (job.family.clone(), job.input);
            if !groups.contains(&key) {
                groups.push(key);
            }
        }
        for (family, input) in groups {
            let fits: Vec<(usize, DecayFit)> = curves
                .iter()
                .filter(|(j, _, _)| j.family == family && j.input == input)
                .filter_map(|(j, _, f)| Some((j.n?, f.fit()?.clone())))
                .collect();
            if fits.len() >= 3 {
                if let Ok(s) = t2_scaling(&fits) {
                    scaling.push(ScalingRecord { family, input, scaling: s });
                }
            }
        }
    }

    fs::create_dir_all(out_dir)?;
    fs::write(out_dir.join("bath.txt"), &bath_text)?;
    let mut records = Vec::with_capacity(curves.len());
    for (job, curve, fit) in curves {
        let text = curve_csv(&curve);
        fs::write(out_dir.join(&job.file), &text)?;
        records.push(CurveRecord {
            file: job.file,
            family: job.family,
            n: job.n,
            input: job.input,
            tau_us: job.tau_us,
            points: curve.len(),
            sha256: sha256_hex(text.as_bytes()),
            fit,
        });
    }
    let strongest = bath.sites.iter().map(|s| s.hyperfine_norm()).fold(0.0, f64::max);
    let manifest = Manifest {
        schema: MANIFEST_SCHEMA.into(),
        generator: format!("spinecho {}", env!("CARGO_PKG_VERSION")),
        // where the files went is not part of what they contain
        config: RunConfig { output_dir: None, ..cfg.clone() },
        bath: BathRecord {
            file: "bath.txt".into(),
            sha256: sha256_hex(bath_text.as_bytes()),
            spins: bath.len(),
            seed_used: bath.seed_used,
            larmor_period_us: period,
            strongest_hyperfine_khz: units::to_khz(strongest),
        },
        partition: partition_record(&partition, cfg.partition.threshold_khz),
        curves: records,
        scaling,
        skipped,
    };
    let json = serde_json::to_string_pretty(&manifest).expect("manifest serialises") + "\n";
    fs::write(out_dir.join("manifest.json"), json)?;
    Ok(manifest)
}

fn partition_record(p: &Partition, threshold_khz: f64) -> PartitionRecord {
    PartitionRecord { max_size: p.max_size, threshold_khz, largest: p.largest(), clusters: p.clusters.clone() }
}
