//! End-to-end acceptance suite. Runs every criterion, prints one line per
//! criterion and fails if any of them fails.

#[path = "../../core/tests/support/bruteforce.rs"]
mod bruteforce;

use std::collections::BTreeMap;
use std::f64::consts::{FRAC_PI_2, PI};
use std::fs;
use std::path::Path;
use std::process::Command;

use nalgebra::Vector3;
use serde_json::Value;
use spinecho::analysis::t2_scaling_values;
use spinecho::clusters::{partition_bath, Partition};
use spinecho::hamiltonian::SecondOrderOptions;
use spinecho::lattice::{generate_bath, point_dipole_hyperfine, LatticeConfig, NuclearSite, SpinBath};
use spinecho::propagate::{
    coherence_finite_bath, coherence_ideal, composite_target, pulse_fidelity, rotation, BathModel, FidelityConvention,
    PulseErrorModel,
};
use spinecho::sequences::{composite_pi, cpmg, udd, PulseEvent, PulseModel, PulseShape, SequenceTemplate};
use spinecho::units::{self, GAMMA_C13, GAMMA_E};
use spinecho_cli::config::{Family, SequenceSpec, Sweep};
use spinecho_cli::presets::preset;
use spinecho_cli::run::run;
use spinecho_cli::RunConfig;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome { pass, detail: detail.into() }
}

fn preset_config(name: &str) -> RunConfig {
    RunConfig::parse(preset(name).expect("preset exists")).expect("preset parses")
}

/// Runs `cfg` into a scratch directory and returns the manifest as JSON.
fn run_manifest(cfg: &RunConfig) -> Value {
    let dir = tempfile::tempdir().unwrap();
    run(cfg, Path::new("."), dir.path()).expect("run succeeds");
    serde_json::from_str(&fs::read_to_string(dir.path().join("manifest.json")).unwrap()).unwrap()
}

/// `(family, n) -> (t2, sigma_t2)` for every successful fit.
fn t2_table(manifest: &Value) -> BTreeMap<(String, u64), (f64, f64)> {
    manifest["curves"]
        .as_array()
        .unwrap()
        .iter()
        .filter(|c| c["fit"]["status"] == "ok")
        .map(|c| {
            let key = (c["family"].as_str().unwrap().to_string(), c["n"].as_u64().unwrap());
            (key, (c["fit"]["t2"].as_f64().unwrap(), c["fit"]["sigma_t2"].as_f64().unwrap_or(0.0)))
        })
        .collect()
}

fn udd_timing() -> Outcome {
    let t = 37.3;
    let seq = udd(8, t).unwrap();
    let worst = seq
        .centers()
        .iter()
        .enumerate()
        .map(|(i, &c)| {
            let expected = t * (PI * (i + 1) as f64 / 18.0).sin().powi(2);
            ((c - expected) / expected).abs()
        })
        .fold(0.0, f64::max);
    let (u, c) = (udd(2, t).unwrap(), cpmg(2, t).unwrap());
    let same = u.total_time == c.total_time && u.events == c.events;
    outcome(worst < 1e-12 && same, format!("udd(8) worst relative error {worst:.1e}; udd(2) == cpmg(2): {same}"))
}

fn square_pulse() -> Vec<PulseEvent> {
    vec![PulseEvent { phase: 0.0, nominal_angle: PI, shape: PulseShape::Square, duration: 0.032, center_time: 0.016 }]
}

/// Criterion 2 also picks the convention criterion 3 must use.
fn square_fidelity() -> (Outcome, Option<FidelityConvention>) {
    let target = rotation(0.0, PI);
    let mut lines = Vec::new();
    let mut selected = None;
    for conv in [FidelityConvention::TraceOverlap, FidelityConvention::SquaredOverlap] {
        for (label, rabi) in [("pi-calibrated", None), ("15 MHz", Some(units::mhz(15.0)))] {
            let f = pulse_fidelity(&square_pulse(), &PulseErrorModel::nitrogen14(rabi), &target, conv).unwrap();
            let ok = (f - 0.986).abs() <= 0.005;
            if ok && selected.is_none() {
                selected = Some(conv);
            }
            lines.push(format!("{conv:?}/{label} {f:.5}{}", if ok { " *" } else { "" }));
        }
    }
    (outcome(selected.is_some(), format!("F = 0.986 ± 0.005 wanted; {}", lines.join(", "))), selected)
}

fn composite_fidelity(conv: Option<FidelityConvention>) -> Outcome {
    let Some(conv) = conv else {
        return outcome(false, "no convention selected by criterion 2");
    };
    let events = composite_pi(0.0, PulseShape::Gaussian, 0.046).unwrap();
    let f = pulse_fidelity(&events, &PulseErrorModel::nitrogen14(None), &composite_target(0.0), conv).unwrap();
    outcome((f - 0.9995).abs() <= 0.0008, format!("{conv:?} F = {f:.6}, wanted 0.9995 ± 0.0008"))
}

/// Six nearest nuclei of a dense seeded bath, so the dipolar couplings matter.
fn oracle_bath() -> SpinBath {
    let cfg = LatticeConfig { radius_sites: 3, abundance: 0.05, seed: 7, strong_hf_cutoff: None, ..Default::default() };
    let b = Vector3::new(0.0003, 0.0001, 0.0039);
    let mut sites = generate_bath(&cfg, b).unwrap().sites;
    sites.sort_by(|a, b| a.position.norm().total_cmp(&b.position.norm()));
    sites.truncate(6);
    SpinBath::from_sites(sites, b)
}

fn oracle_equivalence() -> Outcome {
    let bath = oracle_bath();
    let model = BathModel::new(&bath, &Partition::single(bath.len()), &SecondOrderOptions::off()).unwrap();
    let times: Vec<f64> = (1..=50).map(|i| 1.2 * i as f64).collect();
    let mut worst = 0.0_f64;
    for template in [SequenceTemplate::Cpmg(1), SequenceTemplate::Cpmg(4), SequenceTemplate::Udd(4), SequenceTemplate::Xy(4)] {
        let curve = coherence_ideal(&model, &template, &times, None).unwrap();
        for (&t, &s) in times.iter().zip(&curve.signal) {
            worst = worst.max((s - bruteforce::signal(&bath, &template.build(t).unwrap())).abs());
        }
    }
    outcome(worst < 1e-8, format!("{} spins, Hahn/CPMG-4/UDD-4/XY-4 x 50 times, max deviation {worst:.2e}", bath.len()))
}

fn only(cfg: &mut RunConfig, families: &[Family], n: &[usize]) {
    cfg.sequences = families.iter().map(|&family| SequenceSpec { family, n: n.to_vec() }).collect();
}

fn t2_scaling() -> Outcome {
    let mut cfg = preset_config("table1");
    only(&mut cfg, &[Family::Cpmg], &[2, 4, 8, 16]);
    let table = t2_table(&run_manifest(&cfg));
    let t2: Vec<(usize, f64)> = [2usize, 4, 8, 16]
        .iter()
        .filter_map(|&n| table.get(&("cpmg".to_string(), n as u64)).map(|v| (n, v.0)))
        .collect();
    if t2.len() < 4 {
        return outcome(false, format!("only {} of 4 CPMG fits succeeded", t2.len()));
    }
    let monotone = t2.windows(2).all(|w| w[1].1 > w[0].1);
    let exponent = t2_scaling_values(&t2).unwrap().exponent;
    let base = t2[0].1;
    let pass = monotone && (0.7..=1.2).contains(&exponent) && (5.0..=25.0).contains(&base);
    let listing: Vec<String> = t2.iter().map(|(n, t)| format!("{n}:{t:.2}")).collect();
    outcome(pass, format!("T2 µs [{}], exponent {exponent:.3}, monotone {monotone}", listing.join(" ")))
}

/// Simulated T2 should not hinge on the clustering threshold.
fn threshold_insensitivity() -> Outcome {
    let mut worst = 0.0_f64;
    let mut base = None;
    for khz in [0.1, 0.05, 0.2] {
        let mut cfg = preset_config("table1");
        only(&mut cfg, &[Family::Cpmg], &[2, 4, 8, 16]);
        cfg.partition.threshold_khz = khz;
        let table = t2_table(&run_manifest(&cfg));
        match &base {
            None => base = Some(table),
            Some(b) => {
                for (k, v) in b {
                    let Some(w) = table.get(k) else {
                        return outcome(false, format!("fit {k:?} lost at {khz} kHz"));
                    };
                    worst = worst.max((w.0 - v.0).abs() / v.0);
                }
            }
        }
    }
    outcome(worst < 0.1, format!("threshold 0.05/0.1/0.2 kHz, largest relative T2 change {:.2}%", 100.0 * worst))
}

fn cpmg_vs_udd() -> Outcome {
    let seeds = 10..16u64;
    let mut rows: BTreeMap<(String, u64), Vec<f64>> = BTreeMap::new();
    for seed in seeds.clone() {
        let mut cfg = preset_config("table1");
        cfg.seed = seed;
        only(&mut cfg, &[Family::Cpmg, Family::Udd], &[4, 8, 16]);
        for (k, v) in t2_table(&run_manifest(&cfg)) {
            rows.entry(k).or_default().push(v.0);
        }
    }
    let stats = |v: &[f64]| {
        let m = v.iter().sum::<f64>() / v.len() as f64;
        let var = v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (v.len() - 1).max(1) as f64;
        (m, (var / v.len() as f64).sqrt(), v.len())
    };
    let mut pass = true;
    let mut parts = Vec::new();
    for n in [4u64, 8, 16] {
        let (Some(c), Some(u)) = (rows.get(&("cpmg".into(), n)), rows.get(&("udd".into(), n))) else {
            return outcome(false, format!("missing fits for n = {n}"));
        };
        let ((mc, sc, nc), (mu, su, nu)) = (stats(c), stats(u));
        let ok = nc >= 5 && nu >= 5 && mc >= mu - (sc * sc + su * su).sqrt();
        pass &= ok;
        parts.push(format!("n={n}: cpmg {mc:.1}±{sc:.1} udd {mu:.1}±{su:.1}"));
    }
    outcome(pass, format!("{} seeds; {}", seeds.count(), parts.join("; ")))
}

fn pulse_anisotropy() -> Outcome {
    let cfg = preset_config("fig3");
    let bath = spinecho_cli::run::prepare_bath(&cfg, Path::new(".")).unwrap();
    let partition = partition_bath(&bath, cfg.partition.max_size, units::khz(cfg.partition.threshold_khz)).unwrap();
    let model = BathModel::new(&bath, &partition, &cfg.second_order.options()).unwrap();
    let t = 2.0;
    let pulses = PulseModel::Square { duration: 0.032 };
    let err = PulseErrorModel::nitrogen14(None);
    let finite = |template: SequenceTemplate, phase: f64| {
        coherence_finite_bath(&model, &template, &pulses, &err, phase, &[t]).unwrap().signal[0]
    };
    let ideal = model.signal(&cpmg(8, t).unwrap()).unwrap();
    let (c_par, c_perp) = (finite(SequenceTemplate::Cpmg(8), 0.0), finite(SequenceTemplate::Cpmg(8), FRAC_PI_2));
    let (x_par, x_perp) = (finite(SequenceTemplate::Xy(8), 0.0), finite(SequenceTemplate::Xy(8), FRAC_PI_2));
    let pass = ideal >= 0.99 && c_perp < 0.7 && c_par > 0.9 && (x_par - x_perp).abs() <= 0.05;
    outcome(
        pass,
        format!("T = {t} µs: ideal {ideal:.4}; CPMG-8 par {c_par:.4} perp {c_perp:.4}; XY-8 par {x_par:.4} perp {x_perp:.4}"),
    )
}

fn revivals() -> Outcome {
    let position = Vector3::new(3.1, -1.4, 4.2);
    let site = NuclearSite {
        position,
        gamma_n: GAMMA_C13,
        hyperfine: point_dipole_hyperfine(&position, GAMMA_E, GAMMA_C13).unwrap(),
    };
    let bath = SpinBath::from_sites(vec![site], Vector3::new(0.0, 0.0, 0.0039));
    let model = BathModel::new(&bath, &Partition::single(1), &SecondOrderOptions::off()).unwrap();
    let p = bath.larmor_period();
    let at_revival: Vec<f64> = (1..=5).map(|m| 2.0 * m as f64 * p).collect();
    let between: Vec<f64> = (1..=5).map(|m| (2.0 * m as f64 - 1.0) * p).collect();
    let hahn = SequenceTemplate::Cpmg(1);
    let peak = coherence_ideal(&model, &hahn, &at_revival, None).unwrap();
    let dip = coherence_ideal(&model, &hahn, &between, None).unwrap();
    let worst = peak.signal.iter().map(|s| (1.0 - s).abs()).fold(0.0, f64::max);
    let deepest = dip.signal.iter().cloned().fold(1.0, f64::min);
    let single_ok = worst < 1e-6 && deepest < 1.0 - 1e-3;

    let mut cfg = preset_config("fig4");
    only(&mut cfg, &[Family::Cpmg], &[1, 4, 8, 16]);
    let Sweep::Revivals { .. } = cfg.sweep else {
        return outcome(false, "fig4 preset is not a revival sweep");
    };
    let table = t2_table(&run_manifest(&cfg));
    let env: Vec<f64> = [1u64, 4, 8, 16].iter().filter_map(|&n| table.get(&("cpmg".into(), n)).map(|v| v.0)).collect();
    let monotone = env.len() == 4 && env.windows(2).all(|w| w[1] > w[0]);
    outcome(
        single_ok && monotone,
        format!(
            "single spin |1 - s| at τ = mP ≤ {worst:.1e} (off-revival min {deepest:.3}); envelope T2 µs {:?}",
            env.iter().map(|t| (t * 10.0).round() / 10.0).collect::<Vec<_>>()
        ),
    )
}

fn read_tree(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .map(|p| (p.file_name().unwrap().to_string_lossy().into_owned(), fs::read(&p).unwrap()))
        .collect()
}

fn determinism() -> Outcome {
    let bin = env!("CARGO_BIN_EXE_spinecho");
    let mut failures = Vec::new();
    let mut files = 0;
    for name in spinecho_cli::presets::names() {
        let trees: Vec<_> = [1usize, 3]
            .iter()
            .map(|workers| {
                let dir = tempfile::tempdir().unwrap();
                let status = Command::new(bin)
                    .args(["run", "--preset", name, "--workers", &workers.to_string(), "--out"])
                    .arg(dir.path())
                    .env_remove("SPINECHO_OUTPUT_DIR")
                    .output()
                    .unwrap();
                assert!(status.status.success(), "{name}: {}", String::from_utf8_lossy(&status.stderr));
                read_tree(dir.path())
            })
            .collect();
        files += trees[0].len();
        if trees[0] != trees[1] {
            failures.push(name);
        }
    }
    outcome(failures.is_empty(), format!("{files} files over all presets, 1 vs 3 workers; differing presets: {failures:?}"))
}

fn main() {
    let mut results: Vec<(&str, Outcome)> = Vec::new();
    results.push(("1 UDD timing", udd_timing()));
    let (c2, conv) = square_fidelity();
    results.push(("2 square-pulse fidelity", c2));
    results.push(("3 composite-pulse fidelity", composite_fidelity(conv)));
    results.push(("4 oracle equivalence", oracle_equivalence()));
    results.push(("5 T2 scaling", t2_scaling()));
    results.push(("5b cluster threshold insensitivity", threshold_insensitivity()));
    results.push(("6 CPMG vs UDD ordering", cpmg_vs_udd()));
    results.push(("7 pulse-error anisotropy", pulse_anisotropy()));
    results.push(("8 revivals", revivals()));
    results.push(("9 determinism", determinism()));

    for (name, o) in &results {
        println!("{} criterion {name}: {}", if o.pass { "PASS" } else { "FAIL" }, o.detail);
    }
    let failed = results.iter().filter(|(_, o)| !o.pass).count();
    if failed > 0 {
        eprintln!("{failed} acceptance criteria failed");
        std::process::exit(1);
    }
}
