use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use spinecho::analysis::{fit_decay, revival_envelope, KMode};
use spinecho::clusters::partition_bath;
use spinecho::lattice::{read_bath, write_bath};
use spinecho::units;
use spinecho_cli::presets;
use spinecho_cli::run::{parse_curve_csv, prepare_bath, resolve_output_dir, run, Overrides, OUTPUT_DIR_ENV};
use spinecho_cli::{ConfigError, ExitStatus, RunConfig, RunError};

#[derive(Parser)]
#[command(name = "spinecho", version, about = "NV electron spin decoherence under dynamical decoupling")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a config and write CSV curves plus manifest.json.
    Run(RunArgs),
    /// Check a config without computing anything.
    Validate(Source),
    /// Generate or inspect bath files.
    #[command(subcommand)]
    Bath(BathCommand),
    /// Re-fit existing curve CSVs.
    Fit(FitArgs),
    /// List the built-in presets.
    Presets,
}

#[derive(Args)]
struct Source {
    /// Config file.
    #[arg(required_unless_present = "preset", conflicts_with = "preset")]
    config: Option<PathBuf>,
    /// Built-in preset instead of a file.
    #[arg(long)]
    preset: Option<String>,
    /// Overrides the lattice seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Overrides the cluster size cap.
    #[arg(long)]
    max_cluster_size: Option<usize>,
    /// Overrides the cluster edge threshold (kHz).
    #[arg(long)]
    threshold_khz: Option<f64>,
}

#[derive(Args)]
struct RunArgs {
    #[command(flatten)]
    source: Source,
    /// Output directory; beats the config file and SPINECHO_OUTPUT_DIR.
    #[arg(long, short)]
    out: Option<PathBuf>,
    /// Worker threads; results do not depend on it.
    #[arg(long)]
    workers: Option<usize>,
}

#[derive(Subcommand)]
enum BathCommand {
    /// Draw the bath a config describes and write it as text.
    Gen {
        #[command(flatten)]
        source: Source,
        /// Destination file; stdout when absent.
        #[arg(long, short)]
        out: Option<PathBuf>,
    },
    /// Summarise a bath file.
    Show {
        file: PathBuf,
        #[arg(long, default_value_t = 6)]
        max_cluster_size: usize,
        #[arg(long, default_value_t = 0.1)]
        threshold_khz: f64,
    },
}

#[derive(Args)]
struct FitArgs {
    files: Vec<PathBuf>,
    /// "free" or a fixed exponent.
    #[arg(long, default_value = "free")]
    k: String,
    /// Treat the points as revival maxima (k = 3).
    #[arg(long)]
    envelope: bool,
}

fn load(source: &Source) -> Result<(RunConfig, PathBuf), RunError> {
    let (text, base) = match (&source.config, &source.preset) {
        (Some(path), _) => {
            let text = std::fs::read_to_string(path)
                .map_err(|e| ConfigError::new(None, format!("cannot read {}: {e}", path.display())))?;
            (text, path.parent().map(Path::to_path_buf).unwrap_or_default())
        }
        (None, Some(name)) => {
            let text = presets::preset(name).ok_or_else(|| {
                ConfigError::new(None, format!("unknown preset {name:?}; available: {}", presets::names().collect::<Vec<_>>().join(", ")))
            })?;
            (text.to_string(), PathBuf::from("."))
        }
        (None, None) => return Err(ConfigError::new(None, "no config given").into()),
    };
    let mut cfg: RunConfig = RunConfig::parse(&text)?;
    Overrides { seed: source.seed, max_cluster_size: source.max_cluster_size, threshold_khz: source.threshold_khz }.apply(&mut cfg);
    cfg.check(&text)?;
    Ok((cfg, base))
}

fn cmd_run(args: &RunArgs) -> Result<(), RunError> {
    let (cfg, base) = load(&args.source)?;
    let env = std::env::var(OUTPUT_DIR_ENV).ok();
    let out = resolve_output_dir(args.out.as_deref(), &cfg, env.as_deref());
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(args.workers.unwrap_or(0))
        .build()
        .map_err(|e| ConfigError::new(None, format!("cannot start workers: {e}")))?;
    let manifest = pool.install(|| run(&cfg, &base, &out))?;
    println!("bath: {} spins, seed {}, Larmor period {:.3} µs", manifest.bath.spins, manifest.bath.seed_used, manifest.bath.larmor_period_us);
    println!("{:<28} {:>12} {:>10} {:>7}", "curve", "T2 (µs)", "±", "k");
    for c in &manifest.curves {
        match c.fit.fit() {
            Some(f) => println!("{:<28} {:>12.3} {:>10.3} {:>7.3}{}", c.file, f.t2, f.sigma_t2, f.k, if f.k_at_bound { " (k at bound)" } else { "" }),
            None => println!("{:<28} {:>12}", c.file, "no fit"),
        }
    }
    for s in &manifest.scaling {
        let input = s.input.map(|i| format!(" ({})", i.label())).unwrap_or_default();
        println!("{}{input} T2 ∝ n^{:.3} (95% CI {:.3}..{:.3})", s.family, s.scaling.exponent, s.scaling.exponent_ci95.0, s.scaling.exponent_ci95.1);
    }
    for s in &manifest.skipped {
        println!("skipped {}-{}: {}", s.family, s.n, s.reason);
    }
    println!("wrote {}", out.display());
    Ok(())
}

fn cmd_validate(source: &Source) -> Result<(), RunError> {
    let (cfg, _) = load(source)?;
    let curves: usize = cfg.sequences.iter().map(|s| s.n.len()).sum();
    println!("ok: {} sequence families, {curves} pulse counts", cfg.sequences.len());
    Ok(())
}

fn cmd_bath(cmd: &BathCommand) -> Result<(), RunError> {
    match cmd {
        BathCommand::Gen { source, out } => {
            let (cfg, base) = load(source)?;
            let bath = prepare_bath(&cfg, &base)?;
            let text = write_bath(&bath);
            match out {
                Some(p) => std::fs::write(p, text)?,
                None => print!("{text}"),
            }
            Ok(())
        }
        BathCommand::Show { file, max_cluster_size, threshold_khz } => {
            let text = std::fs::read_to_string(file)?;
            let bath = read_bath(&text).map_err(|e| ConfigError::new(None, e.to_string()))?;
            let strongest = bath.sites.iter().map(|s| s.hyperfine_norm()).fold(0.0, f64::max);
            let part = partition_bath(&bath, *max_cluster_size, units::khz(*threshold_khz))?;
            println!("spins            {}", bath.len());
            println!("seed             {}", bath.seed_used);
            println!("abundance        {}", bath.abundance);
            println!("field (T)        {:?}", [bath.b_field.x, bath.b_field.y, bath.b_field.z]);
            println!("Larmor period    {:.4} µs", bath.larmor_period());
            println!("max hyperfine    {:.2} kHz", units::to_khz(strongest));
            println!("clusters         {} (largest {})", part.clusters.len(), part.largest());
            Ok(())
        }
    }
}

fn cmd_fit(args: &FitArgs) -> Result<(), RunError> {
    let mode = if args.k == "free" {
        KMode::Free
    } else {
        KMode::Fixed(args.k.parse().map_err(|_| ConfigError::new(None, format!("--k must be \"free\" or a number, got {:?}", args.k)))?)
    };
    if args.files.is_empty() {
        return Err(ConfigError::new(None, "no CSV files given").into());
    }
    for f in &args.files {
        let text = std::fs::read_to_string(f)?;
        let curve = parse_curve_csv(&text).map_err(|e| ConfigError::new(None, format!("{}: {e}", f.display())))?;
        let result = if args.envelope { revival_envelope(&curve) } else { fit_decay(&curve, mode) };
        let value = match result {
            Ok(fit) => serde_json::json!({ "file": f, "status": "ok", "fit": fit }),
            Err(e) => serde_json::json!({ "file": f, "status": "out_of_window", "reason": e.to_string() }),
        };
        println!("{value}");
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Run(a) => cmd_run(a),
        Command::Validate(s) => cmd_validate(s),
        Command::Bath(b) => cmd_bath(b),
        Command::Fit(f) => cmd_fit(f),
        Command::Presets => {
            presets::names().for_each(|n| println!("{n}"));
            Ok(())
        }
    };
    match result {
        Ok(()) => ExitCode::from(ExitStatus::Ok as u8),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.status() as u8)
        }
    }
}
