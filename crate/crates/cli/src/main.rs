use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Result;
use clap::{Parser, Subcommand};

mod commands;
mod config;

use commands::Output;
use config::{RunConfig, MESHES};

#[derive(Parser, Debug)]
#[command(name = "geocount", version, about = "Closed-geodesic census, Jacobi spectra and weighted counts")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// Run configuration (TOML with flat sections).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    #[arg(long, global = true)]
    mesh: Option<usize>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[arg(long, global = true)]
    trials: Option<usize>,
}

#[derive(Subcommand, Debug, Clone, Copy)]
enum Command {
    /// Find all closed geodesics up to a length bound.
    Census,
    /// Index, nullity and monodromy of census geodesics.
    Jacobi,
    /// Weights of a set of geodesics.
    Weights,
    /// Length-spectrum count function.
    Count,
    /// Continue geodesics along a metric path and check invariance.
    Continue,
    /// Weight of a window for a degenerate metric via perturbations.
    DegenerateWeight,
}

const EXIT_CONFIG: u8 = 2;
const EXIT_STALL: u8 = 3;
const EXIT_AMBIGUOUS: u8 = 4;
const EXIT_CLUSTER: u8 = 5;

fn load(cli: &Cli) -> Result<RunConfig> {
    let path = cli.config.as_ref().ok_or_else(|| anyhow::anyhow!("--config is required"))?;
    let mut cfg = RunConfig::load(path)?;
    if let Some(m) = cli.mesh {
        anyhow::ensure!(MESHES.contains(&m), "mesh must be one of {MESHES:?}, got {m}");
        cfg.run.mesh = Some(m);
    }
    if let Some(s) = cli.seed {
        cfg.run.seed = Some(s);
    }
    if let Some(t) = cli.trials {
        anyhow::ensure!(t > 0, "trials must be at least 1");
        cfg.run.trials = Some(t);
    }
    Ok(cfg)
}

fn exit_code(err: &anyhow::Error) -> u8 {
    match err.downcast_ref::<geocount::Error>() {
        Some(geocount::Error::Stall { .. }) => EXIT_STALL,
        Some(geocount::Error::AmbiguousWeight { .. }) => EXIT_AMBIGUOUS,
        Some(geocount::Error::UnresolvedCluster(_)) => EXIT_CLUSTER,
        Some(geocount::Error::Config(_)) => EXIT_CONFIG,
        _ => 1,
    }
}

fn run(cli: &Cli, cfg: &RunConfig, out: &mut Output) -> Result<()> {
    if let Some(n) = cfg.run.threads {
        // Ignored when the global pool already exists.
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    geocount::jacobi::set_nullity_relative_tolerance(cfg.tolerances.nullity);
    match cli.command {
        Command::Census => commands::census(cfg, out),
        Command::Jacobi => commands::jacobi(cfg, out),
        Command::Weights => commands::weights(cfg, out),
        Command::Count => commands::count(cfg, out),
        Command::Continue => commands::continue_path(cfg, out),
        Command::DegenerateWeight => commands::degenerate(cfg, out),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let cfg = match load(&cli) {
        Ok(cfg) => cfg,
        Err(e) => {
            eprintln!("config error: {e:#}");
            return ExitCode::from(EXIT_CONFIG);
        }
    };
    let mut out = match Output::new(&cli.out) {
        Ok(o) => o,
        Err(e) => {
            eprintln!("error: {e:#}");
            return ExitCode::FAILURE;
        }
    };
    match run(&cli, &cfg, &mut out).and_then(|()| out.finish()) {
        Ok(()) => {
            for line in &out.summary {
                println!("{line}");
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            let _ = out.finish();
            eprintln!("error: {e:#}");
            if let Some(geocount::Error::AmbiguousWeight { values, diagnostics }) = e.downcast_ref::<geocount::Error>() {
                eprintln!("trial values: {values:?}\n{diagnostics}");
            }
            ExitCode::from(exit_code(&e))
        }
    }
}
