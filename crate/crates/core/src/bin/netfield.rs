use clap::{Args, Parser, Subcommand};
use netfield::harness::{
    parse_config_as, read_manifest_checks, run_in_pool, thread_count, verify_manifest, ExperimentConfig, ExperimentKind,
};
use netfield::Error;
use std::path::PathBuf;
use std::process::ExitCode;

/// Particle systems on networks and their mean-field limits.
#[derive(Parser)]
#[command(name = "netfield", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate particle systems over the (N, seed) grid.
    Simulate(RunArgs),
    /// Couple particles with the limit process and report the error per N.
    Couple(RunArgs),
    /// Solve a density PDE (Vlasov, pathwise closure or adaptive closure).
    Pde(RunArgs),
    /// Compare particle histograms with the Vlasov PDE.
    Compare(RunArgs),
    /// Distance between empirical and limit digraph measures.
    Graphs(RunArgs),
    /// Sanov gaps and exponential-moment checks.
    Sanov(RunArgs),
    /// Residual of the self-consistent interaction measure.
    RateZero(RunArgs),
    /// Print the checks of a finished run and verify its file digests.
    Report(RunArgs),
}

#[derive(Args)]
struct RunArgs {
    /// Configuration file; defaults are used when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory (overrides `out` in the config).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Run a single seed (overrides `seeds` in the config).
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads; falls back to NETFIELD_THREADS. Results do not depend on it.
    #[arg(long)]
    threads: Option<usize>,
}

const EXIT_FAIL: u8 = 1;
const EXIT_CONFIG: u8 = 2;

fn load(args: &RunArgs, kind: ExperimentKind) -> netfield::Result<ExperimentConfig> {
    let mut config = match &args.config {
        Some(path) => {
            let text = std::fs::read_to_string(path)
                .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
            parse_config_as(&text, Some(kind))?
        }
        None => ExperimentConfig::new(kind),
    };
    if let Some(out) = &args.out {
        config.out = out.clone();
    }
    if let Some(seed) = args.seed {
        config.seeds = vec![seed];
    }
    Ok(config)
}

fn experiment(args: &RunArgs, kind: ExperimentKind) -> netfield::Result<bool> {
    let config = load(args, kind)?;
    let threads = thread_count(args.threads)?;
    let manifest = run_in_pool(&config, threads)?;
    for c in &manifest.cells {
        if let Some(e) = &c.error {
            eprintln!("cell {}: {e}", c.label);
        }
    }
    for c in &manifest.checks {
        println!("{} {}: {}", if c.pass { "PASS" } else { "FAIL" }, c.name, c.detail);
    }
    println!("wrote {} files to {}", manifest.files.len(), config.out.display());
    Ok(manifest.pass())
}

fn report(args: &RunArgs) -> netfield::Result<bool> {
    let dir = args.out.clone().or_else(|| args.config.clone()).unwrap_or_else(|| PathBuf::from("out"));
    let (checks, pass) = read_manifest_checks(&dir)?;
    for c in &checks {
        println!("{} {}: {}", if c.pass { "PASS" } else { "FAIL" }, c.name, c.detail);
    }
    let changed = verify_manifest(&dir)?;
    for f in &changed {
        println!("DIGEST MISMATCH {f}");
    }
    Ok(pass && changed.is_empty())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Simulate(a) => experiment(a, ExperimentKind::Simulate),
        Command::Couple(a) => experiment(a, ExperimentKind::Couple),
        Command::Pde(a) => experiment(a, ExperimentKind::Pde),
        Command::Compare(a) => experiment(a, ExperimentKind::PdeVsParticles),
        Command::Graphs(a) => experiment(a, ExperimentKind::DigraphConvergence),
        Command::Sanov(a) => experiment(a, ExperimentKind::Sanov),
        Command::RateZero(a) => experiment(a, ExperimentKind::RateZero),
        Command::Report(a) => report(a),
    };
    match result {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(EXIT_FAIL),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_config() { EXIT_CONFIG } else { EXIT_FAIL })
        }
    }
}
