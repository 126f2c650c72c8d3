//! Command-line front end.
//!
//! Exit codes: 0 success, 1 computation failure (including failed
//! cross-checks), 2 configuration error, 3 ellipticity abort.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use heatkern::config::{validate_config, RunConfig};
use heatkern::report::{exit_code, run_report, write_report, write_sidecars, RunOptions, Section};
use heatkern::Error;

#[derive(Parser)]
#[command(
    name = "heatkern",
    version,
    about = "Heat-kernel invariants of non-Laplace type operators"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run every configured computation and write the full report.
    Report(RunArgs),
    /// Only the leading-symbol ellipticity check.
    Ellipticity(RunArgs),
    /// Finsler branch summaries and the bicharacteristic flow.
    FinslerFlow(RunArgs),
    /// Discretization oracles and the half-line cross-check.
    Oracle(RunArgs),
    /// Validate a configuration and print every problem found.
    Validate {
        #[arg(long)]
        config: PathBuf,
        /// Print the canonical form of a valid configuration.
        #[arg(long)]
        canonical: bool,
    },
}

#[derive(Args)]
struct RunArgs {
    #[arg(long)]
    config: PathBuf,
    /// Report path; defaults to `output.report` of the config, else stdout.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Continue after a failed ellipticity check and record the failure.
    #[arg(long)]
    force: bool,
    /// Override the contour-versus-oracle cross-check tolerance.
    #[arg(long)]
    tol: Option<f64>,
    /// Worker threads; the HEATKERN_THREADS environment variable wins.
    #[arg(long)]
    threads: Option<usize>,
}

fn load(path: &Path) -> Result<RunConfig, u8> {
    let raw = std::fs::read_to_string(path).map_err(|e| {
        eprintln!("error: cannot read {}: {e}", path.display());
        2
    })?;
    validate_config(&raw).map_err(|errors| {
        for e in &errors {
            eprintln!("config error: {e}");
        }
        2
    })
}

fn configure_threads(requested: Option<usize>) -> Result<(), u8> {
    let from_env = match std::env::var("HEATKERN_THREADS") {
        Ok(v) => Some(v.trim().parse::<usize>().map_err(|_| {
            eprintln!("config error: HEATKERN_THREADS must be a positive integer, got {v:?}");
            2
        })?),
        Err(_) => None,
    };
    if let Some(n) = from_env.or(requested) {
        if n == 0 {
            eprintln!("config error: thread count must be positive");
            return Err(2);
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| {
                eprintln!("error: cannot configure thread pool: {e}");
                1
            })?;
    }
    Ok(())
}

fn fail(e: &Error) -> u8 {
    match e {
        Error::Ellipticity { min_eigenvalue, x, xi } => {
            eprintln!(
                "ellipticity abort: min eigenvalue {min_eigenvalue:.3e} of H(x, ξ) at x = {x:?}, witness ξ = {xi:?}"
            );
        }
        other => eprintln!("error: {other}"),
    }
    exit_code(e) as u8
}

fn run(args: &RunArgs, section: Section) -> Result<(), u8> {
    configure_threads(args.threads)?;
    if let Some(t) = args.tol {
        if !(t > 0.0) {
            eprintln!("config error: --tol must be positive");
            return Err(2);
        }
    }
    let cfg = load(&args.config)?;
    let opts = RunOptions {
        force: args.force,
        tol: args.tol,
        section,
    };
    let report = run_report(&cfg, &opts).map_err(|e| fail(&e))?;
    let out = args
        .out
        .clone()
        .or_else(|| cfg.output.report.as_ref().map(PathBuf::from));
    match out {
        Some(path) => write_report(&report, &path).map_err(|e| fail(&e))?,
        None => println!("{}", report.to_json()),
    }
    for p in write_sidecars(&report, &cfg).map_err(|e| fail(&e))? {
        eprintln!("wrote {p}");
    }
    if report.ellipticity.forced {
        eprintln!("warning: ellipticity check failed; results were computed because of --force");
    }
    for c in report.cross_checks.iter().filter(|c| !c.passed) {
        eprintln!(
            "cross-check failed: {} delta {:.3e} exceeds tolerance {:.1e}",
            c.name, c.delta, c.tolerance
        );
    }
    if report.checks_passed() {
        Ok(())
    } else {
        Err(1)
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Report(a) => run(a, Section::All),
        Command::Ellipticity(a) => run(a, Section::Ellipticity),
        Command::FinslerFlow(a) => run(a, Section::Finsler),
        Command::Oracle(a) => run(a, Section::Oracle),
        Command::Validate { config, canonical } => load(config).map(|cfg| {
            if *canonical {
                println!("{}", cfg.to_canonical_json());
            } else {
                println!("ok");
            }
        }),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(code) => ExitCode::from(code),
    }
}
