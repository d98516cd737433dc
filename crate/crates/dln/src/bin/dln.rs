//! Thin command-line front end: parses flags, loads the TOML config, hands
//! everything to `dln::harness::run` and maps errors to exit codes
//! (0 success, 2 config error, 3 numerical abort / failed audit).

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use dln::harness::{run, ExperimentConfig, Kind};

#[derive(Parser)]
#[command(
    name = "dln",
    about = "Deep linear network dynamics laboratory",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,

    /// TOML experiment configuration; defaults apply when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Override the RNG seed from the config file.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Override the base output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,

    /// Suppress progress output on stdout.
    #[arg(long, global = true)]
    quiet: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Deterministic gradient flow (full stack or reduced end-to-end).
    Flow,
    /// Langevin dynamics upstairs or downstairs.
    Rle,
    /// Eigenvalue repulsion: interacting particles or the matrix diffusion.
    Dyson,
    /// Tangential Brownian motion on spheres (curvature drift example).
    Sphere,
    /// Matrix-completion ensemble with rank diagnostics.
    Complete,
    /// Tabulate entropy and free energy over a singular-value grid.
    EntropyMap,
    /// Run the invariant audit battery.
    Audit,
}

impl Command {
    fn kind(&self) -> Kind {
        match self {
            Command::Flow => Kind::Flow,
            Command::Rle => Kind::Rle,
            Command::Dyson => Kind::Dyson,
            Command::Sphere => Kind::Sphere,
            Command::Complete => Kind::Complete,
            Command::EntropyMap => Kind::EntropyMap,
            Command::Audit => Kind::Audit,
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let kind = cli.command.kind();

    let mut config = match &cli.config {
        Some(path) => match ExperimentConfig::from_path(path) {
            Ok(cfg) => cfg,
            Err(e) => {
                eprintln!("error: {e}");
                return ExitCode::from(2);
            }
        },
        None => ExperimentConfig::default_for_kind(kind),
    };
    if cli.config.is_some() && config.kind != kind {
        eprintln!(
            "error: config file declares kind \"{}\" but the subcommand is \"{}\"",
            config.kind.as_str(),
            kind.as_str()
        );
        return ExitCode::from(2);
    }
    config.kind = kind;
    if let Some(seed) = cli.seed {
        config.seed = seed;
    }
    if let Some(out) = cli.out {
        config.out = out;
    }

    match run(&config) {
        Ok(report) => {
            if !cli.quiet {
                println!("wrote {}", report.out_dir.display());
                if kind == Kind::Audit {
                    print_audit(&report.summary);
                }
            }
            if report.success {
                ExitCode::SUCCESS
            } else {
                eprintln!("error: run finished with failing checks");
                ExitCode::from(3)
            }
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(u8::try_from(e.exit_code()).unwrap_or(3))
        }
    }
}

fn print_audit(summary: &serde_json::Value) {
    if let Some(checks) = summary.get("checks").and_then(|c| c.as_array()) {
        for check in checks {
            let name = check.get("name").and_then(|v| v.as_str()).unwrap_or("?");
            let pass = check.get("pass").and_then(|v| v.as_bool()).unwrap_or(false);
            let residual = check
                .get("residual")
                .and_then(|v| v.as_f64())
                .unwrap_or(f64::NAN);
            let tolerance = check
                .get("tolerance")
                .and_then(|v| v.as_f64())
                .unwrap_or(f64::NAN);
            println!(
                "{}: {} (residual {:.3e}, tolerance {:.3e})",
                if pass { "PASS" } else { "FAIL" },
                name,
                residual,
                tolerance
            );
        }
    }
    if let (Some(p), Some(f)) = (
        summary.get("passed").and_then(|v| v.as_u64()),
        summary.get("failed").and_then(|v| v.as_u64()),
    ) {
        println!("{p} passed, {f} failed");
    }
}
