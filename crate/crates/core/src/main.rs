use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use cdlab::commands::{run, Command};
use cdlab::config::Config;

#[derive(Parser)]
#[command(name = "cdlab", version, about = "Convection-diffusion inverse problem laboratory")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(clap::Args)]
struct Io {
    /// JSON configuration file.
    #[arg(long)]
    config: PathBuf,
    /// Output directory, created if missing.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Subcommand)]
enum Cmd {
    /// Solve the forward problem of pair1 and export its Neumann data.
    Forward(Io),
    /// Estimate the norm of the difference of the two DN maps.
    Dnmap(Io),
    /// Transport residual order and remainder decay of the growing solutions.
    GoCheck(Io),
    /// Boundary Carleman estimate over a seeded suite of test functions.
    CarlemanCheck(Io),
    /// Recover eta^2 (A_1 - A_2), and optionally the potential, from boundary terms.
    Reconstruct(Io),
    /// Perturbation family, error versus DN norm and stability-law fits.
    StabilityCurve(Io),
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    let (cmd, io) = match cli.cmd {
        Cmd::Forward(io) => (Command::Forward, io),
        Cmd::Dnmap(io) => (Command::Dnmap, io),
        Cmd::GoCheck(io) => (Command::GoCheck, io),
        Cmd::CarlemanCheck(io) => (Command::CarlemanCheck, io),
        Cmd::Reconstruct(io) => (Command::Reconstruct, io),
        Cmd::StabilityCurve(io) => (Command::StabilityCurve, io),
    };
    if let Some(n) = std::env::var("CDLAB_THREADS").ok().and_then(|v| v.parse::<usize>().ok()) {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            log::warn!("CDLAB_THREADS ignored: {e}");
        }
    }
    let result = Config::load(&io.config).and_then(|cfg| run(cmd, &cfg, &io.out));
    match result {
        Ok(o) if o.passed() => ExitCode::SUCCESS,
        Ok(o) => {
            for c in o.checks.iter().filter(|c| !c.passed) {
                eprintln!("check failed: {} = {:.4e} (threshold {:.4e})", c.name, c.value, c.threshold);
            }
            ExitCode::from(1)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
