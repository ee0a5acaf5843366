use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use sparse_nash::harness::{configure_threads, run};

#[derive(Parser)]
#[command(name = "sparse-nash", version, about = "Equilibria and locality experiments for network games")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct RunArgs {
    /// JSON experiment configuration.
    #[arg(long)]
    config: PathBuf,
    /// Overrides the seed in the configuration.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory (default: the config's `output`, else `out`).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Global equilibrium by Picard iteration.
    Solve(RunArgs),
    /// Truncated local solves against the reference equilibrium.
    Truncate(RunArgs),
    /// Clamped reconstruction of balls from exact boundary actions.
    Reconstruct(RunArgs),
    /// Exploitability of the locally built profiles.
    Epsnash(RunArgs),
    /// Covariance decay between separated vertices.
    Corrdecay(RunArgs),
    /// Convergence of local statistics along a graph sequence.
    Lwc(RunArgs),
    /// Mass-transport check.
    Mtp(RunArgs),
    /// Volterra state representations and the reduced payoff.
    VolterraCheck(RunArgs),
}

impl Command {
    fn split(&self) -> (&'static str, &RunArgs) {
        match self {
            Command::Solve(a) => ("solve", a),
            Command::Truncate(a) => ("truncate", a),
            Command::Reconstruct(a) => ("reconstruct", a),
            Command::Epsnash(a) => ("epsnash", a),
            Command::Corrdecay(a) => ("corrdecay", a),
            Command::Lwc(a) => ("lwc", a),
            Command::Mtp(a) => ("mtp", a),
            Command::VolterraCheck(a) => ("volterra-check", a),
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let (name, args) = cli.command.split();
    let outcome = configure_threads().and_then(|_| run(name, &args.config, args.seed, args.out.as_deref()));
    match outcome {
        Ok(o) => {
            let status = if o.manifest.pass { "pass" } else { "bound check failed" };
            eprintln!("{name}: {status}; outputs in {}", o.out_dir.display());
            ExitCode::from(o.exit_code() as u8)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}
