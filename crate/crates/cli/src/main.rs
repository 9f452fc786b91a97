use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use ctp_cli::{parse_config_with, run, schema_text, CliError, Experiment};

#[derive(Parser)]
#[command(name = "ctp", version, about = "Coalescing tagged particle experiments")]
struct Cli {
    /// Print the documented configuration keys and exit.
    #[arg(long)]
    print_config_schema: bool,

    #[command(subcommand)]
    command: Option<Command>,
}

#[derive(Subcommand)]
enum Command {
    /// Particle ensemble in a random obstacle field.
    Particle(Args),
    /// Monte Carlo of the limiting jump process.
    Kinetic(Args),
    /// Deterministic volume marginal at time T.
    Marginal(Args),
    /// Particle against kinetic marginals over decreasing phi.
    Convergence(Args),
    /// Law of V/T^3 over increasing horizons.
    Asymptotics(Args),
    /// Poisson tail bound, displacement audit and short-flight statistics.
    Lemmas(Args),
    /// Scripted finite-time accumulation of collisions.
    Blowup(Args),
}

#[derive(clap::Args)]
struct Args {
    /// Configuration file; defaults apply when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Overrides `seed`.
    #[arg(long)]
    seed: Option<u64>,
    /// Overrides `output_dir`.
    #[arg(long)]
    out: Option<PathBuf>,
}

impl Command {
    fn split(self) -> (Experiment, Args) {
        match self {
            Command::Particle(a) => (Experiment::Particle, a),
            Command::Kinetic(a) => (Experiment::Kinetic, a),
            Command::Marginal(a) => (Experiment::Marginal, a),
            Command::Convergence(a) => (Experiment::Convergence, a),
            Command::Asymptotics(a) => (Experiment::Asymptotics, a),
            Command::Lemmas(a) => (Experiment::Lemmas, a),
            Command::Blowup(a) => (Experiment::Blowup, a),
        }
    }
}

fn execute(experiment: Experiment, args: Args) -> Result<i32, CliError> {
    let text = match &args.config {
        Some(p) => std::fs::read_to_string(p)?,
        None => String::new(),
    };
    let mut cfg = parse_config_with(&text, Some(experiment))?;
    if let Some(seed) = args.seed {
        cfg.seed = seed;
        cfg.seed_defaulted = false;
    }
    if let Some(out) = args.out {
        cfg.output_dir = out;
    }
    let outcome = run(&cfg)?;
    match &outcome.error {
        Some(e) => eprintln!("ctp: {e}"),
        None => println!("{}", outcome.manifest.display()),
    }
    Ok(outcome.exit_code)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    if cli.print_config_schema {
        print!("{}", schema_text());
        return ExitCode::SUCCESS;
    }
    let Some(command) = cli.command else {
        eprintln!("ctp: a subcommand is required (see --help)");
        return ExitCode::from(2);
    };
    let (experiment, args) = command.split();
    let code = execute(experiment, args).unwrap_or_else(|e| {
        eprintln!("ctp: {e}");
        e.exit_code()
    });
    ExitCode::from(code as u8)
}
