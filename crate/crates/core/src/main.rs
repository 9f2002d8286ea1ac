use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use socheck::cli::commands::{cmd_adjoint, cmd_check, cmd_examples, cmd_ito_check, cmd_orders, cmd_simulate, cmd_taylor};
use socheck::cli::{Outcome, Overrides, RunConfig};

#[derive(Parser)]
#[command(name = "socheck", version, about = "Optimality checks for stochastic controls under needle variations")]
struct Cli {
    /// TOML run configuration.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[arg(long, global = true)]
    paths: Option<usize>,
    #[arg(long, global = true)]
    steps: Option<usize>,
    /// Output directory.
    #[arg(long = "out", global = true)]
    output: Option<PathBuf>,
    #[arg(long, global = true)]
    problem: Option<String>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate the base pair and estimate its cost.
    Simulate,
    /// Solve the adjoint equations up to order k.
    Adjoint {
        #[arg(short, long)]
        k: Option<usize>,
    },
    /// First-order, singularity and second-order tests.
    Check,
    /// Order fits of the variational processes.
    Orders,
    /// Taylor remainder ladders, optionally with duality identities.
    Taylor {
        #[arg(long)]
        duality: bool,
    },
    /// Convergence of the multilinear Itô formula.
    ItoCheck,
    /// List the registered problems.
    Examples,
}

fn run(cli: Cli) -> socheck::error::Result<Option<Outcome>> {
    if let Command::Examples = cli.command {
        for (id, d) in cmd_examples() {
            println!("{id:<18} {d}");
        }
        return Ok(None);
    }
    let mut config = match &cli.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    config.apply(&Overrides { seed: cli.seed, paths: cli.paths, steps: cli.steps, output: cli.output, problem: cli.problem });
    let outcome = match cli.command {
        Command::Simulate => cmd_simulate(&config)?,
        Command::Adjoint { k } => cmd_adjoint(&config, k.unwrap_or(config.adjoint.order))?,
        Command::Check => cmd_check(&config)?,
        Command::Orders => cmd_orders(&config)?,
        Command::Taylor { duality } => {
            config.variational.duality |= duality;
            cmd_taylor(&config)?
        }
        Command::ItoCheck => cmd_ito_check(&config)?,
        Command::Examples => unreachable!(),
    };
    Ok(Some(outcome))
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(None) => ExitCode::SUCCESS,
        Ok(Some(o)) => {
            println!("{}", serde_json::to_string_pretty(&o.summary).unwrap_or_default());
            if o.violated {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            }
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
