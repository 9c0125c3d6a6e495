use std::path::PathBuf;
use std::process::ExitCode;

use clap::{CommandFactory, FromArgMatches, Parser, Subcommand};

use pgfl::harness::output::{DEFAULT_OUT_DIR, OUT_DIR_ENV};
use pgfl::harness::{self, calibrate_fedavg_lr, recipe, run_experiment, run_recipe, ExperimentConfig, RECIPES};
use pgfl::privacy::total_privacy_loss;

/// Personalized graph federated learning simulator.
#[derive(Debug, Parser)]
#[command(name = "pgfl", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run the experiment described by a TOML config file.
    Run {
        config: PathBuf,
        /// Output directory; the bundle goes to <out>/<name>/.
        #[arg(long, env = OUT_DIR_ENV, default_value = DEFAULT_OUT_DIR)]
        out: PathBuf,
    },
    /// Run a named recipe (see the list below).
    Recipe {
        name: String,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        /// Output directory; bundles go to <out>/<recipe>/<variant>/.
        #[arg(long, env = OUT_DIR_ENV, default_value = DEFAULT_OUT_DIR)]
        out: PathBuf,
        /// Override the number of Monte Carlo replicates.
        #[arg(long)]
        replicates: Option<usize>,
        /// Override the number of iterations.
        #[arg(long)]
        iterations: Option<usize>,
    },
    /// Print the cumulative (epsilon, delta)-DP loss after n iterations.
    Accountant {
        #[arg(long)]
        phi1: f64,
        #[arg(long)]
        zeta: f64,
        #[arg(long)]
        n: u32,
        #[arg(long)]
        delta: f64,
    },
    /// Check a config file without running it.
    Validate { config: PathBuf },
    /// Choose the FedAvg learning rate whose early curve matches PGFL's.
    CalibrateLr {
        config: PathBuf,
        /// Comma-separated candidate learning rates.
        #[arg(long, value_delimiter = ',', default_values_t = [0.005, 0.01, 0.02, 0.05, 0.1, 0.2])]
        rates: Vec<f64>,
        /// Iteration at which the curves are compared.
        #[arg(long, default_value_t = 20)]
        horizon: usize,
    },
}

fn recipe_list() -> String {
    let mut s = String::from("Recipes:\n");
    for (name, description) in RECIPES {
        s.push_str(&format!("  {name:<27} {description}\n"));
    }
    s
}

fn execute(command: Command) -> pgfl::Result<()> {
    match command {
        Command::Run { config, out } => {
            let config = ExperimentConfig::load(&config)?;
            let result = run_experiment(&config)?;
            let dir = out.join(&config.name);
            harness::write_bundle(&result, &dir)?;
            print!("{}", harness::output::summary(&result));
            println!("results written to {}", dir.display());
        }
        Command::Recipe {
            name,
            seed,
            out,
            replicates,
            iterations,
        } => {
            let mut r = recipe(&name, seed)?;
            if let Some(n) = replicates {
                r = r.with_replicates(n);
            }
            if let Some(n) = iterations {
                r = r.with_iterations(n);
            }
            let outcome = run_recipe(&r, Some(&out))?;
            for result in &outcome.results {
                println!("--- {}", result.config.name);
                print!("{}", harness::output::summary(result));
            }
            if let (Some(points), Some(sweep)) = (&outcome.sweep, &r.sweep) {
                println!("--- sweep over {} at iteration {}", sweep.parameter, sweep.at_iteration);
                for (v, p) in points {
                    println!("{} = {v}: {} (std {})", sweep.parameter, p.mean, p.std);
                }
            }
            println!("results written to {}", out.join(r.name).display());
        }
        Command::Accountant { phi1, zeta, n, delta } => {
            println!("{}", total_privacy_loss(phi1, zeta, n, delta)?);
        }
        Command::Validate { config } => {
            let config = ExperimentConfig::load(&config)?;
            println!("{}: ok", config.name);
        }
        Command::CalibrateLr { config, rates, horizon } => {
            let config = ExperimentConfig::load(&config)?;
            let cal = calibrate_fedavg_lr(&config, &rates, horizon)?;
            println!("pgfl metric at iteration {horizon}: {}", cal.reference);
            for (lr, v) in &cal.candidates {
                println!("fedavg lr {lr}: {v}");
            }
            println!("best learning rate: {}", cal.best);
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let matches = Cli::command().after_help(recipe_list()).get_matches();
    let cli = match Cli::from_arg_matches(&matches) {
        Ok(cli) => cli,
        Err(e) => e.exit(),
    };
    match execute(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            let mut source = std::error::Error::source(&e);
            while let Some(cause) = source {
                eprintln!("  caused by: {cause}");
                source = cause.source();
            }
            ExitCode::FAILURE
        }
    }
}
