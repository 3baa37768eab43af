use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use tyc::cli::{run_scenario, write_error, CliError, Command};
use tyc::config::load_config;
use tyc::Execution;

#[derive(Parser)]
#[command(name = "tyc", version, about = "Modified Trojan Y chromosome reaction-diffusion toolkit")]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Integrate one scenario and write time series and final fields.
    Simulate(Common),
    /// Report the constant steady states and their stability.
    SteadyStates(Common),
    /// Sweep beta and locate the extinction/survival transition.
    Bifurcate(Common),
    /// Run the modified and original models side by side.
    CompareModels(Common),
    /// Measure sensitivity of trajectories to initial perturbations.
    ProbeDependence(Common),
    /// Parse and validate a configuration without running it.
    Validate(Common),
}

#[derive(Args)]
struct Common {
    /// Scenario configuration (TOML).
    #[arg(long)]
    config: PathBuf,
    /// Output directory.
    #[arg(long, env = "TYC_OUT_DIR", default_value = "out")]
    out: PathBuf,
    /// Overrides the configuration's seed.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    quiet: bool,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let (command, args) = match cli.command {
        Cmd::Simulate(a) => (Command::Simulate, a),
        Cmd::SteadyStates(a) => (Command::SteadyStates, a),
        Cmd::Bifurcate(a) => (Command::Bifurcate, a),
        Cmd::CompareModels(a) => (Command::CompareModels, a),
        Cmd::ProbeDependence(a) => (Command::ProbeDependence, a),
        Cmd::Validate(a) => (Command::Validate, a),
    };

    let result = load_config(&args.config).map_err(CliError::from).and_then(|mut cfg| {
        if let Some(seed) = args.seed {
            cfg.seed = seed;
        }
        let base = args.config.parent().map(PathBuf::from).unwrap_or_default();
        run_scenario(command, &cfg, &base, &args.out, Execution::default())
    });

    match result {
        Ok(outcome) => {
            if !args.quiet {
                println!("{}", outcome.message);
                for f in &outcome.files {
                    println!("  wrote {}", f.display());
                }
            }
            ExitCode::SUCCESS
        }
        Err(err) => {
            if command != Command::Validate {
                write_error(&args.out, &err);
            }
            eprintln!("{}", err.to_json());
            ExitCode::from(err.exit_code() as u8)
        }
    }
}
