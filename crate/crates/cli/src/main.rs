use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use odmr_rig::commands::{cmd_demo_drift, cmd_protocols, cmd_run};
use odmr_rig::config::RunConfig;
use odmr_rig::{exit_codes, CliError};

/// Pulsed-ODMR rig simulator: compile pulse protocols, play them through a
/// virtual NV ensemble and oscilloscope, and fit the contrast curves.
#[derive(Parser)]
#[command(name = "odmr-rig", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the sweep described by a config file and fit the result.
    Run {
        /// Path to the TOML run configuration.
        config: PathBuf,
        /// Override the root seed from the config.
        #[arg(long)]
        seed: Option<u64>,
        /// Override the output directory (also: ODMR_RIG_OUTPUT_DIR).
        #[arg(long)]
        output_dir: Option<PathBuf>,
    },
    /// Run the same Rabi sweep under all three referencing modes with the
    /// configured drift, and summarize the damage per strategy.
    DemoDrift {
        config: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        output_dir: Option<PathBuf>,
    },
    /// List available protocols and print their config templates.
    Protocols,
}

fn load_config(path: &PathBuf, seed: Option<u64>) -> Result<RunConfig, CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
    let mut config = RunConfig::from_toml(&text)?;
    if let Some(s) = seed {
        config.protocol.seed = s;
    }
    Ok(config)
}

fn resolve_out_dir(config: &RunConfig, flag: Option<PathBuf>) -> PathBuf {
    flag.or_else(|| std::env::var_os("ODMR_RIG_OUTPUT_DIR").map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from(&config.output.directory))
}

fn run() -> Result<i32, CliError> {
    let cli = Cli::parse();
    match cli.command {
        Command::Run {
            config,
            seed,
            output_dir,
        } => {
            let config = load_config(&config, seed)?;
            let out_dir = resolve_out_dir(&config, output_dir);
            let artifacts = cmd_run(&config, &out_dir)?;
            for f in &artifacts.files {
                println!("wrote {}", f.display());
            }
            if artifacts.fit_nonconverged {
                eprintln!("fit did not converge");
                return Ok(exit_codes::FIT_NONCONVERGENCE);
            }
            Ok(exit_codes::SUCCESS)
        }
        Command::DemoDrift {
            config,
            seed,
            output_dir,
        } => {
            let config = load_config(&config, seed)?;
            let out_dir = resolve_out_dir(&config, output_dir);
            let artifacts = cmd_demo_drift(&config, &out_dir)?;
            for f in &artifacts.files {
                println!("wrote {}", f.display());
            }
            Ok(exit_codes::SUCCESS)
        }
        Command::Protocols => {
            print!("{}", cmd_protocols());
            Ok(exit_codes::SUCCESS)
        }
    }
}

fn main() -> ExitCode {
    match run() {
        Ok(code) => ExitCode::from(code as u8),
        Err(e) => {
            eprintln!("{e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
