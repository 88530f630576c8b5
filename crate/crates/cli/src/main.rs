//! `ballann` — kinetic Monte Carlo solver and verification suite for the
//! homogeneous Boltzmann equation with probabilistic ballistic annihilation.

mod config;
mod drivers;
mod output;

use clap::Parser;
use config::Overrides;
use std::path::PathBuf;

#[derive(Parser, Debug)]
#[command(
    name = "ballann",
    version,
    about = "Kinetic Monte Carlo solver for probabilistic ballistic annihilation",
    after_help = "Modes: constants | simulate | profile | verify | maxwell-oracle.\n\
                  Settings come from --config JSON merged with flag overrides (flags win)."
)]
struct Cli {
    /// JSON configuration file.
    #[arg(long)]
    config: Option<PathBuf>,
    #[command(flatten)]
    overrides: Overrides,
}

fn main() {
    let cli = Cli::parse();
    let cfg = match config::parse_config(cli.config.as_deref(), &cli.overrides) {
        Ok(cfg) => cfg,
        Err(err) => {
            eprintln!("config error: {err:#}");
            std::process::exit(drivers::EXIT_CONFIG);
        }
    };
    if let Err(err) = drivers::run(&cfg) {
        let code = classify(&err);
        eprintln!("error: {err:#}");
        let record = serde_json::json!({
            "code": code,
            "error": format!("{err:#}"),
        });
        let _ = output::write_json(&cfg.out.join("failure.json"), &record);
        std::process::exit(code);
    }
}

fn classify(err: &anyhow::Error) -> i32 {
    if let Some(f) = err.downcast_ref::<drivers::DriverFailure>() {
        return f.code;
    }
    if let Some(core) = err.downcast_ref::<ballann_core::Error>() {
        return match core {
            ballann_core::Error::Extinct => drivers::EXIT_EXTINCT,
            ballann_core::Error::InvalidParam { .. } => drivers::EXIT_CONFIG,
            _ => 1,
        };
    }
    if err.downcast_ref::<std::io::Error>().is_some() {
        return drivers::EXIT_IO;
    }
    1
}
