use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;

use subspace_lab::harness::{self, ExperimentConfig, ExperimentKind, RawConfig};
use subspace_lab::Error;

/// Runs subspace-learning experiments and writes their outputs.
#[derive(Debug, Parser)]
#[command(name = "subspace-lab", version)]
struct Cli {
    /// ode, gan, oja, grouse, compare, offdiag, real-data or uplift
    experiment: ExperimentKind,
    /// Flat `key = value` configuration file
    #[arg(long)]
    config: PathBuf,
    /// Output directory
    #[arg(long)]
    out: PathBuf,
    /// Per-key overrides, `--key value` or `--key=value`
    #[arg(trailing_var_arg = true, allow_hyphen_values = true)]
    overrides: Vec<String>,
}

fn is_divergence(e: &Error) -> bool {
    match e {
        Error::Diverged { .. } | Error::TrainingDiverged { .. } => true,
        Error::Seed { source, .. } => is_divergence(source),
        _ => false,
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result = RawConfig::load(&cli.config)
        .and_then(|mut raw| {
            raw.apply_overrides(&cli.overrides)?;
            ExperimentConfig::from_raw(cli.experiment, &raw)
        })
        .and_then(|cfg| harness::run(&cfg, &cli.out));
    match result {
        Ok(manifest) => {
            for (k, v) in manifest.entries.iter().filter(|(k, _)| k.starts_with("result.")) {
                println!("{} = {v}", &k["result.".len()..]);
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if is_divergence(&e) { 2 } else { 1 })
        }
    }
}
