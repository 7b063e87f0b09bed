//! Runs a TOML experiment config and prints the resulting table as CSV.
//!
//! `cargo run --release --example run_experiment -- configs/fig4.toml`

use fdrelay::experiment::{run_experiment, ExperimentConfig};
use std::path::PathBuf;

fn main() -> fdrelay::Result<()> {
    let path = std::env::args().nth(1).map(PathBuf::from).unwrap_or_else(|| "configs/fig4.toml".into());
    let mut cfg = ExperimentConfig::load(&path)?;
    cfg.trials = cfg.trials.min(200);
    let table = run_experiment(&cfg)?;
    table.write_csv(std::io::stdout())
}
