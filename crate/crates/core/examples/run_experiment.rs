//! Runs an experiment preset or TOML config and prints the directional summary.
//!
//! `cargo run --release --example run_experiment -- [smoke|default|CONFIG.toml] OUT_DIR`

use std::time::Instant;

use anchorscore_core::experiment::{run_experiment, ExperimentConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let which = args.first().map(String::as_str).unwrap_or("smoke");
    let out = args.get(1).map(String::as_str).unwrap_or("experiment-out");
    let cfg = if which.ends_with(".toml") {
        ExperimentConfig::from_toml(&std::fs::read_to_string(which)?)?
    } else {
        ExperimentConfig::preset(which)?
    };
    let start = Instant::now();
    let result = run_experiment(&cfg, out.as_ref(), &|m| eprintln!("[{:7.1}s] {m}", start.elapsed().as_secs_f64()))?;
    println!("{}", serde_json::to_string_pretty(&result.summary)?);
    eprintln!("finished in {:.1}s", start.elapsed().as_secs_f64());
    Ok(())
}
