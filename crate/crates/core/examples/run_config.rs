//! Drive the experiment pipeline from a TOML config, as the CLI does:
//! simulate, then adapt, leaving checksummed artifacts in a directory.
//!
//!     cargo run --example run_config -- configs/table3.toml

use peakforge::commands;
use peakforge::config::ExperimentConfig;

fn main() -> peakforge::Result<()> {
    let path = std::env::args().nth(1).unwrap_or_else(|| concat!(env!("CARGO_MANIFEST_DIR"), "/../../configs/table3.toml").into());
    let cfg = ExperimentConfig::load(path.as_ref())?;
    let out = std::env::temp_dir().join("peakforge-run").join(&cfg.name);
    println!("config {} (hash {}…)", cfg.name, &cfg.hash()[..12]);

    println!("simulate: {}", commands::simulate(&cfg, &out.join("data"))?.summary);
    let run = commands::adapt(&cfg, None, &out.join("adapt"))?;
    println!("adapt: {}", run.outcome.summary);
    for a in &run.outcome.manifest.artifacts {
        println!("  {:<24} {}", a.path, &a.sha256[..16]);
    }
    Ok(())
}
