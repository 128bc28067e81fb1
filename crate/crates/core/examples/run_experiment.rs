//! Config-driven run with all artifacts (logs, CSS dumps, checkpoints,
//! plots) under a timestamped directory.
//!
//!     cargo run --release --example run_experiment -- runs

use std::path::PathBuf;

use gabc::config::ExperimentConfig;
use gabc::experiment::cmd_run;

const CONFIG: &str = "\
epochs = 40
seeds = [0, 1, 2]
rotation_deg = 35.0
";

fn main() -> gabc::Result<()> {
    let out = std::env::args().nth(1).map(PathBuf::from).unwrap_or_else(|| std::env::temp_dir().join("gabc-runs"));
    let config = ExperimentConfig::from_toml_str(CONFIG)?;
    let report = cmd_run(&config, Some(CONFIG), Some(&out))?;
    for s in &report.seeds {
        println!("seed {}: {:.2}%", s.seed, 100.0 * s.final_accuracy);
    }
    println!("mean ± std: {}", report.accuracy);
    println!("artifacts in {}", report.dir.display());
    Ok(())
}
