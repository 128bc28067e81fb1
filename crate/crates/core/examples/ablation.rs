//! Selected rows of the ablation grid on the default benchmark.
//!
//!     cargo run --release --example ablation -- 1,11-16

use gabc::ablation::parse_rows;
use gabc::config::ExperimentConfig;
use gabc::experiment::run_ablation;

fn main() -> gabc::Result<()> {
    let selection = std::env::args().nth(1).unwrap_or_else(|| "1,2,3,4,11".into());
    let rows = parse_rows(&selection)?;
    let config = ExperimentConfig::default();
    let table = run_ablation(&config, &rows, None)?;
    print!("{}", table.to_markdown());
    Ok(())
}
