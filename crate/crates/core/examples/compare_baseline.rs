//! Trains the full model and the supervised-only baseline on the default
//! synthetic shift and prints target accuracy for a few seeds.
//!
//!     cargo run --release --example compare_baseline -- 3

use gabc::data::{generate, DomainSpec};
use gabc::trainer::run;
use gabc::{AblationFlags, TrainConfig};

fn main() -> gabc::Result<()> {
    let seeds: u64 = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(3);
    let spec = DomainSpec::default();
    println!("seed  baseline  full    gap");
    for seed in 0..seeds {
        let pools = generate(&spec, seed)?;
        let config = TrainConfig {
            seed,
            ..TrainConfig::default()
        };
        let base = run(&config, &AblationFlags::supervised_only(), &pools)?;
        let full = run(&config, &AblationFlags::full(), &pools)?;
        let a = base.log.last().unwrap().target_accuracy;
        let b = full.log.last().unwrap().target_accuracy;
        println!("{seed:>4}  {a:.4}    {b:.4}  {:+.4}", b - a);
    }
    Ok(())
}
