//! Interrupt a run, save its state, resume it, and compare with an
//! uninterrupted run.
//!
//!     cargo run --release --example checkpoint_resume

use gabc::checkpoint::{ModelCheckpoint, TrainingCheckpoint};
use gabc::data::{generate, DomainSpec};
use gabc::trainer::run;
use gabc::{AblationFlags, TrainConfig, Trainer};

fn main() -> gabc::Result<()> {
    let pools = generate(&DomainSpec::default(), 2)?;
    let config = TrainConfig {
        seed: 2,
        epochs: 20,
        ..TrainConfig::default()
    };
    let flags = AblationFlags::full();
    let dir = std::env::temp_dir().join("gabc-checkpoint-example");
    std::fs::create_dir_all(&dir)?;
    let state_path = dir.join("training_state.json");

    let mut first = Trainer::new(config.clone(), flags, &pools)?;
    for _ in 0..8 {
        first.run_epoch()?;
    }
    first.checkpoint().save(&state_path)?;
    println!("stopped after epoch {}, state in {}", first.epoch(), state_path.display());
    drop(first);

    let state = TrainingCheckpoint::load(&state_path)?;
    let mut resumed = Trainer::resume(config.clone(), flags, &pools, state)?;
    resumed.run()?;
    let uninterrupted = run(&config, &flags, &pools)?;
    println!("resumed run matches uninterrupted run: {}", resumed.log() == uninterrupted.log.as_slice());

    let model_path = dir.join("model.json");
    ModelCheckpoint::from_params(resumed.params(), config.seed).save(&model_path)?;
    let reloaded = ModelCheckpoint::load(&model_path)?.to_params()?;
    println!("model reloads bit-identically: {}", &reloaded == resumed.params());
    Ok(())
}
