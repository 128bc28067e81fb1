//! Pseudo-label quantity and accuracy as training progresses.
//!
//!     cargo run --release --example pseudo_labels

use gabc::data::{generate, DomainSpec};
use gabc::pseudo::select_pseudo_labels;
use gabc::{AblationFlags, TrainConfig, Trainer};

fn main() -> gabc::Result<()> {
    let pools = generate(&DomainSpec::default(), 1)?;
    let truth = pools.unlabeled.eval_labels.clone().expect("synthetic pools carry evaluation labels");
    let config = TrainConfig {
        seed: 1,
        epochs: 30,
        ..TrainConfig::default()
    };
    let mut trainer = Trainer::new(config.clone(), AblationFlags::full(), &pools)?;
    println!("epoch  |D_pu|  accuracy");
    while trainer.epoch() < config.epochs {
        let r = trainer.run_epoch()?;
        if r.epoch % 5 == 0 || r.epoch <= 3 {
            println!("{:5}  {:6}  {}", r.epoch, r.pseudo_count, r.pseudo_accuracy.map_or("-".into(), |a| format!("{a:.3}")));
        }
    }
    println!("\nthreshold sweep on the trained model:");
    for tau_prime in [0.5, 0.9, 0.975, 0.995] {
        let set = select_pseudo_labels(trainer.params(), &pools.unlabeled, tau_prime)?;
        println!(
            "tau' = {tau_prime:<5}  selected {:3}  accuracy {}",
            set.len(),
            set.accuracy(&truth).map_or("-".into(), |a| format!("{a:.3}"))
        );
    }
    Ok(())
}
