//! Class-wise similarity and gate ratios over training: the diagonal of the
//! similarity matrix should rise while the off-diagonal falls, and more
//! unlabeled samples should pass the confidence gate.
//!
//!     cargo run --release --example similarity_analysis

use gabc::data::{generate, DomainSpec};
use gabc::evaluation::CssMatrix;
use gabc::trainer::run;
use gabc::{AblationFlags, TrainConfig};

fn show(label: &str, css: &CssMatrix) {
    println!("{label} (diag {:.3}, off {:.3})", css.mean_diagonal(), css.mean_off_diagonal());
    for c in 0..css.classes() {
        let row: Vec<String> = (0..css.classes())
            .map(|d| css.get(c, d).map_or("  NA ".into(), |v| format!("{v:.3}")))
            .collect();
        println!("  {}", row.join(" "));
    }
}

fn main() -> gabc::Result<()> {
    let pools = generate(&DomainSpec::default(), 0)?;
    let out = run(&TrainConfig::default(), &AblationFlags::full(), &pools)?;
    println!("epoch  node_kept  pair_open  sim_close  dis_close  acc");
    for r in out.log.iter().filter(|r| r.epoch % 10 == 0 || r.epoch == 1) {
        let g = r.gates;
        println!(
            "{:5}  {:9.3}  {:9.3}  {:9.3}  {:9.3}  {:.3}",
            r.epoch, g.node_kept, g.combined_open, g.similar_close, g.dissimilar_close, r.target_accuracy
        );
    }
    show("epoch 1", out.log[1].css.as_ref().unwrap());
    show("final", out.log.last().unwrap().css.as_ref().unwrap());
    Ok(())
}
