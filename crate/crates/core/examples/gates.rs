//! Graph gates between unlabeled and labeled samples: label similarity,
//! confidence-based node removal and prediction-dissimilarity edge pruning.
//!
//!     cargo run --example gates

use gabc::gates::{batch_gates, GateThresholds};
use gabc::PredictionDistribution;

fn main() -> gabc::Result<()> {
    let d = |v: &[f64]| PredictionDistribution::new(v.to_vec());
    let unlabeled = vec![d(&[0.97, 0.02, 0.01])?, d(&[0.60, 0.30, 0.10])?, d(&[0.01, 0.98, 0.01])?];
    let labeled = vec![d(&[0.90, 0.05, 0.05])?, d(&[0.10, 0.10, 0.80])?, d(&[0.05, 0.90, 0.05])?];
    let labels = [0, 2, 0];
    let t = GateThresholds::default();
    let gates = batch_gates(&unlabeled, &labeled, &labels, t)?;

    println!("tau = {}, kappa = {}", t.tau, t.kappa);
    println!("i j  y_j  dot    similar node edge open");
    for i in 0..gates.rows() {
        for j in 0..gates.cols() {
            let g = gates.get(i, j);
            println!(
                "{i} {j}  {}    {:.3}  {:<7} {:<4} {:<4} {}",
                labels[j],
                unlabeled[i].dot(&labeled[j]),
                g.similar,
                g.node_kept,
                g.edge_kept,
                g.combined
            );
        }
    }
    println!("open fraction {:.3}", gates.open_fraction());
    Ok(())
}
