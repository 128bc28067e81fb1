//! Loss building blocks on hand-made predictions.
//!
//!     cargo run --example losses

use gabc::gates::GateThresholds;
use gabc::objectives::{
    abc_pair_loss, adbc_loss, consistency_kl_loss, label_consistency_loss, sharpen, wdbc_loss, LabeledPreds,
    LossBreakdown, LossWeights, PairTerms, SharpeningTemp,
};
use gabc::PredictionDistribution;

fn main() -> gabc::Result<()> {
    let d = |v: &[f64]| PredictionDistribution::new(v.to_vec());
    let (p, q) = (d(&[0.7, 0.3])?, d(&[0.6, 0.4])?);
    println!("pair loss, similar:    {:.6} (= -ln 0.54)", abc_pair_loss(&p, &q, true));
    println!("pair loss, dissimilar: {:.6} (= -ln 0.46)", abc_pair_loss(&p, &q, false));
    let s = sharpen(&q, SharpeningTemp::default());
    println!("sharpen([0.6, 0.4], 0.85) = [{:.4}, {:.4}]", s.probs()[0], s.probs()[1]);

    let clean = vec![d(&[0.97, 0.03])?, d(&[0.2, 0.8])?, d(&[0.55, 0.45])?];
    let aug = vec![d(&[0.9, 0.1])?, d(&[0.3, 0.7])?, d(&[0.5, 0.5])?];
    let target = vec![d(&[0.95, 0.05])?, d(&[0.04, 0.96])?];
    let pseudo = vec![d(&[0.01, 0.99])?];
    let source = vec![d(&[0.8, 0.2])?, d(&[0.1, 0.9])?, d(&[0.96, 0.04])?];
    let t = GateThresholds { tau: 0.5, kappa: 0.2 };
    let wdbc = wdbc_loss(
        &clean,
        &aug,
        LabeledPreds::new(&target, &[0, 1]),
        LabeledPreds::new(&pseudo, &[1]),
        t,
        PairTerms::default(),
    )?;
    let adbc = adbc_loss(&clean, &aug, LabeledPreds::new(&source, &[0, 1, 0]), t, PairTerms::default())?;
    let con = consistency_kl_loss(&clean, &aug, SharpeningTemp::default())?;
    let lab = label_consistency_loss(&[1], &[d(&[0.2, 0.8])?])?;
    let b = LossBreakdown::compose(0.3, lab, con, wdbc, adbc, LossWeights::default())?;
    println!("{b:#?}");
    Ok(())
}
