//! Cosine-prototype classifier: features are L2-normalized and divided by
//! the temperature before the bias-free prototype layer.
//!
//!     cargo run --example predict

use gabc::model::{normalize_feature, softmax};
use gabc::{ModelDims, ModelParams};

fn main() -> gabc::Result<()> {
    let dims = ModelDims {
        input_dim: 2,
        hidden_dim: 16,
        feature_dim: 8,
        classes: 3,
    };
    for temperature in [1.0, 0.2, 0.05] {
        let model = ModelParams::init(dims, temperature, 0.5, 7)?;
        let x = [0.8, -1.3];
        let f = model.extract_feature(&x)?;
        let p = model.predict(&x)?;
        println!(
            "T = {temperature:<4}  |f| = {:6.2}  p = {:?}  label {}  confidence {:.4}",
            f.norm(),
            p.probs().iter().map(|v| format!("{v:.4}")).collect::<Vec<_>>(),
            p.predicted_label(),
            p.confidence()
        );
    }

    let f = normalize_feature(&[3.0, 4.0], 0.05)?;
    println!("normalize([3, 4], T = 0.05) = {:?}", f.values());
    println!("softmax([1, 0]) = {:?}", softmax(&[1.0, 0.0])?.probs());
    Ok(())
}
