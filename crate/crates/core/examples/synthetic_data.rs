//! Rotated Gaussian domains: generate pools, write them as CSV and read
//! them back.
//!
//!     cargo run --example synthetic_data -- /tmp/pools.csv

use std::path::PathBuf;

use gabc::data::{dump_csv, eval_sidecar_path, generate, load_csv, DomainSpec};

fn class_means(samples: &[Vec<f64>], labels: &[usize], k: usize) -> Vec<[f64; 2]> {
    let mut sums = vec![[0.0; 3]; k];
    for (x, &y) in samples.iter().zip(labels) {
        sums[y][0] += x[0];
        sums[y][1] += x[1];
        sums[y][2] += 1.0;
    }
    sums.iter().map(|s| [s[0] / s[2], s[1] / s[2]]).collect()
}

fn main() -> gabc::Result<()> {
    let path = std::env::args()
        .nth(1)
        .map(PathBuf::from)
        .unwrap_or_else(|| std::env::temp_dir().join("gabc-pools.csv"));
    let spec = DomainSpec::default();
    let pools = generate(&spec, 0)?;
    println!(
        "source {}  labeled target {}  unlabeled {}  test {}",
        pools.source.len(),
        pools.labeled_target.len(),
        pools.unlabeled.len(),
        pools.test.len()
    );
    let src = class_means(&pools.source.samples, &pools.source.labels, pools.classes);
    let tgt = class_means(&pools.test.samples, &pools.test.labels, pools.classes);
    for c in 0..pools.classes {
        let angle = |m: [f64; 2]| m[1].atan2(m[0]).to_degrees();
        println!(
            "class {c}: source mean angle {:7.1}  target {:7.1}",
            angle(src[c]),
            angle(tgt[c])
        );
    }
    dump_csv(&pools, &path)?;
    let back = load_csv(&path)?;
    println!(
        "wrote {} (+ {}), reload identical: {}",
        path.display(),
        eval_sidecar_path(&path).display(),
        back == pools
    );
    Ok(())
}
