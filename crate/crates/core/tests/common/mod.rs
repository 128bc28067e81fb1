#![allow(dead_code)]

use gabc::gates::GateThresholds;
use gabc::model::{ModelDims, ModelParams, PredictionDistribution};
use gabc::trainer::{
    freeze_targets, loss_breakdown, loss_gradient, AblationFlags, AugmentedBatch, BatchBundle, ComponentWeights,
    LabeledBatch, TrainConfig,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_vec(rng: &mut ChaCha8Rng, n: usize, scale: f64) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(-scale..scale)).collect()
}

pub fn random_distribution(rng: &mut ChaCha8Rng, k: usize, sharpness: f64) -> PredictionDistribution {
    let w: Vec<f64> = (0..k).map(|_| (sharpness * rng.random_range(-1.0..1.0f64)).exp()).collect();
    let s: f64 = w.iter().sum();
    PredictionDistribution::new(w.iter().map(|v| v / s).collect()).unwrap()
}

/// Small random problem for gradient checks.
pub struct Instance {
    pub params: ModelParams,
    pub bundle: BatchBundle,
    pub config: TrainConfig,
    pub flags: AblationFlags,
}

fn labeled(rng: &mut ChaCha8Rng, n: usize, d: usize, k: usize) -> LabeledBatch {
    LabeledBatch {
        samples: (0..n).map(|_| random_vec(rng, d, 1.5)).collect(),
        labels: (0..n).map(|_| rng.random_range(0..k)).collect(),
    }
}

fn augmented(rng: &mut ChaCha8Rng, n: usize, d: usize, k: usize) -> AugmentedBatch {
    let samples: Vec<Vec<f64>> = (0..n).map(|_| random_vec(rng, d, 1.5)).collect();
    let augmented = samples
        .iter()
        .map(|x| x.iter().map(|v| v + rng.random_range(-0.3..0.3)).collect())
        .collect();
    AugmentedBatch {
        samples,
        augmented,
        labels: (0..n).map(|_| rng.random_range(0..k)).collect(),
    }
}

/// d <= 8, K <= 5, batches <= 6. The feature temperature is kept moderate so
/// the softmax is not saturated and the log clamp stays inactive; gate
/// thresholds are low so clustering terms are active.
pub fn random_instance(seed: u64) -> Instance {
    let mut r = rng(seed);
    let d = r.random_range(2..=8);
    let k = r.random_range(2..=5);
    let dims = ModelDims {
        input_dim: d,
        hidden_dim: r.random_range(2..=6),
        feature_dim: r.random_range(2..=6),
        classes: k,
    };
    let temperature = r.random_range(0.3..1.0);
    let params = ModelParams::init(dims, temperature, 0.8, seed).unwrap();
    let mut batch = || r.random_range(1..=6);
    let (ns, nl, np, nu) = (batch(), batch(), batch(), batch());
    let bundle = BatchBundle {
        source: labeled(&mut r, ns, d, k),
        labeled: labeled(&mut r, nl, d, k),
        pseudo: augmented(&mut r, np, d, k),
        unlabeled: augmented(&mut r, nu, d, k),
    };
    let tau = r.random_range(0.0..1.0 / k as f64);
    let config = TrainConfig {
        temperature,
        tau,
        tau_prime: 0.99,
        kappa: r.random_range(0.0..0.3),
        t_prime: r.random_range(0.5..1.0),
        ..TrainConfig::default()
    };
    let flags = AblationFlags {
        augment_abc: seed % 3 != 0,
        ..AblationFlags::full()
    };
    Instance {
        params,
        bundle,
        config,
        flags,
    }
}

pub fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// `|a - b| / max(|a|, |b|)`, with a floor on the denominator.
pub fn relative_error(a: &[f64], b: &[f64]) -> f64 {
    let diff: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    norm(&diff) / norm(a).max(norm(b)).max(1e-8)
}

pub const COMPONENTS: [&str; 6] = ["ce", "lab", "con", "wdbc", "adbc", "overall"];

pub fn coefficients(name: &str, config: &TrainConfig) -> ComponentWeights {
    let z = ComponentWeights::zero();
    match name {
        "ce" => ComponentWeights { ce: 1.0, ..z },
        "lab" => ComponentWeights { lab: 1.0, ..z },
        "con" => ComponentWeights { con: 1.0, ..z },
        "wdbc" => ComponentWeights { wdbc: 1.0, ..z },
        "adbc" => ComponentWeights { adbc: 1.0, ..z },
        _ => ComponentWeights::overall(config.weights()),
    }
}

/// Worst relative error per component between the analytic gradient and
/// central differences of the value path, with frozen gates and targets.
/// Also returns the analytic gradient norms so callers can see the check
/// is not vacuous.
pub fn gradient_errors(inst: &Instance, step: f64) -> Vec<(&'static str, f64, f64)> {
    let targets = freeze_targets(&inst.params, &inst.bundle, &inst.config, &inst.flags).unwrap();
    let n = inst.params.num_params();
    let mut fd = vec![vec![0.0; n]; COMPONENTS.len()];
    let mut p = inst.params.clone();
    for i in 0..n {
        let orig = p.values()[i];
        p.values_mut()[i] = orig + step;
        let plus = loss_breakdown(&p, &inst.bundle, &targets, &inst.config, &inst.flags).unwrap();
        p.values_mut()[i] = orig - step;
        let minus = loss_breakdown(&p, &inst.bundle, &targets, &inst.config, &inst.flags).unwrap();
        p.values_mut()[i] = orig;
        for (c, name) in COMPONENTS.iter().enumerate() {
            let w = coefficients(name, &inst.config);
            fd[c][i] = (w.combine(&plus) - w.combine(&minus)) / (2.0 * step);
        }
    }
    COMPONENTS
        .iter()
        .enumerate()
        .map(|(c, name)| {
            let w = coefficients(name, &inst.config);
            let (_, g) = loss_gradient(&inst.params, &inst.bundle, &targets, &inst.config, &inst.flags, w).unwrap();
            (*name, relative_error(&g, &fd[c]), norm(&g))
        })
        .collect()
}

/// Gate reference written directly from the definitions, sharing no code
/// with the library.
pub fn reference_gates(p_i: &[f64], p_j: &[f64], y_j: usize, t: GateThresholds) -> (bool, bool, bool, bool) {
    let mut best = 0;
    for c in 1..p_i.len() {
        if p_i[c] > p_i[best] {
            best = c;
        }
    }
    let similar = best == y_j;
    let max = p_i.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let node = max > t.tau;
    let dot: f64 = p_i.iter().zip(p_j).map(|(a, b)| a * b).sum();
    let edge = !similar || dot > t.kappa;
    (similar, node, edge, node && edge)
}

/// Naive double loop for the gated clustering loss, gates recomputed from
/// clean predictions inside the loop.
pub fn naive_clustering_loss(
    clean: &[PredictionDistribution],
    aug: &[PredictionDistribution],
    pool: &[PredictionDistribution],
    labels: &[usize],
    t: GateThresholds,
) -> f64 {
    if clean.is_empty() || pool.is_empty() {
        return 0.0;
    }
    let eps = 1e-7;
    let mut outer = 0.0;
    for i in 0..clean.len() {
        let mut inner = 0.0;
        for j in 0..pool.len() {
            let (similar, _, _, open) = reference_gates(clean[i].probs(), pool[j].probs(), labels[j], t);
            if !open {
                continue;
            }
            let d: f64 = aug[i].probs().iter().zip(pool[j].probs()).map(|(a, b)| a * b).sum();
            let d = d.clamp(eps, 1.0 - eps);
            inner += if similar { -d.ln() } else { -(1.0 - d).ln() };
        }
        outer += inner / pool.len() as f64;
    }
    outer / clean.len() as f64
}
