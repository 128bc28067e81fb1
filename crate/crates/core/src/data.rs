//! Synthetic domain-shift benchmark and sample pools.
//!
//! Source classes are isotropic Gaussian blobs placed evenly on a circle in
//! the first two coordinates. The target domain is the same mixture,
//! scaled, rotated by a configurable angle and translated, with its own
//! spread. The target pool is split into a few labeled shots per class, a
//! held-out test set and the unlabeled remainder.

use std::fs::File;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Parameters of the synthetic benchmark.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DomainSpec {
    pub classes: usize,
    pub dim: usize,
    /// Distance of every class mean from the origin.
    pub radius: f64,
    /// Per-coordinate standard deviation of source classes.
    pub source_std: f64,
    /// Per-coordinate standard deviation of target classes.
    pub target_std: f64,
    /// Rotation of the target mixture in the first coordinate plane.
    pub rotation_deg: f64,
    pub translation: [f64; 2],
    pub scale: f64,
    pub n_source: usize,
    /// Size of the whole target pool (labeled + unlabeled + test).
    pub n_target: usize,
    pub shots: usize,
    pub n_test: usize,
}

impl Default for DomainSpec {
    fn default() -> Self {
        Self {
            classes: 5,
            dim: 2,
            radius: 3.0,
            source_std: 0.45,
            target_std: 0.7,
            rotation_deg: 35.0,
            translation: [0.0, 0.0],
            scale: 1.0,
            n_source: 500,
            n_target: 500,
            shots: 3,
            n_test: 300,
        }
    }
}

impl DomainSpec {
    pub fn validate(&self) -> Result<()> {
        if self.classes < 2 {
            return Err(Error::config("classes", "need at least 2 classes"));
        }
        if self.dim < 2 {
            return Err(Error::config("dim", "need at least 2 dimensions"));
        }
        for (key, v) in [
            ("radius", self.radius),
            ("source_std", self.source_std),
            ("target_std", self.target_std),
            ("scale", self.scale),
        ] {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::config(key, format!("must be positive, got {v}")));
            }
        }
        if !self.rotation_deg.is_finite() || self.translation.iter().any(|t| !t.is_finite()) {
            return Err(Error::config("rotation_deg", "shift parameters must be finite"));
        }
        if self.shots == 0 {
            return Err(Error::config("shots", "need at least one labeled shot per class"));
        }
        if self.n_source < self.classes {
            return Err(Error::config("n_source", "fewer source samples than classes"));
        }
        let per_class_min = self.n_target / self.classes;
        if per_class_min < self.shots {
            return Err(Error::config(
                "shots",
                format!(
                    "{} shots exceed the {} target samples available per class",
                    self.shots, per_class_min
                ),
            ));
        }
        let labeled = self.shots * self.classes;
        if labeled + self.n_test >= self.n_target {
            return Err(Error::config(
                "n_test",
                format!(
                    "target pool of {} cannot hold {} labeled, {} test and any unlabeled samples",
                    self.n_target, labeled, self.n_test
                ),
            ));
        }
        Ok(())
    }

    fn class_mean(&self, k: usize) -> [f64; 2] {
        let angle = 2.0 * std::f64::consts::PI * k as f64 / self.classes as f64;
        [self.radius * angle.cos(), self.radius * angle.sin()]
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct LabeledSet {
    pub samples: Vec<Vec<f64>>,
    pub labels: Vec<usize>,
}

impl LabeledSet {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    fn push(&mut self, x: Vec<f64>, y: usize) {
        self.samples.push(x);
        self.labels.push(y);
    }
}

/// Unlabeled target samples. `eval_labels` holds the ground truth for
/// evaluation (class-wise similarity rows, pseudo-label accuracy) and is
/// never read by the training objective.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct UnlabeledSet {
    pub samples: Vec<Vec<f64>>,
    pub eval_labels: Option<Vec<usize>>,
}

impl UnlabeledSet {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }
}

/// All pools of one problem instance.
#[derive(Debug, Clone, PartialEq)]
pub struct Pools {
    pub classes: usize,
    pub dim: usize,
    pub source: LabeledSet,
    pub labeled_target: LabeledSet,
    pub unlabeled: UnlabeledSet,
    pub test: LabeledSet,
}

impl Pools {
    pub fn validate(&self) -> Result<()> {
        if self.source.is_empty() || self.labeled_target.is_empty() || self.unlabeled.is_empty() {
            return Err(Error::InvalidInput(
                "source, labeled-target and unlabeled pools must be nonempty".into(),
            ));
        }
        if self.test.is_empty() {
            return Err(Error::InvalidInput("test set must be nonempty".into()));
        }
        let sets = [&self.source, &self.labeled_target, &self.test];
        for set in sets {
            if set.samples.len() != set.labels.len() {
                return Err(Error::InvalidInput("sample/label count mismatch".into()));
            }
            if let Some(&y) = set.labels.iter().find(|&&y| y >= self.classes) {
                return Err(Error::InvalidInput(format!(
                    "label {y} out of range for {} classes",
                    self.classes
                )));
            }
        }
        let all = sets
            .iter()
            .flat_map(|s| s.samples.iter())
            .chain(&self.unlabeled.samples);
        for x in all {
            if x.len() != self.dim {
                return Err(Error::InvalidInput(format!(
                    "sample of dimension {} in a {}-dimensional problem",
                    x.len(),
                    self.dim
                )));
            }
            if x.iter().any(|v| !v.is_finite()) {
                return Err(Error::InvalidInput("non-finite sample".into()));
            }
        }
        Ok(())
    }
}

fn draw_sample(
    spec: &DomainSpec,
    class: usize,
    std: f64,
    target: bool,
    rng: &mut ChaCha8Rng,
) -> Vec<f64> {
    let noise = Normal::new(0.0, std).expect("positive std");
    let mean = spec.class_mean(class);
    let mut x: Vec<f64> = (0..spec.dim).map(|_| noise.sample(rng)).collect();
    x[0] += mean[0];
    x[1] += mean[1];
    if target {
        let (s, c) = spec.rotation_deg.to_radians().sin_cos();
        let (a, b) = (x[0], x[1]);
        x[0] = spec.scale * (c * a - s * b) + spec.translation[0];
        x[1] = spec.scale * (s * a + c * b) + spec.translation[1];
        for v in &mut x[2..] {
            *v *= spec.scale;
        }
    }
    x
}

/// Draws all pools. Deterministic in `(spec, seed)`.
pub fn generate(spec: &DomainSpec, seed: u64) -> Result<Pools> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let k = spec.classes;

    let mut source = LabeledSet::default();
    let mut source_labels: Vec<usize> = (0..spec.n_source).map(|i| i % k).collect();
    source_labels.shuffle(&mut rng);
    for y in source_labels {
        let x = draw_sample(spec, y, spec.source_std, false, &mut rng);
        source.push(x, y);
    }

    // balanced target pool, grouped per class so shots can be taken exactly
    let mut per_class: Vec<Vec<Vec<f64>>> = vec![Vec::new(); k];
    for i in 0..spec.n_target {
        let y = i % k;
        per_class[y].push(draw_sample(spec, y, spec.target_std, true, &mut rng));
    }

    let mut labeled_target = LabeledSet::default();
    let mut rest: Vec<(Vec<f64>, usize)> = Vec::new();
    for (y, mut xs) in per_class.into_iter().enumerate() {
        xs.shuffle(&mut rng);
        let tail = xs.split_off(spec.shots);
        for x in xs {
            labeled_target.push(x, y);
        }
        rest.extend(tail.into_iter().map(|x| (x, y)));
    }
    rest.shuffle(&mut rng);
    let unlabeled_part = rest.split_off(spec.n_test);

    let mut test = LabeledSet::default();
    for (x, y) in rest {
        test.push(x, y);
    }
    let (samples, labels): (Vec<_>, Vec<_>) = unlabeled_part.into_iter().unzip();
    let pools = Pools {
        classes: k,
        dim: spec.dim,
        source,
        labeled_target,
        unlabeled: UnlabeledSet {
            samples,
            eval_labels: Some(labels),
        },
        test,
    };
    pools.validate()?;
    Ok(pools)
}

/// Perturbation used for the augmented view of unlabeled samples: additive
/// Gaussian noise followed by random coordinate erasure.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AugmentParams {
    pub noise_scale: f64,
    pub erase_prob: f64,
}

impl Default for AugmentParams {
    fn default() -> Self {
        Self {
            noise_scale: 0.3,
            erase_prob: 0.0,
        }
    }
}

impl AugmentParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.noise_scale.is_finite() && self.noise_scale >= 0.0) {
            return Err(Error::config("noise_scale", "must be finite and non-negative"));
        }
        if !(0.0..=1.0).contains(&self.erase_prob) {
            return Err(Error::config("erase_prob", "must lie in [0, 1]"));
        }
        Ok(())
    }

    pub fn is_identity(&self) -> bool {
        self.noise_scale == 0.0 && self.erase_prob == 0.0
    }
}

/// Perturbed copy of `x`; a pure function of `(x, params, draw)`.
pub fn augment(x: &[f64], params: AugmentParams, draw: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(draw);
    x.iter()
        .map(|&v| {
            let z: f64 = StandardNormal.sample(&mut rng);
            let erased = rng.random::<f64>() < params.erase_prob;
            if erased {
                0.0
            } else {
                v + params.noise_scale * z
            }
        })
        .collect()
}

const SPLIT_SOURCE: &str = "source";
const SPLIT_LABELED: &str = "labeled";
const SPLIT_UNLABELED: &str = "unlabeled";
const SPLIT_TEST: &str = "test";

/// Path of the sidecar holding evaluation labels of unlabeled rows.
pub fn eval_sidecar_path(path: &Path) -> PathBuf {
    path.with_extension("eval.csv")
}

/// Writes pools as CSV rows `split,label,x0,..,x{d-1}` (label `-1` for
/// unlabeled rows). Evaluation labels of unlabeled samples, when present,
/// go to a sidecar file (see [`eval_sidecar_path`]).
pub fn dump_csv(pools: &Pools, path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    let mut header = vec!["split".to_string(), "label".to_string()];
    header.extend((0..pools.dim).map(|i| format!("x{i}")));
    w.write_record(&header)?;
    let mut write = |split: &str, label: i64, x: &[f64]| -> Result<()> {
        let mut rec = vec![split.to_string(), label.to_string()];
        rec.extend(x.iter().map(|v| v.to_string()));
        w.write_record(&rec)?;
        Ok(())
    };
    for (split, set) in [
        (SPLIT_SOURCE, &pools.source),
        (SPLIT_LABELED, &pools.labeled_target),
        (SPLIT_TEST, &pools.test),
    ] {
        for (x, &y) in set.samples.iter().zip(&set.labels) {
            write(split, y as i64, x)?;
        }
    }
    for x in &pools.unlabeled.samples {
        write(SPLIT_UNLABELED, -1, x)?;
    }
    w.flush()?;

    if let Some(labels) = &pools.unlabeled.eval_labels {
        let mut s = csv::Writer::from_path(eval_sidecar_path(path))?;
        s.write_record(["index", "label"])?;
        for (i, y) in labels.iter().enumerate() {
            s.write_record([i.to_string(), y.to_string()])?;
        }
        s.flush()?;
    }
    Ok(())
}

/// Reads pools written by [`dump_csv`] (or produced externally in the same
/// layout). The class count is one more than the largest label seen.
pub fn load_csv(path: &Path) -> Result<Pools> {
    let bad = |reason: String| Error::DataFormat {
        path: path.to_path_buf(),
        reason,
    };
    let mut r = csv::Reader::from_reader(File::open(path)?);
    let dim = r.headers()?.len().saturating_sub(2);
    if dim == 0 {
        return Err(bad("no feature columns".into()));
    }
    let mut pools = Pools {
        classes: 0,
        dim,
        source: LabeledSet::default(),
        labeled_target: LabeledSet::default(),
        unlabeled: UnlabeledSet::default(),
        test: LabeledSet::default(),
    };
    let mut max_label = 0usize;
    for (row, rec) in r.records().enumerate() {
        let rec = rec?;
        if rec.len() != dim + 2 {
            return Err(bad(format!("row {row} has {} fields, expected {}", rec.len(), dim + 2)));
        }
        let label: i64 = rec[1]
            .trim()
            .parse()
            .map_err(|_| bad(format!("row {row}: bad label `{}`", &rec[1])))?;
        let x = rec
            .iter()
            .skip(2)
            .map(|f| f.trim().parse::<f64>())
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(|e| bad(format!("row {row}: {e}")))?;
        let split = rec[0].trim();
        if split == SPLIT_UNLABELED {
            pools.unlabeled.samples.push(x);
            continue;
        }
        let y = usize::try_from(label).map_err(|_| bad(format!("row {row}: {split} sample without label")))?;
        max_label = max_label.max(y);
        match split {
            SPLIT_SOURCE => pools.source.push(x, y),
            SPLIT_LABELED => pools.labeled_target.push(x, y),
            SPLIT_TEST => pools.test.push(x, y),
            other => return Err(bad(format!("row {row}: unknown split `{other}`"))),
        }
    }
    pools.classes = max_label + 1;

    let sidecar = eval_sidecar_path(path);
    if sidecar.exists() {
        let mut s = csv::Reader::from_reader(File::open(&sidecar)?);
        let mut labels = Vec::new();
        for rec in s.records() {
            let rec = rec?;
            let y: usize = rec
                .get(1)
                .and_then(|v| v.trim().parse().ok())
                .ok_or_else(|| bad("malformed evaluation sidecar".into()))?;
            labels.push(y);
        }
        if labels.len() != pools.unlabeled.len() {
            return Err(bad(format!(
                "sidecar has {} labels for {} unlabeled rows",
                labels.len(),
                pools.unlabeled.len()
            )));
        }
        pools.unlabeled.eval_labels = Some(labels);
    }
    pools.validate()?;
    Ok(pools)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn same_seed_same_pools() {
        let spec = DomainSpec::default();
        assert_eq!(generate(&spec, 7).unwrap(), generate(&spec, 7).unwrap());
        assert_ne!(generate(&spec, 7).unwrap(), generate(&spec, 8).unwrap());
    }

    #[test]
    fn default_sizes() {
        let p = generate(&DomainSpec::default(), 0).unwrap();
        assert_eq!(p.source.len(), 500);
        assert_eq!(p.labeled_target.len(), 15);
        assert_eq!(p.test.len(), 300);
        assert_eq!(p.unlabeled.len(), 185);
    }

    #[test]
    fn too_many_shots_is_config_error() {
        let spec = DomainSpec {
            n_target: 20,
            shots: 5,
            n_test: 0,
            ..DomainSpec::default()
        };
        assert!(matches!(generate(&spec, 0), Err(Error::InvalidConfig { .. })));
    }

    #[test]
    fn augment_identity_and_erase() {
        let x = vec![1.5, -2.0, 0.25];
        let id = AugmentParams {
            noise_scale: 0.0,
            erase_prob: 0.0,
        };
        assert_eq!(augment(&x, id, 3), x);
        let all = AugmentParams {
            noise_scale: 1.0,
            erase_prob: 1.0,
        };
        assert_eq!(augment(&x, all, 3), vec![0.0; 3]);
        let p = AugmentParams::default();
        assert_eq!(augment(&x, p, 11), augment(&x, p, 11));
        assert_ne!(augment(&x, p, 11), augment(&x, p, 12));
    }

    #[test]
    fn csv_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("pools.csv");
        let spec = DomainSpec {
            dim: 3,
            ..DomainSpec::default()
        };
        let pools = generate(&spec, 4).unwrap();
        dump_csv(&pools, &path).unwrap();
        let back = load_csv(&path).unwrap();
        assert_eq!(back, pools);

        std::fs::remove_file(eval_sidecar_path(&path)).unwrap();
        let back = load_csv(&path).unwrap();
        assert!(back.unlabeled.eval_labels.is_none());
    }

    #[test]
    fn csv_rejects_unknown_split() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.csv");
        std::fs::write(&path, "split,label,x0,x1\nvalidation,0,1.0,2.0\n").unwrap();
        assert!(matches!(load_csv(&path), Err(Error::DataFormat { .. })));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]

        #[test]
        fn pools_partition_target(seed in 0u64..10_000, shots in 1usize..=3, classes in 2usize..6) {
            let spec = DomainSpec { classes, shots, n_target: 200, n_test: 80, n_source: 60, ..DomainSpec::default() };
            let p = generate(&spec, seed).unwrap();
            for k in 0..classes {
                prop_assert_eq!(p.labeled_target.labels.iter().filter(|&&y| y == k).count(), shots);
            }
            prop_assert_eq!(p.labeled_target.len() + p.unlabeled.len() + p.test.len(), spec.n_target);
            // disjointness: continuous draws never collide
            let mut all: Vec<&Vec<f64>> = p.labeled_target.samples.iter()
                .chain(&p.unlabeled.samples).chain(&p.test.samples).collect();
            all.sort_by(|a, b| a.partial_cmp(b).unwrap());
            all.dedup();
            prop_assert_eq!(all.len(), spec.n_target);
        }

        #[test]
        fn augment_keeps_shape_and_finiteness(
            x in prop::collection::vec(-100.0f64..100.0, 1..8),
            noise in 0.0f64..5.0,
            erase in 0.0f64..=1.0,
            draw: u64,
        ) {
            let y = augment(&x, AugmentParams { noise_scale: noise, erase_prob: erase }, draw);
            prop_assert_eq!(y.len(), x.len());
            prop_assert!(y.iter().all(|v| v.is_finite()));
        }
    }
}
