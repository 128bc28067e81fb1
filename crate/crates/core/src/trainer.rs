//! Training loop.
//!
//! Each iteration draws four mini-batches (source, labeled target,
//! pseudo-labeled, unlabeled), evaluates clean and augmented forward passes,
//! freezes the graph gates and sharpened targets from the clean unlabeled
//! predictions, and takes one SGD-with-momentum step on
//! `ce + lab + alpha con + beta (wdbc + adbc)`.
//!
//! Randomness is derived from `(seed, epoch)` alone, so a run resumed from a
//! checkpoint replays exactly the batches of an uninterrupted run.

use rand::seq::index::sample as sample_indices;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::checkpoint::{ModelCheckpoint, TrainingCheckpoint};
use crate::data::{augment, AugmentParams, Pools};
use crate::error::{Error, Result};
use crate::evaluation::{accuracy, css_from_predictions, gate_ratio_from_predictions, predict_all, CssMatrix, GateRatioStats};
use crate::gates::{batch_gates, GateMatrix, GateThresholds};
use crate::model::{Forward, ModelDims, ModelParams, PredictionDistribution};
use crate::objectives::{
    betweenness_loss, betweenness_loss_grad, kl_to_targets, kl_to_targets_grad, label_consistency_loss,
    label_consistency_loss_grad, sharpen, supervised_ce, supervised_ce_grad, LossBreakdown, LossWeights,
    PairTerms, SharpeningTemp,
};
use crate::pseudo::{select_from_predictions, PseudoLabeledSet};

/// Learning rate at iteration `t`: `xi_0 / (1 + 0.0001 t)^0.75`.
pub fn lr_schedule(xi_0: f64, t: u64) -> f64 {
    xi_0 / (1.0 + 0.0001 * t as f64).powf(0.75)
}

/// How the objective is split into optimizer steps within one iteration.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum StepOrder {
    /// One step on the full objective.
    #[default]
    Joint,
    /// A supervised step followed by a step on the remaining terms.
    TwoPhase,
}

/// Hyperparameters of a training run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub alpha: f64,
    pub beta: f64,
    pub tau: f64,
    pub tau_prime: f64,
    pub kappa: f64,
    /// Feature temperature `T`.
    pub temperature: f64,
    /// Sharpening temperature `T'`.
    pub t_prime: f64,
    /// Initial learning rate `xi_0`.
    pub lr: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub batch_source: usize,
    pub batch_labeled: usize,
    pub batch_pseudo: usize,
    pub batch_unlabeled: usize,
    pub epochs: usize,
    pub iterations_per_epoch: usize,
    pub seed: u64,
    pub noise_scale: f64,
    pub erase_prob: f64,
    pub hidden_dim: usize,
    pub feature_dim: usize,
    pub prototype_std: f64,
    /// Pseudo-labels are reselected every this many epochs.
    pub pseudo_refresh_epochs: usize,
    pub step_order: StepOrder,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            alpha: 0.03,
            beta: 25.0,
            tau: 0.95,
            tau_prime: 0.975,
            kappa: 0.20,
            temperature: 0.05,
            t_prime: 0.85,
            lr: 0.001,
            momentum: 0.9,
            weight_decay: 0.0,
            batch_source: 24,
            batch_labeled: 24,
            batch_pseudo: 24,
            batch_unlabeled: 48,
            epochs: 100,
            iterations_per_epoch: 20,
            seed: 0,
            noise_scale: 0.3,
            erase_prob: 0.0,
            hidden_dim: 32,
            feature_dim: 16,
            prototype_std: 0.05,
            pseudo_refresh_epochs: 1,
            step_order: StepOrder::Joint,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let unit = |key: &str, v: f64| {
            if (0.0..=1.0).contains(&v) {
                Ok(())
            } else {
                Err(Error::config(key, format!("{v} not in [0, 1]")))
            }
        };
        unit("tau", self.tau)?;
        unit("tau_prime", self.tau_prime)?;
        if self.tau_prime <= self.tau {
            return Err(Error::config(
                "tau_prime",
                format!("must exceed tau ({} <= {})", self.tau_prime, self.tau),
            ));
        }
        for (key, v) in [("alpha", self.alpha), ("beta", self.beta), ("weight_decay", self.weight_decay)] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::config(key, format!("must be finite and non-negative, got {v}")));
            }
        }
        if !self.kappa.is_finite() {
            return Err(Error::config("kappa", "must be finite"));
        }
        if !(self.temperature.is_finite() && self.temperature > 0.0) {
            return Err(Error::config("temperature", "must be positive"));
        }
        SharpeningTemp::new(self.t_prime)?;
        if !(self.lr.is_finite() && self.lr >= 0.0) {
            return Err(Error::config("lr", "must be finite and non-negative"));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::config("momentum", "must lie in [0, 1)"));
        }
        for (key, v) in [
            ("batch_source", self.batch_source),
            ("batch_labeled", self.batch_labeled),
            ("batch_pseudo", self.batch_pseudo),
            ("batch_unlabeled", self.batch_unlabeled),
            ("hidden_dim", self.hidden_dim),
            ("feature_dim", self.feature_dim),
            ("pseudo_refresh_epochs", self.pseudo_refresh_epochs),
        ] {
            if v == 0 {
                return Err(Error::config(key, "must be at least 1"));
            }
        }
        if !(self.prototype_std.is_finite() && self.prototype_std > 0.0) {
            return Err(Error::config("prototype_std", "must be positive"));
        }
        self.augment().validate()
    }

    pub fn weights(&self) -> LossWeights {
        LossWeights {
            alpha: self.alpha,
            beta: self.beta,
        }
    }

    pub fn thresholds(&self) -> GateThresholds {
        GateThresholds {
            tau: self.tau,
            kappa: self.kappa,
        }
    }

    pub fn sharpening(&self) -> Result<SharpeningTemp> {
        SharpeningTemp::new(self.t_prime)
    }

    pub fn augment(&self) -> AugmentParams {
        AugmentParams {
            noise_scale: self.noise_scale,
            erase_prob: self.erase_prob,
        }
    }

    pub fn model_dims(&self, input_dim: usize, classes: usize) -> ModelDims {
        ModelDims {
            input_dim,
            hidden_dim: self.hidden_dim,
            feature_dim: self.feature_dim,
            classes,
        }
    }
}

/// Switches for every component varied in the ablation grid.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct AblationFlags {
    pub adbc: bool,
    pub wdbc: bool,
    pub lab: bool,
    pub con: bool,
    /// Clustering losses use augmented unlabeled predictions.
    pub augment_abc: bool,
    /// Pseudo-labeled samples join the labeled pool of the within-domain loss.
    pub pseudo_in_wdbc: bool,
    pub abc_positive: bool,
    pub abc_negative: bool,
}

impl AblationFlags {
    pub const fn full() -> Self {
        Self {
            adbc: true,
            wdbc: true,
            lab: true,
            con: true,
            augment_abc: true,
            pseudo_in_wdbc: true,
            abc_positive: true,
            abc_negative: true,
        }
    }

    /// Supervision on labeled source and target samples only.
    pub const fn supervised_only() -> Self {
        Self {
            adbc: false,
            wdbc: false,
            lab: false,
            con: false,
            ..Self::full()
        }
    }

    pub fn pair_terms(&self) -> PairTerms {
        PairTerms {
            positive: self.abc_positive,
            negative: self.abc_negative,
        }
    }

    pub fn needs_pseudo(&self) -> bool {
        self.lab || (self.wdbc && self.pseudo_in_wdbc)
    }
}

impl Default for AblationFlags {
    fn default() -> Self {
        Self::full()
    }
}

/// Samples with labels.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct LabeledBatch {
    pub samples: Vec<Vec<f64>>,
    pub labels: Vec<usize>,
}

/// Samples with their augmented views (and labels for pseudo batches).
#[derive(Debug, Clone, PartialEq, Default)]
pub struct AugmentedBatch {
    pub samples: Vec<Vec<f64>>,
    pub augmented: Vec<Vec<f64>>,
    pub labels: Vec<usize>,
}

/// The four mini-batches of one iteration.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct BatchBundle {
    pub source: LabeledBatch,
    pub labeled: LabeledBatch,
    pub pseudo: AugmentedBatch,
    pub unlabeled: AugmentedBatch,
}

/// `n` indices from `0..len`: without replacement when the pool is large
/// enough, with replacement otherwise.
fn draw_indices(rng: &mut ChaCha8Rng, len: usize, n: usize) -> Vec<usize> {
    if len == 0 {
        return Vec::new();
    }
    if len >= n {
        sample_indices(rng, len, n).into_vec()
    } else {
        (0..n).map(|_| rng.random_range(0..len)).collect()
    }
}

/// Draws one bundle. Pseudo-labeled samples are taken from the unlabeled
/// pool through `pseudo`'s indices; an empty set yields an empty batch.
pub fn sample_bundle(
    pools: &Pools,
    pseudo: &PseudoLabeledSet,
    config: &TrainConfig,
    rng: &mut ChaCha8Rng,
) -> BatchBundle {
    let aug = config.augment();
    let labeled = |set: &crate::data::LabeledSet, n: usize, rng: &mut ChaCha8Rng| {
        let idx = draw_indices(rng, set.len(), n);
        LabeledBatch {
            samples: idx.iter().map(|&i| set.samples[i].clone()).collect(),
            labels: idx.iter().map(|&i| set.labels[i]).collect(),
        }
    };
    let source = labeled(&pools.source, config.batch_source, rng);
    let labeled_target = labeled(&pools.labeled_target, config.batch_labeled, rng);

    let mut pseudo_batch = AugmentedBatch::default();
    for i in draw_indices(rng, pseudo.len(), config.batch_pseudo) {
        let e = pseudo.entries[i];
        let x = pools.unlabeled.samples[e.index].clone();
        pseudo_batch.augmented.push(augment(&x, aug, rng.random()));
        pseudo_batch.samples.push(x);
        pseudo_batch.labels.push(e.label);
    }

    let mut unlabeled = AugmentedBatch::default();
    for i in draw_indices(rng, pools.unlabeled.len(), config.batch_unlabeled) {
        let x = pools.unlabeled.samples[i].clone();
        unlabeled.augmented.push(augment(&x, aug, rng.random()));
        unlabeled.samples.push(x);
    }

    BatchBundle {
        source,
        labeled: labeled_target,
        pseudo: pseudo_batch,
        unlabeled,
    }
}

/// Quantities computed from the current model and held constant during a
/// gradient step: the gate grids and the sharpened consistency targets.
#[derive(Debug, Clone, PartialEq)]
pub struct FrozenTargets {
    pub sharpened: Vec<PredictionDistribution>,
    pub wdbc_gates: Option<GateMatrix>,
    pub adbc_gates: Option<GateMatrix>,
}

fn wdbc_pool_labels(bundle: &BatchBundle, flags: &AblationFlags) -> Vec<usize> {
    let mut labels = bundle.labeled.labels.clone();
    if flags.pseudo_in_wdbc {
        labels.extend_from_slice(&bundle.pseudo.labels);
    }
    labels
}

pub fn freeze_targets(
    params: &ModelParams,
    bundle: &BatchBundle,
    config: &TrainConfig,
    flags: &AblationFlags,
) -> Result<FrozenTargets> {
    let clean = predict_all(params, &bundle.unlabeled.samples)?;
    let sharpened = if flags.con {
        let t = config.sharpening()?;
        clean.iter().map(|p| sharpen(p, t)).collect()
    } else {
        Vec::new()
    };
    let grid = |preds: Vec<PredictionDistribution>, labels: &[usize]| -> Result<Option<GateMatrix>> {
        if clean.is_empty() || preds.is_empty() {
            return Ok(None);
        }
        batch_gates(&clean, &preds, labels, config.thresholds()).map(Some)
    };
    let wdbc_gates = if flags.wdbc {
        let mut pool = predict_all(params, &bundle.labeled.samples)?;
        if flags.pseudo_in_wdbc {
            pool.extend(predict_all(params, &bundle.pseudo.samples)?);
        }
        grid(pool, &wdbc_pool_labels(bundle, flags))?
    } else {
        None
    };
    let adbc_gates = if flags.adbc {
        grid(predict_all(params, &bundle.source.samples)?, &bundle.source.labels)?
    } else {
        None
    };
    Ok(FrozenTargets {
        sharpened,
        wdbc_gates,
        adbc_gates,
    })
}

/// Per-component coefficients applied when forming a parameter gradient.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ComponentWeights {
    pub ce: f64,
    pub lab: f64,
    pub con: f64,
    pub wdbc: f64,
    pub adbc: f64,
}

impl ComponentWeights {
    /// Coefficients of the overall objective.
    pub fn overall(w: LossWeights) -> Self {
        Self {
            ce: 1.0,
            lab: 1.0,
            con: w.alpha,
            wdbc: w.beta,
            adbc: w.beta,
        }
    }

    pub fn zero() -> Self {
        Self {
            ce: 0.0,
            lab: 0.0,
            con: 0.0,
            wdbc: 0.0,
            adbc: 0.0,
        }
    }

    /// Scalar this gradient differentiates, given a breakdown.
    pub fn combine(&self, b: &LossBreakdown) -> f64 {
        self.ce * b.ce + self.lab * b.lab + self.con * b.con + self.wdbc * b.wdbc + self.adbc * b.adbc
    }
}

fn unlabeled_side<'a>(
    flags: &AblationFlags,
    aug: &'a [PredictionDistribution],
    clean: &'a [PredictionDistribution],
) -> &'a [PredictionDistribution] {
    if flags.augment_abc {
        aug
    } else {
        clean
    }
}

/// Loss values at `params` with frozen gates and targets. Uses only forward
/// predictions and the value-only loss functions.
pub fn loss_breakdown(
    params: &ModelParams,
    bundle: &BatchBundle,
    targets: &FrozenTargets,
    config: &TrainConfig,
    flags: &AblationFlags,
) -> Result<LossBreakdown> {
    let mut sup_x = bundle.source.samples.clone();
    sup_x.extend(bundle.labeled.samples.iter().cloned());
    let mut sup_y = bundle.source.labels.clone();
    sup_y.extend_from_slice(&bundle.labeled.labels);
    let ce = supervised_ce(&sup_y, &predict_all(params, &sup_x)?)?;

    let lab = if flags.lab && !bundle.pseudo.labels.is_empty() {
        label_consistency_loss(&bundle.pseudo.labels, &predict_all(params, &bundle.pseudo.augmented)?)?
    } else {
        0.0
    };

    let aug = predict_all(params, &bundle.unlabeled.augmented)?;
    let con = if flags.con {
        kl_to_targets(&targets.sharpened, &aug)?
    } else {
        0.0
    };

    let clean = if flags.augment_abc {
        Vec::new()
    } else {
        predict_all(params, &bundle.unlabeled.samples)?
    };
    let rows = unlabeled_side(flags, &aug, &clean);

    let wdbc = match (&targets.wdbc_gates, flags.wdbc) {
        (Some(g), true) => {
            let mut pool = predict_all(params, &bundle.labeled.samples)?;
            if flags.pseudo_in_wdbc {
                pool.extend(predict_all(params, &bundle.pseudo.samples)?);
            }
            betweenness_loss(rows, &pool, g, flags.pair_terms())
        }
        _ => 0.0,
    };
    let adbc = match (&targets.adbc_gates, flags.adbc) {
        (Some(g), true) => betweenness_loss(
            rows,
            &predict_all(params, &bundle.source.samples)?,
            g,
            flags.pair_terms(),
        ),
        _ => 0.0,
    };
    LossBreakdown::compose(ce, lab, con, wdbc, adbc, config.weights())
}

/// Forward passes of one group of samples plus their accumulated `dL/dp`.
struct Group {
    fwds: Vec<Forward>,
    dprobs: Vec<Vec<f64>>,
}

impl Group {
    fn new(params: &ModelParams, xs: &[Vec<f64>]) -> Result<Self> {
        let fwds = xs.iter().map(|x| params.forward(x)).collect::<Result<Vec<_>>>()?;
        let dprobs = fwds.iter().map(|f| vec![0.0; f.probs.classes()]).collect();
        Ok(Self { fwds, dprobs })
    }

    fn empty() -> Self {
        Self {
            fwds: Vec::new(),
            dprobs: Vec::new(),
        }
    }

    fn preds(&self) -> Vec<PredictionDistribution> {
        self.fwds.iter().map(|f| f.probs.clone()).collect()
    }

    fn accumulate(&mut self, offset: usize, grads: &[Vec<f64>], scale: f64) {
        for (dst, src) in self.dprobs[offset..].iter_mut().zip(grads) {
            for (d, s) in dst.iter_mut().zip(src) {
                *d += scale * s;
            }
        }
    }

    fn backward(&self, params: &ModelParams, grad: &mut [f64]) {
        for (f, d) in self.fwds.iter().zip(&self.dprobs) {
            if d.iter().any(|&v| v != 0.0) {
                params.backward(f, d, grad);
            }
        }
    }
}

/// Loss values and the parameter gradient of `coeffs . components`.
pub fn loss_gradient(
    params: &ModelParams,
    bundle: &BatchBundle,
    targets: &FrozenTargets,
    config: &TrainConfig,
    flags: &AblationFlags,
    coeffs: ComponentWeights,
) -> Result<(LossBreakdown, Vec<f64>)> {
    let mut source = Group::new(params, &bundle.source.samples)?;
    let mut labeled = Group::new(params, &bundle.labeled.samples)?;

    // supervised
    let mut sup_preds = source.preds();
    sup_preds.extend(labeled.preds());
    let mut sup_y = bundle.source.labels.clone();
    sup_y.extend_from_slice(&bundle.labeled.labels);
    let ce = supervised_ce_grad(&sup_y, &sup_preds)?;
    let ns = source.fwds.len();
    source.accumulate(0, &ce.dprobs[..ns], coeffs.ce);
    labeled.accumulate(0, &ce.dprobs[ns..], coeffs.ce);

    // self-training on pseudo-labels
    // an empty pseudo batch contributes zero
    let with_lab = flags.lab && !bundle.pseudo.labels.is_empty();
    let mut pseudo_aug = if with_lab {
        Group::new(params, &bundle.pseudo.augmented)?
    } else {
        Group::empty()
    };
    let lab = if with_lab {
        let g = label_consistency_loss_grad(&bundle.pseudo.labels, &pseudo_aug.preds())?;
        pseudo_aug.accumulate(0, &g.dprobs, coeffs.lab);
        g.value
    } else {
        0.0
    };

    // consistency
    let needs_aug = flags.con || ((flags.wdbc || flags.adbc) && flags.augment_abc);
    let mut unl_aug = if needs_aug {
        Group::new(params, &bundle.unlabeled.augmented)?
    } else {
        Group::empty()
    };
    let con = if flags.con {
        let g = kl_to_targets_grad(&targets.sharpened, &unl_aug.preds())?;
        unl_aug.accumulate(0, &g.dprobs, coeffs.con);
        g.value
    } else {
        0.0
    };

    // clustering
    let mut unl_clean = if (flags.wdbc || flags.adbc) && !flags.augment_abc {
        Group::new(params, &bundle.unlabeled.samples)?
    } else {
        Group::empty()
    };
    let rows = if flags.augment_abc {
        unl_aug.preds()
    } else {
        unl_clean.preds()
    };
    let nu = rows.len();
    let mut row_grads: Vec<Vec<f64>> = rows.iter().map(|p| vec![0.0; p.classes()]).collect();
    let add_rows = |acc: &mut Vec<Vec<f64>>, src: &[Vec<f64>], scale: f64| {
        for (dst, s) in acc.iter_mut().zip(src) {
            for (d, v) in dst.iter_mut().zip(s) {
                *d += scale * v;
            }
        }
    };

    let mut pseudo_clean = if flags.wdbc && flags.pseudo_in_wdbc {
        Group::new(params, &bundle.pseudo.samples)?
    } else {
        Group::empty()
    };
    let wdbc = match (&targets.wdbc_gates, flags.wdbc) {
        (Some(gates), true) => {
            let mut pool = labeled.preds();
            pool.extend(pseudo_clean.preds());
            let g = betweenness_loss_grad(&rows, &pool, gates, flags.pair_terms());
            add_rows(&mut row_grads, &g.dprobs[..nu], coeffs.wdbc);
            let nl = labeled.fwds.len();
            labeled.accumulate(0, &g.dprobs[nu..nu + nl], coeffs.wdbc);
            pseudo_clean.accumulate(0, &g.dprobs[nu + nl..], coeffs.wdbc);
            g.value
        }
        _ => 0.0,
    };
    let adbc = match (&targets.adbc_gates, flags.adbc) {
        (Some(gates), true) => {
            let g = betweenness_loss_grad(&rows, &source.preds(), gates, flags.pair_terms());
            add_rows(&mut row_grads, &g.dprobs[..nu], coeffs.adbc);
            source.accumulate(0, &g.dprobs[nu..], coeffs.adbc);
            g.value
        }
        _ => 0.0,
    };
    if nu > 0 {
        if flags.augment_abc {
            unl_aug.accumulate(0, &row_grads, 1.0);
        } else {
            unl_clean.accumulate(0, &row_grads, 1.0);
        }
    }

    let breakdown = LossBreakdown::compose(ce.value, lab, con, wdbc, adbc, config.weights())?;
    let mut grad = vec![0.0; params.num_params()];
    for g in [&source, &labeled, &pseudo_aug, &pseudo_clean, &unl_aug, &unl_clean] {
        g.backward(params, &mut grad);
    }
    Ok((breakdown, grad))
}

/// SGD with momentum: `v <- mu v + g + wd theta; theta <- theta - lr v`.
#[derive(Debug, Clone, PartialEq)]
pub struct Sgd {
    pub momentum: f64,
    pub weight_decay: f64,
    pub velocity: Vec<f64>,
}

impl Sgd {
    pub fn new(num_params: usize, momentum: f64, weight_decay: f64) -> Self {
        Self {
            momentum,
            weight_decay,
            velocity: vec![0.0; num_params],
        }
    }

    pub fn step(&mut self, params: &mut ModelParams, grad: &[f64], lr: f64) {
        let values = params.values_mut();
        for ((theta, v), g) in values.iter_mut().zip(&mut self.velocity).zip(grad) {
            *v = self.momentum * *v + g + self.weight_decay * *theta;
            *theta -= lr * *v;
        }
    }
}

fn check_grad(grad: &[f64]) -> Result<()> {
    match grad.iter().position(|g| !g.is_finite()) {
        Some(index) => Err(Error::NonFinite {
            what: "gradient",
            index,
        }),
        None => Ok(()),
    }
}

/// One optimization step at iteration `t` (learning rate from
/// [`lr_schedule`]). Returns the loss breakdown at the pre-step parameters
/// (for the two-phase order: supervised loss before the first phase, other
/// terms before the second).
pub fn train_step(
    params: &mut ModelParams,
    optimizer: &mut Sgd,
    bundle: &BatchBundle,
    config: &TrainConfig,
    flags: &AblationFlags,
    t: u64,
) -> Result<LossBreakdown> {
    let lr = lr_schedule(config.lr, t);
    match config.step_order {
        StepOrder::Joint => {
            let targets = freeze_targets(params, bundle, config, flags)?;
            let coeffs = ComponentWeights::overall(config.weights());
            let (b, grad) = loss_gradient(params, bundle, &targets, config, flags, coeffs)?;
            check_grad(&grad)?;
            optimizer.step(params, &grad, lr);
            Ok(b)
        }
        StepOrder::TwoPhase => {
            let targets = freeze_targets(params, bundle, config, flags)?;
            let sup = ComponentWeights {
                ce: 1.0,
                ..ComponentWeights::zero()
            };
            let (first, grad) = loss_gradient(params, bundle, &targets, config, flags, sup)?;
            check_grad(&grad)?;
            optimizer.step(params, &grad, lr);

            let targets = freeze_targets(params, bundle, config, flags)?;
            let rest = ComponentWeights {
                ce: 0.0,
                ..ComponentWeights::overall(config.weights())
            };
            let (second, grad) = loss_gradient(params, bundle, &targets, config, flags, rest)?;
            check_grad(&grad)?;
            optimizer.step(params, &grad, lr);
            LossBreakdown::compose(
                first.ce,
                second.lab,
                second.con,
                second.wdbc,
                second.adbc,
                config.weights(),
            )
        }
    }
}

/// Metrics recorded after each epoch (epoch 0 is the untrained model).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Learning rate of the last iteration of the epoch.
    pub lr: f64,
    /// Mean losses over the epoch's iterations; `None` for epoch 0.
    pub losses: Option<LossBreakdown>,
    pub target_accuracy: f64,
    pub pseudo_count: usize,
    pub pseudo_accuracy: Option<f64>,
    pub gates: GateRatioStats,
    pub css: Option<CssMatrix>,
}

/// Everything a finished run produces.
#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub log: Vec<EpochRecord>,
    pub params: ModelParams,
    pub checkpoint: TrainingCheckpoint,
}

/// Stateful training driver.
pub struct Trainer<'a> {
    config: TrainConfig,
    flags: AblationFlags,
    pools: &'a Pools,
    params: ModelParams,
    optimizer: Sgd,
    epoch: usize,
    iteration: u64,
    pseudo: PseudoLabeledSet,
    log: Vec<EpochRecord>,
}

const BATCH_STREAM_SALT: u64 = 0x5eed_ba7c_0000_0001;

impl<'a> Trainer<'a> {
    /// Fresh model from `config.seed`; records the epoch-0 evaluation.
    pub fn new(config: TrainConfig, flags: AblationFlags, pools: &'a Pools) -> Result<Self> {
        config.validate()?;
        pools.validate()?;
        let dims = config.model_dims(pools.dim, pools.classes);
        let params = ModelParams::init(dims, config.temperature, config.prototype_std, config.seed)?;
        let optimizer = Sgd::new(params.num_params(), config.momentum, config.weight_decay);
        let mut t = Self {
            config,
            flags,
            pools,
            params,
            optimizer,
            epoch: 0,
            iteration: 0,
            pseudo: PseudoLabeledSet::default(),
            log: Vec::new(),
        };
        let record = t.evaluate(None, 0.0)?;
        t.log.push(record);
        Ok(t)
    }

    /// Continues a run from a checkpoint taken by [`Trainer::checkpoint`].
    pub fn resume(
        config: TrainConfig,
        flags: AblationFlags,
        pools: &'a Pools,
        checkpoint: TrainingCheckpoint,
    ) -> Result<Self> {
        config.validate()?;
        pools.validate()?;
        let params = checkpoint.model.to_params()?;
        if params.dims() != config.model_dims(pools.dim, pools.classes) {
            return Err(Error::Checkpoint("model shape does not match config and data".into()));
        }
        if checkpoint.velocity.len() != params.num_params() {
            return Err(Error::Checkpoint("optimizer state has the wrong length".into()));
        }
        let pseudo = checkpoint.pseudo_set();
        let mut optimizer = Sgd::new(params.num_params(), config.momentum, config.weight_decay);
        optimizer.velocity = checkpoint.velocity;
        Ok(Self {
            config,
            flags,
            pools,
            params,
            optimizer,
            epoch: checkpoint.epoch,
            iteration: checkpoint.iteration,
            pseudo,
            log: checkpoint.log,
        })
    }

    pub fn params(&self) -> &ModelParams {
        &self.params
    }

    pub fn log(&self) -> &[EpochRecord] {
        &self.log
    }

    pub fn epoch(&self) -> usize {
        self.epoch
    }

    pub fn pseudo_labels(&self) -> &PseudoLabeledSet {
        &self.pseudo
    }

    pub fn checkpoint(&self) -> TrainingCheckpoint {
        TrainingCheckpoint {
            model: ModelCheckpoint::from_params(&self.params, self.config.seed),
            velocity: self.optimizer.velocity.clone(),
            epoch: self.epoch,
            iteration: self.iteration,
            pseudo: self.pseudo.entries.iter().map(Into::into).collect(),
            log: self.log.clone(),
        }
    }

    fn evaluate(&self, losses: Option<LossBreakdown>, lr: f64) -> Result<EpochRecord> {
        let p = self.pools;
        let test_preds = predict_all(&self.params, &p.test.samples)?;
        let target_accuracy = accuracy(&test_preds, &p.test.labels)?;

        let unl = predict_all(&self.params, &p.unlabeled.samples)?;
        let mut lab = predict_all(&self.params, &p.labeled_target.samples)?;
        lab.extend(predict_all(&self.params, &p.source.samples)?);
        let mut lab_y = p.labeled_target.labels.clone();
        lab_y.extend_from_slice(&p.source.labels);

        let gates = gate_ratio_from_predictions(&unl, &lab, &lab_y, self.config.thresholds())?;
        let css = match &p.unlabeled.eval_labels {
            Some(truth) => Some(css_from_predictions(p.classes, &unl, truth, &lab, &lab_y)?),
            None => None,
        };
        let pseudo_accuracy = p
            .unlabeled
            .eval_labels
            .as_ref()
            .and_then(|truth| self.pseudo.accuracy(truth));
        Ok(EpochRecord {
            epoch: self.epoch,
            lr,
            losses,
            target_accuracy,
            pseudo_count: self.pseudo.len(),
            pseudo_accuracy,
            gates,
            css,
        })
    }

    fn refresh_pseudo(&mut self) -> Result<()> {
        if !self.flags.needs_pseudo() {
            self.pseudo = PseudoLabeledSet::default();
            return Ok(());
        }
        if self.epoch % self.config.pseudo_refresh_epochs == 0 {
            let preds = predict_all(&self.params, &self.pools.unlabeled.samples)?;
            self.pseudo = select_from_predictions(&preds, self.config.tau_prime);
        }
        Ok(())
    }

    fn epoch_rng(&self) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.config.seed ^ BATCH_STREAM_SALT);
        rng.set_stream(self.epoch as u64);
        rng
    }

    /// Trains one epoch and appends its record.
    pub fn run_epoch(&mut self) -> Result<&EpochRecord> {
        self.refresh_pseudo()?;
        if self.flags.needs_pseudo() && self.pseudo.is_empty() {
            log::info!("epoch {}: no pseudo-labels above tau_prime", self.epoch + 1);
        }
        let mut rng = self.epoch_rng();
        let mut losses = Vec::with_capacity(self.config.iterations_per_epoch);
        let mut lr = lr_schedule(self.config.lr, self.iteration);
        for _ in 0..self.config.iterations_per_epoch {
            let bundle = sample_bundle(self.pools, &self.pseudo, &self.config, &mut rng);
            lr = lr_schedule(self.config.lr, self.iteration);
            let b = train_step(
                &mut self.params,
                &mut self.optimizer,
                &bundle,
                &self.config,
                &self.flags,
                self.iteration,
            )?;
            losses.push(b);
            self.iteration += 1;
        }
        self.epoch += 1;
        let record = self.evaluate(Some(LossBreakdown::mean(&losses)), lr)?;
        log::debug!(
            "epoch {} acc {:.4} overall {:.4} pseudo {}",
            record.epoch,
            record.target_accuracy,
            record.losses.map_or(f64::NAN, |l| l.overall),
            record.pseudo_count
        );
        self.log.push(record);
        Ok(self.log.last().expect("just pushed"))
    }

    /// Trains until `config.epochs` epochs have completed.
    pub fn run(&mut self) -> Result<()> {
        while self.epoch < self.config.epochs {
            self.run_epoch()?;
        }
        Ok(())
    }

    pub fn into_outcome(self) -> TrainOutcome {
        let checkpoint = self.checkpoint();
        TrainOutcome {
            log: self.log,
            params: self.params,
            checkpoint,
        }
    }
}

/// Full training run.
pub fn run(config: &TrainConfig, flags: &AblationFlags, pools: &Pools) -> Result<TrainOutcome> {
    let mut t = Trainer::new(config.clone(), *flags, pools)?;
    t.run()?;
    Ok(t.into_outcome())
}
