//! Training objectives and their gradients with respect to predicted
//! probabilities.
//!
//! Every loss has a value-only function and a `*_grad` companion returning
//! the same value plus `dL/dp` for each prediction that takes part. The model
//! turns those into parameter gradients via [`ModelParams::backward`].
//! Logarithm arguments are clamped below at [`LOG_EPS`]; derivatives through
//! a clamped argument are zero.
//!
//! [`ModelParams::backward`]: crate::model::ModelParams::backward

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gates::{batch_gates, GateMatrix, GateThresholds};
use crate::model::PredictionDistribution;

pub const LOG_EPS: f64 = 1e-7;

/// Weights of the consistency (`alpha`) and clustering (`beta`) terms.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub alpha: f64,
    pub beta: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            alpha: 0.03,
            beta: 25.0,
        }
    }
}

/// Sharpening temperature in `(0, 1]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SharpeningTemp(f64);

impl SharpeningTemp {
    pub fn new(t: f64) -> Result<Self> {
        if t > 0.0 && t <= 1.0 {
            Ok(Self(t))
        } else {
            Err(Error::config("t_prime", format!("{t} not in (0, 1]")))
        }
    }

    pub fn get(self) -> f64 {
        self.0
    }
}

impl Default for SharpeningTemp {
    fn default() -> Self {
        Self(0.85)
    }
}

/// Which halves of the pairwise binary cross-entropy are active.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PairTerms {
    /// `-s log(p_i . p_j)`: pulls same-class pairs together.
    pub positive: bool,
    /// `-(1-s) log(1 - p_i . p_j)`: pushes different-class pairs apart.
    pub negative: bool,
}

impl Default for PairTerms {
    fn default() -> Self {
        Self {
            positive: true,
            negative: true,
        }
    }
}

/// Per-component loss values of one step.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub ce: f64,
    pub lab: f64,
    pub con: f64,
    pub wdbc: f64,
    pub adbc: f64,
    pub abc: f64,
    pub overall: f64,
}

impl LossBreakdown {
    /// Assembles the breakdown, with `abc = wdbc + adbc` and the weighted
    /// overall objective.
    pub fn compose(
        ce: f64,
        lab: f64,
        con: f64,
        wdbc: f64,
        adbc: f64,
        weights: LossWeights,
    ) -> Result<Self> {
        for (name, v) in [("wdbc", wdbc), ("adbc", adbc)] {
            if !v.is_finite() {
                return Err(Error::NonFiniteLoss(name));
            }
        }
        let abc = wdbc + adbc;
        let overall = overall_loss(ce, lab, con, abc, weights)?;
        Ok(Self {
            ce,
            lab,
            con,
            wdbc,
            adbc,
            abc,
            overall,
        })
    }

    /// Component-wise mean; used for per-epoch averages.
    pub fn mean(items: &[LossBreakdown]) -> LossBreakdown {
        let n = items.len().max(1) as f64;
        let mut m = LossBreakdown::default();
        for b in items {
            m.ce += b.ce;
            m.lab += b.lab;
            m.con += b.con;
            m.wdbc += b.wdbc;
            m.adbc += b.adbc;
            m.abc += b.abc;
            m.overall += b.overall;
        }
        m.ce /= n;
        m.lab /= n;
        m.con /= n;
        m.wdbc /= n;
        m.adbc /= n;
        m.abc /= n;
        m.overall /= n;
        m
    }
}

/// `ce + lab + alpha con + beta abc`.
pub fn overall_loss(ce: f64, lab: f64, con: f64, abc: f64, weights: LossWeights) -> Result<f64> {
    for (name, v) in [("ce", ce), ("lab", lab), ("con", con), ("abc", abc)] {
        if !v.is_finite() {
            return Err(Error::NonFiniteLoss(name));
        }
    }
    Ok(ce + lab + weights.alpha * con + weights.beta * abc)
}

fn clamped_ln(x: f64) -> f64 {
    x.max(LOG_EPS).ln()
}

/// Value and derivative (with respect to the dot product) of one pair term.
fn pair_loss_and_slope(dot: f64, similar: bool, terms: PairTerms) -> (f64, f64) {
    let clamped = dot.clamp(LOG_EPS, 1.0 - LOG_EPS);
    let inside = clamped == dot;
    if similar {
        if !terms.positive {
            return (0.0, 0.0);
        }
        let slope = if inside { -1.0 / dot } else { 0.0 };
        (-clamped.ln(), slope)
    } else {
        if !terms.negative {
            return (0.0, 0.0);
        }
        let slope = if inside { 1.0 / (1.0 - dot) } else { 0.0 };
        (-(1.0 - clamped).ln(), slope)
    }
}

/// Pairwise binary cross-entropy on the prediction dot product.
pub fn abc_pair_loss(p_i: &PredictionDistribution, p_j: &PredictionDistribution, similar: bool) -> f64 {
    abc_pair_loss_with_terms(p_i, p_j, similar, PairTerms::default())
}

pub fn abc_pair_loss_with_terms(
    p_i: &PredictionDistribution,
    p_j: &PredictionDistribution,
    similar: bool,
    terms: PairTerms,
) -> f64 {
    pair_loss_and_slope(p_i.dot(p_j), similar, terms).0
}

/// Predictions and labels of one labeled pool in a batch.
#[derive(Debug, Clone, Copy)]
pub struct LabeledPreds<'a> {
    pub preds: &'a [PredictionDistribution],
    pub labels: &'a [usize],
}

impl<'a> LabeledPreds<'a> {
    pub fn new(preds: &'a [PredictionDistribution], labels: &'a [usize]) -> Self {
        Self { preds, labels }
    }

    pub fn len(&self) -> usize {
        self.preds.len()
    }

    pub fn is_empty(&self) -> bool {
        self.preds.is_empty()
    }
}

/// Loss value plus `dL/dp` for every participating prediction.
#[derive(Debug, Clone, PartialEq)]
pub struct LossGrad {
    pub value: f64,
    /// One gradient per prediction, in input order. For two-sided losses
    /// the inputs are listed in the order documented on the function.
    pub dprobs: Vec<Vec<f64>>,
}

/// Gated clustering loss over an unlabeled x labeled grid: the mean over
/// rows of the mean over columns of `gate * pi(p_aug_i, p_j, a_ij)`.
pub fn betweenness_loss(
    aug_unlabeled: &[PredictionDistribution],
    labeled: &[PredictionDistribution],
    gates: &GateMatrix,
    terms: PairTerms,
) -> f64 {
    let (n, m) = (aug_unlabeled.len(), labeled.len());
    if n == 0 || m == 0 {
        return 0.0;
    }
    let mut total = 0.0;
    for (i, p_i) in aug_unlabeled.iter().enumerate() {
        let mut row = 0.0;
        for (j, p_j) in labeled.iter().enumerate() {
            let g = gates.get(i, j);
            if g.combined {
                row += pair_loss_and_slope(p_i.dot(p_j), g.similar, terms).0;
            }
        }
        total += row / m as f64;
    }
    total / n as f64
}

/// Gradient companion of [`betweenness_loss`]. `dprobs` lists the unlabeled
/// rows first, then the labeled columns.
pub fn betweenness_loss_grad(
    aug_unlabeled: &[PredictionDistribution],
    labeled: &[PredictionDistribution],
    gates: &GateMatrix,
    terms: PairTerms,
) -> LossGrad {
    let (n, m) = (aug_unlabeled.len(), labeled.len());
    let mut dprobs: Vec<Vec<f64>> = aug_unlabeled
        .iter()
        .chain(labeled)
        .map(|p| vec![0.0; p.classes()])
        .collect();
    if n == 0 || m == 0 {
        return LossGrad { value: 0.0, dprobs };
    }
    let weight = 1.0 / (n as f64 * m as f64);
    let mut total = 0.0;
    for (i, p_i) in aug_unlabeled.iter().enumerate() {
        let mut row = 0.0;
        for (j, p_j) in labeled.iter().enumerate() {
            let g = gates.get(i, j);
            if !g.combined {
                continue;
            }
            let (v, slope) = pair_loss_and_slope(p_i.dot(p_j), g.similar, terms);
            row += v;
            if slope != 0.0 {
                let s = slope * weight;
                for k in 0..p_i.classes() {
                    dprobs[i][k] += s * p_j.probs()[k];
                    dprobs[n + j][k] += s * p_i.probs()[k];
                }
            }
        }
        total += row / m as f64;
    }
    LossGrad {
        value: total / n as f64,
        dprobs,
    }
}

fn concat_pools(a: LabeledPreds<'_>, b: LabeledPreds<'_>) -> (Vec<PredictionDistribution>, Vec<usize>) {
    let preds = a.preds.iter().chain(b.preds).cloned().collect();
    let labels = a.labels.iter().chain(b.labels).copied().collect();
    (preds, labels)
}

fn check_rows(clean: &[PredictionDistribution], aug: &[PredictionDistribution]) -> Result<()> {
    if clean.len() != aug.len() {
        return Err(Error::InvalidInput(format!(
            "{} clean but {} augmented unlabeled predictions",
            clean.len(),
            aug.len()
        )));
    }
    Ok(())
}

fn gated(
    clean_unlabeled: &[PredictionDistribution],
    aug_unlabeled: &[PredictionDistribution],
    preds: &[PredictionDistribution],
    labels: &[usize],
    thresholds: GateThresholds,
    terms: PairTerms,
    what: &str,
) -> Result<LossGrad> {
    check_rows(clean_unlabeled, aug_unlabeled)?;
    if clean_unlabeled.is_empty() {
        log::warn!("{what}: empty unlabeled batch, loss is zero");
    }
    if clean_unlabeled.is_empty() || preds.is_empty() {
        let dprobs = aug_unlabeled
            .iter()
            .chain(preds)
            .map(|p| vec![0.0; p.classes()])
            .collect();
        return Ok(LossGrad { value: 0.0, dprobs });
    }
    let gates = batch_gates(clean_unlabeled, preds, labels, thresholds)?;
    Ok(betweenness_loss_grad(aug_unlabeled, preds, &gates, terms))
}

/// Within-domain clustering between unlabeled target samples and the
/// labeled-target pool extended with pseudo-labeled samples. Gates come from
/// the clean unlabeled predictions; the pair loss uses the augmented ones.
pub fn wdbc_loss(
    clean_unlabeled: &[PredictionDistribution],
    aug_unlabeled: &[PredictionDistribution],
    labeled_target: LabeledPreds<'_>,
    pseudo: LabeledPreds<'_>,
    thresholds: GateThresholds,
    terms: PairTerms,
) -> Result<f64> {
    Ok(wdbc_loss_grad(clean_unlabeled, aug_unlabeled, labeled_target, pseudo, thresholds, terms)?.value)
}

/// Gradient order: augmented unlabeled, labeled target, pseudo-labeled.
pub fn wdbc_loss_grad(
    clean_unlabeled: &[PredictionDistribution],
    aug_unlabeled: &[PredictionDistribution],
    labeled_target: LabeledPreds<'_>,
    pseudo: LabeledPreds<'_>,
    thresholds: GateThresholds,
    terms: PairTerms,
) -> Result<LossGrad> {
    let (preds, labels) = concat_pools(labeled_target, pseudo);
    gated(clean_unlabeled, aug_unlabeled, &preds, &labels, thresholds, terms, "wdbc")
}

/// Across-domain clustering between unlabeled target samples and labeled
/// source samples.
pub fn adbc_loss(
    clean_unlabeled: &[PredictionDistribution],
    aug_unlabeled: &[PredictionDistribution],
    source: LabeledPreds<'_>,
    thresholds: GateThresholds,
    terms: PairTerms,
) -> Result<f64> {
    Ok(adbc_loss_grad(clean_unlabeled, aug_unlabeled, source, thresholds, terms)?.value)
}

/// Gradient order: augmented unlabeled, source.
pub fn adbc_loss_grad(
    clean_unlabeled: &[PredictionDistribution],
    aug_unlabeled: &[PredictionDistribution],
    source: LabeledPreds<'_>,
    thresholds: GateThresholds,
    terms: PairTerms,
) -> Result<LossGrad> {
    gated(
        clean_unlabeled,
        aug_unlabeled,
        source.preds,
        source.labels,
        thresholds,
        terms,
        "adbc",
    )
}

/// Raises entries to `1/t_prime` and renormalizes.
pub fn sharpen(p: &PredictionDistribution, t_prime: SharpeningTemp) -> PredictionDistribution {
    let inv = 1.0 / t_prime.get();
    // log domain so tiny entries cannot underflow the whole vector
    let logs: Vec<f64> = p
        .probs()
        .iter()
        .map(|&x| if x > 0.0 { inv * x.ln() } else { f64::NEG_INFINITY })
        .collect();
    let max = logs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logs.iter().map(|l| (l - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    PredictionDistribution::from_normalized(exps.into_iter().map(|e| e / total).collect())
}

/// Mean KL divergence from fixed targets to augmented predictions.
pub fn kl_to_targets(targets: &[PredictionDistribution], aug: &[PredictionDistribution]) -> Result<f64> {
    Ok(kl_to_targets_grad(targets, aug)?.value)
}

/// Gradient flows only into `aug`; targets are constants.
pub fn kl_to_targets_grad(targets: &[PredictionDistribution], aug: &[PredictionDistribution]) -> Result<LossGrad> {
    check_rows(targets, aug)?;
    if targets.is_empty() {
        return Ok(LossGrad {
            value: 0.0,
            dprobs: Vec::new(),
        });
    }
    let n = targets.len() as f64;
    let mut total = 0.0;
    let mut dprobs = Vec::with_capacity(aug.len());
    for (t, q) in targets.iter().zip(aug) {
        let mut d = vec![0.0; q.classes()];
        for (k, (&tk, &qk)) in t.probs().iter().zip(q.probs()).enumerate() {
            if tk == 0.0 {
                continue;
            }
            total += tk * (clamped_ln(tk) - clamped_ln(qk));
            if qk > LOG_EPS {
                d[k] = -tk / qk / n;
            }
        }
        dprobs.push(d);
    }
    Ok(LossGrad {
        value: total / n,
        dprobs,
    })
}

/// Consistency between sharpened clean predictions (held constant) and the
/// predictions on augmented views.
pub fn consistency_kl_loss(
    clean: &[PredictionDistribution],
    aug: &[PredictionDistribution],
    t_prime: SharpeningTemp,
) -> Result<f64> {
    let targets: Vec<_> = clean.iter().map(|p| sharpen(p, t_prime)).collect();
    kl_to_targets(&targets, aug)
}

/// Mean `-log p[y]`. Shared by the label-consistency and supervised terms.
fn hard_ce_grad(labels: &[usize], preds: &[PredictionDistribution]) -> Result<LossGrad> {
    if labels.len() != preds.len() {
        return Err(Error::InvalidInput(format!(
            "{} labels but {} predictions",
            labels.len(),
            preds.len()
        )));
    }
    let n = preds.len() as f64;
    let mut total = 0.0;
    let mut dprobs = Vec::with_capacity(preds.len());
    for (&y, p) in labels.iter().zip(preds) {
        if y >= p.classes() {
            return Err(Error::InvalidInput(format!(
                "label {y} out of range for {} classes",
                p.classes()
            )));
        }
        let py = p.probs()[y];
        total -= clamped_ln(py);
        let mut d = vec![0.0; p.classes()];
        if py > LOG_EPS {
            d[y] = -1.0 / py / n;
        }
        dprobs.push(d);
    }
    Ok(LossGrad {
        value: total / n,
        dprobs,
    })
}

/// Self-training on pseudo-labels: cross-entropy of augmented predictions
/// against one-hot pseudo-labels.
pub fn label_consistency_loss(pseudo_labels: &[usize], aug: &[PredictionDistribution]) -> Result<f64> {
    Ok(label_consistency_loss_grad(pseudo_labels, aug)?.value)
}

pub fn label_consistency_loss_grad(pseudo_labels: &[usize], aug: &[PredictionDistribution]) -> Result<LossGrad> {
    if aug.is_empty() && pseudo_labels.is_empty() {
        log::warn!("lab: empty pseudo-labeled batch, loss is zero");
        return Ok(LossGrad {
            value: 0.0,
            dprobs: Vec::new(),
        });
    }
    hard_ce_grad(pseudo_labels, aug)
}

/// Mean cross-entropy on ground-truth labels of source and labeled target
/// samples.
pub fn supervised_ce(labels: &[usize], preds: &[PredictionDistribution]) -> Result<f64> {
    Ok(supervised_ce_grad(labels, preds)?.value)
}

pub fn supervised_ce_grad(labels: &[usize], preds: &[PredictionDistribution]) -> Result<LossGrad> {
    if preds.is_empty() {
        return Err(Error::InvalidInput("supervised batch is empty".into()));
    }
    hard_ce_grad(labels, preds)
}
