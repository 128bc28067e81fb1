//! Feature extractor and normalized prototypical classifier.
//!
//! The extractor is a two-layer fully connected network with a `tanh` hidden
//! layer. Its raw output `F(x)` is L2-normalized and divided by the
//! temperature `T`, so every feature lies on a sphere of radius `1/T`. The
//! classifier is a bias-free linear map whose rows are the class prototypes;
//! predictions are the softmax of the prototype scores.
//!
//! All parameters live in one flat buffer (see [`ParamLayout`]) so that
//! gradients, optimizer state and finite-difference probes share a single
//! indexing scheme.

use std::ops::Range;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Raw features with a norm below this are rejected.
pub const MIN_FEATURE_NORM: f64 = 1e-12;

/// Tolerance used when validating that a vector lies on the simplex.
pub const SIMPLEX_TOLERANCE: f64 = 1e-6;

/// Network shape.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelDims {
    pub input_dim: usize,
    pub hidden_dim: usize,
    pub feature_dim: usize,
    pub classes: usize,
}

impl ModelDims {
    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 || self.hidden_dim == 0 || self.feature_dim == 0 {
            return Err(Error::InvalidInput(format!(
                "model dimensions must be positive, got {self:?}"
            )));
        }
        if self.classes < 2 {
            return Err(Error::InvalidInput(format!(
                "at least 2 classes required, got {}",
                self.classes
            )));
        }
        Ok(())
    }

    pub fn layout(&self) -> ParamLayout {
        ParamLayout::new(*self)
    }
}

/// Offsets of each parameter block inside the flat buffer.
///
/// Matrices are row-major: `w1` is `(hidden, input)`, `w2` is
/// `(feature, hidden)` and `prototypes` is `(classes, feature)`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParamLayout {
    pub w1: Range<usize>,
    pub b1: Range<usize>,
    pub w2: Range<usize>,
    pub b2: Range<usize>,
    pub prototypes: Range<usize>,
}

impl ParamLayout {
    fn new(d: ModelDims) -> Self {
        let mut at = 0;
        let mut take = |n: usize| {
            let r = at..at + n;
            at += n;
            r
        };
        let w1 = take(d.hidden_dim * d.input_dim);
        let b1 = take(d.hidden_dim);
        let w2 = take(d.feature_dim * d.hidden_dim);
        let b2 = take(d.feature_dim);
        let prototypes = take(d.classes * d.feature_dim);
        Self {
            w1,
            b1,
            w2,
            b2,
            prototypes,
        }
    }

    pub fn len(&self) -> usize {
        self.prototypes.end
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Range covering the extractor (everything except the prototypes).
    pub fn extractor(&self) -> Range<usize> {
        0..self.prototypes.start
    }
}

/// A normalized feature `f = F(x) / (T ‖F(x)‖)`.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureVector(Vec<f64>);

impl FeatureVector {
    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn norm(&self) -> f64 {
        l2_norm(&self.0)
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }
}

/// A probability vector over the classes.
#[derive(Debug, Clone, PartialEq)]
pub struct PredictionDistribution(Vec<f64>);

impl PredictionDistribution {
    /// Validates that `probs` is non-negative, finite and sums to one.
    pub fn new(probs: Vec<f64>) -> Result<Self> {
        if probs.is_empty() {
            return Err(Error::InvalidInput("empty distribution".into()));
        }
        for (i, &p) in probs.iter().enumerate() {
            if !p.is_finite() {
                return Err(Error::NonFinite {
                    what: "distribution",
                    index: i,
                });
            }
            if p < 0.0 {
                return Err(Error::InvalidInput(format!(
                    "negative probability {p} at index {i}"
                )));
            }
        }
        let total: f64 = probs.iter().sum();
        if (total - 1.0).abs() > SIMPLEX_TOLERANCE {
            return Err(Error::InvalidInput(format!(
                "probabilities sum to {total}, expected 1"
            )));
        }
        Ok(Self(probs))
    }

    /// Uniform distribution over `classes`.
    pub fn uniform(classes: usize) -> Self {
        Self(vec![1.0 / classes as f64; classes])
    }

    /// One-hot distribution at `class`.
    pub fn one_hot(classes: usize, class: usize) -> Self {
        let mut v = vec![0.0; classes];
        v[class] = 1.0;
        Self(v)
    }

    pub(crate) fn from_normalized(probs: Vec<f64>) -> Self {
        Self(probs)
    }

    pub fn probs(&self) -> &[f64] {
        &self.0
    }

    pub fn classes(&self) -> usize {
        self.0.len()
    }

    /// Largest class probability.
    pub fn confidence(&self) -> f64 {
        self.0.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn predicted_label(&self) -> usize {
        predicted_label(self)
    }

    pub fn dot(&self, other: &PredictionDistribution) -> f64 {
        dot(&self.0, &other.0)
    }
}

/// Index of the largest probability; ties resolve to the lowest index.
pub fn predicted_label(p: &PredictionDistribution) -> usize {
    argmax(p.probs())
}

pub(crate) fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate().skip(1) {
        if x > v[best] {
            best = i;
        }
    }
    best
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub(crate) fn l2_norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Scales `raw` to norm `1/temperature`.
pub fn normalize_feature(raw: &[f64], temperature: f64) -> Result<FeatureVector> {
    if !(temperature > 0.0 && temperature.is_finite()) {
        return Err(Error::InvalidInput(format!(
            "temperature must be positive, got {temperature}"
        )));
    }
    if let Some(index) = raw.iter().position(|x| !x.is_finite()) {
        return Err(Error::NonFinite {
            what: "raw feature",
            index,
        });
    }
    let norm = l2_norm(raw);
    if norm < MIN_FEATURE_NORM {
        return Err(Error::Degenerate(format!(
            "raw feature norm {norm:e} is below {MIN_FEATURE_NORM:e}"
        )));
    }
    let scale = 1.0 / (temperature * norm);
    Ok(FeatureVector(raw.iter().map(|x| x * scale).collect()))
}

/// Numerically stable softmax. Fails on non-finite logits.
pub fn softmax(logits: &[f64]) -> Result<PredictionDistribution> {
    if let Some(index) = logits.iter().position(|x| !x.is_finite()) {
        return Err(Error::NonFinite {
            what: "logits",
            index,
        });
    }
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|z| (z - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    Ok(PredictionDistribution(
        exps.into_iter().map(|e| e / total).collect(),
    ))
}

/// Cached intermediate values of one forward pass, consumed by
/// [`ModelParams::backward`].
#[derive(Debug, Clone)]
pub struct Forward {
    pub input: Vec<f64>,
    pub hidden: Vec<f64>,
    pub raw: Vec<f64>,
    pub raw_norm: f64,
    pub feature: Vec<f64>,
    pub logits: Vec<f64>,
    pub probs: PredictionDistribution,
}

/// Trainable parameters plus the (fixed) feature temperature.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    dims: ModelDims,
    temperature: f64,
    values: Vec<f64>,
}

impl ModelParams {
    /// Random initialization. Extractor weights use a scaled normal
    /// (variance `1/fan_in`), prototypes a normal with std `prototype_std`.
    pub fn init(
        dims: ModelDims,
        temperature: f64,
        prototype_std: f64,
        seed: u64,
    ) -> Result<Self> {
        dims.validate()?;
        check_temperature(temperature)?;
        let layout = dims.layout();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut values = vec![0.0; layout.len()];

        let fill = |values: &mut [f64], std: f64, rng: &mut ChaCha8Rng| {
            let normal = Normal::new(0.0, std).expect("finite std");
            for v in values {
                *v = normal.sample(rng);
            }
        };
        fill(
            &mut values[layout.w1.clone()],
            (1.0 / dims.input_dim as f64).sqrt(),
            &mut rng,
        );
        fill(
            &mut values[layout.w2.clone()],
            (1.0 / dims.hidden_dim as f64).sqrt(),
            &mut rng,
        );
        fill(
            &mut values[layout.prototypes.clone()],
            prototype_std,
            &mut rng,
        );
        Ok(Self {
            dims,
            temperature,
            values,
        })
    }

    /// Builds parameters from an explicit flat buffer.
    pub fn from_values(dims: ModelDims, temperature: f64, values: Vec<f64>) -> Result<Self> {
        dims.validate()?;
        check_temperature(temperature)?;
        let expected = dims.layout().len();
        if values.len() != expected {
            return Err(Error::InvalidInput(format!(
                "expected {expected} parameters, got {}",
                values.len()
            )));
        }
        if let Some(index) = values.iter().position(|x| !x.is_finite()) {
            return Err(Error::NonFinite {
                what: "parameters",
                index,
            });
        }
        Ok(Self {
            dims,
            temperature,
            values,
        })
    }

    pub fn dims(&self) -> ModelDims {
        self.dims
    }

    pub fn temperature(&self) -> f64 {
        self.temperature
    }

    pub fn layout(&self) -> ParamLayout {
        self.dims.layout()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn num_params(&self) -> usize {
        self.values.len()
    }

    /// Prototype of class `k`.
    pub fn prototype(&self, k: usize) -> &[f64] {
        let start = self.layout().prototypes.start + k * self.dims.feature_dim;
        &self.values[start..start + self.dims.feature_dim]
    }

    /// Multiplies every prototype by `c`.
    pub fn scale_prototypes(&mut self, c: f64) {
        let r = self.layout().prototypes;
        self.values[r].iter_mut().for_each(|w| *w *= c);
    }

    fn check_input(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.dims.input_dim {
            return Err(Error::InvalidInput(format!(
                "sample has dimension {}, model expects {}",
                x.len(),
                self.dims.input_dim
            )));
        }
        Ok(())
    }

    fn hidden(&self, x: &[f64]) -> Vec<f64> {
        let l = self.layout();
        let w1 = &self.values[l.w1];
        let b1 = &self.values[l.b1];
        let n_in = self.dims.input_dim;
        (0..self.dims.hidden_dim)
            .map(|h| (dot(&w1[h * n_in..(h + 1) * n_in], x) + b1[h]).tanh())
            .collect()
    }

    fn raw_from_hidden(&self, hidden: &[f64]) -> Vec<f64> {
        let l = self.layout();
        let w2 = &self.values[l.w2];
        let b2 = &self.values[l.b2];
        let n_h = self.dims.hidden_dim;
        (0..self.dims.feature_dim)
            .map(|o| dot(&w2[o * n_h..(o + 1) * n_h], hidden) + b2[o])
            .collect()
    }

    /// Unnormalized extractor output `F(x)`.
    pub fn raw_feature(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.check_input(x)?;
        Ok(self.raw_from_hidden(&self.hidden(x)))
    }

    /// `F(x) / (T ‖F(x)‖)`.
    pub fn extract_feature(&self, x: &[f64]) -> Result<FeatureVector> {
        normalize_feature(&self.raw_feature(x)?, self.temperature)
    }

    fn logits(&self, feature: &[f64]) -> Vec<f64> {
        (0..self.dims.classes)
            .map(|k| dot(self.prototype(k), feature))
            .collect()
    }

    /// Classifier head applied to an already computed raw feature.
    pub fn predict_from_raw(&self, raw: &[f64]) -> Result<PredictionDistribution> {
        if raw.len() != self.dims.feature_dim {
            return Err(Error::InvalidInput(format!(
                "raw feature has dimension {}, model expects {}",
                raw.len(),
                self.dims.feature_dim
            )));
        }
        let f = normalize_feature(raw, self.temperature)?;
        softmax(&self.logits(f.values()))
    }

    pub fn predict(&self, x: &[f64]) -> Result<PredictionDistribution> {
        Ok(self.forward(x)?.probs)
    }

    pub fn forward(&self, x: &[f64]) -> Result<Forward> {
        self.check_input(x)?;
        let hidden = self.hidden(x);
        let raw = self.raw_from_hidden(&hidden);
        let f = normalize_feature(&raw, self.temperature)?;
        let raw_norm = l2_norm(&raw);
        let feature = f.into_inner();
        let logits = self.logits(&feature);
        let probs = softmax(&logits)?;
        Ok(Forward {
            input: x.to_vec(),
            hidden,
            raw,
            raw_norm,
            feature,
            logits,
            probs,
        })
    }

    /// Accumulates into `grad` the parameter gradient of a scalar whose
    /// derivative with respect to this pass's probabilities is `dprobs`.
    pub fn backward(&self, fwd: &Forward, dprobs: &[f64], grad: &mut [f64]) {
        let p = fwd.probs.probs();
        let inner = dot(p, dprobs);
        let dlogits: Vec<f64> = p
            .iter()
            .zip(dprobs)
            .map(|(pk, gk)| pk * (gk - inner))
            .collect();
        self.backward_logits(fwd, &dlogits, grad);
    }

    /// Same as [`backward`](Self::backward) but starting from logit gradients.
    pub fn backward_logits(&self, fwd: &Forward, dlogits: &[f64], grad: &mut [f64]) {
        let d = self.dims;
        let l = self.layout();

        // prototypes and feature gradient
        let mut dfeature = vec![0.0; d.feature_dim];
        for (k, &dz) in dlogits.iter().enumerate() {
            if dz == 0.0 {
                continue;
            }
            let start = l.prototypes.start + k * d.feature_dim;
            for m in 0..d.feature_dim {
                grad[start + m] += dz * fwd.feature[m];
                dfeature[m] += dz * self.values[start + m];
            }
        }

        // through f = F / (T‖F‖): dF = (df - u (u·df)) / (T‖F‖), u = F/‖F‖
        let norm = fwd.raw_norm;
        let u_dot_df: f64 = fwd
            .raw
            .iter()
            .zip(&dfeature)
            .map(|(r, g)| r / norm * g)
            .sum();
        let scale = 1.0 / (self.temperature * norm);
        let draw: Vec<f64> = fwd
            .raw
            .iter()
            .zip(&dfeature)
            .map(|(r, g)| scale * (g - r / norm * u_dot_df))
            .collect();

        // second layer
        let mut dhidden = vec![0.0; d.hidden_dim];
        for o in 0..d.feature_dim {
            let g = draw[o];
            grad[l.b2.start + o] += g;
            let row = l.w2.start + o * d.hidden_dim;
            for h in 0..d.hidden_dim {
                grad[row + h] += g * fwd.hidden[h];
                dhidden[h] += g * self.values[row + h];
            }
        }

        // first layer (tanh)
        for h in 0..d.hidden_dim {
            let a = fwd.hidden[h];
            let g = dhidden[h] * (1.0 - a * a);
            grad[l.b1.start + h] += g;
            let row = l.w1.start + h * d.input_dim;
            for i in 0..d.input_dim {
                grad[row + i] += g * fwd.input[i];
            }
        }
    }
}

fn check_temperature(t: f64) -> Result<()> {
    if t > 0.0 && t.is_finite() {
        Ok(())
    } else {
        Err(Error::InvalidInput(format!(
            "temperature must be positive, got {t}"
        )))
    }
}
