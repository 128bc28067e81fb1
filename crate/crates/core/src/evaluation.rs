//! Evaluation metrics: target accuracy, class-wise similarity scores and
//! gate-ratio statistics. All of them use clean (unaugmented) predictions.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::{LabeledSet, UnlabeledSet};
use crate::error::{Error, Result};
use crate::gates::{cunr_gate, GateThresholds};
use crate::model::{ModelParams, PredictionDistribution};

pub fn predict_all(model: &ModelParams, samples: &[Vec<f64>]) -> Result<Vec<PredictionDistribution>> {
    samples.iter().map(|x| model.predict(x)).collect()
}

/// Fraction of argmax-correct predictions.
pub fn accuracy(preds: &[PredictionDistribution], labels: &[usize]) -> Result<f64> {
    if preds.is_empty() {
        return Err(Error::InvalidInput("accuracy of an empty set".into()));
    }
    if preds.len() != labels.len() {
        return Err(Error::InvalidInput(format!(
            "{} predictions but {} labels",
            preds.len(),
            labels.len()
        )));
    }
    let hits = preds
        .iter()
        .zip(labels)
        .filter(|(p, &y)| p.predicted_label() == y)
        .count();
    Ok(hits as f64 / preds.len() as f64)
}

pub fn target_accuracy(model: &ModelParams, test: &LabeledSet) -> Result<f64> {
    accuracy(&predict_all(model, &test.samples)?, &test.labels)
}

/// Class-wise similarity: entry `(c, c')` is the mean prediction dot product
/// between unlabeled samples of true class `c` and labeled samples of class
/// `c'`. Entries are `None` when either class is absent.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CssMatrix {
    classes: usize,
    scores: Vec<Option<f64>>,
}

impl CssMatrix {
    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn get(&self, c: usize, c_prime: usize) -> Option<f64> {
        self.scores[c * self.classes + c_prime]
    }

    /// Mean of the present diagonal entries.
    pub fn mean_diagonal(&self) -> f64 {
        mean((0..self.classes).filter_map(|c| self.get(c, c)))
    }

    /// Mean of the present off-diagonal entries.
    pub fn mean_off_diagonal(&self) -> f64 {
        let k = self.classes;
        mean(
            (0..k)
                .flat_map(|c| (0..k).map(move |d| (c, d)))
                .filter(|(c, d)| c != d)
                .filter_map(|(c, d)| self.get(c, d)),
        )
    }

    /// Writes a `K x K` CSV with `NA` for absent entries. Row `c` is the
    /// unlabeled class, column `c'` the labeled class.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        let mut header = vec!["class".to_string()];
        header.extend((0..self.classes).map(|c| format!("c{c}")));
        w.write_record(&header)?;
        for c in 0..self.classes {
            let mut row = vec![format!("c{c}")];
            row.extend((0..self.classes).map(|d| match self.get(c, d) {
                Some(v) => v.to_string(),
                None => "NA".to_string(),
            }));
            w.write_record(&row)?;
        }
        w.flush()?;
        Ok(())
    }
}

fn mean(it: impl Iterator<Item = f64>) -> f64 {
    let (sum, n) = it.fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    if n == 0 {
        f64::NAN
    } else {
        sum / n as f64
    }
}

/// Class-wise similarity from precomputed predictions.
///
/// Uses the class-mean factorization: the double mean of dot products
/// equals the dot product of the two class-mean prediction vectors.
pub fn css_from_predictions(
    classes: usize,
    unlabeled: &[PredictionDistribution],
    unlabeled_labels: &[usize],
    labeled: &[PredictionDistribution],
    labeled_labels: &[usize],
) -> Result<CssMatrix> {
    if unlabeled.len() != unlabeled_labels.len() || labeled.len() != labeled_labels.len() {
        return Err(Error::InvalidInput("prediction/label count mismatch".into()));
    }
    let class_means = |preds: &[PredictionDistribution], labels: &[usize]| -> Result<Vec<Option<Vec<f64>>>> {
        let mut sums = vec![vec![0.0; classes]; classes];
        let mut counts = vec![0usize; classes];
        for (p, &y) in preds.iter().zip(labels) {
            if y >= classes || p.classes() != classes {
                return Err(Error::InvalidInput(format!("label {y} or distribution out of range")));
            }
            counts[y] += 1;
            for (s, v) in sums[y].iter_mut().zip(p.probs()) {
                *s += v;
            }
        }
        Ok(sums
            .into_iter()
            .zip(counts)
            .map(|(s, n)| (n > 0).then(|| s.into_iter().map(|v| v / n as f64).collect()))
            .collect())
    };
    let u = class_means(unlabeled, unlabeled_labels)?;
    let l = class_means(labeled, labeled_labels)?;
    let mut scores = Vec::with_capacity(classes * classes);
    for uc in &u {
        for lc in &l {
            scores.push(match (uc, lc) {
                (Some(a), Some(b)) => Some(crate::model::dot(a, b)),
                _ => None,
            });
        }
    }
    Ok(CssMatrix { classes, scores })
}

/// Class-wise similarity of a model between the unlabeled pool (grouped by
/// its evaluation labels) and the union of `labeled` pools.
pub fn css_matrix(model: &ModelParams, unlabeled: &UnlabeledSet, labeled: &[&LabeledSet]) -> Result<CssMatrix> {
    let truth = unlabeled
        .eval_labels
        .as_ref()
        .ok_or_else(|| Error::InvalidInput("class-wise similarity needs evaluation labels".into()))?;
    let u = predict_all(model, &unlabeled.samples)?;
    let mut lp = Vec::new();
    let mut ly = Vec::new();
    for set in labeled {
        lp.extend(predict_all(model, &set.samples)?);
        ly.extend_from_slice(&set.labels);
    }
    css_from_predictions(model.dims().classes, &u, truth, &lp, &ly)
}

/// Gate statistics over a pair sample.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct GateRatioStats {
    /// Fraction of unlabeled samples passing confidence-based node removal.
    pub node_kept: f64,
    /// Pair fractions by (label similarity, dot product above kappa).
    pub similar_close: f64,
    pub similar_far: f64,
    pub dissimilar_close: f64,
    pub dissimilar_far: f64,
    /// Fraction of pairs whose combined gate is open.
    pub combined_open: f64,
    pub pairs: usize,
}

/// Statistics over the full grid of `unlabeled x labeled` pairs.
pub fn gate_ratio_from_predictions(
    unlabeled: &[PredictionDistribution],
    labeled: &[PredictionDistribution],
    labeled_labels: &[usize],
    thresholds: GateThresholds,
) -> Result<GateRatioStats> {
    if unlabeled.is_empty() || labeled.is_empty() {
        return Err(Error::InvalidInput("gate statistics need a nonempty pair sample".into()));
    }
    let gates = crate::gates::batch_gates(unlabeled, labeled, labeled_labels, thresholds)?;
    let mut cells = [0usize; 4];
    let mut open = 0usize;
    for i in 0..unlabeled.len() {
        for j in 0..labeled.len() {
            let g = gates.get(i, j);
            let close = unlabeled[i].dot(&labeled[j]) > thresholds.kappa;
            cells[(usize::from(!g.similar) << 1) | usize::from(!close)] += 1;
            open += usize::from(g.combined);
        }
    }
    let pairs = unlabeled.len() * labeled.len();
    let frac = |n: usize| n as f64 / pairs as f64;
    let kept = unlabeled.iter().filter(|p| cunr_gate(p, thresholds.tau)).count();
    Ok(GateRatioStats {
        node_kept: kept as f64 / unlabeled.len() as f64,
        similar_close: frac(cells[0]),
        similar_far: frac(cells[1]),
        dissimilar_close: frac(cells[2]),
        dissimilar_far: frac(cells[3]),
        combined_open: frac(open),
        pairs,
    })
}

pub fn gate_ratio_stats(
    model: &ModelParams,
    unlabeled: &UnlabeledSet,
    labeled: &[&LabeledSet],
    thresholds: GateThresholds,
) -> Result<GateRatioStats> {
    let u = predict_all(model, &unlabeled.samples)?;
    let mut lp = Vec::new();
    let mut ly = Vec::new();
    for set in labeled {
        lp.extend(predict_all(model, &set.samples)?);
        ly.extend_from_slice(&set.labels);
    }
    gate_ratio_from_predictions(&u, &lp, &ly, thresholds)
}
