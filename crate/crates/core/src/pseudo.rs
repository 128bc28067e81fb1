//! Confidence-thresholded pseudo-label selection over the unlabeled pool.

use std::path::Path;

use crate::data::UnlabeledSet;
use crate::error::Result;
use crate::model::{ModelParams, PredictionDistribution};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PseudoEntry {
    /// Index into the unlabeled pool.
    pub index: usize,
    pub label: usize,
    /// Top-class probability when the entry was selected.
    pub confidence: f64,
}

/// Pseudo-labeled subset of the unlabeled pool, ordered by pool index.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct PseudoLabeledSet {
    pub entries: Vec<PseudoEntry>,
}

impl PseudoLabeledSet {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Fraction of entries whose label matches `truth`, or `None` when the
    /// set is empty.
    pub fn accuracy(&self, truth: &[usize]) -> Option<f64> {
        if self.entries.is_empty() {
            return None;
        }
        let hits = self
            .entries
            .iter()
            .filter(|e| truth.get(e.index) == Some(&e.label))
            .count();
        Some(hits as f64 / self.entries.len() as f64)
    }

    /// Writes `index,pseudo_label,confidence` rows.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(["index", "pseudo_label", "confidence"])?;
        for e in &self.entries {
            w.write_record([e.index.to_string(), e.label.to_string(), e.confidence.to_string()])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Keeps every unlabeled sample whose clean top-class probability is
/// strictly above `tau_prime`, labeled with its argmax.
pub fn select_pseudo_labels(
    model: &ModelParams,
    unlabeled: &UnlabeledSet,
    tau_prime: f64,
) -> Result<PseudoLabeledSet> {
    let preds = unlabeled
        .samples
        .iter()
        .map(|x| model.predict(x))
        .collect::<Result<Vec<_>>>()?;
    Ok(select_from_predictions(&preds, tau_prime))
}

/// Selection on precomputed clean predictions; entry indices refer to
/// positions in `preds`.
pub fn select_from_predictions(preds: &[PredictionDistribution], tau_prime: f64) -> PseudoLabeledSet {
    let entries = preds
        .iter()
        .enumerate()
        .filter(|(_, p)| p.confidence() > tau_prime)
        .map(|(index, p)| PseudoEntry {
            index,
            label: p.predicted_label(),
            confidence: p.confidence(),
        })
        .collect();
    PseudoLabeledSet { entries }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ModelDims;

    // hidden = tanh(x), raw feature = hidden, prototypes = identity
    fn model() -> ModelParams {
        let dims = ModelDims {
            input_dim: 2,
            hidden_dim: 2,
            feature_dim: 2,
            classes: 2,
        };
        let l = dims.layout();
        let mut v = vec![0.0; l.len()];
        v[l.w1.start] = 1.0;
        v[l.w1.start + 3] = 1.0;
        v[l.w2.start] = 1.0;
        v[l.w2.start + 3] = 1.0;
        v[l.prototypes.start] = 1.0;
        v[l.prototypes.start + 3] = 1.0;
        ModelParams::from_values(dims, 0.05, v).unwrap()
    }

    fn pool(samples: Vec<Vec<f64>>) -> UnlabeledSet {
        UnlabeledSet {
            samples,
            eval_labels: None,
        }
    }

    #[test]
    fn strict_threshold_selection() {
        let m = model();
        let xs = vec![vec![2.0, 0.1], vec![0.05, 0.0], vec![-1.0, 1.0], vec![0.0, 0.0001]];
        let probs: Vec<f64> = xs.iter().map(|x| m.predict(x).unwrap().confidence()).collect();
        let set = select_pseudo_labels(&m, &pool(xs.clone()), 0.975).unwrap();
        for (i, &c) in probs.iter().enumerate() {
            let selected = set.entries.iter().any(|e| e.index == i);
            assert_eq!(selected, c > 0.975, "sample {i} confidence {c}");
        }
        for e in &set.entries {
            assert_eq!(e.label, m.predict(&xs[e.index]).unwrap().predicted_label());
            assert!(e.confidence > 0.975);
        }
        // boundary: threshold exactly at a confidence excludes that sample
        let exact = probs[0];
        let set = select_pseudo_labels(&m, &pool(vec![xs[0].clone()]), exact).unwrap();
        assert!(set.is_empty());
    }

    #[test]
    fn selection_examples() {
        let d = |v: &[f64]| PredictionDistribution::new(v.to_vec()).unwrap();
        let set = select_from_predictions(&[d(&[0.98, 0.02])], 0.975);
        assert_eq!(set.len(), 1);
        assert_eq!(set.entries[0].label, 0);
        assert!(select_from_predictions(&[d(&[0.97, 0.03])], 0.975).is_empty());
        let set = select_from_predictions(&[d(&[0.5, 0.5]), d(&[0.01, 0.99]), d(&[0.9, 0.1])], 0.975);
        assert_eq!(set.entries.iter().map(|e| (e.index, e.label)).collect::<Vec<_>>(), vec![(1, 1)]);
        assert_eq!(set.accuracy(&[0, 1, 0]), Some(1.0));
        assert_eq!(set.accuracy(&[0, 0, 0]), Some(0.0));
    }

    #[test]
    fn all_below_gives_empty() {
        let m = model();
        let set = select_pseudo_labels(&m, &pool(vec![vec![0.3, 0.3]; 3]), 0.975).unwrap();
        assert!(set.is_empty());
        assert_eq!(set.accuracy(&[0, 0, 0]), None);
    }

    #[test]
    fn monotone_and_idempotent() {
        let m = model();
        let xs: Vec<Vec<f64>> = (0..40)
            .map(|i| vec![(i as f64 * 0.37).sin(), (i as f64 * 0.91).cos()])
            .collect();
        let u = pool(xs);
        let mut last = usize::MAX;
        for t in [0.0, 0.5, 0.9, 0.95, 0.975, 0.99, 0.999] {
            let a = select_pseudo_labels(&m, &u, t).unwrap();
            assert_eq!(a, select_pseudo_labels(&m, &u, t).unwrap());
            assert!(a.len() <= last);
            last = a.len();
            let mut idx: Vec<_> = a.entries.iter().map(|e| e.index).collect();
            idx.dedup();
            assert_eq!(idx.len(), a.len());
        }
    }
}
