//! Pairwise label graph between unlabeled and labeled samples, refined by
//! confidence-based node removal and dissimilarity-based edge pruning.
//!
//! Rows of every gate grid are unlabeled target samples; columns are labeled
//! samples (target, pseudo-labeled or source). The full affinity matrix over
//! the datasets is never materialized: gates are evaluated per mini-batch.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{predicted_label, PredictionDistribution};

/// Confidence threshold `tau` for node removal and similarity threshold
/// `kappa` for edge pruning. Both comparisons are strict.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GateThresholds {
    pub tau: f64,
    pub kappa: f64,
}

impl Default for GateThresholds {
    fn default() -> Self {
        Self {
            tau: 0.95,
            kappa: 0.20,
        }
    }
}

impl GateThresholds {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.tau) {
            return Err(Error::config("tau", format!("{} not in [0, 1]", self.tau)));
        }
        if !self.kappa.is_finite() {
            return Err(Error::config("kappa", "must be finite"));
        }
        Ok(())
    }
}

/// Gate state of one (unlabeled, labeled) pair.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct PairGate {
    /// Predicted class of the unlabeled sample equals the labeled class.
    pub similar: bool,
    /// Unlabeled node survives confidence-based removal.
    pub node_kept: bool,
    /// Edge survives dissimilarity-based pruning.
    pub edge_kept: bool,
    /// `node_kept AND edge_kept`; the pair contributes to clustering losses.
    pub combined: bool,
}

/// `1{argmax p == y}`.
pub fn pairwise_label_similarity(p_unlabeled: &PredictionDistribution, y_labeled: usize) -> Result<bool> {
    if y_labeled >= p_unlabeled.classes() {
        return Err(Error::InvalidInput(format!(
            "label {y_labeled} out of range for {} classes",
            p_unlabeled.classes()
        )));
    }
    Ok(predicted_label(p_unlabeled) == y_labeled)
}

/// `1{max_k p[k] > tau}`.
pub fn cunr_gate(p_unlabeled: &PredictionDistribution, tau: f64) -> bool {
    p_unlabeled.confidence() > tau
}

/// `NOT a OR 1{p_i . p_j > kappa}`.
pub fn pdep_gate(
    similar: bool,
    p_i: &PredictionDistribution,
    p_j: &PredictionDistribution,
    kappa: f64,
) -> Result<bool> {
    if p_i.classes() != p_j.classes() {
        return Err(Error::InvalidInput(format!(
            "distribution lengths differ: {} vs {}",
            p_i.classes(),
            p_j.classes()
        )));
    }
    Ok(!similar || p_i.dot(p_j) > kappa)
}

pub fn combined_gate(node_kept: bool, edge_kept: bool) -> bool {
    node_kept && edge_kept
}

/// Gates over an unlabeled x labeled batch grid, row-major.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GateMatrix {
    rows: usize,
    cols: usize,
    gates: Vec<PairGate>,
}

impl GateMatrix {
    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn get(&self, i: usize, j: usize) -> PairGate {
        self.gates[i * self.cols + j]
    }

    pub fn iter(&self) -> impl Iterator<Item = &PairGate> {
        self.gates.iter()
    }

    /// Fraction of pairs whose combined gate is open.
    pub fn open_fraction(&self) -> f64 {
        if self.gates.is_empty() {
            return 0.0;
        }
        self.gates.iter().filter(|g| g.combined).count() as f64 / self.gates.len() as f64
    }

    /// Grid with no rows or no columns; contributes nothing.
    pub fn empty(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            gates: vec![PairGate::default(); rows * cols],
        }
    }
}

/// Evaluates all four gates for every (unlabeled, labeled) pair.
///
/// Per-row quantities (`argmax`, confidence) are computed once; the result is
/// identical to composing the scalar gates in a double loop.
pub fn batch_gates(
    unlabeled: &[PredictionDistribution],
    labeled: &[PredictionDistribution],
    labels: &[usize],
    thresholds: GateThresholds,
) -> Result<GateMatrix> {
    if unlabeled.is_empty() || labeled.is_empty() {
        return Err(Error::InvalidInput("gate batch must be nonempty".into()));
    }
    if labeled.len() != labels.len() {
        return Err(Error::InvalidInput(format!(
            "{} labeled predictions but {} labels",
            labeled.len(),
            labels.len()
        )));
    }
    let classes = unlabeled[0].classes();
    if let Some(p) = unlabeled.iter().chain(labeled).find(|p| p.classes() != classes) {
        return Err(Error::InvalidInput(format!(
            "distribution lengths differ: {} vs {classes}",
            p.classes()
        )));
    }
    if let Some(&y) = labels.iter().find(|&&y| y >= classes) {
        return Err(Error::InvalidInput(format!(
            "label {y} out of range for {classes} classes"
        )));
    }

    let mut gates = Vec::with_capacity(unlabeled.len() * labeled.len());
    for p_i in unlabeled {
        let y_hat = predicted_label(p_i);
        let node_kept = cunr_gate(p_i, thresholds.tau);
        for (p_j, &y_j) in labeled.iter().zip(labels) {
            let similar = y_hat == y_j;
            let edge_kept = !similar || p_i.dot(p_j) > thresholds.kappa;
            gates.push(PairGate {
                similar,
                node_kept,
                edge_kept,
                combined: node_kept && edge_kept,
            });
        }
    }
    Ok(GateMatrix {
        rows: unlabeled.len(),
        cols: labeled.len(),
        gates,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn dist(v: &[f64]) -> PredictionDistribution {
        PredictionDistribution::new(v.to_vec()).unwrap()
    }

    #[test]
    fn label_similarity_examples() {
        let p = dist(&[0.1, 0.8, 0.1]);
        assert!(pairwise_label_similarity(&p, 1).unwrap());
        assert!(!pairwise_label_similarity(&p, 2).unwrap());
        assert!(pairwise_label_similarity(&dist(&[0.5, 0.5]), 0).unwrap());
        assert!(pairwise_label_similarity(&p, 3).is_err());
    }

    #[test]
    fn cunr_examples() {
        assert!(cunr_gate(&dist(&[0.96, 0.04]), 0.95));
        assert!(!cunr_gate(&dist(&[0.95, 0.05]), 0.95));
        assert!(!cunr_gate(&dist(&[0.6, 0.4]), 0.95));
    }

    #[test]
    fn pdep_examples() {
        assert!(pdep_gate(true, &dist(&[0.7, 0.3]), &dist(&[0.6, 0.4]), 0.2).unwrap());
        assert!(!pdep_gate(true, &dist(&[0.9, 0.1]), &dist(&[0.1, 0.9]), 0.2).unwrap());
        assert!(pdep_gate(false, &dist(&[0.9, 0.1]), &dist(&[0.1, 0.9]), 0.99).unwrap());
        assert!(pdep_gate(true, &dist(&[1.0]), &dist(&[0.5, 0.5]), 0.2).is_err());
    }

    #[test]
    fn combined_examples() {
        assert!(combined_gate(true, true));
        assert!(!combined_gate(true, false));
        assert!(!combined_gate(false, true));
        assert!(!combined_gate(false, false));
    }

    #[test]
    fn single_pair_matches_scalar_path() {
        let u = dist(&[0.97, 0.03]);
        let l = dist(&[0.8, 0.2]);
        let t = GateThresholds::default();
        let g = batch_gates(&[u.clone()], &[l.clone()], &[0], t).unwrap().get(0, 0);
        let a = pairwise_label_similarity(&u, 0).unwrap();
        let gi = cunr_gate(&u, t.tau);
        let gt = pdep_gate(a, &u, &l, t.kappa).unwrap();
        assert_eq!(
            g,
            PairGate {
                similar: a,
                node_kept: gi,
                edge_kept: gt,
                combined: combined_gate(gi, gt)
            }
        );
    }

    #[test]
    fn low_confidence_closes_everything() {
        let u = vec![dist(&[0.5, 0.3, 0.2]); 3];
        let l = vec![dist(&[0.2, 0.2, 0.6]); 4];
        let m = batch_gates(&u, &l, &[0, 1, 2, 0], GateThresholds::default()).unwrap();
        assert!(m.iter().all(|g| !g.combined));
        assert_eq!(m.open_fraction(), 0.0);
    }

    #[test]
    fn empty_batch_rejected() {
        let t = GateThresholds::default();
        assert!(batch_gates(&[], &[dist(&[1.0, 0.0])], &[0], t).is_err());
        assert!(batch_gates(&[dist(&[1.0, 0.0])], &[], &[], t).is_err());
    }

    fn arb_dist(k: usize) -> impl Strategy<Value = PredictionDistribution> {
        prop::collection::vec(0.001f64..1.0, k).prop_map(|v| {
            let s: f64 = v.iter().sum();
            PredictionDistribution::new(v.iter().map(|x| x / s).collect()).unwrap()
        })
    }

    proptest! {
        #[test]
        fn cunr_monotone_in_tau(p in arb_dist(4), t1 in 0.0f64..1.0, t2 in 0.0f64..1.0) {
            let (lo, hi) = if t1 <= t2 { (t1, t2) } else { (t2, t1) };
            prop_assert!(cunr_gate(&p, lo) >= cunr_gate(&p, hi));
        }

        #[test]
        fn pdep_monotone_in_kappa(p in arb_dist(3), q in arb_dist(3), k1 in 0.0f64..1.0, k2 in 0.0f64..1.0) {
            let (lo, hi) = if k1 <= k2 { (k1, k2) } else { (k2, k1) };
            prop_assert!(pdep_gate(true, &p, &q, lo).unwrap() >= pdep_gate(true, &p, &q, hi).unwrap());
        }

        #[test]
        fn gate_invariants_hold(
            u in prop::collection::vec(arb_dist(3), 1..5),
            l in prop::collection::vec(arb_dist(3), 1..6),
            seed in 0usize..1000,
            tau in 0.0f64..1.0,
        ) {
            let labels: Vec<usize> = (0..l.len()).map(|j| (j * 7 + seed) % 3).collect();
            let m = batch_gates(&u, &l, &labels, GateThresholds { tau, kappa: 0.2 }).unwrap();
            for g in m.iter() {
                prop_assert_eq!(g.combined, g.node_kept && g.edge_kept);
                if !g.similar {
                    prop_assert!(g.edge_kept);
                }
            }
            // order independence: reversing the labeled batch reverses the columns
            let mut lr = l.clone();
            lr.reverse();
            let mut yr = labels.clone();
            yr.reverse();
            let mr = batch_gates(&u, &lr, &yr, GateThresholds { tau, kappa: 0.2 }).unwrap();
            for i in 0..u.len() {
                for j in 0..l.len() {
                    prop_assert_eq!(m.get(i, j), mr.get(i, l.len() - 1 - j));
                }
            }
        }
    }
}
