//! Evaluation metrics. All functions are pure.

use ndarray::{Array2, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numeric::{logit, sigmoid};

/// Default false-positive budget for the task metric.
pub const DEFAULT_FPR_CAP: f64 = 0.05;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub fidelity: f64,
    pub concept_accuracy: f64,
    /// TPR at 5% FPR; absent when the labels hold a single class.
    pub task_tpr_at_fpr: Option<f64>,
    pub completeness: Option<f64>,
    pub n_rows: usize,
    pub n_concepts: usize,
}

/// `1 − mean |ŷ − y|`.
pub fn fidelity(pred: &[f64], target: &[f64]) -> Result<f64> {
    if pred.len() != target.len() {
        return Err(Error::Dimension(format!(
            "fidelity over {} predictions and {} targets",
            pred.len(),
            target.len()
        )));
    }
    if pred.is_empty() {
        return Err(Error::InvalidArgument("fidelity of an empty set".into()));
    }
    let mae = pred.iter().zip(target).map(|(p, t)| (p - t).abs()).sum::<f64>() / pred.len() as f64;
    Ok(1.0 - mae)
}

/// Both matrices binarised at 0.5 (ties to 1); per-concept accuracy
/// averaged over concepts.
pub fn concept_accuracy(pred: ArrayView2<f64>, target: ArrayView2<f64>) -> Result<f64> {
    if pred.dim() != target.dim() {
        return Err(Error::Dimension(format!(
            "concept predictions {:?} vs targets {:?}",
            pred.dim(),
            target.dim()
        )));
    }
    let (m, k) = pred.dim();
    if m == 0 || k == 0 {
        return Err(Error::InvalidArgument("empty concept matrix".into()));
    }
    let mut total = 0.0;
    for j in 0..k {
        let hits = (0..m)
            .filter(|&i| (pred[[i, j]] >= 0.5) == (target[[i, j]] >= 0.5))
            .count();
        total += hits as f64 / m as f64;
    }
    Ok(total / k as f64)
}

/// Largest true-positive rate over all thresholds whose false-positive
/// rate stays within `fpr_cap`, predicting positive when
/// `score >= threshold`.
pub fn tpr_at_fpr(scores: &[f64], labels: &[bool], fpr_cap: f64) -> Result<f64> {
    if scores.len() != labels.len() {
        return Err(Error::Dimension("scores vs labels".into()));
    }
    let n_pos = labels.iter().filter(|&&l| l).count();
    let n_neg = labels.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(Error::InvalidArgument(
            "TPR at FPR needs both classes".into(),
        ));
    }
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    let budget = fpr_cap * n_neg as f64 + 1e-9;
    let (mut tp, mut fp, mut best) = (0usize, 0usize, 0.0f64);
    let mut i = 0;
    while i < idx.len() {
        let t = scores[idx[i]];
        while i < idx.len() && scores[idx[i]] == t {
            if labels[idx[i]] {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        if fp as f64 <= budget {
            best = best.max(tp as f64 / n_pos as f64);
        } else {
            break;
        }
    }
    Ok(best)
}

/// Area under the ROC curve with ties counted as one half.
pub fn roc_auc(scores: &[f64], labels: &[bool]) -> Result<f64> {
    if scores.len() != labels.len() {
        return Err(Error::Dimension("scores vs labels".into()));
    }
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    let n_pos = labels.iter().filter(|&&l| l).count() as f64;
    let n_neg = labels.len() as f64 - n_pos;
    if n_pos == 0.0 || n_neg == 0.0 {
        return Err(Error::InvalidArgument("AUC needs both classes".into()));
    }
    // average ranks over ties
    let mut rank_sum_pos = 0.0;
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && scores[idx[j + 1]] == scores[idx[i]] {
            j += 1;
        }
        let avg_rank = (i + j) as f64 / 2.0 + 1.0;
        for &r in &idx[i..=j] {
            if labels[r] {
                rank_sum_pos += avg_rank;
            }
        }
        i = j + 1;
    }
    Ok((rank_sum_pos - n_pos * (n_pos + 1.0) / 2.0) / (n_pos * n_neg))
}

/// Held-out accuracy of a logistic map from concept logits to the
/// black-box decision (`y_B >= 0.5`). Every fourth row is held out.
pub fn completeness_score(concepts: ArrayView2<f64>, score: &[f64]) -> Result<f64> {
    let (m, k) = concepts.dim();
    if m != score.len() {
        return Err(Error::Dimension("concept rows vs scores".into()));
    }
    if m < 10 {
        return Err(Error::InvalidArgument(format!(
            "completeness needs at least 10 rows, got {m}"
        )));
    }
    let labels: Vec<f64> = score.iter().map(|&s| if s >= 0.5 { 1.0 } else { 0.0 }).collect();
    let pos = labels.iter().sum::<f64>();
    if pos == 0.0 || pos == m as f64 {
        return Err(Error::InvalidArgument(
            "black-box decisions hold a single class".into(),
        ));
    }
    let held_out = |i: usize| i % 4 == 3;
    let train: Vec<usize> = (0..m).filter(|&i| !held_out(i)).collect();
    let test: Vec<usize> = (0..m).filter(|&i| held_out(i)).collect();

    let feats = Array2::from_shape_fn((m, k), |(i, j)| logit(concepts[[i, j]]));
    let mut mean = vec![0.0; k];
    let mut sd = vec![0.0; k];
    for j in 0..k {
        mean[j] = train.iter().map(|&i| feats[[i, j]]).sum::<f64>() / train.len() as f64;
        let var = train.iter().map(|&i| (feats[[i, j]] - mean[j]).powi(2)).sum::<f64>()
            / train.len() as f64;
        sd[j] = if var > 1e-12 { var.sqrt() } else { 1.0 };
    }
    let z = |i: usize, j: usize| (feats[[i, j]] - mean[j]) / sd[j];

    let mut w = vec![0.0; k];
    let mut b = 0.0;
    let lr = 0.5;
    let n = train.len() as f64;
    for _ in 0..2000 {
        let mut gw = vec![0.0; k];
        let mut gb = 0.0;
        for &i in &train {
            let pre = b + (0..k).map(|j| w[j] * z(i, j)).sum::<f64>();
            let err = sigmoid(pre) - labels[i];
            gb += err;
            for j in 0..k {
                gw[j] += err * z(i, j);
            }
        }
        b -= lr * gb / n;
        for j in 0..k {
            w[j] -= lr * gw[j] / n;
        }
    }
    let hits = test
        .iter()
        .filter(|&&i| {
            let pre = b + (0..k).map(|j| w[j] * z(i, j)).sum::<f64>();
            (pre >= 0.0) == (labels[i] == 1.0)
        })
        .count();
    Ok(hits as f64 / test.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn fidelity_examples() {
        assert_eq!(fidelity(&[0.2, 0.7], &[0.2, 0.7]).unwrap(), 1.0);
        assert!((fidelity(&[0.2, 0.6], &[0.3, 0.5]).unwrap() - 0.9).abs() < 1e-12);
        assert_eq!(fidelity(&[0.0, 0.0], &[1.0, 1.0]).unwrap(), 0.0);
        assert!(fidelity(&[0.0], &[1.0, 1.0]).is_err());
    }

    #[test]
    fn concept_accuracy_examples() {
        let c = array![[0.9, 0.1], [0.2, 0.8]];
        assert_eq!(concept_accuracy(c.view(), c.view()).unwrap(), 1.0);
        let pred = array![[0.9, 0.1], [0.2, 0.8]];
        let target = array![[1.0, 1.0], [0.0, 0.0]];
        assert_eq!(concept_accuracy(pred.view(), target.view()).unwrap(), 0.5);
        let pred = array![[0.6], [0.4]];
        let target = array![[0.9], [0.2]];
        assert_eq!(concept_accuracy(pred.view(), target.view()).unwrap(), 1.0);
        // ties at 0.5 binarise to 1
        assert_eq!(
            concept_accuracy(array![[0.5]].view(), array![[1.0]].view()).unwrap(),
            1.0
        );
        assert!(concept_accuracy(array![[0.5]].view(), array![[1.0, 0.0]].view()).is_err());
    }

    #[test]
    fn tpr_examples() {
        let sep = tpr_at_fpr(&[0.9, 0.8, 0.1, 0.2], &[true, true, false, false], 0.05).unwrap();
        assert_eq!(sep, 1.0);

        let mut scores = vec![0.9, 0.7, 0.2, 0.8, 0.5];
        let mut labels = vec![true, true, true, false, false];
        scores.extend(std::iter::repeat_n(0.1, 18));
        labels.extend(std::iter::repeat_n(false, 18));
        let v = tpr_at_fpr(&scores, &labels, 0.05).unwrap();
        assert!((v - 2.0 / 3.0).abs() < 1e-12);
        assert_eq!(tpr_at_fpr(&scores, &labels, 1.0).unwrap(), 1.0);
        assert!(tpr_at_fpr(&[0.1, 0.2], &[true, true], 0.05).is_err());
    }

    #[test]
    fn auc_reference_values() {
        assert_eq!(roc_auc(&[0.1, 0.9], &[false, true]).unwrap(), 1.0);
        assert_eq!(roc_auc(&[0.5, 0.5], &[false, true]).unwrap(), 0.5);
        assert_eq!(roc_auc(&[0.9, 0.1], &[false, true]).unwrap(), 0.0);
    }

    fn sample_scores(m: usize, seed: u64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..m).map(|_| rng.random::<f64>()).collect()
    }

    #[test]
    fn completeness_of_copied_decision() {
        let y = sample_scores(200, 1);
        let c = Array2::from_shape_fn((200, 1), |(i, _)| if y[i] >= 0.5 { 0.95 } else { 0.05 });
        assert!(completeness_score(c.view(), &y).unwrap() > 0.99);
        let flipped = c.mapv(|v| 1.0 - v);
        assert!(completeness_score(flipped.view(), &y).unwrap() > 0.99);
    }

    #[test]
    fn completeness_of_independent_concepts_is_majority_rate() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let m = 2000;
        let y: Vec<f64> = (0..m).map(|_| if rng.random::<f64>() < 0.7 { 0.9 } else { 0.1 }).collect();
        let c = Array2::from_shape_fn((m, 3), |_| rng.random::<f64>());
        // majority-class baseline on the held-out rows of this sample
        let held: Vec<usize> = (0..m).filter(|i| i % 4 == 3).collect();
        let prevalence = held.iter().filter(|&&i| y[i] >= 0.5).count() as f64 / held.len() as f64;
        let baseline = prevalence.max(1.0 - prevalence);
        let got = completeness_score(c.view(), &y).unwrap();
        assert!((got - baseline).abs() < 0.03, "{got} vs {baseline}");
    }

    #[test]
    fn completeness_errors() {
        let c = Array2::from_elem((12, 1), 0.5);
        assert!(completeness_score(c.view(), &[0.9; 12]).is_err());
        assert!(completeness_score(c.view(), &[0.9; 5]).is_err());
    }

    proptest! {
        #[test]
        fn fidelity_in_unit_interval(pairs in proptest::collection::vec((0.0f64..=1.0, 0.0f64..=1.0), 1..50)) {
            let (p, t): (Vec<f64>, Vec<f64>) = pairs.into_iter().unzip();
            let f = fidelity(&p, &t).unwrap();
            prop_assert!((0.0..=1.0).contains(&f));
        }

        #[test]
        fn tpr_monotone_in_cap(seed in 0u64..500, a in 0.0f64..1.0, b in 0.0f64..1.0) {
            let scores = sample_scores(60, seed);
            let labels: Vec<bool> = sample_scores(60, seed + 1000).iter().map(|&v| v < 0.4).collect();
            prop_assume!(labels.iter().any(|&l| l) && labels.iter().any(|&l| !l));
            let (lo, hi) = if a < b { (a, b) } else { (b, a) };
            prop_assert!(tpr_at_fpr(&scores, &labels, lo).unwrap() <= tpr_at_fpr(&scores, &labels, hi).unwrap());
        }

        #[test]
        fn concept_accuracy_row_permutation_invariant(seed in 0u64..500) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let m = 17;
            let p = Array2::from_shape_fn((m, 3), |_| rng.random::<f64>());
            let t = Array2::from_shape_fn((m, 3), |_| rng.random::<f64>());
            let perm: Vec<usize> = (0..m).rev().collect();
            let pp = p.select(ndarray::Axis(0), &perm);
            let tp = t.select(ndarray::Axis(0), &perm);
            prop_assert_eq!(concept_accuracy(p.view(), t.view()).unwrap(), concept_accuracy(pp.view(), tp.view()).unwrap());
        }
    }
}
