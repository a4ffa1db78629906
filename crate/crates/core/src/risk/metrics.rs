//! Binary classification metrics on probability scores.

use std::cmp::Ordering;

use serde::{Deserialize, Serialize};

use super::{ModelError, Predictor};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MetricsReport {
    pub threshold: f64,
    pub precision: f64,
    pub recall: f64,
    pub auc_roc: f64,
    pub auc_prc: f64,
    pub brier: f64,
    pub n: usize,
    pub n_positive: usize,
    /// Set when nothing scored at or above the threshold, in which case
    /// precision is reported as 1.0.
    pub precision_undefined: bool,
}

fn check_classes(labels: &[u8]) -> Result<(usize, usize), ModelError> {
    if labels.is_empty() {
        return Err(ModelError::EmptyEvaluation);
    }
    let pos = labels.iter().filter(|&&y| y == 1).count();
    let neg = labels.len() - pos;
    if pos == 0 || neg == 0 {
        return Err(ModelError::AucUndefined);
    }
    Ok((pos, neg))
}

/// Mann–Whitney U statistic over all positive/negative pairs, ties
/// counted as one half, computed from mid-ranks.
pub fn auc_roc(scores: &[f64], labels: &[u8]) -> Result<f64, ModelError> {
    let (pos, neg) = check_classes(labels)?;
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| scores[a].partial_cmp(&scores[b]).unwrap_or(Ordering::Equal));
    let mut rank_sum_pos = 0.0;
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && scores[idx[j + 1]] == scores[idx[i]] {
            j += 1;
        }
        // Ranks i+1 ..= j+1 share their mean.
        let mid = (i + j + 2) as f64 / 2.0;
        for &k in &idx[i..=j] {
            if labels[k] == 1 {
                rank_sum_pos += mid;
            }
        }
        i = j + 1;
    }
    let pos_f = pos as f64;
    let u = rank_sum_pos - pos_f * (pos_f + 1.0) / 2.0;
    Ok(u / (pos_f * neg as f64))
}

/// Average precision: precision at each distinct-score threshold, weighted
/// by the recall gained there. Tied scores enter together, so the value
/// does not depend on row order.
pub fn average_precision(scores: &[f64], labels: &[u8]) -> Result<f64, ModelError> {
    let (pos, _) = check_classes(labels)?;
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| scores[b].partial_cmp(&scores[a]).unwrap_or(Ordering::Equal));
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut ap = 0.0;
    let mut i = 0;
    while i < idx.len() {
        let mut group_tp = 0;
        let mut j = i;
        while j < idx.len() && scores[idx[j]] == scores[idx[i]] {
            if labels[idx[j]] == 1 {
                group_tp += 1;
            } else {
                fp += 1;
            }
            j += 1;
        }
        tp += group_tp;
        if group_tp > 0 {
            let precision = tp as f64 / (tp + fp) as f64;
            ap += precision * group_tp as f64 / pos as f64;
        }
        i = j;
    }
    Ok(ap)
}

pub fn brier_score(scores: &[f64], labels: &[u8]) -> Result<f64, ModelError> {
    if labels.is_empty() {
        return Err(ModelError::EmptyEvaluation);
    }
    let sum: f64 = scores
        .iter()
        .zip(labels)
        .map(|(p, &y)| (p - f64::from(y)).powi(2))
        .sum();
    Ok(sum / labels.len() as f64)
}

pub fn metrics_from_scores(
    scores: &[f64],
    labels: &[u8],
    threshold: f64,
) -> Result<MetricsReport, ModelError> {
    let (pos, _) = check_classes(labels)?;
    let (mut tp, mut fp) = (0usize, 0usize);
    for (&s, &y) in scores.iter().zip(labels) {
        if s >= threshold {
            if y == 1 {
                tp += 1;
            } else {
                fp += 1;
            }
        }
    }
    let precision_undefined = tp + fp == 0;
    Ok(MetricsReport {
        threshold,
        precision: if precision_undefined { 1.0 } else { tp as f64 / (tp + fp) as f64 },
        recall: tp as f64 / pos as f64,
        auc_roc: auc_roc(scores, labels)?,
        auc_prc: average_precision(scores, labels)?,
        brier: brier_score(scores, labels)?,
        n: labels.len(),
        n_positive: pos,
        precision_undefined,
    })
}

pub fn evaluate<P: Predictor + ?Sized>(
    model: &P,
    rows: &[&[f64]],
    labels: &[u8],
    threshold: f64,
) -> Result<MetricsReport, ModelError> {
    if let Some(r) = rows.iter().find(|r| r.len() != model.width()) {
        return Err(ModelError::Shape { expected: model.width(), got: r.len() });
    }
    let scores: Vec<f64> = rows.iter().map(|x| model.predict(x)).collect();
    metrics_from_scores(&scores, labels, threshold)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    /// Pair-counting oracle, independent of the rank formula.
    fn auc_pairs(scores: &[f64], labels: &[u8]) -> f64 {
        let mut num = 0.0;
        let mut den = 0.0;
        for (i, &yi) in labels.iter().enumerate() {
            for (j, &yj) in labels.iter().enumerate() {
                if yi == 1 && yj == 0 {
                    den += 1.0;
                    num += match scores[i].partial_cmp(&scores[j]).unwrap() {
                        Ordering::Greater => 1.0,
                        Ordering::Equal => 0.5,
                        Ordering::Less => 0.0,
                    };
                }
            }
        }
        num / den
    }

    #[test]
    fn perfect_ranking_and_brier() {
        let s = [0.9, 0.8, 0.3, 0.2];
        let y = [1, 1, 0, 0];
        assert_eq!(auc_roc(&s, &y).unwrap(), 1.0);
        assert!((brier_score(&s, &y).unwrap() - 0.045).abs() < 1e-12);
    }

    #[test]
    fn tie_counts_half() {
        let s = [0.9, 0.7, 0.7, 0.3, 0.1];
        let y = [1, 0, 1, 0, 0];
        assert!((auc_roc(&s, &y).unwrap() - 5.5 / 6.0).abs() < 1e-12);
        assert!((auc_pairs(&s, &y) - 5.5 / 6.0).abs() < 1e-12);
    }

    #[test]
    fn exact_probabilities_zero_brier() {
        assert_eq!(brier_score(&[1.0, 0.0, 1.0], &[1, 0, 1]).unwrap(), 0.0);
    }

    #[test]
    fn average_precision_by_hand() {
        // Ranked: + - + -, precision at the positives 1/1 and 2/3.
        let ap = average_precision(&[0.9, 0.8, 0.7, 0.1], &[1, 0, 1, 0]).unwrap();
        assert!((ap - (1.0 + 2.0 / 3.0) / 2.0).abs() < 1e-12);
    }

    #[test]
    fn single_class_undefined() {
        assert_eq!(auc_roc(&[0.1, 0.2], &[1, 1]), Err(ModelError::AucUndefined));
        assert_eq!(metrics_from_scores(&[0.1], &[0], 0.5).unwrap_err(), ModelError::AucUndefined);
    }

    #[test]
    fn precision_flag_when_nothing_predicted() {
        let r = metrics_from_scores(&[0.1, 0.2], &[1, 0], 0.5).unwrap();
        assert!(r.precision_undefined);
        assert_eq!(r.precision, 1.0);
        assert_eq!(r.recall, 0.0);
    }

    fn scored_labels() -> impl Strategy<Value = (Vec<f64>, Vec<u8>)> {
        prop::collection::vec((0u8..20, 0u8..2), 2..60)
            .prop_map(|v| {
                let s: Vec<f64> = v.iter().map(|(a, _)| f64::from(*a) / 20.0).collect();
                let y: Vec<u8> = v.iter().map(|(_, b)| *b).collect();
                (s, y)
            })
            .prop_filter("both classes", |(_, y)| y.contains(&0) && y.contains(&1))
    }

    proptest! {
        #[test]
        fn auc_matches_pair_oracle((s, y) in scored_labels()) {
            prop_assert!((auc_roc(&s, &y).unwrap() - auc_pairs(&s, &y)).abs() < 1e-12);
        }

        #[test]
        fn auc_invariant_under_monotone_transform((s, y) in scored_labels()) {
            let t: Vec<f64> = s.iter().map(|v| (3.0 * v).exp() - 7.0).collect();
            prop_assert!((auc_roc(&s, &y).unwrap() - auc_roc(&t, &y).unwrap()).abs() < 1e-12);
            prop_assert!((average_precision(&s, &y).unwrap() - average_precision(&t, &y).unwrap()).abs() < 1e-12);
        }

        #[test]
        fn permutation_invariance((s, y) in scored_labels(), seed in any::<u64>()) {
            use rand::{seq::SliceRandom, SeedableRng};
            let mut idx: Vec<usize> = (0..s.len()).collect();
            idx.shuffle(&mut rand_chacha::ChaCha8Rng::seed_from_u64(seed));
            let ps: Vec<f64> = idx.iter().map(|&i| s[i]).collect();
            let py: Vec<u8> = idx.iter().map(|&i| y[i]).collect();
            let a = metrics_from_scores(&s, &y, 0.5).unwrap();
            let b = metrics_from_scores(&ps, &py, 0.5).unwrap();
            prop_assert!((a.auc_roc - b.auc_roc).abs() < 1e-12);
            prop_assert!((a.auc_prc - b.auc_prc).abs() < 1e-12);
            prop_assert!((a.brier - b.brier).abs() < 1e-12);
            prop_assert_eq!(a.precision, b.precision);
            prop_assert_eq!(a.recall, b.recall);
        }

        #[test]
        fn constant_mean_brier_is_label_variance((_, y) in scored_labels()) {
            let mean = y.iter().map(|&v| f64::from(v)).sum::<f64>() / y.len() as f64;
            let var = y.iter().map(|&v| (f64::from(v) - mean).powi(2)).sum::<f64>() / y.len() as f64;
            let s = vec![mean; y.len()];
            prop_assert!((brier_score(&s, &y).unwrap() - var).abs() < 1e-9);
        }
    }
}
