use crate::error::{Error, Result};

/// Area under the ROC curve via the Mann-Whitney U statistic, with tied
/// scores given their average rank.
pub fn auc_roc(scores: &[f64], labels: &[u8]) -> Result<f64> {
    if scores.len() != labels.len() {
        return Err(Error::Invalid(format!(
            "auc_roc: {} scores vs {} labels",
            scores.len(),
            labels.len()
        )));
    }
    if let Some(i) = scores.iter().position(|s| s.is_nan()) {
        return Err(Error::Invalid(format!("auc_roc: score {i} is NaN")));
    }
    let n_pos = labels.iter().filter(|&&l| l == 1).count();
    let n_neg = labels.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(Error::Degenerate("auc_roc needs both classes".into()));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    let mut pos_rank_sum = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i + 1;
        while j < order.len() && scores[order[j]] == scores[order[i]] {
            j += 1;
        }
        // ranks i+1 ..= j share their mean
        let avg_rank = (i + 1 + j) as f64 / 2.0;
        let pos_in_group = order[i..j].iter().filter(|&&k| labels[k] == 1).count();
        pos_rank_sum += avg_rank * pos_in_group as f64;
        i = j;
    }
    let (p, n) = (n_pos as f64, n_neg as f64);
    Ok((pos_rank_sum - p * (p + 1.0) / 2.0) / (p * n))
}

/// Fraction of instances where `score >= threshold` agrees with the label.
pub fn overall_accuracy(scores: &[f64], labels: &[u8], threshold: f64) -> Result<f64> {
    if scores.len() != labels.len() {
        return Err(Error::Invalid("overall_accuracy: length mismatch".into()));
    }
    if scores.is_empty() {
        return Err(Error::Degenerate("overall_accuracy on zero instances".into()));
    }
    let correct = scores
        .iter()
        .zip(labels)
        .filter(|(s, l)| u8::from(**s >= threshold) == **l)
        .count();
    Ok(correct as f64 / scores.len() as f64)
}

/// `(m - m_pop) / m_pop`.
pub fn relative_change(metric: f64, baseline: f64) -> Result<f64> {
    if baseline == 0.0 {
        return Err(Error::Invalid("relative change against a zero baseline".into()));
    }
    Ok((metric - baseline) / baseline)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn pairwise(scores: &[f64], labels: &[u8]) -> f64 {
        let mut num = 0.0;
        let mut den = 0.0;
        for (i, &li) in labels.iter().enumerate() {
            for (j, &lj) in labels.iter().enumerate() {
                if li == 1 && lj == 0 {
                    den += 1.0;
                    if scores[i] > scores[j] {
                        num += 1.0;
                    } else if scores[i] == scores[j] {
                        num += 0.5;
                    }
                }
            }
        }
        num / den
    }

    #[test]
    fn worked_example() {
        assert_eq!(auc_roc(&[0.1, 0.4, 0.35, 0.8], &[0, 0, 1, 1]).unwrap(), 0.75);
    }

    #[test]
    fn separating_and_tied_scores() {
        assert_eq!(auc_roc(&[0.1, 0.2, 0.8, 0.9], &[0, 0, 1, 1]).unwrap(), 1.0);
        assert_eq!(auc_roc(&[0.3; 5], &[0, 1, 0, 1, 1]).unwrap(), 0.5);
        assert!(matches!(auc_roc(&[0.1, 0.2], &[1, 1]), Err(Error::Degenerate(_))));
    }

    #[test]
    fn accuracy_examples() {
        assert_eq!(overall_accuracy(&[0.9, 0.1], &[1, 0], 0.5).unwrap(), 1.0);
        assert_eq!(overall_accuracy(&[0.1, 0.9], &[1, 0], 0.5).unwrap(), 0.0);
        assert_eq!(overall_accuracy(&[0.5, 0.49], &[1, 0], 0.5).unwrap(), 1.0);
    }

    #[test]
    fn relative_change_examples() {
        assert!((relative_change(0.66, 0.5).unwrap() - 0.32).abs() < 1e-12);
        assert_eq!(relative_change(0.5, 0.5).unwrap(), 0.0);
        assert!(relative_change(0.5, 0.0).is_err());
    }

    fn labelled() -> impl Strategy<Value = (Vec<f64>, Vec<u8>)> {
        (2usize..60).prop_flat_map(|n| {
            (
                prop::collection::vec((0u8..10).prop_map(|x| f64::from(x) / 10.0), n),
                prop::collection::vec(0u8..2, n),
            )
        })
        .prop_filter("both classes", |(_, l)| l.contains(&0) && l.contains(&1))
    }

    proptest! {
        #[test]
        fn matches_pairwise_count((scores, labels) in labelled()) {
            prop_assert_eq!(auc_roc(&scores, &labels).unwrap(), pairwise(&scores, &labels));
        }

        #[test]
        fn invariant_under_monotone_transform((scores, labels) in labelled()) {
            let t: Vec<f64> = scores.iter().map(|s| (3.0 * s).exp() - 7.0).collect();
            prop_assert_eq!(auc_roc(&scores, &labels).unwrap(), auc_roc(&t, &labels).unwrap());
        }

        #[test]
        fn negated_scores_complement((scores, labels) in labelled()) {
            let neg: Vec<f64> = scores.iter().map(|s| -s).collect();
            let sum = auc_roc(&scores, &labels).unwrap() + auc_roc(&neg, &labels).unwrap();
            prop_assert!((sum - 1.0).abs() < 1e-12);
        }

        #[test]
        fn accuracy_matches_direct_count((scores, labels) in labelled()) {
            let mut hits = 0;
            for i in 0..scores.len() {
                let pred = if scores[i] >= 0.5 { 1 } else { 0 };
                if pred == labels[i] {
                    hits += 1;
                }
            }
            let want = hits as f64 / scores.len() as f64;
            prop_assert_eq!(overall_accuracy(&scores, &labels, 0.5).unwrap(), want);
        }
    }
}
