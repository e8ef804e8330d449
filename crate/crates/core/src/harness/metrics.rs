use super::HarnessError;

/// ROC-AUC from average ranks (Mann-Whitney U); ties count one half.
pub fn evaluate_auc(scores: &[f64], labels: &[u8]) -> Result<f64, HarnessError> {
    if scores.len() != labels.len() {
        return Err(HarnessError::LengthMismatch {
            scores: scores.len(),
            labels: labels.len(),
        });
    }
    if let Some(&bad) = labels.iter().find(|&&y| y > 1) {
        return Err(HarnessError::Label(bad));
    }
    let positives = labels.iter().filter(|&&y| y == 1).count();
    let negatives = labels.len() - positives;
    if positives == 0 || negatives == 0 {
        return Err(HarnessError::SingleClass { positives, negatives });
    }

    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    let mut pos_rank_sum = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        // 1-based ranks i+1..=j+1 share their mean
        let rank = (i + j) as f64 / 2.0 + 1.0;
        pos_rank_sum += rank * order[i..=j].iter().filter(|&&k| labels[k] == 1).count() as f64;
        i = j + 1;
    }
    let p = positives as f64;
    Ok((pos_rank_sum - p * (p + 1.0) / 2.0) / (p * negatives as f64))
}

/// Fraction of `score > threshold` agreeing with `label == 1`.
pub fn accuracy(scores: &[f64], labels: &[u8], threshold: f64) -> Result<f64, HarnessError> {
    if scores.len() != labels.len() {
        return Err(HarnessError::LengthMismatch {
            scores: scores.len(),
            labels: labels.len(),
        });
    }
    if scores.is_empty() {
        return Ok(f64::NAN);
    }
    let hits = scores
        .iter()
        .zip(labels)
        .filter(|(s, &y)| (**s > threshold) == (y == 1))
        .count();
    Ok(hits as f64 / scores.len() as f64)
}

/// Standard deviation with divisor `n`; `0` for a single value.
pub fn population_std(xs: &[f64]) -> f64 {
    if xs.len() < 2 {
        return 0.0;
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    (xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    /// Direct count over positive/negative pairs.
    fn pairwise_auc(scores: &[f64], labels: &[u8]) -> f64 {
        let mut wins = 0.0;
        let mut pairs = 0.0;
        for (i, &yi) in labels.iter().enumerate() {
            for (j, &yj) in labels.iter().enumerate() {
                if yi == 1 && yj == 0 {
                    pairs += 1.0;
                    if scores[i] > scores[j] {
                        wins += 1.0;
                    } else if scores[i] == scores[j] {
                        wins += 0.5;
                    }
                }
            }
        }
        wins / pairs
    }

    #[test]
    fn worked_examples() {
        assert_eq!(evaluate_auc(&[0.1, 0.4, 0.35, 0.8], &[0, 0, 1, 1]).unwrap(), 0.75);
        assert_eq!(evaluate_auc(&[0.1, 0.2, 0.8, 0.9], &[0, 0, 1, 1]).unwrap(), 1.0);
        assert_eq!(evaluate_auc(&[0.3; 5], &[0, 1, 0, 1, 1]).unwrap(), 0.5);
    }

    #[test]
    fn rejects_bad_input() {
        assert!(matches!(evaluate_auc(&[0.1, 0.2], &[1, 1]), Err(HarnessError::SingleClass { .. })));
        assert!(evaluate_auc(&[0.1], &[1, 0]).is_err());
        assert!(evaluate_auc(&[0.1, 0.2], &[0, 2]).is_err());
    }

    #[test]
    fn std_conventions() {
        assert_eq!(population_std(&[0.7]), 0.0);
        assert!((population_std(&[1.0, 3.0]) - 1.0).abs() < 1e-15);
        assert_eq!(accuracy(&[0.2, -1.0, 3.0], &[1, 0, 0], 0.0).unwrap(), 2.0 / 3.0);
    }

    proptest! {
        #[test]
        fn matches_pairwise_count(data in proptest::collection::vec((0..6u8, any::<bool>()), 2..40)) {
            let scores: Vec<f64> = data.iter().map(|(s, _)| *s as f64 * 0.25).collect();
            let labels: Vec<u8> = data.iter().map(|(_, y)| u8::from(*y)).collect();
            prop_assume!(labels.contains(&0) && labels.contains(&1));
            let auc = evaluate_auc(&scores, &labels).unwrap();
            prop_assert!((auc - pairwise_auc(&scores, &labels)).abs() < 1e-12);
        }
    }
}
