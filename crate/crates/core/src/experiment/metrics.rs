//! Classifier metrics.

use crate::error::{Error, Result};

/// Rank-based area under the ROC curve: the fraction of (positive,
/// negative) pairs ordered correctly by score, ties counting one half.
/// Labels must be 0 or 1 and both classes must be present.
pub fn compute_auc(scores: &[f64], labels: &[f64]) -> Result<f64> {
    if scores.len() != labels.len() {
        return Err(Error::DimensionMismatch {
            left: scores.len(),
            right: labels.len(),
        });
    }
    if let Some(i) = scores.iter().position(|s| s.is_nan()) {
        return Err(Error::NonFinite { index: i as u64 });
    }
    if labels.iter().any(|&l| l != 0.0 && l != 1.0) {
        return Err(Error::invalid("labels", "must be 0 or 1"));
    }
    let positives = labels.iter().filter(|&&l| l == 1.0).count();
    let negatives = labels.len() - positives;
    if positives == 0 || negatives == 0 {
        return Err(Error::invalid("labels", "both classes must be present"));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    // Twice the rank sum of the positives, with tied blocks sharing their
    // mean rank; doubling keeps every quantity an integer.
    let mut twice_rank_sum: u128 = 0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        // Ranks i+1..=j+1 average to (i + j + 2)/2.
        let block_pos = order[i..=j].iter().filter(|&&k| labels[k] == 1.0).count() as u128;
        twice_rank_sum += block_pos * (i + j + 2) as u128;
        i = j + 1;
    }
    let p = positives as u128;
    // Twice the Mann-Whitney U statistic: correct pairs count 2, ties 1.
    let twice_u = twice_rank_sum - p * (p + 1);
    Ok(twice_u as f64 / (2 * positives * negatives) as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn examples() {
        assert_eq!(compute_auc(&[0.1, 0.2, 0.8, 0.9], &[0.0, 0.0, 1.0, 1.0]).unwrap(), 1.0);
        assert_eq!(compute_auc(&[0.5; 4], &[0.0, 1.0, 0.0, 1.0]).unwrap(), 0.5);
        assert_eq!(compute_auc(&[0.1, 0.4, 0.35, 0.8], &[0.0, 0.0, 1.0, 1.0]).unwrap(), 0.75);
        assert_eq!(compute_auc(&[0.9, 0.1], &[0.0, 1.0]).unwrap(), 0.0);
    }

    #[test]
    fn errors() {
        assert!(compute_auc(&[0.1, 0.2], &[1.0, 1.0]).is_err());
        assert!(compute_auc(&[0.1], &[1.0, 0.0]).is_err());
        assert!(compute_auc(&[0.1, 0.2], &[2.0, 0.0]).is_err());
        assert!(compute_auc(&[f64::NAN, 0.2], &[1.0, 0.0]).is_err());
    }
}
