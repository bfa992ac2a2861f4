use crate::error::{Error, Result};

fn check_inputs(scores: &[f64], labels: &[u8]) -> Result<()> {
    if scores.len() != labels.len() {
        return Err(Error::Shape {
            context: "scores and labels",
            expected: scores.len(),
            actual: labels.len(),
        });
    }
    if scores.iter().any(|s| s.is_nan()) {
        return Err(Error::Validation("scores contain NaN".into()));
    }
    if labels.iter().any(|&y| y > 1) {
        return Err(Error::Validation("labels must be 0 or 1".into()));
    }
    Ok(())
}

/// Indices sorted by score, ascending.
fn sorted_order(scores: &[f64]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&i, &j| scores[i].total_cmp(&scores[j]));
    order
}

/// Runs of equal scores, ascending, as `(positives, negatives)`.
fn tie_groups(scores: &[f64], labels: &[u8]) -> Vec<(u64, u64)> {
    let order = sorted_order(scores);
    let mut groups = Vec::new();
    let mut i = 0;
    while i < order.len() {
        let s = scores[order[i]];
        let (mut pos, mut neg) = (0u64, 0u64);
        while i < order.len() && scores[order[i]] == s {
            if labels[order[i]] == 1 {
                pos += 1;
            } else {
                neg += 1;
            }
            i += 1;
        }
        groups.push((pos, neg));
    }
    groups
}

/// Area under the ROC curve as the Mann-Whitney statistic
/// `P(s+ > s-) + P(s+ = s-) / 2`, counted exactly.
pub fn auc_roc(scores: &[f64], labels: &[u8]) -> Result<f64> {
    check_inputs(scores, labels)?;
    let mut neg_below = 0u128;
    let mut twice_wins = 0u128;
    let (mut n_pos, mut n_neg) = (0u128, 0u128);
    for (pos, neg) in tie_groups(scores, labels) {
        let (pos, neg) = (pos as u128, neg as u128);
        twice_wins += 2 * pos * neg_below + pos * neg;
        neg_below += neg;
        n_pos += pos;
        n_neg += neg;
    }
    if n_pos == 0 || n_neg == 0 {
        return Err(Error::UndefinedMetric("auc_roc needs both classes"));
    }
    Ok(twice_wins as f64 / (2 * n_pos * n_neg) as f64)
}

/// Average precision: precision at each distinct score cut, weighted by the
/// recall gained there. Tied scores enter together.
pub fn auc_prc(scores: &[f64], labels: &[u8]) -> Result<f64> {
    check_inputs(scores, labels)?;
    let total_pos = labels.iter().filter(|&&y| y == 1).count() as f64;
    if total_pos == 0.0 {
        return Err(Error::UndefinedMetric(
            "auc_prc needs at least one positive",
        ));
    }
    let (mut tp, mut fp) = (0.0, 0.0);
    let mut ap = 0.0;
    for (pos, neg) in tie_groups(scores, labels).into_iter().rev() {
        tp += pos as f64;
        fp += neg as f64;
        if pos > 0 {
            ap += (tp / (tp + fp)) * (pos as f64 / total_pos);
        }
    }
    Ok(ap)
}

pub fn brier(probabilities: &[f64], labels: &[u8]) -> Result<f64> {
    check_inputs(probabilities, labels)?;
    if probabilities.is_empty() {
        return Err(Error::EmptyInput("brier score"));
    }
    if probabilities.iter().any(|p| !(0.0..=1.0).contains(p)) {
        return Err(Error::Validation("probabilities must lie in [0, 1]".into()));
    }
    let total: f64 = probabilities
        .iter()
        .zip(labels)
        .map(|(&p, &y)| (p - y as f64).powi(2))
        .sum();
    Ok(total / probabilities.len() as f64)
}

/// Threshold at which the share of positive predictions matches the label
/// prevalence: the `(1 - prevalence)` quantile of the scores.
pub fn prevalence_threshold(probabilities: &[f64], labels: &[u8]) -> Result<f64> {
    check_inputs(probabilities, labels)?;
    if probabilities.is_empty() {
        return Err(Error::EmptyInput("prevalence threshold"));
    }
    let n = probabilities.len();
    let positives = labels.iter().filter(|&&y| y == 1).count();
    let mut sorted = probabilities.to_vec();
    sorted.sort_by(f64::total_cmp);
    // integer form of floor((1 - prevalence) * n), free of rounding
    let idx = (n - positives).min(n - 1);
    Ok(sorted[idx])
}
