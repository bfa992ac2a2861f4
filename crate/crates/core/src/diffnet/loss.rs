//! Cross-entropy losses and their derivatives with respect to logits.

/// Probabilities are clamped to `[EPS_CLIP, 1 - EPS_CLIP]` before the log.
pub const EPS_CLIP: f64 = 1e-7;

pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

pub fn softplus(z: f64) -> f64 {
    if z > 30.0 {
        z + (-z).exp()
    } else {
        z.exp().ln_1p()
    }
}

pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|&z| (z - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / total).collect()
}

pub fn log_sum_exp(logits: &[f64]) -> f64 {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    max + logits.iter().map(|&z| (z - max).exp()).sum::<f64>().ln()
}

fn clamp_probability(p: f64) -> f64 {
    p.clamp(EPS_CLIP, 1.0 - EPS_CLIP)
}

/// `-[y ln p + (1 - y) ln(1 - p)]` on the clamped probability.
pub fn binary_cross_entropy(p: f64, y: f64) -> f64 {
    let p = clamp_probability(p);
    -(y * p.ln() + (1.0 - y) * (1.0 - p).ln())
}

/// Mean of the dimension-wise binary cross-entropies.
pub fn multi_output_mean_bce(probs: &[f64], labels: &[f64]) -> f64 {
    assert_eq!(
        probs.len(),
        labels.len(),
        "probability/label length mismatch"
    );
    if probs.is_empty() {
        return 0.0;
    }
    probs
        .iter()
        .zip(labels)
        .map(|(&p, &y)| binary_cross_entropy(p, y))
        .sum::<f64>()
        / probs.len() as f64
}

/// BCE of `sigmoid(logit)` and its derivative with respect to the logit.
/// The derivative is zero where the clamp is active.
pub fn bce_from_logit(logit: f64, y: f64) -> (f64, f64) {
    let p = sigmoid(logit);
    let loss = binary_cross_entropy(p, y);
    let grad = if !(EPS_CLIP..=1.0 - EPS_CLIP).contains(&p) {
        0.0
    } else {
        p - y
    };
    (loss, grad)
}

/// Softmax cross-entropy `logsumexp(z) - z[label]`.
pub fn softmax_cross_entropy(logits: &[f64], label: usize) -> f64 {
    log_sum_exp(logits) - logits[label]
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    #[test]
    fn bce_closed_forms() {
        assert!((binary_cross_entropy(0.5, 1.0) - std::f64::consts::LN_2).abs() < 1e-15);
        let near_perfect = binary_cross_entropy(1.0 - EPS_CLIP, 1.0);
        assert!(near_perfect <= 1e-6 && near_perfect > 0.0);
        assert_eq!(binary_cross_entropy(1.0, 1.0), near_perfect);
        assert!(binary_cross_entropy(0.0, 1.0).is_finite());
    }

    #[test]
    fn multi_output_matches_scalar_loop() {
        let mut rng = crate::rng::seeded(4);
        let probs: Vec<f64> = (0..10).map(|_| rng.gen_range(0.01..0.99)).collect();
        let labels: Vec<f64> = (0..10).map(|_| rng.gen_range(0..2) as f64).collect();
        let mut total = 0.0;
        for i in 0..10 {
            let term = if labels[i] == 1.0 {
                -probs[i].ln()
            } else {
                -(1.0 - probs[i]).ln()
            };
            total += term;
        }
        assert!((multi_output_mean_bce(&probs, &labels) - total / 10.0).abs() < 1e-12);
    }

    #[test]
    fn logit_gradients_match_finite_differences() {
        let h = 1e-6;
        for &z in &[-3.0, -0.2, 0.0, 0.7, 4.0] {
            for &y in &[0.0, 1.0] {
                let (_, g) = bce_from_logit(z, y);
                let numeric = (bce_from_logit(z + h, y).0 - bce_from_logit(z - h, y).0) / (2.0 * h);
                assert!((g - numeric).abs() < 1e-7);
            }
        }
    }

    #[test]
    fn activation_identities() {
        assert_eq!(sigmoid(0.0), 0.5);
        assert_eq!(softmax(&[1.3, 1.3, 1.3]), vec![1.0 / 3.0; 3]);
        assert!((softplus(0.0) - std::f64::consts::LN_2).abs() < 1e-15);
        assert!(softplus(-800.0) >= 0.0);
        assert!((softmax_cross_entropy(&[0.0, 0.0], 1) - std::f64::consts::LN_2).abs() < 1e-15);
    }
}
