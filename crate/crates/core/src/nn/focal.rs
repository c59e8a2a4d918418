//! Focal loss over softmax probability vectors.
//!
//! `FL = -sum_i alpha_i (1 - p_i)^gamma y_i log(p_i)` with one-hot y, which
//! collapses to `-alpha_t (1 - p_t)^gamma log(p_t)` for true class t. With
//! gamma = 0 and unit alpha this is exactly cross-entropy; that case is
//! computed through a dedicated branch so the reduction holds bit-for-bit.

use crate::types::PATTERN_COUNT;
use thiserror::Error;

/// Clamp floor for log arguments; Eq. 1 is undefined at p = 0.
pub const PROB_EPSILON: f64 = 1e-12;

#[derive(Debug, Error)]
pub enum FocalError {
    #[error("gamma must be finite and nonnegative, got {0}")]
    BadGamma(f64),
    #[error("alpha must have length {expected} with positive entries")]
    BadAlpha { expected: usize },
}

/// Focal loss hyperparameters.
#[derive(Debug, Clone, PartialEq)]
pub struct FocalLossParams {
    pub gamma: f64,
    pub alpha: Vec<f64>,
}

impl FocalLossParams {
    pub fn new(gamma: f64, alpha: Vec<f64>) -> Result<FocalLossParams, FocalError> {
        if !(gamma.is_finite() && gamma >= 0.0) {
            return Err(FocalError::BadGamma(gamma));
        }
        if alpha.is_empty() || alpha.iter().any(|a| !(a.is_finite() && *a > 0.0)) {
            return Err(FocalError::BadAlpha {
                expected: PATTERN_COUNT,
            });
        }
        Ok(FocalLossParams { gamma, alpha })
    }

    /// Plain cross-entropy: gamma 0, unit weights.
    pub fn cross_entropy(classes: usize) -> FocalLossParams {
        FocalLossParams {
            gamma: 0.0,
            alpha: vec![1.0; classes],
        }
    }
}

impl Default for FocalLossParams {
    /// gamma = 0.7, unit alpha over the six pattern classes.
    fn default() -> FocalLossParams {
        FocalLossParams {
            gamma: 0.7,
            alpha: vec![1.0; PATTERN_COUNT],
        }
    }
}

/// Loss value plus whether the epsilon clamp fired.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossOutcome {
    pub value: f64,
    pub clamped: bool,
}

/// Focal loss of a probability vector against a true class index.
pub fn focal_loss(probabilities: &[f64], true_class: usize, params: &FocalLossParams) -> LossOutcome {
    assert!(true_class < probabilities.len(), "true_class out of range");
    assert_eq!(
        params.alpha.len(),
        probabilities.len(),
        "alpha length must match class count"
    );
    let p = probabilities[true_class];
    let clamped = p < PROB_EPSILON;
    let p = p.max(PROB_EPSILON);
    let alpha = params.alpha[true_class];
    let value = if params.gamma == 0.0 {
        // exact cross-entropy branch
        -alpha * p.ln()
    } else {
        -alpha * (1.0 - p).max(0.0).powf(params.gamma) * p.ln()
    };
    LossOutcome {
        value: value.max(0.0),
        clamped,
    }
}

/// Gradient of the focal loss with respect to softmax logits.
///
/// With `p = softmax(z)` and true class t:
/// `dL/dz_j = dL/dp_t * p_t * (delta_tj - p_j)`, where
/// `dL/dp_t = alpha_t * (gamma (1-p_t)^(gamma-1) ln p_t - (1-p_t)^gamma / p_t)`.
/// When the clamp fires the loss is locally flat in z, so the gradient is zero.
pub fn focal_logit_grad(probabilities: &[f64], true_class: usize, params: &FocalLossParams) -> Vec<f64> {
    assert!(true_class < probabilities.len(), "true_class out of range");
    let k = probabilities.len();
    let p_t = probabilities[true_class];
    let alpha = params.alpha[true_class];
    if p_t < PROB_EPSILON {
        return vec![0.0; k];
    }
    if params.gamma == 0.0 {
        // CE gradient: alpha_t * (p_j - delta_tj)
        return (0..k)
            .map(|j| alpha * (probabilities[j] - if j == true_class { 1.0 } else { 0.0 }))
            .collect();
    }
    let q = (1.0 - p_t).max(0.0);
    // d/dp of -alpha q^gamma ln p; both terms vanish as p -> 1
    let dl_dp = if q == 0.0 {
        0.0
    } else {
        alpha * (params.gamma * q.powf(params.gamma - 1.0) * p_t.ln() - q.powf(params.gamma) / p_t)
    };
    (0..k)
        .map(|j| {
            let delta = if j == true_class { 1.0 } else { 0.0 };
            dl_dp * p_t * (delta - probabilities[j])
        })
        .collect()
}

/// Inverse-frequency class weights normalized to mean 1 over present classes.
///
/// Classes with no samples get weight 1 (they contribute no loss terms).
pub fn inverse_frequency_alpha(class_counts: &[u64]) -> Vec<f64> {
    let present: Vec<usize> = (0..class_counts.len())
        .filter(|&i| class_counts[i] > 0)
        .collect();
    if present.is_empty() {
        return vec![1.0; class_counts.len()];
    }
    let raw: Vec<f64> = present
        .iter()
        .map(|&i| 1.0 / class_counts[i] as f64)
        .collect();
    let mean = raw.iter().sum::<f64>() / raw.len() as f64;
    let mut alpha = vec![1.0; class_counts.len()];
    for (slot, w) in present.iter().zip(raw) {
        alpha[*slot] = w / mean;
    }
    alpha
}

#[cfg(test)]
mod tests {
    use super::*;

    fn uniform(k: usize) -> Vec<f64> {
        vec![1.0 / k as f64; k]
    }

    #[test]
    fn gamma_zero_is_cross_entropy() {
        let params = FocalLossParams::cross_entropy(6);
        let mut probs = uniform(6);
        probs[2] = 0.9;
        let rest = 0.1 / 5.0;
        for (i, p) in probs.iter_mut().enumerate() {
            if i != 2 {
                *p = rest;
            }
        }
        let out = focal_loss(&probs, 2, &params);
        assert!((out.value - (-(0.9f64.ln()))).abs() < 1e-15);
        assert!(!out.clamped);
    }

    #[test]
    fn certain_prediction_costs_nothing() {
        for gamma in [0.0, 0.5, 0.7, 2.0] {
            let params = FocalLossParams::new(gamma, vec![1.0; 3]).unwrap();
            let out = focal_loss(&[1.0, 0.0, 0.0], 0, &params);
            assert_eq!(out.value, 0.0);
        }
    }

    #[test]
    fn gamma_point_seven_reference_value() {
        let params = FocalLossParams::new(0.7, vec![1.0, 1.0]).unwrap();
        let out = focal_loss(&[0.9, 0.1], 0, &params);
        let expected = 0.1f64.powf(0.7) * -(0.9f64.ln());
        assert!((out.value - expected).abs() < 1e-15);
        // frozen from 40-digit evaluation of 0.1^0.7 * -ln(0.9)
        assert!((out.value - 0.02102218663777494).abs() < 1e-12);
    }

    #[test]
    fn zero_probability_clamps_and_flags() {
        let params = FocalLossParams::default();
        let out = focal_loss(&[0.0, 1.0, 0.0, 0.0, 0.0, 0.0], 0, &params);
        assert!(out.clamped);
        assert!(out.value.is_finite() && out.value > 0.0);
        let grads = focal_logit_grad(&[0.0, 1.0, 0.0, 0.0, 0.0, 0.0], 0, &params);
        assert!(grads.iter().all(|g| *g == 0.0));
    }

    #[test]
    fn loss_is_non_increasing_in_p_true() {
        let params = FocalLossParams::default();
        let mut last = f64::INFINITY;
        for step in 1..100 {
            let p = step as f64 / 100.0;
            let probs = vec![p, 1.0 - p];
            let params2 = FocalLossParams::new(params.gamma, vec![1.0, 1.0]).unwrap();
            let value = focal_loss(&probs, 0, &params2).value;
            assert!(value <= last + 1e-15, "not monotone at p={p}");
            last = value;
        }
    }

    #[test]
    fn larger_gamma_never_increases_loss() {
        for step in 1..50 {
            let p = step as f64 / 50.0;
            let probs = vec![p, 1.0 - p];
            let g1 = FocalLossParams::new(0.0, vec![1.0, 1.0]).unwrap();
            let g2 = FocalLossParams::new(0.7, vec![1.0, 1.0]).unwrap();
            let g3 = FocalLossParams::new(2.0, vec![1.0, 1.0]).unwrap();
            let l1 = focal_loss(&probs, 0, &g1).value;
            let l2 = focal_loss(&probs, 0, &g2).value;
            let l3 = focal_loss(&probs, 0, &g3).value;
            assert!(l2 <= l1 + 1e-15 && l3 <= l2 + 1e-15);
        }
    }

    #[test]
    fn logit_grad_matches_finite_differences() {
        let softmax = |z: &[f64]| {
            let m = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let exps: Vec<f64> = z.iter().map(|v| (v - m).exp()).collect();
            let s: f64 = exps.iter().sum();
            exps.iter().map(|e| e / s).collect::<Vec<f64>>()
        };
        for gamma in [0.0, 0.7, 2.0] {
            let params = FocalLossParams::new(gamma, vec![0.5, 1.5, 1.0]).unwrap();
            let z = vec![0.3, -1.2, 0.8];
            let probs = softmax(&z);
            let analytic = focal_logit_grad(&probs, 1, &params);
            let eps = 1e-6;
            for j in 0..3 {
                let mut zp = z.clone();
                zp[j] += eps;
                let mut zm = z.clone();
                zm[j] -= eps;
                let lp = focal_loss(&softmax(&zp), 1, &params).value;
                let lm = focal_loss(&softmax(&zm), 1, &params).value;
                let numeric = (lp - lm) / (2.0 * eps);
                assert!(
                    (analytic[j] - numeric).abs() < 1e-8,
                    "gamma {gamma} logit {j}: {} vs {}",
                    analytic[j],
                    numeric
                );
            }
        }
    }

    #[test]
    fn gamma_zero_grad_equals_independent_ce_formula() {
        let probs = vec![0.2, 0.5, 0.1, 0.05, 0.05, 0.1];
        let params = FocalLossParams::cross_entropy(6);
        let ours = focal_logit_grad(&probs, 1, &params);
        for j in 0..6 {
            let ce = probs[j] - if j == 1 { 1.0 } else { 0.0 };
            assert!((ours[j] - ce).abs() < 1e-10);
        }
    }

    #[test]
    fn inverse_frequency_weights_have_mean_one() {
        let alpha = inverse_frequency_alpha(&[10, 20, 0, 40, 10, 20]);
        let present = [0usize, 1, 3, 4, 5];
        let mean: f64 = present.iter().map(|&i| alpha[i]).sum::<f64>() / present.len() as f64;
        assert!((mean - 1.0).abs() < 1e-12);
        assert_eq!(alpha[2], 1.0);
        assert!(alpha[0] > alpha[3]); // rarer class weighs more
    }

    #[test]
    fn parameter_validation() {
        assert!(FocalLossParams::new(-0.1, vec![1.0; 6]).is_err());
        assert!(FocalLossParams::new(f64::NAN, vec![1.0; 6]).is_err());
        assert!(FocalLossParams::new(0.5, vec![]).is_err());
        assert!(FocalLossParams::new(0.5, vec![1.0, -1.0]).is_err());
    }
}
