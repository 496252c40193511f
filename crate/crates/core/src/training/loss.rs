use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{DenseMatrix, Scalar};

/// Probabilities below this are clamped before taking the log.
pub const LOG_CLAMP: f64 = 1e-12;

/// Loss hyperparameters resolved for one dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossConfig {
    pub label_smoothing: f64,
    pub class_weights: Vec<f64>,
    /// Weight of the mask L1 (sparsity) term.
    pub lambda_l1: f64,
    /// Weight of the mask `M(1 - M)` (near-binary) term.
    pub lambda_binary: f64,
}

impl LossConfig {
    pub fn new(num_classes: usize) -> Self {
        Self {
            label_smoothing: 0.1,
            class_weights: vec![1.0; num_classes],
            lambda_l1: 1e-3,
            lambda_binary: 1e-3,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.label_smoothing) {
            return Err(Error::invalid(format!(
                "label_smoothing {} outside [0, 1)",
                self.label_smoothing
            )));
        }
        if self.class_weights.is_empty() || self.class_weights.iter().any(|&w| !(w > 0.0) || !w.is_finite()) {
            return Err(Error::invalid("class weights must be positive and finite"));
        }
        if !(self.lambda_l1 >= 0.0) || !(self.lambda_binary >= 0.0) {
            return Err(Error::invalid("mask penalty weights must be >= 0"));
        }
        Ok(())
    }

    pub fn num_classes(&self) -> usize {
        self.class_weights.len()
    }

    /// Label-smoothed target `(1 - ε)·onehot + ε/C`.
    pub fn target<T: Scalar>(&self, label: usize) -> Vec<T> {
        let c = self.num_classes();
        let eps = self.label_smoothing;
        (0..c)
            .map(|k| T::lit(if k == label { 1.0 - eps } else { 0.0 } + eps / c as f64))
            .collect()
    }
}

fn check_label(label: usize, cfg: &LossConfig, n: usize) -> Result<()> {
    if label >= cfg.num_classes() || n != cfg.num_classes() {
        return Err(Error::invalid(format!(
            "label {label} with {n} probabilities for {} classes",
            cfg.num_classes()
        )));
    }
    Ok(())
}

/// Class-weighted, label-smoothed cross-entropy of one prediction.
pub fn ce_loss<T: Scalar>(probs: &[T], label: usize, cfg: &LossConfig) -> Result<T> {
    check_label(label, cfg, probs.len())?;
    let clamp = T::lit(LOG_CLAMP);
    let target = cfg.target::<T>(label);
    let nll: T = probs
        .iter()
        .zip(&target)
        .map(|(&p, &t)| -t * p.max(clamp).ln())
        .sum();
    Ok(T::lit(cfg.class_weights[label]) * nll)
}

/// Gradient of [`ce_loss`] with respect to the logits.
pub fn ce_logit_gradient<T: Scalar>(probs: &[T], label: usize, cfg: &LossConfig) -> Result<Vec<T>> {
    check_label(label, cfg, probs.len())?;
    let clamp = T::lit(LOG_CLAMP);
    let weight = T::lit(cfg.class_weights[label]);
    let target = cfg.target::<T>(label);
    // dL/dp_k, zero where the clamp is active
    let dp: Vec<T> = probs
        .iter()
        .zip(&target)
        .map(|(&p, &t)| if p > clamp { -weight * t / p } else { T::zero() })
        .collect();
    let inner: T = probs.iter().zip(&dp).map(|(&p, &d)| p * d).sum();
    Ok(probs.iter().zip(&dp).map(|(&p, &d)| p * (d - inner)).collect())
}

/// `λ₁·mean|M| + λ_e·mean(M(1 - M))`.
pub fn mask_penalty<T: Scalar>(mask: &DenseMatrix<T>, lambda_l1: f64, lambda_binary: f64) -> T {
    let n = T::from_usize(mask.data().len().max(1)).unwrap();
    let l1: T = mask.data().iter().map(|m| m.abs()).sum::<T>() / n;
    let binary: T = mask.data().iter().map(|&m| m * (T::one() - m)).sum::<T>() / n;
    T::lit(lambda_l1) * l1 + T::lit(lambda_binary) * binary
}

/// Gradient of [`mask_penalty`] with respect to `M`.
pub fn mask_penalty_gradient<T: Scalar>(mask: &DenseMatrix<T>, lambda_l1: f64, lambda_binary: f64) -> DenseMatrix<T> {
    let n = T::from_usize(mask.data().len().max(1)).unwrap();
    let (l1, bin) = (T::lit(lambda_l1), T::lit(lambda_binary));
    let two = T::lit(2.0);
    mask.map(|m| (l1 * m.signum() + bin * (T::one() - two * m)) / n)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn plain(c: usize) -> LossConfig {
        LossConfig {
            label_smoothing: 0.0,
            class_weights: vec![1.0; c],
            lambda_l1: 0.0,
            lambda_binary: 0.0,
        }
    }

    #[test]
    fn perfect_prediction_has_zero_loss() {
        let l = ce_loss(&[0.0f64, 1.0, 0.0], 1, &plain(3)).unwrap();
        assert!(l.abs() < 1e-12);
    }

    #[test]
    fn uniform_prediction_is_ln_c() {
        let third = 1.0 / 3.0;
        let l = ce_loss(&[third, third, third], 2, &plain(3)).unwrap();
        assert!((l - 3f64.ln()).abs() < 1e-12);
        assert!((l - 1.0986).abs() < 1e-4);
    }

    #[test]
    fn smoothed_hand_value() {
        let mut cfg = plain(3);
        cfg.label_smoothing = 0.1;
        let l = ce_loss(&[0.7f64, 0.2, 0.1], 0, &cfg).unwrap();
        // targets: 0.9 + 0.1/3 = 0.93333.., 0.1/3 = 0.03333..
        let hand = -(0.933_333_333_333_333_4 * 0.7f64.ln()
            + 0.033_333_333_333_333_33 * 0.2f64.ln()
            + 0.033_333_333_333_333_33 * 0.1f64.ln());
        assert!((l - hand).abs() < 1e-12);
        assert!((l - 0.463_297_381_190_421_85).abs() < 1e-12);
    }

    #[test]
    fn no_smoothing_is_textbook_cross_entropy() {
        let probs = [0.1f64, 0.6, 0.3];
        for label in 0..3 {
            let l = ce_loss(&probs, label, &plain(3)).unwrap();
            assert_eq!(l, -probs[label].ln());
        }
    }

    #[test]
    fn class_weight_scales_loss() {
        let mut cfg = plain(2);
        cfg.class_weights = vec![2.5, 1.0];
        let l = ce_loss(&[0.4f64, 0.6], 0, &cfg).unwrap();
        assert!((l + 2.5 * 0.4f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn bad_label_rejected() {
        assert!(ce_loss(&[0.5f64, 0.5], 2, &plain(2)).is_err());
    }

    #[test]
    fn logit_gradient_vanishes_at_target() {
        let mut cfg = plain(3);
        cfg.label_smoothing = 0.1;
        let target = cfg.target::<f64>(1);
        let g = ce_logit_gradient(&target, 1, &cfg).unwrap();
        assert!(g.iter().all(|v| v.abs() < 1e-15));
    }

    #[test]
    fn penalty_cases() {
        let (l1, le) = (0.3, 0.7);
        assert_eq!(mask_penalty(&DenseMatrix::<f64>::zeros(3, 3), l1, le), 0.0);
        assert!((mask_penalty(&DenseMatrix::<f64>::filled(3, 3, 1.0), l1, le) - l1).abs() < 1e-15);
        let half = mask_penalty(&DenseMatrix::<f64>::filled(4, 4, 0.5), l1, le);
        assert!((half - (0.5 * l1 + 0.25 * le)).abs() < 1e-15);
    }

    #[test]
    fn config_validation() {
        let mut cfg = plain(3);
        cfg.validate().unwrap();
        cfg.label_smoothing = 1.0;
        assert!(cfg.validate().is_err());
        let mut cfg = plain(3);
        cfg.class_weights[1] = 0.0;
        assert!(cfg.validate().is_err());
    }
}
