use serde::{Deserialize, Serialize};

use crate::model::{ModelParams, DECAYED, NUM_TENSORS};
use crate::numerics::{DenseMatrix, Scalar};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AdamWConfig {
    pub lr: f64,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        Self {
            lr: 3e-4,
            weight_decay: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Moment accumulators mirroring the parameter tensors.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerState<T> {
    pub config: AdamWConfig,
    pub step: u64,
    first: Vec<DenseMatrix<T>>,
    second: Vec<DenseMatrix<T>>,
}

impl<T: Scalar> OptimizerState<T> {
    pub fn new(params: &ModelParams<T>, config: AdamWConfig) -> Self {
        let zeros: Vec<DenseMatrix<T>> = params.tensors().iter().map(|t| t.zeros_like()).collect();
        Self {
            config,
            step: 0,
            first: zeros.clone(),
            second: zeros,
        }
    }
}

/// One AdamW step with bias correction.
///
/// Decay `θ ← θ·(1 − lr·wd)` is applied before the Adam update and only to
/// convolution and MLP weights. `mask_raw` is re-symmetrized afterwards.
pub fn adamw_step<T: Scalar>(params: &mut ModelParams<T>, grads: &ModelParams<T>, state: &mut OptimizerState<T>) {
    state.step += 1;
    let cfg = state.config;
    let t = state.step as i32;
    let (b1, b2) = (T::lit(cfg.beta1), T::lit(cfg.beta2));
    let correction1 = T::one() - b1.powi(t);
    let correction2 = T::one() - b2.powi(t);
    let lr = T::lit(cfg.lr);
    let eps = T::lit(cfg.eps);
    let shrink = T::one() - lr * T::lit(cfg.weight_decay);

    let grad_tensors = grads.tensors();
    for (k, theta) in params.tensors_mut().into_iter().enumerate().take(NUM_TENSORS) {
        let g = grad_tensors[k].data();
        let m = state.first[k].data_mut();
        let v = state.second[k].data_mut();
        for (i, w) in theta.data_mut().iter_mut().enumerate() {
            if DECAYED[k] {
                *w = *w * shrink;
            }
            m[i] = b1 * m[i] + (T::one() - b1) * g[i];
            v[i] = b2 * v[i] + (T::one() - b2) * g[i] * g[i];
            let m_hat = m[i] / correction1;
            let v_hat = v[i] / correction2;
            *w = *w - lr * m_hat / (v_hat.sqrt() + eps);
        }
    }
    params.symmetrize_mask();
}
