//! Reverse-mode differentiation of the forward pass, written out by hand.

use super::loss::{ce_logit_gradient, ce_loss, mask_penalty, mask_penalty_gradient, LossConfig};
use crate::error::{Error, Result};
use crate::graphs::SignedGraph;
use crate::model::{forward, forward_channels, ForwardCache, ModelParams};
use crate::numerics::{DenseMatrix, Scalar};

/// Gradients for every parameter plus the two input adjacency channels.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients<T> {
    pub params: ModelParams<T>,
    pub a_plus: DenseMatrix<T>,
    pub a_minus: DenseMatrix<T>,
}

/// Mask penalty weights for [`backprop`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MaskPenalty {
    pub lambda_l1: f64,
    pub lambda_binary: f64,
}

fn check_cache<T: Scalar>(params: &ModelParams<T>, cache: &ForwardCache<T>, a_plus: &DenseMatrix<T>) -> Result<()> {
    let d = params.dims();
    if cache.mask.shape() != (d.parcels, d.parcels)
        || a_plus.shape() != (d.parcels, d.parcels)
        || cache.logits.len() != d.classes
        || cache.conv1.out.cols() != d.conv1
        || cache.conv2.out.cols() != d.conv2
        || cache.hidden.len() != d.hidden
    {
        return Err(Error::Invariant("forward cache does not match parameters".into()));
    }
    Ok(())
}

/// Pulls a logit-space gradient back through the network.
///
/// `d_logits` is the gradient of the objective with respect to the logits.
/// When `penalty` is given, the mask penalty's gradient is added at `M`.
pub fn backprop<T: Scalar>(
    params: &ModelParams<T>,
    cache: &ForwardCache<T>,
    a_plus: &DenseMatrix<T>,
    a_minus: &DenseMatrix<T>,
    d_logits: &[T],
    penalty: Option<MaskPenalty>,
) -> Result<Gradients<T>> {
    check_cache(params, cache, a_plus)?;
    if d_logits.len() != cache.logits.len() {
        return Err(Error::invalid("logit gradient length mismatch"));
    }
    let act = params.activation;
    let p = params.mask_raw.rows();
    let mut grads = params.zeros_like();

    // head: logits = hidden·W₂ + b₂
    grads.w_mlp_2 = DenseMatrix::from_fn(cache.hidden.len(), d_logits.len(), |k, c| cache.hidden[k] * d_logits[c]);
    grads.b_mlp_2 = DenseMatrix::row_vector(d_logits.to_vec());
    let d_hidden_pre: Vec<T> = (0..cache.hidden.len())
        .map(|k| {
            let dh: T = params.w_mlp_2.row(k).iter().zip(d_logits).map(|(&w, &d)| w * d).sum();
            dh * act.derivative(cache.hidden_pre[k])
        })
        .collect();

    // hidden_pre = pooled·W₁ + b₁
    grads.w_mlp_1 = DenseMatrix::from_fn(cache.pooled.len(), d_hidden_pre.len(), |k, j| cache.pooled[k] * d_hidden_pre[j]);
    grads.b_mlp_1 = DenseMatrix::row_vector(d_hidden_pre.clone());
    let inv_p = T::one() / T::from_usize(p).unwrap();
    let d_node: Vec<T> = (0..cache.pooled.len())
        .map(|k| params.w_mlp_1.row(k).iter().zip(&d_hidden_pre).map(|(&w, &d)| w * d).sum::<T>() * inv_p)
        .collect();

    // mean pooling spreads d_pooled/P to every node
    let conv2 = &cache.conv2;
    let d_pre2 = DenseMatrix::from_fn(p, d_node.len(), |i, k| d_node[k] * act.derivative(conv2.pre[(i, k)]));
    grads.w_plus_2 = conv2.agg_plus.t_matmul(&d_pre2)?;
    grads.w_minus_2 = conv2.agg_minus.t_matmul(&d_pre2)?;
    grads.b_2 = DenseMatrix::row_vector(d_pre2.column_sums());
    let d_agg_plus2 = d_pre2.matmul_t(&params.w_plus_2)?;
    let d_agg_minus2 = d_pre2.matmul_t(&params.w_minus_2)?;

    // agg = Ã·H¹
    let h1 = &cache.conv1.out;
    let mut d_gated_plus = d_agg_plus2.matmul_t(h1)?;
    let mut d_gated_minus = d_agg_minus2.matmul_t(h1)?;
    let mut d_h1 = cache.gated_plus.t_matmul(&d_agg_plus2)?;
    d_h1.add_assign(&cache.gated_minus.t_matmul(&d_agg_minus2)?)?;

    let conv1 = &cache.conv1;
    let d_pre1 = DenseMatrix::from_fn(p, d_h1.cols(), |i, k| d_h1[(i, k)] * act.derivative(conv1.pre[(i, k)]));
    grads.w_plus_1 = conv1.agg_plus.t_matmul(&d_pre1)?;
    grads.w_minus_1 = conv1.agg_minus.t_matmul(&d_pre1)?;
    grads.b_1 = DenseMatrix::row_vector(d_pre1.column_sums());
    // layer 1 input is the identity, so agg = Ã and dÃ = d_agg
    d_gated_plus.add_assign(&d_pre1.matmul_t(&params.w_plus_1)?)?;
    d_gated_minus.add_assign(&d_pre1.matmul_t(&params.w_minus_1)?)?;

    // Ã = A ⊙ M
    let mask = &cache.mask;
    let grad_a_plus = d_gated_plus.hadamard(mask)?;
    let grad_a_minus = d_gated_minus.hadamard(mask)?;
    let mut d_mask = d_gated_plus.hadamard(a_plus)?;
    d_mask.add_assign(&d_gated_minus.hadamard(a_minus)?)?;
    if let Some(pen) = penalty {
        d_mask.add_assign(&mask_penalty_gradient(mask, pen.lambda_l1, pen.lambda_binary))?;
    }

    // M = logistic(½(R + Rᵀ))
    let d_sym = d_mask.zip_map(mask, "mask chain", |d, m| d * m * (T::one() - m))?;
    grads.mask_raw = d_sym.symmetrized()?;

    Ok(Gradients {
        params: grads,
        a_plus: grad_a_plus,
        a_minus: grad_a_minus,
    })
}

/// Total per-sample loss: weighted smoothed cross-entropy plus mask penalty.
pub fn sample_loss<T: Scalar>(cache: &ForwardCache<T>, label: usize, cfg: &LossConfig) -> Result<T> {
    Ok(ce_loss(&cache.probs, label, cfg)? + mask_penalty(&cache.mask, cfg.lambda_l1, cfg.lambda_binary))
}

/// Exact gradient of [`sample_loss`] given a forward cache for `graph`.
pub fn backward<T: Scalar>(
    cache: &ForwardCache<T>,
    graph: &SignedGraph<T>,
    label: usize,
    params: &ModelParams<T>,
    cfg: &LossConfig,
) -> Result<Gradients<T>> {
    let d_logits = ce_logit_gradient(&cache.probs, label, cfg)?;
    backprop(
        params,
        cache,
        &graph.a_plus,
        &graph.a_minus,
        &d_logits,
        Some(MaskPenalty {
            lambda_l1: cfg.lambda_l1,
            lambda_binary: cfg.lambda_binary,
        }),
    )
}

/// Forward and backward in one call; returns the loss alongside.
pub fn loss_and_gradients<T: Scalar>(
    params: &ModelParams<T>,
    graph: &SignedGraph<T>,
    cfg: &LossConfig,
) -> Result<(T, Gradients<T>)> {
    let cache = forward(params, graph)?;
    let loss = sample_loss(&cache, graph.label, cfg)?;
    let grads = backward(&cache, graph, graph.label, params, cfg)?;
    Ok((loss, grads))
}

/// Gradient of the raw class logit `f_c` with respect to every parameter and
/// the original (ungated) adjacency channels.
pub fn logit_gradients<T: Scalar>(
    params: &ModelParams<T>,
    a_plus: &DenseMatrix<T>,
    a_minus: &DenseMatrix<T>,
    class: usize,
) -> Result<Gradients<T>> {
    let cache = forward_channels(params, a_plus, a_minus)?;
    if class >= cache.logits.len() {
        return Err(Error::invalid(format!(
            "class {class} out of range for {} logits",
            cache.logits.len()
        )));
    }
    let mut seed = vec![T::zero(); cache.logits.len()];
    seed[class] = T::one();
    backprop(params, &cache, a_plus, a_minus, &seed, None)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graphs::connectivity;
    use crate::labels::Split;
    use crate::model::ModelDims;
    use crate::numerics::RngStream;

    fn setup(seed: u64) -> (ModelParams<f64>, SignedGraph<f64>, LossConfig) {
        let mut rng = RngStream::new(seed);
        let dims = ModelDims {
            parcels: 6,
            classes: 3,
            conv1: 5,
            conv2: 5,
            hidden: 4,
        };
        let mut params = ModelParams::init(dims, &mut rng);
        let noise = rng.normal_draws(36, 0.0, 1.0).unwrap();
        params.mask_raw = DenseMatrix::new(6, 6, noise).unwrap().symmetrized().unwrap();
        let x = DenseMatrix::new(6, 20, rng.normal_draws(120, 0.0, 1.0).unwrap()).unwrap();
        let g = SignedGraph::from_correlation(&connectivity(&x).unwrap(), 1, Split::Train);
        (params, g, LossConfig::new(3))
    }

    #[test]
    fn mask_gradient_is_symmetric() {
        let (params, g, cfg) = setup(1);
        let (_, grads) = loss_and_gradients(&params, &g, &cfg).unwrap();
        assert_eq!(grads.params.mask_raw, grads.params.mask_raw.transpose());
    }

    #[test]
    fn logit_gradient_zero_at_smoothed_target() {
        let (params, g, cfg) = setup(2);
        let mut cache = forward(&params, &g).unwrap();
        cache.probs = cfg.target(g.label);
        let d = ce_logit_gradient(&cache.probs, g.label, &cfg).unwrap();
        assert!(d.iter().all(|v| v.abs() < 1e-15));
        let grads = backprop(&params, &cache, &g.a_plus, &g.a_minus, &d, None).unwrap();
        assert!(grads.params.w_mlp_2.data().iter().all(|v| v.abs() < 1e-15));
    }

    #[test]
    fn mismatched_cache_rejected() {
        let (params, g, cfg) = setup(3);
        let (other, _, _) = {
            let mut rng = RngStream::new(4);
            (ModelParams::<f64>::init(ModelDims::new(6, 3), &mut rng), (), ())
        };
        let cache = forward(&other, &g).unwrap();
        assert!(backward(&cache, &g, 1, &params, &cfg).is_err());
    }

    #[test]
    fn f32_gradients_track_f64() {
        let (params, g, cfg) = setup(5);
        let (_, g64) = loss_and_gradients(&params, &g, &cfg).unwrap();
        let (_, g32) = loss_and_gradients(&params.cast::<f32>(), &g.cast::<f32>(), &cfg).unwrap();
        let diff = g64.a_plus.cast::<f32>().max_abs_diff(&g32.a_plus).unwrap();
        assert!(diff < 1e-4, "{diff}");
    }
}
