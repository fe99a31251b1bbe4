//! Reverse-mode gradients of the surrogate loss over one concept batch.
//!
//! The chain is derived by hand for the exact composition used in the
//! forward pass. For each instance the gradient flows: decoder heads ->
//! flattened projected features -> channel projection -> attention-scaled
//! grid -> attention weights -> softmax -> four-layer stack. The common-head
//! contribution reaches every instance identically because the feature
//! aggregation is a plain sum. Parameter gradients accumulate across the
//! batch into a [`ModelParams`]-shaped accumulator and flatten in the
//! documented parameter order.

use crate::numcore::{
    affine_backward_input, affine_backward_params, col_scale_backward, matvec_backward,
    relu_backward, softmax_backward, softmax_cross_entropy_backward, Tensor2,
};

use super::forward::{forward_batch_traced, BatchMember};
use super::{BatchOutputs, HyperParams, LossMode, ModelError, ModelParams};

/// Gradient of the surrogate loss plus the forward outputs it was computed
/// from, so callers can log loss terms without a second forward pass.
#[derive(Debug, Clone)]
pub struct BatchGradient {
    /// Flat gradient array in the documented parameter order.
    pub grad: Vec<f64>,
    pub outputs: BatchOutputs,
}

/// Exact gradient of the selected surrogate loss with respect to every
/// parameter, in the documented flattening order.
pub fn backward_batch(
    batch: &[BatchMember<'_>],
    params: &ModelParams,
    hyper: &HyperParams,
    target: usize,
    mode: LossMode,
) -> Result<BatchGradient, ModelError> {
    let (w_common, w_independent) = mode.term_weights();
    backward_batch_weighted(batch, params, hyper, target, w_common, w_independent)
}

pub(crate) fn backward_batch_weighted(
    batch: &[BatchMember<'_>],
    params: &ModelParams,
    hyper: &HyperParams,
    target: usize,
    w_common: f64,
    w_independent: f64,
) -> Result<BatchGradient, ModelError> {
    if target >= hyper.concepts {
        return Err(ModelError::Config(format!(
            "target concept {target} out of range for vocabulary of {}",
            hyper.concepts
        )));
    }
    let (outputs, trace) = forward_batch_traced(batch, params, hyper)?;
    let k = hyper.k;
    let mut grads = ModelParams::zeros(hyper);

    // Common head: d_logits = w_common * (probs - onehot); the input gradient
    // fans out to every instance through the sum aggregation.
    let mut d_aggregated = Tensor2::zeros(hyper.proj_channels, hyper.regions());
    if w_common != 0.0 {
        let mut d_logits = softmax_cross_entropy_backward(&outputs.common, target)?;
        for g in &mut d_logits {
            *g *= w_common;
        }
        let (d_w, d_b, d_flat) =
            matvec_backward(&params.common_head.weight, trace.aggregated.data(), &d_logits)?;
        grads.common_head.weight.add_assign(&d_w)?;
        add_into(&mut grads.common_head.bias, &d_b);
        d_aggregated = Tensor2::new(hyper.proj_channels, hyper.regions(), d_flat)?;
    }

    let per_instance = w_independent / k as f64;
    for i in 0..k {
        let mut d_projected = d_aggregated.clone();
        if w_independent != 0.0 {
            let mut d_logits = softmax_cross_entropy_backward(&outputs.independent[i], target)?;
            for g in &mut d_logits {
                *g *= per_instance;
            }
            let (d_w, d_b, d_flat) = matvec_backward(
                &params.independent_head.weight,
                trace.projected[i].data(),
                &d_logits,
            )?;
            grads.independent_head.weight.add_assign(&d_w)?;
            add_into(&mut grads.independent_head.bias, &d_b);
            d_projected.add_assign(&Tensor2::new(
                hyper.proj_channels,
                hyper.regions(),
                d_flat,
            )?)?;
        }

        // Channel projection.
        let (d_w, d_b) = affine_backward_params(&trace.scaled[i], &d_projected)?;
        grads.proj.weight.add_assign(&d_w)?;
        add_into(&mut grads.proj.bias, &d_b);
        let d_scaled = affine_backward_input(&params.proj.weight, &d_projected)?;

        // Attention weights scale the grid columns.
        let d_weights = col_scale_backward(batch[i].features, &d_scaled)?;
        let d_attn_logits = softmax_backward(&trace.attention[i].weights, &d_weights)?;

        // Final attention layer: raw affine, one row of logits. Its scalar
        // bias cancels in the softmax, so its gradient is exactly zero and
        // stays untouched in the accumulator.
        let d_logits_row = Tensor2::new(1, hyper.regions(), d_attn_logits)?;
        let (d_w, _dead_bias) = affine_backward_params(&trace.attention[i].hidden[2], &d_logits_row)?;
        grads.attn[3].weight.add_assign(&d_w)?;
        let mut d_hidden = affine_backward_input(&params.attn[3].weight, &d_logits_row)?;

        // The three ReLU layers, walking the stack backwards.
        for layer in (0..3).rev() {
            let d_pre = relu_backward(&trace.attention[i].hidden[layer], &d_hidden)?;
            let input: &Tensor2 = if layer == 0 {
                &trace.attention[i].joint
            } else {
                &trace.attention[i].hidden[layer - 1]
            };
            let (d_w, d_b) = affine_backward_params(input, &d_pre)?;
            grads.attn[layer].weight.add_assign(&d_w)?;
            add_into(&mut grads.attn[layer].bias, &d_b);
            if layer > 0 {
                d_hidden = affine_backward_input(&params.attn[layer].weight, &d_pre)?;
            }
        }
    }

    let grad = grads.flatten();
    if let Some(index) = grad.iter().position(|g| !g.is_finite()) {
        return Err(ModelError::NonFinite {
            layer: format!("flattened gradient (index {index})"),
        });
    }
    Ok(BatchGradient { grad, outputs })
}

fn add_into(acc: &mut [f64], delta: &[f64]) {
    debug_assert_eq!(acc.len(), delta.len());
    for (a, d) in acc.iter_mut().zip(delta.iter()) {
        *a += d;
    }
}
