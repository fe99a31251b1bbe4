use crate::numcore::{affine, col_scale, matvec, relu, softmax, Tensor2};

use super::{AttentionMap, BatchOutputs, HyperParams, ModelError, ModelParams};

/// One instance as the model sees it: a standardized feature grid and a
/// standardized phrase embedding.
#[derive(Debug, Clone, Copy)]
pub struct BatchMember<'a> {
    pub features: &'a Tensor2,
    pub embedding: &'a [f64],
}

/// Which decoder head to apply.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DecoderHead {
    Common,
    Independent,
}

/// Concatenates the phrase embedding under every column of the feature grid:
/// the result is `(channels + embed_dim) × regions` with column `j` equal to
/// `[features[:, j]; embedding]`.
pub fn concat_tile(features: &Tensor2, embedding: &[f64]) -> Tensor2 {
    let (m, n) = (features.rows(), features.cols());
    let l = embedding.len();
    let mut data = Vec::with_capacity((m + l) * n);
    data.extend_from_slice(features.data());
    for &e in embedding {
        for _ in 0..n {
            data.push(e);
        }
    }
    Tensor2::new(m + l, n, data).expect("concat_tile preserves finiteness")
}

/// Intermediate activations of the attention stack for one instance, kept for
/// the backward pass.
pub(super) struct AttentionTrace {
    pub joint: Tensor2,
    /// Post-ReLU activations of the first three layers.
    pub hidden: [Tensor2; 3],
    /// Attention weights (softmax of the final-layer logits).
    pub weights: Vec<f64>,
}

pub(super) fn attention_trace(
    features: &Tensor2,
    embedding: &[f64],
    params: &ModelParams,
    hyper: &HyperParams,
) -> Result<AttentionTrace, ModelError> {
    if features.rows() != hyper.channels || features.cols() != hyper.regions() {
        return Err(ModelError::Config(format!(
            "feature grid is {}x{}, expected {}x{}",
            features.rows(),
            features.cols(),
            hyper.channels,
            hyper.regions()
        )));
    }
    if embedding.len() != hyper.embed_dim {
        return Err(ModelError::Config(format!(
            "phrase embedding has dim {}, expected {}",
            embedding.len(),
            hyper.embed_dim
        )));
    }
    let joint = concat_tile(features, embedding);
    let h1 = relu(&affine(&params.attn[0].weight, &params.attn[0].bias, &joint)?);
    let h2 = relu(&affine(&params.attn[1].weight, &params.attn[1].bias, &h1)?);
    let h3 = relu(&affine(&params.attn[2].weight, &params.attn[2].bias, &h2)?);
    // The final layer emits raw affine logits; a ReLU here would zero-clip
    // them and flatten the softmax into large uniform plateaus. Its scalar
    // bias shifts every logit equally and cancels exactly in the softmax, so
    // it is not added; it stays in the parameter layout with zero gradient.
    let zero_bias = [0.0];
    let logits = affine(&params.attn[3].weight, &zero_bias, &h3)?;
    let weights = softmax(logits.row(0));
    for (name, tensor) in [("attention layer 1", &h1), ("attention layer 2", &h2), ("attention layer 3", &h3), ("attention logits", &logits)] {
        if tensor.first_non_finite().is_some() {
            return Err(ModelError::NonFinite { layer: name.to_string() });
        }
    }
    Ok(AttentionTrace {
        joint,
        hidden: [h1, h2, h3],
        weights,
    })
}

/// Attention over regions for one instance: softmax over the single logit per
/// region produced by the shared four-layer stack.
pub fn attention_forward(
    features: &Tensor2,
    embedding: &[f64],
    params: &ModelParams,
    hyper: &HyperParams,
) -> Result<AttentionMap, ModelError> {
    let trace = attention_trace(features, embedding, params, hyper)?;
    AttentionMap::new(trace.weights, hyper.grid_h, hyper.grid_w)
}

/// Attended features for one instance: column `j` of the feature grid scaled
/// by `attention[j]`, then the shared channel projection. The spatial
/// dimension is retained.
pub fn attended_independent(
    attention: &AttentionMap,
    features: &Tensor2,
    params: &ModelParams,
) -> Result<Tensor2, ModelError> {
    let scaled = col_scale(features, &attention.weights)?;
    Ok(affine(&params.proj.weight, &params.proj.bias, &scaled)?)
}

/// Elementwise sum of the projected attended features across a concept batch.
pub fn aggregate_common(attended: &[Tensor2]) -> Result<Tensor2, ModelError> {
    let first = attended
        .first()
        .ok_or_else(|| ModelError::Config("aggregate_common: empty batch".to_string()))?;
    let mut sum = first.clone();
    for t in &attended[1..] {
        sum.add_assign(t)?;
    }
    Ok(sum)
}

/// Softmax over concepts from a flattened `proj_channels × regions` feature
/// block (channel-major, regions row-major within a channel).
pub fn decode(flat: &[f64], head: DecoderHead, params: &ModelParams) -> Result<Vec<f64>, ModelError> {
    let layer = match head {
        DecoderHead::Common => &params.common_head,
        DecoderHead::Independent => &params.independent_head,
    };
    let logits = matvec(&layer.weight, &layer.bias, flat)?;
    Ok(softmax(&logits))
}

/// Full forward pass over a concept batch: per-instance attention, projected
/// attended features, the independent distributions, and the common
/// distribution from the batch-aggregated features.
pub fn forward_batch(
    batch: &[BatchMember<'_>],
    params: &ModelParams,
    hyper: &HyperParams,
) -> Result<BatchOutputs, ModelError> {
    let (outputs, _) = forward_batch_traced(batch, params, hyper)?;
    Ok(outputs)
}

pub(super) struct BatchTrace {
    pub attention: Vec<AttentionTrace>,
    /// Attention-scaled feature grids per instance (before projection).
    pub scaled: Vec<Tensor2>,
    /// Projected attended features per instance.
    pub projected: Vec<Tensor2>,
    /// Sum of the projected features across the batch.
    pub aggregated: Tensor2,
}

pub(super) fn forward_batch_traced(
    batch: &[BatchMember<'_>],
    params: &ModelParams,
    hyper: &HyperParams,
) -> Result<(BatchOutputs, BatchTrace), ModelError> {
    hyper.validate()?;
    if batch.len() != hyper.k {
        return Err(ModelError::Config(format!(
            "concept batch has {} instances, configured k is {}",
            batch.len(),
            hyper.k
        )));
    }
    let mut attention_maps = Vec::with_capacity(batch.len());
    let mut traces = Vec::with_capacity(batch.len());
    let mut scaled = Vec::with_capacity(batch.len());
    let mut projected = Vec::with_capacity(batch.len());
    let mut independent = Vec::with_capacity(batch.len());
    for member in batch {
        let trace = attention_trace(member.features, member.embedding, params, hyper)?;
        let map = AttentionMap::new(trace.weights.clone(), hyper.grid_h, hyper.grid_w)?;
        let scaled_grid = col_scale(member.features, &map.weights)?;
        let feat = affine(&params.proj.weight, &params.proj.bias, &scaled_grid)?;
        if feat.first_non_finite().is_some() {
            return Err(ModelError::NonFinite { layer: "channel projection".to_string() });
        }
        independent.push(decode(feat.data(), DecoderHead::Independent, params)?);
        attention_maps.push(map);
        traces.push(trace);
        scaled.push(scaled_grid);
        projected.push(feat);
    }
    let aggregated = aggregate_common(&projected)?;
    let common = decode(aggregated.data(), DecoderHead::Common, params)?;
    let outputs = BatchOutputs {
        attention: attention_maps,
        independent,
        common,
    };
    let trace = BatchTrace {
        attention: traces,
        scaled,
        projected,
        aggregated,
    };
    Ok((outputs, trace))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream_rng;
    use rand::Rng;

    fn tiny_hyper() -> HyperParams {
        HyperParams {
            channels: 4,
            grid_h: 2,
            grid_w: 2,
            embed_dim: 3,
            attn_widths: [6, 5, 4, 1],
            proj_channels: 2,
            concepts: 3,
            k: 2,
        }
    }

    fn random_member(rng: &mut impl Rng, hyper: &HyperParams) -> (Tensor2, Vec<f64>) {
        let features = Tensor2::from_fn(hyper.channels, hyper.regions(), |_, _| {
            rng.gen_range(-1.0..1.0)
        });
        let embedding: Vec<f64> = (0..hyper.embed_dim).map(|_| rng.gen_range(-1.0..1.0)).collect();
        (features, embedding)
    }

    #[test]
    fn concat_tile_by_definition() {
        let v = Tensor2::new(2, 2, vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let out = concat_tile(&v, &[9.0]);
        assert_eq!(out.rows(), 3);
        assert_eq!(out.data(), &[1.0, 2.0, 3.0, 4.0, 9.0, 9.0]);
    }

    #[test]
    fn concat_tile_zero_embedding_gives_zero_rows() {
        let v = Tensor2::new(2, 3, vec![1.0; 6]).unwrap();
        let out = concat_tile(&v, &[0.0, 0.0]);
        assert_eq!(out.row(2), &[0.0, 0.0, 0.0]);
        assert_eq!(out.row(3), &[0.0, 0.0, 0.0]);
    }

    #[test]
    fn concat_tile_matches_columnwise_oracle() {
        let mut rng = stream_rng(1, 0);
        let v = Tensor2::from_fn(3, 4, |_, _| rng.gen_range(-2.0..2.0));
        let t: Vec<f64> = (0..2).map(|_| rng.gen_range(-2.0..2.0)).collect();
        let out = concat_tile(&v, &t);
        for j in 0..4 {
            for i in 0..3 {
                assert_eq!(out.get(i, j), v.get(i, j));
            }
            for (d, &e) in t.iter().enumerate() {
                assert_eq!(out.get(3 + d, j), e);
            }
        }
    }

    #[test]
    fn zero_params_give_uniform_attention() {
        let hyper = tiny_hyper();
        let params = ModelParams::zeros(&hyper);
        let mut rng = stream_rng(2, 0);
        let (features, embedding) = random_member(&mut rng, &hyper);
        let map = attention_forward(&features, &embedding, &params, &hyper).unwrap();
        for &w in &map.weights {
            assert!((w - 1.0 / hyper.regions() as f64).abs() < 1e-15);
        }
    }

    #[test]
    fn attention_is_a_distribution_for_random_params() {
        let hyper = tiny_hyper();
        let mut rng = stream_rng(3, 0);
        let params = ModelParams::init(&hyper, &mut rng);
        for _ in 0..20 {
            let (features, embedding) = random_member(&mut rng, &hyper);
            let map = attention_forward(&features, &embedding, &params, &hyper).unwrap();
            let sum: f64 = map.weights.iter().sum();
            assert!((sum - 1.0).abs() < 1e-9);
            assert!(map.weights.iter().all(|&w| w >= 0.0));
        }
    }

    #[test]
    fn attention_matches_explicit_composition() {
        use crate::numcore::{affine, relu, softmax};
        let hyper = tiny_hyper();
        let mut rng = stream_rng(4, 0);
        let params = ModelParams::init(&hyper, &mut rng);
        let (features, embedding) = random_member(&mut rng, &hyper);
        let map = attention_forward(&features, &embedding, &params, &hyper).unwrap();

        // Step-by-step composition with numcore primitives, including the
        // (mathematically cancelling) final bias.
        let x = concat_tile(&features, &embedding);
        let h1 = relu(&affine(&params.attn[0].weight, &params.attn[0].bias, &x).unwrap());
        let h2 = relu(&affine(&params.attn[1].weight, &params.attn[1].bias, &h1).unwrap());
        let h3 = relu(&affine(&params.attn[2].weight, &params.attn[2].bias, &h2).unwrap());
        let z = affine(&params.attn[3].weight, &params.attn[3].bias, &h3).unwrap();
        let expected = softmax(z.row(0));
        for (a, b) in map.weights.iter().zip(expected.iter()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn attended_independent_uniform_attention_scales_by_inverse_n() {
        let hyper = tiny_hyper();
        let mut rng = stream_rng(5, 0);
        let params = ModelParams::init(&hyper, &mut rng);
        let (features, _) = random_member(&mut rng, &hyper);
        let n = hyper.regions();
        let uniform = AttentionMap::new(vec![1.0 / n as f64; n], hyper.grid_h, hyper.grid_w).unwrap();
        let got = attended_independent(&uniform, &features, &params).unwrap();
        let scaled = crate::numcore::col_scale(&features, &uniform.weights).unwrap();
        let expected = affine(&params.proj.weight, &params.proj.bias, &scaled).unwrap();
        assert_eq!(got, expected);
        // And the scaling itself is columnwise division by n.
        for i in 0..features.rows() {
            for j in 0..n {
                assert!((scaled.get(i, j) - features.get(i, j) / n as f64).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn attended_independent_one_hot_attention_leaves_bias_columns() {
        let hyper = tiny_hyper();
        let mut rng = stream_rng(6, 0);
        let params = ModelParams::init(&hyper, &mut rng);
        let (features, _) = random_member(&mut rng, &hyper);
        let n = hyper.regions();
        let hot = 2;
        let mut weights = vec![0.0; n];
        weights[hot] = 1.0;
        let map = AttentionMap::new(weights, hyper.grid_h, hyper.grid_w).unwrap();
        let got = attended_independent(&map, &features, &params).unwrap();
        for j in 0..n {
            if j == hot {
                continue;
            }
            for i in 0..hyper.proj_channels {
                // Projection of a zero column is just the bias.
                assert!((got.get(i, j) - params.proj.bias[i]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn attended_independent_matches_columnwise_oracle() {
        let hyper = tiny_hyper();
        let mut rng = stream_rng(7, 0);
        let params = ModelParams::init(&hyper, &mut rng);
        let (features, embedding) = random_member(&mut rng, &hyper);
        let map = attention_forward(&features, &embedding, &params, &hyper).unwrap();
        let got = attended_independent(&map, &features, &params).unwrap();
        for j in 0..hyper.regions() {
            for i in 0..hyper.proj_channels {
                let mut expected = params.proj.bias[i];
                for c in 0..hyper.channels {
                    expected += params.proj.weight.get(i, c) * features.get(c, j) * map.weights[j];
                }
                assert!((got.get(i, j) - expected).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn aggregate_common_singleton_is_identity() {
        let t = Tensor2::new(2, 2, vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        assert_eq!(aggregate_common(std::slice::from_ref(&t)).unwrap(), t);
    }

    #[test]
    fn aggregate_common_repeated_summand() {
        let t = Tensor2::new(2, 2, vec![1.0, -2.0, 0.5, 4.0]).unwrap();
        let k = 3;
        let sum = aggregate_common(&vec![t.clone(); k]).unwrap();
        for (a, b) in sum.data().iter().zip(t.data().iter()) {
            assert!((a - k as f64 * b).abs() < 1e-12);
        }
    }

    #[test]
    fn aggregate_common_matches_elementwise_oracle() {
        let mut rng = stream_rng(8, 0);
        let batch: Vec<Tensor2> = (0..4)
            .map(|_| Tensor2::from_fn(3, 5, |_, _| rng.gen_range(-1.0..1.0)))
            .collect();
        let sum = aggregate_common(&batch).unwrap();
        for i in 0..3 {
            for j in 0..5 {
                let expected: f64 = batch.iter().map(|t| t.get(i, j)).sum();
                assert!((sum.get(i, j) - expected).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn aggregate_common_rejects_inconsistent_shapes() {
        let a = Tensor2::zeros(2, 2);
        let b = Tensor2::zeros(2, 3);
        assert!(aggregate_common(&[a, b]).is_err());
    }

    #[test]
    fn decode_zero_head_is_uniform() {
        let hyper = tiny_hyper();
        let params = ModelParams::zeros(&hyper);
        let flat = vec![0.7; hyper.decoder_input()];
        for head in [DecoderHead::Common, DecoderHead::Independent] {
            let probs = decode(&flat, head, &params).unwrap();
            for &p in &probs {
                assert!((p - 1.0 / hyper.concepts as f64).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn decode_matches_affine_then_softmax_oracle() {
        use crate::numcore::{matvec, softmax};
        let hyper = tiny_hyper();
        let mut rng = stream_rng(9, 0);
        let params = ModelParams::init(&hyper, &mut rng);
        let flat: Vec<f64> = (0..hyper.decoder_input()).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let got = decode(&flat, DecoderHead::Common, &params).unwrap();
        let logits = matvec(&params.common_head.weight, &params.common_head.bias, &flat).unwrap();
        let expected = softmax(&logits);
        for (a, b) in got.iter().zip(expected.iter()) {
            assert!((a - b).abs() < 1e-12);
        }
        let sum: f64 = got.iter().sum();
        assert!((sum - 1.0).abs() < 1e-9);
    }

    #[test]
    fn decode_rejects_wrong_flat_length() {
        let hyper = tiny_hyper();
        let params = ModelParams::zeros(&hyper);
        let err = decode(&[0.0; 3], DecoderHead::Common, &params).unwrap_err();
        assert!(matches!(err, ModelError::Num(_)));
    }

    #[test]
    fn forward_batch_zero_params_is_uniform_everywhere() {
        let hyper = tiny_hyper();
        let params = ModelParams::zeros(&hyper);
        let mut rng = stream_rng(10, 0);
        let members: Vec<(Tensor2, Vec<f64>)> =
            (0..hyper.k).map(|_| random_member(&mut rng, &hyper)).collect();
        let batch: Vec<BatchMember> = members
            .iter()
            .map(|(f, e)| BatchMember { features: f, embedding: e })
            .collect();
        let out = forward_batch(&batch, &params, &hyper).unwrap();
        let n = hyper.regions() as f64;
        let c = hyper.concepts as f64;
        for map in &out.attention {
            for &w in &map.weights {
                assert!((w - 1.0 / n).abs() < 1e-15);
            }
        }
        for dist in out.independent.iter().chain(std::iter::once(&out.common)) {
            for &p in dist {
                assert!((p - 1.0 / c).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn forward_batch_common_is_permutation_invariant() {
        let hyper = tiny_hyper();
        let mut rng = stream_rng(11, 0);
        let params = ModelParams::init(&hyper, &mut rng);
        let members: Vec<(Tensor2, Vec<f64>)> =
            (0..hyper.k).map(|_| random_member(&mut rng, &hyper)).collect();
        let batch: Vec<BatchMember> = members
            .iter()
            .map(|(f, e)| BatchMember { features: f, embedding: e })
            .collect();
        let reversed: Vec<BatchMember> = batch.iter().rev().copied().collect();
        let out = forward_batch(&batch, &params, &hyper).unwrap();
        let out_rev = forward_batch(&reversed, &params, &hyper).unwrap();
        // The feature sum is reordered but mathematically identical; with two
        // members the floating-point sum is also bit-identical.
        assert_eq!(out.common, out_rev.common);
        for (i, map) in out.attention.iter().enumerate() {
            assert_eq!(map.weights, out_rev.attention[hyper.k - 1 - i].weights);
            assert_eq!(out.independent[i], out_rev.independent[hyper.k - 1 - i]);
        }
    }

    #[test]
    fn forward_batch_matches_manual_composition() {
        let hyper = tiny_hyper();
        let mut rng = stream_rng(12, 0);
        let params = ModelParams::init(&hyper, &mut rng);
        let members: Vec<(Tensor2, Vec<f64>)> =
            (0..hyper.k).map(|_| random_member(&mut rng, &hyper)).collect();
        let batch: Vec<BatchMember> = members
            .iter()
            .map(|(f, e)| BatchMember { features: f, embedding: e })
            .collect();
        let out = forward_batch(&batch, &params, &hyper).unwrap();

        let mut projected = Vec::new();
        for (i, member) in batch.iter().enumerate() {
            let map = attention_forward(member.features, member.embedding, &params, &hyper).unwrap();
            assert_eq!(map.weights, out.attention[i].weights);
            let feat = attended_independent(&map, member.features, &params).unwrap();
            let ind = decode(feat.data(), DecoderHead::Independent, &params).unwrap();
            assert_eq!(ind, out.independent[i]);
            projected.push(feat);
        }
        let common = decode(
            aggregate_common(&projected).unwrap().data(),
            DecoderHead::Common,
            &params,
        )
        .unwrap();
        assert_eq!(common, out.common);
    }

    #[test]
    fn forward_batch_rejects_wrong_batch_size() {
        let hyper = tiny_hyper();
        let params = ModelParams::zeros(&hyper);
        let mut rng = stream_rng(13, 0);
        let (features, embedding) = random_member(&mut rng, &hyper);
        let batch = [BatchMember { features: &features, embedding: &embedding }];
        let err = forward_batch(&batch, &params, &hyper).unwrap_err();
        assert!(matches!(err, ModelError::Config(_)));
    }
}
