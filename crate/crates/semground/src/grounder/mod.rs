//! The encoder-decoder grounding model.
//!
//! The encoder concatenates a phrase embedding onto every region of a visual
//! feature grid and runs a shared four-layer perceptron to one logit per
//! region; a softmax over regions yields the attention map. Attended features
//! (regions scaled by attention, then a shared channel projection) feed two
//! decoder heads: a common head on the feature sum across the concept batch
//! and an independent head on each instance separately, both predicting the
//! batch concept.

mod backward;
mod forward;
mod heatmap;

pub use backward::{backward_batch, BatchGradient};
pub use forward::{
    aggregate_common, attended_independent, attention_forward, concat_tile, decode,
    forward_batch, BatchMember, DecoderHead,
};
pub use heatmap::{attention_argmax_point, export_heatmap, render_heatmap};

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::numcore::{NumError, Tensor2};

/// Errors raised by the model.
#[derive(Debug, Error)]
pub enum ModelError {
    #[error(transparent)]
    Num(#[from] NumError),
    #[error("configuration: {0}")]
    Config(String),
    #[error("non-finite value in {layer}")]
    NonFinite { layer: String },
}

/// Shape of the model and of the concept batches it consumes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct HyperParams {
    /// Visual feature channels per region.
    pub channels: usize,
    pub grid_h: usize,
    pub grid_w: usize,
    /// Phrase embedding dimension.
    pub embed_dim: usize,
    /// Widths of the four attention layers; the last must be 1 so the stack
    /// emits a single logit per region.
    pub attn_widths: [usize; 4],
    /// Channels after the shared 1x1 projection of attended features.
    pub proj_channels: usize,
    /// Concept vocabulary size.
    pub concepts: usize,
    /// Concept batch size.
    pub k: usize,
}

impl HyperParams {
    /// Number of spatial regions.
    pub fn regions(&self) -> usize {
        self.grid_h * self.grid_w
    }

    /// Length of a flattened projected feature block (decoder head input).
    pub fn decoder_input(&self) -> usize {
        self.proj_channels * self.regions()
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        if self.attn_widths[3] != 1 {
            return Err(ModelError::Config(format!(
                "final attention layer width must be 1, got {}",
                self.attn_widths[3]
            )));
        }
        let counts = [
            self.channels,
            self.grid_h,
            self.grid_w,
            self.embed_dim,
            self.attn_widths[0],
            self.attn_widths[1],
            self.attn_widths[2],
            self.proj_channels,
            self.k,
        ];
        if counts.iter().any(|&c| c == 0) {
            return Err(ModelError::Config("all dimensions must be at least 1".to_string()));
        }
        if self.concepts < 2 {
            return Err(ModelError::Config(format!(
                "concept vocabulary must have at least 2 entries, got {}",
                self.concepts
            )));
        }
        Ok(())
    }

    /// Total learnable parameter count in the documented flattening order.
    pub fn param_count(&self) -> usize {
        let mut total = 0;
        let mut input = self.channels + self.embed_dim;
        for width in self.attn_widths {
            total += width * input + width;
            input = width;
        }
        total += self.proj_channels * self.channels + self.proj_channels;
        total += 2 * (self.concepts * self.decoder_input() + self.concepts);
        total
    }
}

impl std::fmt::Display for HyperParams {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "channels={} grid={}x{} embed_dim={} attn=[{},{},{},{}] proj_channels={} concepts={} k={}",
            self.channels,
            self.grid_h,
            self.grid_w,
            self.embed_dim,
            self.attn_widths[0],
            self.attn_widths[1],
            self.attn_widths[2],
            self.attn_widths[3],
            self.proj_channels,
            self.concepts,
            self.k
        )
    }
}

/// One dense layer: a weight matrix and a bias vector.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseLayer {
    pub weight: Tensor2,
    pub bias: Vec<f64>,
}

impl DenseLayer {
    fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            weight: Tensor2::zeros(rows, cols),
            bias: vec![0.0; rows],
        }
    }

    fn init(rows: usize, cols: usize, rng: &mut impl Rng) -> Self {
        // Symmetric scaled init keeps early logits small, so attention starts
        // near uniform; biases start at zero.
        let bound = (6.0 / (rows + cols) as f64).sqrt();
        Self {
            weight: Tensor2::from_fn(rows, cols, |_, _| rng.gen_range(-bound..=bound)),
            bias: vec![0.0; rows],
        }
    }

    fn param_count(&self) -> usize {
        self.weight.rows() * self.weight.cols() + self.bias.len()
    }
}

/// All learnable weights.
///
/// Flattening order is fixed and load-bearing for checkpoints and optimizer
/// state: the four attention layers in stack order, then the channel
/// projection, then the common head, then the independent head; within each
/// layer the weight matrix (row-major) precedes the bias.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub attn: [DenseLayer; 4],
    pub proj: DenseLayer,
    pub common_head: DenseLayer,
    pub independent_head: DenseLayer,
}

impl ModelParams {
    /// All-zero parameters (uniform attention, uniform decoders).
    pub fn zeros(hyper: &HyperParams) -> Self {
        Self::build(hyper, DenseLayer::zeros)
    }

    /// Random initialization: weights uniform in ±sqrt(6/(fan_in+fan_out)),
    /// biases zero.
    pub fn init(hyper: &HyperParams, rng: &mut impl Rng) -> Self {
        Self::build(hyper, |rows, cols| DenseLayer::init(rows, cols, rng))
    }

    fn build(hyper: &HyperParams, mut layer: impl FnMut(usize, usize) -> DenseLayer) -> Self {
        let mut input = hyper.channels + hyper.embed_dim;
        let attn = hyper.attn_widths.map(|width| {
            let l = layer(width, input);
            input = width;
            l
        });
        Self {
            attn,
            proj: layer(hyper.proj_channels, hyper.channels),
            common_head: layer(hyper.concepts, hyper.decoder_input()),
            independent_head: layer(hyper.concepts, hyper.decoder_input()),
        }
    }

    fn layers(&self) -> impl Iterator<Item = &DenseLayer> {
        self.attn
            .iter()
            .chain(std::iter::once(&self.proj))
            .chain(std::iter::once(&self.common_head))
            .chain(std::iter::once(&self.independent_head))
    }

    pub fn param_count(&self) -> usize {
        self.layers().map(DenseLayer::param_count).sum()
    }

    /// Serializes every parameter into one flat array in the documented order.
    pub fn flatten(&self) -> Vec<f64> {
        let mut flat = Vec::with_capacity(self.param_count());
        for layer in self.layers() {
            flat.extend_from_slice(layer.weight.data());
            flat.extend_from_slice(&layer.bias);
        }
        flat
    }

    /// Rebuilds parameters from a flat array in the documented order.
    pub fn from_flat(hyper: &HyperParams, flat: &[f64]) -> Result<Self, ModelError> {
        let expected = hyper.param_count();
        if flat.len() != expected {
            return Err(NumError::LengthMismatch {
                op: "ModelParams::from_flat",
                expected,
                actual: flat.len(),
            }
            .into());
        }
        let mut offset = 0;
        let mut take_layer = |rows: usize, cols: usize| -> Result<DenseLayer, ModelError> {
            let w_len = rows * cols;
            let weight = Tensor2::new(rows, cols, flat[offset..offset + w_len].to_vec())?;
            offset += w_len;
            let bias = flat[offset..offset + rows].to_vec();
            offset += rows;
            if let Some(i) = bias.iter().position(|v| !v.is_finite()) {
                return Err(NumError::NonFinite {
                    context: "ModelParams::from_flat: bias".to_string(),
                    index: i,
                }
                .into());
            }
            Ok(DenseLayer { weight, bias })
        };
        let mut input = hyper.channels + hyper.embed_dim;
        let mut attn = Vec::with_capacity(4);
        for width in hyper.attn_widths {
            attn.push(take_layer(width, input)?);
            input = width;
        }
        let proj = take_layer(hyper.proj_channels, hyper.channels)?;
        let common_head = take_layer(hyper.concepts, hyper.decoder_input())?;
        let independent_head = take_layer(hyper.concepts, hyper.decoder_input())?;
        let attn: [DenseLayer; 4] = attn.try_into().expect("four attention layers");
        Ok(Self {
            attn,
            proj,
            common_head,
            independent_head,
        })
    }
}

/// A probability distribution over the spatial grid; the grounding output.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionMap {
    pub weights: Vec<f64>,
    pub grid_h: usize,
    pub grid_w: usize,
}

impl AttentionMap {
    pub fn new(weights: Vec<f64>, grid_h: usize, grid_w: usize) -> Result<Self, ModelError> {
        if weights.len() != grid_h * grid_w {
            return Err(NumError::LengthMismatch {
                op: "AttentionMap::new",
                expected: grid_h * grid_w,
                actual: weights.len(),
            }
            .into());
        }
        if weights.iter().any(|&w| !(w >= 0.0)) {
            return Err(ModelError::Config("attention weights must be nonnegative".to_string()));
        }
        let sum: f64 = weights.iter().sum();
        if (sum - 1.0).abs() > 1e-9 {
            return Err(ModelError::Config(format!(
                "attention weights must sum to 1, got {sum}"
            )));
        }
        Ok(Self { weights, grid_h, grid_w })
    }

    /// Cell of the maximum weight as `(row, col)`; ties resolve to the lowest
    /// row-major linear index.
    pub fn argmax_cell(&self) -> (usize, usize) {
        let mut best = 0;
        for (i, &w) in self.weights.iter().enumerate() {
            if w > self.weights[best] {
                best = i;
            }
        }
        (best / self.grid_w, best % self.grid_w)
    }
}

/// Everything the model produces for one concept batch.
#[derive(Debug, Clone)]
pub struct BatchOutputs {
    /// Per-instance attention maps.
    pub attention: Vec<AttentionMap>,
    /// Per-instance concept distributions from the independent head.
    pub independent: Vec<Vec<f64>>,
    /// The single concept distribution decoded from the batch-aggregated
    /// features.
    pub common: Vec<f64>,
}

/// Which surrogate-loss terms are active.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LossMode {
    /// Independent concept prediction only.
    Ic,
    /// Common concept prediction only.
    Cc,
    /// Both terms.
    Icc,
}

impl LossMode {
    pub const ALL: [LossMode; 3] = [LossMode::Ic, LossMode::Cc, LossMode::Icc];

    /// Weights `(common, independent)` applied to the two loss terms.
    pub fn term_weights(self) -> (f64, f64) {
        match self {
            LossMode::Ic => (0.0, 1.0),
            LossMode::Cc => (1.0, 0.0),
            LossMode::Icc => (1.0, 1.0),
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            LossMode::Ic => "ic",
            LossMode::Cc => "cc",
            LossMode::Icc => "icc",
        }
    }
}

impl std::fmt::Display for LossMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for LossMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "ic" => Ok(LossMode::Ic),
            "cc" => Ok(LossMode::Cc),
            "icc" => Ok(LossMode::Icc),
            other => Err(format!("unknown loss mode '{other}' (expected ic, cc or icc)")),
        }
    }
}
