//! Unsupervised phrase grounding via concept self-supervision.
//!
//! The library trains a joint visual-textual attention encoder together with
//! a concept decoder on *concept batches*: groups of k feature-grid/phrase
//! pairs that share one selected concept. Decoding the shared concept from
//! attended features (jointly across the batch and independently per
//! instance) provides the supervisory signal; no localization labels are
//! used. Grounding quality is measured with the pointing game on held-out
//! scenes.
//!
//! Modules:
//! - [`numcore`]: dense f64 kernels, activations, hand-derived backward
//!   passes, Adam, and a finite-difference gradient checker.
//! - [`grounder`]: the encoder-decoder model, batch forward/backward, and
//!   attention-to-heatmap conversion.
//! - [`corpus`]: synthetic planted-concept scene generation, JSON-Lines
//!   ingestion, feature standardization, and concept-batch sampling.
//! - [`train`]: the surrogate loss, the training loop, and checkpoints.
//! - [`eval`]: pointing-game evaluation, baselines, the ablation harness,
//!   and per-concept reporting.

pub mod corpus;
pub mod eval;
pub mod grounder;
pub mod numcore;
pub mod rng;
pub mod train;
