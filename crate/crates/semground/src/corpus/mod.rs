//! Data layer: planted-concept scene generation, JSON-Lines corpora,
//! feature standardization, concept identification, and concept-batch
//! sampling.
//!
//! Feature grids stand in for frozen backbone activations; phrase embeddings
//! stand in for frozen language-model features. Ground-truth boxes are
//! carried for evaluation only and are never visible to training.

mod gen;
mod io;

pub use gen::{generate_corpus, GenSpec};
pub use io::{ingest_corpus, write_corpus, IngestReport};

use std::collections::{BTreeMap, HashMap};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::grounder::BatchMember;
use crate::numcore::Tensor2;

/// Standard deviations are floored at this value before standardization so a
/// degenerate constant channel never divides by zero.
pub const STD_FLOOR: f64 = 1e-6;

/// Bounded retries for concept draws that hit concepts with no instances.
const MAX_SAMPLE_ATTEMPTS: usize = 10_000;

/// Errors raised by the data layer.
#[derive(Debug, Error)]
pub enum DataError {
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("line {line}: invalid JSON: {message}")]
    Json { line: usize, message: String },
    #[error("line {line}: {message}")]
    Validation { line: usize, message: String },
    #[error("header: {0}")]
    Header(String),
    #[error("no instances")]
    NoInstances,
    #[error("config: {0}")]
    Config(String),
    #[error("no populated concept found after {attempts} sampling attempts")]
    SamplingExhausted { attempts: usize },
    #[error("empty ground-truth box list")]
    EmptyBoxes,
    #[error("{0}")]
    Invalid(String),
}

/// One phrase token with its part-of-speech noun flag.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Token {
    pub text: String,
    pub noun: bool,
}

/// Axis-aligned ground-truth box in pixel coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PixelBox {
    pub x0: f64,
    pub y0: f64,
    pub x1: f64,
    pub y1: f64,
}

impl PixelBox {
    /// Boundary-inclusive point-in-box test.
    pub fn contains(&self, x: f64, y: f64) -> bool {
        x >= self.x0 && x <= self.x1 && y >= self.y0 && y <= self.y1
    }

    pub fn area(&self) -> f64 {
        (self.x1 - self.x0).max(0.0) * (self.y1 - self.y0).max(0.0)
    }
}

/// One phrase-scene pair.
#[derive(Debug, Clone, PartialEq)]
pub struct Instance {
    pub id: String,
    /// Visual feature grid, `channels × regions`, regions in row-major grid
    /// order.
    pub features: Tensor2,
    /// Phrase embedding.
    pub embedding: Vec<f64>,
    pub tokens: Vec<Token>,
    /// Evaluation-only ground truth; possibly several boxes per instance.
    pub gt_boxes: Vec<PixelBox>,
}

impl Instance {
    /// Noun-flagged tokens that exist in the vocabulary, as concept indices,
    /// one entry per occurrence.
    pub fn eligible_concepts(&self, vocab: &ConceptVocabulary) -> Vec<usize> {
        self.tokens
            .iter()
            .filter(|t| t.noun)
            .filter_map(|t| vocab.index_of(&t.text))
            .collect()
    }
}

/// Corpus-wide metadata; the first record of a corpus file.
#[derive(Debug, Clone, PartialEq)]
pub struct CorpusHeader {
    /// Visual channels per region.
    pub channels: usize,
    /// Spatial regions per grid (`grid_h * grid_w`).
    pub regions: usize,
    /// Phrase embedding dimension.
    pub embed_dim: usize,
    pub grid_h: usize,
    pub grid_w: usize,
    pub image_h: u32,
    pub image_w: u32,
    /// Concept vocabulary in index order.
    pub vocab: Vec<String>,
    /// Embeddings for every token that can appear in a phrase; used to
    /// rebuild phrase embeddings for the single-noun evaluation.
    pub token_embeddings: BTreeMap<String, Vec<f64>>,
}

/// A full corpus: header plus instances.
#[derive(Debug, Clone, PartialEq)]
pub struct Corpus {
    pub header: CorpusHeader,
    pub instances: Vec<Instance>,
}

impl Corpus {
    pub fn vocabulary(&self) -> Result<ConceptVocabulary, DataError> {
        ConceptVocabulary::from_tokens(self.header.vocab.clone())
    }

    pub fn instance_by_id(&self, id: &str) -> Option<&Instance> {
        self.instances.iter().find(|inst| inst.id == id)
    }

    /// A copy with features and embeddings standardized by `stats`.
    pub fn standardized(&self, stats: &ChannelStats) -> Result<Corpus, DataError> {
        if stats.visual_mean.len() != self.header.channels
            || stats.text_mean.len() != self.header.embed_dim
        {
            return Err(DataError::Config(format!(
                "stats cover {} channels / {} text dims, corpus has {} / {}",
                stats.visual_mean.len(),
                stats.text_mean.len(),
                self.header.channels,
                self.header.embed_dim
            )));
        }
        let instances = self
            .instances
            .iter()
            .map(|inst| {
                let features = Tensor2::from_fn(
                    inst.features.rows(),
                    inst.features.cols(),
                    |c, j| (inst.features.get(c, j) - stats.visual_mean[c]) / stats.visual_std[c],
                );
                let embedding = inst
                    .embedding
                    .iter()
                    .enumerate()
                    .map(|(d, &v)| (v - stats.text_mean[d]) / stats.text_std[d])
                    .collect();
                Instance {
                    id: inst.id.clone(),
                    features,
                    embedding,
                    tokens: inst.tokens.clone(),
                    gt_boxes: inst.gt_boxes.clone(),
                }
            })
            .collect();
        Ok(Corpus {
            header: self.header.clone(),
            instances,
        })
    }
}

/// Ordered concept tokens with a dense token-to-index map.
#[derive(Debug, Clone)]
pub struct ConceptVocabulary {
    tokens: Vec<String>,
    index: HashMap<String, usize>,
}

impl ConceptVocabulary {
    pub fn from_tokens(tokens: Vec<String>) -> Result<Self, DataError> {
        let mut index = HashMap::with_capacity(tokens.len());
        for (i, token) in tokens.iter().enumerate() {
            if index.insert(token.clone(), i).is_some() {
                return Err(DataError::Header(format!("duplicate vocabulary token '{token}'")));
            }
        }
        Ok(Self { tokens, index })
    }

    pub fn index_of(&self, token: &str) -> Option<usize> {
        self.index.get(token).copied()
    }

    pub fn token(&self, index: usize) -> &str {
        &self.tokens[index]
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }
}

/// Frozen per-channel standardization statistics from the training corpus.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChannelStats {
    pub visual_mean: Vec<f64>,
    pub visual_std: Vec<f64>,
    pub text_mean: Vec<f64>,
    pub text_std: Vec<f64>,
}

impl ChannelStats {
    pub fn save(&self, path: &Path) -> Result<(), DataError> {
        let json = serde_json::to_string_pretty(self).expect("stats serialize");
        std::fs::write(path, json + "\n")?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, DataError> {
        let raw = std::fs::read_to_string(path)?;
        serde_json::from_str(&raw).map_err(|e| DataError::Json {
            line: e.line(),
            message: e.to_string(),
        })
    }
}

/// Streaming mean/variance accumulator (Welford).
struct Moments {
    count: u64,
    mean: f64,
    m2: f64,
}

impl Moments {
    fn new() -> Self {
        Self { count: 0, mean: 0.0, m2: 0.0 }
    }

    fn push(&mut self, value: f64) {
        self.count += 1;
        let delta = value - self.mean;
        self.mean += delta / self.count as f64;
        self.m2 += delta * (value - self.mean);
    }

    /// Population standard deviation, floored at [`STD_FLOOR`].
    fn std(&self) -> f64 {
        (self.m2 / self.count as f64).sqrt().max(STD_FLOOR)
    }
}

/// Per-channel mean and standard deviation over all cells of all instances
/// (visual) and per-dimension over all phrase embeddings (textual).
pub fn compute_stats(corpus: &Corpus) -> Result<ChannelStats, DataError> {
    if corpus.instances.is_empty() {
        return Err(DataError::NoInstances);
    }
    let channels = corpus.header.channels;
    let dims = corpus.header.embed_dim;
    let mut visual: Vec<Moments> = (0..channels).map(|_| Moments::new()).collect();
    let mut text: Vec<Moments> = (0..dims).map(|_| Moments::new()).collect();
    for inst in &corpus.instances {
        for (c, moments) in visual.iter_mut().enumerate() {
            for &v in inst.features.row(c) {
                moments.push(v);
            }
        }
        for (d, moments) in text.iter_mut().enumerate() {
            moments.push(inst.embedding[d]);
        }
    }
    Ok(ChannelStats {
        visual_mean: visual.iter().map(|m| m.mean).collect(),
        visual_std: visual.iter().map(|m| m.std()).collect(),
        text_mean: text.iter().map(|m| m.mean).collect(),
        text_std: text.iter().map(|m| m.std()).collect(),
    })
}

/// Uniformly selects one concept among the noun-flagged, in-vocabulary
/// tokens of the phrase. `None` is the skip signal for instances with no
/// eligible noun in this vocabulary.
pub fn identify_concept(
    instance: &Instance,
    vocab: &ConceptVocabulary,
    rng: &mut impl Rng,
) -> Option<usize> {
    let eligible = instance.eligible_concepts(vocab);
    if eligible.is_empty() {
        return None;
    }
    Some(eligible[rng.gen_range(0..eligible.len())])
}

/// Per-concept inverted index over a corpus; immutable after build.
#[derive(Debug, Clone)]
pub struct CorpusIndex {
    per_concept: Vec<Vec<usize>>,
}

impl CorpusIndex {
    pub fn build(corpus: &Corpus, vocab: &ConceptVocabulary) -> Self {
        let mut per_concept = vec![Vec::new(); vocab.len()];
        for (idx, inst) in corpus.instances.iter().enumerate() {
            let mut seen = Vec::new();
            for concept in inst.eligible_concepts(vocab) {
                if !seen.contains(&concept) {
                    seen.push(concept);
                    per_concept[concept].push(idx);
                }
            }
        }
        Self { per_concept }
    }

    pub fn instances_for(&self, concept: usize) -> &[usize] {
        &self.per_concept[concept]
    }

    pub fn concept_count(&self) -> usize {
        self.per_concept.len()
    }
}

/// The training unit: a selected concept and `k` instances whose phrases all
/// contain it as a noun.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConceptBatch {
    pub concept: usize,
    /// Indices into `Corpus::instances`.
    pub members: Vec<usize>,
}

/// Draws a concept uniformly from the vocabulary (not frequency-weighted),
/// then `k` instances containing it: without replacement when the concept has
/// at least `k` instances, with replacement otherwise. Concepts with no
/// instances are redrawn up to a bounded number of attempts.
pub fn sample_concept_batch(
    index: &CorpusIndex,
    k: usize,
    rng: &mut impl Rng,
) -> Result<ConceptBatch, DataError> {
    if k == 0 {
        return Err(DataError::Config("concept batch size k must be at least 1".to_string()));
    }
    for _ in 0..MAX_SAMPLE_ATTEMPTS {
        let concept = rng.gen_range(0..index.concept_count());
        let pool = index.instances_for(concept);
        if pool.is_empty() {
            continue;
        }
        let members = if pool.len() >= k {
            pool.choose_multiple(rng, k).copied().collect()
        } else {
            (0..k).map(|_| pool[rng.gen_range(0..pool.len())]).collect()
        };
        return Ok(ConceptBatch { concept, members });
    }
    Err(DataError::SamplingExhausted { attempts: MAX_SAMPLE_ATTEMPTS })
}

/// Resolves a sampled batch into model inputs. In debug builds the batch
/// invariant is asserted: every member's phrase contains the selected concept
/// token with the noun flag set.
pub fn batch_members<'a>(
    corpus: &'a Corpus,
    vocab: &ConceptVocabulary,
    batch: &ConceptBatch,
) -> Vec<BatchMember<'a>> {
    batch
        .members
        .iter()
        .map(|&idx| {
            let inst = &corpus.instances[idx];
            debug_assert!(
                inst.tokens
                    .iter()
                    .any(|t| t.noun && t.text == vocab.token(batch.concept)),
                "concept batch invariant violated for instance {}",
                inst.id
            );
            BatchMember {
                features: &inst.features,
                embedding: &inst.embedding,
            }
        })
        .collect()
}
