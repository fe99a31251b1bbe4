//! Synthetic planted-concept scenes: a desk-scale substitute for frozen
//! backbone and language-model features with known ground truth.
//!
//! Every concept gets a fixed unit-norm visual signature and a fixed token
//! embedding, both drawn from a signature stream that depends only on the
//! seed. Scenes are drawn from a split-specific stream, so train and test
//! corpora generated with the same seed share signatures while their scenes
//! stay disjoint.

use std::collections::BTreeMap;

use rand::seq::index;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::numcore::Tensor2;
use crate::rng::{fnv1a, stream_rng, streams};

use super::{Corpus, CorpusHeader, DataError, Instance, PixelBox, Token};

/// Generation parameters. Every field has a default; the JSON spec document
/// can override any subset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GenSpec {
    /// Concept vocabulary size.
    pub concepts: usize,
    /// Visual feature channels.
    pub channels: usize,
    /// Phrase embedding dimension.
    pub embed_dim: usize,
    pub grid_h: usize,
    pub grid_w: usize,
    pub image_h: u32,
    pub image_w: u32,
    /// Scenes to generate.
    pub scenes: usize,
    /// Inclusive range of planted concepts per scene.
    pub concepts_per_scene: [usize; 2],
    /// Inclusive range of planted rectangle side lengths, in cells.
    pub region_cells: [usize; 2],
    /// Standard deviation of the Gaussian feature noise.
    pub noise_sigma: f64,
    /// Non-noun filler tokens appended to each phrase.
    pub distractors_per_phrase: usize,
    /// Size of the filler token pool.
    pub distractor_vocab: usize,
    /// Scene-stream label; corpora generated with the same seed but
    /// different splits share signatures and differ in scenes.
    pub split: String,
}

impl Default for GenSpec {
    fn default() -> Self {
        Self {
            concepts: 12,
            channels: 32,
            embed_dim: 16,
            grid_h: 7,
            grid_w: 7,
            image_h: 224,
            image_w: 224,
            scenes: 2000,
            concepts_per_scene: [1, 3],
            region_cells: [1, 3],
            noise_sigma: 0.3,
            distractors_per_phrase: 2,
            distractor_vocab: 20,
            split: "train".to_string(),
        }
    }
}

impl GenSpec {
    pub fn validate(&self) -> Result<(), DataError> {
        if self.concepts < 2 {
            return Err(DataError::Config(format!(
                "need at least 2 concepts, got {}",
                self.concepts
            )));
        }
        let counts = [self.channels, self.embed_dim, self.grid_h, self.grid_w, self.scenes];
        if counts.iter().any(|&c| c == 0) || self.image_h == 0 || self.image_w == 0 {
            return Err(DataError::Config("all dimensions must be at least 1".to_string()));
        }
        let [cps_lo, cps_hi] = self.concepts_per_scene;
        if cps_lo == 0 || cps_lo > cps_hi || cps_hi > self.concepts {
            return Err(DataError::Config(format!(
                "concepts_per_scene range [{cps_lo}, {cps_hi}] invalid for {} concepts",
                self.concepts
            )));
        }
        let [rc_lo, rc_hi] = self.region_cells;
        if rc_lo == 0 || rc_lo > rc_hi {
            return Err(DataError::Config(format!(
                "region_cells range [{rc_lo}, {rc_hi}] invalid"
            )));
        }
        if rc_hi > self.grid_h.min(self.grid_w) {
            return Err(DataError::Config(format!(
                "planted rectangle side {rc_hi} exceeds the {}x{} grid",
                self.grid_h, self.grid_w
            )));
        }
        if !(self.noise_sigma >= 0.0) {
            return Err(DataError::Config(format!(
                "noise_sigma must be nonnegative, got {}",
                self.noise_sigma
            )));
        }
        if self.distractors_per_phrase > 0 && self.distractor_vocab == 0 {
            return Err(DataError::Config(
                "distractors_per_phrase requires a nonempty distractor_vocab".to_string(),
            ));
        }
        Ok(())
    }

    fn concept_token(i: usize) -> String {
        format!("concept{i}")
    }

    fn filler_token(i: usize) -> String {
        format!("filler{i}")
    }
}

fn unit_norm_vector(dim: usize, rng: &mut impl Rng) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..dim).map(|_| StandardNormal.sample(rng)).collect();
        let norm: f64 = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 1e-12 {
            return v.into_iter().map(|x| x / norm).collect();
        }
    }
}

/// The fixed unit-norm visual signature of every concept, in vocabulary
/// order. Deterministic in `seed` and independent of the split, matching what
/// [`generate_corpus`] plants.
pub fn concept_signatures(spec: &GenSpec, seed: u64) -> Vec<Vec<f64>> {
    let mut rng = stream_rng(seed, streams::SIGNATURES);
    (0..spec.concepts)
        .map(|_| unit_norm_vector(spec.channels, &mut rng))
        .collect()
}

/// Deterministically generates a planted-concept corpus.
///
/// Concept signatures and token embeddings come from the signature stream;
/// scene content comes from a stream derived from the split label. Cells
/// inside a planted rectangle carry the concept signature plus Gaussian
/// noise, background cells carry pure noise; each planted rectangle scales to
/// a pixel-space ground-truth box.
pub fn generate_corpus(spec: &GenSpec, seed: u64) -> Result<Corpus, DataError> {
    spec.validate()?;
    let n = spec.grid_h * spec.grid_w;

    // Signature stream: visual signatures first (matching
    // concept_signatures), then concept token embeddings, then filler
    // embeddings.
    let mut sig_rng = stream_rng(seed, streams::SIGNATURES);
    let signatures: Vec<Vec<f64>> = (0..spec.concepts)
        .map(|_| unit_norm_vector(spec.channels, &mut sig_rng))
        .collect();
    let mut token_embeddings = BTreeMap::new();
    let concept_tokens: Vec<String> = (0..spec.concepts).map(GenSpec::concept_token).collect();
    for token in &concept_tokens {
        token_embeddings.insert(token.clone(), unit_norm_vector(spec.embed_dim, &mut sig_rng));
    }
    let filler_tokens: Vec<String> = (0..spec.distractor_vocab).map(GenSpec::filler_token).collect();
    for token in &filler_tokens {
        token_embeddings.insert(token.clone(), unit_norm_vector(spec.embed_dim, &mut sig_rng));
    }

    let mut rng = stream_rng(seed, streams::SCENES ^ fnv1a(spec.split.as_bytes()));
    let cell_w = spec.image_w as f64 / spec.grid_w as f64;
    let cell_h = spec.image_h as f64 / spec.grid_h as f64;
    let mut instances = Vec::with_capacity(spec.scenes);
    for scene in 0..spec.scenes {
        let planted = rng.gen_range(spec.concepts_per_scene[0]..=spec.concepts_per_scene[1]);
        let chosen = index::sample(&mut rng, spec.concepts, planted);

        // Rectangles are drawn before the noise so the draw order is fixed.
        let mut rects = Vec::with_capacity(planted);
        for _ in 0..planted {
            let w = rng.gen_range(spec.region_cells[0]..=spec.region_cells[1]);
            let h = rng.gen_range(spec.region_cells[0]..=spec.region_cells[1]);
            let col0 = rng.gen_range(0..=spec.grid_w - w);
            let row0 = rng.gen_range(0..=spec.grid_h - h);
            rects.push((row0, col0, h, w));
        }

        let mut tokens: Vec<Token> = chosen
            .iter()
            .map(|c| Token { text: concept_tokens[c].clone(), noun: true })
            .collect();
        for _ in 0..spec.distractors_per_phrase {
            let f = rng.gen_range(0..spec.distractor_vocab);
            tokens.push(Token { text: filler_tokens[f].clone(), noun: false });
        }

        let mut data = vec![0.0; spec.channels * n];
        if spec.noise_sigma > 0.0 {
            for v in &mut data {
                let noise: f64 = StandardNormal.sample(&mut rng);
                *v = noise * spec.noise_sigma;
            }
        }
        let mut gt_boxes = Vec::with_capacity(planted);
        for (concept, &(row0, col0, h, w)) in chosen.iter().zip(rects.iter()) {
            let signature = &signatures[concept];
            for row in row0..row0 + h {
                for col in col0..col0 + w {
                    let cell = row * spec.grid_w + col;
                    for (c, s) in signature.iter().enumerate() {
                        data[c * n + cell] += s;
                    }
                }
            }
            gt_boxes.push(PixelBox {
                x0: col0 as f64 * cell_w,
                y0: row0 as f64 * cell_h,
                x1: (col0 + w) as f64 * cell_w,
                y1: (row0 + h) as f64 * cell_h,
            });
        }

        let mut embedding = vec![0.0; spec.embed_dim];
        for token in &tokens {
            for (d, v) in token_embeddings[&token.text].iter().enumerate() {
                embedding[d] += v;
            }
        }
        for v in &mut embedding {
            *v /= tokens.len() as f64;
        }

        instances.push(Instance {
            id: scene.to_string(),
            features: Tensor2::new(spec.channels, n, data)
                .map_err(|e| DataError::Invalid(e.to_string()))?,
            embedding,
            tokens,
            gt_boxes,
        });
    }

    Ok(Corpus {
        header: CorpusHeader {
            channels: spec.channels,
            regions: n,
            embed_dim: spec.embed_dim,
            grid_h: spec.grid_h,
            grid_w: spec.grid_w,
            image_h: spec.image_h,
            image_w: spec.image_w,
            vocab: concept_tokens,
            token_embeddings,
        },
        instances,
    })
}
