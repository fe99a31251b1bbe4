//! Pointing-game evaluation, baselines, the single-noun comparison, and
//! per-concept reporting.

mod ablation;
mod report;

pub use ablation::{ablation_run, AblationCell, AblationConfig, AblationTable};
pub use report::{
    write_ablation_csvs, write_baselines_csv, write_concept_csv, write_details_jsonl,
    write_paired_csv, write_summary_csv,
};

use std::collections::BTreeMap;

use rand::Rng;
use thiserror::Error;

use crate::corpus::{
    identify_concept, ChannelStats, ConceptVocabulary, Corpus, DataError, Instance, PixelBox,
};
use crate::grounder::{
    attention_argmax_point, attention_forward, AttentionMap, HyperParams, ModelError, ModelParams,
};
use crate::numcore::Tensor2;
use crate::rng::{fnv1a, stream_rng, streams};
use crate::train::{CheckpointError, TrainError};

#[derive(Debug, Error)]
pub enum EvalError {
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Train(#[from] TrainError),
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("config: {0}")]
    Config(String),
}

/// Hit/miss tally for one concept, plus the ground-truth area mass needed
/// for the size-correlation analysis.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct ConceptTally {
    pub hits: usize,
    pub misses: usize,
    area_fraction_sum: f64,
}

impl ConceptTally {
    pub fn instances(&self) -> usize {
        self.hits + self.misses
    }

    pub fn accuracy(&self) -> f64 {
        self.hits as f64 / self.instances() as f64
    }

    /// Mean over evaluations of the instance-mean ground-truth box area, as a
    /// fraction of the image area.
    pub fn mean_area_fraction(&self) -> f64 {
        self.area_fraction_sum / self.instances() as f64
    }

    fn record(&mut self, hit: bool, area_fraction: f64) {
        if hit {
            self.hits += 1;
        } else {
            self.misses += 1;
        }
        self.area_fraction_sum += area_fraction;
    }
}

/// Per-instance evaluation detail, written out as JSON Lines.
#[derive(Debug, Clone, PartialEq)]
pub struct InstanceOutcome {
    pub id: String,
    pub point: (f64, f64),
    pub hit: bool,
    /// Concept the instance is attributed to in per-concept reporting.
    pub concept: Option<String>,
}

/// Aggregate pointing-game outcome.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct EvalResult {
    pub hits: usize,
    pub misses: usize,
    pub per_concept: BTreeMap<String, ConceptTally>,
    /// One record per evaluation; empty for the trial-replicated random
    /// baseline.
    pub details: Vec<InstanceOutcome>,
}

impl EvalResult {
    pub fn evaluated(&self) -> usize {
        self.hits + self.misses
    }

    pub fn accuracy(&self) -> f64 {
        self.hits as f64 / self.evaluated() as f64
    }

    fn record(
        &mut self,
        outcome: InstanceOutcome,
        area_fraction: f64,
        keep_detail: bool,
    ) {
        if outcome.hit {
            self.hits += 1;
        } else {
            self.misses += 1;
        }
        if let Some(concept) = &outcome.concept {
            self.per_concept
                .entry(concept.clone())
                .or_default()
                .record(outcome.hit, area_fraction);
        }
        if keep_detail {
            self.details.push(outcome);
        }
    }
}

/// Hit iff the point lies inside any ground-truth box, boundary inclusive.
pub fn pointing_game(point: (f64, f64), boxes: &[PixelBox]) -> Result<bool, DataError> {
    if boxes.is_empty() {
        return Err(DataError::EmptyBoxes);
    }
    Ok(boxes.iter().any(|b| b.contains(point.0, point.1)))
}

fn mean_area_fraction(boxes: &[PixelBox], image_h: u32, image_w: u32) -> f64 {
    let image_area = image_h as f64 * image_w as f64;
    boxes.iter().map(|b| b.area() / image_area).sum::<f64>() / boxes.len() as f64
}

/// Deterministic per-instance concept attribution for reporting: a uniform
/// draw among the eligible nouns from a stream keyed by the instance id, so
/// the choice does not depend on corpus order.
fn attributed_concept(instance: &Instance, vocab: &ConceptVocabulary) -> Option<String> {
    let mut rng = stream_rng(0, streams::EVAL_ATTRIB ^ fnv1a(instance.id.as_bytes()));
    identify_concept(instance, vocab, &mut rng).map(|c| vocab.token(c).to_string())
}

fn require_matching_corpus(hyper: &HyperParams, corpus: &Corpus) -> Result<(), EvalError> {
    let header = &corpus.header;
    let matches = hyper.channels == header.channels
        && hyper.grid_h == header.grid_h
        && hyper.grid_w == header.grid_w
        && hyper.embed_dim == header.embed_dim
        && hyper.concepts == header.vocab.len();
    if !matches {
        return Err(EvalError::Config(format!(
            "checkpoint has {hyper} but corpus provides channels={} grid={}x{} embed_dim={} concepts={}",
            header.channels,
            header.grid_h,
            header.grid_w,
            header.embed_dim,
            header.vocab.len()
        )));
    }
    Ok(())
}

fn evaluate_with_embedding<F>(
    params: &ModelParams,
    hyper: &HyperParams,
    corpus: &Corpus,
    stats: &ChannelStats,
    mut embedding_of: F,
) -> Result<EvalResult, EvalError>
where
    // Chooses the phrase embedding (standardized) and the reporting concept
    // for each standardized instance; `None` falls back to the instance's
    // own embedding and the default attribution.
    F: FnMut(&Instance) -> Result<Option<(Vec<f64>, Option<String>)>, EvalError>,
{
    require_matching_corpus(hyper, corpus)?;
    let standardized = corpus.standardized(stats)?;
    let vocab = standardized.vocabulary()?;
    let mut result = EvalResult::default();
    for inst in &standardized.instances {
        let (embedding, concept) = match embedding_of(inst)? {
            Some((embedding, concept)) => (embedding, concept),
            None => (inst.embedding.clone(), attributed_concept(inst, &vocab)),
        };
        let map = attention_forward(&inst.features, &embedding, params, hyper)?;
        let point = attention_argmax_point(&map, corpus.header.image_h, corpus.header.image_w);
        let hit = pointing_game(point, &inst.gt_boxes)?;
        let area = mean_area_fraction(&inst.gt_boxes, corpus.header.image_h, corpus.header.image_w);
        result.record(
            InstanceOutcome { id: inst.id.clone(), point, hit, concept },
            area,
            true,
        );
    }
    Ok(result)
}

/// Pointing-game evaluation of a trained model over a corpus: per instance,
/// attention forward, argmax back-projection, then the hit test against the
/// instance's boxes. Deterministic; evaluation never reads exported heatmaps.
pub fn evaluate(
    params: &ModelParams,
    hyper: &HyperParams,
    corpus: &Corpus,
    stats: &ChannelStats,
) -> Result<EvalResult, EvalError> {
    evaluate_with_embedding(params, hyper, corpus, stats, |_| Ok(None))
}

/// Like [`evaluate`], but the phrase is replaced by a single noun uniformly
/// sampled from the phrase; its embedding comes from the corpus token table.
/// Paired with a standard [`evaluate`] run this measures how much the model
/// uses the full phrase beyond the concept word.
pub fn evaluate_single_noun(
    params: &ModelParams,
    hyper: &HyperParams,
    corpus: &Corpus,
    stats: &ChannelStats,
    rng: &mut impl Rng,
) -> Result<EvalResult, EvalError> {
    let embeddings = &corpus.header.token_embeddings;
    evaluate_with_embedding(params, hyper, corpus, stats, |inst| {
        let nouns: Vec<&str> = inst
            .tokens
            .iter()
            .filter(|t| t.noun && embeddings.contains_key(&t.text))
            .map(|t| t.text.as_str())
            .collect();
        if nouns.is_empty() {
            return Err(EvalError::Config(format!(
                "instance {} has no noun with a known token embedding",
                inst.id
            )));
        }
        let token = nouns[rng.gen_range(0..nouns.len())];
        let raw = &embeddings[token];
        let standardized: Vec<f64> = raw
            .iter()
            .enumerate()
            .map(|(d, &v)| (v - stats.text_mean[d]) / stats.text_std[d])
            .collect();
        Ok(Some((standardized, Some(token.to_string()))))
    })
}

/// Full-phrase and single-noun evaluations of the same checkpoint.
#[derive(Debug, Clone)]
pub struct PairedEval {
    pub full: EvalResult,
    pub single_noun: EvalResult,
}

impl PairedEval {
    /// Full-phrase accuracy minus single-noun accuracy.
    pub fn delta(&self) -> f64 {
        self.full.accuracy() - self.single_noun.accuracy()
    }
}

pub fn evaluate_paired(
    params: &ModelParams,
    hyper: &HyperParams,
    corpus: &Corpus,
    stats: &ChannelStats,
    rng: &mut impl Rng,
) -> Result<PairedEval, EvalError> {
    Ok(PairedEval {
        full: evaluate(params, hyper, corpus, stats)?,
        single_noun: evaluate_single_noun(params, hyper, corpus, stats, rng)?,
    })
}

fn cell_center(
    cell: usize,
    grid_h: usize,
    grid_w: usize,
    image_h: u32,
    image_w: u32,
) -> (f64, f64) {
    let (row, col) = (cell / grid_w, cell % grid_w);
    (
        (col as f64 + 0.5) * image_w as f64 / grid_w as f64,
        (row as f64 + 0.5) * image_h as f64 / grid_h as f64,
    )
}

/// Random pointing baseline: per instance and trial, a uniformly random
/// cell's center is the point. Hits and misses count instance-trials;
/// per-instance details are not kept.
pub fn baseline_random(
    corpus: &Corpus,
    trials: usize,
    rng: &mut impl Rng,
) -> Result<EvalResult, EvalError> {
    if trials == 0 {
        return Err(EvalError::Config("trials must be at least 1".to_string()));
    }
    let vocab = corpus.vocabulary()?;
    let header = &corpus.header;
    let n = header.regions;
    let mut result = EvalResult::default();
    for inst in &corpus.instances {
        let concept = attributed_concept(inst, &vocab);
        let area = mean_area_fraction(&inst.gt_boxes, header.image_h, header.image_w);
        for _ in 0..trials {
            let cell = rng.gen_range(0..n);
            let point = cell_center(cell, header.grid_h, header.grid_w, header.image_h, header.image_w);
            let hit = pointing_game(point, &inst.gt_boxes)?;
            result.record(
                InstanceOutcome { id: inst.id.clone(), point, hit, concept: concept.clone() },
                area,
                false,
            );
        }
    }
    Ok(result)
}

/// Analytic expectation of the random baseline: the mean over instances of
/// the fraction of cells whose center lies inside some ground-truth box.
pub fn random_baseline_expectation(corpus: &Corpus) -> Result<f64, EvalError> {
    let header = &corpus.header;
    let n = header.regions;
    let mut total = 0.0;
    for inst in &corpus.instances {
        if inst.gt_boxes.is_empty() {
            return Err(DataError::EmptyBoxes.into());
        }
        let covering = (0..n)
            .filter(|&cell| {
                let point =
                    cell_center(cell, header.grid_h, header.grid_w, header.image_h, header.image_w);
                inst.gt_boxes.iter().any(|b| b.contains(point.0, point.1))
            })
            .count();
        total += covering as f64 / n as f64;
    }
    Ok(total / corpus.instances.len() as f64)
}

/// Center baseline: the image center is the point for every instance.
pub fn baseline_center(corpus: &Corpus) -> Result<EvalResult, EvalError> {
    let vocab = corpus.vocabulary()?;
    let header = &corpus.header;
    let point = (header.image_w as f64 / 2.0, header.image_h as f64 / 2.0);
    let mut result = EvalResult::default();
    for inst in &corpus.instances {
        let hit = pointing_game(point, &inst.gt_boxes)?;
        let area = mean_area_fraction(&inst.gt_boxes, header.image_h, header.image_w);
        let concept = attributed_concept(inst, &vocab);
        result.record(InstanceOutcome { id: inst.id.clone(), point, hit, concept }, area, true);
    }
    Ok(result)
}

/// Cell of the per-cell channel mean's maximum; ties to the lowest row-major
/// index.
fn channel_mean_argmax(features: &Tensor2) -> usize {
    let n = features.cols();
    let mut best = 0;
    let mut best_mean = f64::NEG_INFINITY;
    for cell in 0..n {
        let mut sum = 0.0;
        for c in 0..features.rows() {
            sum += features.get(c, cell);
        }
        let mean = sum / features.rows() as f64;
        if mean > best_mean {
            best_mean = mean;
            best = cell;
        }
    }
    best
}

/// Visual-only baseline: the argmax cell of the channel-mean of the raw
/// (unstandardized) feature grid; the phrase is ignored. This mimics a
/// saliency readout of the frozen visual features.
pub fn baseline_visual(corpus: &Corpus) -> Result<EvalResult, EvalError> {
    let vocab = corpus.vocabulary()?;
    let header = &corpus.header;
    let mut result = EvalResult::default();
    for inst in &corpus.instances {
        let cell = channel_mean_argmax(&inst.features);
        let point = cell_center(cell, header.grid_h, header.grid_w, header.image_h, header.image_w);
        let hit = pointing_game(point, &inst.gt_boxes)?;
        let area = mean_area_fraction(&inst.gt_boxes, header.image_h, header.image_w);
        let concept = attributed_concept(inst, &vocab);
        result.record(InstanceOutcome { id: inst.id.clone(), point, hit, concept }, area, true);
    }
    Ok(result)
}

/// One row of the per-concept report.
#[derive(Debug, Clone, PartialEq)]
pub struct ConceptRow {
    pub concept: String,
    pub instances: usize,
    pub hits: usize,
    pub misses: usize,
    pub accuracy: f64,
    pub mean_area_fraction: f64,
}

/// Per-concept accuracies with the Pearson correlation between accuracy and
/// mean ground-truth area fraction. The correlation is `None` (reported as
/// undefined, never NaN) when either variable has no variance or fewer than
/// two concepts were evaluated.
#[derive(Debug, Clone, PartialEq)]
pub struct ConceptReport {
    pub rows: Vec<ConceptRow>,
    pub pearson_r: Option<f64>,
}

pub fn concept_report(result: &EvalResult) -> ConceptReport {
    let rows: Vec<ConceptRow> = result
        .per_concept
        .iter()
        .filter(|(_, tally)| tally.instances() > 0)
        .map(|(concept, tally)| ConceptRow {
            concept: concept.clone(),
            instances: tally.instances(),
            hits: tally.hits,
            misses: tally.misses,
            accuracy: tally.accuracy(),
            mean_area_fraction: tally.mean_area_fraction(),
        })
        .collect();
    let pearson_r = pearson(
        &rows.iter().map(|r| r.accuracy).collect::<Vec<_>>(),
        &rows.iter().map(|r| r.mean_area_fraction).collect::<Vec<_>>(),
    );
    ConceptReport { rows, pearson_r }
}

/// Pearson correlation; `None` for fewer than two points or zero variance
/// (all values of either variable equal).
fn pearson(x: &[f64], y: &[f64]) -> Option<f64> {
    if x.len() < 2 || x.len() != y.len() {
        return None;
    }
    if x.iter().all(|v| *v == x[0]) || y.iter().all(|v| *v == y[0]) {
        return None;
    }
    let n = x.len() as f64;
    let mean_x = x.iter().sum::<f64>() / n;
    let mean_y = y.iter().sum::<f64>() / n;
    let mut sxy = 0.0;
    let mut sxx = 0.0;
    let mut syy = 0.0;
    for (a, b) in x.iter().zip(y.iter()) {
        sxy += (a - mean_x) * (b - mean_y);
        sxx += (a - mean_x) * (a - mean_x);
        syy += (b - mean_y) * (b - mean_y);
    }
    Some(sxy / (sxx * syy).sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{compute_stats, generate_corpus, GenSpec, Token};
    use crate::rng::stream_rng;
    use rand::Rng;

    fn boxed(x0: f64, y0: f64, x1: f64, y1: f64) -> PixelBox {
        PixelBox { x0, y0, x1, y1 }
    }

    #[test]
    fn pointing_game_interior_point_hits() {
        assert!(pointing_game((5.0, 5.0), &[boxed(0.0, 0.0, 10.0, 10.0)]).unwrap());
    }

    #[test]
    fn pointing_game_boundary_is_inclusive() {
        assert!(pointing_game((10.0, 10.0), &[boxed(0.0, 0.0, 10.0, 10.0)]).unwrap());
    }

    #[test]
    fn pointing_game_any_box_hits() {
        let boxes = [boxed(0.0, 0.0, 10.0, 10.0), boxed(11.0, 0.0, 20.0, 10.0)];
        assert!(pointing_game((11.0, 5.0), &boxes).unwrap());
        assert!(!pointing_game((10.5, 5.0), &boxes).unwrap());
    }

    #[test]
    fn pointing_game_rejects_empty_boxes() {
        assert!(matches!(
            pointing_game((1.0, 1.0), &[]),
            Err(DataError::EmptyBoxes)
        ));
    }

    #[test]
    fn enlarging_a_box_never_turns_hit_into_miss() {
        let mut rng = stream_rng(61, 0);
        for _ in 0..200 {
            let b = boxed(
                rng.gen_range(0.0..50.0),
                rng.gen_range(0.0..50.0),
                rng.gen_range(50.0..100.0),
                rng.gen_range(50.0..100.0),
            );
            let p = (rng.gen_range(0.0..100.0), rng.gen_range(0.0..100.0));
            let hit = pointing_game(p, &[b]).unwrap();
            let grown = boxed(b.x0 - 1.0, b.y0 - 1.0, b.x1 + 2.0, b.y1 + 0.5);
            let hit_grown = pointing_game(p, &[grown]).unwrap();
            assert!(!hit || hit_grown);
        }
    }

    fn test_spec() -> GenSpec {
        GenSpec {
            concepts: 4,
            channels: 6,
            embed_dim: 4,
            grid_h: 4,
            grid_w: 4,
            image_h: 64,
            image_w: 64,
            scenes: 40,
            concepts_per_scene: [1, 2],
            region_cells: [1, 2],
            noise_sigma: 0.2,
            distractors_per_phrase: 1,
            distractor_vocab: 3,
            split: "test".to_string(),
        }
    }

    #[test]
    fn center_baseline_forced_hit_and_miss() {
        let mut corpus = generate_corpus(&test_spec(), 71).unwrap();
        // All boxes centered: accuracy 1.
        for inst in &mut corpus.instances {
            inst.gt_boxes = vec![boxed(24.0, 24.0, 40.0, 40.0)];
        }
        assert_eq!(baseline_center(&corpus).unwrap().accuracy(), 1.0);
        // No box contains the center: accuracy 0.
        for inst in &mut corpus.instances {
            inst.gt_boxes = vec![boxed(0.0, 0.0, 10.0, 10.0)];
        }
        assert_eq!(baseline_center(&corpus).unwrap().accuracy(), 0.0);
    }

    #[test]
    fn center_baseline_matches_direct_recount() {
        let corpus = generate_corpus(&test_spec(), 72).unwrap();
        let result = baseline_center(&corpus).unwrap();
        let center = (32.0, 32.0);
        let expected = corpus
            .instances
            .iter()
            .filter(|inst| inst.gt_boxes.iter().any(|b| b.contains(center.0, center.1)))
            .count();
        assert_eq!(result.hits, expected);
        assert_eq!(result.evaluated(), corpus.instances.len());
    }

    #[test]
    fn visual_baseline_picks_the_dominant_cell() {
        let mut corpus = generate_corpus(&test_spec(), 73).unwrap();
        let inst = &mut corpus.instances[0];
        inst.features = Tensor2::from_fn(6, 16, |_, j| if j == 10 { 5.0 } else { 0.0 });
        // Cell 10 of a 4x4 grid on a 64x64 image: center (40, 40).
        inst.gt_boxes = vec![boxed(36.0, 36.0, 44.0, 44.0)];
        let result = baseline_visual(&corpus).unwrap();
        let detail = result.details.iter().find(|d| d.id == corpus.instances[0].id).unwrap();
        assert_eq!(detail.point, (40.0, 40.0));
        assert!(detail.hit);
    }

    #[test]
    fn visual_baseline_constant_grid_ties_to_cell_zero() {
        let mut corpus = generate_corpus(&test_spec(), 74).unwrap();
        for inst in &mut corpus.instances {
            inst.features = Tensor2::from_fn(6, 16, |_, _| 1.0);
        }
        let result = baseline_visual(&corpus).unwrap();
        for detail in &result.details {
            assert_eq!(detail.point, (8.0, 8.0));
        }
    }

    #[test]
    fn visual_baseline_matches_per_cell_mean_oracle() {
        let corpus = generate_corpus(&test_spec(), 75).unwrap();
        let result = baseline_visual(&corpus).unwrap();
        for (inst, detail) in corpus.instances.iter().zip(result.details.iter()) {
            let mut best = 0;
            let mut best_mean = f64::NEG_INFINITY;
            for cell in 0..16 {
                let mean: f64 =
                    (0..6).map(|c| inst.features.get(c, cell)).sum::<f64>() / 6.0;
                if mean > best_mean {
                    best_mean = mean;
                    best = cell;
                }
            }
            let expected = cell_center(best, 4, 4, 64, 64);
            assert_eq!(detail.point, expected);
        }
    }

    #[test]
    fn random_baseline_full_coverage_is_always_hit() {
        let mut corpus = generate_corpus(&test_spec(), 76).unwrap();
        for inst in &mut corpus.instances {
            inst.gt_boxes = vec![boxed(0.0, 0.0, 64.0, 64.0)];
        }
        let mut rng = stream_rng(1, streams::BASELINE_RANDOM);
        let result = baseline_random(&corpus, 50, &mut rng).unwrap();
        assert_eq!(result.accuracy(), 1.0);
        assert_eq!(result.evaluated(), corpus.instances.len() * 50);
    }

    #[test]
    fn random_baseline_single_cell_converges_to_one_over_n() {
        let mut corpus = generate_corpus(&test_spec(), 77).unwrap();
        corpus.instances.truncate(1);
        // Exactly one cell center inside: cell (1, 1) center is (24, 24).
        corpus.instances[0].gt_boxes = vec![boxed(20.0, 20.0, 28.0, 28.0)];
        let expectation = random_baseline_expectation(&corpus).unwrap();
        assert!((expectation - 1.0 / 16.0).abs() < 1e-12);
        let trials = 20_000;
        let mut rng = stream_rng(2, streams::BASELINE_RANDOM);
        let result = baseline_random(&corpus, trials, &mut rng).unwrap();
        let p = 1.0 / 16.0;
        let sigma = (p * (1.0 - p) / trials as f64).sqrt();
        assert!(
            (result.accuracy() - p).abs() < 3.0 * sigma,
            "accuracy {} vs {p}",
            result.accuracy()
        );
    }

    #[test]
    fn random_baseline_tracks_the_counting_expectation() {
        let corpus = generate_corpus(&test_spec(), 78).unwrap();
        let expectation = random_baseline_expectation(&corpus).unwrap();
        let mut rng = stream_rng(3, streams::BASELINE_RANDOM);
        let result = baseline_random(&corpus, 10_000, &mut rng).unwrap();
        assert!(
            (result.accuracy() - expectation).abs() < 0.01,
            "empirical {} vs analytic {expectation}",
            result.accuracy()
        );
    }

    #[test]
    fn concept_report_perfectly_linear_gives_r_one() {
        let mut result = EvalResult::default();
        // Two concepts whose accuracies equal their area fractions.
        let mut a = ConceptTally::default();
        a.record(true, 0.5);
        a.record(true, 0.5);
        let mut b = ConceptTally::default();
        b.record(true, 0.25);
        b.record(false, 0.25);
        b.record(true, 0.25);
        b.record(false, 0.25);
        result.per_concept.insert("a".to_string(), a);
        result.per_concept.insert("b".to_string(), b);
        let report = concept_report(&result);
        assert!((report.pearson_r.unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn concept_report_constant_accuracy_is_undefined() {
        let mut result = EvalResult::default();
        for (name, area) in [("a", 0.1), ("b", 0.4), ("c", 0.7)] {
            let mut tally = ConceptTally::default();
            tally.record(true, area);
            tally.record(false, area);
            tally.record(true, area);
            result.per_concept.insert(name.to_string(), tally);
        }
        let report = concept_report(&result);
        assert_eq!(report.pearson_r, None);
    }

    #[test]
    fn concept_report_matches_direct_pearson_formula() {
        let mut rng = stream_rng(79, 0);
        let mut result = EvalResult::default();
        for i in 0..6 {
            let mut tally = ConceptTally::default();
            let total = rng.gen_range(5..15);
            let hits = rng.gen_range(0..=total);
            let area: f64 = rng.gen_range(0.05..0.5);
            for j in 0..total {
                tally.record(j < hits, area);
            }
            result.per_concept.insert(format!("c{i}"), tally);
        }
        let report = concept_report(&result);
        let x: Vec<f64> = report.rows.iter().map(|r| r.accuracy).collect();
        let y: Vec<f64> = report.rows.iter().map(|r| r.mean_area_fraction).collect();
        let n = x.len() as f64;
        let mx = x.iter().sum::<f64>() / n;
        let my = y.iter().sum::<f64>() / n;
        let sxy: f64 = x.iter().zip(&y).map(|(a, b)| (a - mx) * (b - my)).sum();
        let sxx: f64 = x.iter().map(|a| (a - mx) * (a - mx)).sum();
        let syy: f64 = y.iter().map(|b| (b - my) * (b - my)).sum();
        let expected = sxy / (sxx * syy).sqrt();
        assert!((report.pearson_r.unwrap() - expected).abs() < 1e-12);
    }

    #[test]
    fn per_concept_hits_sum_to_total_hits() {
        let corpus = generate_corpus(&test_spec(), 80).unwrap();
        let result = baseline_visual(&corpus).unwrap();
        let concept_hits: usize = result.per_concept.values().map(|t| t.hits).sum();
        assert_eq!(concept_hits, result.hits);
        let concept_total: usize = result.per_concept.values().map(|t| t.instances()).sum();
        assert_eq!(concept_total, result.evaluated());
    }

    fn trained_toy() -> (crate::train::TrainOutcome, Corpus, ChannelStats, Corpus) {
        let spec = GenSpec {
            scenes: 60,
            split: "train".to_string(),
            ..test_spec()
        };
        let train_corpus = generate_corpus(&spec, 90).unwrap();
        let test_corpus =
            generate_corpus(&GenSpec { scenes: 30, split: "test".to_string(), ..spec }, 90)
                .unwrap();
        let stats = compute_stats(&train_corpus).unwrap();
        let config = crate::train::TrainConfig {
            k: 2,
            steps: 40,
            batches_per_step: 2,
            model: crate::train::ModelDims { attn_widths: [10, 8, 6], proj_channels: 3 },
            ..Default::default()
        };
        let outcome = crate::train::train_prepared(&config, &train_corpus, &stats).unwrap();
        (outcome, train_corpus, stats, test_corpus)
    }

    #[test]
    fn evaluate_is_order_invariant_and_deterministic() {
        let (outcome, _, stats, test_corpus) = trained_toy();
        let result = evaluate(&outcome.params, &outcome.hyper, &test_corpus, &stats).unwrap();
        let again = evaluate(&outcome.params, &outcome.hyper, &test_corpus, &stats).unwrap();
        assert_eq!(result, again);

        let mut shuffled = test_corpus.clone();
        shuffled.instances.reverse();
        let reversed = evaluate(&outcome.params, &outcome.hyper, &shuffled, &stats).unwrap();
        assert_eq!(result.hits, reversed.hits);
        assert_eq!(result.misses, reversed.misses);
        assert_eq!(result.per_concept, reversed.per_concept);
    }

    #[test]
    fn evaluate_rejects_mismatched_checkpoint_and_corpus() {
        let (outcome, _, stats, test_corpus) = trained_toy();
        let mut wrong = outcome.hyper;
        wrong.channels = 12;
        let err = evaluate(&outcome.params, &wrong, &test_corpus, &stats).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("channels=12") && msg.contains("channels=6"), "{msg}");
    }

    #[test]
    fn single_noun_on_single_noun_phrases_equals_full_evaluation() {
        let (outcome, _, stats, mut test_corpus) = trained_toy();
        // Reduce every phrase to exactly its first noun; the phrase embedding
        // is then that token's embedding.
        for inst in &mut test_corpus.instances {
            let first_noun = inst.tokens.iter().find(|t| t.noun).unwrap().clone();
            inst.embedding = test_corpus.header.token_embeddings[&first_noun.text].clone();
            inst.tokens = vec![Token { text: first_noun.text, noun: true }];
        }
        let mut rng = stream_rng(4, streams::SINGLE_NOUN);
        let paired =
            evaluate_paired(&outcome.params, &outcome.hyper, &test_corpus, &stats, &mut rng)
                .unwrap();
        assert_eq!(paired.full.hits, paired.single_noun.hits);
        assert_eq!(paired.delta(), 0.0);
    }

    #[test]
    fn single_noun_is_deterministic_given_seed() {
        let (outcome, _, stats, test_corpus) = trained_toy();
        let run = |seed: u64| {
            let mut rng = stream_rng(seed, streams::SINGLE_NOUN);
            evaluate_single_noun(&outcome.params, &outcome.hyper, &test_corpus, &stats, &mut rng)
                .unwrap()
        };
        assert_eq!(run(5), run(5));
    }

    #[test]
    fn paired_delta_matches_per_instance_recount() {
        let (outcome, _, stats, test_corpus) = trained_toy();
        let mut rng = stream_rng(6, streams::SINGLE_NOUN);
        let paired =
            evaluate_paired(&outcome.params, &outcome.hyper, &test_corpus, &stats, &mut rng)
                .unwrap();
        let full_hits = paired.full.details.iter().filter(|d| d.hit).count();
        let single_hits = paired.single_noun.details.iter().filter(|d| d.hit).count();
        let n = test_corpus.instances.len() as f64;
        let recount = full_hits as f64 / n - single_hits as f64 / n;
        assert_eq!(paired.delta(), recount);
    }
}
