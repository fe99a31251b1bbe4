//! Surrogate-loss computation and the training loop over concept batches.

mod checkpoint;

pub use checkpoint::{
    load_checkpoint, require_matching_hyper, save_checkpoint, Checkpoint, CheckpointError,
    FORMAT_VERSION, MAGIC,
};

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{
    batch_members, compute_stats, ingest_corpus, sample_concept_batch, ChannelStats, Corpus,
    CorpusIndex, DataError,
};
use crate::grounder::{
    backward_batch, BatchOutputs, HyperParams, LossMode, ModelError, ModelParams,
};
use crate::numcore::{cross_entropy, AdamConfig, AdamState, NumError};
use crate::rng::{stream_rng, streams};

#[derive(Debug, Error)]
pub enum TrainError {
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
    #[error(transparent)]
    Num(#[from] NumError),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("config: {0}")]
    Config(String),
}

/// How the optimizer batch size is counted: the default counts concept
/// batches per step; the alternative counts instances, rounding up to whole
/// concept batches.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BatchUnit {
    ConceptBatches,
    Instances,
}

impl BatchUnit {
    pub fn as_str(self) -> &'static str {
        match self {
            BatchUnit::ConceptBatches => "concept-batches",
            BatchUnit::Instances => "instances",
        }
    }
}

/// Attention-stack and projection widths (the final attention width is
/// pinned to 1).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelDims {
    pub attn_widths: [usize; 3],
    pub proj_channels: usize,
}

impl Default for ModelDims {
    fn default() -> Self {
        Self {
            attn_widths: [64, 32, 16],
            proj_channels: 8,
        }
    }
}

/// Training configuration. File values override the defaults; CLI flags
/// override file values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub mode: LossMode,
    /// Concept batch size.
    pub k: usize,
    /// Optimizer batch size, counted in `batch_unit`.
    pub batches_per_step: usize,
    pub batch_unit: BatchUnit,
    pub steps: usize,
    pub seed: u64,
    pub adam: AdamConfig,
    pub model: ModelDims,
    /// Snapshot cadence in steps; 0 writes only the final checkpoint.
    pub checkpoint_every: usize,
    pub corpus: Option<PathBuf>,
    pub stats: Option<PathBuf>,
    /// Final checkpoint path; step snapshots append `.step<N>`.
    pub out: Option<PathBuf>,
    /// Log CSV path; defaults to `<out>.log.csv` when unset.
    pub log: Option<PathBuf>,
    /// Optional checkpoint to continue from (parameters only; the optimizer
    /// restarts fresh).
    pub resume: Option<PathBuf>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            mode: LossMode::Icc,
            k: 5,
            batches_per_step: 4,
            batch_unit: BatchUnit::ConceptBatches,
            steps: 3000,
            seed: 0,
            adam: AdamConfig::default(),
            model: ModelDims::default(),
            checkpoint_every: 0,
            corpus: None,
            stats: None,
            out: None,
            log: None,
            resume: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        if self.k == 0 {
            return Err(TrainError::Config("k must be at least 1".to_string()));
        }
        if self.batches_per_step == 0 {
            return Err(TrainError::Config("batches_per_step must be at least 1".to_string()));
        }
        Ok(())
    }

    /// Model shape for a given corpus header.
    pub fn hyper_for(&self, corpus: &Corpus) -> HyperParams {
        HyperParams {
            channels: corpus.header.channels,
            grid_h: corpus.header.grid_h,
            grid_w: corpus.header.grid_w,
            embed_dim: corpus.header.embed_dim,
            attn_widths: [
                self.model.attn_widths[0],
                self.model.attn_widths[1],
                self.model.attn_widths[2],
                1,
            ],
            proj_channels: self.model.proj_channels,
            concepts: corpus.header.vocab.len(),
            k: self.k,
        }
    }

    /// Concept batches drawn per optimizer step under the configured unit.
    pub fn concept_batches_per_step(&self) -> usize {
        match self.batch_unit {
            BatchUnit::ConceptBatches => self.batches_per_step,
            BatchUnit::Instances => self.batches_per_step.div_ceil(self.k).max(1),
        }
    }

    fn resolved_log_path(&self) -> Option<PathBuf> {
        self.log.clone().or_else(|| {
            self.out
                .as_ref()
                .map(|out| PathBuf::from(format!("{}.log.csv", out.display())))
        })
    }
}

/// Value of the surrogate loss split into its two terms. Both terms are
/// always measured; the mode decides which of them contribute to `total`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossBreakdown {
    pub total: f64,
    pub common_term: f64,
    pub independent_term: f64,
}

/// Cross-entropy of the common prediction plus the mean cross-entropy of the
/// independent predictions, with terms excluded from the total per mode.
pub fn loss_total(
    outputs: &BatchOutputs,
    target: usize,
    mode: LossMode,
) -> Result<LossBreakdown, ModelError> {
    let common_term = cross_entropy(&outputs.common, target)?;
    let mut independent_term = 0.0;
    for dist in &outputs.independent {
        independent_term += cross_entropy(dist, target)?;
    }
    independent_term /= outputs.independent.len() as f64;
    let total = match mode {
        LossMode::Icc => common_term + independent_term,
        LossMode::Ic => independent_term,
        LossMode::Cc => common_term,
    };
    Ok(LossBreakdown { total, common_term, independent_term })
}

/// One row of the training log.
#[derive(Debug, Clone, PartialEq)]
pub struct StepRecord {
    pub step: usize,
    pub mode: LossMode,
    pub loss: f64,
    pub common_term: f64,
    pub independent_term: f64,
    pub wall_ms: f64,
}

/// Result of a training run.
#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub params: ModelParams,
    pub hyper: HyperParams,
    pub records: Vec<StepRecord>,
}

/// Loads the corpus and stats named by the config and trains.
pub fn train(config: &TrainConfig) -> Result<TrainOutcome, TrainError> {
    let corpus_path = config
        .corpus
        .as_ref()
        .ok_or_else(|| TrainError::Config("no corpus path configured".to_string()))?;
    let stats_path = config
        .stats
        .as_ref()
        .ok_or_else(|| TrainError::Config("no stats path configured".to_string()))?;
    let (corpus, _) = ingest_corpus(corpus_path)?;
    let stats = ChannelStats::load(stats_path)?;
    train_prepared(config, &corpus, &stats)
}

/// Trains on an already loaded corpus. The step loop is single-threaded and
/// owns the parameters and optimizer state; determinism follows from the
/// seeded sampler and initializer streams.
pub fn train_prepared(
    config: &TrainConfig,
    corpus: &Corpus,
    stats: &ChannelStats,
) -> Result<TrainOutcome, TrainError> {
    config.validate()?;
    let standardized = corpus.standardized(stats)?;
    let vocab = standardized.vocabulary()?;
    let hyper = config.hyper_for(&standardized);
    hyper.validate()?;
    let index = CorpusIndex::build(&standardized, &vocab);

    let mut params = match &config.resume {
        Some(path) => {
            let ckpt = load_checkpoint(path)?;
            require_matching_hyper(&ckpt.hyper, &hyper)?;
            ckpt.params
        }
        None => {
            let mut init_rng = stream_rng(config.seed, streams::INIT);
            ModelParams::init(&hyper, &mut init_rng)
        }
    };

    let mut log = match config.resolved_log_path() {
        Some(path) => {
            let mut writer = BufWriter::new(File::create(&path)?);
            writeln!(
                writer,
                "# seed={} mode={} k={} batches_per_step={} batch_unit={} steps={} lr={}",
                config.seed,
                config.mode,
                config.k,
                config.batches_per_step,
                config.batch_unit.as_str(),
                config.steps,
                config.adam.lr,
            )?;
            writeln!(writer, "step,mode,loss,common_term,independent_term,wall_ms")?;
            Some(writer)
        }
        None => None,
    };

    let mut sampler = stream_rng(config.seed, streams::SAMPLER);
    let mut adam = AdamState::new(hyper.param_count(), config.adam);
    let batches_per_step = config.concept_batches_per_step();
    let mut records = Vec::with_capacity(config.steps);

    for step in 1..=config.steps {
        let started = Instant::now();
        let mut grad_sum = vec![0.0; hyper.param_count()];
        let mut loss_sum = 0.0;
        let mut common_sum = 0.0;
        let mut independent_sum = 0.0;
        for _ in 0..batches_per_step {
            let batch = sample_concept_batch(&index, config.k, &mut sampler)?;
            let members = batch_members(&standardized, &vocab, &batch);
            let result = backward_batch(&members, &params, &hyper, batch.concept, config.mode)?;
            let breakdown = loss_total(&result.outputs, batch.concept, config.mode)?;
            loss_sum += breakdown.total;
            common_sum += breakdown.common_term;
            independent_sum += breakdown.independent_term;
            for (acc, g) in grad_sum.iter_mut().zip(result.grad.iter()) {
                *acc += g;
            }
        }
        let scale = 1.0 / batches_per_step as f64;
        for g in &mut grad_sum {
            *g *= scale;
        }
        let mut flat = params.flatten();
        adam.update(&mut flat, &grad_sum)?;
        params = ModelParams::from_flat(&hyper, &flat)?;

        let record = StepRecord {
            step,
            mode: config.mode,
            loss: loss_sum * scale,
            common_term: common_sum * scale,
            independent_term: independent_sum * scale,
            wall_ms: started.elapsed().as_secs_f64() * 1e3,
        };
        if let Some(writer) = log.as_mut() {
            writeln!(
                writer,
                "{},{},{},{},{},{:.3}",
                record.step,
                record.mode,
                record.loss,
                record.common_term,
                record.independent_term,
                record.wall_ms
            )?;
        }
        records.push(record);

        if config.checkpoint_every > 0
            && step % config.checkpoint_every == 0
            && step != config.steps
        {
            if let Some(out) = &config.out {
                let snapshot = PathBuf::from(format!("{}.step{step}", out.display()));
                save_checkpoint(&params, &hyper, step as u64, &snapshot)?;
            }
        }
    }

    if let Some(writer) = log.as_mut() {
        writer.flush()?;
    }
    if let Some(out) = &config.out {
        save_checkpoint(&params, &hyper, config.steps as u64, out)?;
    }
    Ok(TrainOutcome { params, hyper, records })
}

/// Computes training statistics from a corpus file and writes them as JSON.
pub fn stats_command(corpus_path: &Path, out_path: &Path) -> Result<ChannelStats, TrainError> {
    let (corpus, _) = ingest_corpus(corpus_path)?;
    let stats = compute_stats(&corpus)?;
    stats.save(out_path)?;
    Ok(stats)
}
