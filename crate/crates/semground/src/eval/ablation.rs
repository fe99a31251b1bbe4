//! The loss-mode × concept-batch-size ablation harness: one training and
//! evaluation run per (mode, k, seed) cell over a shared corpus, with
//! disjoint seeds so loss and k effects are not confounded with data
//! variance. Cells are independent and run in parallel, each with its own
//! RNG streams and output directory.

use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::{ingest_corpus, ChannelStats, Corpus};
use crate::grounder::LossMode;
use crate::train::{train_prepared, TrainConfig};

use super::{evaluate, EvalError};

/// Grid specification plus the base training configuration; each cell
/// overrides mode, k, and seed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AblationConfig {
    pub modes: Vec<LossMode>,
    pub ks: Vec<usize>,
    pub seeds: Vec<u64>,
    pub train: TrainConfig,
    /// Held-out corpus evaluated by every cell.
    pub eval_corpus: Option<PathBuf>,
}

impl Default for AblationConfig {
    fn default() -> Self {
        Self {
            modes: vec![LossMode::Ic, LossMode::Cc, LossMode::Icc],
            ks: vec![3, 5],
            seeds: vec![1, 2, 3, 4, 5],
            train: TrainConfig::default(),
            eval_corpus: None,
        }
    }
}

impl AblationConfig {
    pub fn validate(&self) -> Result<(), EvalError> {
        if self.modes.is_empty() || self.ks.is_empty() || self.seeds.is_empty() {
            return Err(EvalError::Config(
                "ablation grid needs at least one mode, one k and one seed".to_string(),
            ));
        }
        if self.ks.iter().any(|&k| k == 0) {
            return Err(EvalError::Config("k must be at least 1".to_string()));
        }
        Ok(())
    }
}

/// One trained-and-evaluated grid cell.
#[derive(Debug, Clone, PartialEq)]
pub struct AblationCell {
    pub mode: LossMode,
    pub k: usize,
    pub seed: u64,
    pub accuracy: f64,
}

/// The evaluated grid; rows are loss modes, columns are k values, and every
/// cell carries its per-seed accuracies.
#[derive(Debug, Clone, PartialEq)]
pub struct AblationTable {
    pub modes: Vec<LossMode>,
    pub ks: Vec<usize>,
    pub seeds: Vec<u64>,
    pub cells: Vec<AblationCell>,
}

impl AblationTable {
    pub fn cells_for(&self, mode: LossMode, k: usize) -> impl Iterator<Item = &AblationCell> {
        self.cells.iter().filter(move |c| c.mode == mode && c.k == k)
    }

    pub fn mean_accuracy(&self, mode: LossMode, k: usize) -> f64 {
        let accuracies: Vec<f64> = self.cells_for(mode, k).map(|c| c.accuracy).collect();
        accuracies.iter().sum::<f64>() / accuracies.len() as f64
    }
}

/// Trains and evaluates one model per (mode, k, seed) cell. Any cell failure
/// aborts the run with the cell identity in the error.
pub fn ablation_run(config: &AblationConfig, out_dir: &Path) -> Result<AblationTable, EvalError> {
    config.validate()?;
    let corpus_path = config
        .train
        .corpus
        .as_ref()
        .ok_or_else(|| EvalError::Config("no training corpus configured".to_string()))?;
    let stats_path = config
        .train
        .stats
        .as_ref()
        .ok_or_else(|| EvalError::Config("no stats path configured".to_string()))?;
    let eval_path = config
        .eval_corpus
        .as_ref()
        .ok_or_else(|| EvalError::Config("no eval corpus configured".to_string()))?;

    let (train_corpus, _) = ingest_corpus(corpus_path)?;
    let stats = ChannelStats::load(stats_path)?;
    let (eval_corpus, _) = ingest_corpus(eval_path)?;
    std::fs::create_dir_all(out_dir)?;

    let mut grid = Vec::new();
    for &mode in &config.modes {
        for &k in &config.ks {
            for &seed in &config.seeds {
                grid.push((mode, k, seed));
            }
        }
    }

    let cells: Result<Vec<AblationCell>, EvalError> = grid
        .par_iter()
        .map(|&(mode, k, seed)| {
            run_cell(config, &train_corpus, &stats, &eval_corpus, out_dir, mode, k, seed)
                .map_err(|e| {
                    EvalError::Config(format!("cell mode={mode} k={k} seed={seed}: {e}"))
                })
        })
        .collect();

    let table = AblationTable {
        modes: config.modes.clone(),
        ks: config.ks.clone(),
        seeds: config.seeds.clone(),
        cells: cells?,
    };
    super::write_ablation_csvs(&table, out_dir)?;
    Ok(table)
}

#[allow(clippy::too_many_arguments)]
fn run_cell(
    config: &AblationConfig,
    train_corpus: &Corpus,
    stats: &ChannelStats,
    eval_corpus: &Corpus,
    out_dir: &Path,
    mode: LossMode,
    k: usize,
    seed: u64,
) -> Result<AblationCell, EvalError> {
    let cell_dir = out_dir.join(format!("cell-{mode}-k{k}-s{seed}"));
    std::fs::create_dir_all(&cell_dir)?;
    let cell_config = TrainConfig {
        mode,
        k,
        seed,
        corpus: None,
        stats: None,
        out: Some(cell_dir.join("model.ckpt")),
        log: Some(cell_dir.join("train_log.csv")),
        resume: None,
        ..config.train.clone()
    };
    let outcome = train_prepared(&cell_config, train_corpus, stats)?;
    let result = evaluate(&outcome.params, &outcome.hyper, eval_corpus, stats)?;
    super::write_details_jsonl(&result, &cell_dir.join("eval_details.jsonl"))?;
    Ok(AblationCell { mode, k, seed, accuracy: result.accuracy() })
}
