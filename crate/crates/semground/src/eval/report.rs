//! CSV and JSON-Lines emission for evaluation results. Numeric cells use the
//! shortest round-trip float form, so identical results serialize to
//! identical bytes.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use super::{AblationTable, ConceptReport, EvalResult, PairedEval};

fn float_cell(value: Option<f64>) -> String {
    match value {
        Some(v) => v.to_string(),
        None => "undefined".to_string(),
    }
}

/// `hits,misses,accuracy,pearson_r` as one CSV row.
pub fn write_summary_csv(
    result: &EvalResult,
    pearson_r: Option<f64>,
    path: &Path,
) -> std::io::Result<()> {
    let mut out = BufWriter::new(File::create(path)?);
    writeln!(out, "hits,misses,accuracy,pearson_r")?;
    writeln!(
        out,
        "{},{},{},{}",
        result.hits,
        result.misses,
        result.accuracy(),
        float_cell(pearson_r)
    )?;
    out.flush()
}

/// One CSV row per concept.
pub fn write_concept_csv(report: &ConceptReport, path: &Path) -> std::io::Result<()> {
    let mut out = BufWriter::new(File::create(path)?);
    writeln!(out, "concept,instances,hits,misses,accuracy,mean_area_fraction")?;
    for row in &report.rows {
        writeln!(
            out,
            "{},{},{},{},{},{}",
            row.concept, row.instances, row.hits, row.misses, row.accuracy, row.mean_area_fraction
        )?;
    }
    out.flush()
}

/// One JSON object per evaluated instance: id, point, hit flag, and the
/// selected concept.
pub fn write_details_jsonl(result: &EvalResult, path: &Path) -> std::io::Result<()> {
    let mut out = BufWriter::new(File::create(path)?);
    for detail in &result.details {
        let record = serde_json::json!({
            "id": detail.id,
            "point": [detail.point.0, detail.point.1],
            "hit": detail.hit,
            "concept": detail.concept,
        });
        serde_json::to_writer(&mut out, &record)?;
        out.write_all(b"\n")?;
    }
    out.flush()
}

/// The paired full-phrase / single-noun report with the accuracy delta.
pub fn write_paired_csv(paired: &PairedEval, path: &Path) -> std::io::Result<()> {
    let mut out = BufWriter::new(File::create(path)?);
    writeln!(
        out,
        "full_hits,full_misses,full_accuracy,single_noun_hits,single_noun_misses,single_noun_accuracy,delta"
    )?;
    writeln!(
        out,
        "{},{},{},{},{},{},{}",
        paired.full.hits,
        paired.full.misses,
        paired.full.accuracy(),
        paired.single_noun.hits,
        paired.single_noun.misses,
        paired.single_noun.accuracy(),
        paired.delta()
    )?;
    out.flush()
}

/// Baseline name, counts, accuracy, and (for the random baseline) the
/// analytic expectation.
pub fn write_baselines_csv(
    rows: &[(&str, &EvalResult, Option<f64>)],
    path: &Path,
) -> std::io::Result<()> {
    let mut out = BufWriter::new(File::create(path)?);
    writeln!(out, "baseline,hits,misses,accuracy,expected_accuracy")?;
    for (name, result, expected) in rows {
        writeln!(
            out,
            "{},{},{},{},{}",
            name,
            result.hits,
            result.misses,
            result.accuracy(),
            float_cell(*expected)
        )?;
    }
    out.flush()
}

/// The ablation grid as two CSVs: one row per cell, and one row per
/// (mode, k) with the seed list, per-seed accuracies, and their mean.
pub fn write_ablation_csvs(table: &AblationTable, dir: &Path) -> std::io::Result<()> {
    let mut cells = BufWriter::new(File::create(dir.join("ablation_cells.csv"))?);
    writeln!(cells, "mode,k,seed,accuracy")?;
    for cell in &table.cells {
        writeln!(cells, "{},{},{},{}", cell.mode, cell.k, cell.seed, cell.accuracy)?;
    }
    cells.flush()?;

    let mut summary = BufWriter::new(File::create(dir.join("ablation_table.csv"))?);
    writeln!(summary, "mode,k,seeds,accuracies,mean_accuracy")?;
    for &mode in &table.modes {
        for &k in &table.ks {
            let cells: Vec<_> = table.cells_for(mode, k).collect();
            let seeds = cells
                .iter()
                .map(|c| c.seed.to_string())
                .collect::<Vec<_>>()
                .join(";");
            let accuracies = cells
                .iter()
                .map(|c| c.accuracy.to_string())
                .collect::<Vec<_>>()
                .join(";");
            writeln!(
                summary,
                "{},{},{},{},{}",
                mode,
                k,
                seeds,
                accuracies,
                table.mean_accuracy(mode, k)
            )?;
        }
    }
    summary.flush()
}
