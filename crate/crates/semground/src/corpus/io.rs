//! JSON-Lines corpus files: one header record, then one record per instance.
//!
//! The format is UTF-8, streamable and language-neutral; ingestion validates
//! every record against the header and reports errors with the 1-based
//! instance-record line number (the header line is not counted).

use std::collections::{BTreeMap, HashSet};
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::numcore::Tensor2;

use super::{Corpus, CorpusHeader, DataError, Instance, PixelBox, Token};

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct HeaderRecord {
    m: usize,
    n: usize,
    l: usize,
    grid_h: usize,
    grid_w: usize,
    image_h: u32,
    image_w: u32,
    vocab: Vec<String>,
    #[serde(default)]
    token_embeddings: BTreeMap<String, Vec<f64>>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct InstanceRecord {
    id: String,
    features: Vec<f64>,
    embedding: Vec<f64>,
    tokens: Vec<Token>,
    gt_boxes: Vec<PixelBox>,
}

/// Ingestion diagnostics. Out-of-vocabulary nouns are kept in the phrase but
/// can never be selected as concepts; their count is surfaced here.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct IngestReport {
    pub instances: usize,
    pub oov_noun_tokens: usize,
}

/// Writes a corpus as JSON Lines; byte-deterministic for a given corpus.
pub fn write_corpus(corpus: &Corpus, path: &Path) -> Result<(), DataError> {
    let mut out = BufWriter::new(File::create(path)?);
    let header = HeaderRecord {
        m: corpus.header.channels,
        n: corpus.header.regions,
        l: corpus.header.embed_dim,
        grid_h: corpus.header.grid_h,
        grid_w: corpus.header.grid_w,
        image_h: corpus.header.image_h,
        image_w: corpus.header.image_w,
        vocab: corpus.header.vocab.clone(),
        token_embeddings: corpus.header.token_embeddings.clone(),
    };
    serde_json::to_writer(&mut out, &header).map_err(io_json)?;
    out.write_all(b"\n")?;
    for inst in &corpus.instances {
        let record = InstanceRecord {
            id: inst.id.clone(),
            features: inst.features.data().to_vec(),
            embedding: inst.embedding.clone(),
            tokens: inst.tokens.clone(),
            gt_boxes: inst.gt_boxes.clone(),
        };
        serde_json::to_writer(&mut out, &record).map_err(io_json)?;
        out.write_all(b"\n")?;
    }
    out.flush()?;
    Ok(())
}

fn io_json(e: serde_json::Error) -> DataError {
    DataError::Io(std::io::Error::new(std::io::ErrorKind::Other, e))
}

/// Reads and validates a JSON-Lines corpus. Shape mismatches against the
/// header are rejected with the offending instance-record line number.
pub fn ingest_corpus(path: &Path) -> Result<(Corpus, IngestReport), DataError> {
    let file = File::open(path)?;
    let mut lines = BufReader::new(file).lines();

    let header_line = match lines.next() {
        Some(line) => line?,
        None => return Err(DataError::NoInstances),
    };
    let header: HeaderRecord = serde_json::from_str(&header_line).map_err(|e| DataError::Header(
        format!("invalid JSON: {e}"),
    ))?;
    if header.m == 0 || header.l == 0 || header.grid_h == 0 || header.grid_w == 0 {
        return Err(DataError::Header("all dimensions must be at least 1".to_string()));
    }
    if header.n != header.grid_h * header.grid_w {
        return Err(DataError::Header(format!(
            "n = {} does not match grid {}x{}",
            header.n, header.grid_h, header.grid_w
        )));
    }
    if header.image_h == 0 || header.image_w == 0 {
        return Err(DataError::Header("image dimensions must be at least 1".to_string()));
    }
    if header.vocab.is_empty() {
        return Err(DataError::Header("empty vocabulary".to_string()));
    }
    let vocab_set: HashSet<&str> = header.vocab.iter().map(String::as_str).collect();
    if vocab_set.len() != header.vocab.len() {
        return Err(DataError::Header("duplicate vocabulary token".to_string()));
    }
    for (token, emb) in &header.token_embeddings {
        if emb.len() != header.l {
            return Err(DataError::Header(format!(
                "token embedding for '{token}' has dim {}, expected {}",
                emb.len(),
                header.l
            )));
        }
    }

    let mut instances = Vec::new();
    let mut report = IngestReport::default();
    let mut seen_ids = HashSet::new();
    for (record_idx, line) in lines.enumerate() {
        let line_no = record_idx + 1;
        let line = line?;
        if line.trim().is_empty() {
            return Err(DataError::Validation {
                line: line_no,
                message: "blank line".to_string(),
            });
        }
        let record: InstanceRecord = serde_json::from_str(&line).map_err(|e| DataError::Json {
            line: line_no,
            message: e.to_string(),
        })?;
        let expected = header.m * header.n;
        if record.features.len() != expected {
            let message = if record.features.len() % header.m == 0 {
                format!(
                    "feature grid has {} regions per channel, expected {}",
                    record.features.len() / header.m,
                    header.n
                )
            } else {
                format!(
                    "features length {} does not match {} channels x {} regions",
                    record.features.len(),
                    header.m,
                    header.n
                )
            };
            return Err(DataError::Validation { line: line_no, message });
        }
        if record.embedding.len() != header.l {
            return Err(DataError::Validation {
                line: line_no,
                message: format!(
                    "embedding has dim {}, expected {}",
                    record.embedding.len(),
                    header.l
                ),
            });
        }
        if !record.tokens.iter().any(|t| t.noun) {
            return Err(DataError::Validation {
                line: line_no,
                message: "no noun-flagged token in phrase".to_string(),
            });
        }
        for b in &record.gt_boxes {
            let inside = b.x0 >= 0.0
                && b.y0 >= 0.0
                && b.x1 <= header.image_w as f64
                && b.y1 <= header.image_h as f64;
            if !inside || !(b.x0 < b.x1) || !(b.y0 < b.y1) {
                return Err(DataError::Validation {
                    line: line_no,
                    message: format!(
                        "ground-truth box ({}, {}, {}, {}) outside the {}x{} image or degenerate",
                        b.x0, b.y0, b.x1, b.y1, header.image_w, header.image_h
                    ),
                });
            }
        }
        if !seen_ids.insert(record.id.clone()) {
            return Err(DataError::Validation {
                line: line_no,
                message: format!("duplicate instance id '{}'", record.id),
            });
        }
        report.oov_noun_tokens += record
            .tokens
            .iter()
            .filter(|t| t.noun && !vocab_set.contains(t.text.as_str()))
            .count();
        let features = Tensor2::new(header.m, header.n, record.features).map_err(|e| {
            DataError::Validation {
                line: line_no,
                message: e.to_string(),
            }
        })?;
        instances.push(Instance {
            id: record.id,
            features,
            embedding: record.embedding,
            tokens: record.tokens,
            gt_boxes: record.gt_boxes,
        });
    }
    if instances.is_empty() {
        return Err(DataError::NoInstances);
    }
    report.instances = instances.len();

    Ok((
        Corpus {
            header: CorpusHeader {
                channels: header.m,
                regions: header.n,
                embed_dim: header.l,
                grid_h: header.grid_h,
                grid_w: header.grid_w,
                image_h: header.image_h,
                image_w: header.image_w,
                vocab: header.vocab,
                token_embeddings: header.token_embeddings,
            },
            instances,
        },
        report,
    ))
}
