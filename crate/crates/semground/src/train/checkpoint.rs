//! Versioned binary checkpoints: a fixed header followed by the flat
//! parameter array in the documented order, little-endian 64-bit floats.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use thiserror::Error;

use crate::grounder::{HyperParams, ModelError, ModelParams};

pub const MAGIC: &[u8; 8] = b"SEMGCKPT";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("corrupt header: {0}")]
    CorruptHeader(String),
    #[error("truncated payload")]
    Truncated,
    #[error("unsupported checkpoint format version {found} (supported: {supported})")]
    VersionMismatch { found: u32, supported: u32 },
    #[error("unexpected trailing data: {0} bytes after payload")]
    TrailingData(usize),
    #[error("checkpoint hyperparameters do not match: {0}")]
    HyperMismatch(String),
    #[error(transparent)]
    Model(#[from] ModelError),
}

/// A loaded checkpoint: shape, training step, and parameters.
#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub hyper: HyperParams,
    pub step: u64,
    pub params: ModelParams,
}

fn hyper_fields(hyper: &HyperParams) -> [u32; 11] {
    [
        hyper.channels as u32,
        hyper.grid_h as u32,
        hyper.grid_w as u32,
        hyper.embed_dim as u32,
        hyper.attn_widths[0] as u32,
        hyper.attn_widths[1] as u32,
        hyper.attn_widths[2] as u32,
        hyper.attn_widths[3] as u32,
        hyper.proj_channels as u32,
        hyper.concepts as u32,
        hyper.k as u32,
    ]
}

pub fn save_checkpoint(
    params: &ModelParams,
    hyper: &HyperParams,
    step: u64,
    path: &Path,
) -> Result<(), CheckpointError> {
    let flat = params.flatten();
    let mut out = BufWriter::new(File::create(path)?);
    out.write_all(MAGIC)?;
    out.write_all(&FORMAT_VERSION.to_le_bytes())?;
    for field in hyper_fields(hyper) {
        out.write_all(&field.to_le_bytes())?;
    }
    out.write_all(&step.to_le_bytes())?;
    out.write_all(&(flat.len() as u64).to_le_bytes())?;
    for value in &flat {
        out.write_all(&value.to_le_bytes())?;
    }
    out.flush()?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint, CheckpointError> {
    let mut reader = BufReader::new(File::open(path)?);

    let mut magic = [0u8; 8];
    read_header(&mut reader, &mut magic)?;
    if &magic != MAGIC {
        return Err(CheckpointError::CorruptHeader(format!(
            "bad magic {:02x?}",
            magic
        )));
    }
    let version = read_u32(&mut reader)?;
    if version != FORMAT_VERSION {
        return Err(CheckpointError::VersionMismatch {
            found: version,
            supported: FORMAT_VERSION,
        });
    }
    let mut fields = [0u32; 11];
    for field in &mut fields {
        *field = read_u32(&mut reader)?;
    }
    let hyper = HyperParams {
        channels: fields[0] as usize,
        grid_h: fields[1] as usize,
        grid_w: fields[2] as usize,
        embed_dim: fields[3] as usize,
        attn_widths: [
            fields[4] as usize,
            fields[5] as usize,
            fields[6] as usize,
            fields[7] as usize,
        ],
        proj_channels: fields[8] as usize,
        concepts: fields[9] as usize,
        k: fields[10] as usize,
    };
    hyper
        .validate()
        .map_err(|e| CheckpointError::CorruptHeader(e.to_string()))?;
    let step = read_u64(&mut reader)?;
    let count = read_u64(&mut reader)? as usize;
    if count != hyper.param_count() {
        return Err(CheckpointError::CorruptHeader(format!(
            "parameter count {count} does not match the declared shape ({} expected)",
            hyper.param_count()
        )));
    }

    let mut flat = vec![0.0f64; count];
    let mut buf = [0u8; 8];
    for value in &mut flat {
        reader
            .read_exact(&mut buf)
            .map_err(|_| CheckpointError::Truncated)?;
        *value = f64::from_le_bytes(buf);
    }
    let mut rest = Vec::new();
    reader.read_to_end(&mut rest)?;
    if !rest.is_empty() {
        return Err(CheckpointError::TrailingData(rest.len()));
    }

    let params = ModelParams::from_flat(&hyper, &flat)?;
    Ok(Checkpoint { hyper, step, params })
}

/// Fails a checkpoint whose shape disagrees with what the caller expects,
/// printing both dimension sets.
pub fn require_matching_hyper(
    checkpoint: &HyperParams,
    expected: &HyperParams,
) -> Result<(), CheckpointError> {
    if checkpoint != expected {
        return Err(CheckpointError::HyperMismatch(format!(
            "checkpoint has {checkpoint}, expected {expected}"
        )));
    }
    Ok(())
}

fn read_header(reader: &mut impl Read, buf: &mut [u8]) -> Result<(), CheckpointError> {
    reader
        .read_exact(buf)
        .map_err(|_| CheckpointError::CorruptHeader("file shorter than the header".to_string()))
}

fn read_u32(reader: &mut impl Read) -> Result<u32, CheckpointError> {
    let mut buf = [0u8; 4];
    read_header(reader, &mut buf)?;
    Ok(u32::from_le_bytes(buf))
}

fn read_u64(reader: &mut impl Read) -> Result<u64, CheckpointError> {
    let mut buf = [0u8; 8];
    read_header(reader, &mut buf)?;
    Ok(u64::from_le_bytes(buf))
}
