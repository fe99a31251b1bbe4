//! Back-projection of attention maps into image space: the pointing-game
//! argmax point and a bilinear grayscale heatmap.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use super::AttentionMap;

/// Center pixel of the maximum-weight grid cell.
///
/// Cell `(row, col)` maps to `((col + 0.5) * image_w / grid_w,
/// (row + 0.5) * image_h / grid_h)`; cell size is real-valued, so the image
/// dimensions need not be divisible by the grid. Ties break to the lowest
/// row-major linear index.
pub fn attention_argmax_point(attn: &AttentionMap, image_h: u32, image_w: u32) -> (f64, f64) {
    let (row, col) = attn.argmax_cell();
    let x = (col as f64 + 0.5) * image_w as f64 / attn.grid_w as f64;
    let y = (row as f64 + 0.5) * image_h as f64 / attn.grid_h as f64;
    (x, y)
}

/// Renders the attention map to image-sized grayscale bytes (row-major) by
/// bilinear interpolation of the cell-center values, linearly rescaled so the
/// minimum maps to 0 and the maximum to 255. A constant field rescales
/// degenerately and is emitted as all zeros.
pub fn render_heatmap(attn: &AttentionMap, image_h: u32, image_w: u32) -> Vec<u8> {
    let (gh, gw) = (attn.grid_h, attn.grid_w);
    let cell_w = image_w as f64 / gw as f64;
    let cell_h = image_h as f64 / gh as f64;

    let mut values = Vec::with_capacity(image_h as usize * image_w as usize);
    for py in 0..image_h {
        // Grid-space coordinate of the pixel center, where integer grid
        // coordinates sit on cell centers; clamped edge extension outside.
        let v = ((py as f64 + 0.5) / cell_h - 0.5).clamp(0.0, (gh - 1) as f64);
        let r0 = (v.floor() as usize).min(gh - 1);
        let r1 = (r0 + 1).min(gh - 1);
        let fv = v - r0 as f64;
        for px in 0..image_w {
            let u = ((px as f64 + 0.5) / cell_w - 0.5).clamp(0.0, (gw - 1) as f64);
            let c0 = (u.floor() as usize).min(gw - 1);
            let c1 = (c0 + 1).min(gw - 1);
            let fu = u - c0 as f64;
            let top = attn.weights[r0 * gw + c0] * (1.0 - fu) + attn.weights[r0 * gw + c1] * fu;
            let bottom = attn.weights[r1 * gw + c0] * (1.0 - fu) + attn.weights[r1 * gw + c1] * fu;
            values.push(top * (1.0 - fv) + bottom * fv);
        }
    }

    let min = values.iter().cloned().fold(f64::INFINITY, f64::min);
    let max = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if max <= min {
        return vec![0u8; values.len()];
    }
    values
        .into_iter()
        .map(|v| (((v - min) / (max - min)) * 255.0).round() as u8)
        .collect()
}

/// Writes the rendered heatmap as a binary 8-bit PGM (`P5`) file.
pub fn export_heatmap(
    attn: &AttentionMap,
    image_h: u32,
    image_w: u32,
    path: &Path,
) -> std::io::Result<()> {
    let pixels = render_heatmap(attn, image_h, image_w);
    let mut out = BufWriter::new(File::create(path)?);
    write!(out, "P5\n{image_w} {image_h}\n255\n")?;
    out.write_all(&pixels)?;
    out.flush()
}
