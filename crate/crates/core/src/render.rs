//! Grayscale panel rendering for qualitative inspection of activation
//! sequences.
//!
//! A panel image lays out one row per labeled sequence and one column per
//! strided frame; intensity maps 0 to black and 1 to white. Encoding is
//! deterministic, so repeated renders of the same data are byte-identical.

use std::path::Path;

use image::{GrayImage, ImageEncoder};

use crate::error::{Error, Result};
use crate::sim::VoltageSequence;

/// Frame indices included at the given stride: 0, stride, 2·stride, …
fn strided_indices(frames: usize, stride: usize) -> Vec<usize> {
    (0..frames).step_by(stride).collect()
}

/// Build the panel raster: rows are sequences in input order, columns are
/// strided frames, each cell is a grid_size × grid_size tile.
pub fn panel_image(rows: &[(&str, &VoltageSequence)], stride: usize) -> Result<GrayImage> {
    if rows.is_empty() {
        return Err(Error::InvalidArgument {
            context: "panel_image",
            detail: "need at least one sequence".into(),
        });
    }
    if stride == 0 {
        return Err(Error::InvalidArgument {
            context: "panel_image",
            detail: "stride must be positive".into(),
        });
    }
    let (frames, h, w) = rows[0].1.dim();
    for (label, seq) in rows {
        if seq.dim() != (frames, h, w) {
            return Err(Error::ShapeMismatch {
                context: "panel_image",
                expected: format!("({frames}, {h}, {w})"),
                got: format!("sequence `{label}` has {:?}", seq.dim()),
            });
        }
    }
    if frames == 0 {
        return Err(Error::InvalidArgument {
            context: "panel_image",
            detail: "sequences have no frames".into(),
        });
    }
    let cols = strided_indices(frames, stride);
    let width = (cols.len() * w) as u32;
    let height = (rows.len() * h) as u32;
    let img = GrayImage::from_fn(width, height, |x, y| {
        let (x, y) = (x as usize, y as usize);
        let (row, py) = (y / h, y % h);
        let (col, px) = (x / w, x % w);
        let v = rows[row].1[(cols[col], py, px)].clamp(0.0, 1.0);
        image::Luma([(v * 255.0).round() as u8])
    });
    Ok(img)
}

/// Render the panel to a new PNG file. Refuses to overwrite.
pub fn render_panels(path: &Path, rows: &[(&str, &VoltageSequence)], stride: usize) -> Result<()> {
    let img = panel_image(rows, stride)?;
    let mut file = crate::io::create_new_file(path)?;
    let encoder = image::codecs::png::PngEncoder::new(&mut file);
    encoder.write_image(
        img.as_raw(),
        img.width(),
        img.height(),
        image::ExtendedColorType::L8,
    )?;
    Ok(())
}
