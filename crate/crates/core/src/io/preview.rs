use std::path::Path;

use crate::error::{Error, Result};
use crate::io::container::write_atomic;

/// Impervious white, building blue, low vegetation cyan, tree green, car
/// yellow, clutter red; anything else black.
pub const PALETTE: [[u8; 3]; 6] = [
    [255, 255, 255],
    [0, 0, 255],
    [0, 255, 255],
    [0, 255, 0],
    [255, 255, 0],
    [255, 0, 0],
];

pub fn encode_label_png(labels: &[u8], height: usize, width: usize) -> Result<Vec<u8>> {
    if labels.len() != height * width {
        return Err(Error::Shape(format!("{} labels for {height}x{width}", labels.len())));
    }
    let rgb: Vec<u8> = labels
        .iter()
        .flat_map(|&l| PALETTE.get(l as usize).copied().unwrap_or([0, 0, 0]))
        .collect();
    let mut out = Vec::new();
    let mut enc = png::Encoder::new(&mut out, width as u32, height as u32);
    enc.set_color(png::ColorType::Rgb);
    enc.set_depth(png::BitDepth::Eight);
    let fail = |e: png::EncodingError| Error::Format(format!("png: {e}"));
    let mut writer = enc.write_header().map_err(fail)?;
    writer.write_image_data(&rgb).map_err(fail)?;
    writer.finish().map_err(fail)?;
    Ok(out)
}

pub fn save_label_png(path: &Path, labels: &[u8], height: usize, width: usize) -> Result<()> {
    write_atomic(path, &encode_label_png(labels, height, width)?)
}
