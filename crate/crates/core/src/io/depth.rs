//! 16-bit grayscale depth PNGs in millimeters (0 = invalid).

use std::path::Path;

use crate::error::{Error, Result};
use crate::scene::DepthMap;

pub const DEPTH_SCALE: f32 = 1000.0;

pub fn read_depth_png(path: &Path) -> Result<DepthMap> {
    let png_err = |m: String| Error::Png {
        path: path.to_path_buf(),
        message: m,
    };
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let decoder = png::Decoder::new(std::io::BufReader::new(file));
    let mut reader = decoder.read_info().map_err(|e| png_err(e.to_string()))?;
    let info = reader.info();
    if info.color_type != png::ColorType::Grayscale || info.bit_depth != png::BitDepth::Sixteen {
        return Err(png_err(format!(
            "expected 16-bit grayscale, found {:?} {:?}",
            info.color_type, info.bit_depth
        )));
    }
    let (w, h) = (info.width, info.height);
    let mut buf = vec![0u8; reader.output_buffer_size()];
    let frame = reader.next_frame(&mut buf).map_err(|e| png_err(e.to_string()))?;
    let bytes = &buf[..frame.buffer_size()];
    let meters = bytes
        .chunks_exact(2)
        .map(|b| u16::from_be_bytes([b[0], b[1]]) as f32 / DEPTH_SCALE)
        .collect();
    DepthMap::new(w, h, meters)
}

/// Quantizes depth to whole millimeters.
pub fn quantize_mm(d: f32) -> u16 {
    (d * DEPTH_SCALE).round().clamp(0.0, u16::MAX as f32) as u16
}

pub fn write_depth_png(path: &Path, depth: &DepthMap) -> Result<()> {
    let png_err = |m: String| Error::Png {
        path: path.to_path_buf(),
        message: m,
    };
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut enc = png::Encoder::new(std::io::BufWriter::new(file), depth.width(), depth.height());
    enc.set_color(png::ColorType::Grayscale);
    enc.set_depth(png::BitDepth::Sixteen);
    let mut writer = enc.write_header().map_err(|e| png_err(e.to_string()))?;
    let data: Vec<u8> = depth
        .values()
        .iter()
        .flat_map(|&d| quantize_mm(d).to_be_bytes())
        .collect();
    writer.write_image_data(&data).map_err(|e| png_err(e.to_string()))?;
    writer.finish().map_err(|e| png_err(e.to_string()))
}
