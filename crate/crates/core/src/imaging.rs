//! PNG output for frames and frame grids.

use std::fs::File;
use std::io::BufWriter;
use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Gap between tiles, in pixels.
pub const GRID_PAD: usize = 1;

/// Tiles `rows` (each `[t, c, h, w]`, `c` 1 or 3) into one image: one row per sequence,
/// one column per frame. Returns `(width, height, channels, bytes)`.
pub fn grid(rows: &[Tensor<f32>]) -> Result<(usize, usize, usize, Vec<u8>)> {
    let first = rows.first().ok_or(Error::Empty("grid rows"))?;
    let shape = first.shape().to_vec();
    if shape.len() != 4 || !(shape[1] == 1 || shape[1] == 3) {
        return Err(Error::InvalidArgument(format!("grid rows must be [t, 1|3, h, w], got {shape:?}")));
    }
    let (c, h, w) = (shape[1], shape[2], shape[3]);
    let cols = rows.iter().map(|r| r.shape()[0]).max().unwrap_or(0);
    if rows.iter().any(|r| r.shape()[1..] != shape[1..]) {
        return Err(Error::InvalidArgument("grid rows differ in frame shape".into()));
    }
    let width = cols * (w + GRID_PAD) + GRID_PAD;
    let height = rows.len() * (h + GRID_PAD) + GRID_PAD;
    let mut img = vec![255u8; width * height * c];
    for (ri, row) in rows.iter().enumerate() {
        for t in 0..row.shape()[0] {
            let frame = &row.data()[t * c * h * w..(t + 1) * c * h * w];
            let (ox, oy) = (GRID_PAD + t * (w + GRID_PAD), GRID_PAD + ri * (h + GRID_PAD));
            for y in 0..h {
                for x in 0..w {
                    for ch in 0..c {
                        let v = frame[ch * h * w + y * w + x].clamp(0.0, 1.0);
                        img[((oy + y) * width + ox + x) * c + ch] = (v * 255.0).round() as u8;
                    }
                }
            }
        }
    }
    Ok((width, height, c, img))
}

pub fn write_png(path: impl AsRef<Path>, width: usize, height: usize, channels: usize, bytes: &[u8]) -> Result<()> {
    let path = path.as_ref();
    let png_err = |e: png::EncodingError| Error::Format { path: path.into(), reason: e.to_string() };
    let mut enc = png::Encoder::new(BufWriter::new(File::create(path)?), width as u32, height as u32);
    enc.set_color(if channels == 3 { png::ColorType::Rgb } else { png::ColorType::Grayscale });
    enc.set_depth(png::BitDepth::Eight);
    let mut w = enc.write_header().map_err(png_err)?;
    w.write_image_data(bytes).map_err(png_err)?;
    w.finish().map_err(png_err)?;
    Ok(())
}

pub fn write_grid(path: impl AsRef<Path>, rows: &[Tensor<f32>]) -> Result<()> {
    let (w, h, c, bytes) = grid(rows)?;
    write_png(path, w, h, c, &bytes)
}

/// Writes each frame of `seq` as `<prefix>_<t>.png` inside `dir`.
pub fn write_frames(dir: impl AsRef<Path>, prefix: &str, seq: &Tensor<f32>) -> Result<()> {
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir)?;
    let s = seq.shape();
    let n = s[1] * s[2] * s[3];
    for t in 0..s[0] {
        let frame = Tensor::new(vec![1, s[1], s[2], s[3]], seq.data()[t * n..(t + 1) * n].to_vec());
        write_grid(dir.join(format!("{prefix}_{t:03}.png")), &[frame])?;
    }
    Ok(())
}
