use std::path::Path;

use crate::error::{Error, Result};

const IMAGES_MAGIC: u32 = 0x0000_0803;
const LABELS_MAGIC: u32 = 0x0000_0801;

#[derive(Clone, Debug, PartialEq)]
pub enum IdxData {
    /// Row-major images scaled to `[0, 1]`.
    Images { count: usize, rows: usize, cols: usize, pixels: Vec<f32> },
    Labels(Vec<u8>),
}

fn be_u32(bytes: &[u8], at: usize, path: &Path) -> Result<u32> {
    bytes
        .get(at..at + 4)
        .map(|b| u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
        .ok_or_else(|| Error::Truncated(path.to_path_buf()))
}

/// Reads a big-endian unsigned-byte IDX file of images or labels.
pub fn load_idx(path: impl AsRef<Path>) -> Result<IdxData> {
    let path = path.as_ref();
    let bytes = std::fs::read(path)?;
    let magic = be_u32(&bytes, 0, path)?;
    match magic {
        IMAGES_MAGIC => {
            let count = be_u32(&bytes, 4, path)? as usize;
            let rows = be_u32(&bytes, 8, path)? as usize;
            let cols = be_u32(&bytes, 12, path)? as usize;
            let body = bytes.get(16..16 + count * rows * cols).ok_or_else(|| Error::Truncated(path.to_path_buf()))?;
            Ok(IdxData::Images { count, rows, cols, pixels: body.iter().map(|&b| b as f32 / 255.0).collect() })
        }
        LABELS_MAGIC => {
            let count = be_u32(&bytes, 4, path)? as usize;
            let body = bytes.get(8..8 + count).ok_or_else(|| Error::Truncated(path.to_path_buf()))?;
            Ok(IdxData::Labels(body.to_vec()))
        }
        other => Err(Error::Format { path: path.to_path_buf(), reason: format!("unknown IDX magic {other:#010x}") }),
    }
}
