use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{Dataset, LabeledSequence};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const DATASET_MAGIC: &[u8; 4] = b"VDSD";
pub const DATASET_VERSION: u32 = 1;

/// Human-readable summary written next to a dataset file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub name: String,
    pub version: u32,
    pub count: usize,
    /// `[t, c, h, w]`
    pub shape: [usize; 4],
    pub identities: Vec<String>,
    pub actions: Vec<String>,
    pub identity_counts: Vec<usize>,
    pub action_counts: Vec<usize>,
}

pub fn manifest_path(path: &Path) -> PathBuf {
    path.with_extension("json")
}

fn counts(labels: impl Iterator<Item = usize>, n: usize) -> Vec<usize> {
    let mut c = vec![0; n];
    for l in labels {
        c[l] += 1;
    }
    c
}

/// Writes the binary file and its JSON manifest; returns the manifest.
pub fn save_dataset(ds: &Dataset, path: impl AsRef<Path>) -> Result<Manifest> {
    let path = path.as_ref();
    let shape = ds.sequence_shape()?;
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(DATASET_MAGIC)?;
    let header = [DATASET_VERSION, ds.len() as u32, shape[0] as u32, shape[1] as u32, shape[2] as u32, shape[3] as u32];
    for v in header {
        w.write_all(&v.to_le_bytes())?;
    }
    for seq in &ds.sequences {
        w.write_all(&(seq.identity_label as u32).to_le_bytes())?;
        w.write_all(&(seq.action_label as u32).to_le_bytes())?;
        for &v in seq.frames.data() {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    w.flush()?;
    let manifest = Manifest {
        name: ds.name.clone(),
        version: DATASET_VERSION,
        count: ds.len(),
        shape,
        identities: ds.identity_names.clone(),
        actions: ds.action_names.clone(),
        identity_counts: counts(ds.sequences.iter().map(|s| s.identity_label), ds.identity_names.len()),
        action_counts: counts(ds.sequences.iter().map(|s| s.action_label), ds.action_names.len()),
    };
    let json = serde_json::to_string_pretty(&manifest).map_err(|e| Error::Format { path: path.into(), reason: e.to_string() })?;
    std::fs::write(manifest_path(path), json + "\n")?;
    Ok(manifest)
}

fn read_u32(r: &mut impl Read, path: &Path) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b).map_err(|_| Error::Truncated(path.to_path_buf()))?;
    Ok(u32::from_le_bytes(b))
}

/// Reads a dataset file; label names come from the manifest when present.
pub fn load_dataset(path: impl AsRef<Path>) -> Result<Dataset> {
    let path = path.as_ref();
    let mut r = BufReader::new(File::open(path)?);
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic).map_err(|_| Error::Truncated(path.to_path_buf()))?;
    if &magic != DATASET_MAGIC {
        return Err(Error::Format { path: path.into(), reason: "not a dataset file".into() });
    }
    let version = read_u32(&mut r, path)?;
    if version != DATASET_VERSION {
        return Err(Error::VersionMismatch { found: version, expected: DATASET_VERSION });
    }
    let count = read_u32(&mut r, path)? as usize;
    let shape: Vec<usize> = (0..4).map(|_| read_u32(&mut r, path).map(|v| v as usize)).collect::<Result<_>>()?;
    let n: usize = shape.iter().product();
    let mut buf = vec![0u8; n * 4];
    let mut sequences = Vec::with_capacity(count);
    for _ in 0..count {
        let identity_label = read_u32(&mut r, path)? as usize;
        let action_label = read_u32(&mut r, path)? as usize;
        r.read_exact(&mut buf).map_err(|_| Error::Truncated(path.to_path_buf()))?;
        let data = buf.chunks_exact(4).map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]])).collect();
        sequences.push(LabeledSequence { frames: Tensor::new(shape.clone(), data), identity_label, action_label });
    }
    let n_id = sequences.iter().map(|s| s.identity_label + 1).max().unwrap_or(0);
    let n_act = sequences.iter().map(|s| s.action_label + 1).max().unwrap_or(0);
    let (name, identity_names, action_names) = match std::fs::read_to_string(manifest_path(path)) {
        Ok(text) => {
            let m: Manifest =
                serde_json::from_str(&text).map_err(|e| Error::Format { path: manifest_path(path), reason: e.to_string() })?;
            (m.name, m.identities, m.actions)
        }
        Err(_) => (
            path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default(),
            (0..n_id).map(|i| i.to_string()).collect(),
            (0..n_act).map(|i| i.to_string()).collect(),
        ),
    };
    Ok(Dataset { name, sequences, identity_names, action_names })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datasets::{gen_pendulum, PendulumConfig};

    #[test]
    fn round_trip_and_determinism() {
        let ds = gen_pendulum(&PendulumConfig { count: 4, t: 3, size: 16, ..PendulumConfig::default() }).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let a = dir.path().join("a.vdsd");
        let b = dir.path().join("b.vdsd");
        let m = save_dataset(&ds, &a).unwrap();
        save_dataset(&ds, &b).unwrap();
        assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
        assert_eq!(m.count, 4);
        assert_eq!(m.identities.len(), 7);
        assert_eq!(load_dataset(&a).unwrap(), ds);
    }

    #[test]
    fn bad_files() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("x.vdsd");
        std::fs::write(&p, b"NOPE0000").unwrap();
        assert!(matches!(load_dataset(&p), Err(Error::Format { .. })));
        let ds = gen_pendulum(&PendulumConfig { count: 2, t: 2, size: 8, ..PendulumConfig::default() }).unwrap();
        save_dataset(&ds, &p).unwrap();
        let bytes = std::fs::read(&p).unwrap();
        std::fs::write(&p, &bytes[..bytes.len() - 1]).unwrap();
        assert!(matches!(load_dataset(&p), Err(Error::Truncated(_))));
    }
}
