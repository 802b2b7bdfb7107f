//! Binary checkpoints of a training run.
//!
//! Layout (all integers and floats little-endian):
//! `"VDSM"`, `u32` version, `u32` length + JSON training config, `u8` stage, `u8` pretrain
//! complete, `u64` epoch, annealing state (`f64` λ_z, λ_s, λ_d, τ, `u64` epoch, `u8` stage),
//! RNG (`[u8; 32]` seed, `u128` word position, `u64` stream), `u64` optimizer step, `u32` tensor
//! count, then per tensor: `u32` name length + UTF-8 name, `u8` frozen, `u32` rank, `u32` dims,
//! `f32` values, `f32` first moments, `f32` second moments.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::model::Vdsm;
use crate::optim::Adam;
use crate::schedules::{AnnealState, Stage};
use crate::tensor::Tensor;
use crate::trainer::{ModelState, TrainConfig};

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"VDSM";
pub const CHECKPOINT_VERSION: u32 = 1;

fn stage_byte(s: Stage) -> u8 {
    match s {
        Stage::Pretrain => 0,
        Stage::Sequence => 1,
    }
}

/// Serializes `state` to bytes; equal states give equal bytes.
pub fn encode_checkpoint(state: &ModelState) -> Result<Vec<u8>> {
    let mut b = Vec::new();
    b.extend_from_slice(CHECKPOINT_MAGIC);
    b.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    let json = serde_json::to_vec(&state.config).map_err(|e| Error::Config(e.to_string()))?;
    b.extend_from_slice(&(json.len() as u32).to_le_bytes());
    b.extend_from_slice(&json);
    b.push(stage_byte(state.stage));
    b.push(u8::from(state.pretrain_complete));
    b.extend_from_slice(&(state.epoch as u64).to_le_bytes());
    let a = &state.anneal;
    for v in [a.lambda_z, a.lambda_s, a.lambda_d, a.tau_s] {
        b.extend_from_slice(&v.to_le_bytes());
    }
    b.extend_from_slice(&(a.epoch as u64).to_le_bytes());
    b.push(stage_byte(a.stage));
    b.extend_from_slice(&state.rng.get_seed());
    b.extend_from_slice(&state.rng.get_word_pos().to_le_bytes());
    b.extend_from_slice(&state.rng.get_stream().to_le_bytes());
    b.extend_from_slice(&state.optimizer.step.to_le_bytes());
    let entries = state.store.entries();
    b.extend_from_slice(&(entries.len() as u32).to_le_bytes());
    for (i, e) in entries.iter().enumerate() {
        b.extend_from_slice(&(e.name.len() as u32).to_le_bytes());
        b.extend_from_slice(e.name.as_bytes());
        b.push(u8::from(e.frozen));
        b.extend_from_slice(&(e.tensor.shape().len() as u32).to_le_bytes());
        for &d in e.tensor.shape() {
            b.extend_from_slice(&(d as u32).to_le_bytes());
        }
        for t in [&e.tensor, &state.optimizer.m[i], &state.optimizer.v[i]] {
            for &v in t.data() {
                b.extend_from_slice(&v.to_le_bytes());
            }
        }
    }
    Ok(b)
}

pub fn save_checkpoint(state: &ModelState, path: impl AsRef<Path>) -> Result<()> {
    let bytes = encode_checkpoint(state)?;
    let mut w = BufWriter::new(File::create(path.as_ref())?);
    w.write_all(&bytes)?;
    w.flush()?;
    Ok(())
}

struct Reader<'a> {
    bytes: &'a [u8],
    at: usize,
    path: &'a Path,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let out = self.bytes.get(self.at..self.at + n).ok_or_else(|| Error::Truncated(self.path.into()))?;
        self.at += n;
        Ok(out)
    }

    fn array<const N: usize>(&mut self) -> Result<[u8; N]> {
        Ok(self.take(N)?.try_into().expect("length checked"))
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.array()?))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.array()?))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.array()?))
    }

    fn f32s(&mut self, n: usize) -> Result<Vec<f32>> {
        Ok(self.take(n * 4)?.chunks_exact(4).map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]])).collect())
    }

    fn stage(&mut self) -> Result<Stage> {
        match self.u8()? {
            0 => Ok(Stage::Pretrain),
            1 => Ok(Stage::Sequence),
            other => Err(Error::Format { path: self.path.into(), reason: format!("bad stage byte {other}") }),
        }
    }
}

/// Reads a checkpoint and rebuilds the state from its stored config.
pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<ModelState> {
    load(path.as_ref(), None)
}

/// Reads a checkpoint, requiring every tensor to match the shapes implied by `expected`.
pub fn load_checkpoint_for(path: impl AsRef<Path>, expected: &TrainConfig) -> Result<ModelState> {
    load(path.as_ref(), Some(expected))
}

fn load(path: &Path, expected: Option<&TrainConfig>) -> Result<ModelState> {
    let bytes = std::fs::read(path)?;
    let mut r = Reader { bytes: &bytes, at: 0, path };
    if r.take(4).ok() != Some(&CHECKPOINT_MAGIC[..]) {
        return Err(Error::NotACheckpoint(path.into()));
    }
    let version = r.u32()?;
    if version != CHECKPOINT_VERSION {
        return Err(Error::VersionMismatch { found: version, expected: CHECKPOINT_VERSION });
    }
    let n = r.u32()? as usize;
    let stored: TrainConfig =
        serde_json::from_slice(r.take(n)?).map_err(|e| Error::Format { path: path.into(), reason: e.to_string() })?;
    let stage = r.stage()?;
    let pretrain_complete = r.u8()? != 0;
    let epoch = r.u64()? as usize;
    let (lambda_z, lambda_s, lambda_d, tau_s) = (r.f64()?, r.f64()?, r.f64()?, r.f64()?);
    let anneal = AnnealState { lambda_z, lambda_s, lambda_d, tau_s, epoch: r.u64()? as usize, stage: r.stage()? };
    let mut rng = ChaCha8Rng::from_seed(r.array()?);
    rng.set_word_pos(u128::from_le_bytes(r.array()?));
    rng.set_stream(r.u64()?);
    let step = r.u64()?;

    let config = expected.cloned().unwrap_or(stored);
    let (model, mut store) = Vdsm::new::<f32>(config.model.clone(), &mut ChaCha8Rng::seed_from_u64(0))?;
    let mut optimizer = Adam::new(config.optim, &store);
    optimizer.step = step;
    let count = r.u32()? as usize;
    if count != store.len() {
        return Err(Error::Format { path: path.into(), reason: format!("{count} tensors stored, model has {}", store.len()) });
    }
    let ids: Vec<_> = store.ids().collect();
    for (i, id) in ids.into_iter().enumerate() {
        let len = r.u32()? as usize;
        let name = String::from_utf8(r.take(len)?.to_vec()).map_err(|e| Error::Format { path: path.into(), reason: e.to_string() })?;
        let frozen = r.u8()? != 0;
        let rank = r.u32()? as usize;
        let shape: Vec<usize> = (0..rank).map(|_| r.u32().map(|d| d as usize)).collect::<Result<_>>()?;
        let entry = store.entry(id);
        if name != entry.name {
            return Err(Error::Format { path: path.into(), reason: format!("expected tensor {}, found {name}", entry.name) });
        }
        if shape != entry.tensor.shape() {
            return Err(Error::ShapeMismatch { name, found: shape, expected: entry.tensor.shape().to_vec() });
        }
        let numel: usize = shape.iter().product();
        *store.get_mut(id) = Tensor::new(shape.clone(), r.f32s(numel)?);
        optimizer.m[i] = Tensor::new(shape.clone(), r.f32s(numel)?);
        optimizer.v[i] = Tensor::new(shape, r.f32s(numel)?);
        store.set_frozen(id, frozen);
    }
    if r.at != bytes.len() {
        return Err(Error::Format { path: path.into(), reason: "trailing bytes".into() });
    }
    Ok(ModelState { config, model, store, optimizer, anneal, stage, epoch, pretrain_complete, rng })
}
