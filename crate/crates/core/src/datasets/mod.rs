//! Procedural labeled sequence sets, IDX ingestion and grouped frame batching.

mod idx;
mod pendulum;
mod shapes;
mod storage;

pub use idx::{load_idx, IdxData};
pub use pendulum::{gen_pendulum, pendulum_angle, pendulum_geometry, render_pendulum, render_pendulum_sequence, PendulumConfig, PENDULUM_COLORS};
pub use shapes::{builtin_glyphs, gen_moving_shapes, render_glyph, shape_position, Glyph, Motion, ShapesConfig};
pub use storage::{load_dataset, manifest_path, save_dataset, Manifest, DATASET_MAGIC, DATASET_VERSION};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// A frame stack `[t, c, h, w]` with ground-truth factors used only for evaluation.
#[derive(Clone, Debug, PartialEq)]
pub struct LabeledSequence {
    pub frames: Tensor<f32>,
    pub identity_label: usize,
    pub action_label: usize,
}

impl LabeledSequence {
    pub fn len(&self) -> usize {
        self.frames.shape()[0]
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn frame_len(&self) -> usize {
        self.frames.shape()[1..].iter().product()
    }

    pub fn frame(&self, t: usize) -> &[f32] {
        let n = self.frame_len();
        &self.frames.data()[t * n..(t + 1) * n]
    }

    /// Stacks the selected frames into `[k, c, h, w]`.
    pub fn select(&self, idx: &[usize]) -> Tensor<f32> {
        let mut shape = self.frames.shape().to_vec();
        shape[0] = idx.len();
        let data = idx.iter().flat_map(|&t| self.frame(t).iter().copied()).collect();
        Tensor::new(shape, data)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub name: String,
    pub sequences: Vec<LabeledSequence>,
    pub identity_names: Vec<String>,
    pub action_names: Vec<String>,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.sequences.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sequences.is_empty()
    }

    /// `[t, c, h, w]` shared by every sequence.
    pub fn sequence_shape(&self) -> Result<[usize; 4]> {
        let first = self.sequences.first().ok_or(Error::Empty("dataset"))?;
        let s = first.frames.shape();
        let shape = [s[0], s[1], s[2], s[3]];
        if self.sequences.iter().any(|q| q.frames.shape() != shape) {
            return Err(Error::InvalidArgument("sequences differ in shape".into()));
        }
        Ok(shape)
    }

    pub fn identity_labels(&self) -> Vec<usize> {
        self.sequences.iter().map(|s| s.identity_label).collect()
    }

    pub fn action_labels(&self) -> Vec<usize> {
        self.sequences.iter().map(|s| s.action_label).collect()
    }
}

/// Frames of one sequence, used as one identity group.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct IdentityBatch {
    pub sequence: usize,
    pub frames: Vec<usize>,
}

/// Splits every sequence into groups of at most `batch_size` frames and shuffles
/// the groups. Grouping relies on sequence membership only.
pub fn identity_batches(dataset: &Dataset, batch_size: usize, seed: u64) -> Result<Vec<IdentityBatch>> {
    if dataset.is_empty() {
        return Err(Error::Empty("dataset"));
    }
    if batch_size == 0 {
        return Err(Error::InvalidArgument("batch size must be positive".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::new();
    for (i, seq) in dataset.sequences.iter().enumerate() {
        let mut order: Vec<usize> = (0..seq.len()).collect();
        order.shuffle(&mut rng);
        for chunk in order.chunks(batch_size) {
            let mut frames = chunk.to_vec();
            frames.sort_unstable();
            out.push(IdentityBatch { sequence: i, frames });
        }
    }
    out.shuffle(&mut rng);
    Ok(out)
}

/// Anti-aliased coverage of a disc or capsule edge at distance `dist` from its core.
pub(crate) fn coverage(dist: f64, radius: f64) -> f64 {
    (radius + 0.5 - dist).clamp(0.0, 1.0)
}
