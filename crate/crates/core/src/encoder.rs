//! Per-frame convolutional encoder and the mean-pooled static posterior.

use rand::Rng;

use crate::autograd::Var;
use crate::distributions::DiagGaussian;
use crate::error::{Error, Result};
use crate::model::ModelConfig;
use crate::nn::{positive_scale, Conv2d, GaussianVar, Graph, Linear, ParamGroup, ParamStore};
use crate::tensor::{ConvGeom, Scalar, Tensor};

#[derive(Clone, Debug, PartialEq)]
pub struct Encoder {
    pub stages: Vec<Conv2d>,
    pub identity: Linear,
    pub pose_loc: Linear,
    pub pose_scale: Linear,
    pub static_loc: Linear,
    pub static_scale: Linear,
    frame: [usize; 3],
    slope: f64,
    blur: bool,
}

/// Frozen-able trunk outputs for a stack of frames.
#[derive(Clone, Copy, Debug)]
pub struct TrunkFeatures {
    /// `[n, trunk_features]`, input of the pose heads.
    pub trunk: Var,
    /// `[n, identity_features]`, per-frame identity embedding.
    pub identity: Var,
}

#[derive(Clone, Debug, PartialEq)]
pub struct FrameEncoding<F = f64> {
    pub pose_params: DiagGaussian<F>,
    pub identity_features: Vec<F>,
}

impl Encoder {
    pub fn new<F: Scalar>(cfg: &ModelConfig, store: &mut ParamStore<F>, rng: &mut impl Rng) -> Self {
        let mut stages = Vec::new();
        let mut in_ch = cfg.channels;
        for (i, &out_ch) in cfg.encoder_channels.iter().enumerate() {
            stages.push(Conv2d::new(
                store,
                &format!("encoder.conv{i}"),
                in_ch,
                out_ch,
                ConvGeom::new(4, 2, 1),
                ParamGroup::EncoderTrunk,
                rng,
            ));
            in_ch = out_ch;
        }
        let trunk = cfg.trunk_features();
        let identity =
            Linear::new(store, "encoder.identity", trunk, cfg.identity_features, ParamGroup::EncoderTrunk, rng);
        let pose_loc = Linear::new(store, "encoder.pose_loc", trunk, cfg.kappa_z, ParamGroup::EncoderHead, rng);
        let pose_scale = Linear::new(store, "encoder.pose_scale", trunk, cfg.kappa_z, ParamGroup::EncoderHead, rng);
        let static_loc =
            Linear::new(store, "encoder.static_loc", cfg.identity_features, cfg.kappa_s, ParamGroup::EncoderHead, rng);
        let static_scale =
            Linear::new(store, "encoder.static_scale", cfg.identity_features, cfg.kappa_s, ParamGroup::EncoderHead, rng);
        Self {
            stages,
            identity,
            pose_loc,
            pose_scale,
            static_loc,
            static_scale,
            frame: cfg.frame_shape(),
            slope: cfg.leaky_slope,
            blur: cfg.blur_pool,
        }
    }

    pub fn frame_shape(&self) -> [usize; 3] {
        self.frame
    }

    /// Runs the convolutional trunk and identity layer on `frames: [n, c, h, w]`.
    pub fn features<F: Scalar>(&self, g: &mut Graph<'_, F>, frames: Var) -> TrunkFeatures {
        let mut x = frames;
        for stage in &self.stages {
            if self.blur {
                x = blur(g, x);
            }
            x = stage.forward(g, x);
            x = g.tape.leaky_relu(x, self.slope);
        }
        let n = g.value(x).rows();
        let width = g.value(x).cols();
        let trunk = g.tape.reshape(x, &[n, width]);
        let id = self.identity.forward(g, trunk);
        let identity = g.tape.leaky_relu(id, self.slope);
        TrunkFeatures { trunk, identity }
    }

    /// Per-frame pose posterior from trunk features.
    pub fn pose<F: Scalar>(&self, g: &mut Graph<'_, F>, trunk: Var) -> GaussianVar {
        let loc = self.pose_loc.forward(g, trunk);
        let pre = self.pose_scale.forward(g, trunk);
        let scale = positive_scale(&mut g.tape, pre);
        GaussianVar { loc, scale }
    }

    /// Static posterior from per-frame identity features `[n, feat]`, mean-pooled over frames.
    pub fn static_posterior<F: Scalar>(&self, g: &mut Graph<'_, F>, identity: Var) -> GaussianVar {
        let pooled = g.tape.mean_rows(identity);
        let loc = self.static_loc.forward(g, pooled);
        let pre = self.static_scale.forward(g, pooled);
        let scale = positive_scale(&mut g.tape, pre);
        GaussianVar { loc, scale }
    }

    fn check_frame<F: Scalar>(&self, frame: &Tensor<F>) -> Result<()> {
        let shape = frame.shape();
        let ok = shape == self.frame || (shape.len() == 4 && shape[0] == 1 && shape[1..] == self.frame);
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidArgument(format!("frame shape {shape:?} does not match configured {:?}", self.frame)))
        }
    }

    /// Encodes one `[c, h, w]` frame without recording gradients.
    pub fn encode_frame<F: Scalar>(&self, store: &ParamStore<F>, frame: &Tensor<F>) -> Result<FrameEncoding<F>> {
        self.check_frame(frame)?;
        let [c, h, w] = self.frame;
        let mut g = Graph::new(store, false);
        let x = g.constant(frame.clone().reshape(&[1, c, h, w]));
        let feats = self.features(&mut g, x);
        let pose = self.pose(&mut g, feats.trunk);
        Ok(FrameEncoding {
            pose_params: pose.to_dist(&g.tape),
            identity_features: g.value(feats.identity).data().to_vec(),
        })
    }

    /// Static posterior of a group of per-frame encodings.
    pub fn infer_static<F: Scalar>(&self, store: &ParamStore<F>, encodings: &[FrameEncoding<F>]) -> Result<DiagGaussian<F>> {
        let first = encodings.first().ok_or(Error::Empty("frame encodings"))?;
        let width = first.identity_features.len();
        let mut data = Vec::with_capacity(width * encodings.len());
        for e in encodings {
            if e.identity_features.len() != width {
                return Err(Error::DimensionMismatch {
                    context: "infer_static",
                    expected: width,
                    actual: e.identity_features.len(),
                });
            }
            data.extend_from_slice(&e.identity_features);
        }
        let mut g = Graph::new(store, false);
        let id = g.constant(Tensor::new(vec![encodings.len(), width], data));
        let post = self.static_posterior(&mut g, id);
        Ok(post.to_dist(&g.tape))
    }
}

/// Depthwise 3×3 binomial blur, stride 1.
fn blur<F: Scalar>(g: &mut Graph<'_, F>, x: Var) -> Var {
    let c = g.value(x).shape()[1];
    let k = [1.0, 2.0, 1.0];
    let mut w = vec![F::zero(); c * c * 9];
    for ch in 0..c {
        for i in 0..3 {
            for j in 0..3 {
                w[((ch * c + ch) * 3 + i) * 3 + j] = F::lit(k[i] * k[j] / 16.0);
            }
        }
    }
    let wv = g.constant(Tensor::new(vec![c, c, 3, 3], w));
    let bv = g.constant(Tensor::zeros(&[c]));
    g.tape.conv2d(x, wv, bv, ConvGeom::new(3, 1, 1))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::Vdsm;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn tiny(channels: usize, size: usize, stages: Vec<usize>) -> ModelConfig {
        ModelConfig {
            channels,
            height: size,
            width: size,
            kappa_z: 2,
            kappa_s: 2,
            kappa_d: 2,
            n_experts: 2,
            encoder_channels: stages,
            identity_features: 2,
            decoder_channels: vec![],
            rnn_hidden: 3,
            decoder_token: 2,
            transition_hidden: 3,
            ..ModelConfig::default()
        }
    }

    fn frame(len: usize, seed: usize) -> Vec<f64> {
        (0..len).map(|i| ((i * 37 + seed * 11) % 17) as f64 / 16.0).collect()
    }

    #[test]
    fn encoding_contract() {
        let cfg = ModelConfig::default();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let (m, store) = Vdsm::new::<f32>(cfg.clone(), &mut rng).unwrap();
        let x = Tensor::<f32>::new(vec![3, 32, 32], frame(3 * 32 * 32, 1).iter().map(|&v| v as f32).collect());
        let e1 = m.encoder.encode_frame(&store, &x).unwrap();
        assert_eq!(e1.pose_params.loc.len(), cfg.kappa_z);
        assert!(e1.pose_params.scale.iter().all(|&s| s > 0.0));
        assert_eq!(e1.identity_features.len(), cfg.identity_features);
        let e2 = m.encoder.encode_frame(&store, &x).unwrap();
        assert_eq!(e1, e2);
        let wrong = Tensor::<f32>::zeros(&[1, 32, 32]);
        assert!(m.encoder.encode_frame(&store, &wrong).is_err());
    }

    #[test]
    fn single_stage_trunk_matches_direct_convolution() {
        let cfg = tiny(1, 4, vec![1]);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let (m, mut store) = Vdsm::new::<f64>(cfg, &mut rng).unwrap();
        // Hand-set kernel: w[ki][kj] = (ki + 1) * 0.1 - kj * 0.05, bias 0.2.
        let kernel: Vec<f64> = (0..16).map(|i| ((i / 4) + 1) as f64 * 0.1 - (i % 4) as f64 * 0.05).collect();
        *store.get_mut(m.encoder.stages[0].w) = Tensor::new(vec![1, 1, 4, 4], kernel.clone());
        *store.get_mut(m.encoder.stages[0].b) = Tensor::new(vec![1], vec![0.2]);
        let x = frame(16, 3);
        let mut g = Graph::new(&store, false);
        let xv = g.constant(Tensor::new(vec![1, 1, 4, 4], x.clone()));
        let feats = m.encoder.features(&mut g, xv);
        let got = g.value(feats.trunk).data().to_vec();
        // Stride 2, padding 1: output (oy, ox) sees input rows 2*oy-1 .. 2*oy+2.
        let mut want = Vec::new();
        for oy in 0..2 {
            for ox in 0..2 {
                let mut acc = 0.2;
                for ki in 0..4 {
                    for kj in 0..4 {
                        let iy = 2 * oy as isize + ki as isize - 1;
                        let ix = 2 * ox as isize + kj as isize - 1;
                        if (0..4).contains(&iy) && (0..4).contains(&ix) {
                            acc += x[(iy * 4 + ix) as usize] * kernel[ki * 4 + kj];
                        }
                    }
                }
                want.push(if acc > 0.0 { acc } else { 0.2 * acc });
            }
        }
        for (a, b) in got.iter().zip(&want) {
            assert!((a - b).abs() < 1e-12, "{got:?} vs {want:?}");
        }
    }

    #[test]
    fn static_posterior_pooling_properties() {
        let cfg = tiny(1, 4, vec![1]);
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let (m, mut store) = Vdsm::new::<f64>(cfg, &mut rng).unwrap();
        let enc = |f: Vec<f64>| FrameEncoding { pose_params: DiagGaussian::standard(2), identity_features: f };
        let a = enc(vec![0.3, -1.2]);
        let b = enc(vec![1.1, 0.4]);
        let c = enc(vec![-0.5, 0.9]);
        let one = m.encoder.infer_static(&store, &[a.clone()]).unwrap();
        let many = m.encoder.infer_static(&store, &[a.clone(), a.clone(), a.clone(), a.clone()]).unwrap();
        for (x, y) in one.loc.iter().zip(&many.loc) {
            assert!((x - y).abs() < 1e-15);
        }
        let abc = m.encoder.infer_static(&store, &[a.clone(), b.clone(), c.clone()]).unwrap();
        let cab = m.encoder.infer_static(&store, &[c.clone(), a.clone(), b.clone()]).unwrap();
        let bca = m.encoder.infer_static(&store, &[b.clone(), c.clone(), a.clone()]).unwrap();
        assert!(abc.scale.iter().all(|&s| s > 0.0));
        for (x, y) in abc.loc.iter().zip(&cab.loc).chain(abc.loc.iter().zip(&bca.loc)) {
            assert!((x - y).abs() < 1e-15);
        }
        // Identity heads: the location is the midpoint of two inputs.
        *store.get_mut(m.encoder.static_loc.w) = Tensor::new(vec![2, 2], vec![1.0, 0.0, 0.0, 1.0]);
        *store.get_mut(m.encoder.static_loc.b) = Tensor::zeros(&[2]);
        let mid = m.encoder.infer_static(&store, &[a, b]).unwrap();
        assert!((mid.loc[0] - 0.7).abs() < 1e-15 && (mid.loc[1] + 0.4).abs() < 1e-15);
        assert!(m.encoder.infer_static::<f64>(&store, &[]).is_err());
    }

    #[test]
    fn blur_variant_runs() {
        let mut cfg = ModelConfig::default();
        cfg.blur_pool = true;
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let (m, store) = Vdsm::new::<f32>(cfg, &mut rng).unwrap();
        let x = Tensor::<f32>::full(&[3, 32, 32], 0.5);
        let e = m.encoder.encode_frame(&store, &x).unwrap();
        assert!(e.identity_features.iter().all(|v| v.is_finite()));
    }
}
