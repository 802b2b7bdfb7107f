//! Bank of transposed-convolution decoders blended in parameter space.

use rand::Rng;

use crate::autograd::Var;
use crate::distributions::SimplexVector;
use crate::error::{Error, Result};
use crate::model::ModelConfig;
use crate::nn::{Graph, ParamGroup, ParamId, ParamStore};
use crate::tensor::{conv_transpose2d, ConvGeom, Scalar, Tensor};

/// One transposed-convolution stage of an expert.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ExpertStage {
    pub w: ParamId,
    pub b: ParamId,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ExpertBank {
    /// `experts[k][i]` is stage `i` of expert `k`.
    pub experts: Vec<Vec<ExpertStage>>,
    geoms: Vec<ConvGeom>,
    input: usize,
    frame: [usize; 3],
    slope: f64,
}

/// Effective decoder parameters after blending, one `(weight, bias)` per stage.
#[derive(Clone, Debug, PartialEq)]
pub struct BlendedDecoder<F = f64> {
    pub stages: Vec<(Tensor<F>, Tensor<F>)>,
    geoms: Vec<ConvGeom>,
    slope: f64,
}

/// Blended parameters living on a tape.
#[derive(Clone, Debug)]
pub struct BlendedVars {
    pub stages: Vec<(Var, Var)>,
}

impl ExpertBank {
    pub fn new<F: Scalar>(cfg: &ModelConfig, store: &mut ParamStore<F>, rng: &mut impl Rng) -> Self {
        let levels = cfg.decoder_channels.len();
        let first_kernel = cfg.height >> levels;
        let mut geoms = vec![ConvGeom::new(first_kernel, 1, 0)];
        geoms.extend(std::iter::repeat_n(ConvGeom::new(4, 2, 1), levels));
        let mut widths = vec![cfg.decoder_in()];
        widths.extend(&cfg.decoder_channels);
        widths.push(cfg.channels);
        let experts = (0..cfg.n_experts)
            .map(|k| {
                geoms
                    .iter()
                    .enumerate()
                    .map(|(i, geom)| {
                        let (ci, co, ks) = (widths[i], widths[i + 1], geom.kernel);
                        let fan_in = (ci * ks * ks / (geom.stride * geom.stride)).max(1);
                        let name = format!("decoder.expert{k}.tconv{i}");
                        let w = store.add_uniform(format!("{name}.weight"), &[ci, co, ks, ks], fan_in, ParamGroup::Decoder, rng);
                        let b = store.add_uniform(format!("{name}.bias"), &[co], fan_in, ParamGroup::Decoder, rng);
                        ExpertStage { w, b }
                    })
                    .collect()
            })
            .collect();
        Self { experts, geoms, input: cfg.decoder_in(), frame: cfg.frame_shape(), slope: cfg.leaky_slope }
    }

    pub fn n_experts(&self) -> usize {
        self.experts.len()
    }

    pub fn input_dim(&self) -> usize {
        self.input
    }

    pub fn frame_shape(&self) -> [usize; 3] {
        self.frame
    }

    /// Blends every stage on the tape; `mix` is a `[1, n_experts]` row.
    pub fn blend_vars<F: Scalar>(&self, g: &mut Graph<'_, F>, mix: Var) -> BlendedVars {
        let stages = (0..self.geoms.len())
            .map(|i| {
                let ws: Vec<Var> = self.experts.iter().map(|e| g.param(e[i].w)).collect();
                let bs: Vec<Var> = self.experts.iter().map(|e| g.param(e[i].b)).collect();
                (g.tape.blend(mix, &ws), g.tape.blend(mix, &bs))
            })
            .collect();
        BlendedVars { stages }
    }

    /// Decodes `input: [n, decoder_in]` into pixel probabilities `[n, c, h, w]`.
    pub fn decode_vars<F: Scalar>(&self, g: &mut Graph<'_, F>, blended: &BlendedVars, input: Var) -> Var {
        let n = g.value(input).rows();
        let mut x = g.tape.reshape(input, &[n, self.input, 1, 1]);
        let last = self.geoms.len() - 1;
        for (i, (&(w, b), &geom)) in blended.stages.iter().zip(&self.geoms).enumerate() {
            x = g.tape.conv_transpose2d(x, w, b, geom);
            x = if i == last { g.tape.sigmoid(x) } else { g.tape.leaky_relu(x, self.slope) };
        }
        x
    }

    /// Parameters of expert `k` alone.
    pub fn expert<F: Scalar>(&self, store: &ParamStore<F>, k: usize) -> Result<BlendedDecoder<F>> {
        let stages = self.experts.get(k).ok_or_else(|| Error::InvalidArgument(format!("no expert {k}")))?;
        Ok(BlendedDecoder {
            stages: stages.iter().map(|s| (store.get(s.w).clone(), store.get(s.b).clone())).collect(),
            geoms: self.geoms.clone(),
            slope: self.slope,
        })
    }

    /// Convex combination of all expert parameters, weighted by `mix`.
    pub fn blend<F: Scalar>(&self, store: &ParamStore<F>, mix: &SimplexVector<F>) -> Result<BlendedDecoder<F>> {
        if mix.len() != self.n_experts() {
            return Err(Error::DimensionMismatch { context: "blend", expected: self.n_experts(), actual: mix.len() });
        }
        let mut g = Graph::new(store, false);
        let m = g.constant(Tensor::row(mix.weights()));
        let vars = self.blend_vars(&mut g, m);
        Ok(BlendedDecoder {
            stages: vars.stages.iter().map(|&(w, b)| (g.value(w).clone(), g.value(b).clone())).collect(),
            geoms: self.geoms.clone(),
            slope: self.slope,
        })
    }

    /// Pixel probabilities for `concat(s, z)` under the decoder blended by `mix`.
    pub fn decode<F: Scalar>(&self, store: &ParamStore<F>, z: &[F], s: &[F], mix: &SimplexVector<F>) -> Result<Tensor<F>> {
        if z.len() + s.len() != self.input {
            return Err(Error::DimensionMismatch { context: "decode input", expected: self.input, actual: z.len() + s.len() });
        }
        let mut input = s.to_vec();
        input.extend_from_slice(z);
        self.blend(store, mix)?.forward(&input)
    }
}

impl<F: Scalar> BlendedDecoder<F> {
    /// Decodes `inputs: [n, d]` into `[n, c, h, w]`.
    pub fn forward_rows(&self, inputs: &Tensor<F>) -> Result<Tensor<F>> {
        let d = self.stages[0].0.shape()[0];
        if inputs.shape().len() != 2 || inputs.cols() != d {
            return Err(Error::DimensionMismatch { context: "decoder input", expected: d, actual: inputs.cols() });
        }
        let mut x = inputs.clone().reshape(&[inputs.rows(), d, 1, 1]);
        let last = self.stages.len() - 1;
        let slope = F::lit(self.slope);
        for (i, ((w, b), &geom)) in self.stages.iter().zip(&self.geoms).enumerate() {
            x = conv_transpose2d(&x, w, b, geom);
            x = if i == last {
                x.map(|v| F::one() / (F::one() + (-v).exp()))
            } else {
                x.map(|v| if v > F::zero() { v } else { slope * v })
            };
        }
        Ok(x)
    }

    /// Runs one input vector through the stage stack, returning `[c, h, w]`.
    pub fn forward(&self, input: &[F]) -> Result<Tensor<F>> {
        let d = self.stages[0].0.shape()[0];
        if input.len() != d {
            return Err(Error::DimensionMismatch { context: "decoder input", expected: d, actual: input.len() });
        }
        let x = self.forward_rows(&Tensor::new(vec![1, d], input.to_vec()))?;
        let shape = x.shape()[1..].to_vec();
        Ok(x.reshape(&shape))
    }
}
