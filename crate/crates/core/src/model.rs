//! Architecture configuration and the assembled model.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::distributions::{temperature_softmax, SimplexVector};
use crate::encoder::Encoder;
use crate::error::{Error, Result};
use crate::moe::{BlendedDecoder, ExpertBank};
use crate::nn::ParamStore;
use crate::sequence::Seq2Seq;
use crate::tensor::{Scalar, Tensor};
use crate::transition::Transition;

/// What the decoder receives next to the pose vector.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum DecoderInput {
    /// The static sample `s` (the mixture weights select the expert blend).
    #[default]
    Static,
    /// The mixture weights themselves, as a plain feature (single-decoder ablation).
    Mixture,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub kappa_z: usize,
    pub kappa_s: usize,
    pub kappa_d: usize,
    pub n_experts: usize,
    /// Output channels of each stride-2 encoder stage.
    pub encoder_channels: Vec<usize>,
    pub identity_features: usize,
    /// Channels after the projection stage and each doubling stage but the last.
    pub decoder_channels: Vec<usize>,
    pub rnn_hidden: usize,
    pub decoder_token: usize,
    pub transition_hidden: usize,
    pub leaky_slope: f64,
    pub decoder_input: DecoderInput,
    /// Average-blur before each strided encoder convolution.
    pub blur_pool: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            channels: 3,
            height: 32,
            width: 32,
            kappa_z: 8,
            kappa_s: 8,
            kappa_d: 8,
            n_experts: 8,
            encoder_channels: vec![16, 16, 32, 32],
            identity_features: 64,
            decoder_channels: vec![32, 32, 16],
            rnn_hidden: 64,
            decoder_token: 8,
            transition_hidden: 16,
            leaky_slope: 0.2,
            decoder_input: DecoderInput::Static,
            blur_pool: false,
        }
    }
}

impl ModelConfig {
    pub fn frame_len(&self) -> usize {
        self.channels * self.height * self.width
    }

    pub fn frame_shape(&self) -> [usize; 3] {
        [self.channels, self.height, self.width]
    }

    /// Spatial size after the encoder trunk.
    pub fn trunk_spatial(&self) -> (usize, usize) {
        let f = 1 << self.encoder_channels.len();
        (self.height / f, self.width / f)
    }

    pub fn trunk_features(&self) -> usize {
        let (h, w) = self.trunk_spatial();
        self.encoder_channels.last().copied().unwrap_or(self.channels) * h * w
    }

    /// Width of the decoder input vector.
    pub fn decoder_in(&self) -> usize {
        self.kappa_s + self.kappa_z
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("channels", self.channels),
            ("height", self.height),
            ("width", self.width),
            ("kappa_z", self.kappa_z),
            ("kappa_s", self.kappa_s),
            ("kappa_d", self.kappa_d),
            ("n_experts", self.n_experts),
            ("identity_features", self.identity_features),
            ("rnn_hidden", self.rnn_hidden),
            ("decoder_token", self.decoder_token),
            ("transition_hidden", self.transition_hidden),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(Error::Config(format!("{name} must be positive")));
            }
        }
        let down = 1usize << self.encoder_channels.len();
        if self.height % down != 0 || self.width % down != 0 {
            return Err(Error::Config(format!(
                "frame {}x{} is not divisible by 2^{} encoder stages",
                self.height,
                self.width,
                self.encoder_channels.len()
            )));
        }
        let up = 1usize << self.decoder_channels.len();
        if self.height % up != 0 || self.width % up != 0 || self.height != self.width {
            return Err(Error::Config(format!(
                "decoder needs a square frame divisible by 2^{}",
                self.decoder_channels.len()
            )));
        }
        match self.decoder_input {
            DecoderInput::Static if self.n_experts != self.kappa_s => {
                Err(Error::Config(format!("n_experts ({}) must equal kappa_s ({})", self.n_experts, self.kappa_s)))
            }
            DecoderInput::Mixture if self.n_experts != 1 => {
                Err(Error::Config("mixture-as-input decoding uses a single expert".into()))
            }
            _ => Ok(()),
        }
    }
}

/// Handles to every parameter of the model, grouped by component.
#[derive(Clone, Debug, PartialEq)]
pub struct Vdsm {
    pub config: ModelConfig,
    pub encoder: Encoder,
    pub decoder: ExpertBank,
    pub seq: Seq2Seq,
    pub transition: Transition,
}

impl Vdsm {
    /// Builds the model and a freshly initialized parameter store.
    pub fn new<F: Scalar>(config: ModelConfig, rng: &mut impl Rng) -> Result<(Self, ParamStore<F>)> {
        config.validate()?;
        let mut store = ParamStore::new();
        let encoder = Encoder::new(&config, &mut store, rng);
        let decoder = ExpertBank::new(&config, &mut store, rng);
        let seq = Seq2Seq::new(&config, &mut store, rng);
        let transition = Transition::new(&config, &mut store, rng);
        Ok((Self { config, encoder, decoder, seq, transition }, store))
    }

    /// Mixture weights `softmax(tau · s)`.
    pub fn mixture<F: Scalar>(&self, s: &[F], tau: f64) -> Result<SimplexVector<F>> {
        if s.len() != self.config.kappa_s {
            return Err(Error::DimensionMismatch { context: "static vector", expected: self.config.kappa_s, actual: s.len() });
        }
        temperature_softmax(s, F::lit(tau))
    }

    /// Effective decoder for a static vector, plus the code prepended to every pose.
    pub fn decoder_for<F: Scalar>(&self, store: &ParamStore<F>, s: &[F], tau: f64) -> Result<(BlendedDecoder<F>, Vec<F>)> {
        let mix = self.mixture(s, tau)?;
        match self.config.decoder_input {
            DecoderInput::Static => Ok((self.decoder.blend(store, &mix)?, s.to_vec())),
            DecoderInput::Mixture => Ok((self.decoder.expert(store, 0)?, mix.weights().to_vec())),
        }
    }

    /// Decodes a pose trajectory under one static vector into `[t, c, h, w]`.
    pub fn decode_sequence<F: Scalar>(&self, store: &ParamStore<F>, s: &[F], tau: f64, poses: &[Vec<F>]) -> Result<Tensor<F>> {
        let (dec, code) = self.decoder_for(store, s, tau)?;
        let width = code.len() + self.config.kappa_z;
        let mut rows = Vec::with_capacity(poses.len() * width);
        for z in poses {
            if z.len() != self.config.kappa_z {
                return Err(Error::DimensionMismatch { context: "pose vector", expected: self.config.kappa_z, actual: z.len() });
            }
            rows.extend_from_slice(&code);
            rows.extend_from_slice(z);
        }
        dec.forward_rows(&Tensor::new(vec![poses.len(), width], rows))
    }
}
