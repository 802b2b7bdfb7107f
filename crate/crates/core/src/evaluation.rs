//! Linear probes, swap consistency and prediction entropies.

use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::datasets::Dataset;
use crate::error::{Error, Result};
use crate::trainer::{embed, generate, infer, swap, Factor, GenerateInit, ModelState};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Embedding {
    S,
    D,
}

impl Embedding {
    pub fn name(self) -> &'static str {
        match self {
            Embedding::S => "s",
            Embedding::D => "d",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Target {
    Identity,
    Action,
}

impl Target {
    pub fn name(self) -> &'static str {
        match self {
            Target::Identity => "identity",
            Target::Action => "action",
        }
    }
}

/// Multinomial logistic regression on standardized features.
#[derive(Clone, Debug, PartialEq)]
pub struct LinearProbe {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
    /// `n_classes × dim`, row-major.
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
    pub n_classes: usize,
}

const PROBE_STEPS: usize = 500;
const PROBE_LR: f64 = 0.5;
const PROBE_L2: f64 = 1e-4;

impl LinearProbe {
    /// Full-batch gradient descent on the mean cross-entropy plus a small L2 penalty.
    pub fn fit(x: &[Vec<f64>], y: &[usize], n_classes: usize) -> Result<Self> {
        let n = x.len();
        if n == 0 || n != y.len() {
            return Err(Error::InvalidArgument("probe needs as many labels as points".into()));
        }
        let dim = x[0].len();
        if x.iter().any(|r| r.len() != dim) || y.iter().any(|&l| l >= n_classes) {
            return Err(Error::InvalidArgument("ragged features or label out of range".into()));
        }
        let mean: Vec<f64> = (0..dim).map(|j| x.iter().map(|r| r[j]).sum::<f64>() / n as f64).collect();
        let std: Vec<f64> = (0..dim)
            .map(|j| {
                let v = x.iter().map(|r| (r[j] - mean[j]).powi(2)).sum::<f64>() / n as f64;
                if v > 1e-12 {
                    v.sqrt()
                } else {
                    1.0
                }
            })
            .collect();
        let mut probe = Self { mean, std, weights: vec![0.0; n_classes * dim], bias: vec![0.0; n_classes], n_classes };
        let xs: Vec<Vec<f64>> = x.iter().map(|r| probe.standardize(r)).collect();
        for _ in 0..PROBE_STEPS {
            let mut gw = vec![0.0; n_classes * dim];
            let mut gb = vec![0.0; n_classes];
            for (r, &label) in xs.iter().zip(y) {
                let p = probe.softmax_standardized(r);
                for k in 0..n_classes {
                    let e = p[k] - if k == label { 1.0 } else { 0.0 };
                    gb[k] += e;
                    for j in 0..dim {
                        gw[k * dim + j] += e * r[j];
                    }
                }
            }
            for (w, g) in probe.weights.iter_mut().zip(&gw) {
                *w -= PROBE_LR * (g / n as f64 + PROBE_L2 * *w);
            }
            for (b, g) in probe.bias.iter_mut().zip(&gb) {
                *b -= PROBE_LR * g / n as f64;
            }
        }
        Ok(probe)
    }

    fn standardize(&self, r: &[f64]) -> Vec<f64> {
        r.iter().zip(&self.mean).zip(&self.std).map(|((v, m), s)| (v - m) / s).collect()
    }

    fn softmax_standardized(&self, r: &[f64]) -> Vec<f64> {
        let dim = r.len();
        let logits: Vec<f64> = (0..self.n_classes)
            .map(|k| self.bias[k] + self.weights[k * dim..(k + 1) * dim].iter().zip(r).map(|(w, v)| w * v).sum::<f64>())
            .collect();
        let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let e: Vec<f64> = logits.iter().map(|l| (l - m).exp()).collect();
        let z: f64 = e.iter().sum();
        e.into_iter().map(|v| v / z).collect()
    }

    pub fn probabilities(&self, x: &[f64]) -> Vec<f64> {
        self.softmax_standardized(&self.standardize(x))
    }

    pub fn predict(&self, x: &[f64]) -> usize {
        crate::distributions::argmax(&self.probabilities(x))
    }

    pub fn accuracy(&self, x: &[Vec<f64>], y: &[usize]) -> f64 {
        let hits = x.iter().zip(y).filter(|(r, &l)| self.predict(r) == l).count();
        hits as f64 / x.len().max(1) as f64
    }
}

/// Held-out and training accuracy of one probe.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProbeScore {
    pub accuracy: f64,
    pub train_accuracy: f64,
    pub n_test: usize,
    pub n_classes: usize,
}

impl ProbeScore {
    pub fn chance(&self) -> f64 {
        1.0 / self.n_classes as f64
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProbeResult {
    pub embedding: Embedding,
    pub factor: Target,
    pub score: ProbeScore,
}

pub const MIN_PER_CLASS: usize = 10;

/// Fits a probe on a per-class 80/20 split and scores it on the held-out 20%.
pub fn fit_linear_probe(x: &[Vec<f64>], y: &[usize], split_seed: u64) -> Result<(LinearProbe, ProbeScore)> {
    if x.len() != y.len() {
        return Err(Error::InvalidArgument("probe needs as many labels as points".into()));
    }
    let n_classes = y.iter().max().map_or(0, |m| m + 1);
    let mut by_class = vec![Vec::new(); n_classes];
    for (i, &l) in y.iter().enumerate() {
        by_class[l].push(i);
    }
    if n_classes < 2 || by_class.iter().any(|c| c.len() < MIN_PER_CLASS) {
        return Err(Error::InvalidArgument(format!(
            "degenerate label set: need at least 2 classes with {MIN_PER_CLASS} samples each"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(split_seed);
    let (mut train, mut test) = (Vec::new(), Vec::new());
    for mut members in by_class {
        members.shuffle(&mut rng);
        let n_test = (members.len() as f64 * 0.2).round().max(1.0) as usize;
        test.extend_from_slice(&members[..n_test]);
        train.extend_from_slice(&members[n_test..]);
    }
    let pick = |idx: &[usize]| -> (Vec<Vec<f64>>, Vec<usize>) { (idx.iter().map(|&i| x[i].clone()).collect(), idx.iter().map(|&i| y[i]).collect()) };
    let (xtr, ytr) = pick(&train);
    let (xte, yte) = pick(&test);
    let probe = LinearProbe::fit(&xtr, &ytr, n_classes)?;
    let score = ProbeScore {
        accuracy: probe.accuracy(&xte, &yte),
        train_accuracy: probe.accuracy(&xtr, &ytr),
        n_test: test.len(),
        n_classes,
    };
    Ok((probe, score))
}

/// Fraction of pairs where the probe agrees on the real and generated embeddings.
pub fn consistency_score(real: &[Vec<f64>], generated: &[Vec<f64>], probe: &LinearProbe) -> Result<f64> {
    if real.len() != generated.len() || real.is_empty() {
        return Err(Error::InvalidArgument("consistency needs equally many, non-zero, paired embeddings".into()));
    }
    let same = real.iter().zip(generated).filter(|(a, b)| probe.predict(a) == probe.predict(b)).count();
    Ok(same as f64 / real.len() as f64)
}

/// `(H(y), mean H(y|x))` in nats over rows of class probabilities.
pub fn entropies(rows: &[Vec<f64>]) -> Result<(f64, f64)> {
    let k = rows.first().ok_or(Error::Empty("probability rows"))?.len();
    for r in rows {
        let total: f64 = r.iter().sum();
        if r.len() != k || r.iter().any(|&p| !(0.0..=1.0).contains(&p)) || (total - 1.0).abs() > 1e-6 {
            return Err(Error::InvalidArgument("rows must be probability vectors of one length".into()));
        }
    }
    let h = |p: &[f64]| -p.iter().filter(|&&v| v > 0.0).map(|&v| v * v.ln()).sum::<f64>();
    let n = rows.len() as f64;
    let marginal: Vec<f64> = (0..k).map(|j| rows.iter().map(|r| r[j]).sum::<f64>() / n).collect();
    let intra = rows.iter().map(|r| h(r)).sum::<f64>() / n;
    Ok((h(&marginal), intra))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalConfig {
    pub split_seed: u64,
    /// Swap pairs per factor.
    pub n_swaps: usize,
    /// Unconditional samples scored for the entropy rows.
    pub n_samples: usize,
    pub seed: u64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self { split_seed: 0, n_swaps: 100, n_samples: 100, seed: 0 }
    }
}

/// Share of swaps whose re-encoded output the probe assigns to the donor's label.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SwapScore {
    pub factor: Factor,
    pub accuracy: f64,
    pub n: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub probes: Vec<ProbeResult>,
    pub swaps: Vec<SwapScore>,
    pub inter_entropy: f64,
    pub intra_entropy: f64,
    pub n_samples: usize,
}

impl EvalReport {
    pub fn probe(&self, embedding: Embedding, factor: Target) -> Option<ProbeScore> {
        self.probes.iter().find(|p| p.embedding == embedding && p.factor == factor).map(|p| p.score)
    }

    pub fn swap(&self, factor: Factor) -> Option<f64> {
        self.swaps.iter().find(|s| s.factor == factor).map(|s| s.accuracy)
    }

    /// Rows `(metric, embedding, factor, value, n)`.
    pub fn rows(&self) -> Vec<(String, String, String, f64, usize)> {
        let mut out: Vec<_> = self
            .probes
            .iter()
            .map(|p| ("probe".into(), p.embedding.name().into(), p.factor.name().into(), p.score.accuracy, p.score.n_test))
            .collect();
        for s in &self.swaps {
            let (emb, fac) = match s.factor {
                Factor::Identity => ("s", "identity"),
                Factor::Dynamics => ("d", "action"),
            };
            out.push(("swap_consistency".into(), emb.into(), fac.into(), s.accuracy, s.n));
        }
        out.push(("inter_entropy".into(), "s".into(), "identity".into(), self.inter_entropy, self.n_samples));
        out.push(("intra_entropy".into(), "s".into(), "identity".into(), self.intra_entropy, self.n_samples));
        out
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let csv_err = |e: csv::Error| Error::Format { path: path.into(), reason: e.to_string() };
        let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
        w.write_record(["metric", "embedding", "factor", "value", "n"]).map_err(csv_err)?;
        for (m, e, f, v, n) in self.rows() {
            w.write_record([m, e, f, format!("{v:.6}"), n.to_string()]).map_err(csv_err)?;
        }
        w.flush()?;
        Ok(())
    }
}

fn widen(v: &[f32]) -> Vec<f64> {
    v.iter().map(|&x| x as f64).collect()
}

/// Probe matrix, swap accuracy against donor labels and sample entropies on `dataset`.
pub fn evaluate(state: &ModelState, dataset: &Dataset, cfg: &EvalConfig) -> Result<EvalReport> {
    let (s_emb, d_emb) = embed(state, &dataset.sequences)?;
    let s: Vec<Vec<f64>> = s_emb.iter().map(|v| widen(v)).collect();
    let d: Vec<Vec<f64>> = d_emb.iter().map(|v| widen(v)).collect();
    let ids = dataset.identity_labels();
    let acts = dataset.action_labels();
    let mut probes = Vec::new();
    let mut s_id = None;
    let mut d_act = None;
    for (embedding, x) in [(Embedding::S, &s), (Embedding::D, &d)] {
        for (factor, y) in [(Target::Identity, &ids), (Target::Action, &acts)] {
            let (probe, score) = fit_linear_probe(x, y, cfg.split_seed)?;
            match (embedding, factor) {
                (Embedding::S, Target::Identity) => s_id = Some(probe),
                (Embedding::D, Target::Action) => d_act = Some(probe),
                _ => {}
            }
            probes.push(ProbeResult { embedding, factor, score });
        }
    }
    let (s_id, d_act) = (s_id.expect("probe fitted"), d_act.expect("probe fitted"));

    let t = state.config.seq_len.min(dataset.sequence_shape()?[0]);
    let frames: Vec<usize> = (0..t).collect();
    let clip = |i: usize| dataset.sequences[i].select(&frames);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut swaps = Vec::new();
    for factor in [Factor::Identity, Factor::Dynamics] {
        let labels = if factor == Factor::Identity { &ids } else { &acts };
        let mut hits = 0;
        let mut n = 0;
        for k in 0..cfg.n_swaps {
            let a = rng.random_range(0..dataset.len());
            let donors: Vec<usize> = (0..dataset.len()).filter(|&b| labels[b] != labels[a]).collect();
            let Some(&b) = donors.get(rng.random_range(0..donors.len().max(1))) else { continue };
            let out = swap(state, &clip(a), &clip(b), factor, cfg.seed.wrapping_add(k as u64))?;
            let lat = infer(state, &out)?;
            let predicted = match factor {
                Factor::Identity => s_id.predict(&widen(&lat.s.loc)),
                Factor::Dynamics => d_act.predict(&widen(&lat.d.loc)),
            };
            hits += usize::from(predicted == labels[b]);
            n += 1;
        }
        swaps.push(SwapScore { factor, accuracy: hits as f64 / n.max(1) as f64, n });
    }

    let mut rows = Vec::with_capacity(cfg.n_samples);
    for k in 0..cfg.n_samples {
        let x = generate(state, t, &GenerateInit::default(), cfg.seed.wrapping_add(1 << 32).wrapping_add(k as u64))?;
        rows.push(s_id.probabilities(&widen(&infer(state, &x)?.s.loc)));
    }
    let (inter_entropy, intra_entropy) = if rows.is_empty() { (0.0, 0.0) } else { entropies(&rows)? };
    Ok(EvalReport { probes, swaps, inter_entropy, intra_entropy, n_samples: rows.len() })
}
