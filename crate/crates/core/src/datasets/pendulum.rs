use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{coverage, Dataset, LabeledSequence};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const PENDULUM_COLORS: [(&str, [f32; 3]); 7] = [
    ("red", [1.0, 0.15, 0.15]),
    ("green", [0.15, 1.0, 0.15]),
    ("blue", [0.2, 0.35, 1.0]),
    ("yellow", [1.0, 1.0, 0.1]),
    ("magenta", [1.0, 0.15, 1.0]),
    ("cyan", [0.1, 1.0, 1.0]),
    ("white", [1.0, 1.0, 1.0]),
];

#[derive(Clone, Debug, PartialEq)]
pub struct PendulumConfig {
    pub n_colors: usize,
    /// Swing period in frames for each speed class.
    pub periods: Vec<f64>,
    pub amplitude_deg: f64,
    pub size: usize,
    pub t: usize,
    pub count: usize,
    pub seed: u64,
}

impl Default for PendulumConfig {
    fn default() -> Self {
        Self { n_colors: 7, periods: vec![16.0, 8.0], amplitude_deg: 45.0, size: 32, t: 16, count: 200, seed: 0 }
    }
}

pub fn pendulum_angle(amplitude: f64, period: f64, phase: f64, t: f64) -> f64 {
    amplitude * (2.0 * PI * t / period + phase).sin()
}

fn segment_distance(p: (f64, f64), a: (f64, f64), b: (f64, f64)) -> f64 {
    let (dx, dy) = (b.0 - a.0, b.1 - a.1);
    let len2 = dx * dx + dy * dy;
    let u = if len2 == 0.0 { 0.0 } else { (((p.0 - a.0) * dx + (p.1 - a.1) * dy) / len2).clamp(0.0, 1.0) };
    let (cx, cy) = (a.0 + u * dx, a.1 + u * dy);
    ((p.0 - cx).powi(2) + (p.1 - cy).powi(2)).sqrt()
}

/// Pivot, bob centre and radii of the pendulum at angle `theta` (radians from vertical).
pub fn pendulum_geometry(theta: f64, size: usize) -> ((f64, f64), (f64, f64), f64, f64) {
    let s = size as f64;
    let pivot = (s / 2.0, 0.15 * s);
    let len = 0.55 * s;
    let bob = (pivot.0 + len * theta.sin(), pivot.1 + len * theta.cos());
    (pivot, bob, 0.02 * s, 0.11 * s)
}

/// Rasterizes one RGB frame `[3, size, size]` on a black field.
pub fn render_pendulum(theta: f64, color: [f32; 3], size: usize) -> Vec<f32> {
    let (pivot, bob, rod_r, bob_r) = pendulum_geometry(theta, size);
    let plane = size * size;
    let mut out = vec![0.0f32; 3 * plane];
    for y in 0..size {
        for x in 0..size {
            let p = (x as f64 + 0.5, y as f64 + 0.5);
            let rod = coverage(segment_distance(p, pivot, bob), rod_r);
            let disc = coverage(((p.0 - bob.0).powi(2) + (p.1 - bob.1).powi(2)).sqrt(), bob_r);
            let a = rod.max(disc) as f32;
            for (c, &v) in color.iter().enumerate() {
                out[c * plane + y * size + x] = a * v;
            }
        }
    }
    out
}

pub fn render_pendulum_sequence(cfg: &PendulumConfig, color: usize, speed: usize, phase: f64) -> Result<Tensor<f32>> {
    let rgb = PENDULUM_COLORS.get(color).ok_or_else(|| Error::InvalidArgument(format!("no color {color}")))?.1;
    let period = *cfg.periods.get(speed).ok_or_else(|| Error::InvalidArgument(format!("no speed {speed}")))?;
    let amp = cfg.amplitude_deg.to_radians();
    let mut data = Vec::with_capacity(cfg.t * 3 * cfg.size * cfg.size);
    for t in 0..cfg.t {
        data.extend(render_pendulum(pendulum_angle(amp, period, phase, t as f64), rgb, cfg.size));
    }
    Ok(Tensor::new(vec![cfg.t, 3, cfg.size, cfg.size], data))
}

/// Colors and speeds cycle over sequence indices so classes stay balanced; phases are random.
pub fn gen_pendulum(cfg: &PendulumConfig) -> Result<Dataset> {
    if cfg.n_colors < 2 || cfg.n_colors > PENDULUM_COLORS.len() {
        return Err(Error::InvalidArgument(format!("n_colors must be in 2..={}", PENDULUM_COLORS.len())));
    }
    if cfg.periods.is_empty() || cfg.periods.iter().any(|&p| !(p > 0.0)) {
        return Err(Error::InvalidArgument("periods must be positive".into()));
    }
    if cfg.t < 2 || cfg.count == 0 || cfg.size < 8 {
        return Err(Error::InvalidArgument("need t >= 2, count >= 1, size >= 8".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let sequences = (0..cfg.count)
        .map(|i| {
            let color = i % cfg.n_colors;
            let speed = (i / cfg.n_colors) % cfg.periods.len();
            let phase = rng.random_range(0.0..2.0 * PI);
            Ok(LabeledSequence {
                frames: render_pendulum_sequence(cfg, color, speed, phase)?,
                identity_label: color,
                action_label: speed,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let speed_names = cfg.periods.iter().map(|p| format!("period-{p}")).collect();
    Ok(Dataset {
        name: "pendulum".into(),
        sequences,
        identity_names: PENDULUM_COLORS[..cfg.n_colors].iter().map(|c| c.0.to_string()).collect(),
        action_names: speed_names,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn frames_match_direct_rasterization() {
        let cfg = PendulumConfig { count: 14, ..PendulumConfig::default() };
        let ds = gen_pendulum(&cfg).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        for (i, seq) in ds.sequences.iter().enumerate().take(3) {
            let phase = rng.random_range(0.0..2.0 * PI);
            let theta = pendulum_angle(45f64.to_radians(), cfg.periods[seq.action_label], phase, 5.0);
            let direct = render_pendulum(theta, PENDULUM_COLORS[i % 7].1, 32);
            assert_eq!(seq.frame(5), &direct[..]);
        }
        assert!(ds.sequences.iter().all(|s| s.frames.data().iter().all(|&v| (0.0..=1.0).contains(&v))));
        assert_eq!(ds.sequences[0].identity_label, 0);
        assert_eq!(ds.sequences[8].action_label, 1);
    }

    #[test]
    fn same_inputs_same_sequence() {
        let cfg = PendulumConfig::default();
        let a = render_pendulum_sequence(&cfg, 3, 1, 0.7).unwrap();
        let b = render_pendulum_sequence(&cfg, 3, 1, 0.7).unwrap();
        assert_eq!(a, b);
        let small = PendulumConfig { count: 5, ..cfg };
        assert_eq!(gen_pendulum(&small).unwrap(), gen_pendulum(&small).unwrap());
    }

    /// Period of the bob from the horizontal centroid, via mean spacing of same-direction midline crossings.
    fn measured_period(seq: &Tensor<f32>, size: usize) -> f64 {
        let t = seq.shape()[0];
        let plane = size * size;
        let xs: Vec<f64> = (0..t)
            .map(|k| {
                let f = &seq.data()[k * 3 * plane..(k + 1) * 3 * plane];
                let (mut m, mut mx) = (0.0, 0.0);
                for c in 0..3 {
                    for (j, &v) in f[c * plane..(c + 1) * plane].iter().enumerate() {
                        m += v as f64;
                        mx += v as f64 * ((j % size) as f64 + 0.5);
                    }
                }
                mx / m - size as f64 / 2.0
            })
            .collect();
        let mut ups = Vec::new();
        for k in 1..t {
            if xs[k - 1] < 0.0 && xs[k] >= 0.0 {
                ups.push(k as f64 - 1.0 + xs[k - 1] / (xs[k - 1] - xs[k]));
            }
        }
        (ups.last().unwrap() - ups[0]) / (ups.len() - 1) as f64
    }

    #[test]
    fn centroid_period_matches_angular_frequency() {
        let cfg = PendulumConfig { t: 80, ..PendulumConfig::default() };
        for (speed, &period) in cfg.periods.iter().enumerate() {
            let seq = render_pendulum_sequence(&cfg, 6, speed, 0.3).unwrap();
            let got = measured_period(&seq, cfg.size);
            assert!((got - period).abs() < 1.0, "period {period}: measured {got}");
        }
    }

    #[test]
    fn color_histogram_identifies_color() {
        let ds = gen_pendulum(&PendulumConfig { count: 28, ..PendulumConfig::default() }).unwrap();
        for seq in &ds.sequences {
            let f = seq.frame(0);
            let plane = 32 * 32;
            let sums: Vec<f64> = (0..3).map(|c| f[c * plane..(c + 1) * plane].iter().map(|&v| v as f64).sum()).collect();
            let total: f64 = sums.iter().sum();
            let hist: Vec<f64> = sums.iter().map(|s| s / total).collect();
            let nearest = (0..7)
                .min_by(|&a, &b| {
                    let dist = |k: usize| {
                        let c = PENDULUM_COLORS[k].1;
                        let t: f32 = c.iter().sum();
                        (0..3).map(|i| (hist[i] - (c[i] / t) as f64).powi(2)).sum::<f64>()
                    };
                    dist(a).partial_cmp(&dist(b)).unwrap()
                })
                .unwrap();
            assert_eq!(nearest, seq.identity_label);
        }
    }

    #[test]
    fn invalid_counts_are_rejected() {
        assert!(gen_pendulum(&PendulumConfig { n_colors: 1, ..PendulumConfig::default() }).is_err());
        assert!(gen_pendulum(&PendulumConfig { t: 1, ..PendulumConfig::default() }).is_err());
        assert!(gen_pendulum(&PendulumConfig { count: 0, ..PendulumConfig::default() }).is_err());
        assert!(gen_pendulum(&PendulumConfig { periods: vec![], ..PendulumConfig::default() }).is_err());
    }
}
