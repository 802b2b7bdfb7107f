use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{coverage, Dataset, LabeledSequence};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Square grayscale stamp.
#[derive(Clone, Debug, PartialEq)]
pub struct Glyph {
    pub name: String,
    pub size: usize,
    pub pixels: Vec<f32>,
}

impl Glyph {
    /// Average-pools a `rows × cols` image by `factor` into a square glyph, cropping any remainder.
    pub fn from_image(name: &str, pixels: &[f32], rows: usize, cols: usize, factor: usize) -> Result<Self> {
        if pixels.len() != rows * cols || factor == 0 {
            return Err(Error::InvalidArgument("image size mismatch".into()));
        }
        let size = rows.min(cols) / factor;
        let mut out = vec![0.0; size * size];
        for y in 0..size {
            for x in 0..size {
                let mut acc = 0.0;
                for dy in 0..factor {
                    for dx in 0..factor {
                        acc += pixels[(y * factor + dy) * cols + x * factor + dx];
                    }
                }
                out[y * size + x] = acc / (factor * factor) as f32;
            }
        }
        Ok(Self { name: name.into(), size, pixels: out })
    }

    pub fn mass(&self) -> f64 {
        self.pixels.iter().map(|&v| v as f64).sum()
    }
}

fn raster(name: &str, size: usize, f: impl Fn(f64, f64) -> f64) -> Glyph {
    let s = size as f64;
    let pixels = (0..size * size)
        .map(|i| {
            let (x, y) = ((i % size) as f64 + 0.5, (i / size) as f64 + 0.5);
            f(x / s * 2.0 - 1.0, y / s * 2.0 - 1.0) as f32
        })
        .collect();
    Glyph { name: name.into(), size, pixels }
}

/// Up to eight procedural glyphs drawn in a `size × size` box.
pub fn builtin_glyphs(size: usize) -> Vec<Glyph> {
    let px = 2.0 / size as f64;
    let edge = move |d: f64| coverage(d / px, 0.0);
    vec![
        raster("disc", size, |x, y| edge((x * x + y * y).sqrt() - 0.8)),
        raster("square", size, |x, y| edge(x.abs().max(y.abs()) - 0.7)),
        raster("ring", size, |x, y| edge(((x * x + y * y).sqrt() - 0.62).abs() - 0.22)),
        raster("cross", size, |x, y| edge(x.abs().min(y.abs()) - 0.25).min(edge(x.abs().max(y.abs()) - 0.9))),
        raster("diamond", size, |x, y| edge(x.abs() + y.abs() - 0.9)),
        raster("triangle", size, |x, y| edge((y - 0.75).max(-y * 0.5 + x.abs() - 0.45))),
        raster("bar", size, |x, y| edge(x.abs() - 0.3).min(edge(y.abs() - 0.9))),
        raster("frame", size, |x, y| {
            let d = x.abs().max(y.abs());
            edge(d - 0.85).min(1.0 - edge(d - 0.55))
        }),
    ]
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Motion {
    Horizontal,
    Vertical,
    Diagonal,
    Circular,
}

impl Motion {
    pub const ALL: [Motion; 4] = [Motion::Horizontal, Motion::Vertical, Motion::Diagonal, Motion::Circular];

    pub fn name(self) -> &'static str {
        match self {
            Motion::Horizontal => "horizontal",
            Motion::Vertical => "vertical",
            Motion::Diagonal => "diagonal",
            Motion::Circular => "circular",
        }
    }
}

/// Triangle wave folding `p` into `[0, range]`.
fn reflect(p: f64, range: f64) -> f64 {
    if range <= 0.0 {
        return 0.0;
    }
    let m = p.rem_euclid(2.0 * range);
    if m > range {
        2.0 * range - m
    } else {
        m
    }
}

/// Top-left glyph corner at time `t`; always inside `[0, range]²`.
pub fn shape_position(motion: Motion, start: (f64, f64), speed: f64, t: f64, range: f64) -> (f64, f64) {
    match motion {
        Motion::Horizontal => (reflect(start.0 + speed * t, range), reflect(start.1, range)),
        Motion::Vertical => (reflect(start.0, range), reflect(start.1 + speed * t, range)),
        Motion::Diagonal => {
            let v = speed / 2f64.sqrt();
            (reflect(start.0 + v * t, range), reflect(start.1 + v * t, range))
        }
        Motion::Circular => {
            let r = 0.4 * range;
            let c = range / 2.0;
            let phase = start.0 / range.max(1.0) * 2.0 * PI;
            let w = speed / r.max(1.0);
            (reflect(c + r * (w * t + phase).cos(), range), reflect(c + r * (w * t + phase).sin(), range))
        }
    }
}

/// Pastes `glyph` with its corner at integer `(x, y)` into a single-channel frame.
pub fn render_glyph(glyph: &Glyph, x: usize, y: usize, size: usize) -> Vec<f32> {
    let mut out = vec![0.0f32; size * size];
    for gy in 0..glyph.size {
        for gx in 0..glyph.size {
            let (fx, fy) = (x + gx, y + gy);
            if fx < size && fy < size {
                out[fy * size + fx] = glyph.pixels[gy * glyph.size + gx];
            }
        }
    }
    out
}

#[derive(Clone, Debug, PartialEq)]
pub struct ShapesConfig {
    pub n_shapes: usize,
    pub n_motions: usize,
    pub size: usize,
    pub glyph_size: usize,
    /// Pixels per frame.
    pub speed: f64,
    pub t: usize,
    pub count: usize,
    pub seed: u64,
    /// Replaces the procedural glyphs, e.g. digits read from an IDX file.
    pub glyphs: Option<Vec<Glyph>>,
}

impl Default for ShapesConfig {
    fn default() -> Self {
        Self { n_shapes: 6, n_motions: 4, size: 32, glyph_size: 10, speed: 2.0, t: 16, count: 200, seed: 0, glyphs: None }
    }
}

pub fn gen_moving_shapes(cfg: &ShapesConfig) -> Result<Dataset> {
    let glyphs = cfg.glyphs.clone().unwrap_or_else(|| builtin_glyphs(cfg.glyph_size));
    if cfg.n_shapes < 2 || cfg.n_shapes > glyphs.len() {
        return Err(Error::InvalidArgument(format!("n_shapes must be in 2..={}", glyphs.len())));
    }
    if cfg.n_motions < 2 || cfg.n_motions > Motion::ALL.len() {
        return Err(Error::InvalidArgument("n_motions must be in 2..=4".into()));
    }
    if cfg.t < 2 || cfg.count == 0 {
        return Err(Error::InvalidArgument("need t >= 2 and count >= 1".into()));
    }
    let gs = glyphs[0].size;
    if glyphs.iter().any(|g| g.size != gs) || gs >= cfg.size {
        return Err(Error::InvalidArgument("glyphs must share one size smaller than the frame".into()));
    }
    let range = (cfg.size - gs) as f64;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let sequences = (0..cfg.count)
        .map(|i| {
            let shape = i % cfg.n_shapes;
            let motion = (i / cfg.n_shapes) % cfg.n_motions;
            let start = (rng.random_range(0.0..range), rng.random_range(0.0..range));
            let mut data = Vec::with_capacity(cfg.t * cfg.size * cfg.size);
            for t in 0..cfg.t {
                let (x, y) = shape_position(Motion::ALL[motion], start, cfg.speed, t as f64, range);
                data.extend(render_glyph(&glyphs[shape], x.round() as usize, y.round() as usize, cfg.size));
            }
            LabeledSequence {
                frames: Tensor::new(vec![cfg.t, 1, cfg.size, cfg.size], data),
                identity_label: shape,
                action_label: motion,
            }
        })
        .collect();
    Ok(Dataset {
        name: "shapes".into(),
        sequences,
        identity_names: glyphs[..cfg.n_shapes].iter().map(|g| g.name.clone()).collect(),
        action_names: Motion::ALL[..cfg.n_motions].iter().map(|m| m.name().to_string()).collect(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn glyph_mass_is_conserved_inside_the_frame() {
        let ds = gen_moving_shapes(&ShapesConfig { count: 24, ..ShapesConfig::default() }).unwrap();
        let glyphs = builtin_glyphs(10);
        for seq in &ds.sequences {
            let mass = glyphs[seq.identity_label].mass();
            for t in 0..seq.len() {
                let got: f64 = seq.frame(t).iter().map(|&v| v as f64).sum();
                assert!((got - mass).abs() <= 0.02 * mass, "mass {got} vs {mass}");
            }
        }
    }

    #[test]
    fn trajectories_follow_the_closed_form() {
        // Horizontal bounce in a range of 10 at 3 px/frame from x = 4: 4, 7, 10, 7, 4, 1, 2, 5.
        let xs: Vec<f64> = (0..8).map(|t| shape_position(Motion::Horizontal, (4.0, 2.0), 3.0, t as f64, 10.0).0).collect();
        assert_eq!(xs, vec![4.0, 7.0, 10.0, 7.0, 4.0, 1.0, 2.0, 5.0]);
        let (x, y) = shape_position(Motion::Vertical, (4.0, 2.0), 3.0, 3.0, 10.0);
        assert_eq!((x, y), (4.0, 9.0));
        let cfg = ShapesConfig { count: 6, n_shapes: 2, ..ShapesConfig::default() };
        let ds = gen_moving_shapes(&cfg).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let glyphs = builtin_glyphs(cfg.glyph_size);
        for seq in &ds.sequences {
            let start = (rng.random_range(0.0..22.0), rng.random_range(0.0..22.0));
            for t in 0..cfg.t {
                let (x, y) = shape_position(Motion::ALL[seq.action_label], start, cfg.speed, t as f64, 22.0);
                let want = render_glyph(&glyphs[seq.identity_label], x.round() as usize, y.round() as usize, 32);
                assert_eq!(seq.frame(t), &want[..]);
            }
        }
    }

    proptest! {
        #[test]
        fn positions_stay_in_bounds(m in 0usize..4, x0 in 0.0f64..22.0, y0 in 0.0f64..22.0, speed in 0.1f64..6.0, t in 0usize..200) {
            let (x, y) = shape_position(Motion::ALL[m], (x0, y0), speed, t as f64, 22.0);
            prop_assert!((0.0..=22.0).contains(&x) && (0.0..=22.0).contains(&y));
        }
    }

    #[test]
    fn image_glyphs_downsample() {
        let img: Vec<f32> = (0..16).map(|i| i as f32 / 15.0).collect();
        let g = Glyph::from_image("d", &img, 4, 4, 2).unwrap();
        assert_eq!(g.size, 2);
        assert!((g.pixels[0] - (0.0 + 1.0 + 4.0 + 5.0) / 60.0).abs() < 1e-6);
    }

    #[test]
    fn invalid_counts_are_rejected() {
        assert!(gen_moving_shapes(&ShapesConfig { n_shapes: 1, ..ShapesConfig::default() }).is_err());
        assert!(gen_moving_shapes(&ShapesConfig { n_motions: 5, ..ShapesConfig::default() }).is_err());
        assert!(gen_moving_shapes(&ShapesConfig { t: 1, ..ShapesConfig::default() }).is_err());
    }
}
