//! Closed-form probabilistic primitives shared by every model component:
//! reparameterized Gaussian sampling, analytic diagonal-Gaussian KL, the
//! Bernoulli pixel likelihood, temperature softmax and softplus.
//!
//! Everything here is a pure function. The per-element kernels (`kl_term`,
//! `bernoulli_term`, ...) are also used by the autograd tape, together with
//! their hand-derived partial derivatives.

use crate::error::{Error, Result};
use crate::tensor::Scalar;

/// Added to every softplus-produced scale so posteriors never collapse to zero variance.
pub const SCALE_FLOOR: f64 = 1e-5;

/// Pixel probabilities are clamped to `[PIXEL_EPS, 1 - PIXEL_EPS]` before taking logs.
pub const PIXEL_EPS: f64 = 1e-6;

/// Diagonal Gaussian `N(loc, diag(scale²))`.
#[derive(Clone, Debug, PartialEq)]
pub struct DiagGaussian<F = f64> {
    pub loc: Vec<F>,
    pub scale: Vec<F>,
}

impl<F: Scalar> DiagGaussian<F> {
    /// Validates equal lengths, finite entries and non-negative scales.
    pub fn new(loc: Vec<F>, scale: Vec<F>) -> Result<Self> {
        if loc.len() != scale.len() {
            return Err(Error::DimensionMismatch { context: "DiagGaussian", expected: loc.len(), actual: scale.len() });
        }
        for (i, (&l, &s)) in loc.iter().zip(&scale).enumerate() {
            if !l.is_finite() {
                return Err(Error::InvalidArgument(format!("loc component {i} is not finite")));
            }
            if !s.is_finite() || s < F::zero() {
                return Err(Error::InvalidScale { index: i, value: s.as_f64() });
            }
        }
        Ok(Self { loc, scale })
    }

    /// Isotropic `N(loc, scale²)` in `dim` dimensions.
    pub fn isotropic(dim: usize, loc: f64, scale: f64) -> Self {
        Self { loc: vec![F::lit(loc); dim], scale: vec![F::lit(scale); dim] }
    }

    pub fn standard(dim: usize) -> Self {
        Self::isotropic(dim, 0.0, 1.0)
    }

    pub fn dim(&self) -> usize {
        self.loc.len()
    }
}

/// Point on the probability simplex.
#[derive(Clone, Debug, PartialEq)]
pub struct SimplexVector<F = f64> {
    weights: Vec<F>,
}

impl<F: Scalar> SimplexVector<F> {
    pub fn new(weights: Vec<F>) -> Result<Self> {
        if weights.is_empty() {
            return Err(Error::Empty("simplex vector"));
        }
        if weights.iter().any(|&w| !(w >= F::zero())) {
            return Err(Error::InvalidArgument("simplex weights must be non-negative".into()));
        }
        let total: f64 = weights.iter().map(|w| w.as_f64()).sum();
        if (total - 1.0).abs() > 1e-6 {
            return Err(Error::InvalidArgument(format!("simplex weights sum to {total}, not 1")));
        }
        Ok(Self { weights })
    }

    pub fn one_hot(n: usize, k: usize) -> Self {
        let mut weights = vec![F::zero(); n];
        weights[k] = F::one();
        Self { weights }
    }

    pub fn uniform(n: usize) -> Self {
        Self { weights: vec![F::one() / F::lit(n as f64); n] }
    }

    pub fn weights(&self) -> &[F] {
        &self.weights
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn argmax(&self) -> usize {
        argmax(&self.weights)
    }
}

pub fn argmax<F: PartialOrd + Copy>(xs: &[F]) -> usize {
    let mut best = 0;
    for (i, &x) in xs.iter().enumerate() {
        if x > xs[best] {
            best = i;
        }
    }
    best
}

/// `loc + scale ⊙ noise`.
pub fn sample_reparameterized<F: Scalar>(g: &DiagGaussian<F>, noise: &[F]) -> Result<Vec<F>> {
    if noise.len() != g.dim() {
        return Err(Error::DimensionMismatch { context: "sample_reparameterized", expected: g.dim(), actual: noise.len() });
    }
    Ok(g.loc.iter().zip(&g.scale).zip(noise).map(|((&l, &s), &e)| l + s * e).collect())
}

/// One coordinate of `KL(N(ql, qs²) ‖ N(pl, ps²))`.
pub fn kl_term<F: Scalar>(ql: F, qs: F, pl: F, ps: F) -> F {
    let diff = ql - pl;
    (ps / qs).ln() + (qs * qs + diff * diff) / (F::lit(2.0) * ps * ps) - F::lit(0.5)
}

/// Partial derivatives of [`kl_term`] in the order `(ql, qs, pl, ps)`.
pub fn kl_term_grad<F: Scalar>(ql: F, qs: F, pl: F, ps: F) -> [F; 4] {
    let diff = ql - pl;
    let ps2 = ps * ps;
    let d_ql = diff / ps2;
    let d_qs = -F::one() / qs + qs / ps2;
    let d_ps = F::one() / ps - (qs * qs + diff * diff) / (ps2 * ps);
    [d_ql, d_qs, -d_ql, d_ps]
}

/// Analytic `KL(q ‖ p)` for diagonal Gaussians.
pub fn kl_diag_gaussians<F: Scalar>(q: &DiagGaussian<F>, p: &DiagGaussian<F>) -> Result<F> {
    if q.dim() != p.dim() {
        return Err(Error::DimensionMismatch { context: "kl_diag_gaussians", expected: q.dim(), actual: p.dim() });
    }
    for (i, &s) in q.scale.iter().chain(&p.scale).enumerate() {
        if !(s > F::zero()) {
            return Err(Error::InvalidScale { index: i % q.dim().max(1), value: s.as_f64() });
        }
    }
    Ok((0..q.dim()).map(|i| kl_term(q.loc[i], q.scale[i], p.loc[i], p.scale[i])).sum())
}

fn clamp_prob<F: Scalar>(p: F) -> F {
    let eps = F::lit(PIXEL_EPS);
    p.max(eps).min(F::one() - eps)
}

/// `x log p + (1 - x) log(1 - p)` with `p` clamped away from 0 and 1.
pub fn bernoulli_term<F: Scalar>(x: F, p: F) -> F {
    let p = clamp_prob(p);
    x * p.ln() + (F::one() - x) * (F::one() - p).ln()
}

/// Derivative of [`bernoulli_term`] in `p` (zero where the clamp is active).
pub fn bernoulli_term_dp<F: Scalar>(x: F, p: F) -> F {
    let eps = F::lit(PIXEL_EPS);
    if p <= eps || p >= F::one() - eps {
        return F::zero();
    }
    x / p - (F::one() - x) / (F::one() - p)
}

/// Derivative of [`bernoulli_term`] in `x`.
pub fn bernoulli_term_dx<F: Scalar>(p: F) -> F {
    let p = clamp_prob(p);
    p.ln() - (F::one() - p).ln()
}

/// Summed Bernoulli log-likelihood of (possibly continuous) targets `x`.
pub fn bernoulli_log_likelihood<F: Scalar>(x: &[F], p: &[F]) -> Result<F> {
    if x.len() != p.len() {
        return Err(Error::DimensionMismatch { context: "bernoulli_log_likelihood", expected: x.len(), actual: p.len() });
    }
    Ok(x.iter().zip(p).map(|(&x, &p)| bernoulli_term(x, p)).sum())
}

/// Numerically stable `log(1 + exp(x))`.
pub fn softplus<F: Scalar>(x: F) -> F {
    if x > F::zero() {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

pub fn sigmoid<F: Scalar>(x: F) -> F {
    if x >= F::zero() {
        F::one() / (F::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (F::one() + e)
    }
}

/// Max-shifted softmax of one row, in place.
pub fn softmax_in_place<F: Scalar>(row: &mut [F]) {
    let max = row.iter().copied().fold(F::neg_infinity(), F::max);
    let mut total = F::zero();
    for v in row.iter_mut() {
        *v = (*v - max).exp();
        total += *v;
    }
    for v in row.iter_mut() {
        *v = *v / total;
    }
}

/// Mixture weights `softmax(s · tau)`: `tau` acts as a sharpness multiplier,
/// so raising it concentrates the mass on the largest component.
pub fn temperature_softmax<F: Scalar>(s: &[F], tau: F) -> Result<SimplexVector<F>> {
    if !(tau > F::zero()) || !tau.is_finite() {
        return Err(Error::InvalidTemperature(tau.as_f64()));
    }
    if s.is_empty() {
        return Err(Error::Empty("mixture logits"));
    }
    let mut w: Vec<F> = s.iter().map(|&v| v * tau).collect();
    softmax_in_place(&mut w);
    Ok(SimplexVector { weights: w })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    fn g(loc: &[f64], scale: &[f64]) -> DiagGaussian {
        DiagGaussian::new(loc.to_vec(), scale.to_vec()).unwrap()
    }

    #[test]
    fn reparameterized_sampling_examples() {
        assert_eq!(sample_reparameterized(&g(&[0.0], &[1.0]), &[0.5]).unwrap(), vec![0.5]);
        assert_eq!(sample_reparameterized(&g(&[2.0, 3.0], &[0.0, 0.0]), &[7.0, -7.0]).unwrap(), vec![2.0, 3.0]);
        let z = sample_reparameterized(&g(&[1.0, 2.0], &[0.1, 0.2]), &[1.0, -1.0]).unwrap();
        assert!((z[0] - 1.1).abs() < 1e-12 && (z[1] - 1.8).abs() < 1e-12);
        assert!(sample_reparameterized(&g(&[1.0, 2.0], &[0.1, 0.2]), &[1.0]).is_err());
    }

    #[test]
    fn kl_examples() {
        let std = DiagGaussian::<f64>::standard(1);
        assert_eq!(kl_diag_gaussians(&std, &std).unwrap(), 0.0);
        assert!((kl_diag_gaussians(&g(&[1.0], &[1.0]), &std).unwrap() - 0.5).abs() < 1e-12);
        assert!(kl_diag_gaussians(&g(&[0.0, 1.0], &[1.0, 1.0]), &std).is_err());
        assert!(kl_diag_gaussians(&g(&[0.0], &[0.0]), &std).is_err());
    }

    #[test]
    fn kl_wide_against_unit_matches_monte_carlo() {
        // E_q[log q(x) - log p(x)] with x ~ N(0, 2²), p = N(0, 1).
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let n = 1_000_000;
        let mut acc = 0.0;
        for _ in 0..n {
            let e: f64 = StandardNormal.sample(&mut rng);
            let x = 2.0 * e;
            let log_q = -0.5 * (x / 2.0).powi(2) - 2.0f64.ln();
            let log_p = -0.5 * x * x;
            acc += log_q - log_p;
        }
        let mc = acc / n as f64;
        let kl = kl_diag_gaussians(&g(&[0.0], &[2.0]), &DiagGaussian::standard(1)).unwrap();
        assert!((mc - kl).abs() < 1e-2, "mc {mc} vs closed form {kl}");
        assert!((kl - 0.8069).abs() < 1e-4);
    }

    #[test]
    fn bernoulli_examples() {
        let near = bernoulli_log_likelihood(&[1.0], &[0.999999]).unwrap();
        assert!(near <= 0.0 && near > -2e-6);
        let half = bernoulli_log_likelihood(&[0.5], &[0.5]).unwrap();
        assert!((half - 0.5f64.ln()).abs() < 1e-12);
        let x = [0.0, 1.0, 0.25, 0.9];
        let p = [0.3, 0.8, 0.5, 0.05];
        let mut want = 0.0;
        for i in 0..4 {
            want += x[i] * f64::ln(p[i]) + (1.0 - x[i]) * f64::ln(1.0 - p[i]);
        }
        assert!((bernoulli_log_likelihood(&x, &p).unwrap() - want).abs() < 1e-12);
        assert!(bernoulli_log_likelihood(&x, &p[..3]).is_err());
    }

    #[test]
    fn softmax_examples() {
        let u = temperature_softmax(&[0.0f64, 0.0, 0.0], 3.7).unwrap();
        for &w in u.weights() {
            assert!((w - 1.0 / 3.0).abs() < 1e-15);
        }
        let e = std::f64::consts::E;
        let two = temperature_softmax(&[1.0, 0.0], 1.0).unwrap();
        assert!((two.weights()[0] - e / (e + 1.0)).abs() < 1e-12);
        assert!((two.weights()[0] - 0.7311).abs() < 1e-4);
        let sharp = temperature_softmax(&[1.0f64, 0.0], 50.0).unwrap();
        assert!((sharp.weights()[0] - 1.0).abs() < 1e-6 && sharp.weights()[1] < 1e-6);
        assert!(temperature_softmax(&[1.0], 0.0).is_err());
        assert!(temperature_softmax(&[1.0], -1.0).is_err());
    }

    #[test]
    fn softplus_examples() {
        assert!((softplus(0.0f64) - 2f64.ln()).abs() < 1e-15);
        assert!((softplus(100.0f64) - 100.0).abs() < 1e-12);
        // ln(1 + e^-20) = e^-20 - e^-40/2 + ...
        let e20 = (-20.0f64).exp();
        let want = e20 - e20 * e20 / 2.0;
        assert!((softplus(-20.0f64) - want).abs() < 1e-22);
        assert!((softplus(-20.0f64) - 2.061e-9).abs() < 1e-12);
        assert!(softplus(1000.0f64).is_finite());
    }

    fn central(f: impl Fn(f64) -> f64, x: f64) -> f64 {
        let h = 1e-6 * x.abs().max(1.0);
        (f(x + h) - f(x - h)) / (2.0 * h)
    }

    fn rel_err(a: f64, b: f64) -> f64 {
        (a - b).abs() / a.abs().max(b.abs()).max(1e-8)
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(256))]

        #[test]
        fn kl_self_is_zero(loc in -5.0f64..5.0, scale in 0.01f64..5.0) {
            let q = g(&[loc, -loc], &[scale, scale * 0.5]);
            prop_assert!(kl_diag_gaussians(&q, &q).unwrap().abs() <= 1e-10);
        }

        #[test]
        fn kl_nonnegative(ql in -5.0f64..5.0, qs in 0.01f64..5.0, pl in -5.0f64..5.0, ps in 0.01f64..5.0) {
            prop_assert!(kl_diag_gaussians(&g(&[ql], &[qs]), &g(&[pl], &[ps])).unwrap() >= -1e-12);
        }

        #[test]
        fn softmax_is_simplex_and_keeps_argmax(s in proptest::collection::vec(-10.0f64..10.0, 1..10), tau in 0.01f64..50.0) {
            let w = temperature_softmax(&s, tau).unwrap();
            let total: f64 = w.weights().iter().sum();
            prop_assert!((total - 1.0).abs() < 1e-6);
            prop_assert!(w.weights().iter().all(|&v| v >= 0.0));
            let top = s[argmax(&s)];
            prop_assert!(w.weights()[w.argmax()] == w.weights()[argmax(&s)] || s[w.argmax()] == top);
        }

        #[test]
        fn zero_noise_returns_loc(loc in proptest::collection::vec(-5.0f64..5.0, 1..6)) {
            let scale = vec![0.7; loc.len()];
            let q = g(&loc, &scale);
            prop_assert_eq!(sample_reparameterized(&q, &vec![0.0; loc.len()]).unwrap(), loc);
        }

        #[test]
        fn kl_gradients_match_central_differences(ql in -2.0f64..2.0, qs in 0.2f64..3.0, pl in -2.0f64..2.0, ps in 0.2f64..3.0) {
            let a = kl_term_grad(ql, qs, pl, ps);
            let n = [
                central(|v| kl_term(v, qs, pl, ps), ql),
                central(|v| kl_term(ql, v, pl, ps), qs),
                central(|v| kl_term(ql, qs, v, ps), pl),
                central(|v| kl_term(ql, qs, pl, v), ps),
            ];
            for i in 0..4 {
                prop_assert!(rel_err(a[i], n[i]) < 1e-4 || (a[i] - n[i]).abs() < 1e-7, "{i}: {} vs {}", a[i], n[i]);
            }
        }

        #[test]
        fn bernoulli_gradients_match_central_differences(x in 0.0f64..1.0, p in 0.01f64..0.99) {
            let dp = central(|v| bernoulli_term(x, v), p);
            let dx = central(|v| bernoulli_term(v, p), x);
            prop_assert!(rel_err(bernoulli_term_dp(x, p), dp) < 1e-4 || (bernoulli_term_dp(x, p) - dp).abs() < 1e-7);
            prop_assert!(rel_err(bernoulli_term_dx(p), dx) < 1e-4 || (bernoulli_term_dx(p) - dx).abs() < 1e-7);
        }
    }
}
