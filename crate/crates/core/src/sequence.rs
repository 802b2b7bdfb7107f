//! Bidirectional summarizer, dynamics head, decoding recurrence and pose combiner.

use rand::Rng;

use crate::autograd::Var;
use crate::distributions::DiagGaussian;
use crate::error::{Error, Result};
use crate::model::ModelConfig;
use crate::nn::{positive_scale, GaussianVar, Graph, Linear, LstmCell, ParamGroup, ParamId, ParamStore};
use crate::tensor::{Scalar, Tensor};

#[derive(Clone, Debug, PartialEq)]
pub struct Seq2Seq {
    pub forward: LstmCell,
    pub backward: LstmCell,
    pub d_loc: Linear,
    pub d_scale: Linear,
    pub decoder: LstmCell,
    /// Learned constant input of the decoding recurrence, `[1, decoder_token]`.
    pub token: ParamId,
    /// Projects `d` to the decoder's initial hidden and cell state.
    pub init: Linear,
    pub f7: Linear,
    pub f8: Linear,
    pub f9: Linear,
    kappa_z: usize,
    kappa_d: usize,
    hidden: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct DynamicsPosterior<F = f64> {
    pub d_dist: DiagGaussian<F>,
}

impl Seq2Seq {
    pub fn new<F: Scalar>(cfg: &ModelConfig, store: &mut ParamStore<F>, rng: &mut impl Rng) -> Self {
        let (kz, kd, h) = (cfg.kappa_z, cfg.kappa_d, cfg.rnn_hidden);
        let grp = ParamGroup::Sequence;
        let forward = LstmCell::new(store, "seq.encoder_fwd", kz, h, grp, rng);
        let backward = LstmCell::new(store, "seq.encoder_bwd", kz, h, grp, rng);
        let d_loc = Linear::new(store, "seq.d_loc", 2 * h, kd, grp, rng);
        let d_scale = Linear::new(store, "seq.d_scale", 2 * h, kd, grp, rng);
        let decoder = LstmCell::new(store, "seq.decoder", cfg.decoder_token, h, grp, rng);
        let token = store.add_uniform("seq.token", &[1, cfg.decoder_token], cfg.decoder_token, grp, rng);
        let init = Linear::new(store, "seq.init", kd, h, grp, rng);
        let f7 = Linear::new(store, "seq.f7", kz, h + kd, grp, rng);
        let f8 = Linear::new(store, "seq.f8", h + kd, kz, grp, rng);
        let f9 = Linear::new(store, "seq.f9", h + kd, kz, grp, rng);
        Self { forward, backward, d_loc, d_scale, decoder, token, init, f7, f8, f9, kappa_z: kz, kappa_d: kd, hidden: h }
    }

    pub fn hidden(&self) -> usize {
        self.hidden
    }

    /// Posterior over `d` from pose embeddings `poses: [t, kappa_z]`.
    pub fn summarize_vars<F: Scalar>(&self, g: &mut Graph<'_, F>, poses: Var) -> GaussianVar {
        let t = g.value(poses).rows();
        let zero = Tensor::zeros(&[1, self.hidden]);
        let rows: Vec<Var> = (0..t).map(|i| g.tape.slice_rows(poses, i, 1)).collect();
        let (mut hf, mut cf) = (g.constant(zero.clone()), g.constant(zero.clone()));
        for &x in &rows {
            (hf, cf) = self.forward.step(g, x, hf, cf);
        }
        let (mut hb, mut cb) = (g.constant(zero.clone()), g.constant(zero));
        for &x in rows.iter().rev() {
            (hb, cb) = self.backward.step(g, x, hb, cb);
        }
        let h = g.tape.concat_cols(&[hf, hb]);
        let loc = self.d_loc.forward(g, h);
        let pre = self.d_scale.forward(g, h);
        let scale = positive_scale(&mut g.tape, pre);
        GaussianVar { loc, scale }
    }

    /// Decoder hidden states `h̄_1..h̄_t`, each `[1, hidden]`.
    pub fn unroll_vars<F: Scalar>(&self, g: &mut Graph<'_, F>, d: Var, t: usize) -> Vec<Var> {
        let h0 = self.init.forward(g, d);
        let token = g.param(self.token);
        let (mut h, mut c) = (h0, h0);
        (0..t)
            .map(|_| {
                (h, c) = self.decoder.step(g, token, h, c);
                h
            })
            .collect()
    }

    /// Pose posterior from `c = ½(tanh(f7(z_prev)) + [h̄_t, d])`.
    pub fn combine_vars<F: Scalar>(&self, g: &mut Graph<'_, F>, z_prev: Var, hbar: Var, d: Var) -> GaussianVar {
        let a = self.f7.forward(g, z_prev);
        let a = g.tape.tanh(a);
        let hhat = g.tape.concat_cols(&[hbar, d]);
        let sum = g.tape.add(a, hhat);
        let c = g.tape.scale(sum, F::lit(0.5));
        let loc = self.f8.forward(g, c);
        let pre = self.f9.forward(g, c);
        let scale = positive_scale(&mut g.tape, pre);
        GaussianVar { loc, scale }
    }

    pub fn summarize_dynamics<F: Scalar>(&self, store: &ParamStore<F>, pose_embeds: &[Vec<F>]) -> Result<DynamicsPosterior<F>> {
        if pose_embeds.len() < 2 {
            return Err(Error::SequenceTooShort { context: "summarize_dynamics", min: 2, actual: pose_embeds.len() });
        }
        let mut data = Vec::with_capacity(pose_embeds.len() * self.kappa_z);
        for p in pose_embeds {
            check(p, self.kappa_z, "pose embedding")?;
            data.extend_from_slice(p);
        }
        let mut g = Graph::new(store, false);
        let poses = g.constant(Tensor::new(vec![pose_embeds.len(), self.kappa_z], data));
        let d = self.summarize_vars(&mut g, poses);
        Ok(DynamicsPosterior { d_dist: d.to_dist(&g.tape) })
    }

    pub fn unroll_decoder<F: Scalar>(&self, store: &ParamStore<F>, d: &[F], t: usize) -> Result<Vec<Vec<F>>> {
        if t < 1 {
            return Err(Error::SequenceTooShort { context: "unroll_decoder", min: 1, actual: t });
        }
        check(d, self.kappa_d, "dynamics vector")?;
        let mut g = Graph::new(store, false);
        let dv = g.constant(Tensor::row(d));
        let hs = self.unroll_vars(&mut g, dv, t);
        Ok(hs.iter().map(|&h| g.value(h).data().to_vec()).collect())
    }

    pub fn combine<F: Scalar>(&self, store: &ParamStore<F>, z_prev: &[F], hbar: &[F], d: &[F]) -> Result<DiagGaussian<F>> {
        check(z_prev, self.kappa_z, "previous pose")?;
        check(hbar, self.hidden, "decoder hidden state")?;
        check(d, self.kappa_d, "dynamics vector")?;
        let mut g = Graph::new(store, false);
        let z = g.constant(Tensor::row(z_prev));
        let h = g.constant(Tensor::row(hbar));
        let dv = g.constant(Tensor::row(d));
        let q = self.combine_vars(&mut g, z, h, dv);
        Ok(q.to_dist(&g.tape))
    }
}

fn check<F>(v: &[F], expected: usize, context: &'static str) -> Result<()> {
    if v.len() == expected {
        Ok(())
    } else {
        Err(Error::DimensionMismatch { context, expected, actual: v.len() })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::Vdsm;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn toy() -> ModelConfig {
        ModelConfig {
            channels: 1,
            height: 2,
            width: 2,
            kappa_z: 2,
            kappa_s: 1,
            kappa_d: 2,
            n_experts: 1,
            encoder_channels: vec![1],
            identity_features: 1,
            decoder_channels: vec![],
            rnn_hidden: 2,
            decoder_token: 1,
            transition_hidden: 2,
            ..ModelConfig::default()
        }
    }

    fn set(store: &mut ParamStore<f64>, id: ParamId, values: &[f64]) {
        let shape = store.get(id).shape().to_vec();
        *store.get_mut(id) = Tensor::new(shape, values.to_vec());
    }

    fn pattern(n: usize, seed: f64) -> Vec<f64> {
        (0..n).map(|i| ((i as f64 + 1.0) * seed).sin() * 0.8).collect()
    }

    fn sig(x: f64) -> f64 {
        1.0 / (1.0 + (-x).exp())
    }

    /// Plain-loop LSTM step with `w_ih: [in, 4h]`, `w_hh: [h, 4h]`, gate order i, f, g, o.
    fn lstm(x: &[f64], h: &[f64], c: &[f64], w_ih: &[f64], w_hh: &[f64], b: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let n = h.len();
        let mut pre = b.to_vec();
        for j in 0..4 * n {
            for (i, xi) in x.iter().enumerate() {
                pre[j] += xi * w_ih[i * 4 * n + j];
            }
            for (i, hi) in h.iter().enumerate() {
                pre[j] += hi * w_hh[i * 4 * n + j];
            }
        }
        let mut h2 = vec![0.0; n];
        let mut c2 = vec![0.0; n];
        for k in 0..n {
            let (ig, fg, gg, og) = (sig(pre[k]), sig(pre[n + k]), pre[2 * n + k].tanh(), sig(pre[3 * n + k]));
            c2[k] = fg * c[k] + ig * gg;
            h2[k] = og * c2[k].tanh();
        }
        (h2, c2)
    }

    fn dense(x: &[f64], w: &[f64], b: &[f64]) -> Vec<f64> {
        let o = b.len();
        (0..o).map(|j| b[j] + x.iter().enumerate().map(|(i, xi)| xi * w[i * o + j]).sum::<f64>()).collect()
    }

    fn softplus(x: f64) -> f64 {
        (1.0 + x.exp()).ln()
    }

    struct Fixture {
        m: Vdsm,
        store: ParamStore<f64>,
    }

    fn fixture() -> Fixture {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let (m, mut store) = Vdsm::new::<f64>(toy(), &mut rng).unwrap();
        let s = m.seq.clone();
        for (k, cell) in [s.forward, s.backward, s.decoder].iter().enumerate() {
            let n_ih = store.get(cell.w_ih).len();
            set(&mut store, cell.w_ih, &pattern(n_ih, 0.7 + k as f64));
            set(&mut store, cell.w_hh, &pattern(16, 1.3 + k as f64));
            set(&mut store, cell.b, &pattern(8, 2.1 + k as f64));
        }
        for (k, lin) in [s.d_loc, s.d_scale, s.init, s.f7, s.f8, s.f9].iter().enumerate() {
            let n = store.get(lin.w).len();
            set(&mut store, lin.w, &pattern(n, 0.37 * (k + 1) as f64));
            set(&mut store, lin.b, &pattern(lin.outputs, 0.91 * (k + 1) as f64));
        }
        set(&mut store, s.token, &[0.45]);
        Fixture { m, store }
    }

    fn p(store: &ParamStore<f64>, id: ParamId) -> Vec<f64> {
        store.get(id).data().to_vec()
    }

    #[test]
    fn summarize_matches_manual_bidirectional_recurrence() {
        let Fixture { m, store } = fixture();
        let s = &m.seq;
        let xs = vec![vec![0.3, -0.6], vec![1.1, 0.2]];
        let got = s.summarize_dynamics(&store, &xs).unwrap().d_dist;
        let cell = |c: &LstmCell| (p(&store, c.w_ih), p(&store, c.w_hh), p(&store, c.b));
        let (fi, fh, fb) = cell(&s.forward);
        let (bi, bh, bb) = cell(&s.backward);
        let z = vec![0.0; 2];
        let (h1, c1) = lstm(&xs[0], &z, &z, &fi, &fh, &fb);
        let (hf, _) = lstm(&xs[1], &h1, &c1, &fi, &fh, &fb);
        let (h1, c1) = lstm(&xs[1], &z, &z, &bi, &bh, &bb);
        let (hb, _) = lstm(&xs[0], &h1, &c1, &bi, &bh, &bb);
        let h: Vec<f64> = hf.iter().chain(&hb).copied().collect();
        let loc = dense(&h, &p(&store, s.d_loc.w), &p(&store, s.d_loc.b));
        let scale: Vec<f64> =
            dense(&h, &p(&store, s.d_scale.w), &p(&store, s.d_scale.b)).iter().map(|&v| softplus(v) + 1e-5).collect();
        for (a, b) in got.loc.iter().chain(&got.scale).zip(loc.iter().chain(&scale)) {
            assert!((a - b).abs() < 1e-12, "{a} vs {b}");
        }
        assert_eq!(got.loc.len(), 2);
        assert!(got.scale.iter().all(|&v| v > 0.0));
        assert_eq!(got, s.summarize_dynamics(&store, &xs).unwrap().d_dist);
        assert!(s.summarize_dynamics(&store, &xs[..1]).is_err());
    }

    #[test]
    fn backward_direction_contributes() {
        let Fixture { m, mut store } = fixture();
        let xs = vec![vec![0.3, -0.6], vec![1.1, 0.2], vec![-0.4, 0.5]];
        let before = m.seq.summarize_dynamics(&store, &xs).unwrap();
        for id in [m.seq.backward.w_ih, m.seq.backward.w_hh, m.seq.backward.b] {
            let n = store.get(id).len();
            set(&mut store, id, &vec![0.0; n]);
        }
        let after = m.seq.summarize_dynamics(&store, &xs).unwrap();
        assert_ne!(before, after);
    }

    #[test]
    fn unroll_matches_manual_recurrence() {
        let Fixture { m, store } = fixture();
        let s = &m.seq;
        let d = [0.7, -0.2];
        let got = s.unroll_decoder(&store, &d, 2).unwrap();
        let h0 = dense(&d, &p(&store, s.init.w), &p(&store, s.init.b));
        let (wi, wh, b) = (p(&store, s.decoder.w_ih), p(&store, s.decoder.w_hh), p(&store, s.decoder.b));
        let (h1, c1) = lstm(&[0.45], &h0, &h0, &wi, &wh, &b);
        let (h2, _) = lstm(&[0.45], &h1, &c1, &wi, &wh, &b);
        for (a, b) in got.concat().iter().zip(h1.iter().chain(&h2)) {
            assert!((a - b).abs() < 1e-12);
        }
        assert_eq!(s.unroll_decoder(&store, &d, 1).unwrap().len(), 1);
        let five = s.unroll_decoder(&store, &d, 5).unwrap();
        assert_eq!(five.len(), 5);
        assert_eq!(five, s.unroll_decoder(&store, &d, 5).unwrap());
        assert_ne!(five[0], s.unroll_decoder(&store, &[-0.5, 0.9], 5).unwrap()[0]);
        assert!(s.unroll_decoder(&store, &d, 0).is_err());
    }

    #[test]
    fn combine_matches_manual_formula() {
        let Fixture { m, store } = fixture();
        let s = &m.seq;
        let (z, h, d) = ([0.2, -0.9], [0.4, 0.1], [-0.3, 0.6]);
        let got = s.combine(&store, &z, &h, &d).unwrap();
        let a = dense(&z, &p(&store, s.f7.w), &p(&store, s.f7.b));
        let hhat = [h[0], h[1], d[0], d[1]];
        let c: Vec<f64> = a.iter().zip(&hhat).map(|(x, y)| 0.5 * (x.tanh() + y)).collect();
        let loc = dense(&c, &p(&store, s.f8.w), &p(&store, s.f8.b));
        let scale: Vec<f64> = dense(&c, &p(&store, s.f9.w), &p(&store, s.f9.b)).iter().map(|&v| softplus(v) + 1e-5).collect();
        for (x, y) in got.loc.iter().chain(&got.scale).zip(loc.iter().chain(&scale)) {
            assert!((x - y).abs() < 1e-12);
        }
        assert!(s.combine(&store, &z[..1], &h, &d).is_err());
    }

    #[test]
    fn combine_fixed_point_when_tanh_branch_equals_context() {
        let Fixture { m, mut store } = fixture();
        let s = &m.seq;
        // f7 = 0 with bias atanh(ĥ) makes tanh(f7(z)) == ĥ, so c == ĥ and loc = f8(ĥ).
        let hhat = [0.3, -0.2, 0.5, 0.1];
        set(&mut store, s.f7.w, &[0.0; 8]);
        set(&mut store, s.f7.b, &hhat.map(f64::atanh));
        let got = s.combine(&store, &[1.0, -2.0], &hhat[..2], &hhat[2..]).unwrap();
        let loc = dense(&hhat, &p(&store, s.f8.w), &p(&store, s.f8.b));
        for (x, y) in got.loc.iter().zip(&loc) {
            assert!((x - y).abs() < 1e-12);
        }
    }
}
