//! Parameter storage and the small set of layers the model is assembled from.

use rand::Rng;

use crate::autograd::{Grads, Tape, Var};
use crate::distributions::{DiagGaussian, SCALE_FLOOR};
use crate::tensor::{ConvGeom, Scalar, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Which part of the model a parameter belongs to; drives stage-two freezing.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum ParamGroup {
    /// Convolutional trunk and the identity feature layer.
    EncoderTrunk,
    /// Final layers producing the pose and static posterior parameters.
    EncoderHead,
    /// Mixture-of-experts decoder bank.
    Decoder,
    /// Bidirectional encoder, dynamics heads, decoder recurrence and combiner.
    Sequence,
    Transition,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ParamEntry<F> {
    pub name: String,
    pub tensor: Tensor<F>,
    pub group: ParamGroup,
    pub frozen: bool,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore<F> {
    entries: Vec<ParamEntry<F>>,
}

impl<F: Scalar> ParamStore<F> {
    pub fn new() -> Self {
        Self { entries: Vec::new() }
    }

    pub fn add(&mut self, name: impl Into<String>, tensor: Tensor<F>, group: ParamGroup) -> ParamId {
        let name = name.into();
        debug_assert!(self.entries.iter().all(|e| e.name != name), "duplicate parameter {name}");
        self.entries.push(ParamEntry { name, tensor, group, frozen: false });
        ParamId(self.entries.len() - 1)
    }

    /// Uniform `U(-1/√fan_in, 1/√fan_in)` initialization.
    pub fn add_uniform(
        &mut self,
        name: impl Into<String>,
        shape: &[usize],
        fan_in: usize,
        group: ParamGroup,
        rng: &mut impl Rng,
    ) -> ParamId {
        let bound = 1.0 / (fan_in.max(1) as f64).sqrt();
        let n: usize = shape.iter().product();
        let data = (0..n).map(|_| F::lit(rng.random_range(-bound..bound))).collect();
        self.add(name, Tensor::new(shape.to_vec(), data), group)
    }

    pub fn add_zeros(&mut self, name: impl Into<String>, shape: &[usize], group: ParamGroup) -> ParamId {
        self.add(name, Tensor::zeros(shape), group)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entries(&self) -> &[ParamEntry<F>] {
        &self.entries
    }

    pub fn entry(&self, id: ParamId) -> &ParamEntry<F> {
        &self.entries[id.0]
    }

    pub fn get(&self, id: ParamId) -> &Tensor<F> {
        &self.entries[id.0].tensor
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor<F> {
        &mut self.entries[id.0].tensor
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.entries.len()).map(ParamId)
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.entries.iter().position(|e| e.name == name).map(ParamId)
    }

    pub fn set_frozen(&mut self, id: ParamId, frozen: bool) {
        self.entries[id.0].frozen = frozen;
    }

    /// Freezes exactly the parameters whose group satisfies `pred`, unfreezing the rest.
    pub fn freeze_where(&mut self, pred: impl Fn(ParamGroup) -> bool) {
        for e in &mut self.entries {
            e.frozen = pred(e.group);
        }
    }

    pub fn num_scalars(&self) -> usize {
        self.entries.iter().map(|e| e.tensor.len()).sum()
    }

    /// Converts every tensor to another precision, keeping names, groups and flags.
    pub fn cast<G: Scalar>(&self) -> ParamStore<G> {
        ParamStore {
            entries: self
                .entries
                .iter()
                .map(|e| ParamEntry { name: e.name.clone(), tensor: e.tensor.cast(), group: e.group, frozen: e.frozen })
                .collect(),
        }
    }

    pub fn zeros_like(&self) -> Vec<Tensor<F>> {
        self.entries.iter().map(|e| Tensor::zeros(e.tensor.shape())).collect()
    }

    /// All parameter values concatenated in store order.
    pub fn flatten(&self) -> Vec<F> {
        self.entries.iter().flat_map(|e| e.tensor.data().iter().copied()).collect()
    }

    /// Inverse of [`ParamStore::flatten`].
    pub fn assign_flat(&mut self, values: &[F]) {
        assert_eq!(values.len(), self.num_scalars(), "assign_flat length");
        let mut at = 0;
        for e in &mut self.entries {
            let n = e.tensor.len();
            e.tensor.data_mut().copy_from_slice(&values[at..at + n]);
            at += n;
        }
    }

    /// Flattens per-parameter gradients into store order, zero where absent.
    pub fn flatten_grads(&self, grads: &[(ParamId, Tensor<F>)]) -> Vec<F> {
        let mut offsets = Vec::with_capacity(self.entries.len());
        let mut at = 0;
        for e in &self.entries {
            offsets.push(at);
            at += e.tensor.len();
        }
        let mut out = vec![F::zero(); at];
        for (id, g) in grads {
            let o = offsets[id.0];
            out[o..o + g.len()].copy_from_slice(g.data());
        }
        out
    }
}

/// A tape bound to a parameter store. Each parameter becomes one leaf the
/// first time it is used, so recurrent reuse accumulates into a single gradient.
pub struct Graph<'a, F: Scalar> {
    pub tape: Tape<F>,
    store: &'a ParamStore<F>,
    bound: Vec<Option<Var>>,
    track: bool,
}

impl<'a, F: Scalar> Graph<'a, F> {
    /// `track` enables gradients for unfrozen parameters; pass `false` for inference.
    pub fn new(store: &'a ParamStore<F>, track: bool) -> Self {
        Self { tape: Tape::new(), store, bound: vec![None; store.len()], track }
    }

    pub fn store(&self) -> &ParamStore<F> {
        self.store
    }

    pub fn param(&mut self, id: ParamId) -> Var {
        if let Some(v) = self.bound[id.0] {
            return v;
        }
        let e = self.store.entry(id);
        let v = self.tape.leaf(e.tensor.clone(), self.track && !e.frozen);
        self.bound[id.0] = Some(v);
        v
    }

    pub fn constant(&mut self, t: Tensor<F>) -> Var {
        self.tape.constant(t)
    }

    pub fn value(&self, v: Var) -> &Tensor<F> {
        self.tape.value(v)
    }

    /// Runs backward from `loss` and returns the gradient of every bound, trainable parameter.
    pub fn param_grads(&self, loss: Var) -> Vec<(ParamId, Tensor<F>)> {
        let mut grads: Grads<F> = self.tape.backward(loss);
        self.bound
            .iter()
            .enumerate()
            .filter_map(|(i, v)| v.and_then(|v| grads.take(v)).map(|g| (ParamId(i), g)))
            .collect()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Linear {
    pub w: ParamId,
    pub b: ParamId,
    pub inputs: usize,
    pub outputs: usize,
}

impl Linear {
    pub fn new<F: Scalar>(
        store: &mut ParamStore<F>,
        name: &str,
        inputs: usize,
        outputs: usize,
        group: ParamGroup,
        rng: &mut impl Rng,
    ) -> Self {
        let w = store.add_uniform(format!("{name}.weight"), &[inputs, outputs], inputs, group, rng);
        let b = store.add_uniform(format!("{name}.bias"), &[outputs], inputs, group, rng);
        Self { w, b, inputs, outputs }
    }

    pub fn forward<F: Scalar>(&self, g: &mut Graph<'_, F>, x: Var) -> Var {
        let w = g.param(self.w);
        let b = g.param(self.b);
        g.tape.linear(x, w, b)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Conv2d {
    pub w: ParamId,
    pub b: ParamId,
    pub geom: ConvGeom,
}

impl Conv2d {
    #[allow(clippy::too_many_arguments)]
    pub fn new<F: Scalar>(
        store: &mut ParamStore<F>,
        name: &str,
        in_ch: usize,
        out_ch: usize,
        geom: ConvGeom,
        group: ParamGroup,
        rng: &mut impl Rng,
    ) -> Self {
        let k = geom.kernel;
        let fan_in = in_ch * k * k;
        let w = store.add_uniform(format!("{name}.weight"), &[out_ch, in_ch, k, k], fan_in, group, rng);
        let b = store.add_uniform(format!("{name}.bias"), &[out_ch], fan_in, group, rng);
        Self { w, b, geom }
    }

    pub fn forward<F: Scalar>(&self, g: &mut Graph<'_, F>, x: Var) -> Var {
        let w = g.param(self.w);
        let b = g.param(self.b);
        g.tape.conv2d(x, w, b, self.geom)
    }
}

/// Single-layer LSTM cell with gate order (input, forget, cell, output).
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct LstmCell {
    pub w_ih: ParamId,
    pub w_hh: ParamId,
    pub b: ParamId,
    pub inputs: usize,
    pub hidden: usize,
}

impl LstmCell {
    pub fn new<F: Scalar>(
        store: &mut ParamStore<F>,
        name: &str,
        inputs: usize,
        hidden: usize,
        group: ParamGroup,
        rng: &mut impl Rng,
    ) -> Self {
        let w_ih = store.add_uniform(format!("{name}.w_ih"), &[inputs, 4 * hidden], hidden, group, rng);
        let w_hh = store.add_uniform(format!("{name}.w_hh"), &[hidden, 4 * hidden], hidden, group, rng);
        let b = store.add_uniform(format!("{name}.bias"), &[4 * hidden], hidden, group, rng);
        Self { w_ih, w_hh, b, inputs, hidden }
    }

    /// One step on a single row: `x: [1, inputs]`, `h, c: [1, hidden]`.
    pub fn step<F: Scalar>(&self, g: &mut Graph<'_, F>, x: Var, h: Var, c: Var) -> (Var, Var) {
        let w_ih = g.param(self.w_ih);
        let w_hh = g.param(self.w_hh);
        let b = g.param(self.b);
        let t = &mut g.tape;
        let xi = t.linear(x, w_ih, b);
        let hh = t.matmul(h, w_hh);
        let gates = t.add(xi, hh);
        let n = self.hidden;
        let i = t.slice_cols(gates, 0, n);
        let f = t.slice_cols(gates, n, n);
        let cand = t.slice_cols(gates, 2 * n, n);
        let o = t.slice_cols(gates, 3 * n, n);
        let i = t.sigmoid(i);
        let f = t.sigmoid(f);
        let cand = t.tanh(cand);
        let o = t.sigmoid(o);
        let keep = t.mul(f, c);
        let write = t.mul(i, cand);
        let c_next = t.add(keep, write);
        let squashed = t.tanh(c_next);
        let h_next = t.mul(o, squashed);
        (h_next, c_next)
    }
}

/// A diagonal Gaussian whose parameters live on a tape.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct GaussianVar {
    pub loc: Var,
    pub scale: Var,
}

impl GaussianVar {
    /// Reparameterized sample `loc + scale ⊙ noise`.
    pub fn sample<F: Scalar>(&self, tape: &mut Tape<F>, noise: Tensor<F>) -> Var {
        let shape = tape.value(self.loc).shape().to_vec();
        let noise = tape.constant(noise.reshape(&shape));
        let spread = tape.mul(self.scale, noise);
        tape.add(self.loc, spread)
    }

    /// Copies the current values off the tape (one row expected).
    pub fn to_dist<F: Scalar>(&self, tape: &Tape<F>) -> DiagGaussian<F> {
        DiagGaussian { loc: tape.value(self.loc).data().to_vec(), scale: tape.value(self.scale).data().to_vec() }
    }

    /// `KL(self ‖ prior)` for a prior held as plain values.
    pub fn kl_to<F: Scalar>(&self, tape: &mut Tape<F>, prior: &DiagGaussian<F>) -> Var {
        let shape = tape.value(self.loc).shape().to_vec();
        let pl = tape.constant(Tensor::new(shape.clone(), prior.loc.clone()));
        let ps = tape.constant(Tensor::new(shape, prior.scale.clone()));
        tape.kl_diag(self.loc, self.scale, pl, ps)
    }
}

/// `softplus(pre) + SCALE_FLOOR`.
pub fn positive_scale<F: Scalar>(tape: &mut Tape<F>, pre: Var) -> Var {
    let sp = tape.softplus(pre);
    tape.offset(sp, F::lit(SCALE_FLOOR))
}
