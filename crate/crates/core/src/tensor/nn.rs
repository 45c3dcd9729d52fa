//! Parameter storage and the layers built on top of tape primitives.

use std::collections::HashMap;
use std::ops::Index;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Uniform};

use super::{Real, Result, Tape, Tensor, TensorError, Var};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Named, ordered collection of parameter tensors.
#[derive(Clone, Debug, PartialEq)]
pub struct ParamStore<F: Real> {
    names: Vec<String>,
    tensors: Vec<Tensor<F>>,
    index: HashMap<String, ParamId>,
}

impl<F: Real> Default for ParamStore<F> {
    fn default() -> Self {
        Self::new()
    }
}

impl<F: Real> ParamStore<F> {
    pub fn new() -> Self {
        ParamStore {
            names: Vec::new(),
            tensors: Vec::new(),
            index: HashMap::new(),
        }
    }

    /// Registers a parameter. Names must be unique.
    pub fn add(&mut self, name: impl Into<String>, tensor: Tensor<F>) -> ParamId {
        let name = name.into();
        assert!(
            !self.index.contains_key(&name),
            "duplicate parameter {name}"
        );
        let id = ParamId(self.tensors.len());
        self.index.insert(name.clone(), id);
        self.names.push(name);
        self.tensors.push(tensor);
        id
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn get(&self, id: ParamId) -> &Tensor<F> {
        &self.tensors[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor<F> {
        &mut self.tensors[id.0]
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.index.get(name).copied()
    }

    pub fn by_name(&self, name: &str) -> Option<&Tensor<F>> {
        self.id(name).map(|id| self.get(id))
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.tensors.len()).map(ParamId)
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &str, &Tensor<F>)> {
        self.names
            .iter()
            .zip(&self.tensors)
            .enumerate()
            .map(|(i, (n, t))| (ParamId(i), n.as_str(), t))
    }

    pub fn total_elements(&self) -> usize {
        self.tensors.iter().map(Tensor::numel).sum()
    }

    pub fn cast<G: Real>(&self) -> ParamStore<G> {
        ParamStore {
            names: self.names.clone(),
            tensors: self.tensors.iter().map(Tensor::cast).collect(),
            index: self.index.clone(),
        }
    }

    /// Records every parameter as a tape leaf. `trainable(name)` decides
    /// whether the leaf tracks gradients.
    pub fn bind(&self, tape: &mut Tape<F>, trainable: impl Fn(&str) -> bool) -> Bound {
        let vars = self
            .names
            .iter()
            .zip(&self.tensors)
            .map(|(n, t)| tape.leaf(t.clone(), trainable(n)))
            .collect();
        Bound { vars }
    }
}

/// Tape handles for a bound [`ParamStore`], indexed by [`ParamId`].
#[derive(Clone, Debug)]
pub struct Bound {
    vars: Vec<Var>,
}

impl Bound {
    /// Wraps tape variables laid out in [`ParamId`] order.
    pub fn from_vars(vars: Vec<Var>) -> Self {
        Bound { vars }
    }

    pub fn vars(&self) -> &[Var] {
        &self.vars
    }

    /// Collects per-parameter gradients after `backward`. Frozen parameters
    /// and parameters off the loss path yield `None`.
    pub fn grads<F: Real>(&self, tape: &Tape<F>) -> Vec<Option<Vec<F>>> {
        self.vars
            .iter()
            .map(|&v| tape.grad_slice(v).map(<[F]>::to_vec))
            .collect()
    }
}

impl Index<ParamId> for Bound {
    type Output = Var;

    fn index(&self, id: ParamId) -> &Var {
        &self.vars[id.0]
    }
}

/// Stable 64-bit FNV-1a hash, used to derive per-parameter RNG streams so
/// that a parameter's initial value depends only on (seed, name, shape).
pub fn stable_hash(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

pub fn param_rng(seed: u64, name: &str) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed ^ stable_hash(name.as_bytes()))
}

/// Uniform(-limit, limit) initialization from the parameter's own stream.
pub fn init_uniform<F: Real>(seed: u64, name: &str, shape: &[usize], limit: f64) -> Tensor<F> {
    let n: usize = shape.iter().product();
    if limit == 0.0 || n == 0 {
        return Tensor::zeros(shape.to_vec());
    }
    let mut rng = param_rng(seed, name);
    let dist = Uniform::new_inclusive(-limit, limit);
    let data = (0..n).map(|_| F::of(dist.sample(&mut rng))).collect();
    Tensor::new(shape.to_vec(), data).expect("shape")
}

pub fn glorot_limit(fan_in: usize, fan_out: usize) -> f64 {
    if fan_in + fan_out == 0 {
        0.0
    } else {
        (6.0 / (fan_in + fan_out) as f64).sqrt()
    }
}

/// Affine layer `x·W + b` with `W: [in, out]`.
#[derive(Clone, Debug)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: ParamId,
    pub in_dim: usize,
    pub out_dim: usize,
}

impl Linear {
    pub fn new<F: Real>(
        store: &mut ParamStore<F>,
        name: &str,
        in_dim: usize,
        out_dim: usize,
        seed: u64,
    ) -> Self {
        let wname = format!("{name}.weight");
        let w = init_uniform(
            seed,
            &wname,
            &[in_dim, out_dim],
            glorot_limit(in_dim, out_dim),
        );
        Linear {
            weight: store.add(wname, w),
            bias: store.add(format!("{name}.bias"), Tensor::zeros(vec![out_dim])),
            in_dim,
            out_dim,
        }
    }

    pub fn forward<F: Real>(&self, tape: &mut Tape<F>, p: &Bound, x: Var) -> Result<Var> {
        let xw = tape.matmul(x, p[self.weight])?;
        tape.add_bias(xw, p[self.bias])
    }
}

/// Temporal convolution layer with "same" padding; weight `[K, in, out]`.
#[derive(Clone, Debug)]
pub struct Conv1d {
    pub weight: ParamId,
    pub bias: ParamId,
    pub kernel: usize,
}

impl Conv1d {
    pub fn new<F: Real>(
        store: &mut ParamStore<F>,
        name: &str,
        in_dim: usize,
        out_dim: usize,
        kernel: usize,
        seed: u64,
    ) -> Self {
        assert!(kernel % 2 == 1, "conv kernel must be odd");
        let wname = format!("{name}.weight");
        let limit = glorot_limit(in_dim * kernel, out_dim * kernel);
        let w = init_uniform(seed, &wname, &[kernel, in_dim, out_dim], limit);
        Conv1d {
            weight: store.add(wname, w),
            bias: store.add(format!("{name}.bias"), Tensor::zeros(vec![out_dim])),
            kernel,
        }
    }

    pub fn forward<F: Real>(&self, tape: &mut Tape<F>, p: &Bound, x: Var) -> Result<Var> {
        let y = tape.conv1d(x, p[self.weight])?;
        tape.add_bias(y, p[self.bias])
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum RecurrentKind {
    Gru,
    Lstm,
}

impl RecurrentKind {
    fn gates(self) -> usize {
        match self {
            RecurrentKind::Gru => 3,
            RecurrentKind::Lstm => 4,
        }
    }
}

/// Hidden state of a recurrent cell; every entry is a `[1, hidden]` row.
#[derive(Clone, Copy, Debug)]
pub enum RecurrentState {
    Gru { h: Var },
    Lstm { h: Var, c: Var },
}

impl RecurrentState {
    pub fn output(&self) -> Var {
        match *self {
            RecurrentState::Gru { h } | RecurrentState::Lstm { h, .. } => h,
        }
    }
}

/// Gated recurrent cell.
///
/// GRU (gate order r, z, n):
///   r = σ(x·Wxr + bxr + h·Whr + bhr), z likewise,
///   n = tanh(x·Wxn + bxn + r ⊙ (h·Whn + bhn)), h' = (1 − z) ⊙ n + z ⊙ h.
///
/// LSTM (gate order i, f, g, o):
///   [i f g o] = x·Wx + h·Wh + b, c' = σ(f) ⊙ c + σ(i) ⊙ tanh(g),
///   h' = σ(o) ⊙ tanh(c').
#[derive(Clone, Debug)]
pub struct RecurrentCell {
    pub kind: RecurrentKind,
    pub input_dim: usize,
    pub hidden: usize,
    pub w_x: ParamId,
    pub w_h: ParamId,
    pub b_x: ParamId,
    pub b_h: ParamId,
}

impl RecurrentCell {
    pub fn new<F: Real>(
        store: &mut ParamStore<F>,
        name: &str,
        kind: RecurrentKind,
        input_dim: usize,
        hidden: usize,
        seed: u64,
    ) -> Self {
        let g = kind.gates() * hidden;
        let wx_name = format!("{name}.w_x");
        let wh_name = format!("{name}.w_h");
        let wx = init_uniform(
            seed,
            &wx_name,
            &[input_dim, g],
            glorot_limit(input_dim, hidden),
        );
        let wh = init_uniform(seed, &wh_name, &[hidden, g], glorot_limit(hidden, hidden));
        let mut bx = Tensor::zeros(vec![g]);
        if kind == RecurrentKind::Lstm {
            // forget-gate bias of one keeps early gradients flowing through time
            for v in &mut bx.data_mut()[hidden..2 * hidden] {
                *v = F::one();
            }
        }
        RecurrentCell {
            kind,
            input_dim,
            hidden,
            w_x: store.add(wx_name, wx),
            w_h: store.add(wh_name, wh),
            b_x: store.add(format!("{name}.b_x"), bx),
            b_h: store.add(format!("{name}.b_h"), Tensor::zeros(vec![g])),
        }
    }

    pub fn zero_state<F: Real>(&self, tape: &mut Tape<F>) -> RecurrentState {
        let h = tape.constant(Tensor::zeros(vec![1, self.hidden]));
        match self.kind {
            RecurrentKind::Gru => RecurrentState::Gru { h },
            RecurrentKind::Lstm => {
                let c = tape.constant(Tensor::zeros(vec![1, self.hidden]));
                RecurrentState::Lstm { h, c }
            }
        }
    }

    /// Input projection `x·Wx + bx` for a whole `[T, in]` sequence at once.
    pub fn project_inputs<F: Real>(&self, tape: &mut Tape<F>, p: &Bound, xs: Var) -> Result<Var> {
        let xw = tape.matmul(xs, p[self.w_x])?;
        tape.add_bias(xw, p[self.b_x])
    }

    /// One step on a `[1, in]` input row.
    pub fn step<F: Real>(
        &self,
        tape: &mut Tape<F>,
        p: &Bound,
        x: Var,
        state: RecurrentState,
    ) -> Result<(Var, RecurrentState)> {
        if tape.shape(x) != [1, self.input_dim] {
            return Err(TensorError::dim(
                "recurrent_cell_step",
                format!(
                    "input {:?}, expected [1, {}]",
                    tape.shape(x),
                    self.input_dim
                ),
            ));
        }
        let xw = self.project_inputs(tape, p, x)?;
        self.step_projected(tape, p, xw, state)
    }

    /// One step given an already projected input row `[1, gates·hidden]`.
    pub fn step_projected<F: Real>(
        &self,
        tape: &mut Tape<F>,
        p: &Bound,
        xw: Var,
        state: RecurrentState,
    ) -> Result<(Var, RecurrentState)> {
        let h_dim = self.hidden;
        let check = |tape: &Tape<F>, v: Var| -> Result<()> {
            if tape.shape(v) != [1, h_dim] {
                return Err(TensorError::dim(
                    "recurrent_cell_step",
                    format!("state {:?}, configured hidden size {h_dim}", tape.shape(v)),
                ));
            }
            Ok(())
        };
        match (self.kind, state) {
            (RecurrentKind::Gru, RecurrentState::Gru { h }) => {
                check(tape, h)?;
                let hw = tape.matmul(h, p[self.w_h])?;
                let hw = tape.add_bias(hw, p[self.b_h])?;
                let xr = tape.narrow(xw, 1, 0, h_dim)?;
                let xz = tape.narrow(xw, 1, h_dim, h_dim)?;
                let xn = tape.narrow(xw, 1, 2 * h_dim, h_dim)?;
                let hr = tape.narrow(hw, 1, 0, h_dim)?;
                let hz = tape.narrow(hw, 1, h_dim, h_dim)?;
                let hn = tape.narrow(hw, 1, 2 * h_dim, h_dim)?;
                let r = tape.add(xr, hr)?;
                let r = tape.sigmoid(r);
                let z = tape.add(xz, hz)?;
                let z = tape.sigmoid(z);
                let rh = tape.mul(r, hn)?;
                let n = tape.add(xn, rh)?;
                let n = tape.tanh(n);
                // h' = n + z ⊙ (h − n)
                let d = tape.sub(h, n)?;
                let zd = tape.mul(z, d)?;
                let h_new = tape.add(n, zd)?;
                Ok((h_new, RecurrentState::Gru { h: h_new }))
            }
            (RecurrentKind::Lstm, RecurrentState::Lstm { h, c }) => {
                check(tape, h)?;
                check(tape, c)?;
                let hw = tape.matmul(h, p[self.w_h])?;
                let hw = tape.add_bias(hw, p[self.b_h])?;
                let gates = tape.add(xw, hw)?;
                let i = tape.narrow(gates, 1, 0, h_dim)?;
                let f = tape.narrow(gates, 1, h_dim, h_dim)?;
                let g = tape.narrow(gates, 1, 2 * h_dim, h_dim)?;
                let o = tape.narrow(gates, 1, 3 * h_dim, h_dim)?;
                let i = tape.sigmoid(i);
                let f = tape.sigmoid(f);
                let g = tape.tanh(g);
                let o = tape.sigmoid(o);
                let fc = tape.mul(f, c)?;
                let ig = tape.mul(i, g)?;
                let c_new = tape.add(fc, ig)?;
                let tc = tape.tanh(c_new);
                let h_new = tape.mul(o, tc)?;
                Ok((h_new, RecurrentState::Lstm { h: h_new, c: c_new }))
            }
            (kind, _) => Err(TensorError::dim(
                "recurrent_cell_step",
                format!("state variant does not match {kind:?} cell"),
            )),
        }
    }
}

/// Runs a cell over the rows of `xs: [T, in]`, forward or reversed, and
/// returns the `[T, hidden]` outputs in input order.
pub fn run_recurrent<F: Real>(
    cell: &RecurrentCell,
    tape: &mut Tape<F>,
    p: &Bound,
    xs: Var,
    reverse: bool,
) -> Result<Var> {
    let t_len = tape.shape(xs)[0];
    let proj = cell.project_inputs(tape, p, xs)?;
    let mut state = cell.zero_state(tape);
    let mut outs = vec![None; t_len];
    let order: Vec<usize> = if reverse {
        (0..t_len).rev().collect()
    } else {
        (0..t_len).collect()
    };
    for t in order {
        let row = tape.narrow(proj, 0, t, 1)?;
        let (h, s) = cell.step_projected(tape, p, row, state)?;
        state = s;
        outs[t] = Some(h);
    }
    let outs: Vec<Var> = outs
        .into_iter()
        .map(|v| v.expect("every step ran"))
        .collect();
    if outs.is_empty() {
        return Ok(tape.constant(Tensor::zeros(vec![0, cell.hidden])));
    }
    tape.concat(&outs, 0)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_lstm_outputs_zero() {
        let mut store = ParamStore::<f64>::new();
        let cell = RecurrentCell::new(&mut store, "c", RecurrentKind::Lstm, 3, 4, 0);
        for id in store.ids().collect::<Vec<_>>() {
            store
                .get_mut(id)
                .data_mut()
                .iter_mut()
                .for_each(|x| *x = 0.0);
        }
        let mut tape = Tape::<f64>::new();
        let p = store.bind(&mut tape, |_| true);
        let x = tape.constant(Tensor::zeros(vec![1, 3]));
        let s = cell.zero_state(&mut tape);
        let (h, _) = cell.step(&mut tape, &p, x, s).unwrap();
        assert!(tape.value(h).data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn state_mismatch_is_a_dimension_error() {
        let mut store = ParamStore::<f64>::new();
        let cell = RecurrentCell::new(&mut store, "c", RecurrentKind::Gru, 3, 4, 0);
        let mut tape = Tape::<f64>::new();
        let p = store.bind(&mut tape, |_| true);
        let x = tape.constant(Tensor::zeros(vec![1, 3]));
        let bad = RecurrentState::Gru {
            h: tape.constant(Tensor::zeros(vec![1, 5])),
        };
        assert!(matches!(
            cell.step(&mut tape, &p, x, bad),
            Err(TensorError::Dimension { .. })
        ));
        let wrong_kind = RecurrentState::Lstm {
            h: tape.constant(Tensor::zeros(vec![1, 4])),
            c: tape.constant(Tensor::zeros(vec![1, 4])),
        };
        assert!(cell.step(&mut tape, &p, x, wrong_kind).is_err());
    }

    #[test]
    fn init_depends_only_on_seed_name_shape() {
        let a: Tensor<f32> = init_uniform(7, "enc.w", &[3, 4], 0.5);
        let b: Tensor<f32> = init_uniform(7, "enc.w", &[3, 4], 0.5);
        let c: Tensor<f32> = init_uniform(7, "enc.v", &[3, 4], 0.5);
        assert_eq!(a, b);
        assert_ne!(a, c);
    }
}
