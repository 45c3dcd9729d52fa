use rand::Rng;

use super::kernels::{matmul_into, matmul_nt_acc, matmul_tn_acc};
use super::{axis_extents, Real, Result, Tensor, TensorError};

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Debug)]
enum Op<F> {
    Leaf,
    MatMul(Var, Var),
    Add(Var, Var),
    /// `b`'s shape is a suffix of `a`'s; broadcast over the leading axes.
    AddBias(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    ScaleShift(Var, F),
    Tanh(Var),
    Sigmoid(Var),
    Relu(Var),
    Softmax {
        x: Var,
        axis: usize,
    },
    Concat {
        inputs: Vec<Var>,
        axis: usize,
    },
    Narrow {
        x: Var,
        axis: usize,
        start: usize,
    },
    Gather {
        table: Var,
        ids: Vec<usize>,
    },
    RepeatRows(Var),
    Transpose(Var),
    Reshape(Var),
    Conv1d {
        x: Var,
        w: Var,
        pad: usize,
    },
    Mask {
        x: Var,
        mask: Vec<F>,
    },
    Sum(Var),
    Mean(Var),
    L1 {
        pred: Var,
        target: Var,
    },
    Mse {
        pred: Var,
        target: Var,
    },
    BceLogits {
        logits: Var,
        targets: Var,
    },
}

/// Linear record of a forward computation.
///
/// Operations are appended in execution order, so the tape is always in
/// topological order. [`Tape::backward`] walks it in reverse, summing
/// gradient contributions wherever a value fans out to several consumers.
pub struct Tape<F: Real> {
    values: Vec<Tensor<F>>,
    ops: Vec<Op<F>>,
    requires_grad: Vec<bool>,
    grads: Vec<Option<Vec<F>>>,
}

impl<F: Real> Default for Tape<F> {
    fn default() -> Self {
        Self::new()
    }
}

impl<F: Real> Tape<F> {
    pub fn new() -> Self {
        Tape {
            values: Vec::new(),
            ops: Vec::new(),
            requires_grad: Vec::new(),
            grads: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    fn push(&mut self, value: Tensor<F>, op: Op<F>, requires_grad: bool) -> Var {
        self.values.push(value);
        self.ops.push(op);
        self.requires_grad.push(requires_grad);
        self.grads.push(None);
        Var(self.values.len() - 1)
    }

    fn rg(&self, v: Var) -> bool {
        self.requires_grad[v.0]
    }

    pub fn leaf(&mut self, value: Tensor<F>, requires_grad: bool) -> Var {
        self.push(value, Op::Leaf, requires_grad)
    }

    /// Trainable leaf.
    pub fn param(&mut self, value: Tensor<F>) -> Var {
        self.leaf(value, true)
    }

    pub fn constant(&mut self, value: Tensor<F>) -> Var {
        self.leaf(value, false)
    }

    pub fn value(&self, v: Var) -> &Tensor<F> {
        &self.values[v.0]
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.values[v.0].shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.rg(v)
    }

    /// Gradient of the last `backward` target with respect to `v`.
    pub fn grad(&self, v: Var) -> Option<Tensor<F>> {
        self.grads[v.0]
            .as_ref()
            .map(|g| Tensor::new(self.values[v.0].shape().to_vec(), g.clone()).expect("grad shape"))
    }

    pub fn grad_slice(&self, v: Var) -> Option<&[F]> {
        self.grads[v.0].as_deref()
    }

    // ---- linear algebra -------------------------------------------------

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(TensorError::shapes("matmul", sa, sb));
        }
        let (m, k, n) = (sa[0], sa[1], sb[1]);
        let mut out = vec![F::zero(); m * n];
        matmul_into(
            self.value(a).data(),
            self.value(b).data(),
            m,
            k,
            n,
            &mut out,
        );
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(Tensor::new(vec![m, n], out)?, Op::MatMul(a, b), rg))
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        let s = self.shape(a);
        if s.len() != 2 {
            return Err(TensorError::dim(
                "transpose",
                format!("expected matrix, got {s:?}"),
            ));
        }
        let (m, n) = (s[0], s[1]);
        let src = self.value(a).data();
        let mut out = vec![F::zero(); m * n];
        for i in 0..m {
            for j in 0..n {
                out[j * m + i] = src[i * n + j];
            }
        }
        let rg = self.rg(a);
        Ok(self.push(Tensor::new(vec![n, m], out)?, Op::Transpose(a), rg))
    }

    pub fn reshape(&mut self, a: Var, shape: impl Into<Vec<usize>>) -> Result<Var> {
        let t = self.value(a).clone().reshaped(shape)?;
        let rg = self.rg(a);
        Ok(self.push(t, Op::Reshape(a), rg))
    }

    // ---- elementwise ----------------------------------------------------

    fn binary_same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<()> {
        if self.shape(a) != self.shape(b) {
            return Err(TensorError::shapes(op, self.shape(a), self.shape(b)));
        }
        Ok(())
    }

    fn zip_values(&self, a: Var, b: Var, f: impl Fn(F, F) -> F) -> Tensor<F> {
        let data = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(&x, &y)| f(x, y))
            .collect();
        Tensor::new(self.shape(a).to_vec(), data).expect("same shape")
    }

    fn map_value(&self, a: Var, f: impl Fn(F) -> F) -> Tensor<F> {
        let data = self.value(a).data().iter().map(|&x| f(x)).collect();
        Tensor::new(self.shape(a).to_vec(), data).expect("same shape")
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary_same_shape("add", a, b)?;
        let t = self.zip_values(a, b, |x, y| x + y);
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(t, Op::Add(a, b), rg))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary_same_shape("sub", a, b)?;
        let t = self.zip_values(a, b, |x, y| x - y);
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(t, Op::Sub(a, b), rg))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary_same_shape("mul", a, b)?;
        let t = self.zip_values(a, b, |x, y| x * y);
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(t, Op::Mul(a, b), rg))
    }

    /// `a + b` where `b`'s shape equals the trailing axes of `a`.
    pub fn add_bias(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sb.len() > sa.len() || sa[sa.len() - sb.len()..] != *sb {
            return Err(TensorError::shapes("add_bias", sa, sb));
        }
        let inner = self.value(b).numel();
        let bias = self.value(b).data();
        let mut data = self.value(a).data().to_vec();
        if inner > 0 {
            for chunk in data.chunks_mut(inner) {
                for (x, &y) in chunk.iter_mut().zip(bias) {
                    *x += y;
                }
            }
        }
        let t = Tensor::new(sa.to_vec(), data)?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(t, Op::AddBias(a, b), rg))
    }

    /// `scale * a + shift`.
    pub fn scale_shift(&mut self, a: Var, scale: f64, shift: f64) -> Var {
        let (s, c) = (F::of(scale), F::of(shift));
        let t = self.map_value(a, |x| s * x + c);
        let rg = self.rg(a);
        self.push(t, Op::ScaleShift(a, s), rg)
    }

    pub fn scale(&mut self, a: Var, scale: f64) -> Var {
        self.scale_shift(a, scale, 0.0)
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let t = self.map_value(a, |x| x.tanh());
        let rg = self.rg(a);
        self.push(t, Op::Tanh(a), rg)
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let t = self.map_value(a, sigmoid);
        let rg = self.rg(a);
        self.push(t, Op::Sigmoid(a), rg)
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let t = self.map_value(a, |x| if x > F::zero() { x } else { F::zero() });
        let rg = self.rg(a);
        self.push(t, Op::Relu(a), rg)
    }

    /// Numerically stabilized softmax along `axis` (max subtraction).
    pub fn softmax(&mut self, x: Var, axis: usize) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        if axis >= shape.len() {
            return Err(TensorError::dim(
                "softmax",
                format!("axis {axis} for shape {shape:?}"),
            ));
        }
        let src = self.value(x).data();
        if let Some(bad) = src.iter().find(|v| !v.is_finite()) {
            return Err(TensorError::Numeric {
                op: "softmax",
                detail: format!("non-finite input {bad}"),
            });
        }
        let (outer, len, inner) = axis_extents(&shape, axis);
        let mut out = vec![F::zero(); src.len()];
        for o in 0..outer {
            for i in 0..inner {
                let at = |j: usize| o * len * inner + j * inner + i;
                let mut mx = F::neg_infinity();
                for j in 0..len {
                    mx = mx.max(src[at(j)]);
                }
                let mut total = F::zero();
                for j in 0..len {
                    let e = (src[at(j)] - mx).exp();
                    out[at(j)] = e;
                    total += e;
                }
                for j in 0..len {
                    out[at(j)] = out[at(j)] / total;
                }
            }
        }
        let rg = self.rg(x);
        Ok(self.push(Tensor::new(shape, out)?, Op::Softmax { x, axis }, rg))
    }

    // ---- structural ----------------------------------------------------

    /// Concatenates along `axis`; all other extents must agree.
    pub fn concat(&mut self, inputs: &[Var], axis: usize) -> Result<Var> {
        let first = inputs
            .first()
            .ok_or_else(|| TensorError::dim("concat", "no inputs"))?;
        let base = self.shape(*first).to_vec();
        if axis >= base.len() {
            return Err(TensorError::dim(
                "concat",
                format!("axis {axis} for shape {base:?}"),
            ));
        }
        let mut total = 0;
        for &v in inputs {
            let s = self.shape(v);
            let ok = s.len() == base.len()
                && s.iter()
                    .zip(&base)
                    .enumerate()
                    .all(|(d, (x, y))| d == axis || x == y);
            if !ok {
                return Err(TensorError::shapes("concat", &base, s));
            }
            total += s[axis];
        }
        let mut shape = base.clone();
        shape[axis] = total;
        let (outer, _, inner) = axis_extents(&shape, axis);
        let mut out = Vec::with_capacity(outer * total * inner);
        for o in 0..outer {
            for &v in inputs {
                let len = self.shape(v)[axis];
                let src = self.value(v).data();
                out.extend_from_slice(&src[o * len * inner..(o + 1) * len * inner]);
            }
        }
        let rg = inputs.iter().any(|&v| self.rg(v));
        Ok(self.push(
            Tensor::new(shape, out)?,
            Op::Concat {
                inputs: inputs.to_vec(),
                axis,
            },
            rg,
        ))
    }

    /// Slice `[start, start+len)` along `axis`.
    pub fn narrow(&mut self, x: Var, axis: usize, start: usize, len: usize) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        if axis >= shape.len() || start + len > shape[axis] {
            return Err(TensorError::dim(
                "narrow",
                format!("range {start}..{} on axis {axis} of {shape:?}", start + len),
            ));
        }
        let (outer, full, inner) = axis_extents(&shape, axis);
        let src = self.value(x).data();
        let mut out = Vec::with_capacity(outer * len * inner);
        for o in 0..outer {
            let base = o * full * inner + start * inner;
            out.extend_from_slice(&src[base..base + len * inner]);
        }
        let mut oshape = shape;
        oshape[axis] = len;
        let rg = self.rg(x);
        Ok(self.push(Tensor::new(oshape, out)?, Op::Narrow { x, axis, start }, rg))
    }

    /// Row gather: output row `i` is `table[ids[i]]`.
    pub fn embedding_lookup(&mut self, table: Var, ids: &[usize]) -> Result<Var> {
        let s = self.shape(table);
        if s.len() != 2 {
            return Err(TensorError::dim(
                "embedding_lookup",
                format!("table shape {s:?}"),
            ));
        }
        let (v, d) = (s[0], s[1]);
        if let Some(&bad) = ids.iter().find(|&&id| id >= v) {
            return Err(TensorError::Index {
                op: "embedding_lookup",
                id: bad,
                bound: v,
            });
        }
        let src = self.value(table).data();
        let mut out = Vec::with_capacity(ids.len() * d);
        for &id in ids {
            out.extend_from_slice(&src[id * d..(id + 1) * d]);
        }
        let rg = self.rg(table);
        Ok(self.push(
            Tensor::new(vec![ids.len(), d], out)?,
            Op::Gather {
                table,
                ids: ids.to_vec(),
            },
            rg,
        ))
    }

    /// Broadcasts a `[1, d]` (or `[d]`) row to `[times, d]`.
    pub fn repeat_rows(&mut self, x: Var, times: usize) -> Result<Var> {
        let s = self.shape(x);
        let d = match s {
            [d] => *d,
            [1, d] => *d,
            _ => {
                return Err(TensorError::dim(
                    "repeat_rows",
                    format!("expected a row, got {s:?}"),
                ))
            }
        };
        let row = self.value(x).data().to_vec();
        let mut out = Vec::with_capacity(times * d);
        for _ in 0..times {
            out.extend_from_slice(&row);
        }
        let rg = self.rg(x);
        Ok(self.push(Tensor::new(vec![times, d], out)?, Op::RepeatRows(x), rg))
    }

    /// Temporal convolution with zero "same" padding.
    ///
    /// `x` is `[T, C_in]`, `w` is `[K, C_in, C_out]` with odd `K`; the output
    /// is `[T, C_out]`. Tap `k` reads input row `t + k - K/2`.
    pub fn conv1d(&mut self, x: Var, w: Var) -> Result<Var> {
        let (sx, sw) = (self.shape(x).to_vec(), self.shape(w).to_vec());
        if sx.len() != 2 || sw.len() != 3 || sw[1] != sx[1] || sw[0] % 2 == 0 {
            return Err(TensorError::shapes("conv1d", &sx, &sw));
        }
        let (t_len, cin) = (sx[0], sx[1]);
        let (k_len, cout) = (sw[0], sw[2]);
        let pad = k_len / 2;
        let xd = self.value(x).data();
        let wd = self.value(w).data();
        let mut out = vec![F::zero(); t_len * cout];
        for t in 0..t_len {
            let orow = &mut out[t * cout..(t + 1) * cout];
            for k in 0..k_len {
                let Some(src) = (t + k).checked_sub(pad).filter(|&s| s < t_len) else {
                    continue;
                };
                let xrow = &xd[src * cin..(src + 1) * cin];
                let wk = &wd[k * cin * cout..(k + 1) * cin * cout];
                for (c, &xv) in xrow.iter().enumerate() {
                    if xv == F::zero() {
                        continue;
                    }
                    for (o, &wv) in orow.iter_mut().zip(&wk[c * cout..(c + 1) * cout]) {
                        *o += xv * wv;
                    }
                }
            }
        }
        let rg = self.rg(x) || self.rg(w);
        Ok(self.push(
            Tensor::new(vec![t_len, cout], out)?,
            Op::Conv1d { x, w, pad },
            rg,
        ))
    }

    /// Inverted dropout: zeroes each element with probability `p` and scales
    /// survivors by `1/(1-p)`. Identity when `p == 0`.
    pub fn dropout<R: Rng + ?Sized>(&mut self, x: Var, p: f64, rng: &mut R) -> Result<Var> {
        if !(0.0..1.0).contains(&p) {
            return Err(TensorError::dim(
                "dropout",
                format!("rate {p} not in [0,1)"),
            ));
        }
        if p == 0.0 {
            return Ok(x);
        }
        let keep = F::of(1.0 / (1.0 - p));
        let mask: Vec<F> = (0..self.value(x).numel())
            .map(|_| {
                if rng.gen::<f64>() < p {
                    F::zero()
                } else {
                    keep
                }
            })
            .collect();
        let data = self
            .value(x)
            .data()
            .iter()
            .zip(&mask)
            .map(|(&a, &m)| a * m)
            .collect();
        let t = Tensor::new(self.shape(x).to_vec(), data)?;
        let rg = self.rg(x);
        Ok(self.push(t, Op::Mask { x, mask }, rg))
    }

    // ---- reductions and losses -------------------------------------------

    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.value(x).sum();
        let rg = self.rg(x);
        self.push(Tensor::scalar(s), Op::Sum(x), rg)
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let n = self.value(x).numel().max(1);
        let s = self.value(x).sum() / F::of(n as f64);
        let rg = self.rg(x);
        self.push(Tensor::scalar(s), Op::Mean(x), rg)
    }

    /// Mean absolute error.
    pub fn l1_loss(&mut self, pred: Var, target: Var) -> Result<Var> {
        self.binary_same_shape("l1_loss", pred, target)?;
        let n = self.value(pred).numel().max(1);
        let s: F = self
            .value(pred)
            .data()
            .iter()
            .zip(self.value(target).data())
            .map(|(&p, &t)| (p - t).abs())
            .sum();
        let rg = self.rg(pred) || self.rg(target);
        Ok(self.push(
            Tensor::scalar(s / F::of(n as f64)),
            Op::L1 { pred, target },
            rg,
        ))
    }

    /// Mean squared error.
    pub fn mse_loss(&mut self, pred: Var, target: Var) -> Result<Var> {
        self.binary_same_shape("mse_loss", pred, target)?;
        let n = self.value(pred).numel().max(1);
        let s: F = self
            .value(pred)
            .data()
            .iter()
            .zip(self.value(target).data())
            .map(|(&p, &t)| (p - t) * (p - t))
            .sum();
        let rg = self.rg(pred) || self.rg(target);
        Ok(self.push(
            Tensor::scalar(s / F::of(n as f64)),
            Op::Mse { pred, target },
            rg,
        ))
    }

    /// Mean binary cross-entropy on logits, in the overflow-free form
    /// `max(x,0) - x·z + ln(1 + e^{-|x|})`.
    pub fn bce_with_logits(&mut self, logits: Var, targets: Var) -> Result<Var> {
        self.binary_same_shape("bce_with_logits", logits, targets)?;
        let n = self.value(logits).numel().max(1);
        let s: F = self
            .value(logits)
            .data()
            .iter()
            .zip(self.value(targets).data())
            .map(|(&x, &z)| x.max(F::zero()) - x * z + (-x.abs()).exp().ln_1p())
            .sum();
        let rg = self.rg(logits) || self.rg(targets);
        Ok(self.push(
            Tensor::scalar(s / F::of(n as f64)),
            Op::BceLogits { logits, targets },
            rg,
        ))
    }

    // ---- backward ------------------------------------------------------

    /// Reverse pass from a single-element `loss`. Gradients of earlier
    /// passes are discarded first.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.value(loss).numel() != 1 {
            return Err(TensorError::dim(
                "backward",
                format!("loss must have one element, shape {:?}", self.shape(loss)),
            ));
        }
        self.grads.iter_mut().for_each(|g| *g = None);
        self.grads[loss.0] = Some(vec![F::one()]);
        for i in (0..=loss.0).rev() {
            if !self.requires_grad[i] {
                continue;
            }
            let Some(g) = self.grads[i].take() else {
                continue;
            };
            self.propagate(i, &g);
            self.grads[i] = Some(g);
        }
        Ok(())
    }

    fn acc(&mut self, v: Var, f: impl FnOnce(&[Tensor<F>], &mut [F])) {
        if !self.requires_grad[v.0] {
            return;
        }
        let n = self.values[v.0].numel();
        let Tape { values, grads, .. } = self;
        let g = grads[v.0].get_or_insert_with(|| vec![F::zero(); n]);
        f(values, g);
    }

    fn propagate(&mut self, i: usize, g: &[F]) {
        let op = self.ops[i].clone();
        let out = Var(i);
        match op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (m, k) = (self.shape(a)[0], self.shape(a)[1]);
                let n = self.shape(b)[1];
                self.acc(a, |vals, ga| {
                    matmul_nt_acc(g, vals[b.0].data(), m, k, n, ga)
                });
                self.acc(b, |vals, gb| {
                    matmul_tn_acc(vals[a.0].data(), g, m, k, n, gb)
                });
            }
            Op::Add(a, b) => {
                self.acc(a, |_, ga| add_into(ga, g));
                self.acc(b, |_, gb| add_into(gb, g));
            }
            Op::AddBias(a, b) => {
                self.acc(a, |_, ga| add_into(ga, g));
                self.acc(b, |_, gb| {
                    let inner = gb.len();
                    if inner > 0 {
                        for chunk in g.chunks(inner) {
                            add_into(gb, chunk);
                        }
                    }
                });
            }
            Op::Sub(a, b) => {
                self.acc(a, |_, ga| add_into(ga, g));
                self.acc(b, |_, gb| gb.iter_mut().zip(g).for_each(|(x, &d)| *x -= d));
            }
            Op::Mul(a, b) => {
                self.acc(a, |vals, ga| {
                    for ((x, &d), &y) in ga.iter_mut().zip(g).zip(vals[b.0].data()) {
                        *x += d * y;
                    }
                });
                self.acc(b, |vals, gb| {
                    for ((x, &d), &y) in gb.iter_mut().zip(g).zip(vals[a.0].data()) {
                        *x += d * y;
                    }
                });
            }
            Op::ScaleShift(a, s) => {
                self.acc(a, |_, ga| {
                    ga.iter_mut().zip(g).for_each(|(x, &d)| *x += s * d)
                });
            }
            Op::Tanh(a) => self.acc(a, |vals, ga| {
                for ((x, &d), &y) in ga.iter_mut().zip(g).zip(vals[out.0].data()) {
                    *x += d * (F::one() - y * y);
                }
            }),
            Op::Sigmoid(a) => self.acc(a, |vals, ga| {
                for ((x, &d), &y) in ga.iter_mut().zip(g).zip(vals[out.0].data()) {
                    *x += d * y * (F::one() - y);
                }
            }),
            Op::Relu(a) => self.acc(a, |vals, ga| {
                for ((x, &d), &v) in ga.iter_mut().zip(g).zip(vals[a.0].data()) {
                    if v > F::zero() {
                        *x += d;
                    }
                }
            }),
            Op::Softmax { x, axis } => self.acc(x, |vals, gx| {
                let y = vals[out.0].data();
                let (outer, len, inner) = axis_extents(vals[out.0].shape(), axis);
                for o in 0..outer {
                    for ii in 0..inner {
                        let at = |j: usize| o * len * inner + j * inner + ii;
                        let dot: F = (0..len).map(|j| g[at(j)] * y[at(j)]).sum();
                        for j in 0..len {
                            gx[at(j)] += y[at(j)] * (g[at(j)] - dot);
                        }
                    }
                }
            }),
            Op::Concat { inputs, axis } => {
                let shape = self.values[i].shape().to_vec();
                let (outer, total, inner) = axis_extents(&shape, axis);
                let mut offset = 0;
                for v in inputs {
                    let len = self.shape(v)[axis];
                    self.acc(v, |_, gv| {
                        for o in 0..outer {
                            let src = o * total * inner + offset * inner;
                            let dst = o * len * inner;
                            add_into(&mut gv[dst..dst + len * inner], &g[src..src + len * inner]);
                        }
                    });
                    offset += len;
                }
            }
            Op::Narrow { x, axis, start } => {
                let len = self.values[i].shape()[axis];
                let (outer, full, inner) = axis_extents(self.shape(x), axis);
                self.acc(x, |_, gx| {
                    for o in 0..outer {
                        let dst = o * full * inner + start * inner;
                        let src = o * len * inner;
                        add_into(&mut gx[dst..dst + len * inner], &g[src..src + len * inner]);
                    }
                });
            }
            Op::Gather { table, ids } => {
                let d = self.shape(table)[1];
                self.acc(table, |_, gt| {
                    for (row, &id) in ids.iter().enumerate() {
                        add_into(&mut gt[id * d..(id + 1) * d], &g[row * d..(row + 1) * d]);
                    }
                });
            }
            Op::RepeatRows(x) => self.acc(x, |_, gx| {
                let d = gx.len();
                if d > 0 {
                    for chunk in g.chunks(d) {
                        add_into(gx, chunk);
                    }
                }
            }),
            Op::Transpose(a) => {
                let (m, n) = (self.shape(a)[0], self.shape(a)[1]);
                self.acc(a, |_, ga| {
                    for r in 0..m {
                        for c in 0..n {
                            ga[r * n + c] += g[c * m + r];
                        }
                    }
                });
            }
            Op::Reshape(a) => self.acc(a, |_, ga| add_into(ga, g)),
            Op::Conv1d { x, w, pad } => {
                let (t_len, cin) = (self.shape(x)[0], self.shape(x)[1]);
                let (k_len, cout) = (self.shape(w)[0], self.shape(w)[2]);
                let taps = |t: usize, k: usize| (t + k).checked_sub(pad).filter(|&s| s < t_len);
                self.acc(x, |vals, gx| {
                    let wd = vals[w.0].data();
                    for t in 0..t_len {
                        let grow = &g[t * cout..(t + 1) * cout];
                        for k in 0..k_len {
                            let Some(src) = taps(t, k) else { continue };
                            let wk = &wd[k * cin * cout..(k + 1) * cin * cout];
                            for c in 0..cin {
                                let mut s = F::zero();
                                for (&d, &wv) in grow.iter().zip(&wk[c * cout..(c + 1) * cout]) {
                                    s += d * wv;
                                }
                                gx[src * cin + c] += s;
                            }
                        }
                    }
                });
                self.acc(w, |vals, gw| {
                    let xd = vals[x.0].data();
                    for t in 0..t_len {
                        let grow = &g[t * cout..(t + 1) * cout];
                        for k in 0..k_len {
                            let Some(src) = taps(t, k) else { continue };
                            for c in 0..cin {
                                let xv = xd[src * cin + c];
                                if xv == F::zero() {
                                    continue;
                                }
                                let base = k * cin * cout + c * cout;
                                for (o, &d) in gw[base..base + cout].iter_mut().zip(grow) {
                                    *o += xv * d;
                                }
                            }
                        }
                    }
                });
            }
            Op::Mask { x, mask } => self.acc(x, |_, gx| {
                for ((a, &d), &m) in gx.iter_mut().zip(g).zip(&mask) {
                    *a += d * m;
                }
            }),
            Op::Sum(x) => self.acc(x, |_, gx| gx.iter_mut().for_each(|a| *a += g[0])),
            Op::Mean(x) => self.acc(x, |_, gx| {
                let s = g[0] / F::of(gx.len().max(1) as f64);
                gx.iter_mut().for_each(|a| *a += s);
            }),
            Op::L1 { pred, target } => {
                let n = F::of(self.value(pred).numel().max(1) as f64);
                let signs: Vec<F> = self
                    .value(pred)
                    .data()
                    .iter()
                    .zip(self.value(target).data())
                    .map(|(&p, &t)| sign(p - t) * g[0] / n)
                    .collect();
                self.acc(pred, |_, gp| add_into(gp, &signs));
                self.acc(target, |_, gt| {
                    gt.iter_mut().zip(&signs).for_each(|(a, &s)| *a -= s)
                });
            }
            Op::Mse { pred, target } => {
                let n = F::of(self.value(pred).numel().max(1) as f64);
                let two = F::of(2.0);
                let diffs: Vec<F> = self
                    .value(pred)
                    .data()
                    .iter()
                    .zip(self.value(target).data())
                    .map(|(&p, &t)| two * (p - t) * g[0] / n)
                    .collect();
                self.acc(pred, |_, gp| add_into(gp, &diffs));
                self.acc(target, |_, gt| {
                    gt.iter_mut().zip(&diffs).for_each(|(a, &s)| *a -= s)
                });
            }
            Op::BceLogits { logits, targets } => {
                let n = F::of(self.value(logits).numel().max(1) as f64);
                let xs = self.value(logits).data().to_vec();
                let zs = self.value(targets).data().to_vec();
                self.acc(logits, |_, gl| {
                    for ((a, &x), &z) in gl.iter_mut().zip(&xs).zip(&zs) {
                        *a += (sigmoid(x) - z) * g[0] / n;
                    }
                });
                self.acc(targets, |_, gz| {
                    for (a, &x) in gz.iter_mut().zip(&xs) {
                        *a -= x * g[0] / n;
                    }
                });
            }
        }
    }
}

#[inline]
fn add_into<F: Real>(dst: &mut [F], src: &[F]) {
    for (d, &s) in dst.iter_mut().zip(src) {
        *d += s;
    }
}

#[inline]
fn sign<F: Real>(x: F) -> F {
    if x > F::zero() {
        F::one()
    } else if x < F::zero() {
        -F::one()
    } else {
        F::zero()
    }
}

#[inline]
pub(crate) fn sigmoid<F: Real>(x: F) -> F {
    if x >= F::zero() {
        F::one() / (F::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (F::one() + e)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(shape: &[usize], data: &[f64]) -> Tensor<f64> {
        Tensor::from_f64(shape.to_vec(), data).unwrap()
    }

    #[test]
    fn identity_matmul() {
        let mut tape = Tape::<f64>::new();
        let i2 = tape.constant(Tensor::eye(2));
        let m = tape.constant(t(&[2, 2], &[1.0, 2.0, 3.0, 4.0]));
        let out = tape.matmul(i2, m).unwrap();
        assert_eq!(tape.value(out).data(), &[1.0, 2.0, 3.0, 4.0]);
    }

    #[test]
    fn zero_matrix_annihilates() {
        let mut tape = Tape::<f64>::new();
        let i2 = tape.constant(Tensor::eye(2));
        let z = tape.constant(Tensor::zeros(vec![2, 2]));
        let out = tape.matmul(i2, z).unwrap();
        assert!(tape.value(out).data().iter().all(|&x| x == 0.0));
    }

    #[test]
    fn matmul_shape_error_names_both_shapes() {
        let mut tape = Tape::<f64>::new();
        let a = tape.constant(Tensor::zeros(vec![2, 3]));
        let b = tape.constant(Tensor::zeros(vec![2, 3]));
        let msg = tape.matmul(a, b).unwrap_err().to_string();
        assert!(msg.contains("[2, 3]"), "{msg}");
    }

    #[test]
    fn softmax_examples() {
        let mut tape = Tape::<f64>::new();
        let x = tape.constant(t(&[3], &[0.0, 0.0, 0.0]));
        let y = tape.softmax(x, 0).unwrap();
        for &v in tape.value(y).data() {
            assert!((v - 1.0 / 3.0).abs() < 1e-15);
        }
        for c in [-50.0, 0.0, 3.5, 700.0] {
            let x = tape.constant(t(&[2], &[c, c]));
            let y = tape.softmax(x, 0).unwrap();
            assert_eq!(tape.value(y).data(), &[0.5, 0.5]);
        }
        let x = tape.constant(t(&[2], &[2f64.ln(), 0.0]));
        let y = tape.softmax(x, 0).unwrap();
        let v = tape.value(y).data();
        assert!((v[0] - 2.0 / 3.0).abs() < 1e-15 && (v[1] - 1.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn softmax_rejects_nan() {
        let mut tape = Tape::<f64>::new();
        let x = tape.constant(t(&[2], &[f64::NAN, 0.0]));
        assert!(matches!(
            tape.softmax(x, 0),
            Err(TensorError::Numeric { .. })
        ));
    }

    #[test]
    fn concat_examples() {
        let mut tape = Tape::<f64>::new();
        let a = tape.constant(t(&[2], &[1.0, 2.0]));
        let b = tape.constant(t(&[1], &[3.0]));
        let e = tape.constant(t(&[0], &[]));
        let ab = tape.concat(&[a, b], 0).unwrap();
        assert_eq!(tape.value(ab).data(), &[1.0, 2.0, 3.0]);
        let ae = tape.concat(&[a, e], 0).unwrap();
        assert_eq!(tape.value(ae), tape.value(a));

        let m = tape.constant(Tensor::zeros(vec![2, 3]));
        let n = tape.constant(Tensor::zeros(vec![3, 3]));
        assert!(tape.concat(&[m, n], 1).is_err());
        assert!(tape.concat(&[m, n], 0).is_ok());
    }

    #[test]
    fn embedding_lookup_examples() {
        let mut tape = Tape::<f64>::new();
        let table = tape.param(Tensor::eye(3));
        let out = tape.embedding_lookup(table, &[2]).unwrap();
        assert_eq!(tape.value(out).data(), &[0.0, 0.0, 1.0]);
        let empty = tape.embedding_lookup(table, &[]).unwrap();
        assert_eq!(tape.shape(empty), &[0, 3]);
        match tape.embedding_lookup(table, &[1, 3]) {
            Err(TensorError::Index { id, bound, .. }) => assert_eq!((id, bound), (3, 3)),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn duplicate_ids_accumulate_gradient() {
        let mut tape = Tape::<f64>::new();
        let table = tape.param(t(&[2, 2], &[0.1, 0.2, 0.3, 0.4]));
        let rows = tape.embedding_lookup(table, &[0, 0]).unwrap();
        let w = tape.constant(t(&[2, 2], &[1.0, 2.0, 3.0, 4.0]));
        let prod = tape.mul(rows, w).unwrap();
        let loss = tape.sum(prod);
        tape.backward(loss).unwrap();
        let g = tape.grad(table).unwrap();
        assert_eq!(g.data(), &[4.0, 6.0, 0.0, 0.0]);
    }

    #[test]
    fn fan_out_sums_path_gradients() {
        // y = x*x + 3x  =>  dy/dx = 2x + 3
        let mut tape = Tape::<f64>::new();
        let x = tape.param(t(&[1], &[1.5]));
        let sq = tape.mul(x, x).unwrap();
        let lin = tape.scale(x, 3.0);
        let y = tape.add(sq, lin).unwrap();
        tape.backward(y).unwrap();
        assert_eq!(tape.grad(x).unwrap().data(), &[6.0]);
    }

    #[test]
    fn constants_receive_no_gradient() {
        let mut tape = Tape::<f64>::new();
        let x = tape.param(t(&[2], &[1.0, 2.0]));
        let c = tape.constant(t(&[2], &[3.0, 4.0]));
        let y = tape.mul(x, c).unwrap();
        let s = tape.sum(y);
        tape.backward(s).unwrap();
        assert!(tape.grad(c).is_none());
        assert_eq!(tape.grad(x).unwrap().data(), &[3.0, 4.0]);
    }

    #[test]
    fn dropout_zero_rate_is_identity_and_eval_masks_scale() {
        use rand::SeedableRng;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(1);
        let mut tape = Tape::<f64>::new();
        let x = tape.param(Tensor::full(vec![1000], 1.0));
        assert_eq!(tape.dropout(x, 0.0, &mut rng).unwrap(), x);
        let y = tape.dropout(x, 0.5, &mut rng).unwrap();
        let v = tape.value(y).data();
        assert!(v.iter().all(|&a| a == 0.0 || a == 2.0));
        let kept = v.iter().filter(|&&a| a > 0.0).count();
        assert!((400..600).contains(&kept));
    }

    #[test]
    fn bce_of_saturated_correct_logits_is_zero() {
        let mut tape = Tape::<f64>::new();
        let x = tape.constant(t(&[2], &[-1000.0, 1000.0]));
        let z = tape.constant(t(&[2], &[0.0, 1.0]));
        let l = tape.bce_with_logits(x, z).unwrap();
        assert_eq!(tape.value(l).data(), &[0.0]);
    }

    #[test]
    fn backward_requires_scalar() {
        let mut tape = Tape::<f64>::new();
        let x = tape.param(Tensor::zeros(vec![2]));
        assert!(tape.backward(x).is_err());
    }
}
