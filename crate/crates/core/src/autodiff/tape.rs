use rand::Rng;

use super::{AutodiffError, ParamSet, Real, Tensor};

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

/// Whether stochastic layers are active.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

enum Op<T: Real> {
    Leaf,
    Param(usize),
    Affine {
        x: Var,
        w: Var,
        b: Var,
    },
    Conv {
        x: Var,
        k: Var,
        b: Var,
        width: usize,
    },
    MaxPool {
        x: Var,
        argmax: Vec<usize>,
    },
    Tanh {
        x: Var,
    },
    Dropout {
        x: Var,
        mask: Vec<T>,
    },
    Hadamard {
        q: Var,
        d: Var,
    },
    Reshape {
        x: Var,
    },
    Add {
        a: Var,
        b: Var,
    },
    Scale {
        x: Var,
        factor: T,
    },
    Stack {
        xs: Vec<Var>,
    },
    SoftmaxNll {
        x: Var,
        probs: Vec<f64>,
    },
    Dot {
        x: Var,
        weights: Vec<T>,
    },
}

enum Params<'p, T: Real> {
    None,
    Shared(&'p ParamSet<T>),
    Exclusive(&'p mut ParamSet<T>),
}

impl<T: Real> Params<'_, T> {
    fn get(&self) -> Option<&ParamSet<T>> {
        match self {
            Params::None => None,
            Params::Shared(p) => Some(p),
            Params::Exclusive(p) => Some(p),
        }
    }
}

struct Node<T: Real> {
    /// `None` for parameter leaves, whose value lives in the [`ParamSet`].
    value: Option<Tensor<T>>,
    op: Op<T>,
    requires_grad: bool,
}

/// Records a forward computation for one reverse sweep.
///
/// Parameters are read in place from the borrowed [`ParamSet`]; after
/// [`backward`](Tape::backward) their gradient slots hold the accumulated
/// gradients.
pub struct Tape<'p, T: Real = f32> {
    params: Params<'p, T>,
    nodes: Vec<Node<T>>,
    backward_done: bool,
}

impl<T: Real> Default for Tape<'_, T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<'p, T: Real> Tape<'p, T> {
    /// A tape with no parameter set; only [`leaf`](Tape::leaf) inputs.
    pub fn new() -> Self {
        Tape {
            params: Params::None,
            nodes: Vec::new(),
            backward_done: false,
        }
    }

    /// A tape that can write parameter gradients on [`backward`](Tape::backward).
    pub fn with_params(params: &'p mut ParamSet<T>) -> Self {
        Tape {
            params: Params::Exclusive(params),
            nodes: Vec::new(),
            backward_done: false,
        }
    }

    /// A forward-only tape over shared parameters. `backward` is refused
    /// when any parameter was used.
    pub fn with_shared_params(params: &'p ParamSet<T>) -> Self {
        Tape {
            params: Params::Shared(params),
            nodes: Vec::new(),
            backward_done: false,
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Clears all recorded operations so the tape can be reused.
    pub fn reset(&mut self) {
        self.nodes.clear();
        self.backward_done = false;
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        let node = &self.nodes[v.0];
        match (&node.value, &node.op) {
            (Some(t), _) => t,
            (None, Op::Param(id)) => self
                .params
                .get()
                .expect("parameter leaf without a parameter set")
                .by_id(*id),
            (None, _) => unreachable!("non-parameter node without a value"),
        }
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.value(v).shape()
    }

    /// Scalar value of a one-element node.
    pub fn scalar(&self, v: Var) -> Result<T, AutodiffError> {
        self.value(v)
            .item()
            .ok_or_else(|| AutodiffError::NotScalar {
                shape: self.shape(v).to_vec(),
            })
    }

    /// Gradient of an owned leaf after [`backward`](Tape::backward).
    pub fn grad(&self, v: Var) -> Option<&[T]> {
        self.nodes[v.0].value.as_ref().and_then(|t| t.grad())
    }

    fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, inputs: &[Var]) -> Var {
        let requires_grad = inputs.iter().any(|&i| self.requires_grad(i));
        self.nodes.push(Node {
            value: Some(value),
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    /// Records an input tensor. Its `requires_grad` flag decides whether a
    /// gradient is computed for it.
    pub fn leaf(&mut self, tensor: Tensor<T>) -> Var {
        let requires_grad = tensor.requires_grad();
        self.nodes.push(Node {
            value: Some(tensor),
            op: Op::Leaf,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    /// Records a reference to a named parameter of the borrowed set.
    pub fn param(&mut self, name: &str) -> Result<Var, AutodiffError> {
        let id = self
            .params
            .get()
            .and_then(|p| p.id(name))
            .ok_or_else(|| AutodiffError::UnknownParameter(name.to_string()))?;
        self.nodes.push(Node {
            value: None,
            op: Op::Param(id),
            requires_grad: true,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    /// `y = x W + b` with `x` read as a flat vector of length `in`,
    /// `W: [in, out]` and `b: [out]`.
    pub fn affine(&mut self, x: Var, w: Var, b: Var) -> Result<Var, AutodiffError> {
        let (xt, wt, bt) = (self.value(x), self.value(w), self.value(b));
        let n_in = xt.numel();
        if wt.shape().len() != 2 || wt.shape()[0] != n_in {
            return Err(mismatch("affine", xt.shape(), wt.shape()));
        }
        let n_out = wt.shape()[1];
        if bt.numel() != n_out {
            return Err(mismatch("affine", wt.shape(), bt.shape()));
        }
        let mut acc: Vec<f64> = bt.data().iter().map(|v| v.to_f64()).collect();
        let wd = wt.data();
        for (i, xv) in xt.data().iter().enumerate() {
            let xv = xv.to_f64();
            if xv == 0.0 {
                continue;
            }
            let row = &wd[i * n_out..(i + 1) * n_out];
            for (a, wv) in acc.iter_mut().zip(row) {
                *a += xv * wv.to_f64();
            }
        }
        let out = Tensor::vector(acc.into_iter().map(T::from_f64).collect());
        Ok(self.push(out, Op::Affine { x, w, b }, &[x, w, b]))
    }

    /// Valid 1-D convolution along the sequence axis, stride 1. `x: [c, L]`,
    /// `kernels: [c, width, F]`, `bias: [F]`; output `[F, L - width + 1]`.
    /// Kernels span all `c` input channels.
    pub fn conv_seq(&mut self, x: Var, kernels: Var, bias: Var) -> Result<Var, AutodiffError> {
        let (xt, kt, bt) = (self.value(x), self.value(kernels), self.value(bias));
        let (xs, ks) = (xt.shape(), kt.shape());
        if xs.len() != 2 || ks.len() != 3 || ks[0] != xs[0] {
            return Err(mismatch("conv_seq", xs, ks));
        }
        let (channels, len) = (xs[0], xs[1]);
        let (width, filters) = (ks[1], ks[2]);
        if bt.numel() != filters {
            return Err(mismatch("conv_seq", ks, bt.shape()));
        }
        if len < width {
            return Err(AutodiffError::SequenceTooShort {
                op: "conv_seq",
                len,
                window: width,
            });
        }
        let out_len = len - width + 1;
        // Position-major accumulator so each kernel row is added contiguously.
        let mut acc = vec![0f64; out_len * filters];
        let (xd, kd) = (xt.data(), kt.data());
        for c in 0..channels {
            for l in 0..len {
                let xv = xd[c * len + l].to_f64();
                if xv == 0.0 {
                    continue;
                }
                for j in 0..width.min(l + 1) {
                    let t = l - j;
                    if t >= out_len {
                        continue;
                    }
                    let row = &kd[(c * width + j) * filters..(c * width + j + 1) * filters];
                    let dst = &mut acc[t * filters..(t + 1) * filters];
                    for (a, k) in dst.iter_mut().zip(row) {
                        *a += xv * k.to_f64();
                    }
                }
            }
        }
        let bd = bt.data();
        let mut out = vec![T::zero(); filters * out_len];
        for t in 0..out_len {
            for f in 0..filters {
                out[f * out_len + t] = T::from_f64(acc[t * filters + f] + bd[f].to_f64());
            }
        }
        let out = Tensor::from_vec(vec![filters, out_len], out)?;
        Ok(self.push(
            out,
            Op::Conv {
                x,
                k: kernels,
                b: bias,
                width,
            },
            &[x, kernels, bias],
        ))
    }

    /// Per-channel sliding max, stride 1. `x: [c, L]` gives
    /// `[c, L - window + 1]`. Ties resolve to the earliest position.
    pub fn maxpool_seq(&mut self, x: Var, window: usize) -> Result<Var, AutodiffError> {
        let xt = self.value(x);
        let xs = xt.shape();
        if xs.len() != 2 || window == 0 {
            return Err(mismatch("maxpool_seq", xs, &[window]));
        }
        let (channels, len) = (xs[0], xs[1]);
        if len < window {
            return Err(AutodiffError::SequenceTooShort {
                op: "maxpool_seq",
                len,
                window,
            });
        }
        let out_len = len - window + 1;
        let xd = xt.data();
        let mut out = Vec::with_capacity(channels * out_len);
        let mut argmax = Vec::with_capacity(channels * out_len);
        for c in 0..channels {
            let row = &xd[c * len..(c + 1) * len];
            for t in 0..out_len {
                let mut best = t;
                for p in t + 1..t + window {
                    if row[p] > row[best] {
                        best = p;
                    }
                }
                out.push(row[best]);
                argmax.push(c * len + best);
            }
        }
        let out = Tensor::from_vec(vec![channels, out_len], out)?;
        Ok(self.push(out, Op::MaxPool { x, argmax }, &[x]))
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        let xt = self.value(x);
        let data = xt.data().iter().map(|v| v.tanh()).collect();
        let out = Tensor::from_vec(xt.shape().to_vec(), data).expect("same shape");
        self.push(out, Op::Tanh { x }, &[x])
    }

    /// Inverted dropout: in training mode each element is zeroed with
    /// probability `rate` and survivors are scaled by `1 / (1 - rate)`; in
    /// evaluation mode (or at rate 0) this returns `x` unchanged.
    pub fn dropout<R: Rng + ?Sized>(
        &mut self,
        x: Var,
        rate: f64,
        mode: Mode,
        rng: &mut R,
    ) -> Result<Var, AutodiffError> {
        if !(0.0..1.0).contains(&rate) {
            return Err(AutodiffError::InvalidRate(rate));
        }
        if mode == Mode::Eval || rate == 0.0 {
            return Ok(x);
        }
        let keep = T::from_f64(1.0 / (1.0 - rate));
        let xt = self.value(x);
        let mask: Vec<T> = (0..xt.numel())
            .map(|_| {
                if rng.random::<f64>() < rate {
                    T::zero()
                } else {
                    keep
                }
            })
            .collect();
        let data = xt.data().iter().zip(&mask).map(|(&v, &m)| v * m).collect();
        let out = Tensor::from_vec(xt.shape().to_vec(), data)?;
        Ok(self.push(out, Op::Dropout { x, mask }, &[x]))
    }

    /// Multiplies every column of `d: [c, M]` elementwise by `q: [c, 1]`.
    pub fn hadamard_broadcast(&mut self, q: Var, d: Var) -> Result<Var, AutodiffError> {
        let (qt, dt) = (self.value(q), self.value(d));
        let ds = dt.shape();
        if ds.len() != 2 || qt.numel() != ds[0] {
            return Err(mismatch("hadamard_broadcast", qt.shape(), ds));
        }
        let (channels, cols) = (ds[0], ds[1]);
        let (qd, dd) = (qt.data(), dt.data());
        let mut out = Vec::with_capacity(channels * cols);
        for c in 0..channels {
            out.extend(dd[c * cols..(c + 1) * cols].iter().map(|&v| v * qd[c]));
        }
        let out = Tensor::from_vec(ds.to_vec(), out)?;
        Ok(self.push(out, Op::Hadamard { q, d }, &[q, d]))
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var, AutodiffError> {
        let out = self.value(x).clone().with_requires_grad(false);
        let out = out.reshaped(shape.to_vec())?;
        Ok(self.push(out, Op::Reshape { x }, &[x]))
    }

    /// Flattens to a vector.
    pub fn flatten(&mut self, x: Var) -> Result<Var, AutodiffError> {
        let n = self.value(x).numel();
        self.reshape(x, &[n])
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, AutodiffError> {
        let (at, bt) = (self.value(a), self.value(b));
        if at.shape() != bt.shape() {
            return Err(mismatch("add", at.shape(), bt.shape()));
        }
        let data = at
            .data()
            .iter()
            .zip(bt.data())
            .map(|(&x, &y)| x + y)
            .collect();
        let out = Tensor::from_vec(at.shape().to_vec(), data)?;
        Ok(self.push(out, Op::Add { a, b }, &[a, b]))
    }

    pub fn scale(&mut self, x: Var, factor: T) -> Var {
        let xt = self.value(x);
        let data = xt.data().iter().map(|&v| v * factor).collect();
        let out = Tensor::from_vec(xt.shape().to_vec(), data).expect("same shape");
        self.push(out, Op::Scale { x, factor }, &[x])
    }

    /// Concatenates one-element nodes into a vector.
    pub fn stack(&mut self, xs: &[Var]) -> Result<Var, AutodiffError> {
        let mut data = Vec::with_capacity(xs.len());
        for &x in xs {
            data.push(self.scalar(x)?);
        }
        let out = Tensor::from_vec(vec![xs.len()], data)?;
        Ok(self.push(out, Op::Stack { xs: xs.to_vec() }, xs))
    }

    /// Negative log of the softmax probability of index 0:
    /// `-ln(exp(s_0) / sum_k exp(s_k))`.
    pub fn softmax_nll(&mut self, scores: Var) -> Result<Var, AutodiffError> {
        let st = self.value(scores);
        if st.shape().len() != 1 {
            return Err(mismatch("softmax_nll", st.shape(), &[st.numel()]));
        }
        let s: Vec<f64> = st.data().iter().map(|v| v.to_f64()).collect();
        let probs = softmax(&s);
        let loss = -log_softmax_first(&s);
        let out = Tensor::scalar(T::from_f64(loss));
        Ok(self.push(out, Op::SoftmaxNll { x: scores, probs }, &[scores]))
    }

    /// `sum_i x_i * weights_i`, a scalar.
    pub fn dot(&mut self, x: Var, weights: &[T]) -> Result<Var, AutodiffError> {
        let xt = self.value(x);
        if xt.numel() != weights.len() {
            return Err(mismatch("dot", xt.shape(), &[weights.len()]));
        }
        let s: f64 = xt
            .data()
            .iter()
            .zip(weights)
            .map(|(a, b)| a.to_f64() * b.to_f64())
            .sum();
        let out = Tensor::scalar(T::from_f64(s));
        Ok(self.push(
            out,
            Op::Dot {
                x,
                weights: weights.to_vec(),
            },
            &[x],
        ))
    }

    /// Reverse sweep from a scalar `loss`. Gradients of owned leaves are
    /// stored on the tape; gradients of parameters are added into the
    /// parameter set's gradient slots. Errors if called twice without
    /// [`reset`](Tape::reset).
    pub fn backward(&mut self, loss: Var) -> Result<(), AutodiffError> {
        if self.backward_done {
            return Err(AutodiffError::AlreadyBackward);
        }
        let shape = self.shape(loss).to_vec();
        if shape.iter().product::<usize>() != 1 {
            return Err(AutodiffError::NotScalar { shape });
        }
        let uses_params = self.nodes.iter().any(|n| matches!(n.op, Op::Param(_)));
        if uses_params && matches!(self.params, Params::Shared(_)) {
            return Err(AutodiffError::ReadOnlyParams);
        }
        self.backward_done = true;

        let mut grads: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(vec![1.0]);
        let mut param_grads: Vec<(usize, Vec<f64>)> = Vec::new();
        let mut leaf_grads: Vec<(usize, Vec<f64>)> = Vec::new();

        for i in (0..=loss.0).rev() {
            let Some(dy) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            if !node.requires_grad {
                continue;
            }
            match &node.op {
                Op::Leaf => leaf_grads.push((i, dy)),
                Op::Param(id) => param_grads.push((*id, dy)),
                Op::Affine { x, w, b } => self.affine_backward(&mut grads, &dy, *x, *w, *b),
                Op::Conv { x, k, b, width } => {
                    self.conv_backward(&mut grads, &dy, *x, *k, *b, *width)
                }
                Op::MaxPool { x, argmax } => {
                    if self.requires_grad(*x) {
                        let g = slot(&mut grads, *x, self.value(*x).numel());
                        for (&src, &d) in argmax.iter().zip(&dy) {
                            g[src] += d;
                        }
                    }
                }
                Op::Tanh { x } => {
                    let y = self.nodes[i].value.as_ref().expect("tanh output").data();
                    let g = slot(&mut grads, *x, y.len());
                    for ((g, &y), &d) in g.iter_mut().zip(y).zip(&dy) {
                        let y = y.to_f64();
                        *g += (1.0 - y * y) * d;
                    }
                }
                Op::Dropout { x, mask } => {
                    let g = slot(&mut grads, *x, mask.len());
                    for ((g, m), &d) in g.iter_mut().zip(mask).zip(&dy) {
                        *g += m.to_f64() * d;
                    }
                }
                Op::Hadamard { q, d } => self.hadamard_backward(&mut grads, &dy, *q, *d),
                Op::Reshape { x } => {
                    let g = slot(&mut grads, *x, dy.len());
                    add_into(g, &dy);
                }
                Op::Add { a, b } => {
                    for v in [*a, *b] {
                        if self.requires_grad(v) {
                            add_into(slot(&mut grads, v, dy.len()), &dy);
                        }
                    }
                }
                Op::Scale { x, factor } => {
                    let f = factor.to_f64();
                    let g = slot(&mut grads, *x, dy.len());
                    for (g, &d) in g.iter_mut().zip(&dy) {
                        *g += f * d;
                    }
                }
                Op::Stack { xs } => {
                    for (&x, &d) in xs.iter().zip(&dy) {
                        if self.requires_grad(x) {
                            slot(&mut grads, x, 1)[0] += d;
                        }
                    }
                }
                Op::SoftmaxNll { x, probs } => {
                    let g = slot(&mut grads, *x, probs.len());
                    for (k, (g, p)) in g.iter_mut().zip(probs).enumerate() {
                        let target = if k == 0 { 1.0 } else { 0.0 };
                        *g += (p - target) * dy[0];
                    }
                }
                Op::Dot { x, weights } => {
                    let g = slot(&mut grads, *x, weights.len());
                    for (g, w) in g.iter_mut().zip(weights) {
                        *g += w.to_f64() * dy[0];
                    }
                }
            }
        }

        for (i, g) in leaf_grads {
            let g: Vec<T> = g.into_iter().map(T::from_f64).collect();
            self.nodes[i]
                .value
                .as_mut()
                .expect("leaf value")
                .accumulate_grad(&g);
        }
        if let Params::Exclusive(params) = &mut self.params {
            for (id, g) in param_grads {
                let g: Vec<T> = g.into_iter().map(T::from_f64).collect();
                params.by_id_mut(id).accumulate_grad(&g);
            }
        }
        Ok(())
    }

    fn affine_backward(&self, grads: &mut [Option<Vec<f64>>], dy: &[f64], x: Var, w: Var, b: Var) {
        let (xd, wd) = (self.value(x).data(), self.value(w).data());
        let n_out = dy.len();
        if self.requires_grad(b) {
            add_into(slot(grads, b, n_out), dy);
        }
        if self.requires_grad(w) {
            let g = slot(grads, w, wd.len());
            for (i, xv) in xd.iter().enumerate() {
                let xv = xv.to_f64();
                if xv == 0.0 {
                    continue;
                }
                for (g, &d) in g[i * n_out..(i + 1) * n_out].iter_mut().zip(dy) {
                    *g += xv * d;
                }
            }
        }
        if self.requires_grad(x) {
            let g = slot(grads, x, xd.len());
            for (i, g) in g.iter_mut().enumerate() {
                let row = &wd[i * n_out..(i + 1) * n_out];
                *g += row.iter().zip(dy).map(|(w, d)| w.to_f64() * d).sum::<f64>();
            }
        }
    }

    fn conv_backward(
        &self,
        grads: &mut [Option<Vec<f64>>],
        dy: &[f64],
        x: Var,
        k: Var,
        b: Var,
        width: usize,
    ) {
        let (xt, kt) = (self.value(x), self.value(k));
        let (channels, len) = (xt.shape()[0], xt.shape()[1]);
        let filters = kt.shape()[2];
        let out_len = len - width + 1;
        let mut dy_t = vec![0f64; out_len * filters];
        for f in 0..filters {
            for t in 0..out_len {
                dy_t[t * filters + f] = dy[f * out_len + t];
            }
        }
        if self.requires_grad(b) {
            let g = slot(grads, b, filters);
            for t in 0..out_len {
                add_into(g, &dy_t[t * filters..(t + 1) * filters]);
            }
        }
        let (xd, kd) = (xt.data(), kt.data());
        if self.requires_grad(k) {
            let g = slot(grads, k, kd.len());
            for c in 0..channels {
                for l in 0..len {
                    let xv = xd[c * len + l].to_f64();
                    if xv == 0.0 {
                        continue;
                    }
                    for j in 0..width.min(l + 1) {
                        let t = l - j;
                        if t >= out_len {
                            continue;
                        }
                        let row = &mut g[(c * width + j) * filters..(c * width + j + 1) * filters];
                        for (g, &d) in row.iter_mut().zip(&dy_t[t * filters..(t + 1) * filters]) {
                            *g += xv * d;
                        }
                    }
                }
            }
        }
        if self.requires_grad(x) {
            let g = slot(grads, x, xd.len());
            for c in 0..channels {
                for l in 0..len {
                    let mut s = 0f64;
                    for j in 0..width.min(l + 1) {
                        let t = l - j;
                        if t >= out_len {
                            continue;
                        }
                        let row = &kd[(c * width + j) * filters..(c * width + j + 1) * filters];
                        s += row
                            .iter()
                            .zip(&dy_t[t * filters..(t + 1) * filters])
                            .map(|(k, d)| k.to_f64() * d)
                            .sum::<f64>();
                    }
                    g[c * len + l] += s;
                }
            }
        }
    }

    fn hadamard_backward(&self, grads: &mut [Option<Vec<f64>>], dy: &[f64], q: Var, d: Var) {
        let (qt, dt) = (self.value(q), self.value(d));
        let (channels, cols) = (dt.shape()[0], dt.shape()[1]);
        let (qd, dd) = (qt.data(), dt.data());
        if self.requires_grad(q) {
            let g = slot(grads, q, channels);
            for (c, g) in g.iter_mut().enumerate() {
                *g += (0..cols)
                    .map(|m| dy[c * cols + m] * dd[c * cols + m].to_f64())
                    .sum::<f64>();
            }
        }
        if self.requires_grad(d) {
            let g = slot(grads, d, dd.len());
            for c in 0..channels {
                let qv = qd[c].to_f64();
                for m in 0..cols {
                    g[c * cols + m] += qv * dy[c * cols + m];
                }
            }
        }
    }
}

fn mismatch(op: &'static str, left: &[usize], right: &[usize]) -> AutodiffError {
    AutodiffError::ShapeMismatch {
        op,
        left: left.to_vec(),
        right: right.to_vec(),
    }
}

fn slot(grads: &mut [Option<Vec<f64>>], v: Var, len: usize) -> &mut Vec<f64> {
    grads[v.0].get_or_insert_with(|| vec![0.0; len])
}

fn add_into(dst: &mut [f64], src: &[f64]) {
    for (a, b) in dst.iter_mut().zip(src) {
        *a += b;
    }
}

/// Numerically stable softmax.
pub fn softmax(scores: &[f64]) -> Vec<f64> {
    let max = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = scores.iter().map(|s| (s - max).exp()).collect();
    let z: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / z).collect()
}

fn log_softmax_first(scores: &[f64]) -> f64 {
    let max = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let z: f64 = scores.iter().map(|s| (s - max).exp()).sum();
    scores[0] - max - z.ln()
}
