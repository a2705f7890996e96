//! Reverse-mode autodiff tape.
//!
//! A tape is built per forward pass: parents are always created before
//! children, so a single reverse sweep over creation order is a valid
//! topological traversal. Parameters are bound by value (copied in) and
//! their gradients are handed back to the store afterwards.

use crate::error::{Error, Result};
use crate::tensor::params::{ParamId, ParamStore};
use crate::tensor::Tensor;

const LN_EPSILON: f64 = 1e-12;

/// Handle to a node on the tape.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

enum Op {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    AddRow(Var, Var),
    Matmul(Var, Var),
    Transpose(Var),
    Linear {
        x: Var,
        w: Var,
        b: Option<Var>,
    },
    LayerNorm {
        x: Var,
        gain: Var,
        bias: Var,
        normalized: Vec<f64>,
        inv_std: Vec<f64>,
    },
    Softmax {
        x: Var,
        axis: usize,
    },
    Gelu(Var),
    Conv1d {
        x: Var,
        kernel: Var,
        bias: Option<Var>,
    },
    Reshape(Var),
    Concat {
        axis: usize,
        parts: Vec<Var>,
    },
    Slice {
        x: Var,
        axis: usize,
        start: usize,
    },
    Mean(Var),
    Sum(Var),
    GatherRows {
        table: Var,
        indices: Vec<usize>,
    },
}

struct Node {
    tensor: Tensor,
    op: Op,
}

/// One forward pass worth of computation.
pub struct Tape {
    nodes: Vec<Node>,
    param_bindings: Vec<(ParamId, Var)>,
    /// Eval tapes skip gradient bookkeeping entirely.
    grad_enabled: bool,
}

impl Tape {
    pub fn new() -> Self {
        Self {
            nodes: Vec::new(),
            param_bindings: Vec::new(),
            grad_enabled: true,
        }
    }

    /// A tape that never tracks gradients (inference).
    pub fn new_eval() -> Self {
        Self {
            nodes: Vec::new(),
            param_bindings: Vec::new(),
            grad_enabled: false,
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].tensor
    }

    pub fn data(&self, v: Var) -> &[f64] {
        &self.nodes[v.0].tensor.data
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        &self.nodes[v.0].tensor.shape
    }

    pub fn scalar_value(&self, v: Var) -> Result<f64> {
        let t = self.value(v);
        if !t.is_scalar() {
            return Err(Error::BadOp {
                op: "scalar_value",
                message: format!("expected a scalar, got shape {:?}", t.shape),
            });
        }
        Ok(t.data[0])
    }

    pub fn grad(&self, v: Var) -> Option<&[f64]> {
        self.nodes[v.0].tensor.grad.as_deref()
    }

    fn push(&mut self, mut tensor: Tensor, op: Op, requires_grad: bool) -> Var {
        tensor.requires_grad = requires_grad && self.grad_enabled;
        self.nodes.push(Node { tensor, op });
        Var(self.nodes.len() - 1)
    }

    fn requires(&self, v: Var) -> bool {
        self.nodes[v.0].tensor.requires_grad
    }

    pub fn leaf(&mut self, tensor: Tensor, requires_grad: bool) -> Var {
        self.push(tensor, Op::Leaf, requires_grad)
    }

    /// Constant input (no gradient).
    pub fn constant(&mut self, tensor: Tensor) -> Var {
        self.leaf(tensor, false)
    }

    /// Bind a stored parameter: copies its current value onto the tape and
    /// remembers the binding so `accumulate_param_grads` can hand back the
    /// gradient.
    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> Var {
        let t = Tensor::new(store.shape(id).to_vec(), store.data(id).to_vec()).unwrap();
        let v = self.leaf(t, true);
        if self.grad_enabled {
            self.param_bindings.push((id, v));
        }
        v
    }

    /// Add this tape's parameter gradients into the store.
    pub fn accumulate_param_grads(&self, store: &mut ParamStore) -> Result<()> {
        for &(id, v) in &self.param_bindings {
            if let Some(g) = self.grad(v) {
                store.accumulate_grad(id, g)?;
            }
        }
        Ok(())
    }

    pub fn zero_grads(&mut self) {
        for n in &mut self.nodes {
            n.tensor.grad = None;
        }
    }

    // ---- forward ops ----

    fn check_same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<()> {
        if self.shape(a) != self.shape(b) {
            return Err(Error::ShapeMismatch {
                op,
                lhs: self.shape(a).to_vec(),
                rhs: self.shape(b).to_vec(),
            });
        }
        Ok(())
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.check_same_shape("add", a, b)?;
        let data: Vec<f64> = self
            .data(a)
            .iter()
            .zip(self.data(b))
            .map(|(x, y)| x + y)
            .collect();
        let t = Tensor::new(self.shape(a).to_vec(), data)?;
        let rg = self.requires(a) || self.requires(b);
        Ok(self.push(t, Op::Add(a, b), rg))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.check_same_shape("sub", a, b)?;
        let data: Vec<f64> = self
            .data(a)
            .iter()
            .zip(self.data(b))
            .map(|(x, y)| x - y)
            .collect();
        let t = Tensor::new(self.shape(a).to_vec(), data)?;
        let rg = self.requires(a) || self.requires(b);
        Ok(self.push(t, Op::Sub(a, b), rg))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.check_same_shape("mul", a, b)?;
        let data: Vec<f64> = self
            .data(a)
            .iter()
            .zip(self.data(b))
            .map(|(x, y)| x * y)
            .collect();
        let t = Tensor::new(self.shape(a).to_vec(), data)?;
        let rg = self.requires(a) || self.requires(b);
        Ok(self.push(t, Op::Mul(a, b), rg))
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Result<Var> {
        let data: Vec<f64> = self.data(a).iter().map(|x| x * c).collect();
        let t = Tensor::new(self.shape(a).to_vec(), data)?;
        let rg = self.requires(a);
        Ok(self.push(t, Op::Scale(a, c), rg))
    }

    /// Broadcast-add a length-d row vector to every row of an (n, d) matrix.
    pub fn add_row(&mut self, a: Var, row: Var) -> Result<Var> {
        let (sa, sr) = (self.shape(a).to_vec(), self.shape(row).to_vec());
        if sa.len() != 2 || sr.len() != 1 || sa[1] != sr[0] {
            return Err(Error::ShapeMismatch {
                op: "add_row",
                lhs: sa,
                rhs: sr,
            });
        }
        let d = sa[1];
        let rv = self.data(row).to_vec();
        let data: Vec<f64> = self
            .data(a)
            .iter()
            .enumerate()
            .map(|(i, x)| x + rv[i % d])
            .collect();
        let t = Tensor::new(sa, data)?;
        let rg = self.requires(a) || self.requires(row);
        Ok(self.push(t, Op::AddRow(a, row), rg))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(Error::ShapeMismatch {
                op: "matmul",
                lhs: sa.to_vec(),
                rhs: sb.to_vec(),
            });
        }
        let (n, k, m) = (sa[0], sa[1], sb[1]);
        let mut out = vec![0.0; n * m];
        {
            let ad = self.data(a);
            let bd = self.data(b);
            for i in 0..n {
                let a_row = &ad[i * k..(i + 1) * k];
                let out_row = &mut out[i * m..(i + 1) * m];
                for (kk, &av) in a_row.iter().enumerate() {
                    let b_row = &bd[kk * m..(kk + 1) * m];
                    for j in 0..m {
                        out_row[j] += av * b_row[j];
                    }
                }
            }
        }
        let t = Tensor::new(vec![n, m], out)?;
        let rg = self.requires(a) || self.requires(b);
        Ok(self.push(t, Op::Matmul(a, b), rg))
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        let sa = self.shape(a).to_vec();
        if sa.len() != 2 {
            return Err(Error::BadOp {
                op: "transpose",
                message: format!("expects a 2-D tensor, got {sa:?}"),
            });
        }
        let (n, m) = (sa[0], sa[1]);
        let ad = self.data(a);
        let mut out = vec![0.0; n * m];
        for i in 0..n {
            for j in 0..m {
                out[j * n + i] = ad[i * m + j];
            }
        }
        let t = Tensor::new(vec![m, n], out)?;
        let rg = self.requires(a);
        Ok(self.push(t, Op::Transpose(a), rg))
    }

    /// y = x . w^T (+ b), with x (n, in), w (out, in), b (out,).
    pub fn linear(&mut self, x: Var, w: Var, b: Option<Var>) -> Result<Var> {
        let (sx, sw) = (self.shape(x).to_vec(), self.shape(w).to_vec());
        if sx.len() != 2 || sw.len() != 2 || sx[1] != sw[1] {
            return Err(Error::ShapeMismatch {
                op: "linear",
                lhs: sx,
                rhs: sw,
            });
        }
        let (n, d_in, d_out) = (sx[0], sx[1], sw[0]);
        if let Some(bv) = b {
            let sb = self.shape(bv);
            if sb != [d_out] {
                return Err(Error::ShapeMismatch {
                    op: "linear",
                    lhs: vec![d_out],
                    rhs: sb.to_vec(),
                });
            }
        }
        let mut out = vec![0.0; n * d_out];
        {
            let xd = self.data(x);
            let wd = self.data(w);
            for i in 0..n {
                let x_row = &xd[i * d_in..(i + 1) * d_in];
                let out_row = &mut out[i * d_out..(i + 1) * d_out];
                for o in 0..d_out {
                    let w_row = &wd[o * d_in..(o + 1) * d_in];
                    let mut acc = 0.0;
                    for t in 0..d_in {
                        acc += x_row[t] * w_row[t];
                    }
                    out_row[o] = acc;
                }
            }
            if let Some(bv) = b {
                let bd = self.data(bv);
                for i in 0..n {
                    for o in 0..d_out {
                        out[i * d_out + o] += bd[o];
                    }
                }
            }
        }
        let t = Tensor::new(vec![n, d_out], out)?;
        let rg =
            self.requires(x) || self.requires(w) || b.map(|v| self.requires(v)).unwrap_or(false);
        Ok(self.push(t, Op::Linear { x, w, b }, rg))
    }

    /// Row-wise layer normalization over the last axis, then affine.
    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Var) -> Result<Var> {
        let sx = self.shape(x).to_vec();
        let d = *sx.last().ok_or(Error::BadOp {
            op: "layer_norm",
            message: "input must have at least one axis".into(),
        })?;
        if self.shape(gain) != [d] || self.shape(bias) != [d] {
            return Err(Error::ShapeMismatch {
                op: "layer_norm",
                lhs: sx,
                rhs: self.shape(gain).to_vec(),
            });
        }
        let rows = self.data(x).len() / d;
        let xd = self.data(x);
        let gd = self.data(gain);
        let bd = self.data(bias);
        let mut out = vec![0.0; xd.len()];
        let mut normalized = vec![0.0; xd.len()];
        let mut inv_std = vec![0.0; rows];
        for r in 0..rows {
            let row = &xd[r * d..(r + 1) * d];
            let mu = row.iter().sum::<f64>() / d as f64;
            let var = row.iter().map(|v| (v - mu) * (v - mu)).sum::<f64>() / d as f64;
            let is = 1.0 / (var + LN_EPSILON).sqrt();
            inv_std[r] = is;
            for c in 0..d {
                let h = (row[c] - mu) * is;
                normalized[r * d + c] = h;
                out[r * d + c] = h * gd[c] + bd[c];
            }
        }
        let t = Tensor::new(sx, out)?;
        let rg = self.requires(x) || self.requires(gain) || self.requires(bias);
        Ok(self.push(
            t,
            Op::LayerNorm {
                x,
                gain,
                bias,
                normalized,
                inv_std,
            },
            rg,
        ))
    }

    /// Softmax along `axis` (max-subtracted for stability).
    pub fn softmax(&mut self, x: Var, axis: usize) -> Result<Var> {
        let sx = self.shape(x).to_vec();
        if axis >= sx.len() {
            return Err(Error::BadOp {
                op: "softmax",
                message: format!("axis {axis} out of range for shape {sx:?}"),
            });
        }
        let mut out = self.data(x).to_vec();
        for_each_lane(&sx, axis, |base, stride, len| {
            let mut maxv = f64::NEG_INFINITY;
            for i in 0..len {
                maxv = maxv.max(out[base + i * stride]);
            }
            let mut total = 0.0;
            for i in 0..len {
                let e = (out[base + i * stride] - maxv).exp();
                out[base + i * stride] = e;
                total += e;
            }
            for i in 0..len {
                out[base + i * stride] /= total;
            }
        });
        let t = Tensor::new(sx, out)?;
        let rg = self.requires(x);
        Ok(self.push(t, Op::Softmax { x, axis }, rg))
    }

    /// Exact GeLU: 0.5 x (1 + erf(x / sqrt(2))).
    pub fn gelu(&mut self, x: Var) -> Result<Var> {
        let data: Vec<f64> = self
            .data(x)
            .iter()
            .map(|&v| 0.5 * v * (1.0 + libm::erf(v / std::f64::consts::SQRT_2)))
            .collect();
        let t = Tensor::new(self.shape(x).to_vec(), data)?;
        let rg = self.requires(x);
        Ok(self.push(t, Op::Gelu(x), rg))
    }

    /// Valid 1-D convolution, stride 1: input (c_in, w), kernel
    /// (c_out, c_in, k) -> output (c_out, w - k + 1).
    pub fn conv1d(&mut self, x: Var, kernel: Var, bias: Option<Var>) -> Result<Var> {
        let (sx, sk) = (self.shape(x).to_vec(), self.shape(kernel).to_vec());
        if sx.len() != 2 || sk.len() != 3 || sx[0] != sk[1] || sk[2] > sx[1] {
            return Err(Error::ShapeMismatch {
                op: "conv1d",
                lhs: sx,
                rhs: sk,
            });
        }
        let (c_in, width) = (sx[0], sx[1]);
        let (c_out, k) = (sk[0], sk[2]);
        if let Some(bv) = bias {
            if self.shape(bv) != [c_out] {
                return Err(Error::ShapeMismatch {
                    op: "conv1d",
                    lhs: vec![c_out],
                    rhs: self.shape(bv).to_vec(),
                });
            }
        }
        let w_out = width - k + 1;
        let mut out = vec![0.0; c_out * w_out];
        {
            let xd = self.data(x);
            let kd = self.data(kernel);
            for o in 0..c_out {
                for c in 0..c_in {
                    let x_row = &xd[c * width..(c + 1) * width];
                    let k_row = &kd[(o * c_in + c) * k..(o * c_in + c + 1) * k];
                    let out_row = &mut out[o * w_out..(o + 1) * w_out];
                    for (q, &kv) in k_row.iter().enumerate() {
                        for p in 0..w_out {
                            out_row[p] += kv * x_row[p + q];
                        }
                    }
                }
            }
            if let Some(bv) = bias {
                let bd = self.data(bv);
                for o in 0..c_out {
                    for p in 0..w_out {
                        out[o * w_out + p] += bd[o];
                    }
                }
            }
        }
        let t = Tensor::new(vec![c_out, w_out], out)?;
        let rg = self.requires(x)
            || self.requires(kernel)
            || bias.map(|v| self.requires(v)).unwrap_or(false);
        Ok(self.push(t, Op::Conv1d { x, kernel, bias }, rg))
    }

    pub fn reshape(&mut self, x: Var, shape: Vec<usize>) -> Result<Var> {
        let numel: usize = shape.iter().product();
        if numel != self.data(x).len() {
            return Err(Error::BadOp {
                op: "reshape",
                message: format!(
                    "cannot reshape {:?} ({} elements) to {shape:?}",
                    self.shape(x),
                    self.data(x).len()
                ),
            });
        }
        let t = Tensor::new(shape, self.data(x).to_vec())?;
        let rg = self.requires(x);
        Ok(self.push(t, Op::Reshape(x), rg))
    }

    pub fn concat(&mut self, axis: usize, parts: &[Var]) -> Result<Var> {
        if parts.is_empty() {
            return Err(Error::BadOp {
                op: "concat",
                message: "needs at least one input".into(),
            });
        }
        let first = self.shape(parts[0]).to_vec();
        if axis >= first.len() {
            return Err(Error::BadOp {
                op: "concat",
                message: format!("axis {axis} out of range for shape {first:?}"),
            });
        }
        let mut axis_total = 0;
        for &p in parts {
            let sp = self.shape(p);
            if sp.len() != first.len()
                || sp
                    .iter()
                    .enumerate()
                    .any(|(i, &d)| i != axis && d != first[i])
            {
                return Err(Error::ShapeMismatch {
                    op: "concat",
                    lhs: first,
                    rhs: sp.to_vec(),
                });
            }
            axis_total += sp[axis];
        }
        let mut shape = first.clone();
        shape[axis] = axis_total;
        let outer: usize = first[..axis].iter().product();
        let inner: usize = first[axis + 1..].iter().product();
        let mut out = vec![0.0; outer * axis_total * inner];
        let mut offset = 0;
        for &p in parts {
            let pa = self.shape(p)[axis];
            let pd = self.data(p);
            for row in 0..outer {
                let src = &pd[row * pa * inner..(row + 1) * pa * inner];
                let dst_start = row * axis_total * inner + offset * inner;
                out[dst_start..dst_start + pa * inner].copy_from_slice(src);
            }
            offset += pa;
        }
        let t = Tensor::new(shape, out)?;
        let rg = parts.iter().any(|&p| self.requires(p));
        Ok(self.push(
            t,
            Op::Concat {
                axis,
                parts: parts.to_vec(),
            },
            rg,
        ))
    }

    pub fn slice(&mut self, x: Var, axis: usize, start: usize, len: usize) -> Result<Var> {
        let sx = self.shape(x).to_vec();
        if axis >= sx.len() || start + len > sx[axis] || len == 0 {
            return Err(Error::BadOp {
                op: "slice",
                message: format!("range [{start}, {}) on axis {axis} of {sx:?}", start + len),
            });
        }
        let outer: usize = sx[..axis].iter().product();
        let inner: usize = sx[axis + 1..].iter().product();
        let mut out = vec![0.0; outer * len * inner];
        let xd = self.data(x);
        for row in 0..outer {
            let src_start = row * sx[axis] * inner + start * inner;
            let dst_start = row * len * inner;
            out[dst_start..dst_start + len * inner]
                .copy_from_slice(&xd[src_start..src_start + len * inner]);
        }
        let mut shape = sx;
        shape[axis] = len;
        let t = Tensor::new(shape, out)?;
        let rg = self.requires(x);
        Ok(self.push(t, Op::Slice { x, axis, start }, rg))
    }

    /// Mean of all elements (scalar output).
    pub fn mean(&mut self, x: Var) -> Result<Var> {
        let n = self.data(x).len() as f64;
        let v = self.data(x).iter().sum::<f64>() / n;
        let rg = self.requires(x);
        Ok(self.push(Tensor::scalar(v), Op::Mean(x), rg))
    }

    /// Sum of all elements (scalar output).
    pub fn sum(&mut self, x: Var) -> Result<Var> {
        let v = self.data(x).iter().sum::<f64>();
        let rg = self.requires(x);
        Ok(self.push(Tensor::scalar(v), Op::Sum(x), rg))
    }

    /// Select rows of a (r, d) table: output (indices.len(), d).
    pub fn gather_rows(&mut self, table: Var, indices: &[usize]) -> Result<Var> {
        let st = self.shape(table).to_vec();
        if st.len() != 2 {
            return Err(Error::BadOp {
                op: "gather_rows",
                message: format!("table must be 2-D, got {st:?}"),
            });
        }
        if let Some(&bad) = indices.iter().find(|&&i| i >= st[0]) {
            return Err(Error::BadOp {
                op: "gather_rows",
                message: format!("row index {bad} out of range for table {st:?}"),
            });
        }
        let d = st[1];
        let td = self.data(table);
        let mut out = Vec::with_capacity(indices.len() * d);
        for &i in indices {
            out.extend_from_slice(&td[i * d..(i + 1) * d]);
        }
        let t = Tensor::new(vec![indices.len(), d], out)?;
        let rg = self.requires(table);
        Ok(self.push(
            t,
            Op::GatherRows {
                table,
                indices: indices.to_vec(),
            },
            rg,
        ))
    }

    /// Mean squared error between two same-shape tensors (scalar output).
    pub fn mse(&mut self, pred: Var, truth: Var) -> Result<Var> {
        self.check_same_shape("mse", pred, truth)?;
        let diff = self.sub(pred, truth)?;
        let sq = self.mul(diff, diff)?;
        self.mean(sq)
    }

    // ---- backward ----

    /// Populate gradients of everything reachable from a scalar loss.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if !self.value(loss).is_scalar() {
            return Err(Error::BadOp {
                op: "backward",
                message: format!("loss must be a scalar, got shape {:?}", self.shape(loss)),
            });
        }
        if !self.grad_enabled {
            return Err(Error::BadOp {
                op: "backward",
                message: "tape was created in eval mode".into(),
            });
        }
        self.ensure_grad(loss);
        self.nodes[loss.0].tensor.grad.as_mut().unwrap()[0] += 1.0;

        for idx in (0..=loss.0).rev() {
            if self.nodes[idx].tensor.grad.is_none() || !self.nodes[idx].tensor.requires_grad {
                continue;
            }
            self.backprop_node(idx)?;
        }
        Ok(())
    }

    fn ensure_grad(&mut self, v: Var) {
        let t = &mut self.nodes[v.0].tensor;
        if t.grad.is_none() {
            t.grad = Some(vec![0.0; t.data.len()]);
        }
    }

    fn take_grad(&self, v: usize) -> Vec<f64> {
        self.nodes[v].tensor.grad.clone().unwrap()
    }

    fn add_into(&mut self, v: Var, delta: &[f64]) {
        if !self.requires(v) {
            return;
        }
        self.ensure_grad(v);
        let g = self.nodes[v.0].tensor.grad.as_mut().unwrap();
        for (gi, di) in g.iter_mut().zip(delta) {
            *gi += di;
        }
    }

    fn backprop_node(&mut self, idx: usize) -> Result<()> {
        let dy = self.take_grad(idx);
        // ops are matched by moving cheap context out; parent handles are Copy
        match &self.nodes[idx].op {
            Op::Leaf => {}
            &Op::Add(a, b) => {
                self.add_into(a, &dy);
                self.add_into(b, &dy);
            }
            &Op::Sub(a, b) => {
                self.add_into(a, &dy);
                let neg: Vec<f64> = dy.iter().map(|v| -v).collect();
                self.add_into(b, &neg);
            }
            &Op::Mul(a, b) => {
                let da: Vec<f64> = dy.iter().zip(self.data(b)).map(|(g, v)| g * v).collect();
                let db: Vec<f64> = dy.iter().zip(self.data(a)).map(|(g, v)| g * v).collect();
                self.add_into(a, &da);
                self.add_into(b, &db);
            }
            &Op::Scale(a, c) => {
                let da: Vec<f64> = dy.iter().map(|g| g * c).collect();
                self.add_into(a, &da);
            }
            &Op::AddRow(a, row) => {
                self.add_into(a, &dy);
                if self.requires(row) {
                    let d = self.shape(row)[0];
                    let mut dr = vec![0.0; d];
                    for (i, g) in dy.iter().enumerate() {
                        dr[i % d] += g;
                    }
                    self.add_into(row, &dr);
                }
            }
            &Op::Matmul(a, b) => {
                let (n, k) = (self.shape(a)[0], self.shape(a)[1]);
                let m = self.shape(b)[1];
                if self.requires(a) {
                    let bd = self.data(b);
                    let mut da = vec![0.0; n * k];
                    for i in 0..n {
                        let dy_row = &dy[i * m..(i + 1) * m];
                        let da_row = &mut da[i * k..(i + 1) * k];
                        for kk in 0..k {
                            let b_row = &bd[kk * m..(kk + 1) * m];
                            let mut acc = 0.0;
                            for j in 0..m {
                                acc += dy_row[j] * b_row[j];
                            }
                            da_row[kk] = acc;
                        }
                    }
                    self.add_into(a, &da);
                }
                if self.requires(b) {
                    let ad = self.data(a);
                    let mut db = vec![0.0; k * m];
                    for i in 0..n {
                        let dy_row = &dy[i * m..(i + 1) * m];
                        let a_row = &ad[i * k..(i + 1) * k];
                        for (kk, &av) in a_row.iter().enumerate() {
                            let db_row = &mut db[kk * m..(kk + 1) * m];
                            for j in 0..m {
                                db_row[j] += av * dy_row[j];
                            }
                        }
                    }
                    self.add_into(b, &db);
                }
            }
            &Op::Transpose(a) => {
                let (m, n) = (self.shape(Var(idx))[0], self.shape(Var(idx))[1]);
                let mut da = vec![0.0; n * m];
                for i in 0..m {
                    for j in 0..n {
                        da[j * m + i] = dy[i * n + j];
                    }
                }
                self.add_into(a, &da);
            }
            &Op::Linear { x, w, b } => {
                let (n, d_in) = (self.shape(x)[0], self.shape(x)[1]);
                let d_out = self.shape(w)[0];
                if self.requires(x) {
                    let wd = self.data(w);
                    let mut dx = vec![0.0; n * d_in];
                    for i in 0..n {
                        let dy_row = &dy[i * d_out..(i + 1) * d_out];
                        let dx_row = &mut dx[i * d_in..(i + 1) * d_in];
                        for (o, &g) in dy_row.iter().enumerate() {
                            let w_row = &wd[o * d_in..(o + 1) * d_in];
                            for t in 0..d_in {
                                dx_row[t] += g * w_row[t];
                            }
                        }
                    }
                    self.add_into(x, &dx);
                }
                if self.requires(w) {
                    let xd = self.data(x);
                    let mut dw = vec![0.0; d_out * d_in];
                    for i in 0..n {
                        let dy_row = &dy[i * d_out..(i + 1) * d_out];
                        let x_row = &xd[i * d_in..(i + 1) * d_in];
                        for (o, &g) in dy_row.iter().enumerate() {
                            let dw_row = &mut dw[o * d_in..(o + 1) * d_in];
                            for t in 0..d_in {
                                dw_row[t] += g * x_row[t];
                            }
                        }
                    }
                    self.add_into(w, &dw);
                }
                if let Some(bv) = b {
                    if self.requires(bv) {
                        let mut db = vec![0.0; d_out];
                        for i in 0..n {
                            for o in 0..d_out {
                                db[o] += dy[i * d_out + o];
                            }
                        }
                        self.add_into(bv, &db);
                    }
                }
            }
            Op::LayerNorm {
                x,
                gain,
                bias,
                normalized,
                inv_std,
            } => {
                let (x, gain, bias) = (*x, *gain, *bias);
                let d = self.shape(gain)[0];
                let rows = dy.len() / d;
                let normalized = normalized.clone();
                let inv_std = inv_std.clone();
                if self.requires(bias) {
                    let mut db = vec![0.0; d];
                    for r in 0..rows {
                        for c in 0..d {
                            db[c] += dy[r * d + c];
                        }
                    }
                    self.add_into(bias, &db);
                }
                if self.requires(gain) {
                    let mut dg = vec![0.0; d];
                    for r in 0..rows {
                        for c in 0..d {
                            dg[c] += dy[r * d + c] * normalized[r * d + c];
                        }
                    }
                    self.add_into(gain, &dg);
                }
                if self.requires(x) {
                    let gd = self.data(gain).to_vec();
                    let mut dx = vec![0.0; dy.len()];
                    let dn = d as f64;
                    for r in 0..rows {
                        // dh = dy * gain; dx = inv_std*(dh - mean(dh) - nhat*mean(dh*nhat))
                        let mut mean_dh = 0.0;
                        let mut mean_dh_h = 0.0;
                        for c in 0..d {
                            let dh = dy[r * d + c] * gd[c];
                            mean_dh += dh;
                            mean_dh_h += dh * normalized[r * d + c];
                        }
                        mean_dh /= dn;
                        mean_dh_h /= dn;
                        for c in 0..d {
                            let dh = dy[r * d + c] * gd[c];
                            dx[r * d + c] = inv_std[r]
                                * (dh - mean_dh - normalized[r * d + c] * mean_dh_h);
                        }
                    }
                    self.add_into(x, &dx);
                }
            }
            &Op::Softmax { x, axis } => {
                let y = self.data(Var(idx)).to_vec();
                let shape = self.shape(Var(idx)).to_vec();
                let mut dx = vec![0.0; dy.len()];
                for_each_lane(&shape, axis, |base, stride, len| {
                    let mut dot = 0.0;
                    for i in 0..len {
                        dot += dy[base + i * stride] * y[base + i * stride];
                    }
                    for i in 0..len {
                        dx[base + i * stride] =
                            y[base + i * stride] * (dy[base + i * stride] - dot);
                    }
                });
                self.add_into(x, &dx);
            }
            &Op::Gelu(x) => {
                let xd = self.data(x);
                let dx: Vec<f64> = xd
                    .iter()
                    .zip(&dy)
                    .map(|(&v, &g)| {
                        let cdf = 0.5 * (1.0 + libm::erf(v / std::f64::consts::SQRT_2));
                        let pdf = (-0.5 * v * v).exp() / (2.0 * std::f64::consts::PI).sqrt();
                        g * (cdf + v * pdf)
                    })
                    .collect();
                self.add_into(x, &dx);
            }
            &Op::Conv1d { x, kernel, bias } => {
                let (c_in, width) = (self.shape(x)[0], self.shape(x)[1]);
                let (c_out, k) = (self.shape(kernel)[0], self.shape(kernel)[2]);
                let w_out = width - k + 1;
                if self.requires(x) {
                    let kd = self.data(kernel);
                    let mut dx = vec![0.0; c_in * width];
                    for o in 0..c_out {
                        let dy_row = &dy[o * w_out..(o + 1) * w_out];
                        for c in 0..c_in {
                            let k_row = &kd[(o * c_in + c) * k..(o * c_in + c + 1) * k];
                            let dx_row = &mut dx[c * width..(c + 1) * width];
                            for (q, &kv) in k_row.iter().enumerate() {
                                for p in 0..w_out {
                                    dx_row[p + q] += kv * dy_row[p];
                                }
                            }
                        }
                    }
                    self.add_into(x, &dx);
                }
                if self.requires(kernel) {
                    let xd = self.data(x);
                    let mut dk = vec![0.0; c_out * c_in * k];
                    for o in 0..c_out {
                        let dy_row = &dy[o * w_out..(o + 1) * w_out];
                        for c in 0..c_in {
                            let x_row = &xd[c * width..(c + 1) * width];
                            let dk_row = &mut dk[(o * c_in + c) * k..(o * c_in + c + 1) * k];
                            for (q, slot) in dk_row.iter_mut().enumerate() {
                                let mut acc = 0.0;
                                for p in 0..w_out {
                                    acc += dy_row[p] * x_row[p + q];
                                }
                                *slot += acc;
                            }
                        }
                    }
                    self.add_into(kernel, &dk);
                }
                if let Some(bv) = bias {
                    if self.requires(bv) {
                        let mut db = vec![0.0; c_out];
                        for o in 0..c_out {
                            for p in 0..w_out {
                                db[o] += dy[o * w_out + p];
                            }
                        }
                        self.add_into(bv, &db);
                    }
                }
            }
            &Op::Reshape(x) => {
                self.add_into(x, &dy);
            }
            Op::Concat { axis, parts } => {
                let axis = *axis;
                let parts = parts.clone();
                let total = self.shape(Var(idx))[axis];
                let shape = self.shape(Var(idx)).to_vec();
                let outer: usize = shape[..axis].iter().product();
                let inner: usize = shape[axis + 1..].iter().product();
                let mut offset = 0;
                for p in parts {
                    let pa = self.shape(p)[axis];
                    if self.requires(p) {
                        let mut dp = vec![0.0; outer * pa * inner];
                        for row in 0..outer {
                            let src_start = row * total * inner + offset * inner;
                            let dst_start = row * pa * inner;
                            dp[dst_start..dst_start + pa * inner]
                                .copy_from_slice(&dy[src_start..src_start + pa * inner]);
                        }
                        self.add_into(p, &dp);
                    }
                    offset += pa;
                }
            }
            &Op::Slice { x, axis, start } => {
                let sx = self.shape(x).to_vec();
                let len = self.shape(Var(idx))[axis];
                let outer: usize = sx[..axis].iter().product();
                let inner: usize = sx[axis + 1..].iter().product();
                let mut dx = vec![0.0; self.data(x).len()];
                for row in 0..outer {
                    let dst_start = row * sx[axis] * inner + start * inner;
                    let src_start = row * len * inner;
                    dx[dst_start..dst_start + len * inner]
                        .copy_from_slice(&dy[src_start..src_start + len * inner]);
                }
                self.add_into(x, &dx);
            }
            &Op::Mean(x) => {
                let n = self.data(x).len();
                let g = dy[0] / n as f64;
                let dx = vec![g; n];
                self.add_into(x, &dx);
            }
            &Op::Sum(x) => {
                let dx = vec![dy[0]; self.data(x).len()];
                self.add_into(x, &dx);
            }
            Op::GatherRows { table, indices } => {
                let table = *table;
                if self.requires(table) {
                    let indices = indices.clone();
                    let d = self.shape(table)[1];
                    let mut dt = vec![0.0; self.data(table).len()];
                    for (row, &i) in indices.iter().enumerate() {
                        for c in 0..d {
                            dt[i * d + c] += dy[row * d + c];
                        }
                    }
                    self.add_into(table, &dt);
                }
            }
        }
        Ok(())
    }
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

/// Visit every 1-D lane along `axis` of a tensor with the given shape,
/// calling f(base_offset, stride, lane_len).
fn for_each_lane(shape: &[usize], axis: usize, mut f: impl FnMut(usize, usize, usize)) {
    let len = shape[axis];
    let outer: usize = shape[..axis].iter().product();
    let inner: usize = shape[axis + 1..].iter().product();
    for o in 0..outer {
        for i in 0..inner {
            f(o * len * inner + i, inner, len);
        }
    }
}
