use std::borrow::Cow;
use std::sync::atomic::{AtomicU64, Ordering};

use rand::Rng;

use super::kernels::{self, ConvDims};
use super::{Result, Tensor, TensorError};

static NEXT_TAPE: AtomicU64 = AtomicU64::new(1);

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var {
    tape: u64,
    index: usize,
}

enum Op {
    Leaf,
    MatMul(usize, usize),
    Add(usize, usize),
    AddBias(usize, usize),
    Mul(usize, usize),
    Scale(usize, f64),
    Relu(usize),
    Softmax(usize),
    Conv1d {
        input: usize,
        weight: usize,
        bias: usize,
        dilation: usize,
    },
    Embedding {
        table: usize,
        ids: Vec<usize>,
    },
    MaxPool {
        input: usize,
        argmax: Vec<usize>,
    },
    Outer3(usize, usize, usize),
    Dropout {
        input: usize,
        mask: Vec<f64>,
    },
    Mse(usize, usize),
    Concat(Vec<usize>),
    SliceLast {
        input: usize,
        start: usize,
    },
    Transpose(usize),
    Reshape(usize),
    Sum(usize),
}

impl Op {
    fn inputs(&self) -> Vec<usize> {
        match self {
            Op::Leaf => vec![],
            Op::MatMul(a, b) | Op::Add(a, b) | Op::AddBias(a, b) | Op::Mul(a, b) | Op::Mse(a, b) => {
                vec![*a, *b]
            }
            Op::Scale(a, _) | Op::Relu(a) | Op::Softmax(a) | Op::Transpose(a) | Op::Reshape(a) | Op::Sum(a) => vec![*a],
            Op::Conv1d {
                input, weight, bias, ..
            } => vec![*input, *weight, *bias],
            Op::Embedding { table, .. } => vec![*table],
            Op::MaxPool { input, .. } | Op::Dropout { input, .. } | Op::SliceLast { input, .. } => {
                vec![*input]
            }
            Op::Outer3(a, b, c) => vec![*a, *b, *c],
            Op::Concat(parts) => parts.clone(),
        }
    }
}

struct Node<'a> {
    shape: Vec<usize>,
    value: Cow<'a, [f64]>,
    requires_grad: bool,
    op: Op,
}

/// Record of one forward pass.
///
/// Parameters are bound by reference, so a tape never copies weights; the
/// tape is dropped after [`Tape::backward`] and the optimizer then mutates
/// the parameters.
pub struct Tape<'a> {
    id: u64,
    nodes: Vec<Node<'a>>,
}

impl Default for Tape<'_> {
    fn default() -> Self {
        Self::new()
    }
}

impl<'a> Tape<'a> {
    pub fn new() -> Self {
        Self {
            id: NEXT_TAPE.fetch_add(1, Ordering::Relaxed),
            nodes: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn idx(&self, v: Var) -> Result<usize> {
        if v.tape != self.id || v.index >= self.nodes.len() {
            return Err(TensorError::DetachedTensor);
        }
        Ok(v.index)
    }

    fn push(&mut self, shape: Vec<usize>, value: Vec<f64>, op: Op) -> Var {
        debug_assert_eq!(shape.iter().product::<usize>(), value.len());
        let inputs = op.inputs();
        debug_assert!(
            !inputs
                .iter()
                .all(|&i| self.nodes[i].value.iter().all(|v| v.is_finite()))
                || value.iter().all(|v| v.is_finite()),
            "non-finite output from finite inputs"
        );
        let requires_grad = inputs.iter().any(|&i| self.nodes[i].requires_grad);
        self.nodes.push(Node {
            shape,
            value: Cow::Owned(value),
            requires_grad,
            op,
        });
        Var {
            tape: self.id,
            index: self.nodes.len() - 1,
        }
    }

    fn push_leaf(&mut self, shape: Vec<usize>, value: Cow<'a, [f64]>, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            shape,
            value,
            requires_grad,
            op: Op::Leaf,
        });
        Var {
            tape: self.id,
            index: self.nodes.len() - 1,
        }
    }

    /// Binds a tensor by reference. Gradients are tracked when the tensor
    /// is trainable.
    pub fn param(&mut self, t: &'a Tensor) -> Var {
        self.push_leaf(t.shape.clone(), Cow::Borrowed(&t.data), t.requires_grad)
    }

    /// Records an owned input that takes part in differentiation.
    pub fn leaf(&mut self, t: Tensor) -> Var {
        let requires_grad = t.requires_grad;
        self.push_leaf(t.shape, Cow::Owned(t.data), requires_grad)
    }

    /// Records an owned input that never receives a gradient.
    pub fn constant(&mut self, shape: Vec<usize>, data: Vec<f64>) -> Result<Var> {
        let numel: usize = shape.iter().product();
        if numel != data.len() {
            return Err(TensorError::DataShape { len: data.len(), shape });
        }
        Ok(self.push_leaf(shape, Cow::Owned(data), false))
    }

    pub fn value(&self, v: Var) -> Result<&[f64]> {
        let i = self.idx(v)?;
        Ok(&self.nodes[i].value)
    }

    pub fn shape(&self, v: Var) -> Result<&[usize]> {
        let i = self.idx(v)?;
        Ok(&self.nodes[i].shape)
    }

    pub fn to_tensor(&self, v: Var) -> Result<Tensor> {
        let i = self.idx(v)?;
        Tensor::new(self.nodes[i].shape.clone(), self.nodes[i].value.to_vec())
    }

    fn matrix_dims(&self, i: usize, op: &'static str) -> Result<(usize, usize)> {
        match self.nodes[i].shape.as_slice() {
            &[r, c] => Ok((r, c)),
            other => Err(TensorError::ShapeMismatch {
                op,
                lhs: other.to_vec(),
                rhs: vec![0, 0],
            }),
        }
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ia, ib) = (self.idx(a)?, self.idx(b)?);
        let (m, k) = self.matrix_dims(ia, "matmul")?;
        let (k2, n) = self.matrix_dims(ib, "matmul")?;
        if k != k2 {
            return Err(TensorError::ShapeMismatch {
                op: "matmul",
                lhs: vec![m, k],
                rhs: vec![k2, n],
            });
        }
        let out = kernels::matmul(&self.nodes[ia].value, &self.nodes[ib].value, m, k, n);
        Ok(self.push(vec![m, n], out, Op::MatMul(ia, ib)))
    }

    fn same_shape(&self, ia: usize, ib: usize, op: &'static str) -> Result<()> {
        if self.nodes[ia].shape != self.nodes[ib].shape {
            return Err(TensorError::ShapeMismatch {
                op,
                lhs: self.nodes[ia].shape.clone(),
                rhs: self.nodes[ib].shape.clone(),
            });
        }
        Ok(())
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ia, ib) = (self.idx(a)?, self.idx(b)?);
        self.same_shape(ia, ib, "add")?;
        let out = self.nodes[ia]
            .value
            .iter()
            .zip(self.nodes[ib].value.iter())
            .map(|(x, y)| x + y)
            .collect();
        Ok(self.push(self.nodes[ia].shape.clone(), out, Op::Add(ia, ib)))
    }

    /// Adds a rank-1 bias along the last axis of `x`.
    pub fn add_bias(&mut self, x: Var, bias: Var) -> Result<Var> {
        let (ix, ib) = (self.idx(x)?, self.idx(bias)?);
        let n = self.nodes[ib].value.len();
        let last = self.nodes[ix].shape.last().copied().unwrap_or(1);
        if self.nodes[ib].shape.len() != 1 || last != n {
            return Err(TensorError::ShapeMismatch {
                op: "add_bias",
                lhs: self.nodes[ix].shape.clone(),
                rhs: self.nodes[ib].shape.clone(),
            });
        }
        let b = &self.nodes[ib].value;
        let out = self.nodes[ix]
            .value
            .chunks_exact(n)
            .flat_map(|row| row.iter().zip(b.iter()).map(|(x, y)| x + y))
            .collect();
        Ok(self.push(self.nodes[ix].shape.clone(), out, Op::AddBias(ix, ib)))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ia, ib) = (self.idx(a)?, self.idx(b)?);
        self.same_shape(ia, ib, "mul")?;
        let out = self.nodes[ia]
            .value
            .iter()
            .zip(self.nodes[ib].value.iter())
            .map(|(x, y)| x * y)
            .collect();
        Ok(self.push(self.nodes[ia].shape.clone(), out, Op::Mul(ia, ib)))
    }

    pub fn scale(&mut self, x: Var, factor: f64) -> Result<Var> {
        let ix = self.idx(x)?;
        let out = self.nodes[ix].value.iter().map(|v| v * factor).collect();
        Ok(self.push(self.nodes[ix].shape.clone(), out, Op::Scale(ix, factor)))
    }

    pub fn relu(&mut self, x: Var) -> Result<Var> {
        let ix = self.idx(x)?;
        let out = self.nodes[ix].value.iter().map(|v| v.max(0.0)).collect();
        Ok(self.push(self.nodes[ix].shape.clone(), out, Op::Relu(ix)))
    }

    /// Softmax over the trailing axis.
    pub fn softmax_last(&mut self, x: Var) -> Result<Var> {
        let ix = self.idx(x)?;
        let n = self.nodes[ix].shape.last().copied().unwrap_or(1);
        if n == 0 {
            return Err(TensorError::EmptyInput { op: "softmax_last" });
        }
        let out = kernels::softmax_rows(&self.nodes[ix].value, n);
        Ok(self.push(self.nodes[ix].shape.clone(), out, Op::Softmax(ix)))
    }

    /// Valid dilated convolution of `seq[C_in×N]` with `weights[C_out×C_in×K]`
    /// and `bias[C_out]`. No activation is applied.
    pub fn conv1d_dilated(&mut self, seq: Var, weights: Var, bias: Var, dilation: usize) -> Result<Var> {
        let (is, iw, ib) = (self.idx(seq)?, self.idx(weights)?, self.idx(bias)?);
        if dilation == 0 {
            return Err(TensorError::ZeroDilation);
        }
        let (c_in, len) = self.matrix_dims(is, "conv1d")?;
        let (c_out, w_in, kernel) = match self.nodes[iw].shape.as_slice() {
            &[a, b, c] => (a, b, c),
            other => {
                return Err(TensorError::ShapeMismatch {
                    op: "conv1d",
                    lhs: vec![c_in, len],
                    rhs: other.to_vec(),
                })
            }
        };
        if w_in != c_in || kernel == 0 || self.nodes[ib].shape != [c_out] {
            return Err(TensorError::ShapeMismatch {
                op: "conv1d",
                lhs: self.nodes[iw].shape.clone(),
                rhs: self.nodes[ib].shape.clone(),
            });
        }
        let span = (kernel - 1) * dilation + 1;
        if len < span {
            return Err(TensorError::SequenceTooShort { len, kernel, dilation });
        }
        let dims = ConvDims {
            c_in,
            c_out,
            kernel,
            len,
            out_len: len - (kernel - 1) * dilation,
            dilation,
        };
        let out = kernels::conv1d(
            &self.nodes[is].value,
            &self.nodes[iw].value,
            &self.nodes[ib].value,
            &dims,
        );
        Ok(self.push(
            vec![c_out, dims.out_len],
            out,
            Op::Conv1d {
                input: is,
                weight: iw,
                bias: ib,
                dilation,
            },
        ))
    }

    /// Gathers rows of `table[V×d]`.
    pub fn embedding_lookup(&mut self, table: Var, ids: &[usize]) -> Result<Var> {
        let it = self.idx(table)?;
        let (rows, width) = self.matrix_dims(it, "embedding_lookup")?;
        let mut out = Vec::with_capacity(ids.len() * width);
        for &id in ids {
            if id >= rows {
                return Err(TensorError::IndexOutOfRange { index: id, rows });
            }
            out.extend_from_slice(&self.nodes[it].value[id * width..(id + 1) * width]);
        }
        Ok(self.push(
            vec![ids.len(), width],
            out,
            Op::Embedding {
                table: it,
                ids: ids.to_vec(),
            },
        ))
    }

    /// Column-wise maximum of `x[N×d]`; ties go to the lowest row.
    pub fn global_max_pool(&mut self, x: Var) -> Result<Var> {
        let ix = self.idx(x)?;
        let (rows, cols) = self.matrix_dims(ix, "global_max_pool")?;
        if rows == 0 {
            return Err(TensorError::EmptyInput { op: "global_max_pool" });
        }
        let v = &self.nodes[ix].value;
        let mut argmax = vec![0usize; cols];
        let mut out = v[..cols].to_vec();
        for r in 1..rows {
            for c in 0..cols {
                let candidate = v[r * cols + c];
                if candidate > out[c] {
                    out[c] = candidate;
                    argmax[c] = r;
                }
            }
        }
        Ok(self.push(vec![cols], out, Op::MaxPool { input: ix, argmax }))
    }

    /// Flattened outer product; index of `a` varies slowest, `c` fastest.
    pub fn outer_product3(&mut self, a: Var, b: Var, c: Var) -> Result<Var> {
        let (ia, ib, ic) = (self.idx(a)?, self.idx(b)?, self.idx(c)?);
        for &i in &[ia, ib, ic] {
            if self.nodes[i].shape.len() != 1 {
                return Err(TensorError::ShapeMismatch {
                    op: "outer_product3",
                    lhs: self.nodes[i].shape.clone(),
                    rhs: vec![self.nodes[i].value.len()],
                });
            }
        }
        let (av, bv, cv) = (&self.nodes[ia].value, &self.nodes[ib].value, &self.nodes[ic].value);
        let mut out = Vec::with_capacity(av.len() * bv.len() * cv.len());
        for x in av.iter() {
            for y in bv.iter() {
                let xy = x * y;
                out.extend(cv.iter().map(|z| xy * z));
            }
        }
        let len = out.len();
        Ok(self.push(vec![len], out, Op::Outer3(ia, ib, ic)))
    }

    /// Inverted dropout. Returns `x` unchanged outside training or when `p == 0`.
    pub fn dropout<R: Rng + ?Sized>(&mut self, x: Var, p: f64, training: bool, rng: &mut R) -> Result<Var> {
        let ix = self.idx(x)?;
        if !(0.0..1.0).contains(&p) {
            return Err(TensorError::InvalidProbability(p));
        }
        if !training || p == 0.0 {
            return Ok(x);
        }
        let keep_scale = 1.0 / (1.0 - p);
        let mask: Vec<f64> = (0..self.nodes[ix].value.len())
            .map(|_| if rng.gen::<f64>() < p { 0.0 } else { keep_scale })
            .collect();
        let out = self.nodes[ix].value.iter().zip(&mask).map(|(v, m)| v * m).collect();
        Ok(self.push(self.nodes[ix].shape.clone(), out, Op::Dropout { input: ix, mask }))
    }

    /// Mean squared error between equal-length vectors; returns a scalar.
    pub fn mse_loss(&mut self, pred: Var, target: Var) -> Result<Var> {
        let (ip, it) = (self.idx(pred)?, self.idx(target)?);
        let (p, t) = (&self.nodes[ip].value, &self.nodes[it].value);
        if p.len() != t.len() {
            return Err(TensorError::LengthMismatch(p.len(), t.len()));
        }
        if p.is_empty() {
            return Err(TensorError::EmptyInput { op: "mse_loss" });
        }
        let loss = p.iter().zip(t.iter()).map(|(a, b)| (b - a).powi(2)).sum::<f64>() / p.len() as f64;
        Ok(self.push(vec![], vec![loss], Op::Mse(ip, it)))
    }

    /// Concatenates along the trailing axis; leading extents must agree.
    pub fn concat(&mut self, parts: &[Var]) -> Result<Var> {
        let idx: Vec<usize> = parts.iter().map(|&v| self.idx(v)).collect::<Result<_>>()?;
        let first = *idx.first().ok_or(TensorError::EmptyInput { op: "concat" })?;
        let lead = &self.nodes[first].shape[..self.nodes[first].shape.len().saturating_sub(1)];
        let rows: usize = lead.iter().product();
        let mut widths = Vec::with_capacity(idx.len());
        for &i in &idx {
            let s = &self.nodes[i].shape;
            if s.is_empty() || s[..s.len() - 1] != *lead {
                return Err(TensorError::ShapeMismatch {
                    op: "concat",
                    lhs: self.nodes[first].shape.clone(),
                    rhs: s.clone(),
                });
            }
            widths.push(*s.last().unwrap());
        }
        let total: usize = widths.iter().sum();
        let mut out = Vec::with_capacity(rows * total);
        for r in 0..rows {
            for (&i, &w) in idx.iter().zip(&widths) {
                out.extend_from_slice(&self.nodes[i].value[r * w..(r + 1) * w]);
            }
        }
        let mut shape = lead.to_vec();
        shape.push(total);
        Ok(self.push(shape, out, Op::Concat(idx)))
    }

    /// Takes `len` entries starting at `start` along the trailing axis.
    pub fn slice_last(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let ix = self.idx(x)?;
        let shape = self.nodes[ix].shape.clone();
        let width = *shape.last().ok_or(TensorError::EmptyInput { op: "slice_last" })?;
        if start + len > width {
            return Err(TensorError::IndexOutOfRange {
                index: start + len,
                rows: width,
            });
        }
        let out = self.nodes[ix]
            .value
            .chunks_exact(width)
            .flat_map(|row| row[start..start + len].iter().copied())
            .collect();
        let mut out_shape = shape;
        *out_shape.last_mut().unwrap() = len;
        Ok(self.push(out_shape, out, Op::SliceLast { input: ix, start }))
    }

    pub fn transpose(&mut self, x: Var) -> Result<Var> {
        let ix = self.idx(x)?;
        let (r, c) = self.matrix_dims(ix, "transpose")?;
        let out = kernels::transpose(&self.nodes[ix].value, r, c);
        Ok(self.push(vec![c, r], out, Op::Transpose(ix)))
    }

    pub fn reshape(&mut self, x: Var, shape: Vec<usize>) -> Result<Var> {
        let ix = self.idx(x)?;
        if shape.iter().product::<usize>() != self.nodes[ix].value.len() {
            return Err(TensorError::ShapeMismatch {
                op: "reshape",
                lhs: self.nodes[ix].shape.clone(),
                rhs: shape,
            });
        }
        let out = self.nodes[ix].value.to_vec();
        Ok(self.push(shape, out, Op::Reshape(ix)))
    }

    pub fn sum(&mut self, x: Var) -> Result<Var> {
        let ix = self.idx(x)?;
        let total = self.nodes[ix].value.iter().sum();
        Ok(self.push(vec![], vec![total], Op::Sum(ix)))
    }

    /// Reverse-mode sweep from a scalar `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        let il = self.idx(loss)?;
        if self.nodes[il].value.len() != 1 {
            return Err(TensorError::NotScalar(self.nodes[il].shape.clone()));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; il + 1];
        grads[il] = Some(vec![1.0]);
        for i in (0..=il).rev() {
            let node = &self.nodes[i];
            if !node.requires_grad {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            self.propagate(node, &g, &mut grads);
            grads[i] = Some(g);
        }
        Ok(Gradients { tape: self.id, grads })
    }

    fn propagate(&self, node: &Node<'a>, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let nodes = &self.nodes;
        // Runs `f` on the gradient buffer of input `i` when that input is tracked.
        let mut acc = |i: usize, f: &mut dyn FnMut(&mut [f64])| {
            if nodes[i].requires_grad {
                let len = nodes[i].value.len();
                f(grads[i].get_or_insert_with(|| vec![0.0; len]));
            }
        };
        match &node.op {
            Op::Leaf => {}
            &Op::MatMul(a, b) => {
                let (m, k) = (nodes[a].shape[0], nodes[a].shape[1]);
                let n = nodes[b].shape[1];
                acc(a, &mut |ga| kernels::matmul_grad_lhs(g, &nodes[b].value, ga, m, k, n));
                acc(b, &mut |gb| kernels::matmul_grad_rhs(&nodes[a].value, g, gb, m, k, n));
            }
            &Op::Add(a, b) => {
                acc(a, &mut |ga| add_into(ga, g));
                acc(b, &mut |gb| add_into(gb, g));
            }
            &Op::AddBias(x, b) => {
                acc(x, &mut |gx| add_into(gx, g));
                let n = nodes[b].value.len();
                acc(b, &mut |gb| {
                    for row in g.chunks_exact(n) {
                        add_into(gb, row);
                    }
                });
            }
            &Op::Mul(a, b) => {
                acc(a, &mut |ga| {
                    for ((o, gv), bv) in ga.iter_mut().zip(g).zip(nodes[b].value.iter()) {
                        *o += gv * bv;
                    }
                });
                acc(b, &mut |gb| {
                    for ((o, gv), av) in gb.iter_mut().zip(g).zip(nodes[a].value.iter()) {
                        *o += gv * av;
                    }
                });
            }
            &Op::Scale(x, factor) => acc(x, &mut |gx| {
                for (o, gv) in gx.iter_mut().zip(g) {
                    *o += gv * factor;
                }
            }),
            &Op::Relu(x) => acc(x, &mut |gx| {
                for ((o, gv), xv) in gx.iter_mut().zip(g).zip(nodes[x].value.iter()) {
                    if *xv > 0.0 {
                        *o += gv;
                    }
                }
            }),
            &Op::Softmax(x) => {
                let n = *node.shape.last().unwrap_or(&1);
                acc(x, &mut |gx| {
                    for ((gs, ys), os) in g
                        .chunks_exact(n)
                        .zip(node.value.chunks_exact(n))
                        .zip(gx.chunks_exact_mut(n))
                    {
                        let dot: f64 = gs.iter().zip(ys).map(|(a, b)| a * b).sum();
                        for ((o, gv), y) in os.iter_mut().zip(gs).zip(ys) {
                            *o += y * (gv - dot);
                        }
                    }
                });
            }
            &Op::Conv1d {
                input,
                weight,
                bias,
                dilation,
            } => {
                let dims = ConvDims {
                    c_in: nodes[input].shape[0],
                    c_out: nodes[weight].shape[0],
                    kernel: nodes[weight].shape[2],
                    len: nodes[input].shape[1],
                    out_len: node.shape[1],
                    dilation,
                };
                let (x, w) = (&nodes[input].value, &nodes[weight].value);
                acc(input, &mut |gx| {
                    kernels::conv1d_backward(x, w, g, &dims, Some(gx), None, None)
                });
                acc(weight, &mut |gw| {
                    kernels::conv1d_backward(x, w, g, &dims, None, Some(gw), None)
                });
                acc(bias, &mut |gb| {
                    kernels::conv1d_backward(x, w, g, &dims, None, None, Some(gb))
                });
            }
            Op::Embedding { table, ids } => {
                let width = nodes[*table].shape[1];
                acc(*table, &mut |gt| {
                    for (row, &id) in g.chunks_exact(width).zip(ids) {
                        add_into(&mut gt[id * width..(id + 1) * width], row);
                    }
                });
            }
            Op::MaxPool { input, argmax } => {
                let cols = argmax.len();
                acc(*input, &mut |gx| {
                    for (c, &r) in argmax.iter().enumerate() {
                        gx[r * cols + c] += g[c];
                    }
                });
            }
            &Op::Outer3(a, b, c) => {
                let (av, bv, cv) = (&nodes[a].value, &nodes[b].value, &nodes[c].value);
                let (q, r) = (bv.len(), cv.len());
                let entry = |i: usize, j: usize, k: usize| g[(i * q + j) * r + k];
                acc(a, &mut |ga| {
                    for (i, o) in ga.iter_mut().enumerate() {
                        for j in 0..q {
                            for k in 0..r {
                                *o += entry(i, j, k) * bv[j] * cv[k];
                            }
                        }
                    }
                });
                acc(b, &mut |gb| {
                    for (i, x) in av.iter().enumerate() {
                        for (j, o) in gb.iter_mut().enumerate() {
                            for k in 0..r {
                                *o += entry(i, j, k) * x * cv[k];
                            }
                        }
                    }
                });
                acc(c, &mut |gc| {
                    for (i, x) in av.iter().enumerate() {
                        for (j, y) in bv.iter().enumerate() {
                            let xy = x * y;
                            for (k, o) in gc.iter_mut().enumerate() {
                                *o += entry(i, j, k) * xy;
                            }
                        }
                    }
                });
            }
            Op::Dropout { input, mask } => acc(*input, &mut |gx| {
                for ((o, gv), m) in gx.iter_mut().zip(g).zip(mask) {
                    *o += gv * m;
                }
            }),
            &Op::Mse(p, t) => {
                let (pv, tv) = (&nodes[p].value, &nodes[t].value);
                let scale = 2.0 * g[0] / pv.len() as f64;
                acc(p, &mut |gp| {
                    for ((o, a), b) in gp.iter_mut().zip(pv.iter()).zip(tv.iter()) {
                        *o += scale * (a - b);
                    }
                });
                acc(t, &mut |gt| {
                    for ((o, a), b) in gt.iter_mut().zip(pv.iter()).zip(tv.iter()) {
                        *o += scale * (b - a);
                    }
                });
            }
            Op::Concat(parts) => {
                let total = *node.shape.last().unwrap();
                let rows = node.value.len() / total.max(1);
                let mut offset = 0;
                for &part in parts {
                    let w = *nodes[part].shape.last().unwrap();
                    acc(part, &mut |gp| {
                        for r in 0..rows {
                            add_into(
                                &mut gp[r * w..(r + 1) * w],
                                &g[r * total + offset..r * total + offset + w],
                            );
                        }
                    });
                    offset += w;
                }
            }
            &Op::SliceLast { input, start } => {
                let width = *nodes[input].shape.last().unwrap();
                let len = *node.shape.last().unwrap();
                acc(input, &mut |gx| {
                    if len == 0 {
                        return;
                    }
                    for (grow, gs) in gx.chunks_exact_mut(width).zip(g.chunks_exact(len)) {
                        add_into(&mut grow[start..start + len], gs);
                    }
                });
            }
            &Op::Transpose(x) => {
                let (r, c) = (nodes[x].shape[0], nodes[x].shape[1]);
                // g is laid out as [c × r]
                acc(x, &mut |gx| add_into(gx, &kernels::transpose(g, c, r)));
            }
            &Op::Reshape(x) => acc(x, &mut |gx| add_into(gx, g)),
            &Op::Sum(x) => acc(x, &mut |gx| {
                for o in gx.iter_mut() {
                    *o += g[0];
                }
            }),
        }
    }
}

fn add_into(dst: &mut [f64], src: &[f64]) {
    for (d, s) in dst.iter_mut().zip(src) {
        *d += s;
    }
}

/// Gradients produced by one backward sweep.
pub struct Gradients {
    tape: u64,
    grads: Vec<Option<Vec<f64>>>,
}

impl Gradients {
    /// Gradient of the loss with respect to `v`, if `v` is reachable and tracked.
    pub fn get(&self, v: Var) -> Option<&[f64]> {
        if v.tape != self.tape {
            return None;
        }
        self.grads.get(v.index).and_then(|g| g.as_deref())
    }

    /// Moves the gradient for `v` out, leaving `None` behind.
    pub fn take(&mut self, v: Var) -> Option<Vec<f64>> {
        if v.tape != self.tape {
            return None;
        }
        self.grads.get_mut(v.index).and_then(Option::take)
    }
}
