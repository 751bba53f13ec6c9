//! Reverse-mode gradient tape over a closed set of tensor operations.
//!
//! Nodes are appended in evaluation order, so the tape is already a
//! topological ordering of the graph; [`Tape::backward`] walks it once in
//! reverse. Leaves are either constants (no gradient), differentiable inputs,
//! or parameters identified by a [`ParamId`] whose gradients are accumulated
//! when the same parameter is placed on the tape more than once.

use std::collections::BTreeMap;

use super::tensor::{gemm, Tensor};
use crate::error::{Error, Result};

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Identifier of a trainable parameter tensor.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub usize);

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_A: f64 = 0.044_715;

#[derive(Debug)]
enum Op {
    Constant,
    Input,
    Param(ParamId),
    MatMul(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddRow(Var, Var),
    Scale(Var, f64),
    Transpose(Var),
    Reshape(Var),
    ConcatRows(Vec<Var>),
    ConcatCols(Vec<Var>),
    SliceRows(Var, usize),
    SliceCols(Var, usize),
    Softmax(Var),
    LogSoftmax(Var),
    LayerNorm { x: Var, gain: Var, bias: Var, xhat: Vec<f64>, inv_std: Vec<f64> },
    Gelu(Var),
    Sigmoid(Var),
    Log(Var),
    Relu(Var),
    Mean(Var),
    Sum(Var),
}

impl Op {
    fn kind(&self) -> &'static str {
        match self {
            Op::Constant => "constant",
            Op::Input => "input",
            Op::Param(_) => "param",
            Op::MatMul(..) => "matmul",
            Op::Add(..) => "add",
            Op::Sub(..) => "sub",
            Op::Mul(..) => "mul",
            Op::AddRow(..) => "add_row",
            Op::Scale(..) => "scale",
            Op::Transpose(_) => "transpose",
            Op::Reshape(_) => "reshape",
            Op::ConcatRows(_) => "concat_rows",
            Op::ConcatCols(_) => "concat_cols",
            Op::SliceRows(..) => "slice_rows",
            Op::SliceCols(..) => "slice_cols",
            Op::Softmax(_) => "softmax",
            Op::LogSoftmax(_) => "log_softmax",
            Op::LayerNorm { .. } => "layer_norm",
            Op::Gelu(_) => "gelu",
            Op::Sigmoid(_) => "sigmoid",
            Op::Log(_) => "log",
            Op::Relu(_) => "relu",
            Op::Mean(_) => "mean",
            Op::Sum(_) => "sum",
        }
    }
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Gradients produced by one backward pass.
#[derive(Debug, Default)]
pub struct Gradients {
    nodes: Vec<Option<Tensor>>,
    params: BTreeMap<ParamId, Tensor>,
}

impl Gradients {
    /// Gradient with respect to any node, `None` if the node was unreachable.
    pub fn wrt(&self, v: Var) -> Option<&Tensor> {
        self.nodes.get(v.0).and_then(|g| g.as_ref())
    }

    pub fn param(&self, id: ParamId) -> Option<&Tensor> {
        self.params.get(&id)
    }

    pub fn params(&self) -> &BTreeMap<ParamId, Tensor> {
        &self.params
    }

    pub fn into_params(self) -> BTreeMap<ParamId, Tensor> {
        self.params
    }
}

#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

impl Tape {
    pub fn new() -> Self {
        Tape { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    /// Operation name of a node, for diagnostics.
    pub fn kind(&self, v: Var) -> &'static str {
        self.nodes[v.0].op.kind()
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node { value, op, requires_grad });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    fn dims2(&self, v: Var) -> Result<(usize, usize)> {
        self.nodes[v.0].value.dims2()
    }

    pub fn constant(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Constant, false)
    }

    /// A differentiable leaf that is not a parameter.
    pub fn input(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Input, true)
    }

    pub fn param(&mut self, id: ParamId, t: Tensor) -> Var {
        self.push(t, Op::Param(id), true)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, k) = self.dims2(a)?;
        let (k2, n) = self.dims2(b)?;
        if k != k2 {
            return Err(Error::shape(format!("matmul {m}x{k} by {k2}x{n}")));
        }
        let mut out = vec![0.0; m * n];
        gemm(
            m,
            k,
            n,
            self.value(a).data(),
            (k as isize, 1),
            self.value(b).data(),
            (n as isize, 1),
            &mut out,
            false,
        );
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(Tensor::matrix(m, n, out)?, Op::MatMul(a, b), rg))
    }

    fn same_shape(&self, a: Var, b: Var, what: &str) -> Result<()> {
        if self.shape(a) != self.shape(b) {
            return Err(Error::shape(format!(
                "{what}: {:?} vs {:?}",
                self.shape(a),
                self.shape(b)
            )));
        }
        Ok(())
    }

    fn zip_with(&mut self, a: Var, b: Var, op: Op, f: impl Fn(f64, f64) -> f64) -> Var {
        let va = self.value(a);
        let vb = self.value(b);
        let data = va.data().iter().zip(vb.data()).map(|(&x, &y)| f(x, y)).collect();
        let t = Tensor::new(va.shape().to_vec(), data).expect("same shape");
        let rg = self.rg(a) || self.rg(b);
        self.push(t, op, rg)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "add")?;
        Ok(self.zip_with(a, b, Op::Add(a, b), |x, y| x + y))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "sub")?;
        Ok(self.zip_with(a, b, Op::Sub(a, b), |x, y| x - y))
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "mul")?;
        Ok(self.zip_with(a, b, Op::Mul(a, b), |x, y| x * y))
    }

    /// Adds a row vector (any shape holding `cols` values) to every row of `a`.
    pub fn add_row(&mut self, a: Var, row: Var) -> Result<Var> {
        let (_, width) = self.value(a).last_axis();
        if self.value(row).len() != width {
            return Err(Error::shape(format!(
                "add_row: row of {} values against width {width}",
                self.value(row).len()
            )));
        }
        let va = self.value(a);
        let vr = self.value(row).data();
        let mut data = va.data().to_vec();
        for chunk in data.chunks_mut(width) {
            for (x, b) in chunk.iter_mut().zip(vr) {
                *x += b;
            }
        }
        let t = Tensor::new(va.shape().to_vec(), data)?;
        let rg = self.rg(a) || self.rg(row);
        Ok(self.push(t, Op::AddRow(a, row), rg))
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Var {
        let t = self.value(a).map(|x| x * s);
        let rg = self.rg(a);
        self.push(t, Op::Scale(a, s), rg)
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        let t = self.value(a).transposed()?;
        let rg = self.rg(a);
        Ok(self.push(t, Op::Transpose(a), rg))
    }

    pub fn reshape(&mut self, a: Var, shape: Vec<usize>) -> Result<Var> {
        let t = self.value(a).clone().reshaped(shape)?;
        let rg = self.rg(a);
        Ok(self.push(t, Op::Reshape(a), rg))
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        if parts.is_empty() {
            return Err(Error::shape("concat_rows of nothing"));
        }
        let (_, cols) = self.dims2(parts[0])?;
        let mut rows = 0;
        let mut data = Vec::new();
        for &p in parts {
            let (r, c) = self.dims2(p)?;
            if c != cols {
                return Err(Error::shape(format!("concat_rows: {c} columns vs {cols}")));
            }
            rows += r;
            data.extend_from_slice(self.value(p).data());
        }
        let rg = parts.iter().any(|&p| self.rg(p));
        Ok(self.push(Tensor::matrix(rows, cols, data)?, Op::ConcatRows(parts.to_vec()), rg))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        if parts.is_empty() {
            return Err(Error::shape("concat_cols of nothing"));
        }
        let (rows, _) = self.dims2(parts[0])?;
        let mut widths = Vec::with_capacity(parts.len());
        for &p in parts {
            let (r, c) = self.dims2(p)?;
            if r != rows {
                return Err(Error::shape(format!("concat_cols: {r} rows vs {rows}")));
            }
            widths.push(c);
        }
        let cols: usize = widths.iter().sum();
        let mut data = vec![0.0; rows * cols];
        let mut offset = 0;
        for (&p, &w) in parts.iter().zip(&widths) {
            let src = self.value(p).data();
            for r in 0..rows {
                data[r * cols + offset..r * cols + offset + w].copy_from_slice(&src[r * w..(r + 1) * w]);
            }
            offset += w;
        }
        let rg = parts.iter().any(|&p| self.rg(p));
        Ok(self.push(Tensor::matrix(rows, cols, data)?, Op::ConcatCols(parts.to_vec()), rg))
    }

    pub fn slice_rows(&mut self, a: Var, start: usize, len: usize) -> Result<Var> {
        let (rows, cols) = self.dims2(a)?;
        if start + len > rows {
            return Err(Error::shape(format!("slice_rows {start}..{} of {rows}", start + len)));
        }
        let data = self.value(a).data()[start * cols..(start + len) * cols].to_vec();
        let rg = self.rg(a);
        Ok(self.push(Tensor::matrix(len, cols, data)?, Op::SliceRows(a, start), rg))
    }

    pub fn slice_cols(&mut self, a: Var, start: usize, len: usize) -> Result<Var> {
        let (rows, cols) = self.dims2(a)?;
        if start + len > cols {
            return Err(Error::shape(format!("slice_cols {start}..{} of {cols}", start + len)));
        }
        let src = self.value(a).data();
        let mut data = Vec::with_capacity(rows * len);
        for r in 0..rows {
            data.extend_from_slice(&src[r * cols + start..r * cols + start + len]);
        }
        let rg = self.rg(a);
        Ok(self.push(Tensor::matrix(rows, len, data)?, Op::SliceCols(a, start), rg))
    }

    fn nonempty_last_axis(&self, a: Var, what: &str) -> Result<(usize, usize)> {
        let (rows, width) = self.value(a).last_axis();
        if width == 0 || self.value(a).is_empty() {
            return Err(Error::shape(format!("{what} over an empty axis")));
        }
        Ok((rows, width))
    }

    /// Softmax along the last axis.
    pub fn softmax(&mut self, a: Var) -> Result<Var> {
        let (_, width) = self.nonempty_last_axis(a, "softmax")?;
        let va = self.value(a);
        let mut data = va.data().to_vec();
        for row in data.chunks_mut(width) {
            let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let mut total = 0.0;
            for x in row.iter_mut() {
                *x = (*x - max).exp();
                total += *x;
            }
            for x in row.iter_mut() {
                *x /= total;
            }
        }
        let t = Tensor::new(va.shape().to_vec(), data)?;
        let rg = self.rg(a);
        Ok(self.push(t, Op::Softmax(a), rg))
    }

    /// Log-softmax along the last axis.
    pub fn log_softmax(&mut self, a: Var) -> Result<Var> {
        let (_, width) = self.nonempty_last_axis(a, "log_softmax")?;
        let va = self.value(a);
        let mut data = va.data().to_vec();
        for row in data.chunks_mut(width) {
            let (arg, max) = row
                .iter()
                .copied()
                .enumerate()
                .fold((0, f64::NEG_INFINITY), |best, (i, x)| if x > best.1 { (i, x) } else { best });
            // ln(1 + rest) keeps full precision when the max dominates
            let rest: f64 = row.iter().enumerate().filter(|&(i, _)| i != arg).map(|(_, x)| (x - max).exp()).sum();
            let tail = rest.ln_1p();
            for x in row.iter_mut() {
                *x = (*x - max) - tail;
            }
        }
        let t = Tensor::new(va.shape().to_vec(), data)?;
        let rg = self.rg(a);
        Ok(self.push(t, Op::LogSoftmax(a), rg))
    }

    /// Layer normalization along the last axis with population variance.
    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Var, eps: f64) -> Result<Var> {
        let (rows, width) = self.nonempty_last_axis(x, "layer_norm")?;
        if self.value(gain).len() != width || self.value(bias).len() != width {
            return Err(Error::shape(format!(
                "layer_norm: gain/bias of {}/{} values against width {width}",
                self.value(gain).len(),
                self.value(bias).len()
            )));
        }
        let vx = self.value(x);
        let g = self.value(gain).data();
        let b = self.value(bias).data();
        let mut xhat = vec![0.0; vx.len()];
        let mut inv_std = vec![0.0; rows];
        let mut out = vec![0.0; vx.len()];
        for r in 0..rows {
            let row = &vx.data()[r * width..(r + 1) * width];
            let mean = row.iter().sum::<f64>() / width as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / width as f64;
            let inv = 1.0 / (var + eps).sqrt();
            inv_std[r] = inv;
            for c in 0..width {
                let h = (row[c] - mean) * inv;
                xhat[r * width + c] = h;
                out[r * width + c] = h * g[c] + b[c];
            }
        }
        let t = Tensor::new(vx.shape().to_vec(), out)?;
        let rg = self.rg(x) || self.rg(gain) || self.rg(bias);
        Ok(self.push(t, Op::LayerNorm { x, gain, bias, xhat, inv_std }, rg))
    }

    /// GELU, tanh approximation.
    pub fn gelu(&mut self, a: Var) -> Var {
        let t = self.value(a).map(|x| 0.5 * x * (1.0 + (GELU_C * (x + GELU_A * x * x * x)).tanh()));
        let rg = self.rg(a);
        self.push(t, Op::Gelu(a), rg)
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let t = self.value(a).map(sigmoid);
        let rg = self.rg(a);
        self.push(t, Op::Sigmoid(a), rg)
    }

    pub fn log(&mut self, a: Var) -> Result<Var> {
        if self.value(a).is_empty() {
            return Err(Error::shape("log of an empty tensor"));
        }
        let t = self.value(a).map(f64::ln);
        let rg = self.rg(a);
        Ok(self.push(t, Op::Log(a), rg))
    }

    /// `max(0, x)`; the subgradient at 0 is 0.
    pub fn relu(&mut self, a: Var) -> Var {
        let t = self.value(a).map(|x| x.max(0.0));
        let rg = self.rg(a);
        self.push(t, Op::Relu(a), rg)
    }

    /// Mean of all elements, as a 1×1 tensor. Summation is sequential in storage order.
    pub fn mean(&mut self, a: Var) -> Result<Var> {
        let n = self.value(a).len();
        if n == 0 {
            return Err(Error::shape("mean of an empty tensor"));
        }
        let s: f64 = self.value(a).data().iter().fold(0.0, |acc, x| acc + x);
        let rg = self.rg(a);
        Ok(self.push(Tensor::scalar(s / n as f64), Op::Mean(a), rg))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s: f64 = self.value(a).data().iter().fold(0.0, |acc, x| acc + x);
        let rg = self.rg(a);
        self.push(Tensor::scalar(s), Op::Sum(a), rg)
    }

    /// Gradients of a scalar node with respect to every reachable leaf.
    pub fn backward(&self, output: Var) -> Result<Gradients> {
        let v = self.value(output);
        if v.len() != 1 {
            return Err(Error::shape(format!("backward on non-scalar of shape {:?}", v.shape())));
        }
        self.backward_seeded(&[(output, Tensor::filled(v.shape(), 1.0))])
    }

    /// Backward pass starting from explicit upstream gradients on one or more nodes.
    pub fn backward_seeded(&self, seeds: &[(Var, Tensor)]) -> Result<Gradients> {
        let mut grads: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        let mut last = 0;
        for (v, g) in seeds {
            if g.shape() != self.shape(*v) {
                return Err(Error::shape(format!(
                    "seed gradient {:?} for node of shape {:?}",
                    g.shape(),
                    self.shape(*v)
                )));
            }
            accumulate(&mut grads[v.0], g.clone());
            last = last.max(v.0);
        }
        let mut params: BTreeMap<ParamId, Tensor> = BTreeMap::new();
        for idx in (0..=last).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            if !node.requires_grad {
                continue;
            }
            self.propagate(node, &g, &mut grads)?;
            if let Op::Param(id) = node.op {
                match params.get_mut(&id) {
                    Some(acc) => acc.add_assign(&g),
                    None => {
                        params.insert(id, g.clone());
                    }
                }
            }
            grads[idx] = Some(g);
        }
        Ok(Gradients { nodes: grads, params })
    }

    fn propagate(&self, node: &Node, g: &Tensor, grads: &mut [Option<Tensor>]) -> Result<()> {
        let out = &node.value;
        match &node.op {
            Op::Constant | Op::Input | Op::Param(_) => {}
            Op::MatMul(a, b) => {
                let (m, k) = self.dims2(*a)?;
                let (_, n) = self.dims2(*b)?;
                if self.rg(*a) {
                    // dA = G · Bᵀ
                    let mut da = vec![0.0; m * k];
                    gemm(m, n, k, g.data(), (n as isize, 1), self.value(*b).data(), (1, n as isize), &mut da, false);
                    accumulate(&mut grads[a.0], Tensor::matrix(m, k, da)?);
                }
                if self.rg(*b) {
                    // dB = Aᵀ · G
                    let mut db = vec![0.0; k * n];
                    gemm(k, m, n, self.value(*a).data(), (1, k as isize), g.data(), (n as isize, 1), &mut db, false);
                    accumulate(&mut grads[b.0], Tensor::matrix(k, n, db)?);
                }
            }
            Op::Add(a, b) => {
                if self.rg(*a) {
                    accumulate(&mut grads[a.0], g.clone());
                }
                if self.rg(*b) {
                    accumulate(&mut grads[b.0], g.clone());
                }
            }
            Op::Sub(a, b) => {
                if self.rg(*a) {
                    accumulate(&mut grads[a.0], g.clone());
                }
                if self.rg(*b) {
                    accumulate(&mut grads[b.0], g.map(|x| -x));
                }
            }
            Op::Mul(a, b) => {
                if self.rg(*a) {
                    let d = zip(g, self.value(*b), |x, y| x * y);
                    accumulate(&mut grads[a.0], d);
                }
                if self.rg(*b) {
                    let d = zip(g, self.value(*a), |x, y| x * y);
                    accumulate(&mut grads[b.0], d);
                }
            }
            Op::AddRow(a, row) => {
                if self.rg(*a) {
                    accumulate(&mut grads[a.0], g.clone());
                }
                if self.rg(*row) {
                    let width = self.value(*row).len();
                    let mut d = vec![0.0; width];
                    for chunk in g.data().chunks(width) {
                        for (acc, x) in d.iter_mut().zip(chunk) {
                            *acc += x;
                        }
                    }
                    let shape = self.shape(*row).to_vec();
                    accumulate(&mut grads[row.0], Tensor::new(shape, d)?);
                }
            }
            Op::Scale(a, s) => {
                if self.rg(*a) {
                    accumulate(&mut grads[a.0], g.map(|x| x * s));
                }
            }
            Op::Transpose(a) => {
                if self.rg(*a) {
                    accumulate(&mut grads[a.0], g.transposed()?);
                }
            }
            Op::Reshape(a) => {
                if self.rg(*a) {
                    let shape = self.shape(*a).to_vec();
                    accumulate(&mut grads[a.0], g.clone().reshaped(shape)?);
                }
            }
            Op::ConcatRows(parts) => {
                let (_, cols) = g.dims2()?;
                let mut offset = 0;
                for p in parts {
                    let (r, _) = self.dims2(*p)?;
                    if self.rg(*p) {
                        let d = g.data()[offset * cols..(offset + r) * cols].to_vec();
                        accumulate(&mut grads[p.0], Tensor::matrix(r, cols, d)?);
                    }
                    offset += r;
                }
            }
            Op::ConcatCols(parts) => {
                let (rows, cols) = g.dims2()?;
                let mut offset = 0;
                for p in parts {
                    let (_, w) = self.dims2(*p)?;
                    if self.rg(*p) {
                        let mut d = Vec::with_capacity(rows * w);
                        for r in 0..rows {
                            d.extend_from_slice(&g.data()[r * cols + offset..r * cols + offset + w]);
                        }
                        accumulate(&mut grads[p.0], Tensor::matrix(rows, w, d)?);
                    }
                    offset += w;
                }
            }
            Op::SliceRows(a, start) => {
                if self.rg(*a) {
                    let (rows, cols) = self.dims2(*a)?;
                    let mut d = vec![0.0; rows * cols];
                    d[start * cols..start * cols + g.len()].copy_from_slice(g.data());
                    accumulate(&mut grads[a.0], Tensor::matrix(rows, cols, d)?);
                }
            }
            Op::SliceCols(a, start) => {
                if self.rg(*a) {
                    let (rows, cols) = self.dims2(*a)?;
                    let (_, w) = g.dims2()?;
                    let mut d = vec![0.0; rows * cols];
                    for r in 0..rows {
                        d[r * cols + start..r * cols + start + w].copy_from_slice(&g.data()[r * w..(r + 1) * w]);
                    }
                    accumulate(&mut grads[a.0], Tensor::matrix(rows, cols, d)?);
                }
            }
            Op::Softmax(a) => {
                if self.rg(*a) {
                    let (_, width) = out.last_axis();
                    let mut d = vec![0.0; out.len()];
                    for ((dr, yr), gr) in d.chunks_mut(width).zip(out.data().chunks(width)).zip(g.data().chunks(width)) {
                        let dot: f64 = yr.iter().zip(gr).map(|(y, g)| y * g).sum();
                        for ((dx, y), gy) in dr.iter_mut().zip(yr).zip(gr) {
                            *dx = y * (gy - dot);
                        }
                    }
                    accumulate(&mut grads[a.0], Tensor::new(out.shape().to_vec(), d)?);
                }
            }
            Op::LogSoftmax(a) => {
                if self.rg(*a) {
                    let (_, width) = out.last_axis();
                    let mut d = vec![0.0; out.len()];
                    for ((dr, yr), gr) in d.chunks_mut(width).zip(out.data().chunks(width)).zip(g.data().chunks(width)) {
                        let total: f64 = gr.iter().sum();
                        for ((dx, y), gy) in dr.iter_mut().zip(yr).zip(gr) {
                            *dx = gy - y.exp() * total;
                        }
                    }
                    accumulate(&mut grads[a.0], Tensor::new(out.shape().to_vec(), d)?);
                }
            }
            Op::LayerNorm { x, gain, bias, xhat, inv_std } => {
                let width = self.value(*gain).len();
                let gv = self.value(*gain).data();
                if self.rg(*x) {
                    let mut d = vec![0.0; out.len()];
                    for (r, inv) in inv_std.iter().enumerate() {
                        let gr = &g.data()[r * width..(r + 1) * width];
                        let hr = &xhat[r * width..(r + 1) * width];
                        let mut s1 = 0.0;
                        let mut s2 = 0.0;
                        for c in 0..width {
                            let dh = gr[c] * gv[c];
                            s1 += dh;
                            s2 += dh * hr[c];
                        }
                        let nf = width as f64;
                        for c in 0..width {
                            let dh = gr[c] * gv[c];
                            d[r * width + c] = inv / nf * (nf * dh - s1 - hr[c] * s2);
                        }
                    }
                    accumulate(&mut grads[x.0], Tensor::new(out.shape().to_vec(), d)?);
                }
                if self.rg(*gain) {
                    let mut d = vec![0.0; width];
                    for (gr, hr) in g.data().chunks(width).zip(xhat.chunks(width)) {
                        for c in 0..width {
                            d[c] += gr[c] * hr[c];
                        }
                    }
                    let shape = self.shape(*gain).to_vec();
                    accumulate(&mut grads[gain.0], Tensor::new(shape, d)?);
                }
                if self.rg(*bias) {
                    let mut d = vec![0.0; width];
                    for gr in g.data().chunks(width) {
                        for c in 0..width {
                            d[c] += gr[c];
                        }
                    }
                    let shape = self.shape(*bias).to_vec();
                    accumulate(&mut grads[bias.0], Tensor::new(shape, d)?);
                }
            }
            Op::Gelu(a) => {
                if self.rg(*a) {
                    let d = zip(g, self.value(*a), |gy, x| {
                        let u = GELU_C * (x + GELU_A * x * x * x);
                        let t = u.tanh();
                        let du = GELU_C * (1.0 + 3.0 * GELU_A * x * x);
                        gy * (0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * du)
                    });
                    accumulate(&mut grads[a.0], d);
                }
            }
            Op::Sigmoid(a) => {
                if self.rg(*a) {
                    let d = zip(g, out, |gy, y| gy * y * (1.0 - y));
                    accumulate(&mut grads[a.0], d);
                }
            }
            Op::Log(a) => {
                if self.rg(*a) {
                    let d = zip(g, self.value(*a), |gy, x| gy / x);
                    accumulate(&mut grads[a.0], d);
                }
            }
            Op::Relu(a) => {
                if self.rg(*a) {
                    let d = zip(g, self.value(*a), |gy, x| if x > 0.0 { gy } else { 0.0 });
                    accumulate(&mut grads[a.0], d);
                }
            }
            Op::Mean(a) => {
                if self.rg(*a) {
                    let n = self.value(*a).len() as f64;
                    let t = Tensor::filled(self.shape(*a), g.data()[0] / n);
                    accumulate(&mut grads[a.0], t);
                }
            }
            Op::Sum(a) => {
                if self.rg(*a) {
                    let t = Tensor::filled(self.shape(*a), g.data()[0]);
                    accumulate(&mut grads[a.0], t);
                }
            }
        }
        Ok(())
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn zip(a: &Tensor, b: &Tensor, f: impl Fn(f64, f64) -> f64) -> Tensor {
    let data = a.data().iter().zip(b.data()).map(|(&x, &y)| f(x, y)).collect();
    Tensor::new(a.shape().to_vec(), data).expect("same shape")
}

fn accumulate(slot: &mut Option<Tensor>, g: Tensor) {
    match slot {
        Some(acc) => acc.add_assign(&g),
        None => *slot = Some(g),
    }
}
