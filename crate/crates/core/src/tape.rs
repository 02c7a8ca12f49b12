//! Reverse-mode automatic differentiation on a flat tape.
//!
//! Values are computed eagerly as the graph is built; `backward` walks the
//! tape in reverse and accumulates exact derivatives of a scalar loss into
//! every node that (transitively) depends on a parameter leaf.
//!
//! There is no implicit broadcasting. The only shape-bending primitives are
//! the explicit row/column bias additions; everything else demands exactly
//! conforming shapes and fails with a shape error naming both sides.

use crate::error::{Error, Result};
use crate::params::ParamStore;
use crate::tensor::{matmul, matmul_nt_acc, matmul_tn_acc, Tensor};
use std::collections::BTreeMap;

/// Handle to a value on the tape.
pub type ValueId = usize;

/// Inputs within this distance of a relu kink mark the whole pass as
/// unreliable for finite differencing.
pub const KINK_TOL: f64 = 1e-7;

enum Op {
    Const,
    Param,
    MatMul { a: ValueId, b: ValueId },
    Add { a: ValueId, b: ValueId },
    Sub { a: ValueId, b: ValueId },
    Mul { a: ValueId, b: ValueId },
    AddRowBias { a: ValueId, bias: ValueId },
    AddColBias { a: ValueId, bias: ValueId },
    Scale { a: ValueId, c: f64 },
    AddScalar { a: ValueId },
    Relu { a: ValueId },
    Exp { a: ValueId },
    Log { a: ValueId },
    Softmax { a: ValueId },
    LayerNorm { a: ValueId, gain: ValueId, bias: ValueId, eps: f64 },
    Transpose { a: ValueId },
    ConcatRows { parts: Vec<ValueId> },
    ConcatCols { parts: Vec<ValueId> },
    StackRows { parts: Vec<ValueId> },
    GatherRows { a: ValueId, indices: Vec<usize> },
    Row { a: ValueId, index: usize },
    Elem { a: ValueId, index: usize },
    StackScalars { parts: Vec<ValueId> },
    SumAll { a: ValueId },
    MeanAll { a: ValueId },
    Reshape { a: ValueId },
}

struct Node {
    value: Tensor,
    op: Op,
    needs_grad: bool,
}

/// Eagerly evaluated computation tape.
pub struct Tape {
    nodes: Vec<Node>,
    grads: Vec<Option<Tensor>>,
    kink_hit: bool,
    min_relu_abs: f64,
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

impl Tape {
    pub fn new() -> Self {
        Tape {
            nodes: Vec::new(),
            grads: Vec::new(),
            kink_hit: false,
            min_relu_abs: f64::INFINITY,
        }
    }

    /// Smallest |input| any relu of this pass has seen; diagnostic for
    /// excluded gradient-check coordinates.
    pub fn min_relu_abs(&self) -> f64 {
        self.min_relu_abs
    }

    pub fn value(&self, id: ValueId) -> &Tensor {
        &self.nodes[id].value
    }

    /// Gradient of the last `backward` loss w.r.t. node `id`, if any flowed.
    pub fn grad(&self, id: ValueId) -> Option<&Tensor> {
        self.grads.get(id).and_then(|g| g.as_ref())
    }

    /// True when any relu input of this pass sat within [`KINK_TOL`] of 0.
    pub fn kink_hit(&self) -> bool {
        self.kink_hit
    }

    fn push(&mut self, value: Tensor, op: Op, needs_grad: bool) -> ValueId {
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
        });
        self.nodes.len() - 1
    }

    fn needs(&self, id: ValueId) -> bool {
        self.nodes[id].needs_grad
    }

    /// Untracked constant.
    pub fn constant(&mut self, value: Tensor) -> ValueId {
        self.push(value, Op::Const, false)
    }

    /// Tracked leaf; gradients accumulate here.
    pub fn param(&mut self, value: Tensor) -> ValueId {
        self.push(value, Op::Param, true)
    }

    pub fn ones(&mut self, rows: usize, cols: usize) -> ValueId {
        self.constant(Tensor::full(vec![rows, cols], 1.0))
    }

    fn shape_err(op: &'static str, lhs: &Tensor, rhs: &Tensor) -> Error {
        Error::Shape {
            op,
            lhs: lhs.shape().to_vec(),
            rhs: rhs.shape().to_vec(),
        }
    }

    /// C = A·B for 2-D operands.
    pub fn matmul(&mut self, a: ValueId, b: ValueId) -> Result<ValueId> {
        let (m, k) = self.nodes[a].value.dims2();
        let (k2, n) = self.nodes[b].value.dims2();
        if self.nodes[a].value.shape().len() != 2 || self.nodes[b].value.shape().len() != 2 || k != k2 {
            return Err(Self::shape_err("matmul", &self.nodes[a].value, &self.nodes[b].value));
        }
        let data = matmul(self.nodes[a].value.data(), self.nodes[b].value.data(), m, k, n);
        let needs = self.needs(a) || self.needs(b);
        Ok(self.push(Tensor::new(vec![m, n], data)?, Op::MatMul { a, b }, needs))
    }

    fn elementwise(
        &mut self,
        op_name: &'static str,
        a: ValueId,
        b: ValueId,
        f: impl Fn(f64, f64) -> f64,
        op: Op,
    ) -> Result<ValueId> {
        if self.nodes[a].value.shape() != self.nodes[b].value.shape() {
            return Err(Self::shape_err(op_name, &self.nodes[a].value, &self.nodes[b].value));
        }
        let data: Vec<f64> = self.nodes[a]
            .value
            .data()
            .iter()
            .zip(self.nodes[b].value.data())
            .map(|(x, y)| f(*x, *y))
            .collect();
        let shape = self.nodes[a].value.shape().to_vec();
        let needs = self.needs(a) || self.needs(b);
        Ok(self.push(Tensor::new(shape, data)?, op, needs))
    }

    pub fn add(&mut self, a: ValueId, b: ValueId) -> Result<ValueId> {
        self.elementwise("add", a, b, |x, y| x + y, Op::Add { a, b })
    }

    pub fn sub(&mut self, a: ValueId, b: ValueId) -> Result<ValueId> {
        self.elementwise("sub", a, b, |x, y| x - y, Op::Sub { a, b })
    }

    pub fn mul(&mut self, a: ValueId, b: ValueId) -> Result<ValueId> {
        self.elementwise("mul", a, b, |x, y| x * y, Op::Mul { a, b })
    }

    /// A[m,n] + bias[n] added to every row.
    pub fn add_row_bias(&mut self, a: ValueId, bias: ValueId) -> Result<ValueId> {
        let (m, n) = self.nodes[a].value.dims2();
        if self.nodes[bias].value.shape() != [n] {
            return Err(Self::shape_err("add_row_bias", &self.nodes[a].value, &self.nodes[bias].value));
        }
        let bdata = self.nodes[bias].value.data();
        let mut data = self.nodes[a].value.data().to_vec();
        for i in 0..m {
            for j in 0..n {
                data[i * n + j] += bdata[j];
            }
        }
        let shape = self.nodes[a].value.shape().to_vec();
        let needs = self.needs(a) || self.needs(bias);
        Ok(self.push(Tensor::new(shape, data)?, Op::AddRowBias { a, bias }, needs))
    }

    /// A[m,n] + bias[m] added to every column.
    pub fn add_col_bias(&mut self, a: ValueId, bias: ValueId) -> Result<ValueId> {
        let (m, n) = self.nodes[a].value.dims2();
        if self.nodes[bias].value.shape() != [m] {
            return Err(Self::shape_err("add_col_bias", &self.nodes[a].value, &self.nodes[bias].value));
        }
        let bdata = self.nodes[bias].value.data();
        let mut data = self.nodes[a].value.data().to_vec();
        for i in 0..m {
            for j in 0..n {
                data[i * n + j] += bdata[i];
            }
        }
        let shape = self.nodes[a].value.shape().to_vec();
        let needs = self.needs(a) || self.needs(bias);
        Ok(self.push(Tensor::new(shape, data)?, Op::AddColBias { a, bias }, needs))
    }

    pub fn scale(&mut self, a: ValueId, c: f64) -> ValueId {
        let data: Vec<f64> = self.nodes[a].value.data().iter().map(|x| c * x).collect();
        let t = Tensor::new(self.nodes[a].value.shape().to_vec(), data).expect("same shape");
        let needs = self.needs(a);
        self.push(t, Op::Scale { a, c }, needs)
    }

    pub fn add_scalar(&mut self, a: ValueId, c: f64) -> ValueId {
        let data: Vec<f64> = self.nodes[a].value.data().iter().map(|x| c + x).collect();
        let t = Tensor::new(self.nodes[a].value.shape().to_vec(), data).expect("same shape");
        let needs = self.needs(a);
        self.push(t, Op::AddScalar { a }, needs)
    }

    /// max(0, x); inputs at exactly 0 get subgradient 0.
    pub fn relu(&mut self, a: ValueId) -> ValueId {
        let mut near_kink = false;
        let mut min_abs = self.min_relu_abs;
        let data: Vec<f64> = self.nodes[a]
            .value
            .data()
            .iter()
            .map(|&x| {
                min_abs = min_abs.min(x.abs());
                if x.abs() <= KINK_TOL {
                    near_kink = true;
                }
                if x > 0.0 {
                    x
                } else {
                    0.0
                }
            })
            .collect();
        self.min_relu_abs = min_abs;
        if near_kink {
            self.kink_hit = true;
        }
        let t = Tensor::new(self.nodes[a].value.shape().to_vec(), data).expect("same shape");
        let needs = self.needs(a);
        self.push(t, Op::Relu { a }, needs)
    }

    pub fn exp(&mut self, a: ValueId) -> Result<ValueId> {
        let data: Vec<f64> = self.nodes[a].value.data().iter().map(|x| x.exp()).collect();
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::Domain {
                primitive: "exp",
                detail: "overflow to non-finite output".into(),
            });
        }
        let t = Tensor::new(self.nodes[a].value.shape().to_vec(), data)?;
        let needs = self.needs(a);
        Ok(self.push(t, Op::Exp { a }, needs))
    }

    pub fn log(&mut self, a: ValueId) -> Result<ValueId> {
        if let Some(bad) = self.nodes[a].value.data().iter().find(|v| **v <= 0.0) {
            return Err(Error::Domain {
                primitive: "log",
                detail: format!("input {bad} is not strictly positive"),
            });
        }
        let data: Vec<f64> = self.nodes[a].value.data().iter().map(|x| x.ln()).collect();
        let t = Tensor::new(self.nodes[a].value.shape().to_vec(), data)?;
        let needs = self.needs(a);
        Ok(self.push(t, Op::Log { a }, needs))
    }

    /// Row-wise softmax over the last axis (vectors are one row).
    pub fn softmax(&mut self, a: ValueId) -> ValueId {
        let (m, n) = self.nodes[a].value.dims2();
        let src = self.nodes[a].value.data();
        let mut data = vec![0.0; m * n];
        for i in 0..m {
            let row = &src[i * n..(i + 1) * n];
            let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let out = &mut data[i * n..(i + 1) * n];
            let mut sum = 0.0;
            for (o, x) in out.iter_mut().zip(row) {
                *o = (x - max).exp();
                sum += *o;
            }
            for o in out.iter_mut() {
                *o /= sum;
            }
        }
        let t = Tensor::new(self.nodes[a].value.shape().to_vec(), data).expect("same shape");
        let needs = self.needs(a);
        self.push(t, Op::Softmax { a }, needs)
    }

    /// Row-wise layer normalization with learned gain and bias over the
    /// last axis. The normalized axis must have length ≥ 2.
    pub fn layer_norm(&mut self, a: ValueId, gain: ValueId, bias: ValueId, eps: f64) -> Result<ValueId> {
        let (m, n) = self.nodes[a].value.dims2();
        if n < 2 {
            return Err(Error::DegenerateAxis);
        }
        if self.nodes[gain].value.shape() != [n] || self.nodes[bias].value.shape() != [n] {
            return Err(Self::shape_err("layer_norm", &self.nodes[a].value, &self.nodes[gain].value));
        }
        let src = self.nodes[a].value.data();
        let g = self.nodes[gain].value.data();
        let b = self.nodes[bias].value.data();
        let mut data = vec![0.0; m * n];
        for i in 0..m {
            let row = &src[i * n..(i + 1) * n];
            let mean = row.iter().sum::<f64>() / n as f64;
            let var = row.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n as f64;
            let denom = (var + eps).sqrt();
            if denom == 0.0 {
                return Err(Error::Domain {
                    primitive: "layer_norm",
                    detail: "zero variance with eps = 0".into(),
                });
            }
            let out = &mut data[i * n..(i + 1) * n];
            for j in 0..n {
                out[j] = g[j] * (row[j] - mean) / denom + b[j];
            }
        }
        let shape = self.nodes[a].value.shape().to_vec();
        let needs = self.needs(a) || self.needs(gain) || self.needs(bias);
        Ok(self.push(Tensor::new(shape, data)?, Op::LayerNorm { a, gain, bias, eps }, needs))
    }

    pub fn transpose(&mut self, a: ValueId) -> Result<ValueId> {
        let (m, n) = self.nodes[a].value.dims2();
        if self.nodes[a].value.shape().len() != 2 {
            return Err(Error::Shape {
                op: "transpose",
                lhs: self.nodes[a].value.shape().to_vec(),
                rhs: vec![],
            });
        }
        let src = self.nodes[a].value.data();
        let mut data = vec![0.0; m * n];
        for i in 0..m {
            for j in 0..n {
                data[j * m + i] = src[i * n + j];
            }
        }
        let needs = self.needs(a);
        Ok(self.push(Tensor::new(vec![n, m], data)?, Op::Transpose { a }, needs))
    }

    /// Vertically concatenate 2-D blocks sharing a column count.
    pub fn concat_rows(&mut self, parts: &[ValueId]) -> Result<ValueId> {
        let n = self.nodes[parts[0]].value.dims2().1;
        let mut rows = 0;
        let mut data = Vec::new();
        let mut needs = false;
        for &p in parts {
            let (m, pn) = self.nodes[p].value.dims2();
            if pn != n || self.nodes[p].value.shape().len() != 2 {
                return Err(Self::shape_err("concat_rows", &self.nodes[parts[0]].value, &self.nodes[p].value));
            }
            rows += m;
            data.extend_from_slice(self.nodes[p].value.data());
            needs |= self.needs(p);
        }
        Ok(self.push(
            Tensor::new(vec![rows, n], data)?,
            Op::ConcatRows { parts: parts.to_vec() },
            needs,
        ))
    }

    /// Horizontally concatenate 2-D blocks sharing a row count.
    pub fn concat_cols(&mut self, parts: &[ValueId]) -> Result<ValueId> {
        let m = self.nodes[parts[0]].value.dims2().0;
        let mut cols = 0;
        let mut needs = false;
        for &p in parts {
            let (pm, pn) = self.nodes[p].value.dims2();
            if pm != m || self.nodes[p].value.shape().len() != 2 {
                return Err(Self::shape_err("concat_cols", &self.nodes[parts[0]].value, &self.nodes[p].value));
            }
            cols += pn;
            needs |= self.needs(p);
        }
        let mut data = vec![0.0; m * cols];
        let mut offset = 0;
        for &p in parts {
            let (_, pn) = self.nodes[p].value.dims2();
            let src = self.nodes[p].value.data();
            for i in 0..m {
                data[i * cols + offset..i * cols + offset + pn]
                    .copy_from_slice(&src[i * pn..(i + 1) * pn]);
            }
            offset += pn;
        }
        Ok(self.push(
            Tensor::new(vec![m, cols], data)?,
            Op::ConcatCols { parts: parts.to_vec() },
            needs,
        ))
    }

    /// Stack equal-length vectors as the rows of a matrix.
    pub fn stack_rows(&mut self, parts: &[ValueId]) -> Result<ValueId> {
        let n = self.nodes[parts[0]].value.numel();
        let mut data = Vec::with_capacity(parts.len() * n);
        let mut needs = false;
        for &p in parts {
            if self.nodes[p].value.shape() != [n] {
                return Err(Self::shape_err("stack_rows", &self.nodes[parts[0]].value, &self.nodes[p].value));
            }
            data.extend_from_slice(self.nodes[p].value.data());
            needs |= self.needs(p);
        }
        Ok(self.push(
            Tensor::new(vec![parts.len(), n], data)?,
            Op::StackRows { parts: parts.to_vec() },
            needs,
        ))
    }

    /// Select rows of a matrix by index, in the given order.
    pub fn gather_rows(&mut self, a: ValueId, indices: &[usize]) -> Result<ValueId> {
        let (m, n) = self.nodes[a].value.dims2();
        if let Some(&bad) = indices.iter().find(|&&i| i >= m) {
            return Err(Error::Partition(format!("row index {bad} out of range for {m} rows")));
        }
        let src = self.nodes[a].value.data();
        let mut data = Vec::with_capacity(indices.len() * n);
        for &i in indices {
            data.extend_from_slice(&src[i * n..(i + 1) * n]);
        }
        let needs = self.needs(a);
        Ok(self.push(
            Tensor::new(vec![indices.len(), n], data)?,
            Op::GatherRows { a, indices: indices.to_vec() },
            needs,
        ))
    }

    /// Extract row `index` of a matrix as a vector.
    pub fn row(&mut self, a: ValueId, index: usize) -> Result<ValueId> {
        let (m, n) = self.nodes[a].value.dims2();
        if index >= m {
            return Err(Error::Partition(format!("row index {index} out of range for {m} rows")));
        }
        let data = self.nodes[a].value.data()[index * n..(index + 1) * n].to_vec();
        let needs = self.needs(a);
        Ok(self.push(Tensor::vector(data), Op::Row { a, index }, needs))
    }

    /// Extract element `index` of a vector as a scalar.
    pub fn elem(&mut self, a: ValueId, index: usize) -> Result<ValueId> {
        if index >= self.nodes[a].value.numel() {
            return Err(Error::Partition(format!(
                "element index {index} out of range for {} elements",
                self.nodes[a].value.numel()
            )));
        }
        let v = self.nodes[a].value.data()[index];
        let needs = self.needs(a);
        Ok(self.push(Tensor::scalar(v), Op::Elem { a, index }, needs))
    }

    /// Stack scalar nodes into a vector.
    pub fn stack_scalars(&mut self, parts: &[ValueId]) -> Result<ValueId> {
        let mut data = Vec::with_capacity(parts.len());
        let mut needs = false;
        for &p in parts {
            if !self.nodes[p].value.is_scalar() {
                return Err(Self::shape_err("stack_scalars", &self.nodes[parts[0]].value, &self.nodes[p].value));
            }
            data.push(self.nodes[p].value.item());
            needs |= self.needs(p);
        }
        Ok(self.push(
            Tensor::vector(data),
            Op::StackScalars { parts: parts.to_vec() },
            needs,
        ))
    }

    pub fn sum_all(&mut self, a: ValueId) -> ValueId {
        let s: f64 = self.nodes[a].value.data().iter().sum();
        let needs = self.needs(a);
        self.push(Tensor::scalar(s), Op::SumAll { a }, needs)
    }

    pub fn mean_all(&mut self, a: ValueId) -> ValueId {
        let n = self.nodes[a].value.numel();
        let s: f64 = self.nodes[a].value.data().iter().sum();
        let needs = self.needs(a);
        self.push(Tensor::scalar(s / n as f64), Op::MeanAll { a }, needs)
    }

    /// Reinterpret the data under a new shape of equal element count.
    pub fn reshape(&mut self, a: ValueId, shape: Vec<usize>) -> Result<ValueId> {
        let numel: usize = shape.iter().product();
        if numel != self.nodes[a].value.numel() {
            return Err(Error::Shape {
                op: "reshape",
                lhs: self.nodes[a].value.shape().to_vec(),
                rhs: shape,
            });
        }
        let t = Tensor::new(shape, self.nodes[a].value.data().to_vec())?;
        let needs = self.needs(a);
        Ok(self.push(t, Op::Reshape { a }, needs))
    }

    /// View a length-n vector as a 1×n matrix.
    pub fn as_row(&mut self, a: ValueId) -> Result<ValueId> {
        let n = self.nodes[a].value.numel();
        self.reshape(a, vec![1, n])
    }

    fn accumulate(&mut self, id: ValueId, delta: &[f64]) {
        if !self.nodes[id].needs_grad {
            return;
        }
        let slot = &mut self.grads[id];
        match slot {
            Some(g) => {
                for (gv, dv) in g.data_mut().iter_mut().zip(delta) {
                    *gv += dv;
                }
            }
            None => {
                let shape = self.nodes[id].value.shape().to_vec();
                let mut t = Tensor::zeros(shape);
                t.data_mut().copy_from_slice(delta);
                *slot = Some(t);
            }
        }
    }

    /// Reverse sweep from a scalar loss node. Gradients are then readable
    /// through [`Tape::grad`].
    pub fn backward(&mut self, loss: ValueId) -> Result<()> {
        if !self.nodes[loss].value.is_scalar() {
            return Err(Error::Shape {
                op: "backward",
                lhs: self.nodes[loss].value.shape().to_vec(),
                rhs: vec![1],
            });
        }
        self.grads = (0..self.nodes.len()).map(|_| None).collect();
        self.grads[loss] = Some(Tensor::scalar(1.0));

        for id in (0..self.nodes.len()).rev() {
            if !self.nodes[id].needs_grad || self.grads[id].is_none() {
                continue;
            }
            let out_grad = self.grads[id].take().expect("present");
            self.propagate(id, &out_grad)?;
            self.grads[id] = Some(out_grad);
        }
        Ok(())
    }

    fn propagate(&mut self, id: ValueId, dc: &Tensor) -> Result<()> {
        // Out-of-band borrow of the node's op description.
        match &self.nodes[id].op {
            Op::Const | Op::Param => {}
            Op::MatMul { a, b } => {
                let (a, b) = (*a, *b);
                let (m, k) = self.nodes[a].value.dims2();
                let n = self.nodes[b].value.dims2().1;
                if self.needs(a) {
                    let mut da = vec![0.0; m * k];
                    matmul_nt_acc(&mut da, dc.data(), self.nodes[b].value.data(), m, n, k);
                    self.accumulate(a, &da);
                }
                if self.needs(b) {
                    let mut db = vec![0.0; k * n];
                    matmul_tn_acc(&mut db, self.nodes[a].value.data(), dc.data(), k, m, n);
                    self.accumulate(b, &db);
                }
            }
            Op::Add { a, b } => {
                let (a, b) = (*a, *b);
                self.accumulate(a, dc.data());
                self.accumulate(b, dc.data());
            }
            Op::Sub { a, b } => {
                let (a, b) = (*a, *b);
                self.accumulate(a, dc.data());
                if self.needs(b) {
                    let neg: Vec<f64> = dc.data().iter().map(|v| -v).collect();
                    self.accumulate(b, &neg);
                }
            }
            Op::Mul { a, b } => {
                let (a, b) = (*a, *b);
                if self.needs(a) {
                    let da: Vec<f64> = dc
                        .data()
                        .iter()
                        .zip(self.nodes[b].value.data())
                        .map(|(d, y)| d * y)
                        .collect();
                    self.accumulate(a, &da);
                }
                if self.needs(b) {
                    let db: Vec<f64> = dc
                        .data()
                        .iter()
                        .zip(self.nodes[a].value.data())
                        .map(|(d, x)| d * x)
                        .collect();
                    self.accumulate(b, &db);
                }
            }
            Op::AddRowBias { a, bias } => {
                let (a, bias) = (*a, *bias);
                let (m, n) = self.nodes[a].value.dims2();
                self.accumulate(a, dc.data());
                if self.needs(bias) {
                    let mut db = vec![0.0; n];
                    for i in 0..m {
                        for j in 0..n {
                            db[j] += dc.data()[i * n + j];
                        }
                    }
                    self.accumulate(bias, &db);
                }
            }
            Op::AddColBias { a, bias } => {
                let (a, bias) = (*a, *bias);
                let (m, n) = self.nodes[a].value.dims2();
                self.accumulate(a, dc.data());
                if self.needs(bias) {
                    let mut db = vec![0.0; m];
                    for i in 0..m {
                        for j in 0..n {
                            db[i] += dc.data()[i * n + j];
                        }
                    }
                    self.accumulate(bias, &db);
                }
            }
            Op::Scale { a, c } => {
                let (a, c) = (*a, *c);
                let da: Vec<f64> = dc.data().iter().map(|v| c * v).collect();
                self.accumulate(a, &da);
            }
            Op::AddScalar { a } => {
                let a = *a;
                self.accumulate(a, dc.data());
            }
            Op::Relu { a } => {
                let a = *a;
                let da: Vec<f64> = dc
                    .data()
                    .iter()
                    .zip(self.nodes[a].value.data())
                    .map(|(d, x)| if *x > 0.0 { *d } else { 0.0 })
                    .collect();
                self.accumulate(a, &da);
            }
            Op::Exp { a } => {
                let a = *a;
                let da: Vec<f64> = dc
                    .data()
                    .iter()
                    .zip(self.nodes[id].value.data())
                    .map(|(d, out)| d * out)
                    .collect();
                self.accumulate(a, &da);
            }
            Op::Log { a } => {
                let a = *a;
                let da: Vec<f64> = dc
                    .data()
                    .iter()
                    .zip(self.nodes[a].value.data())
                    .map(|(d, x)| d / x)
                    .collect();
                self.accumulate(a, &da);
            }
            Op::Softmax { a } => {
                let a = *a;
                let (m, n) = self.nodes[id].value.dims2();
                let p = self.nodes[id].value.data();
                let mut da = vec![0.0; m * n];
                for i in 0..m {
                    let prow = &p[i * n..(i + 1) * n];
                    let drow = &dc.data()[i * n..(i + 1) * n];
                    let dot: f64 = prow.iter().zip(drow).map(|(pv, dv)| pv * dv).sum();
                    for j in 0..n {
                        da[i * n + j] = prow[j] * (drow[j] - dot);
                    }
                }
                self.accumulate(a, &da);
            }
            Op::LayerNorm { a, gain, bias, eps } => {
                let (a, gain, bias, eps) = (*a, *gain, *bias, *eps);
                let (m, n) = self.nodes[a].value.dims2();
                let src = self.nodes[a].value.data();
                let g = self.nodes[gain].value.data();
                let mut da = vec![0.0; m * n];
                let mut dg = vec![0.0; n];
                let mut db = vec![0.0; n];
                for i in 0..m {
                    let row = &src[i * n..(i + 1) * n];
                    let drow = &dc.data()[i * n..(i + 1) * n];
                    let mean = row.iter().sum::<f64>() / n as f64;
                    let var = row.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n as f64;
                    let inv = 1.0 / (var + eps).sqrt();
                    let xhat: Vec<f64> = row.iter().map(|x| (x - mean) * inv).collect();
                    let dxhat: Vec<f64> = drow.iter().zip(g).map(|(d, gv)| d * gv).collect();
                    let mean_dxhat = dxhat.iter().sum::<f64>() / n as f64;
                    let mean_dxhat_xhat =
                        dxhat.iter().zip(&xhat).map(|(d, x)| d * x).sum::<f64>() / n as f64;
                    for j in 0..n {
                        da[i * n + j] = inv * (dxhat[j] - mean_dxhat - xhat[j] * mean_dxhat_xhat);
                        dg[j] += drow[j] * xhat[j];
                        db[j] += drow[j];
                    }
                }
                self.accumulate(a, &da);
                self.accumulate(gain, &dg);
                self.accumulate(bias, &db);
            }
            Op::Transpose { a } => {
                let a = *a;
                let (m, n) = self.nodes[a].value.dims2();
                let mut da = vec![0.0; m * n];
                for i in 0..n {
                    for j in 0..m {
                        da[j * n + i] = dc.data()[i * m + j];
                    }
                }
                self.accumulate(a, &da);
            }
            Op::ConcatRows { parts } => {
                let parts = parts.clone();
                let n = self.nodes[id].value.dims2().1;
                let mut offset = 0;
                for p in parts {
                    let rows = self.nodes[p].value.dims2().0;
                    let chunk = dc.data()[offset * n..(offset + rows) * n].to_vec();
                    self.accumulate(p, &chunk);
                    offset += rows;
                }
            }
            Op::ConcatCols { parts } => {
                let parts = parts.clone();
                let (m, cols) = self.nodes[id].value.dims2();
                let mut offset = 0;
                for p in parts {
                    let pn = self.nodes[p].value.dims2().1;
                    if self.needs(p) {
                        let mut chunk = vec![0.0; m * pn];
                        for i in 0..m {
                            chunk[i * pn..(i + 1) * pn]
                                .copy_from_slice(&dc.data()[i * cols + offset..i * cols + offset + pn]);
                        }
                        self.accumulate(p, &chunk);
                    }
                    offset += pn;
                }
            }
            Op::StackRows { parts } => {
                let parts = parts.clone();
                let n = self.nodes[id].value.dims2().1;
                for (i, p) in parts.into_iter().enumerate() {
                    let chunk = dc.data()[i * n..(i + 1) * n].to_vec();
                    self.accumulate(p, &chunk);
                }
            }
            Op::GatherRows { a, indices } => {
                let a = *a;
                let indices = indices.clone();
                let (m, n) = self.nodes[a].value.dims2();
                let mut da = vec![0.0; m * n];
                for (out_i, src_i) in indices.into_iter().enumerate() {
                    for j in 0..n {
                        da[src_i * n + j] += dc.data()[out_i * n + j];
                    }
                }
                self.accumulate(a, &da);
            }
            Op::Row { a, index } => {
                let (a, index) = (*a, *index);
                let (m, n) = self.nodes[a].value.dims2();
                let mut da = vec![0.0; m * n];
                da[index * n..(index + 1) * n].copy_from_slice(dc.data());
                self.accumulate(a, &da);
            }
            Op::Elem { a, index } => {
                let (a, index) = (*a, *index);
                let mut da = vec![0.0; self.nodes[a].value.numel()];
                da[index] = dc.item();
                self.accumulate(a, &da);
            }
            Op::StackScalars { parts } => {
                let parts = parts.clone();
                for (i, p) in parts.into_iter().enumerate() {
                    self.accumulate(p, &[dc.data()[i]]);
                }
            }
            Op::SumAll { a } => {
                let a = *a;
                let da = vec![dc.item(); self.nodes[a].value.numel()];
                self.accumulate(a, &da);
            }
            Op::MeanAll { a } => {
                let a = *a;
                let numel = self.nodes[a].value.numel();
                let da = vec![dc.item() / numel as f64; numel];
                self.accumulate(a, &da);
            }
            Op::Reshape { a } => {
                let a = *a;
                self.accumulate(a, dc.data());
            }
        }
        Ok(())
    }
}

/// Name → tape leaf mapping for one forward pass over a parameter store.
pub struct ParamBinding {
    ids: BTreeMap<String, ValueId>,
}

impl ParamBinding {
    pub fn id(&self, name: &str) -> Result<ValueId> {
        self.ids
            .get(name)
            .copied()
            .ok_or_else(|| Error::UnknownParam(name.to_string()))
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &ValueId)> {
        self.ids.iter()
    }
}

/// Insert every parameter of `store` as a tracked leaf.
pub fn bind_params(tape: &mut Tape, store: &ParamStore) -> ParamBinding {
    let mut ids = BTreeMap::new();
    for (name, value) in store.iter_values() {
        let id = tape.param(value.clone());
        ids.insert(name.to_string(), id);
    }
    ParamBinding { ids }
}

/// Evaluate `graph`, backpropagate from its scalar loss, and fill the
/// parameter gradients of `store` with the exact reverse-mode derivatives.
pub fn forward_backward<F>(store: &mut ParamStore, graph: F) -> Result<f64>
where
    F: FnOnce(&mut Tape, &ParamBinding) -> Result<ValueId>,
{
    let mut tape = Tape::new();
    let binding = bind_params(&mut tape, store);
    let loss_id = graph(&mut tape, &binding)?;
    let loss = tape.value(loss_id).item();
    tape.backward(loss_id)?;
    store.zero_grads();
    for (name, &id) in binding.iter() {
        if let Some(g) = tape.grad(id) {
            store.set_grad(name, g)?;
        }
    }
    Ok(loss)
}

/// Evaluate `graph` without backpropagation. Returns the loss value and
/// whether the pass crossed a relu kink.
pub fn forward_only<F>(store: &ParamStore, graph: F) -> Result<(f64, bool)>
where
    F: FnOnce(&mut Tape, &ParamBinding) -> Result<ValueId>,
{
    let mut tape = Tape::new();
    let binding = bind_params(&mut tape, store);
    let loss_id = graph(&mut tape, &binding)?;
    Ok((tape.value(loss_id).item(), tape.kink_hit()))
}
