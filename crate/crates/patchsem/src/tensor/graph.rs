//! The recorded operation graph. Building an op validates shapes, computes
//! the forward value eagerly and appends a node; `backward` walks the nodes
//! in exact reverse recording order, accumulating gradients additively so a
//! tensor feeding several consumers receives the sum of their contributions.

use super::{Tensor, TensorError};

/// Handle to a node inside one [`Graph`]. Ids are only meaningful for the
/// graph that issued them.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct NodeId(pub(crate) usize);

#[derive(Clone, Debug)]
enum Op {
    Leaf,
    /// Same-length 1-d convolution with zero padding, odd kernel only.
    Conv1dSame {
        input: NodeId,
        kernel: NodeId,
        bias: NodeId,
    },
    Tanh {
        x: NodeId,
    },
    Relu {
        x: NodeId,
    },
    Sigmoid {
        x: NodeId,
    },
    /// Softmax along the last axis (per row for rank 2).
    Softmax {
        x: NodeId,
    },
    Matmul {
        a: NodeId,
        b: NodeId,
    },
    Transpose {
        x: NodeId,
    },
    Add {
        a: NodeId,
        b: NodeId,
    },
    Mul {
        a: NodeId,
        b: NodeId,
    },
    /// Add a `[1 x f]` bias row to every row of a `[n x f]` tensor.
    AddBias {
        x: NodeId,
        bias: NodeId,
    },
    Scale {
        x: NodeId,
        factor: f64,
    },
    /// Concatenate along axis 0 (rows) or axis 1 (columns).
    Concat {
        axis: usize,
        parts: Vec<NodeId>,
    },
    SliceRows {
        x: NodeId,
        start: usize,
    },
    MeanRows {
        x: NodeId,
    },
    SumAll {
        x: NodeId,
    },
    /// Row lookup into an embedding table. Id 0 is the padding row: it
    /// yields a zero row and never receives gradient, so the padding
    /// embedding stays frozen at zero.
    Gather {
        table: NodeId,
        ids: Vec<usize>,
    },
    /// Binary cross-entropy against a constant 0/1 target, with the
    /// prediction clamped to [eps, 1-eps] before the logs.
    BinaryCrossEntropy {
        pred: NodeId,
        target: f64,
    },
}

struct Node {
    value: Tensor,
    grad: Option<Vec<f64>>,
    requires_grad: bool,
    op: Op,
}

const BCE_EPS: f64 = 1e-12;
pub(crate) const PAD_ID: usize = 0;

#[derive(Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

impl Graph {
    pub fn new() -> Self {
        Graph { nodes: Vec::new() }
    }

    fn push(&mut self, value: Tensor, requires_grad: bool, op: Op) -> NodeId {
        let id = NodeId(self.nodes.len());
        self.nodes.push(Node {
            value,
            grad: None,
            requires_grad,
            op,
        });
        id
    }

    fn node(&self, id: NodeId) -> &Node {
        &self.nodes[id.0]
    }

    fn val(&self, id: NodeId) -> &Tensor {
        &self.nodes[id.0].value
    }

    fn needs(&self, ids: &[NodeId]) -> bool {
        ids.iter().any(|id| self.nodes[id.0].requires_grad)
    }

    /// The forward value of a node.
    pub fn value(&self, id: NodeId) -> &Tensor {
        self.val(id)
    }

    /// The accumulated gradient of a node after [`Graph::backward`].
    pub fn grad(&self, id: NodeId) -> Option<Tensor> {
        let node = self.node(id);
        node.grad.as_ref().map(|g| Tensor {
            shape: node.value.shape().to_vec(),
            data: g.clone(),
        })
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Insert an input tensor. Parameters are leaves with
    /// `requires_grad = true`; data enters as constant leaves.
    pub fn leaf(&mut self, value: Tensor, requires_grad: bool) -> NodeId {
        self.push(value, requires_grad, Op::Leaf)
    }

    pub fn constant(&mut self, value: Tensor) -> NodeId {
        self.leaf(value, false)
    }

    // ---- forward ops -----------------------------------------------------

    /// Zero-padded convolution keeping the sequence length: output row `j`
    /// contracts input rows `j - k/2 ..= j + k/2` with the kernel and adds
    /// the bias. `input` is `[n x d_in]`, `kernel` `[k x d_in x d_out]`,
    /// `bias` `[1 x d_out]`.
    pub fn conv1d_same(
        &mut self,
        input: NodeId,
        kernel: NodeId,
        bias: NodeId,
    ) -> Result<NodeId, TensorError> {
        let (i, k, b) = (self.val(input), self.val(kernel), self.val(bias));
        if k.rank() != 3 {
            return Err(TensorError::ShapeMismatch(format!(
                "conv kernel must be rank 3, got {:?}",
                k.shape()
            )));
        }
        let (klen, d_in, d_out) = (k.shape()[0], k.shape()[1], k.shape()[2]);
        if klen % 2 == 0 {
            return Err(TensorError::EvenKernel(klen));
        }
        if i.rank() != 2 || i.cols() != d_in {
            return Err(TensorError::ShapeMismatch(format!(
                "conv input {:?} does not match kernel d_in {d_in}",
                i.shape()
            )));
        }
        if b.shape() != [1, d_out] {
            return Err(TensorError::ShapeMismatch(format!(
                "conv bias {:?}, expected [1, {d_out}]",
                b.shape()
            )));
        }
        let n = i.rows();
        let half = klen / 2;
        let mut out = vec![0.0; n * d_out];
        let (idata, kdata, bdata) = (i.data(), k.data(), b.data());
        for j in 0..n {
            for t in 0..klen {
                let src = j as isize + t as isize - half as isize;
                if src < 0 || src >= n as isize {
                    continue;
                }
                let src = src as usize;
                for c in 0..d_in {
                    let x = idata[src * d_in + c];
                    let krow = (t * d_in + c) * d_out;
                    for o in 0..d_out {
                        out[j * d_out + o] += x * kdata[krow + o];
                    }
                }
            }
            for o in 0..d_out {
                out[j * d_out + o] += bdata[o];
            }
        }
        let requires = self.needs(&[input, kernel, bias]);
        Ok(self.push(
            Tensor::new(vec![n, d_out], out)?,
            requires,
            Op::Conv1dSame {
                input,
                kernel,
                bias,
            },
        ))
    }

    pub fn tanh(&mut self, x: NodeId) -> NodeId {
        let out = self.val(x).data().iter().map(|v| v.tanh()).collect();
        let value = Tensor {
            shape: self.val(x).shape().to_vec(),
            data: out,
        };
        let requires = self.needs(&[x]);
        self.push(value, requires, Op::Tanh { x })
    }

    pub fn relu(&mut self, x: NodeId) -> NodeId {
        let out = self.val(x).data().iter().map(|v| v.max(0.0)).collect();
        let value = Tensor {
            shape: self.val(x).shape().to_vec(),
            data: out,
        };
        let requires = self.needs(&[x]);
        self.push(value, requires, Op::Relu { x })
    }

    pub fn sigmoid(&mut self, x: NodeId) -> NodeId {
        let out = self.val(x).data().iter().map(|&v| stable_sigmoid(v)).collect();
        let value = Tensor {
            shape: self.val(x).shape().to_vec(),
            data: out,
        };
        let requires = self.needs(&[x]);
        self.push(value, requires, Op::Sigmoid { x })
    }

    /// Max-subtracted softmax along the last axis. Rows of a rank-2 tensor
    /// are normalized independently.
    pub fn softmax(&mut self, x: NodeId) -> Result<NodeId, TensorError> {
        let v = self.val(x);
        if v.rank() > 2 {
            return Err(TensorError::ShapeMismatch(format!(
                "softmax expects rank 1 or 2, got {:?}",
                v.shape()
            )));
        }
        let cols = v.cols();
        let mut out = v.data().to_vec();
        for row in out.chunks_mut(cols) {
            let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let mut sum = 0.0;
            for e in row.iter_mut() {
                *e = (*e - max).exp();
                sum += *e;
            }
            for e in row.iter_mut() {
                *e /= sum;
            }
        }
        let value = Tensor {
            shape: v.shape().to_vec(),
            data: out,
        };
        let requires = self.needs(&[x]);
        Ok(self.push(value, requires, Op::Softmax { x }))
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, TensorError> {
        let (ta, tb) = (self.val(a), self.val(b));
        if ta.rank() != 2 || tb.rank() != 2 || ta.cols() != tb.rows() {
            return Err(TensorError::ShapeMismatch(format!(
                "matmul {:?} x {:?}",
                ta.shape(),
                tb.shape()
            )));
        }
        let (p, q, r) = (ta.rows(), ta.cols(), tb.cols());
        let mut out = vec![0.0; p * r];
        let (da, db) = (ta.data(), tb.data());
        for i in 0..p {
            for j in 0..q {
                let aij = da[i * q + j];
                if aij == 0.0 {
                    continue;
                }
                let brow = j * r;
                for k in 0..r {
                    out[i * r + k] += aij * db[brow + k];
                }
            }
        }
        let requires = self.needs(&[a, b]);
        Ok(self.push(Tensor::new(vec![p, r], out)?, requires, Op::Matmul { a, b }))
    }

    pub fn transpose(&mut self, x: NodeId) -> Result<NodeId, TensorError> {
        let v = self.val(x);
        if v.rank() != 2 {
            return Err(TensorError::ShapeMismatch(format!(
                "transpose expects rank 2, got {:?}",
                v.shape()
            )));
        }
        let (r, c) = (v.rows(), v.cols());
        let mut out = vec![0.0; r * c];
        for i in 0..r {
            for j in 0..c {
                out[j * r + i] = v.data()[i * c + j];
            }
        }
        let requires = self.needs(&[x]);
        Ok(self.push(Tensor::new(vec![c, r], out)?, requires, Op::Transpose { x }))
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, TensorError> {
        let (ta, tb) = (self.val(a), self.val(b));
        if ta.shape() != tb.shape() {
            return Err(TensorError::ShapeMismatch(format!(
                "add {:?} vs {:?}",
                ta.shape(),
                tb.shape()
            )));
        }
        let out = ta
            .data()
            .iter()
            .zip(tb.data())
            .map(|(x, y)| x + y)
            .collect();
        let value = Tensor {
            shape: ta.shape().to_vec(),
            data: out,
        };
        let requires = self.needs(&[a, b]);
        Ok(self.push(value, requires, Op::Add { a, b }))
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, TensorError> {
        let (ta, tb) = (self.val(a), self.val(b));
        if ta.shape() != tb.shape() {
            return Err(TensorError::ShapeMismatch(format!(
                "mul {:?} vs {:?}",
                ta.shape(),
                tb.shape()
            )));
        }
        let out = ta
            .data()
            .iter()
            .zip(tb.data())
            .map(|(x, y)| x * y)
            .collect();
        let value = Tensor {
            shape: ta.shape().to_vec(),
            data: out,
        };
        let requires = self.needs(&[a, b]);
        Ok(self.push(value, requires, Op::Mul { a, b }))
    }

    pub fn add_bias(&mut self, x: NodeId, bias: NodeId) -> Result<NodeId, TensorError> {
        let (tx, tb) = (self.val(x), self.val(bias));
        if tx.rank() != 2 || tb.shape() != [1, tx.cols()] {
            return Err(TensorError::ShapeMismatch(format!(
                "add_bias {:?} + {:?}",
                tx.shape(),
                tb.shape()
            )));
        }
        let cols = tx.cols();
        let mut out = tx.data().to_vec();
        for row in out.chunks_mut(cols) {
            for (e, b) in row.iter_mut().zip(tb.data()) {
                *e += b;
            }
        }
        let value = Tensor {
            shape: tx.shape().to_vec(),
            data: out,
        };
        let requires = self.needs(&[x, bias]);
        Ok(self.push(value, requires, Op::AddBias { x, bias }))
    }

    pub fn scale(&mut self, x: NodeId, factor: f64) -> NodeId {
        let out = self.val(x).data().iter().map(|v| v * factor).collect();
        let value = Tensor {
            shape: self.val(x).shape().to_vec(),
            data: out,
        };
        let requires = self.needs(&[x]);
        self.push(value, requires, Op::Scale { x, factor })
    }

    /// Concatenate rank-2 tensors along `axis` (0 = rows, 1 = columns),
    /// preserving operand order. A single part is returned unchanged.
    pub fn concat(&mut self, axis: usize, parts: &[NodeId]) -> Result<NodeId, TensorError> {
        if parts.is_empty() {
            return Err(TensorError::ShapeMismatch("concat of zero tensors".into()));
        }
        if parts.len() == 1 {
            return Ok(parts[0]);
        }
        let value = match axis {
            0 => {
                let cols = self.val(parts[0]).cols();
                let mut rows = 0;
                let mut data = Vec::new();
                for &p in parts {
                    let t = self.val(p);
                    if t.rank() != 2 || t.cols() != cols {
                        return Err(TensorError::ShapeMismatch(format!(
                            "concat axis 0: {:?} vs {cols} columns",
                            t.shape()
                        )));
                    }
                    rows += t.rows();
                    data.extend_from_slice(t.data());
                }
                Tensor::new(vec![rows, cols], data)?
            }
            1 => {
                let rows = self.val(parts[0]).rows();
                let mut cols = 0;
                for &p in parts {
                    let t = self.val(p);
                    if t.rank() != 2 || t.rows() != rows {
                        return Err(TensorError::ShapeMismatch(format!(
                            "concat axis 1: {:?} vs {rows} rows",
                            t.shape()
                        )));
                    }
                    cols += t.cols();
                }
                let mut data = vec![0.0; rows * cols];
                let mut offset = 0;
                for &p in parts {
                    let t = self.val(p);
                    let c = t.cols();
                    for r in 0..rows {
                        data[r * cols + offset..r * cols + offset + c]
                            .copy_from_slice(&t.data()[r * c..(r + 1) * c]);
                    }
                    offset += c;
                }
                Tensor::new(vec![rows, cols], data)?
            }
            _ => {
                return Err(TensorError::ShapeMismatch(format!(
                    "concat axis must be 0 or 1, got {axis}"
                )))
            }
        };
        let requires = self.needs(parts);
        Ok(self.push(
            value,
            requires,
            Op::Concat {
                axis,
                parts: parts.to_vec(),
            },
        ))
    }

    pub fn slice_rows(
        &mut self,
        x: NodeId,
        start: usize,
        len: usize,
    ) -> Result<NodeId, TensorError> {
        let t = self.val(x);
        if t.rank() != 2 || start + len > t.rows() || len == 0 {
            return Err(TensorError::ShapeMismatch(format!(
                "slice_rows [{start}, {start}+{len}) of {:?}",
                t.shape()
            )));
        }
        let cols = t.cols();
        let data = t.data()[start * cols..(start + len) * cols].to_vec();
        let requires = self.needs(&[x]);
        Ok(self.push(
            Tensor::new(vec![len, cols], data)?,
            requires,
            Op::SliceRows { x, start },
        ))
    }

    /// Mean over axis 0: `[n x f]` -> `[1 x f]`.
    pub fn mean_rows(&mut self, x: NodeId) -> Result<NodeId, TensorError> {
        let t = self.val(x);
        if t.rank() != 2 || t.rows() == 0 {
            return Err(TensorError::ShapeMismatch(format!(
                "mean_rows of {:?}",
                t.shape()
            )));
        }
        let (n, cols) = (t.rows(), t.cols());
        let mut out = vec![0.0; cols];
        for r in 0..n {
            for c in 0..cols {
                out[c] += t.data()[r * cols + c];
            }
        }
        for e in &mut out {
            *e /= n as f64;
        }
        let requires = self.needs(&[x]);
        Ok(self.push(Tensor::row(out), requires, Op::MeanRows { x }))
    }

    /// Sum of every element, as a `[1 x 1]` scalar.
    pub fn sum_all(&mut self, x: NodeId) -> NodeId {
        let s: f64 = self.val(x).data().iter().sum();
        let requires = self.needs(&[x]);
        self.push(Tensor::scalar(s), requires, Op::SumAll { x })
    }

    /// Look rows up in an embedding table `[v x d]`, producing
    /// `[ids.len() x d]`. Id 0 (padding) produces a zero row.
    pub fn gather(&mut self, table: NodeId, ids: &[usize]) -> Result<NodeId, TensorError> {
        let t = self.val(table);
        if t.rank() != 2 {
            return Err(TensorError::ShapeMismatch(format!(
                "gather table must be rank 2, got {:?}",
                t.shape()
            )));
        }
        let (v, d) = (t.rows(), t.cols());
        if ids.is_empty() {
            return Err(TensorError::ShapeMismatch("gather of zero ids".into()));
        }
        let mut data = vec![0.0; ids.len() * d];
        for (pos, &id) in ids.iter().enumerate() {
            if id >= v {
                return Err(TensorError::ShapeMismatch(format!(
                    "gather id {id} out of range for table with {v} rows"
                )));
            }
            if id != PAD_ID {
                data[pos * d..(pos + 1) * d].copy_from_slice(&t.data()[id * d..(id + 1) * d]);
            }
        }
        let requires = self.needs(&[table]);
        Ok(self.push(
            Tensor::new(vec![ids.len(), d], data)?,
            requires,
            Op::Gather {
                table,
                ids: ids.to_vec(),
            },
        ))
    }

    /// `-y log p - (1-y) log(1-p)` with `p` clamped to `[1e-12, 1 - 1e-12]`.
    pub fn binary_cross_entropy(
        &mut self,
        pred: NodeId,
        target: f64,
    ) -> Result<NodeId, TensorError> {
        let p = self.val(pred);
        if p.len() != 1 {
            return Err(TensorError::ShapeMismatch(format!(
                "binary_cross_entropy expects a scalar prediction, got {:?}",
                p.shape()
            )));
        }
        let y = p.data()[0].clamp(BCE_EPS, 1.0 - BCE_EPS);
        let loss = -target * y.ln() - (1.0 - target) * (1.0 - y).ln();
        let requires = self.needs(&[pred]);
        Ok(self.push(
            Tensor::scalar(loss),
            requires,
            Op::BinaryCrossEntropy { pred, target },
        ))
    }

    // ---- backward --------------------------------------------------------

    /// Populate gradients of `loss` with respect to every `requires_grad`
    /// node, visiting recorded ops in exact reverse order.
    pub fn backward(&mut self, loss: NodeId) -> Result<(), TensorError> {
        if loss.0 >= self.nodes.len() {
            return Err(TensorError::DetachedTensor);
        }
        if self.nodes[loss.0].value.len() != 1 {
            return Err(TensorError::NotScalar(
                self.nodes[loss.0].value.shape().to_vec(),
            ));
        }
        for node in &mut self.nodes {
            if node.requires_grad {
                node.grad = Some(vec![0.0; node.value.len()]);
            } else {
                node.grad = None;
            }
        }
        if !self.nodes[loss.0].requires_grad {
            // Constant loss: every gradient is zero.
            return Ok(());
        }
        self.nodes[loss.0].grad.as_mut().unwrap()[0] = 1.0;
        for i in (0..=loss.0).rev() {
            if !self.nodes[i].requires_grad {
                continue;
            }
            let g = match &self.nodes[i].grad {
                Some(g) => g.clone(),
                None => continue,
            };
            let op = self.nodes[i].op.clone();
            self.propagate(i, &g, &op);
        }
        Ok(())
    }

    fn accumulate(&mut self, id: NodeId, delta: &[f64]) {
        if let Some(grad) = &mut self.nodes[id.0].grad {
            debug_assert_eq!(grad.len(), delta.len());
            for (a, d) in grad.iter_mut().zip(delta) {
                *a += d;
            }
        }
    }

    fn wants_grad(&self, id: NodeId) -> bool {
        self.nodes[id.0].requires_grad
    }

    fn propagate(&mut self, out_idx: usize, g: &[f64], op: &Op) {
        match op {
            Op::Leaf => {}
            Op::Conv1dSame {
                input,
                kernel,
                bias,
            } => {
                let (i, k) = (self.val(*input), self.val(*kernel));
                let (n, d_in) = (i.rows(), i.cols());
                let (klen, d_out) = (k.shape()[0], k.shape()[2]);
                let half = klen / 2;
                if self.wants_grad(*bias) {
                    let mut db = vec![0.0; d_out];
                    for j in 0..n {
                        for o in 0..d_out {
                            db[o] += g[j * d_out + o];
                        }
                    }
                    self.accumulate(*bias, &db);
                }
                if self.wants_grad(*kernel) {
                    let idata = self.val(*input).data();
                    let mut dk = vec![0.0; klen * d_in * d_out];
                    for j in 0..n {
                        for t in 0..klen {
                            let src = j as isize + t as isize - half as isize;
                            if src < 0 || src >= n as isize {
                                continue;
                            }
                            let src = src as usize;
                            for c in 0..d_in {
                                let x = idata[src * d_in + c];
                                let krow = (t * d_in + c) * d_out;
                                for o in 0..d_out {
                                    dk[krow + o] += x * g[j * d_out + o];
                                }
                            }
                        }
                    }
                    self.accumulate(*kernel, &dk);
                }
                if self.wants_grad(*input) {
                    let kdata = self.val(*kernel).data();
                    let mut di = vec![0.0; n * d_in];
                    for j in 0..n {
                        for t in 0..klen {
                            let src = j as isize + t as isize - half as isize;
                            if src < 0 || src >= n as isize {
                                continue;
                            }
                            let src = src as usize;
                            for c in 0..d_in {
                                let krow = (t * d_in + c) * d_out;
                                let mut acc = 0.0;
                                for o in 0..d_out {
                                    acc += kdata[krow + o] * g[j * d_out + o];
                                }
                                di[src * d_in + c] += acc;
                            }
                        }
                    }
                    self.accumulate(*input, &di);
                }
            }
            Op::Tanh { x } => {
                let y = &self.nodes[out_idx].value;
                let delta: Vec<f64> = y
                    .data()
                    .iter()
                    .zip(g)
                    .map(|(y, g)| g * (1.0 - y * y))
                    .collect();
                self.accumulate(*x, &delta);
            }
            Op::Relu { x } => {
                let input = self.val(*x);
                let delta: Vec<f64> = input
                    .data()
                    .iter()
                    .zip(g)
                    .map(|(x, g)| if *x > 0.0 { *g } else { 0.0 })
                    .collect();
                self.accumulate(*x, &delta);
            }
            Op::Sigmoid { x } => {
                let y = &self.nodes[out_idx].value;
                let delta: Vec<f64> = y
                    .data()
                    .iter()
                    .zip(g)
                    .map(|(y, g)| g * y * (1.0 - y))
                    .collect();
                self.accumulate(*x, &delta);
            }
            Op::Softmax { x } => {
                let y = &self.nodes[out_idx].value;
                let cols = y.cols();
                let mut delta = vec![0.0; y.len()];
                for (row, (yrow, grow)) in y.data().chunks(cols).zip(g.chunks(cols)).enumerate() {
                    let dot: f64 = yrow.iter().zip(grow).map(|(y, g)| y * g).sum();
                    for c in 0..cols {
                        delta[row * cols + c] = yrow[c] * (grow[c] - dot);
                    }
                }
                self.accumulate(*x, &delta);
            }
            Op::Matmul { a, b } => {
                let (ta, tb) = (self.val(*a), self.val(*b));
                let (p, q, r) = (ta.rows(), ta.cols(), tb.cols());
                if self.wants_grad(*a) {
                    let db = self.val(*b).data();
                    let mut da = vec![0.0; p * q];
                    for i in 0..p {
                        for j in 0..q {
                            let mut acc = 0.0;
                            for k in 0..r {
                                acc += g[i * r + k] * db[j * r + k];
                            }
                            da[i * q + j] = acc;
                        }
                    }
                    self.accumulate(*a, &da);
                }
                if self.wants_grad(*b) {
                    let da = self.val(*a).data();
                    let mut dbm = vec![0.0; q * r];
                    for i in 0..p {
                        for j in 0..q {
                            let aij = da[i * q + j];
                            if aij == 0.0 {
                                continue;
                            }
                            for k in 0..r {
                                dbm[j * r + k] += aij * g[i * r + k];
                            }
                        }
                    }
                    self.accumulate(*b, &dbm);
                }
            }
            Op::Transpose { x } => {
                let t = &self.nodes[out_idx].value;
                let (r, c) = (t.rows(), t.cols());
                let mut delta = vec![0.0; r * c];
                for i in 0..r {
                    for j in 0..c {
                        delta[j * r + i] = g[i * c + j];
                    }
                }
                self.accumulate(*x, &delta);
            }
            Op::Add { a, b } => {
                self.accumulate(*a, g);
                self.accumulate(*b, g);
            }
            Op::Mul { a, b } => {
                if self.wants_grad(*a) {
                    let delta: Vec<f64> =
                        self.val(*b).data().iter().zip(g).map(|(b, g)| b * g).collect();
                    self.accumulate(*a, &delta);
                }
                if self.wants_grad(*b) {
                    let delta: Vec<f64> =
                        self.val(*a).data().iter().zip(g).map(|(a, g)| a * g).collect();
                    self.accumulate(*b, &delta);
                }
            }
            Op::AddBias { x, bias } => {
                self.accumulate(*x, g);
                if self.wants_grad(*bias) {
                    let cols = self.val(*bias).cols();
                    let mut db = vec![0.0; cols];
                    for row in g.chunks(cols) {
                        for (d, v) in db.iter_mut().zip(row) {
                            *d += v;
                        }
                    }
                    self.accumulate(*bias, &db);
                }
            }
            Op::Scale { x, factor } => {
                let delta: Vec<f64> = g.iter().map(|v| v * factor).collect();
                self.accumulate(*x, &delta);
            }
            Op::Concat { axis, parts } => match axis {
                0 => {
                    let mut offset = 0;
                    for &p in parts {
                        let len = self.val(p).len();
                        let delta = g[offset..offset + len].to_vec();
                        self.accumulate(p, &delta);
                        offset += len;
                    }
                }
                _ => {
                    let rows = self.val(parts[0]).rows();
                    let total_cols: usize = parts.iter().map(|&p| self.val(p).cols()).sum();
                    let mut offset = 0;
                    for &p in parts {
                        let c = self.val(p).cols();
                        let mut delta = vec![0.0; rows * c];
                        for r in 0..rows {
                            delta[r * c..(r + 1) * c]
                                .copy_from_slice(&g[r * total_cols + offset..r * total_cols + offset + c]);
                        }
                        self.accumulate(p, &delta);
                        offset += c;
                    }
                }
            },
            Op::SliceRows { x, start } => {
                let src = self.val(*x);
                let cols = src.cols();
                let mut delta = vec![0.0; src.len()];
                delta[start * cols..start * cols + g.len()].copy_from_slice(g);
                self.accumulate(*x, &delta);
            }
            Op::MeanRows { x } => {
                let src = self.val(*x);
                let (n, cols) = (src.rows(), src.cols());
                let mut delta = vec![0.0; n * cols];
                for r in 0..n {
                    for c in 0..cols {
                        delta[r * cols + c] = g[c] / n as f64;
                    }
                }
                self.accumulate(*x, &delta);
            }
            Op::SumAll { x } => {
                let delta = vec![g[0]; self.val(*x).len()];
                self.accumulate(*x, &delta);
            }
            Op::Gather { table, ids } => {
                if self.wants_grad(*table) {
                    let t = self.val(*table);
                    let d = t.cols();
                    let mut delta = vec![0.0; t.len()];
                    for (pos, &id) in ids.iter().enumerate() {
                        if id == PAD_ID {
                            continue;
                        }
                        for c in 0..d {
                            delta[id * d + c] += g[pos * d + c];
                        }
                    }
                    self.accumulate(*table, &delta);
                }
            }
            Op::BinaryCrossEntropy { pred, target } => {
                let p = self.val(*pred).data()[0];
                // The clamp makes the loss flat outside [eps, 1-eps].
                let d = if p <= BCE_EPS || p >= 1.0 - BCE_EPS {
                    0.0
                } else {
                    (-target / p + (1.0 - target) / (1.0 - p)) * g[0]
                };
                self.accumulate(*pred, &[d]);
            }
        }
    }
}

fn stable_sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}
