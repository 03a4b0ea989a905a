//! Tape-based reverse-mode automatic differentiation.
//!
//! Every forward operation appends a node (output values + enough metadata to
//! differentiate) to a [`Tape`] and returns a [`Var`] handle. Calling
//! [`Tape::backward`] on a scalar loss walks the nodes in reverse creation
//! order — which is a topological order, since operands always precede their
//! consumers — accumulating gradients additively, so a value used by several
//! downstream ops receives the sum of all path contributions.
//!
//! The op set is deliberately small: matrix product, transpose, elementwise
//! add / scale / relu / sigmoid / log, bias broadcast, row-masked softmax,
//! mean reductions, stack / concat / slice plumbing, and two fused losses
//! (mean cross-entropy over logits, concordance-correlation loss). Each op
//! validates shapes up front and returns a [`TensorError`] instead of
//! panicking.

use crate::tensor::{Tensor, TensorError};

/// Handle to a node on a [`Tape`]. Only meaningful for the tape that issued it.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul {
        a: usize,
        b: usize,
        m: usize,
        k: usize,
        n: usize,
    },
    Transpose {
        x: usize,
        rows: usize,
        cols: usize,
    },
    Add {
        a: usize,
        b: usize,
    },
    AddBias {
        x: usize,
        bias: usize,
        rows: usize,
        cols: usize,
    },
    MulScalar {
        x: usize,
        c: f64,
    },
    Relu {
        x: usize,
    },
    Sigmoid {
        x: usize,
    },
    Log {
        x: usize,
    },
    /// Row-wise softmax over a 2-D input; `mask[j] == false` forces column `j`
    /// to exactly zero weight in every row. Backward needs no mask: masked
    /// outputs are identically zero, so their gradient contribution vanishes.
    SoftmaxRows {
        x: usize,
        rows: usize,
        cols: usize,
    },
    MeanAxis {
        x: usize,
        outer: usize,
        axis_len: usize,
        inner: usize,
    },
    /// Mean over a subset of rows of a 2-D input, producing a 1-D vector.
    MeanRowsMasked {
        x: usize,
        cols: usize,
        kept: Vec<usize>,
    },
    StackRows {
        xs: Vec<usize>,
        cols: usize,
    },
    ConcatRows {
        xs: Vec<usize>,
        rows: Vec<usize>,
    },
    ConcatCols {
        xs: Vec<usize>,
        rows: usize,
        cols: Vec<usize>,
    },
    SliceCols {
        x: usize,
        rows: usize,
        cols: usize,
        start: usize,
        len: usize,
    },
    Reshape {
        x: usize,
    },
    SumAll {
        x: usize,
    },
    /// Mean over the batch of `logsumexp(logits_b) - logits_b[target_b]`.
    CrossEntropyMean {
        logits: usize,
        targets: Vec<usize>,
        rows: usize,
        cols: usize,
    },
    /// `1 - CCC(pred, truth)` with the truth side constant.
    CccLoss {
        pred: usize,
        truth: Vec<f64>,
    },
}

struct Node {
    data: Vec<f64>,
    shape: Vec<usize>,
    op: Op,
}

/// Records a computation graph and differentiates it.
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
    grads: Option<Vec<Vec<f64>>>,
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    /// Number of recorded nodes.
    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, data: Vec<f64>, shape: Vec<usize>, op: Op) -> Var {
        debug_assert_eq!(data.len(), shape.iter().product::<usize>());
        self.grads = None; // new nodes invalidate a previous backward pass
        self.nodes.push(Node { data, shape, op });
        Var(self.nodes.len() - 1)
    }

    /// Registers a tensor's values as a leaf node.
    pub fn input(&mut self, t: &Tensor) -> Var {
        self.push(t.data().to_vec(), t.shape().to_vec(), Op::Leaf)
    }

    /// Registers raw values as a leaf node.
    pub fn constant(&mut self, data: Vec<f64>, shape: Vec<usize>) -> Result<Var, TensorError> {
        let expected: usize = shape.iter().product();
        if data.len() != expected {
            return Err(TensorError::DataLength {
                op: "constant",
                len: data.len(),
                shape,
            });
        }
        Ok(self.push(data, shape, Op::Leaf))
    }

    pub fn data(&self, v: Var) -> &[f64] {
        &self.nodes[v.0].data
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        &self.nodes[v.0].shape
    }

    /// Snapshot of a node as a standalone [`Tensor`].
    pub fn value(&self, v: Var) -> Tensor {
        Tensor::new(self.nodes[v.0].shape.clone(), self.nodes[v.0].data.clone())
            .expect("node shape/data always consistent")
    }

    /// Gradient of the last [`Tape::backward`] loss w.r.t. `v`, if backward ran.
    pub fn grad(&self, v: Var) -> Option<&[f64]> {
        self.grads.as_ref().map(|g| g[v.0].as_slice())
    }

    fn dims2(&self, op: &'static str, v: Var) -> Result<(usize, usize), TensorError> {
        let s = &self.nodes[v.0].shape;
        if s.len() != 2 {
            return Err(TensorError::RankMismatch {
                op,
                expected: 2,
                shape: s.clone(),
            });
        }
        Ok((s[0], s[1]))
    }

    // ---- forward ops -----------------------------------------------------

    /// Matrix product of 2-D operands: `[m,k] x [k,n] -> [m,n]`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        let (m, k) = self.dims2("matmul", a)?;
        let (k2, n) = self.dims2("matmul", b)?;
        if k != k2 {
            return Err(TensorError::ShapeMismatch {
                op: "matmul",
                lhs: vec![m, k],
                rhs: vec![k2, n],
            });
        }
        let mut out = vec![0.0; m * n];
        {
            let lhs = &self.nodes[a.0].data;
            let rhs = &self.nodes[b.0].data;
            for i in 0..m {
                for p in 0..k {
                    let aip = lhs[i * k + p];
                    if aip == 0.0 {
                        continue;
                    }
                    let row = &rhs[p * n..(p + 1) * n];
                    let dst = &mut out[i * n..(i + 1) * n];
                    for j in 0..n {
                        dst[j] += aip * row[j];
                    }
                }
            }
        }
        Ok(self.push(out, vec![m, n], Op::MatMul { a: a.0, b: b.0, m, k, n }))
    }

    pub fn transpose(&mut self, x: Var) -> Result<Var, TensorError> {
        let (rows, cols) = self.dims2("transpose", x)?;
        let src = &self.nodes[x.0].data;
        let mut out = vec![0.0; rows * cols];
        for i in 0..rows {
            for j in 0..cols {
                out[j * rows + i] = src[i * cols + j];
            }
        }
        Ok(self.push(out, vec![cols, rows], Op::Transpose { x: x.0, rows, cols }))
    }

    /// Elementwise sum of two identically shaped nodes.
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        if self.nodes[a.0].shape != self.nodes[b.0].shape {
            return Err(TensorError::ShapeMismatch {
                op: "add",
                lhs: self.nodes[a.0].shape.clone(),
                rhs: self.nodes[b.0].shape.clone(),
            });
        }
        let out: Vec<f64> = self.nodes[a.0]
            .data
            .iter()
            .zip(&self.nodes[b.0].data)
            .map(|(x, y)| x + y)
            .collect();
        let shape = self.nodes[a.0].shape.clone();
        Ok(self.push(out, shape, Op::Add { a: a.0, b: b.0 }))
    }

    /// Adds a 1-D bias of length `cols` to every row of a 2-D input.
    pub fn add_bias(&mut self, x: Var, bias: Var) -> Result<Var, TensorError> {
        let (rows, cols) = self.dims2("add_bias", x)?;
        let bshape = &self.nodes[bias.0].shape;
        if bshape.len() != 1 || bshape[0] != cols {
            return Err(TensorError::ShapeMismatch {
                op: "add_bias",
                lhs: vec![rows, cols],
                rhs: bshape.clone(),
            });
        }
        let b = &self.nodes[bias.0].data;
        let mut out = self.nodes[x.0].data.clone();
        for i in 0..rows {
            for j in 0..cols {
                out[i * cols + j] += b[j];
            }
        }
        Ok(self.push(
            out,
            vec![rows, cols],
            Op::AddBias { x: x.0, bias: bias.0, rows, cols },
        ))
    }

    pub fn mul_scalar(&mut self, x: Var, c: f64) -> Var {
        let out: Vec<f64> = self.nodes[x.0].data.iter().map(|v| v * c).collect();
        let shape = self.nodes[x.0].shape.clone();
        self.push(out, shape, Op::MulScalar { x: x.0, c })
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let out: Vec<f64> = self.nodes[x.0].data.iter().map(|v| v.max(0.0)).collect();
        let shape = self.nodes[x.0].shape.clone();
        self.push(out, shape, Op::Relu { x: x.0 })
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        let out: Vec<f64> = self.nodes[x.0]
            .data
            .iter()
            .map(|v| 1.0 / (1.0 + (-v).exp()))
            .collect();
        let shape = self.nodes[x.0].shape.clone();
        self.push(out, shape, Op::Sigmoid { x: x.0 })
    }

    /// Natural log; rejects non-positive inputs rather than emitting NaN/-inf.
    pub fn log(&mut self, x: Var) -> Result<Var, TensorError> {
        if let Some(v) = self.nodes[x.0].data.iter().find(|v| **v <= 0.0) {
            return Err(TensorError::LogDomain { value: *v });
        }
        let out: Vec<f64> = self.nodes[x.0].data.iter().map(|v| v.ln()).collect();
        let shape = self.nodes[x.0].shape.clone();
        Ok(self.push(out, shape, Op::Log { x: x.0 }))
    }

    /// Row-wise softmax with an optional key mask over columns.
    ///
    /// Masked columns get *exactly* zero weight: they are excluded from the
    /// max-shift and the normalizing sum, not merely pushed towards zero with
    /// a large negative offset. Errors if the mask excludes every column.
    pub fn softmax_rows(&mut self, x: Var, mask: Option<&[bool]>) -> Result<Var, TensorError> {
        let (rows, cols) = self.dims2("softmax_rows", x)?;
        if let Some(m) = mask {
            if m.len() != cols {
                return Err(TensorError::MaskLength {
                    op: "softmax_rows",
                    mask_len: m.len(),
                    expected: cols,
                });
            }
            if !m.iter().any(|&keep| keep) {
                return Err(TensorError::AllMasked { op: "softmax_rows" });
            }
        }
        let src = &self.nodes[x.0].data;
        let mut out = vec![0.0; rows * cols];
        for i in 0..rows {
            let row = &src[i * cols..(i + 1) * cols];
            let mut max = f64::NEG_INFINITY;
            for j in 0..cols {
                if mask.map_or(true, |m| m[j]) && row[j] > max {
                    max = row[j];
                }
            }
            let mut sum = 0.0;
            let dst = &mut out[i * cols..(i + 1) * cols];
            for j in 0..cols {
                if mask.map_or(true, |m| m[j]) {
                    dst[j] = (row[j] - max).exp();
                    sum += dst[j];
                }
            }
            for v in dst.iter_mut() {
                *v /= sum;
            }
        }
        Ok(self.push(out, vec![rows, cols], Op::SoftmaxRows { x: x.0, rows, cols }))
    }

    /// Mean along one axis; the output drops that axis.
    pub fn mean_axis(&mut self, x: Var, axis: usize) -> Result<Var, TensorError> {
        let shape = self.nodes[x.0].shape.clone();
        if axis >= shape.len() {
            return Err(TensorError::AxisOutOfRange {
                op: "mean_axis",
                axis,
                shape,
            });
        }
        let outer: usize = shape[..axis].iter().product();
        let axis_len = shape[axis];
        let inner: usize = shape[axis + 1..].iter().product();
        let src = &self.nodes[x.0].data;
        let mut out = vec![0.0; outer * inner];
        for o in 0..outer {
            for a in 0..axis_len {
                let base = (o * axis_len + a) * inner;
                for i in 0..inner {
                    out[o * inner + i] += src[base + i];
                }
            }
        }
        for v in out.iter_mut() {
            *v /= axis_len as f64;
        }
        let mut out_shape: Vec<usize> = shape[..axis].to_vec();
        out_shape.extend_from_slice(&shape[axis + 1..]);
        Ok(self.push(
            out,
            out_shape,
            Op::MeanAxis { x: x.0, outer, axis_len, inner },
        ))
    }

    /// Mean over the rows of a 2-D input where `keep[row]` is true, yielding a
    /// 1-D vector of length `cols`. Errors if no row is kept.
    pub fn mean_rows_masked(&mut self, x: Var, keep: &[bool]) -> Result<Var, TensorError> {
        let (rows, cols) = self.dims2("mean_rows_masked", x)?;
        if keep.len() != rows {
            return Err(TensorError::MaskLength {
                op: "mean_rows_masked",
                mask_len: keep.len(),
                expected: rows,
            });
        }
        let kept: Vec<usize> = (0..rows).filter(|&r| keep[r]).collect();
        if kept.is_empty() {
            return Err(TensorError::AllMasked {
                op: "mean_rows_masked",
            });
        }
        let src = &self.nodes[x.0].data;
        let mut out = vec![0.0; cols];
        for &r in &kept {
            for j in 0..cols {
                out[j] += src[r * cols + j];
            }
        }
        for v in out.iter_mut() {
            *v /= kept.len() as f64;
        }
        Ok(self.push(out, vec![cols], Op::MeanRowsMasked { x: x.0, cols, kept }))
    }

    /// Stacks equal-length 1-D nodes into a 2-D `[len(xs), cols]` node.
    pub fn stack_rows(&mut self, xs: &[Var]) -> Result<Var, TensorError> {
        if xs.is_empty() {
            return Err(TensorError::EmptyInputs { op: "stack_rows" });
        }
        let cols = {
            let s = &self.nodes[xs[0].0].shape;
            if s.len() != 1 {
                return Err(TensorError::RankMismatch {
                    op: "stack_rows",
                    expected: 1,
                    shape: s.clone(),
                });
            }
            s[0]
        };
        let mut out = Vec::with_capacity(xs.len() * cols);
        for v in xs {
            let s = &self.nodes[v.0].shape;
            if s.len() != 1 || s[0] != cols {
                return Err(TensorError::ShapeMismatch {
                    op: "stack_rows",
                    lhs: vec![cols],
                    rhs: s.clone(),
                });
            }
            out.extend_from_slice(&self.nodes[v.0].data);
        }
        let ids: Vec<usize> = xs.iter().map(|v| v.0).collect();
        Ok(self.push(
            out,
            vec![xs.len(), cols],
            Op::StackRows { xs: ids, cols },
        ))
    }

    /// Concatenates 2-D nodes with equal column counts along the row axis.
    pub fn concat_rows(&mut self, xs: &[Var]) -> Result<Var, TensorError> {
        if xs.is_empty() {
            return Err(TensorError::EmptyInputs { op: "concat_rows" });
        }
        let (_, cols) = self.dims2("concat_rows", xs[0])?;
        let mut rows_each = Vec::with_capacity(xs.len());
        let mut out = Vec::new();
        for v in xs {
            let (r, c) = self.dims2("concat_rows", *v)?;
            if c != cols {
                return Err(TensorError::ShapeMismatch {
                    op: "concat_rows",
                    lhs: vec![rows_each.iter().sum(), cols],
                    rhs: vec![r, c],
                });
            }
            rows_each.push(r);
            out.extend_from_slice(&self.nodes[v.0].data);
        }
        let total: usize = rows_each.iter().sum();
        let ids: Vec<usize> = xs.iter().map(|v| v.0).collect();
        Ok(self.push(
            out,
            vec![total, cols],
            Op::ConcatRows { xs: ids, rows: rows_each },
        ))
    }

    /// Concatenates 2-D nodes with equal row counts along the column axis.
    pub fn concat_cols(&mut self, xs: &[Var]) -> Result<Var, TensorError> {
        if xs.is_empty() {
            return Err(TensorError::EmptyInputs { op: "concat_cols" });
        }
        let (rows, _) = self.dims2("concat_cols", xs[0])?;
        let mut cols_each = Vec::with_capacity(xs.len());
        for v in xs {
            let (r, c) = self.dims2("concat_cols", *v)?;
            if r != rows {
                return Err(TensorError::ShapeMismatch {
                    op: "concat_cols",
                    lhs: vec![rows, cols_each.iter().sum()],
                    rhs: vec![r, c],
                });
            }
            cols_each.push(c);
        }
        let total: usize = cols_each.iter().sum();
        let mut out = vec![0.0; rows * total];
        let mut offset = 0;
        for (v, &c) in xs.iter().zip(&cols_each) {
            let src = &self.nodes[v.0].data;
            for i in 0..rows {
                out[i * total + offset..i * total + offset + c]
                    .copy_from_slice(&src[i * c..(i + 1) * c]);
            }
            offset += c;
        }
        let ids: Vec<usize> = xs.iter().map(|v| v.0).collect();
        Ok(self.push(
            out,
            vec![rows, total],
            Op::ConcatCols { xs: ids, rows, cols: cols_each },
        ))
    }

    /// Extracts columns `start..start+len` of a 2-D node.
    pub fn slice_cols(&mut self, x: Var, start: usize, len: usize) -> Result<Var, TensorError> {
        let (rows, cols) = self.dims2("slice_cols", x)?;
        if start + len > cols || len == 0 {
            return Err(TensorError::SliceOutOfRange {
                op: "slice_cols",
                start,
                end: start + len,
                cols,
            });
        }
        let src = &self.nodes[x.0].data;
        let mut out = Vec::with_capacity(rows * len);
        for i in 0..rows {
            out.extend_from_slice(&src[i * cols + start..i * cols + start + len]);
        }
        Ok(self.push(
            out,
            vec![rows, len],
            Op::SliceCols { x: x.0, rows, cols, start, len },
        ))
    }

    /// Reinterprets the flat data under a new shape with equal element count.
    pub fn reshape(&mut self, x: Var, new_shape: Vec<usize>) -> Result<Var, TensorError> {
        let n: usize = new_shape.iter().product();
        if n != self.nodes[x.0].data.len() {
            return Err(TensorError::DataLength {
                op: "reshape",
                len: self.nodes[x.0].data.len(),
                shape: new_shape,
            });
        }
        let data = self.nodes[x.0].data.clone();
        Ok(self.push(data, new_shape, Op::Reshape { x: x.0 }))
    }

    /// Sum of all elements, as a `[1]`-shaped scalar.
    pub fn sum_all(&mut self, x: Var) -> Var {
        let s: f64 = self.nodes[x.0].data.iter().sum();
        self.push(vec![s], vec![1], Op::SumAll { x: x.0 })
    }

    /// Mean cross-entropy between rows of logits and integer class targets,
    /// computed via log-sum-exp directly on logits for numerical stability.
    pub fn cross_entropy_mean(
        &mut self,
        logits: Var,
        targets: &[usize],
    ) -> Result<Var, TensorError> {
        let (rows, cols) = self.dims2("cross_entropy_mean", logits)?;
        if targets.len() != rows {
            return Err(TensorError::ShapeMismatch {
                op: "cross_entropy_mean",
                lhs: vec![rows, cols],
                rhs: vec![targets.len()],
            });
        }
        if rows == 0 {
            return Err(TensorError::EmptyInputs {
                op: "cross_entropy_mean",
            });
        }
        for &t in targets {
            if t >= cols {
                return Err(TensorError::TargetOutOfRange {
                    target: t,
                    classes: cols,
                });
            }
        }
        let src = &self.nodes[logits.0].data;
        let mut total = 0.0;
        for (b, &t) in targets.iter().enumerate() {
            let row = &src[b * cols..(b + 1) * cols];
            let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
            total += lse - row[t];
        }
        let loss = total / rows as f64;
        Ok(self.push(
            vec![loss],
            vec![1],
            Op::CrossEntropyMean {
                logits: logits.0,
                targets: targets.to_vec(),
                rows,
                cols,
            },
        ))
    }

    /// `1 - CCC(pred, truth)`, Lin's concordance with population (1/B)
    /// moments; the truth side is a constant. Needs at least two samples.
    /// A degenerate pair (both sides constant with equal means) yields loss 1
    /// and a zero gradient.
    pub fn ccc_loss(&mut self, pred: Var, truth: &[f64]) -> Result<Var, TensorError> {
        let n = self.nodes[pred.0].data.len();
        if n != truth.len() {
            return Err(TensorError::ShapeMismatch {
                op: "ccc_loss",
                lhs: self.nodes[pred.0].shape.clone(),
                rhs: vec![truth.len()],
            });
        }
        if n < 2 {
            return Err(TensorError::TooFewSamples {
                op: "ccc_loss",
                min: 2,
                got: n,
            });
        }
        let stats = CccStats::from_pair(&self.nodes[pred.0].data, truth);
        let loss = 1.0 - stats.ccc();
        Ok(self.push(
            vec![loss],
            vec![1],
            Op::CccLoss {
                pred: pred.0,
                truth: truth.to_vec(),
            },
        ))
    }

    // ---- backward --------------------------------------------------------

    /// Backpropagates from a scalar loss, filling per-node gradients readable
    /// through [`Tape::grad`]. Gradients from multiple consumers accumulate
    /// additively in creation order, which keeps results bit-reproducible.
    pub fn backward(&mut self, loss: Var) -> Result<(), TensorError> {
        if self.nodes[loss.0].data.len() != 1 {
            return Err(TensorError::NonScalarLoss {
                shape: self.nodes[loss.0].shape.clone(),
            });
        }
        let mut grads: Vec<Vec<f64>> = self
            .nodes
            .iter()
            .map(|n| vec![0.0; n.data.len()])
            .collect();
        grads[loss.0][0] = 1.0;

        for i in (0..=loss.0).rev() {
            let g = std::mem::take(&mut grads[i]);
            match &self.nodes[i].op {
                Op::Leaf => {}
                Op::MatMul { a, b, m, k, n } => {
                    let (m, k, n) = (*m, *k, *n);
                    let lhs = &self.nodes[*a].data;
                    let rhs = &self.nodes[*b].data;
                    // dA = G · Bᵀ
                    {
                        let da = &mut grads[*a];
                        for ii in 0..m {
                            for p in 0..k {
                                let mut acc = 0.0;
                                for j in 0..n {
                                    acc += g[ii * n + j] * rhs[p * n + j];
                                }
                                da[ii * k + p] += acc;
                            }
                        }
                    }
                    // dB = Aᵀ · G
                    {
                        let db = &mut grads[*b];
                        for p in 0..k {
                            for ii in 0..m {
                                let aip = lhs[ii * k + p];
                                if aip == 0.0 {
                                    continue;
                                }
                                for j in 0..n {
                                    db[p * n + j] += aip * g[ii * n + j];
                                }
                            }
                        }
                    }
                }
                Op::Transpose { x, rows, cols } => {
                    let dx = &mut grads[*x];
                    for i2 in 0..*rows {
                        for j in 0..*cols {
                            dx[i2 * cols + j] += g[j * rows + i2];
                        }
                    }
                }
                Op::Add { a, b } => {
                    let (a, b) = (*a, *b);
                    for (dst, gv) in grads[a].iter_mut().zip(&g) {
                        *dst += gv;
                    }
                    for (dst, gv) in grads[b].iter_mut().zip(&g) {
                        *dst += gv;
                    }
                }
                Op::AddBias { x, bias, rows, cols } => {
                    let (x, bias, rows, cols) = (*x, *bias, *rows, *cols);
                    for (dst, gv) in grads[x].iter_mut().zip(&g) {
                        *dst += gv;
                    }
                    let db = &mut grads[bias];
                    for i2 in 0..rows {
                        for j in 0..cols {
                            db[j] += g[i2 * cols + j];
                        }
                    }
                }
                Op::MulScalar { x, c } => {
                    let c = *c;
                    for (dst, gv) in grads[*x].iter_mut().zip(&g) {
                        *dst += gv * c;
                    }
                }
                Op::Relu { x } => {
                    let x = *x;
                    let src = &self.nodes[x].data;
                    for (j, gv) in g.iter().enumerate() {
                        if src[j] > 0.0 {
                            grads[x][j] += gv;
                        }
                    }
                }
                Op::Sigmoid { x } => {
                    let x = *x;
                    let out = &self.nodes[i].data;
                    let dx = &mut grads[x];
                    for (j, gv) in g.iter().enumerate() {
                        dx[j] += gv * out[j] * (1.0 - out[j]);
                    }
                }
                Op::Log { x } => {
                    let x = *x;
                    let src = &self.nodes[x].data;
                    let dx = &mut grads[x];
                    for (j, gv) in g.iter().enumerate() {
                        dx[j] += gv / src[j];
                    }
                }
                Op::SoftmaxRows { x, rows, cols } => {
                    // ds_j = s_j (g_j - Σ_k g_k s_k); masked columns have
                    // s_j = 0 and therefore contribute and receive nothing.
                    let (x, rows, cols) = (*x, *rows, *cols);
                    let s = &self.nodes[i].data;
                    let dx = &mut grads[x];
                    for r in 0..rows {
                        let srow = &s[r * cols..(r + 1) * cols];
                        let grow = &g[r * cols..(r + 1) * cols];
                        let dot: f64 = srow.iter().zip(grow).map(|(sv, gv)| sv * gv).sum();
                        let drow = &mut dx[r * cols..(r + 1) * cols];
                        for j in 0..cols {
                            drow[j] += srow[j] * (grow[j] - dot);
                        }
                    }
                }
                Op::MeanAxis { x, outer, axis_len, inner } => {
                    let (x, outer, axis_len, inner) = (*x, *outer, *axis_len, *inner);
                    let scale = 1.0 / axis_len as f64;
                    let dx = &mut grads[x];
                    for o in 0..outer {
                        for a in 0..axis_len {
                            let base = (o * axis_len + a) * inner;
                            for j in 0..inner {
                                dx[base + j] += g[o * inner + j] * scale;
                            }
                        }
                    }
                }
                Op::MeanRowsMasked { x, cols, kept } => {
                    let scale = 1.0 / kept.len() as f64;
                    let dx = &mut grads[*x];
                    for &r in kept {
                        for j in 0..*cols {
                            dx[r * cols + j] += g[j] * scale;
                        }
                    }
                }
                Op::StackRows { xs, cols } => {
                    for (r, &xid) in xs.iter().enumerate() {
                        let grow = &g[r * cols..(r + 1) * cols];
                        for (dst, gv) in grads[xid].iter_mut().zip(grow) {
                            *dst += gv;
                        }
                    }
                }
                Op::ConcatRows { xs, rows } => {
                    let cols = self.nodes[i].shape[1];
                    let mut offset = 0;
                    for (&xid, &r) in xs.iter().zip(rows) {
                        let block = &g[offset * cols..(offset + r) * cols];
                        for (dst, gv) in grads[xid].iter_mut().zip(block) {
                            *dst += gv;
                        }
                        offset += r;
                    }
                }
                Op::ConcatCols { xs, rows, cols } => {
                    let total: usize = cols.iter().sum();
                    let mut offset = 0;
                    for (&xid, &c) in xs.iter().zip(cols) {
                        let dx = &mut grads[xid];
                        for r in 0..*rows {
                            for j in 0..c {
                                dx[r * c + j] += g[r * total + offset + j];
                            }
                        }
                        offset += c;
                    }
                }
                Op::SliceCols { x, rows, cols, start, len } => {
                    let dx = &mut grads[*x];
                    for r in 0..*rows {
                        for j in 0..*len {
                            dx[r * cols + start + j] += g[r * len + j];
                        }
                    }
                }
                Op::Reshape { x } => {
                    for (dst, gv) in grads[*x].iter_mut().zip(&g) {
                        *dst += gv;
                    }
                }
                Op::SumAll { x } => {
                    let gv = g[0];
                    for dst in grads[*x].iter_mut() {
                        *dst += gv;
                    }
                }
                Op::CrossEntropyMean { logits, targets, rows, cols } => {
                    // d/dlogits = (softmax - onehot) * g / B, row by row.
                    let (logits, rows, cols) = (*logits, *rows, *cols);
                    let src = &self.nodes[logits].data;
                    let scale = g[0] / rows as f64;
                    let dx = &mut grads[logits];
                    for (b, &t) in targets.iter().enumerate() {
                        let row = &src[b * cols..(b + 1) * cols];
                        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                        let sum: f64 = row.iter().map(|v| (v - max).exp()).sum();
                        let drow = &mut dx[b * cols..(b + 1) * cols];
                        for j in 0..cols {
                            let s = (row[j] - max).exp() / sum;
                            let onehot = if j == t { 1.0 } else { 0.0 };
                            drow[j] += (s - onehot) * scale;
                        }
                    }
                }
                Op::CccLoss { pred, truth } => {
                    let pred = *pred;
                    let p = &self.nodes[pred].data;
                    let stats = CccStats::from_pair(p, truth);
                    // loss = 1 - num/den with num = 2 cov, den = var_p + var_t
                    // + (mean_p - mean_t)^2; quotient rule per prediction.
                    if stats.den > 0.0 {
                        let b = p.len() as f64;
                        let gv = g[0];
                        let dx = &mut grads[pred];
                        for (j, (&pj, &tj)) in p.iter().zip(truth).enumerate() {
                            let dnum = 2.0 * (tj - stats.mean_t) / b;
                            let dden =
                                2.0 * ((pj - stats.mean_p) + (stats.mean_p - stats.mean_t)) / b;
                            dx[j] -=
                                gv * (dnum * stats.den - stats.num * dden) / (stats.den * stats.den);
                        }
                    }
                }
            }
            grads[i] = g;
        }
        self.grads = Some(grads);
        Ok(())
    }
}

/// Shared moments for the concordance correlation coefficient, population
/// (1/B) normalization, with the mean-difference term squared.
pub(crate) struct CccStats {
    pub mean_p: f64,
    pub mean_t: f64,
    pub num: f64,
    pub den: f64,
}

impl CccStats {
    pub fn from_pair(pred: &[f64], truth: &[f64]) -> Self {
        let b = pred.len() as f64;
        let mean_p = pred.iter().sum::<f64>() / b;
        let mean_t = truth.iter().sum::<f64>() / b;
        let mut cov = 0.0;
        let mut var_p = 0.0;
        let mut var_t = 0.0;
        for (&p, &t) in pred.iter().zip(truth) {
            cov += (p - mean_p) * (t - mean_t);
            var_p += (p - mean_p) * (p - mean_p);
            var_t += (t - mean_t) * (t - mean_t);
        }
        cov /= b;
        var_p /= b;
        var_t /= b;
        let dm = mean_p - mean_t;
        Self {
            mean_p,
            mean_t,
            num: 2.0 * cov,
            den: var_p + var_t + dm * dm,
        }
    }

    /// Zero when both sides are constant with equal means (0/0 case).
    pub fn ccc(&self) -> f64 {
        if self.den > 0.0 {
            self.num / self.den
        } else {
            0.0
        }
    }
}
