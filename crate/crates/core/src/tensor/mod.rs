//! Dense f64 tensors with tape-based reverse-mode autodiff.
//!
//! A [`Tape`] owns every tensor created during one forward pass and records
//! each operation in execution order. [`Tape::backward`] replays the record in
//! reverse, accumulating gradients additively into every `requires_grad`
//! tensor reachable from the loss. Tensors are addressed by [`NodeId`]; the
//! tape is confined to one worker at a time and is dropped after use.
//!
//! Shapes are rank 1 or 2 (rank 3 for convolution weights). Elementwise ops
//! accept equal shapes, a scalar right operand, or a row-vector right operand
//! against a matrix (bias broadcast).

pub mod check;

use crate::error::{Error, Result};

/// Identifier of a tensor on its tape. Invalidated when the tape is dropped.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NodeId(usize);

impl NodeId {
    pub fn index(&self) -> usize {
        self.0
    }
}

/// One tensor slot on the tape.
#[derive(Debug, Clone)]
pub struct Tensor {
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
    /// Same shape as `data`; allocated lazily during backward.
    pub grad: Option<Vec<f64>>,
    pub requires_grad: bool,
    pub node_id: NodeId,
}

/// Recorded operation; holds input ids plus whatever backward needs.
#[derive(Debug, Clone)]
enum Op {
    Leaf,
    Add { a: NodeId, b: NodeId },
    Sub { a: NodeId, b: NodeId },
    Mul { a: NodeId, b: NodeId },
    Div { a: NodeId, b: NodeId },
    /// y = scale * x + shift
    Affine { x: NodeId, scale: f64 },
    Matmul { a: NodeId, b: NodeId, m: usize, k: usize, n: usize },
    Transpose { x: NodeId, rows: usize, cols: usize },
    ConcatLast { parts: Vec<NodeId>, widths: Vec<usize>, rows: usize },
    SliceTime { x: NodeId, start: usize, row_w: usize, total_rows: usize },
    SliceLast { x: NodeId, start: usize, len: usize, rows: usize, width: usize },
    GatherRows { x: NodeId, rows: Vec<usize>, row_w: usize, total_rows: usize },
    SumAll { x: NodeId },
    MeanAll { x: NodeId },
    Relu { x: NodeId },
    Tanh { x: NodeId },
    SoftmaxLast { x: NodeId, rows: usize, cols: usize },
    LayerNormLast {
        x: NodeId,
        gamma: NodeId,
        beta: NodeId,
        rows: usize,
        cols: usize,
        eps: f64,
    },
    Conv1d {
        x: NodeId,
        w: NodeId,
        b: NodeId,
        t: usize,
        d_in: usize,
        d_out: usize,
        k: usize,
    },
    /// Mean over rows of `weights[target] * (logsumexp(row) - row[target])`.
    CrossEntropyRows {
        logits: NodeId,
        targets: Vec<usize>,
        weights: Vec<f64>,
        rows: usize,
        cols: usize,
    },
    /// Mean over cells of pos-weighted binary cross-entropy on logits.
    BceLogits {
        logits: NodeId,
        targets: Vec<f64>,
        pos_weights: Vec<f64>,
        rows: usize,
        cols: usize,
    },
}

/// How the right operand of an elementwise op broadcasts against the left.
#[derive(Debug, Clone, Copy, PartialEq)]
enum Broadcast {
    Same,
    Scalar,
    Row,
}

fn broadcast_kind(lhs: &[usize], rhs: &[usize]) -> Option<Broadcast> {
    if lhs == rhs {
        return Some(Broadcast::Same);
    }
    let rhs_n: usize = rhs.iter().product();
    if rhs_n == 1 {
        return Some(Broadcast::Scalar);
    }
    if lhs.len() == 2 && rhs.len() == 1 && rhs[0] == lhs[1] {
        return Some(Broadcast::Row);
    }
    None
}

fn numel(shape: &[usize]) -> usize {
    shape.iter().product()
}

/// Numerically stable softplus: log(1 + exp(x)).
fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// The computation tape. Nodes are stored in execution order, which is also
/// the topological order used (reversed) by [`Tape::backward`].
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Tensor>,
    ops: Vec<Op>,
}

impl Tape {
    pub fn new() -> Self {
        Tape::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, data: Vec<f64>, shape: Vec<usize>, requires_grad: bool, op: Op) -> NodeId {
        debug_assert_eq!(data.len(), numel(&shape));
        debug_assert!(
            data.iter().all(|v| v.is_finite()),
            "non-finite value produced by {op:?}"
        );
        let id = NodeId(self.nodes.len());
        self.nodes.push(Tensor {
            shape,
            data,
            grad: None,
            requires_grad,
            node_id: id,
        });
        self.ops.push(op);
        id
    }

    fn validate_shape(shape: &[usize], data_len: usize) -> Result<()> {
        if shape.is_empty() || shape.contains(&0) {
            return Err(Error::dimension("tensor creation", shape, &[]));
        }
        if numel(shape) != data_len {
            return Err(Error::Contract(format!(
                "shape {shape:?} does not match data length {data_len}"
            )));
        }
        Ok(())
    }

    /// Leaf without gradient tracking (inputs, labels, masks, tables).
    pub fn constant(&mut self, data: Vec<f64>, shape: Vec<usize>) -> Result<NodeId> {
        Self::validate_shape(&shape, data.len())?;
        Ok(self.push(data, shape, false, Op::Leaf))
    }

    /// Leaf with gradient tracking (parameters, gradient-checked inputs).
    pub fn variable(&mut self, data: Vec<f64>, shape: Vec<usize>) -> Result<NodeId> {
        Self::validate_shape(&shape, data.len())?;
        Ok(self.push(data, shape, true, Op::Leaf))
    }

    pub fn scalar(&mut self, v: f64) -> NodeId {
        self.push(vec![v], vec![1], false, Op::Leaf)
    }

    pub fn value(&self, id: NodeId) -> &[f64] {
        &self.nodes[id.0].data
    }

    pub fn shape(&self, id: NodeId) -> &[usize] {
        &self.nodes[id.0].shape
    }

    pub fn numel_of(&self, id: NodeId) -> usize {
        self.nodes[id.0].data.len()
    }

    /// Gradient accumulated by the last `backward` call, if any flowed here.
    pub fn grad(&self, id: NodeId) -> Option<&[f64]> {
        self.nodes[id.0].grad.as_deref()
    }

    pub fn tensor(&self, id: NodeId) -> &Tensor {
        &self.nodes[id.0]
    }

    // ── Elementwise ─────────────────────────────────────────────────

    fn elementwise(
        &mut self,
        a: NodeId,
        b: NodeId,
        context: &'static str,
        f: impl Fn(f64, f64) -> f64,
        op: Op,
    ) -> Result<NodeId> {
        let kind = broadcast_kind(&self.nodes[a.0].shape, &self.nodes[b.0].shape)
            .ok_or_else(|| {
                Error::dimension(context, &self.nodes[a.0].shape, &self.nodes[b.0].shape)
            })?;
        let av = &self.nodes[a.0].data;
        let bv = &self.nodes[b.0].data;
        let data: Vec<f64> = match kind {
            Broadcast::Same => av.iter().zip(bv.iter()).map(|(&x, &y)| f(x, y)).collect(),
            Broadcast::Scalar => av.iter().map(|&x| f(x, bv[0])).collect(),
            Broadcast::Row => {
                let w = bv.len();
                av.iter()
                    .enumerate()
                    .map(|(i, &x)| f(x, bv[i % w]))
                    .collect()
            }
        };
        let shape = self.nodes[a.0].shape.clone();
        let rq = self.nodes[a.0].requires_grad || self.nodes[b.0].requires_grad;
        Ok(self.push(data, shape, rq, op))
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.elementwise(a, b, "add", |x, y| x + y, Op::Add { a, b })
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.elementwise(a, b, "sub", |x, y| x - y, Op::Sub { a, b })
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.elementwise(a, b, "mul", |x, y| x * y, Op::Mul { a, b })
    }

    pub fn div(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.elementwise(a, b, "div", |x, y| x / y, Op::Div { a, b })
    }

    /// y = scale * x + shift, elementwise with constants.
    pub fn affine(&mut self, x: NodeId, scale: f64, shift: f64) -> NodeId {
        let data: Vec<f64> = self.nodes[x.0].data.iter().map(|&v| scale * v + shift).collect();
        let shape = self.nodes[x.0].shape.clone();
        let rq = self.nodes[x.0].requires_grad;
        self.push(data, shape, rq, Op::Affine { x, scale })
    }

    pub fn scale(&mut self, x: NodeId, scale: f64) -> NodeId {
        self.affine(x, scale, 0.0)
    }

    pub fn relu(&mut self, x: NodeId) -> NodeId {
        let data: Vec<f64> = self.nodes[x.0].data.iter().map(|&v| v.max(0.0)).collect();
        let shape = self.nodes[x.0].shape.clone();
        let rq = self.nodes[x.0].requires_grad;
        self.push(data, shape, rq, Op::Relu { x })
    }

    pub fn tanh_elem(&mut self, x: NodeId) -> NodeId {
        let data: Vec<f64> = self.nodes[x.0].data.iter().map(|&v| v.tanh()).collect();
        let shape = self.nodes[x.0].shape.clone();
        let rq = self.nodes[x.0].requires_grad;
        self.push(data, shape, rq, Op::Tanh { x })
    }

    // ── Linear algebra and structure ────────────────────────────────

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (sa, sb) = (&self.nodes[a.0].shape, &self.nodes[b.0].shape);
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(Error::dimension("matmul", sa, sb));
        }
        let (m, k, n) = (sa[0], sa[1], sb[1]);
        let av = &self.nodes[a.0].data;
        let bv = &self.nodes[b.0].data;
        let mut data = vec![0.0; m * n];
        for i in 0..m {
            for p in 0..k {
                let aip = av[i * k + p];
                if aip == 0.0 {
                    continue;
                }
                let brow = &bv[p * n..(p + 1) * n];
                let crow = &mut data[i * n..(i + 1) * n];
                for j in 0..n {
                    crow[j] += aip * brow[j];
                }
            }
        }
        let rq = self.nodes[a.0].requires_grad || self.nodes[b.0].requires_grad;
        Ok(self.push(data, vec![m, n], rq, Op::Matmul { a, b, m, k, n }))
    }

    pub fn transpose(&mut self, x: NodeId) -> Result<NodeId> {
        let s = &self.nodes[x.0].shape;
        if s.len() != 2 {
            return Err(Error::dimension("transpose", s, &[]));
        }
        let (rows, cols) = (s[0], s[1]);
        let xv = &self.nodes[x.0].data;
        let mut data = vec![0.0; rows * cols];
        for i in 0..rows {
            for j in 0..cols {
                data[j * rows + i] = xv[i * cols + j];
            }
        }
        let rq = self.nodes[x.0].requires_grad;
        Ok(self.push(data, vec![cols, rows], rq, Op::Transpose { x, rows, cols }))
    }

    /// Concatenate along the last dimension; all parts share the leading dim.
    pub fn concat_lastdim(&mut self, parts: &[NodeId]) -> Result<NodeId> {
        if parts.is_empty() {
            return Err(Error::Contract("concat_lastdim of zero parts".into()));
        }
        let rows = match self.nodes[parts[0].0].shape.as_slice() {
            [r, _] => *r,
            other => return Err(Error::dimension("concat_lastdim", other, &[])),
        };
        let mut widths = Vec::with_capacity(parts.len());
        for &p in parts {
            match self.nodes[p.0].shape.as_slice() {
                [r, w] if *r == rows => widths.push(*w),
                other => {
                    return Err(Error::dimension("concat_lastdim", &[rows], other));
                }
            }
        }
        let total: usize = widths.iter().sum();
        let mut data = vec![0.0; rows * total];
        let mut offset = 0;
        for (&p, &w) in parts.iter().zip(widths.iter()) {
            let pv = &self.nodes[p.0].data;
            for r in 0..rows {
                data[r * total + offset..r * total + offset + w]
                    .copy_from_slice(&pv[r * w..(r + 1) * w]);
            }
            offset += w;
        }
        let rq = parts.iter().any(|&p| self.nodes[p.0].requires_grad);
        Ok(self.push(
            data,
            vec![rows, total],
            rq,
            Op::ConcatLast {
                parts: parts.to_vec(),
                widths,
                rows,
            },
        ))
    }

    /// Contiguous row range [start, start+len).
    pub fn slice_time(&mut self, x: NodeId, start: usize, len: usize) -> Result<NodeId> {
        let s = self.nodes[x.0].shape.clone();
        let (total_rows, row_w) = match s.as_slice() {
            [r] => (*r, 1),
            [r, w] => (*r, *w),
            other => return Err(Error::dimension("slice_time", other, &[])),
        };
        if len == 0 || start + len > total_rows {
            return Err(Error::dimension("slice_time", &s, &[start, len]));
        }
        let data = self.nodes[x.0].data[start * row_w..(start + len) * row_w].to_vec();
        let shape = if s.len() == 1 {
            vec![len]
        } else {
            vec![len, row_w]
        };
        let rq = self.nodes[x.0].requires_grad;
        Ok(self.push(
            data,
            shape,
            rq,
            Op::SliceTime {
                x,
                start,
                row_w,
                total_rows,
            },
        ))
    }

    /// Contiguous column range [start, start+len) of a matrix.
    pub fn slice_lastdim(&mut self, x: NodeId, start: usize, len: usize) -> Result<NodeId> {
        let s = self.nodes[x.0].shape.clone();
        let (rows, width) = match s.as_slice() {
            [r, w] => (*r, *w),
            other => return Err(Error::dimension("slice_lastdim", other, &[])),
        };
        if len == 0 || start + len > width {
            return Err(Error::dimension("slice_lastdim", &s, &[start, len]));
        }
        let xv = &self.nodes[x.0].data;
        let mut data = vec![0.0; rows * len];
        for r in 0..rows {
            data[r * len..(r + 1) * len]
                .copy_from_slice(&xv[r * width + start..r * width + start + len]);
        }
        let rq = self.nodes[x.0].requires_grad;
        Ok(self.push(
            data,
            vec![rows, len],
            rq,
            Op::SliceLast {
                x,
                start,
                len,
                rows,
                width,
            },
        ))
    }

    /// Select rows by index (duplicates allowed); backward scatter-adds.
    pub fn gather_rows(&mut self, x: NodeId, rows: &[usize]) -> Result<NodeId> {
        let s = self.nodes[x.0].shape.clone();
        let (total_rows, row_w) = match s.as_slice() {
            [r] => (*r, 1),
            [r, w] => (*r, *w),
            other => return Err(Error::dimension("gather_rows", other, &[])),
        };
        if rows.is_empty() || rows.iter().any(|&r| r >= total_rows) {
            return Err(Error::Contract(format!(
                "gather_rows indices out of range for {total_rows} rows"
            )));
        }
        let xv = &self.nodes[x.0].data;
        let mut data = vec![0.0; rows.len() * row_w];
        for (i, &r) in rows.iter().enumerate() {
            data[i * row_w..(i + 1) * row_w].copy_from_slice(&xv[r * row_w..(r + 1) * row_w]);
        }
        let shape = if s.len() == 1 {
            vec![rows.len()]
        } else {
            vec![rows.len(), row_w]
        };
        let rq = self.nodes[x.0].requires_grad;
        Ok(self.push(
            data,
            shape,
            rq,
            Op::GatherRows {
                x,
                rows: rows.to_vec(),
                row_w,
                total_rows,
            },
        ))
    }

    // ── Reductions ──────────────────────────────────────────────────

    pub fn sum_all(&mut self, x: NodeId) -> NodeId {
        let s: f64 = self.nodes[x.0].data.iter().sum();
        let rq = self.nodes[x.0].requires_grad;
        self.push(vec![s], vec![1], rq, Op::SumAll { x })
    }

    pub fn mean_all(&mut self, x: NodeId) -> NodeId {
        let n = self.nodes[x.0].data.len();
        let s: f64 = self.nodes[x.0].data.iter().sum();
        let rq = self.nodes[x.0].requires_grad;
        self.push(vec![s / n as f64], vec![1], rq, Op::MeanAll { x })
    }

    // ── Fused neural ops ────────────────────────────────────────────

    /// Softmax along the last dimension, computed with max-subtraction.
    pub fn softmax_lastdim(&mut self, x: NodeId) -> Result<NodeId> {
        let s = self.nodes[x.0].shape.clone();
        let (rows, cols) = match s.as_slice() {
            [n] => (1usize, *n),
            [r, c] => (*r, *c),
            other => return Err(Error::dimension("softmax_lastdim", other, &[])),
        };
        if cols == 0 {
            return Err(Error::dimension("softmax_lastdim", &s, &[]));
        }
        let xv = &self.nodes[x.0].data;
        let mut data = vec![0.0; rows * cols];
        for r in 0..rows {
            let row = &xv[r * cols..(r + 1) * cols];
            let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let mut sum = 0.0;
            for (j, &v) in row.iter().enumerate() {
                let e = (v - max).exp();
                data[r * cols + j] = e;
                sum += e;
            }
            for j in 0..cols {
                data[r * cols + j] /= sum;
            }
        }
        let rq = self.nodes[x.0].requires_grad;
        Ok(self.push(data, s, rq, Op::SoftmaxLast { x, rows, cols }))
    }

    /// Per-row layer normalization with affine parameters; epsilon 1e-5.
    pub fn layer_norm_lastdim(&mut self, x: NodeId, gamma: NodeId, beta: NodeId) -> Result<NodeId> {
        const EPS: f64 = 1e-5;
        let s = self.nodes[x.0].shape.clone();
        let (rows, cols) = match s.as_slice() {
            [n] => (1usize, *n),
            [r, c] => (*r, *c),
            other => return Err(Error::dimension("layer_norm_lastdim", other, &[])),
        };
        for &p in &[gamma, beta] {
            if self.nodes[p.0].data.len() != cols {
                return Err(Error::dimension(
                    "layer_norm_lastdim params",
                    &s,
                    &self.nodes[p.0].shape,
                ));
            }
        }
        let xv = &self.nodes[x.0].data;
        let gv = &self.nodes[gamma.0].data;
        let bv = &self.nodes[beta.0].data;
        let mut data = vec![0.0; rows * cols];
        for r in 0..rows {
            let row = &xv[r * cols..(r + 1) * cols];
            let mu = row.iter().sum::<f64>() / cols as f64;
            let var = row.iter().map(|&v| (v - mu) * (v - mu)).sum::<f64>() / cols as f64;
            let rstd = 1.0 / (var + EPS).sqrt();
            for j in 0..cols {
                data[r * cols + j] = gv[j] * (row[j] - mu) * rstd + bv[j];
            }
        }
        let rq = self.nodes[x.0].requires_grad
            || self.nodes[gamma.0].requires_grad
            || self.nodes[beta.0].requires_grad;
        Ok(self.push(
            data,
            s,
            rq,
            Op::LayerNormLast {
                x,
                gamma,
                beta,
                rows,
                cols,
                eps: EPS,
            },
        ))
    }

    /// 1-D temporal convolution with "same" zero padding.
    ///
    /// `x` is `[T, d_in]`, `w` is `[k, d_in, d_out]` with odd k, `b` is `[d_out]`;
    /// `out[t, o] = b[o] + sum_(j,i) x[t + j - (k-1)/2, i] * w[j, i, o]`.
    pub fn conv1d_temporal(&mut self, x: NodeId, w: NodeId, b: NodeId) -> Result<NodeId> {
        let sx = self.nodes[x.0].shape.clone();
        let sw = self.nodes[w.0].shape.clone();
        let sb = self.nodes[b.0].shape.clone();
        let (t, d_in) = match sx.as_slice() {
            [t, d] => (*t, *d),
            other => return Err(Error::dimension("conv1d_temporal input", other, &[])),
        };
        let (k, wd_in, d_out) = match sw.as_slice() {
            [k, i, o] => (*k, *i, *o),
            other => return Err(Error::dimension("conv1d_temporal weight", other, &[])),
        };
        if k % 2 == 0 {
            return Err(Error::Config(format!(
                "temporal convolution kernel must be odd, got {k}"
            )));
        }
        if wd_in != d_in {
            return Err(Error::dimension("conv1d_temporal", &sx, &sw));
        }
        if sb.as_slice() != [d_out] {
            return Err(Error::dimension("conv1d_temporal bias", &sb, &[d_out]));
        }
        let pad = (k - 1) / 2;
        let xv = &self.nodes[x.0].data;
        let wv = &self.nodes[w.0].data;
        let bv = &self.nodes[b.0].data;
        let mut data = vec![0.0; t * d_out];
        for ti in 0..t {
            let out_row = &mut data[ti * d_out..(ti + 1) * d_out];
            out_row.copy_from_slice(bv);
            for j in 0..k {
                let src = ti as isize + j as isize - pad as isize;
                if src < 0 || src as usize >= t {
                    continue;
                }
                let x_row = &xv[src as usize * d_in..(src as usize + 1) * d_in];
                for (i, &xi) in x_row.iter().enumerate() {
                    if xi == 0.0 {
                        continue;
                    }
                    let w_row = &wv[(j * d_in + i) * d_out..(j * d_in + i + 1) * d_out];
                    for o in 0..d_out {
                        out_row[o] += xi * w_row[o];
                    }
                }
            }
        }
        let rq = self.nodes[x.0].requires_grad
            || self.nodes[w.0].requires_grad
            || self.nodes[b.0].requires_grad;
        Ok(self.push(
            data,
            vec![t, d_out],
            rq,
            Op::Conv1d {
                x,
                w,
                b,
                t,
                d_in,
                d_out,
                k,
            },
        ))
    }

    /// Weighted softmax cross-entropy over rows, reduced to the scalar mean of
    /// `weights[target] * (logsumexp(row) - row[target])`.
    pub fn cross_entropy_rows(
        &mut self,
        logits: NodeId,
        targets: &[usize],
        weights: &[f64],
    ) -> Result<NodeId> {
        let s = self.nodes[logits.0].shape.clone();
        let (rows, cols) = match s.as_slice() {
            [r, c] => (*r, *c),
            other => return Err(Error::dimension("cross_entropy_rows", other, &[])),
        };
        if targets.len() != rows {
            return Err(Error::Contract(format!(
                "cross_entropy_rows: {rows} rows but {} targets",
                targets.len()
            )));
        }
        if weights.len() != cols {
            return Err(Error::Contract(format!(
                "cross_entropy_rows: {cols} classes but {} weights",
                weights.len()
            )));
        }
        if let Some(&bad) = targets.iter().find(|&&y| y >= cols) {
            return Err(Error::Contract(format!(
                "cross_entropy_rows: target {bad} out of range 0..{cols}"
            )));
        }
        let xv = &self.nodes[logits.0].data;
        let mut total = 0.0;
        for (r, &y) in targets.iter().enumerate() {
            let row = &xv[r * cols..(r + 1) * cols];
            let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let lse = max + row.iter().map(|&v| (v - max).exp()).sum::<f64>().ln();
            total += weights[y] * (lse - row[y]);
        }
        let rq = self.nodes[logits.0].requires_grad;
        Ok(self.push(
            vec![total / rows as f64],
            vec![1],
            rq,
            Op::CrossEntropyRows {
                logits,
                targets: targets.to_vec(),
                weights: weights.to_vec(),
                rows,
                cols,
            },
        ))
    }

    /// Pos-weighted binary cross-entropy on logits, mean over all cells.
    /// Cell loss: `pos_w[c] * y * softplus(-z) + (1 - y) * softplus(z)`.
    pub fn bce_logits(
        &mut self,
        logits: NodeId,
        targets: &[f64],
        pos_weights: &[f64],
    ) -> Result<NodeId> {
        let s = self.nodes[logits.0].shape.clone();
        let (rows, cols) = match s.as_slice() {
            [r, c] => (*r, *c),
            other => return Err(Error::dimension("bce_logits", other, &[])),
        };
        if targets.len() != rows * cols {
            return Err(Error::Contract(format!(
                "bce_logits: {} cells but {} targets",
                rows * cols,
                targets.len()
            )));
        }
        if pos_weights.len() != cols {
            return Err(Error::Contract(format!(
                "bce_logits: {cols} units but {} pos_weights",
                pos_weights.len()
            )));
        }
        let xv = &self.nodes[logits.0].data;
        let mut total = 0.0;
        for r in 0..rows {
            for c in 0..cols {
                let z = xv[r * cols + c];
                let y = targets[r * cols + c];
                total += pos_weights[c] * y * softplus(-z) + (1.0 - y) * softplus(z);
            }
        }
        let n = (rows * cols) as f64;
        let rq = self.nodes[logits.0].requires_grad;
        Ok(self.push(
            vec![total / n],
            vec![1],
            rq,
            Op::BceLogits {
                logits,
                targets: targets.to_vec(),
                pos_weights: pos_weights.to_vec(),
                rows,
                cols,
            },
        ))
    }

    // ── Backward ────────────────────────────────────────────────────

    fn accumulate(&mut self, id: NodeId, grad: &[f64]) {
        if !self.nodes[id.0].requires_grad {
            return;
        }
        let n = self.nodes[id.0].data.len();
        debug_assert_eq!(grad.len(), n);
        match &mut self.nodes[id.0].grad {
            Some(g) => {
                for (gi, &d) in g.iter_mut().zip(grad.iter()) {
                    *gi += d;
                }
            }
            None => self.nodes[id.0].grad = Some(grad.to_vec()),
        }
    }

    fn take_out_grad(&self, id: NodeId) -> Option<Vec<f64>> {
        self.nodes[id.0].grad.clone()
    }

    /// Reduce an output-shaped gradient onto a broadcast right operand.
    fn reduce_for_broadcast(grad: &[f64], kind: Broadcast, width: usize) -> Vec<f64> {
        match kind {
            Broadcast::Same => grad.to_vec(),
            Broadcast::Scalar => vec![grad.iter().sum()],
            Broadcast::Row => {
                let mut out = vec![0.0; width];
                for (i, &g) in grad.iter().enumerate() {
                    out[i % width] += g;
                }
                out
            }
        }
    }

    /// Propagate gradients from `loss` (which must be scalar) to every
    /// `requires_grad` tensor that feeds it. Any gradients from a previous
    /// call are cleared first, so repeated calls on one tape are idempotent.
    pub fn backward(&mut self, loss: NodeId) -> Result<()> {
        if self.nodes[loss.0].data.len() != 1 {
            return Err(Error::Contract(format!(
                "backward requires a scalar loss, got shape {:?}",
                self.nodes[loss.0].shape
            )));
        }
        for node in &mut self.nodes {
            node.grad = None;
        }
        if self.nodes[loss.0].requires_grad {
            self.nodes[loss.0].grad = Some(vec![1.0]);
        }
        for idx in (0..=loss.0).rev() {
            let op = self.ops[idx].clone();
            self.backward_op(NodeId(idx), &op);
        }
        Ok(())
    }

    fn backward_op(&mut self, out: NodeId, op: &Op) {
        let Some(d_out) = self.take_out_grad(out) else {
            return;
        };
        match op {
            Op::Leaf => {}

            Op::Add { a, b } => {
                let kind = broadcast_kind(&self.nodes[a.0].shape, &self.nodes[b.0].shape).unwrap();
                self.accumulate(*a, &d_out);
                let width = self.nodes[b.0].data.len();
                let db = Self::reduce_for_broadcast(&d_out, kind, width);
                self.accumulate(*b, &db);
            }

            Op::Sub { a, b } => {
                let kind = broadcast_kind(&self.nodes[a.0].shape, &self.nodes[b.0].shape).unwrap();
                self.accumulate(*a, &d_out);
                let width = self.nodes[b.0].data.len();
                let neg: Vec<f64> = d_out.iter().map(|&g| -g).collect();
                let db = Self::reduce_for_broadcast(&neg, kind, width);
                self.accumulate(*b, &db);
            }

            Op::Mul { a, b } => {
                let kind = broadcast_kind(&self.nodes[a.0].shape, &self.nodes[b.0].shape).unwrap();
                let av = self.nodes[a.0].data.clone();
                let bv = self.nodes[b.0].data.clone();
                let w = bv.len();
                let da: Vec<f64> = match kind {
                    Broadcast::Same => d_out.iter().zip(bv.iter()).map(|(&g, &y)| g * y).collect(),
                    Broadcast::Scalar => d_out.iter().map(|&g| g * bv[0]).collect(),
                    Broadcast::Row => d_out
                        .iter()
                        .enumerate()
                        .map(|(i, &g)| g * bv[i % w])
                        .collect(),
                };
                self.accumulate(*a, &da);
                let gb: Vec<f64> = d_out.iter().zip(av.iter()).map(|(&g, &x)| g * x).collect();
                let db = Self::reduce_for_broadcast(&gb, kind, w);
                self.accumulate(*b, &db);
            }

            Op::Div { a, b } => {
                let kind = broadcast_kind(&self.nodes[a.0].shape, &self.nodes[b.0].shape).unwrap();
                let av = self.nodes[a.0].data.clone();
                let bv = self.nodes[b.0].data.clone();
                let w = bv.len();
                let b_at = |i: usize| match kind {
                    Broadcast::Same => bv[i],
                    Broadcast::Scalar => bv[0],
                    Broadcast::Row => bv[i % w],
                };
                let da: Vec<f64> = d_out
                    .iter()
                    .enumerate()
                    .map(|(i, &g)| g / b_at(i))
                    .collect();
                self.accumulate(*a, &da);
                let gb: Vec<f64> = d_out
                    .iter()
                    .enumerate()
                    .map(|(i, &g)| -g * av[i] / (b_at(i) * b_at(i)))
                    .collect();
                let db = Self::reduce_for_broadcast(&gb, kind, w);
                self.accumulate(*b, &db);
            }

            Op::Affine { x, scale } => {
                let dx: Vec<f64> = d_out.iter().map(|&g| g * scale).collect();
                self.accumulate(*x, &dx);
            }

            Op::Matmul { a, b, m, k, n } => {
                let (m, k, n) = (*m, *k, *n);
                let av = self.nodes[a.0].data.clone();
                let bv = self.nodes[b.0].data.clone();
                // dA = dC * B^T
                let mut da = vec![0.0; m * k];
                for i in 0..m {
                    for j in 0..n {
                        let g = d_out[i * n + j];
                        if g == 0.0 {
                            continue;
                        }
                        for p in 0..k {
                            da[i * k + p] += g * bv[p * n + j];
                        }
                    }
                }
                self.accumulate(*a, &da);
                // dB = A^T * dC
                let mut db = vec![0.0; k * n];
                for i in 0..m {
                    for p in 0..k {
                        let x = av[i * k + p];
                        if x == 0.0 {
                            continue;
                        }
                        for j in 0..n {
                            db[p * n + j] += x * d_out[i * n + j];
                        }
                    }
                }
                self.accumulate(*b, &db);
            }

            Op::Transpose { x, rows, cols } => {
                let mut dx = vec![0.0; rows * cols];
                for i in 0..*rows {
                    for j in 0..*cols {
                        dx[i * cols + j] = d_out[j * rows + i];
                    }
                }
                self.accumulate(*x, &dx);
            }

            Op::ConcatLast {
                parts,
                widths,
                rows,
            } => {
                let total: usize = widths.iter().sum();
                let mut offset = 0;
                for (&p, &w) in parts.iter().zip(widths.iter()) {
                    let mut dp = vec![0.0; rows * w];
                    for r in 0..*rows {
                        dp[r * w..(r + 1) * w]
                            .copy_from_slice(&d_out[r * total + offset..r * total + offset + w]);
                    }
                    self.accumulate(p, &dp);
                    offset += w;
                }
            }

            Op::SliceTime {
                x,
                start,
                row_w,
                total_rows,
            } => {
                let mut dx = vec![0.0; total_rows * row_w];
                dx[start * row_w..start * row_w + d_out.len()].copy_from_slice(&d_out);
                self.accumulate(*x, &dx);
            }

            Op::SliceLast {
                x,
                start,
                len,
                rows,
                width,
            } => {
                let mut dx = vec![0.0; rows * width];
                for r in 0..*rows {
                    dx[r * width + start..r * width + start + len]
                        .copy_from_slice(&d_out[r * len..(r + 1) * len]);
                }
                self.accumulate(*x, &dx);
            }

            Op::GatherRows {
                x,
                rows,
                row_w,
                total_rows,
            } => {
                let mut dx = vec![0.0; total_rows * row_w];
                for (i, &r) in rows.iter().enumerate() {
                    for j in 0..*row_w {
                        dx[r * row_w + j] += d_out[i * row_w + j];
                    }
                }
                self.accumulate(*x, &dx);
            }

            Op::SumAll { x } => {
                let n = self.nodes[x.0].data.len();
                self.accumulate(*x, &vec![d_out[0]; n]);
            }

            Op::MeanAll { x } => {
                let n = self.nodes[x.0].data.len();
                self.accumulate(*x, &vec![d_out[0] / n as f64; n]);
            }

            Op::Relu { x } => {
                let xv = self.nodes[x.0].data.clone();
                let dx: Vec<f64> = d_out
                    .iter()
                    .zip(xv.iter())
                    .map(|(&g, &v)| if v > 0.0 { g } else { 0.0 })
                    .collect();
                self.accumulate(*x, &dx);
            }

            Op::Tanh { x } => {
                let yv = self.nodes[out.0].data.clone();
                let dx: Vec<f64> = d_out
                    .iter()
                    .zip(yv.iter())
                    .map(|(&g, &y)| g * (1.0 - y * y))
                    .collect();
                self.accumulate(*x, &dx);
            }

            Op::SoftmaxLast { x, rows, cols } => {
                let yv = self.nodes[out.0].data.clone();
                let mut dx = vec![0.0; rows * cols];
                for r in 0..*rows {
                    let base = r * cols;
                    let dot: f64 = (0..*cols).map(|j| d_out[base + j] * yv[base + j]).sum();
                    for j in 0..*cols {
                        dx[base + j] = yv[base + j] * (d_out[base + j] - dot);
                    }
                }
                self.accumulate(*x, &dx);
            }

            Op::LayerNormLast {
                x,
                gamma,
                beta,
                rows,
                cols,
                eps,
            } => {
                let xv = self.nodes[x.0].data.clone();
                let gv = self.nodes[gamma.0].data.clone();
                let n = *cols as f64;
                let mut dx = vec![0.0; rows * cols];
                let mut dgamma = vec![0.0; *cols];
                let mut dbeta = vec![0.0; *cols];
                for r in 0..*rows {
                    let base = r * cols;
                    let row = &xv[base..base + cols];
                    let mu = row.iter().sum::<f64>() / n;
                    let var = row.iter().map(|&v| (v - mu) * (v - mu)).sum::<f64>() / n;
                    let rstd = 1.0 / (var + eps).sqrt();
                    let xhat: Vec<f64> = row.iter().map(|&v| (v - mu) * rstd).collect();
                    let dy = &d_out[base..base + cols];
                    let dxhat: Vec<f64> = (0..*cols).map(|j| dy[j] * gv[j]).collect();
                    let mean_dxhat = dxhat.iter().sum::<f64>() / n;
                    let mean_dxhat_xhat =
                        dxhat.iter().zip(xhat.iter()).map(|(&a, &b)| a * b).sum::<f64>() / n;
                    for j in 0..*cols {
                        dgamma[j] += dy[j] * xhat[j];
                        dbeta[j] += dy[j];
                        dx[base + j] =
                            rstd * (dxhat[j] - mean_dxhat - xhat[j] * mean_dxhat_xhat);
                    }
                }
                self.accumulate(*x, &dx);
                self.accumulate(*gamma, &dgamma);
                self.accumulate(*beta, &dbeta);
            }

            Op::Conv1d {
                x,
                w,
                b,
                t,
                d_in,
                d_out: ch_out,
                k,
            } => {
                let pad = (k - 1) / 2;
                let xv = self.nodes[x.0].data.clone();
                let wv = self.nodes[w.0].data.clone();
                let mut dx = vec![0.0; t * d_in];
                let mut dw = vec![0.0; k * d_in * ch_out];
                let mut db = vec![0.0; *ch_out];
                for ti in 0..*t {
                    let g_row = &d_out[ti * ch_out..(ti + 1) * ch_out];
                    for o in 0..*ch_out {
                        db[o] += g_row[o];
                    }
                    for j in 0..*k {
                        let src = ti as isize + j as isize - pad as isize;
                        if src < 0 || src as usize >= *t {
                            continue;
                        }
                        let src = src as usize;
                        for i in 0..*d_in {
                            let w_row = &wv[(j * d_in + i) * ch_out..(j * d_in + i + 1) * ch_out];
                            let mut acc = 0.0;
                            for o in 0..*ch_out {
                                acc += g_row[o] * w_row[o];
                                dw[(j * d_in + i) * ch_out + o] += xv[src * d_in + i] * g_row[o];
                            }
                            dx[src * d_in + i] += acc;
                        }
                    }
                }
                self.accumulate(*x, &dx);
                self.accumulate(*w, &dw);
                self.accumulate(*b, &db);
            }

            Op::CrossEntropyRows {
                logits,
                targets,
                weights,
                rows,
                cols,
            } => {
                let xv = self.nodes[logits.0].data.clone();
                let scale = d_out[0] / *rows as f64;
                let mut dx = vec![0.0; rows * cols];
                for (r, &y) in targets.iter().enumerate() {
                    let base = r * cols;
                    let row = &xv[base..base + cols];
                    let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                    let mut sum = 0.0;
                    for j in 0..*cols {
                        let e = (row[j] - max).exp();
                        dx[base + j] = e;
                        sum += e;
                    }
                    for j in 0..*cols {
                        dx[base + j] = weights[y] * scale * (dx[base + j] / sum);
                    }
                    dx[base + y] -= weights[y] * scale;
                }
                self.accumulate(*logits, &dx);
            }

            Op::BceLogits {
                logits,
                targets,
                pos_weights,
                rows,
                cols,
            } => {
                let xv = self.nodes[logits.0].data.clone();
                let scale = d_out[0] / (rows * cols) as f64;
                let mut dx = vec![0.0; rows * cols];
                for r in 0..*rows {
                    for (c, &w) in pos_weights.iter().enumerate() {
                        let idx = r * cols + c;
                        let z = xv[idx];
                        let y = targets[idx];
                        // d/dz [w*y*softplus(-z) + (1-y)*softplus(z)]
                        dx[idx] = scale * (-w * y * sigmoid(-z) + (1.0 - y) * sigmoid(z));
                    }
                }
                self.accumulate(*logits, &dx);
            }
        }
    }
}
