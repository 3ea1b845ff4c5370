//! Define-by-run computation record with reverse-mode gradients.
//!
//! A [`Record`] owns every tensor produced during one forward computation;
//! ops append nodes and return lightweight [`Var`] handles. [`Record::backward`]
//! walks the record in reverse insertion order (a valid topological order by
//! construction) and accumulates gradients into every node that transitively
//! depends on a parameter leaf.
//!
//! Every op scans its output for NaN/Inf; the first violation is latched with
//! the op name and surfaces as an error from [`Record::backward`] /
//! [`Record::scalar_value`] instead of propagating silently.
//!
//! Shape preconditions are caller contracts and panic with a description.

use std::sync::Arc;

use super::kernels::{mm_nn, mm_nt, mm_tn};
use super::tensor::{Scalar, Tensor};
use crate::{Error, Result};

/// Handle to a node in a [`Record`]: the node-id of a tensor in the
/// computation it belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(pub(crate) usize);

/// Boolean attention-permission plane, shared across heads and layers.
/// `allowed[q * cols + k]` says whether query row `q` may attend to key `k`.
#[derive(Debug, Clone, PartialEq)]
pub struct MaskPlane {
    pub rows: usize,
    pub cols: usize,
    pub allowed: Vec<bool>,
}

impl MaskPlane {
    pub fn new(rows: usize, cols: usize, allowed: Vec<bool>) -> Self {
        assert_eq!(allowed.len(), rows * cols, "mask plane size mismatch");
        Self {
            rows,
            cols,
            allowed,
        }
    }

    pub fn full(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            allowed: vec![true; rows * cols],
        }
    }

    #[inline]
    pub fn allowed(&self, q: usize, k: usize) -> bool {
        self.allowed[q * self.cols + k]
    }
}

enum Op {
    Leaf,
    Add(Var, Var),
    /// `[n×d] + [d]`, the vector broadcast over rows.
    AddRow(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    Matmul(Var, Var),
    /// `a · bᵀ` with `b` stored `[n×k]`.
    MatmulNt(Var, Var),
    MaskedSoftmax(Var, Arc<MaskPlane>),
    LayerNorm {
        x: Var,
        gain: Var,
        bias: Var,
    },
    Gelu(Var),
    MeanAll(Var),
    SliceRows {
        x: Var,
        start: usize,
    },
    ConcatRows(Vec<Var>),
    SliceCols {
        x: Var,
        start: usize,
    },
    ConcatCols(Vec<Var>),
    GatherRows {
        table: Var,
        ids: Arc<Vec<usize>>,
    },
    Reshape(Var),
}

impl Op {
    fn name(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::Add(..) => "add",
            Op::AddRow(..) => "add_row",
            Op::Sub(..) => "sub",
            Op::Mul(..) => "mul",
            Op::Scale(..) => "scale",
            Op::Matmul(..) => "matmul",
            Op::MatmulNt(..) => "matmul_nt",
            Op::MaskedSoftmax(..) => "masked_softmax",
            Op::LayerNorm { .. } => "layer_norm",
            Op::Gelu(..) => "gelu",
            Op::MeanAll(..) => "mean_all",
            Op::SliceRows { .. } => "slice_rows",
            Op::ConcatRows(..) => "concat_rows",
            Op::SliceCols { .. } => "slice_cols",
            Op::ConcatCols(..) => "concat_cols",
            Op::GatherRows { .. } => "gather_rows",
            Op::Reshape(..) => "reshape",
        }
    }
}

struct Node<E> {
    shape: Vec<usize>,
    data: Vec<E>,
    op: Op,
    needs_grad: bool,
}

const LN_EPS: f64 = 1e-5;

/// One forward computation: nodes, their values, and (after `backward`)
/// their gradient accumulators.
pub struct Record<E: Scalar> {
    nodes: Vec<Node<E>>,
    grads: Vec<Option<Vec<E>>>,
    params: Vec<Var>,
    fault: Option<(&'static str, usize)>,
}

impl<E: Scalar> Default for Record<E> {
    fn default() -> Self {
        Self::new()
    }
}

impl<E: Scalar> Record<E> {
    pub fn new() -> Self {
        Self {
            nodes: Vec::new(),
            grads: Vec::new(),
            params: Vec::new(),
            fault: None,
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// First NaN/Inf fault latched during the forward computation, if any.
    pub fn fault(&self) -> Option<Error> {
        self.fault
            .map(|(op, node)| Error::NonFinite { op, node })
    }

    fn push(&mut self, shape: Vec<usize>, data: Vec<E>, op: Op, needs_grad: bool) -> Var {
        if self.fault.is_none() && !data.iter().all(|v| v.is_finite()) {
            self.fault = Some((op.name(), self.nodes.len()));
        }
        self.nodes.push(Node {
            shape,
            data,
            op,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn needs(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    /// Enters a tensor that does not require gradients.
    pub fn constant(&mut self, t: Tensor<E>) -> Var {
        let shape = t.shape().to_vec();
        let data = t.data().to_vec();
        self.push(shape, data, Op::Leaf, false)
    }

    /// Enters a trainable leaf; its gradient is populated by `backward`.
    pub fn param(&mut self, t: &Tensor<E>) -> Var {
        let v = self.push(t.shape().to_vec(), t.data().to_vec(), Op::Leaf, true);
        self.params.push(v);
        v
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        &self.nodes[v.0].shape
    }

    pub fn data(&self, v: Var) -> &[E] {
        &self.nodes[v.0].data
    }

    pub fn to_tensor(&self, v: Var) -> Tensor<E> {
        Tensor::new(self.nodes[v.0].shape.clone(), self.nodes[v.0].data.clone())
    }

    /// Value of a scalar node, checking the fault latch first.
    pub fn scalar_value(&self, v: Var) -> Result<E> {
        if let Some(e) = self.fault() {
            return Err(e);
        }
        assert_eq!(self.nodes[v.0].data.len(), 1, "expected scalar node");
        Ok(self.nodes[v.0].data[0])
    }

    /// Gradient of a node after `backward`. `None` if the node neither
    /// required nor received a gradient.
    pub fn grad(&self, v: Var) -> Option<&[E]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }

    fn rows_cols(&self, v: Var) -> (usize, usize) {
        let n = &self.nodes[v.0];
        let cols = n.shape.last().copied().unwrap_or(1);
        let rows = n.data.len() / cols.max(1);
        (rows, cols)
    }

    // ---- ops ------------------------------------------------------------

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        assert_eq!(
            self.nodes[a.0].shape, self.nodes[b.0].shape,
            "add: shape mismatch"
        );
        let data: Vec<E> = self.nodes[a.0]
            .data
            .iter()
            .zip(&self.nodes[b.0].data)
            .map(|(&x, &y)| x + y)
            .collect();
        let shape = self.nodes[a.0].shape.clone();
        let ng = self.needs(a) || self.needs(b);
        self.push(shape, data, Op::Add(a, b), ng)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        assert_eq!(
            self.nodes[a.0].shape, self.nodes[b.0].shape,
            "sub: shape mismatch"
        );
        let data: Vec<E> = self.nodes[a.0]
            .data
            .iter()
            .zip(&self.nodes[b.0].data)
            .map(|(&x, &y)| x - y)
            .collect();
        let shape = self.nodes[a.0].shape.clone();
        let ng = self.needs(a) || self.needs(b);
        self.push(shape, data, Op::Sub(a, b), ng)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        assert_eq!(
            self.nodes[a.0].shape, self.nodes[b.0].shape,
            "mul: shape mismatch"
        );
        let data: Vec<E> = self.nodes[a.0]
            .data
            .iter()
            .zip(&self.nodes[b.0].data)
            .map(|(&x, &y)| x * y)
            .collect();
        let shape = self.nodes[a.0].shape.clone();
        let ng = self.needs(a) || self.needs(b);
        self.push(shape, data, Op::Mul(a, b), ng)
    }

    pub fn scale(&mut self, x: Var, c: f64) -> Var {
        let ce = E::from_f64(c).expect("scale factor");
        let data: Vec<E> = self.nodes[x.0].data.iter().map(|&v| v * ce).collect();
        let shape = self.nodes[x.0].shape.clone();
        let ng = self.needs(x);
        self.push(shape, data, Op::Scale(x, c), ng)
    }

    /// Adds a rank-1 vector to every row of a matrix.
    pub fn add_row(&mut self, x: Var, v: Var) -> Var {
        let (rows, cols) = self.rows_cols(x);
        assert_eq!(
            self.nodes[v.0].data.len(),
            cols,
            "add_row: vector length must equal matrix columns"
        );
        let mut data = self.nodes[x.0].data.clone();
        for r in 0..rows {
            for j in 0..cols {
                data[r * cols + j] = data[r * cols + j] + self.nodes[v.0].data[j];
            }
        }
        let shape = self.nodes[x.0].shape.clone();
        let ng = self.needs(x) || self.needs(v);
        self.push(shape, data, Op::AddRow(x, v), ng)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let (m, ka) = self.rows_cols(a);
        let (kb, n) = self.rows_cols(b);
        assert_eq!(
            ka, kb,
            "matmul: inner extents disagree ({m}x{ka} vs {kb}x{n})"
        );
        let mut data = vec![E::zero(); m * n];
        mm_nn(
            &self.nodes[a.0].data,
            &self.nodes[b.0].data,
            m,
            ka,
            n,
            &mut data,
        );
        let ng = self.needs(a) || self.needs(b);
        self.push(vec![m, n], data, Op::Matmul(a, b), ng)
    }

    /// `a[m×k] · b[n×k]ᵀ -> [m×n]`
    pub fn matmul_nt(&mut self, a: Var, b: Var) -> Var {
        let (m, ka) = self.rows_cols(a);
        let (n, kb) = self.rows_cols(b);
        assert_eq!(
            ka, kb,
            "matmul_nt: inner extents disagree ({m}x{ka} vs {n}x{kb})"
        );
        let mut data = vec![E::zero(); m * n];
        mm_nt(
            &self.nodes[a.0].data,
            &self.nodes[b.0].data,
            m,
            ka,
            n,
            &mut data,
        );
        let ng = self.needs(a) || self.needs(b);
        self.push(vec![m, n], data, Op::MatmulNt(a, b), ng)
    }

    /// Row-wise softmax over allowed entries only. Blocked entries get weight
    /// exactly 0; each row is stabilized by subtracting its allowed maximum.
    /// Panics if some row has no allowed entry.
    pub fn masked_softmax(&mut self, logits: Var, mask: Arc<MaskPlane>) -> Var {
        let (rows, cols) = self.rows_cols(logits);
        assert_eq!(
            (rows, cols),
            (mask.rows, mask.cols),
            "masked_softmax: logits {rows}x{cols} vs mask {}x{}",
            mask.rows,
            mask.cols
        );
        let x = &self.nodes[logits.0].data;
        let mut out = vec![E::zero(); rows * cols];
        for r in 0..rows {
            let row = &x[r * cols..(r + 1) * cols];
            let mrow = &mask.allowed[r * cols..(r + 1) * cols];
            let mut maxv: Option<E> = None;
            for j in 0..cols {
                if mrow[j] {
                    maxv = Some(match maxv {
                        Some(m) if m >= row[j] => m,
                        _ => row[j],
                    });
                }
            }
            let maxv = maxv.unwrap_or_else(|| panic!("masked_softmax: row {r} fully masked"));
            let mut denom = E::zero();
            let orow = &mut out[r * cols..(r + 1) * cols];
            for j in 0..cols {
                if mrow[j] {
                    let v = (row[j] - maxv).exp();
                    orow[j] = v;
                    denom = denom + v;
                }
            }
            for j in 0..cols {
                if mrow[j] {
                    orow[j] = orow[j] / denom;
                }
            }
        }
        let shape = self.nodes[logits.0].shape.clone();
        let ng = self.needs(logits);
        self.push(shape, out, Op::MaskedSoftmax(logits, mask), ng)
    }

    /// Per-row standardization (ε = 1e-5 inside the square root) followed by
    /// an elementwise affine with `gain` and `bias`.
    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Var) -> Var {
        let (rows, cols) = self.rows_cols(x);
        assert!(cols >= 1, "layer_norm: empty rows");
        assert_eq!(self.nodes[gain.0].data.len(), cols, "layer_norm: gain length");
        assert_eq!(self.nodes[bias.0].data.len(), cols, "layer_norm: bias length");
        let eps = E::from_f64(LN_EPS).unwrap();
        let inv_d = E::from_f64(1.0 / cols as f64).unwrap();
        let xd = &self.nodes[x.0].data;
        let g = &self.nodes[gain.0].data;
        let b = &self.nodes[bias.0].data;
        let mut out = vec![E::zero(); rows * cols];
        for r in 0..rows {
            let row = &xd[r * cols..(r + 1) * cols];
            let mut mean = E::zero();
            for &v in row {
                mean = mean + v;
            }
            mean = mean * inv_d;
            let mut var = E::zero();
            for &v in row {
                let d = v - mean;
                var = var + d * d;
            }
            var = var * inv_d;
            let rstd = (var + eps).sqrt().recip();
            let orow = &mut out[r * cols..(r + 1) * cols];
            for j in 0..cols {
                orow[j] = (row[j] - mean) * rstd * g[j] + b[j];
            }
        }
        let shape = self.nodes[x.0].shape.clone();
        let ng = self.needs(x) || self.needs(gain) || self.needs(bias);
        self.push(shape, out, Op::LayerNorm { x, gain, bias }, ng)
    }

    /// GELU, tanh approximation:
    /// `0.5·x·(1 + tanh(√(2/π)·(x + 0.044715·x³)))`.
    pub fn gelu(&mut self, x: Var) -> Var {
        let c = E::from_f64(GELU_C).unwrap();
        let k = E::from_f64(GELU_K).unwrap();
        let half = E::from_f64(0.5).unwrap();
        let data: Vec<E> = self.nodes[x.0]
            .data
            .iter()
            .map(|&v| {
                let u = c * (v + k * v * v * v);
                half * v * (E::one() + u.tanh())
            })
            .collect();
        let shape = self.nodes[x.0].shape.clone();
        let ng = self.needs(x);
        self.push(shape, data, Op::Gelu(x), ng)
    }

    /// Mean over every element; yields a scalar node.
    pub fn mean_all(&mut self, x: Var) -> Var {
        let n = self.nodes[x.0].data.len();
        assert!(n > 0, "mean_all: empty tensor");
        let inv = E::from_f64(1.0 / n as f64).unwrap();
        let mut s = E::zero();
        for &v in &self.nodes[x.0].data {
            s = s + v;
        }
        let ng = self.needs(x);
        self.push(vec![1], vec![s * inv], Op::MeanAll(x), ng)
    }

    pub fn slice_rows(&mut self, x: Var, start: usize, len: usize) -> Var {
        let (rows, cols) = self.rows_cols(x);
        assert!(start + len <= rows, "slice_rows: out of range");
        let data = self.nodes[x.0].data[start * cols..(start + len) * cols].to_vec();
        let ng = self.needs(x);
        self.push(vec![len, cols], data, Op::SliceRows { x, start }, ng)
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Var {
        assert!(!parts.is_empty(), "concat_rows: no parts");
        let cols = self.rows_cols(parts[0]).1;
        let mut data = Vec::new();
        let mut rows = 0;
        for &p in parts {
            let (r, c) = self.rows_cols(p);
            assert_eq!(c, cols, "concat_rows: column mismatch");
            data.extend_from_slice(&self.nodes[p.0].data);
            rows += r;
        }
        let ng = parts.iter().any(|&p| self.needs(p));
        self.push(vec![rows, cols], data, Op::ConcatRows(parts.to_vec()), ng)
    }

    pub fn slice_cols(&mut self, x: Var, start: usize, len: usize) -> Var {
        let (rows, cols) = self.rows_cols(x);
        assert!(start + len <= cols, "slice_cols: out of range");
        let xd = &self.nodes[x.0].data;
        let mut data = Vec::with_capacity(rows * len);
        for r in 0..rows {
            data.extend_from_slice(&xd[r * cols + start..r * cols + start + len]);
        }
        let ng = self.needs(x);
        self.push(vec![rows, len], data, Op::SliceCols { x, start }, ng)
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Var {
        assert!(!parts.is_empty(), "concat_cols: no parts");
        let rows = self.rows_cols(parts[0]).0;
        let widths: Vec<usize> = parts
            .iter()
            .map(|&p| {
                let (r, c) = self.rows_cols(p);
                assert_eq!(r, rows, "concat_cols: row mismatch");
                c
            })
            .collect();
        let total: usize = widths.iter().sum();
        let mut data = Vec::with_capacity(rows * total);
        for r in 0..rows {
            for (i, &p) in parts.iter().enumerate() {
                let c = widths[i];
                let pd = &self.nodes[p.0].data;
                data.extend_from_slice(&pd[r * c..(r + 1) * c]);
            }
        }
        let ng = parts.iter().any(|&p| self.needs(p));
        self.push(vec![rows, total], data, Op::ConcatCols(parts.to_vec()), ng)
    }

    /// Same data, new extents.
    pub fn reshape(&mut self, x: Var, shape: Vec<usize>) -> Var {
        let n: usize = shape.iter().product();
        assert_eq!(n, self.nodes[x.0].data.len(), "reshape: element count");
        let data = self.nodes[x.0].data.clone();
        let ng = self.needs(x);
        self.push(shape, data, Op::Reshape(x), ng)
    }

    /// Embedding lookup: `out[i] = table[ids[i]]`. Duplicate ids accumulate
    /// gradient into the same table row.
    pub fn gather_rows(&mut self, table: Var, ids: &[usize]) -> Var {
        let (rows, cols) = self.rows_cols(table);
        let mut data = Vec::with_capacity(ids.len() * cols);
        for &id in ids {
            assert!(id < rows, "gather_rows: id {id} out of range 0..{rows}");
            data.extend_from_slice(&self.nodes[table.0].data[id * cols..(id + 1) * cols]);
        }
        let ng = self.needs(table);
        self.push(
            vec![ids.len(), cols],
            data,
            Op::GatherRows {
                table,
                ids: Arc::new(ids.to_vec()),
            },
            ng,
        )
    }

    // ---- backward --------------------------------------------------------

    /// Reverse-mode accumulation from a scalar loss. Gradients of parameter
    /// leaves that do not influence the loss are filled with zeros.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if let Some(e) = self.fault() {
            return Err(e);
        }
        assert_eq!(
            self.nodes[loss.0].data.len(),
            1,
            "backward: loss must be scalar"
        );
        self.grads = (0..self.nodes.len()).map(|_| None).collect();
        self.grads[loss.0] = Some(vec![E::one()]);

        for id in (0..=loss.0).rev() {
            if !self.nodes[id].needs_grad {
                continue;
            }
            let Some(g) = self.grads[id].take() else {
                continue;
            };
            self.propagate(id, &g);
            self.grads[id] = Some(g);
        }
        for i in 0..self.params.len() {
            let p = self.params[i];
            if self.grads[p.0].is_none() {
                self.grads[p.0] = Some(vec![E::zero(); self.nodes[p.0].data.len()]);
            }
        }
        Ok(())
    }

    fn accum(&mut self, v: Var, contribution: impl FnOnce(&Self, &mut [E])) {
        if !self.nodes[v.0].needs_grad {
            return;
        }
        let mut g = self.grads[v.0]
            .take()
            .unwrap_or_else(|| vec![E::zero(); self.nodes[v.0].data.len()]);
        contribution(self, &mut g);
        self.grads[v.0] = Some(g);
    }

    fn propagate(&mut self, id: usize, g: &[E]) {
        // The op is cheap to reconstruct by value; clone out of the node to
        // appease the borrow checker.
        let op: Op = match &self.nodes[id].op {
            Op::Leaf => return,
            Op::Add(a, b) => Op::Add(*a, *b),
            Op::AddRow(a, b) => Op::AddRow(*a, *b),
            Op::Sub(a, b) => Op::Sub(*a, *b),
            Op::Mul(a, b) => Op::Mul(*a, *b),
            Op::Scale(a, c) => Op::Scale(*a, *c),
            Op::Matmul(a, b) => Op::Matmul(*a, *b),
            Op::MatmulNt(a, b) => Op::MatmulNt(*a, *b),
            Op::MaskedSoftmax(a, m) => Op::MaskedSoftmax(*a, Arc::clone(m)),
            Op::LayerNorm { x, gain, bias } => Op::LayerNorm {
                x: *x,
                gain: *gain,
                bias: *bias,
            },
            Op::Gelu(a) => Op::Gelu(*a),
            Op::MeanAll(a) => Op::MeanAll(*a),
            Op::SliceRows { x, start } => Op::SliceRows {
                x: *x,
                start: *start,
            },
            Op::ConcatRows(vs) => Op::ConcatRows(vs.clone()),
            Op::SliceCols { x, start } => Op::SliceCols {
                x: *x,
                start: *start,
            },
            Op::ConcatCols(vs) => Op::ConcatCols(vs.clone()),
            Op::GatherRows { table, ids } => Op::GatherRows {
                table: *table,
                ids: Arc::clone(ids),
            },
            Op::Reshape(a) => Op::Reshape(*a),
        };

        match op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                self.accum(a, |_, ga| {
                    for (x, &y) in ga.iter_mut().zip(g) {
                        *x = *x + y;
                    }
                });
                self.accum(b, |_, gb| {
                    for (x, &y) in gb.iter_mut().zip(g) {
                        *x = *x + y;
                    }
                });
            }
            Op::Sub(a, b) => {
                self.accum(a, |_, ga| {
                    for (x, &y) in ga.iter_mut().zip(g) {
                        *x = *x + y;
                    }
                });
                self.accum(b, |_, gb| {
                    for (x, &y) in gb.iter_mut().zip(g) {
                        *x = *x - y;
                    }
                });
            }
            Op::AddRow(a, b) => {
                let cols = self.nodes[b.0].data.len();
                self.accum(a, |_, ga| {
                    for (x, &y) in ga.iter_mut().zip(g) {
                        *x = *x + y;
                    }
                });
                self.accum(b, |_, gb| {
                    for (i, &y) in g.iter().enumerate() {
                        gb[i % cols] = gb[i % cols] + y;
                    }
                });
            }
            Op::Mul(a, b) => {
                self.accum(a, |rec, ga| {
                    let bd = &rec.nodes[b.0].data;
                    for i in 0..ga.len() {
                        ga[i] = ga[i] + g[i] * bd[i];
                    }
                });
                self.accum(b, |rec, gb| {
                    let ad = &rec.nodes[a.0].data;
                    for i in 0..gb.len() {
                        gb[i] = gb[i] + g[i] * ad[i];
                    }
                });
            }
            Op::Scale(a, c) => {
                let ce = E::from_f64(c).unwrap();
                self.accum(a, |_, ga| {
                    for (x, &y) in ga.iter_mut().zip(g) {
                        *x = *x + y * ce;
                    }
                });
            }
            Op::Matmul(a, b) => {
                let (m, k) = self.rows_cols(a);
                let n = self.rows_cols(b).1;
                self.accum(a, |rec, ga| {
                    mm_nt(g, &rec.nodes[b.0].data, m, n, k, ga);
                });
                self.accum(b, |rec, gb| {
                    mm_tn(&rec.nodes[a.0].data, g, m, k, n, gb);
                });
            }
            Op::MatmulNt(a, b) => {
                let (m, k) = self.rows_cols(a);
                let n = self.rows_cols(b).0;
                self.accum(a, |rec, ga| {
                    mm_nn(g, &rec.nodes[b.0].data, m, n, k, ga);
                });
                self.accum(b, |rec, gb| {
                    mm_tn(g, &rec.nodes[a.0].data, m, n, k, gb);
                });
            }
            Op::MaskedSoftmax(a, mask) => {
                let (rows, cols) = self.rows_cols(a);
                let out_id = id;
                self.accum(a, |rec, ga| {
                    let p = &rec.nodes[out_id].data;
                    for r in 0..rows {
                        let prow = &p[r * cols..(r + 1) * cols];
                        let grow = &g[r * cols..(r + 1) * cols];
                        let mrow = &mask.allowed[r * cols..(r + 1) * cols];
                        let mut inner = E::zero();
                        for j in 0..cols {
                            if mrow[j] {
                                inner = inner + grow[j] * prow[j];
                            }
                        }
                        let garow = &mut ga[r * cols..(r + 1) * cols];
                        for j in 0..cols {
                            if mrow[j] {
                                garow[j] = garow[j] + prow[j] * (grow[j] - inner);
                            }
                        }
                    }
                });
            }
            Op::LayerNorm { x, gain, bias } => {
                let (rows, cols) = self.rows_cols(x);
                let eps = E::from_f64(LN_EPS).unwrap();
                let inv_d = E::from_f64(1.0 / cols as f64).unwrap();
                // Recompute the row statistics; cheaper than caching them.
                let mut xhat = vec![E::zero(); rows * cols];
                let mut rstds = vec![E::zero(); rows];
                {
                    let xd = &self.nodes[x.0].data;
                    for r in 0..rows {
                        let row = &xd[r * cols..(r + 1) * cols];
                        let mut mean = E::zero();
                        for &v in row {
                            mean = mean + v;
                        }
                        mean = mean * inv_d;
                        let mut var = E::zero();
                        for &v in row {
                            let d = v - mean;
                            var = var + d * d;
                        }
                        var = var * inv_d;
                        let rstd = (var + eps).sqrt().recip();
                        rstds[r] = rstd;
                        for j in 0..cols {
                            xhat[r * cols + j] = (row[j] - mean) * rstd;
                        }
                    }
                }
                self.accum(gain, |_, gg| {
                    for r in 0..rows {
                        for j in 0..cols {
                            gg[j] = gg[j] + g[r * cols + j] * xhat[r * cols + j];
                        }
                    }
                });
                self.accum(bias, |_, gb| {
                    for r in 0..rows {
                        for j in 0..cols {
                            gb[j] = gb[j] + g[r * cols + j];
                        }
                    }
                });
                self.accum(x, |rec, gx| {
                    let gaind = &rec.nodes[gain.0].data;
                    for r in 0..rows {
                        let grow = &g[r * cols..(r + 1) * cols];
                        let xrow = &xhat[r * cols..(r + 1) * cols];
                        let mut mean_h = E::zero();
                        let mut mean_hx = E::zero();
                        for j in 0..cols {
                            let h = gaind[j] * grow[j];
                            mean_h = mean_h + h;
                            mean_hx = mean_hx + h * xrow[j];
                        }
                        mean_h = mean_h * inv_d;
                        mean_hx = mean_hx * inv_d;
                        let gxrow = &mut gx[r * cols..(r + 1) * cols];
                        for j in 0..cols {
                            let h = gaind[j] * grow[j];
                            gxrow[j] = gxrow[j] + rstds[r] * (h - mean_h - xrow[j] * mean_hx);
                        }
                    }
                });
            }
            Op::Gelu(a) => {
                let c = E::from_f64(GELU_C).unwrap();
                let k3 = E::from_f64(3.0 * GELU_K).unwrap();
                let kk = E::from_f64(GELU_K).unwrap();
                let half = E::from_f64(0.5).unwrap();
                self.accum(a, |rec, ga| {
                    let xd = &rec.nodes[a.0].data;
                    for i in 0..ga.len() {
                        let v = xd[i];
                        let u = c * (v + kk * v * v * v);
                        let t = u.tanh();
                        let sech2 = E::one() - t * t;
                        let du = c * (E::one() + k3 * v * v);
                        let d = half * (E::one() + t) + half * v * sech2 * du;
                        ga[i] = ga[i] + g[i] * d;
                    }
                });
            }
            Op::MeanAll(a) => {
                let n = self.nodes[a.0].data.len();
                let w = g[0] * E::from_f64(1.0 / n as f64).unwrap();
                self.accum(a, |_, ga| {
                    for x in ga.iter_mut() {
                        *x = *x + w;
                    }
                });
            }
            Op::SliceRows { x, start } => {
                let cols = self.rows_cols(x).1;
                self.accum(x, |_, gx| {
                    for (i, &y) in g.iter().enumerate() {
                        gx[start * cols + i] = gx[start * cols + i] + y;
                    }
                });
            }
            Op::ConcatRows(parts) => {
                let mut offset = 0;
                for &p in &parts {
                    let len = self.nodes[p.0].data.len();
                    let seg = &g[offset..offset + len];
                    self.accum(p, |_, gp| {
                        for (x, &y) in gp.iter_mut().zip(seg) {
                            *x = *x + y;
                        }
                    });
                    offset += len;
                }
            }
            Op::SliceCols { x, start } => {
                let (rows, cols) = self.rows_cols(x);
                let out_cols = self.nodes[id].shape[1];
                self.accum(x, |_, gx| {
                    for r in 0..rows {
                        for j in 0..out_cols {
                            let t = r * cols + start + j;
                            gx[t] = gx[t] + g[r * out_cols + j];
                        }
                    }
                });
            }
            Op::ConcatCols(parts) => {
                let rows = self.rows_cols(parts[0]).0;
                let total = self.nodes[id].shape[1];
                let mut offset = 0;
                for &p in &parts {
                    let c = self.rows_cols(p).1;
                    self.accum(p, |_, gp| {
                        for r in 0..rows {
                            for j in 0..c {
                                gp[r * c + j] = gp[r * c + j] + g[r * total + offset + j];
                            }
                        }
                    });
                    offset += c;
                }
            }
            Op::GatherRows { table, ids } => {
                let cols = self.rows_cols(table).1;
                self.accum(table, |_, gt| {
                    for (i, &id_) in ids.iter().enumerate() {
                        for j in 0..cols {
                            gt[id_ * cols + j] = gt[id_ * cols + j] + g[i * cols + j];
                        }
                    }
                });
            }
            Op::Reshape(a) => {
                self.accum(a, |_, ga| {
                    for (x, &y) in ga.iter_mut().zip(g) {
                        *x = *x + y;
                    }
                });
            }
        }
    }
}

/// √(2/π), the GELU tanh-approximation scale.
const GELU_C: f64 = 0.7978845608028654;
/// Cubic coefficient of the GELU tanh approximation.
const GELU_K: f64 = 0.044715;
