//! Tape-based reverse-mode autodiff.
//!
//! Nodes are appended in evaluation order, so the node list is already a
//! topological order; `backward` walks it once in reverse. Shape mismatches
//! inside model code are programming errors and panic with the op name.

use rand::Rng;

use crate::error::{NumericsError, Result};
use crate::params::{ParamGrads, ParamId, ParamStore};
use crate::scalar::Scalar;
use crate::tensor::{self, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct NodeId(usize);

impl NodeId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op<T> {
    Input,
    Variable,
    Param(ParamId),
    Gather { param: ParamId, rows: Vec<usize> },
    GatherMean { param: ParamId, groups: Vec<Vec<usize>> },
    TakeRows { src: NodeId, rows: Vec<usize> },
    TakeAlongRows { src: NodeId, idx: Vec<usize> },
    MatMul(NodeId, NodeId),
    MatMulBt(NodeId, NodeId),
    Add(NodeId, NodeId),
    Sub(NodeId, NodeId),
    Mul(NodeId, NodeId),
    AddRow(NodeId, NodeId),
    MulRow(NodeId, NodeId),
    Scale(NodeId, T),
    ScaleRows(NodeId, Vec<T>),
    AddScalar(NodeId),
    Tanh(NodeId),
    Sigmoid(NodeId),
    Relu(NodeId),
    Softmax(NodeId),
    LayerNorm { src: NodeId, inv_std: Vec<T> },
    MeanRows(NodeId),
    SumAll(NodeId),
    MeanAll(NodeId),
    SumCols(NodeId),
    ConcatRows(Vec<NodeId>),
    ConcatCols(Vec<NodeId>),
    SliceRows { src: NodeId, start: usize },
    SliceCols { src: NodeId, start: usize },
    RepeatRows(NodeId),
    RepeatCols(NodeId),
    Attention(Box<AttentionSaved<T>>),
    LstmCell { gates: NodeId, c_prev: NodeId },
    SoftmaxCe { logits: NodeId, targets: Vec<usize>, probs: Vec<T> },
}

#[derive(Debug)]
struct AttentionSaved<T> {
    q: NodeId,
    k: NodeId,
    v: NodeId,
    heads: usize,
    scale: f64,
    /// `heads × Tq × Tk` attention weights.
    weights: Vec<T>,
}

impl<T> Op<T> {
    fn name(&self) -> &'static str {
        match self {
            Op::Input => "input",
            Op::Variable => "variable",
            Op::Param(_) => "param",
            Op::Gather { .. } => "gather",
            Op::GatherMean { .. } => "gather_mean",
            Op::TakeRows { .. } => "take_rows",
            Op::TakeAlongRows { .. } => "take_along_rows",
            Op::MatMul(..) => "matmul",
            Op::MatMulBt(..) => "matmul_bt",
            Op::Add(..) => "add",
            Op::Sub(..) => "sub",
            Op::Mul(..) => "mul",
            Op::AddRow(..) => "add_row",
            Op::MulRow(..) => "mul_row",
            Op::Scale(..) => "scale",
            Op::ScaleRows(..) => "scale_rows",
            Op::AddScalar(_) => "add_scalar",
            Op::Tanh(_) => "tanh",
            Op::Sigmoid(_) => "sigmoid",
            Op::Relu(_) => "relu",
            Op::Softmax(_) => "softmax",
            Op::LayerNorm { .. } => "layer_norm",
            Op::MeanRows(_) => "mean_rows",
            Op::SumAll(_) => "sum_all",
            Op::MeanAll(_) => "mean_all",
            Op::SumCols(_) => "sum_cols",
            Op::ConcatRows(_) => "concat_rows",
            Op::ConcatCols(_) => "concat_cols",
            Op::SliceRows { .. } => "slice_rows",
            Op::SliceCols { .. } => "slice_cols",
            Op::RepeatRows(_) => "repeat_rows",
            Op::RepeatCols(_) => "repeat_cols",
            Op::Attention(_) => "attention",
            Op::LstmCell { .. } => "lstm_cell",
            Op::SoftmaxCe { .. } => "softmax_ce",
        }
    }
}

#[derive(Debug)]
struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    requires_grad: bool,
}

/// One forward pass. Borrows the parameter store read-only; gradients come
/// back from [`Graph::backward`] and are applied by an optimizer afterwards.
#[derive(Debug)]
pub struct Graph<'p, T: Scalar = f32> {
    params: &'p ParamStore<T>,
    nodes: Vec<Node<T>>,
    train: bool,
    first_non_finite: Option<(usize, &'static str)>,
    // one leaf per parameter, shared by every use in this graph
    param_nodes: Vec<Option<NodeId>>,
}

fn sigmoid<T: Scalar>(x: T) -> T {
    T::one() / (T::one() + (-x).exp())
}

impl<'p, T: Scalar> Graph<'p, T> {
    pub fn new(params: &'p ParamStore<T>) -> Self {
        Self {
            params,
            nodes: Vec::new(),
            train: false,
            first_non_finite: None,
            param_nodes: vec![None; params.len()],
        }
    }

    /// Graph in training mode: dropout active.
    pub fn training(params: &'p ParamStore<T>) -> Self {
        Self {
            train: true,
            ..Self::new(params)
        }
    }

    pub fn is_training(&self) -> bool {
        self.train
    }

    pub fn params(&self) -> &'p ParamStore<T> {
        self.params
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, id: NodeId) -> &Tensor<T> {
        &self.nodes[id.0].value
    }

    pub fn shape(&self, id: NodeId) -> (usize, usize) {
        let v = &self.nodes[id.0].value;
        (v.rows(), v.cols())
    }

    /// Attention weights (`heads × Tq × Tk`, row-major) recorded by an attention node.
    pub fn attention_weights(&self, id: NodeId) -> Option<&[T]> {
        match &self.nodes[id.0].op {
            Op::Attention(s) => Some(&s.weights),
            _ => None,
        }
    }

    /// Fails if any node produced NaN or infinity.
    pub fn check_finite(&self) -> Result<()> {
        match self.first_non_finite {
            Some((node, op)) => Err(NumericsError::NonFinite { op, node }),
            None => Ok(()),
        }
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, requires_grad: bool) -> NodeId {
        let id = self.nodes.len();
        if self.first_non_finite.is_none() && !value.is_finite() {
            self.first_non_finite = Some((id, op.name()));
        }
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        NodeId(id)
    }

    fn rg(&self, ids: &[NodeId]) -> bool {
        ids.iter().any(|i| self.nodes[i.0].requires_grad)
    }

    fn dims(&self, id: NodeId) -> (usize, usize) {
        self.shape(id)
    }

    fn data(&self, id: NodeId) -> &[T] {
        self.nodes[id.0].value.data()
    }

    fn map(&mut self, a: NodeId, op: Op<T>, f: impl Fn(T) -> T) -> NodeId {
        let src = &self.nodes[a.0].value;
        let data = src.data().iter().map(|&x| f(x)).collect();
        let value = Tensor::new(src.shape().to_vec(), data).expect("same shape");
        let rg = self.rg(&[a]);
        self.push(value, op, rg)
    }

    // ---- leaves ----

    /// Constant input; receives no gradient.
    pub fn input(&mut self, value: Tensor<T>) -> NodeId {
        self.push(value, Op::Input, false)
    }

    /// Leaf that receives a gradient (useful for input-gradient checks).
    pub fn variable(&mut self, value: Tensor<T>) -> NodeId {
        self.push(value, Op::Variable, true)
    }

    pub fn zeros(&mut self, rows: usize, cols: usize) -> NodeId {
        self.input(Tensor::zeros(&[rows, cols]))
    }

    pub fn param(&mut self, id: ParamId) -> NodeId {
        if let Some(n) = self.param_nodes[id.index()] {
            return n;
        }
        let value = self.params.get(id).clone();
        let n = self.push(value, Op::Param(id), true);
        self.param_nodes[id.index()] = Some(n);
        n
    }

    /// Rows of an embedding table; gradients accumulate sparsely.
    pub fn gather(&mut self, param: ParamId, rows: &[usize]) -> NodeId {
        let table = self.params.get(param);
        let cols = table.cols();
        let mut data = Vec::with_capacity(rows.len() * cols);
        for &r in rows {
            assert!(r < table.rows(), "gather: row {r} out of range {}", table.rows());
            data.extend_from_slice(table.row_slice(r));
        }
        let value = Tensor::matrix(rows.len(), cols, data).expect("gather shape");
        self.push(
            value,
            Op::Gather {
                param,
                rows: rows.to_vec(),
            },
            true,
        )
    }

    /// One output row per group: the mean of that group's table rows.
    pub fn gather_mean(&mut self, param: ParamId, groups: &[Vec<usize>]) -> NodeId {
        let table = self.params.get(param);
        let cols = table.cols();
        let mut data = Vec::with_capacity(groups.len() * cols);
        let mut acc = vec![0.0f64; cols];
        for g in groups {
            assert!(!g.is_empty(), "gather_mean: empty group");
            acc.iter_mut().for_each(|v| *v = 0.0);
            for &r in g {
                assert!(r < table.rows(), "gather_mean: row {r} out of range {}", table.rows());
                for (a, v) in acc.iter_mut().zip(table.row_slice(r)) {
                    *a += v.f64();
                }
            }
            let n = g.len() as f64;
            data.extend(acc.iter().map(|v| T::of(v / n)));
        }
        let value = Tensor::matrix(groups.len(), cols, data).expect("gather_mean shape");
        self.push(
            value,
            Op::GatherMean {
                param,
                groups: groups.to_vec(),
            },
            true,
        )
    }

    pub fn take_rows(&mut self, src: NodeId, rows: &[usize]) -> NodeId {
        let s = &self.nodes[src.0].value;
        let cols = s.cols();
        let mut data = Vec::with_capacity(rows.len() * cols);
        for &r in rows {
            data.extend_from_slice(s.row_slice(r));
        }
        let value = Tensor::matrix(rows.len(), cols, data).expect("take_rows shape");
        let rg = self.rg(&[src]);
        self.push(
            value,
            Op::TakeRows {
                src,
                rows: rows.to_vec(),
            },
            rg,
        )
    }

    /// `out[i][j] = src[i][idx[i*per_row + j]]`.
    pub fn take_along_rows(&mut self, src: NodeId, idx: &[usize], per_row: usize) -> NodeId {
        let (m, n) = self.dims(src);
        assert_eq!(idx.len(), m * per_row, "take_along_rows: index count");
        let s = self.data(src);
        let data = idx
            .iter()
            .enumerate()
            .map(|(p, &c)| {
                assert!(c < n, "take_along_rows: column {c} out of range {n}");
                s[(p / per_row.max(1)) * n + c]
            })
            .collect();
        let value = Tensor::matrix(m, per_row, data).expect("take_along_rows shape");
        let rg = self.rg(&[src]);
        self.push(value, Op::TakeAlongRows { src, idx: idx.to_vec() }, rg)
    }

    // ---- linear algebra ----

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let (m, k) = self.dims(a);
        let (k2, n) = self.dims(b);
        assert_eq!(k, k2, "matmul: {m}x{k} · {k2}x{n}");
        let out = tensor::matmul(self.data(a), self.data(b), m, k, n);
        let rg = self.rg(&[a, b]);
        self.push(Tensor::matrix(m, n, out).unwrap(), Op::MatMul(a, b), rg)
    }

    /// `a · bᵀ`.
    pub fn matmul_bt(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let (m, k) = self.dims(a);
        let (n, k2) = self.dims(b);
        assert_eq!(k, k2, "matmul_bt: {m}x{k} · ({n}x{k2})ᵀ");
        let out = tensor::matmul_bt(self.data(a), self.data(b), m, k, n);
        let rg = self.rg(&[a, b]);
        self.push(Tensor::matrix(m, n, out).unwrap(), Op::MatMulBt(a, b), rg)
    }

    // ---- elementwise ----

    fn zip(&mut self, a: NodeId, b: NodeId, op: Op<T>, f: impl Fn(T, T) -> T) -> NodeId {
        let name = op.name();
        let (va, vb) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
        assert_eq!(
            (va.rows(), va.cols()),
            (vb.rows(), vb.cols()),
            "{name}: shape mismatch"
        );
        let data = va.data().iter().zip(vb.data()).map(|(&x, &y)| f(x, y)).collect();
        let value = Tensor::matrix(va.rows(), va.cols(), data).unwrap();
        let rg = self.rg(&[a, b]);
        self.push(value, op, rg)
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> NodeId {
        self.zip(a, b, Op::Add(a, b), |x, y| x + y)
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> NodeId {
        self.zip(a, b, Op::Sub(a, b), |x, y| x - y)
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> NodeId {
        self.zip(a, b, Op::Mul(a, b), |x, y| x * y)
    }

    fn broadcast_row(&mut self, a: NodeId, row: NodeId, op: Op<T>, f: impl Fn(T, T) -> T) -> NodeId {
        let name = op.name();
        let (m, n) = self.dims(a);
        assert_eq!(self.dims(row), (1, n), "{name}: row must be 1x{n}");
        let r = self.data(row);
        let data = self
            .data(a)
            .chunks(n)
            .flat_map(|chunk| chunk.iter().zip(r).map(|(&x, &y)| f(x, y)))
            .collect();
        let rg = self.rg(&[a, row]);
        self.push(Tensor::matrix(m, n, data).unwrap(), op, rg)
    }

    /// Adds a `1×n` row to every row of `a`.
    pub fn add_row(&mut self, a: NodeId, row: NodeId) -> NodeId {
        self.broadcast_row(a, row, Op::AddRow(a, row), |x, y| x + y)
    }

    /// Multiplies every row of `a` elementwise by a `1×n` row.
    pub fn mul_row(&mut self, a: NodeId, row: NodeId) -> NodeId {
        self.broadcast_row(a, row, Op::MulRow(a, row), |x, y| x * y)
    }

    pub fn scale(&mut self, a: NodeId, s: f64) -> NodeId {
        let st = T::of(s);
        self.map(a, Op::Scale(a, st), |x| x * st)
    }

    /// Scales row `i` of `a` by the constant `coeffs[i]`.
    pub fn scale_rows(&mut self, a: NodeId, coeffs: &[T]) -> NodeId {
        let (m, n) = self.dims(a);
        assert_eq!(coeffs.len(), m, "scale_rows: one coefficient per row");
        let data = self
            .data(a)
            .chunks(n)
            .zip(coeffs)
            .flat_map(|(r, &c)| r.iter().map(move |&x| x * c))
            .collect();
        let rg = self.rg(&[a]);
        self.push(
            Tensor::matrix(m, n, data).unwrap(),
            Op::ScaleRows(a, coeffs.to_vec()),
            rg,
        )
    }

    pub fn add_scalar(&mut self, a: NodeId, s: f64) -> NodeId {
        let st = T::of(s);
        self.map(a, Op::AddScalar(a), |x| x + st)
    }

    pub fn tanh(&mut self, a: NodeId) -> NodeId {
        self.map(a, Op::Tanh(a), |x| x.tanh())
    }

    pub fn sigmoid(&mut self, a: NodeId) -> NodeId {
        self.map(a, Op::Sigmoid(a), sigmoid)
    }

    pub fn relu(&mut self, a: NodeId) -> NodeId {
        self.map(a, Op::Relu(a), |x| if x > T::zero() { x } else { T::zero() })
    }

    /// Inverted dropout with keep probability `1 - p`; identity outside training.
    pub fn dropout<R: Rng + ?Sized>(&mut self, a: NodeId, p: f64, rng: &mut R) -> NodeId {
        if !self.train || p <= 0.0 {
            return a;
        }
        let (m, n) = self.dims(a);
        let keep = 1.0 - p;
        let mask = (0..m * n)
            .map(|_| {
                if rng.random::<f64>() < keep {
                    T::of(1.0 / keep)
                } else {
                    T::zero()
                }
            })
            .collect();
        let mask = self.input(Tensor::matrix(m, n, mask).unwrap());
        self.mul(a, mask)
    }

    // ---- normalization ----

    /// Row-wise softmax. Entries with `mask[i] == false` get probability 0.
    pub fn softmax(&mut self, a: NodeId, mask: Option<&[bool]>) -> NodeId {
        let (m, n) = self.dims(a);
        if let Some(mask) = mask {
            assert_eq!(mask.len(), m * n, "softmax: mask size");
        }
        let src = self.data(a);
        let mut out = vec![T::zero(); m * n];
        for i in 0..m {
            let row = &src[i * n..(i + 1) * n];
            let valid = |j: usize| mask.is_none_or(|mk| mk[i * n + j]);
            softmax_into(row, valid, &mut out[i * n..(i + 1) * n]);
        }
        let rg = self.rg(&[a]);
        self.push(Tensor::matrix(m, n, out).unwrap(), Op::Softmax(a), rg)
    }

    /// Row-wise standardization (no affine part).
    pub fn layer_norm(&mut self, a: NodeId, eps: f64) -> NodeId {
        let (m, n) = self.dims(a);
        let src = self.data(a);
        let mut out = Vec::with_capacity(m * n);
        let mut inv_std = Vec::with_capacity(m);
        for row in src.chunks(n) {
            let mean = row.iter().map(|v| v.f64()).sum::<f64>() / n as f64;
            let var = row.iter().map(|v| (v.f64() - mean).powi(2)).sum::<f64>() / n as f64;
            let inv = 1.0 / (var + eps).sqrt();
            inv_std.push(T::of(inv));
            out.extend(row.iter().map(|v| T::of((v.f64() - mean) * inv)));
        }
        let rg = self.rg(&[a]);
        self.push(
            Tensor::matrix(m, n, out).unwrap(),
            Op::LayerNorm { src: a, inv_std },
            rg,
        )
    }

    // ---- reductions ----

    /// Mean over rows: `m×n → 1×n`.
    pub fn mean_rows(&mut self, a: NodeId) -> NodeId {
        let (m, n) = self.dims(a);
        assert!(m > 0, "mean_rows: no rows");
        let mut acc = vec![0.0f64; n];
        for row in self.data(a).chunks(n) {
            for (s, v) in acc.iter_mut().zip(row) {
                *s += v.f64();
            }
        }
        let data = acc.into_iter().map(|s| T::of(s / m as f64)).collect();
        let rg = self.rg(&[a]);
        self.push(Tensor::row(data), Op::MeanRows(a), rg)
    }

    /// Sum over columns: `m×n → m×1`.
    pub fn sum_cols(&mut self, a: NodeId) -> NodeId {
        let (m, n) = self.dims(a);
        let data = self
            .data(a)
            .chunks(n)
            .map(|r| T::of(r.iter().map(|v| v.f64()).sum()))
            .collect();
        let rg = self.rg(&[a]);
        self.push(Tensor::matrix(m, 1, data).unwrap(), Op::SumCols(a), rg)
    }

    pub fn sum_all(&mut self, a: NodeId) -> NodeId {
        let s: f64 = self.data(a).iter().map(|v| v.f64()).sum();
        let rg = self.rg(&[a]);
        self.push(Tensor::scalar(T::of(s)), Op::SumAll(a), rg)
    }

    pub fn mean_all(&mut self, a: NodeId) -> NodeId {
        let d = self.data(a);
        let s: f64 = d.iter().map(|v| v.f64()).sum::<f64>() / d.len() as f64;
        let rg = self.rg(&[a]);
        self.push(Tensor::scalar(T::of(s)), Op::MeanAll(a), rg)
    }

    // ---- structure ----

    pub fn concat_rows(&mut self, parts: &[NodeId]) -> NodeId {
        assert!(!parts.is_empty(), "concat_rows: no parts");
        let n = self.dims(parts[0]).1;
        let mut data = Vec::new();
        let mut m = 0;
        for &p in parts {
            let (pm, pn) = self.dims(p);
            assert_eq!(pn, n, "concat_rows: column mismatch");
            m += pm;
            data.extend_from_slice(self.data(p));
        }
        let rg = self.rg(parts);
        self.push(
            Tensor::matrix(m, n, data).unwrap(),
            Op::ConcatRows(parts.to_vec()),
            rg,
        )
    }

    pub fn concat_cols(&mut self, parts: &[NodeId]) -> NodeId {
        assert!(!parts.is_empty(), "concat_cols: no parts");
        let m = self.dims(parts[0]).0;
        let widths: Vec<usize> = parts
            .iter()
            .map(|&p| {
                let (pm, pn) = self.dims(p);
                assert_eq!(pm, m, "concat_cols: row mismatch");
                pn
            })
            .collect();
        let n: usize = widths.iter().sum();
        let mut data = Vec::with_capacity(m * n);
        for i in 0..m {
            for (&p, &w) in parts.iter().zip(&widths) {
                data.extend_from_slice(&self.data(p)[i * w..(i + 1) * w]);
            }
        }
        let rg = self.rg(parts);
        self.push(
            Tensor::matrix(m, n, data).unwrap(),
            Op::ConcatCols(parts.to_vec()),
            rg,
        )
    }

    pub fn slice_rows(&mut self, a: NodeId, start: usize, len: usize) -> NodeId {
        let (m, n) = self.dims(a);
        assert!(start + len <= m, "slice_rows: {start}+{len} > {m}");
        let data = self.data(a)[start * n..(start + len) * n].to_vec();
        let rg = self.rg(&[a]);
        self.push(
            Tensor::matrix(len, n, data).unwrap(),
            Op::SliceRows { src: a, start },
            rg,
        )
    }

    pub fn slice_cols(&mut self, a: NodeId, start: usize, len: usize) -> NodeId {
        let (m, n) = self.dims(a);
        assert!(start + len <= n, "slice_cols: {start}+{len} > {n}");
        let data = self
            .data(a)
            .chunks(n)
            .flat_map(|r| r[start..start + len].iter().copied())
            .collect();
        let rg = self.rg(&[a]);
        self.push(
            Tensor::matrix(m, len, data).unwrap(),
            Op::SliceCols { src: a, start },
            rg,
        )
    }

    /// `1×n → times×n`.
    pub fn repeat_rows(&mut self, a: NodeId, times: usize) -> NodeId {
        let (m, n) = self.dims(a);
        assert_eq!(m, 1, "repeat_rows: expects a single row");
        let row = self.data(a).to_vec();
        let data = (0..times).flat_map(|_| row.iter().copied()).collect();
        let rg = self.rg(&[a]);
        self.push(Tensor::matrix(times, n, data).unwrap(), Op::RepeatRows(a), rg)
    }

    /// `m×1 → m×times`.
    pub fn repeat_cols(&mut self, a: NodeId, times: usize) -> NodeId {
        let (m, n) = self.dims(a);
        assert_eq!(n, 1, "repeat_cols: expects a single column");
        let data = self
            .data(a)
            .iter()
            .flat_map(|&v| std::iter::repeat_n(v, times))
            .collect();
        let rg = self.rg(&[a]);
        self.push(Tensor::matrix(m, times, data).unwrap(), Op::RepeatCols(a), rg)
    }

    // ---- fused ops ----

    /// Multi-head attention `softmax(q·kᵀ·scale)·v` per head, heads concatenated.
    ///
    /// `q: Tq×d`, `k: Tk×d`, `v: Tk×dv`; `d` and `dv` must divide by `heads`.
    /// When `scaled`, logits are divided by `sqrt(d / heads)`. Keys with
    /// `key_mask[j] == false` receive zero weight.
    pub fn attention(
        &mut self,
        q: NodeId,
        k: NodeId,
        v: NodeId,
        heads: usize,
        scaled: bool,
        key_mask: Option<&[bool]>,
    ) -> NodeId {
        let (tq, d) = self.dims(q);
        let (tk, dk) = self.dims(k);
        let (tv, dv) = self.dims(v);
        assert_eq!(d, dk, "attention: query/key width");
        assert_eq!(tk, tv, "attention: key/value length");
        assert!(heads > 0 && d % heads == 0 && dv % heads == 0, "attention: heads");
        if let Some(mask) = key_mask {
            assert_eq!(mask.len(), tk, "attention: key mask length");
        }
        let (dh, dvh) = (d / heads, dv / heads);
        let scale = if scaled { 1.0 / (dh as f64).sqrt() } else { 1.0 };
        let (qd, kd, vd) = (self.data(q), self.data(k), self.data(v));
        let mut weights = vec![T::zero(); heads * tq * tk];
        let mut out = vec![T::zero(); tq * dv];
        let mut logits = vec![T::zero(); tk];
        for h in 0..heads {
            for i in 0..tq {
                let qi = &qd[i * d + h * dh..i * d + (h + 1) * dh];
                for (j, l) in logits.iter_mut().enumerate() {
                    let kj = &kd[j * d + h * dh..j * d + (h + 1) * dh];
                    *l = T::of(tensor::dot(qi, kj) * scale);
                }
                let w = &mut weights[(h * tq + i) * tk..(h * tq + i + 1) * tk];
                softmax_into(&logits, |j| key_mask.is_none_or(|mk| mk[j]), w);
                let mut acc = vec![0.0f64; dvh];
                for (j, &wj) in w.iter().enumerate() {
                    if wj == T::zero() {
                        continue;
                    }
                    let vj = &vd[j * dv + h * dvh..j * dv + (h + 1) * dvh];
                    for (a, x) in acc.iter_mut().zip(vj) {
                        *a += wj.f64() * x.f64();
                    }
                }
                for (o, a) in out[i * dv + h * dvh..i * dv + (h + 1) * dvh]
                    .iter_mut()
                    .zip(&acc)
                {
                    *o = T::of(*a);
                }
            }
        }
        let rg = self.rg(&[q, k, v]);
        self.push(
            Tensor::matrix(tq, dv, out).unwrap(),
            Op::Attention(Box::new(AttentionSaved {
                q,
                k,
                v,
                heads,
                scale,
                weights,
            })),
            rg,
        )
    }

    /// LSTM cell on pre-activation gates `[i | f | g | o]` (`m×4h`) and the
    /// previous cell state (`m×h`). Returns `m×2h` laid out as `[h | c]`.
    pub fn lstm_cell(&mut self, gates: NodeId, c_prev: NodeId) -> NodeId {
        let (m, g4) = self.dims(gates);
        assert_eq!(g4 % 4, 0, "lstm_cell: gate width");
        let h = g4 / 4;
        assert_eq!(self.dims(c_prev), (m, h), "lstm_cell: cell state shape");
        let (gd, cd) = (self.data(gates), self.data(c_prev));
        let mut out = Vec::with_capacity(m * 2 * h);
        for r in 0..m {
            let g = &gd[r * g4..(r + 1) * g4];
            let cp = &cd[r * h..(r + 1) * h];
            let mut hs = Vec::with_capacity(h);
            let mut cs = Vec::with_capacity(h);
            for j in 0..h {
                let c = sigmoid(g[h + j]) * cp[j] + sigmoid(g[j]) * g[2 * h + j].tanh();
                cs.push(c);
                hs.push(sigmoid(g[3 * h + j]) * c.tanh());
            }
            out.extend(hs);
            out.extend(cs);
        }
        let rg = self.rg(&[gates, c_prev]);
        self.push(
            Tensor::matrix(m, 2 * h, out).unwrap(),
            Op::LstmCell { gates, c_prev },
            rg,
        )
    }

    /// Mean cross-entropy of row-wise softmax against `targets`. Masked
    /// logits (`mask == false`) are excluded from the partition function.
    pub fn softmax_cross_entropy(
        &mut self,
        logits: NodeId,
        targets: &[usize],
        mask: Option<&[bool]>,
    ) -> NodeId {
        let (m, n) = self.dims(logits);
        assert_eq!(targets.len(), m, "softmax_cross_entropy: one target per row");
        if let Some(mask) = mask {
            assert_eq!(mask.len(), m * n, "softmax_cross_entropy: mask size");
        }
        let src = self.data(logits);
        let mut probs = vec![T::zero(); m * n];
        let mut loss = 0.0f64;
        for i in 0..m {
            let t = targets[i];
            assert!(t < n, "softmax_cross_entropy: target out of range");
            let valid = |j: usize| mask.is_none_or(|mk| mk[i * n + j]);
            assert!(valid(t), "softmax_cross_entropy: target is masked");
            let row = &src[i * n..(i + 1) * n];
            let max = (0..n)
                .filter(|&j| valid(j))
                .map(|j| row[j].f64())
                .fold(f64::NEG_INFINITY, f64::max);
            let z: f64 = (0..n)
                .filter(|&j| valid(j))
                .map(|j| (row[j].f64() - max).exp())
                .sum();
            let lse = max + z.ln();
            loss += lse - row[t].f64();
            for j in 0..n {
                if valid(j) {
                    probs[i * n + j] = T::of((row[j].f64() - lse).exp());
                }
            }
        }
        let rg = self.rg(&[logits]);
        self.push(
            Tensor::scalar(T::of(loss / m as f64)),
            Op::SoftmaxCe {
                logits,
                targets: targets.to_vec(),
                probs,
            },
            rg,
        )
    }

    // ---- backward ----

    /// Reverse pass from a scalar `loss`.
    pub fn backward(&self, loss: NodeId) -> Result<Gradients<T>> {
        self.check_finite()?;
        let lv = &self.nodes[loss.0].value;
        if lv.len() != 1 {
            return Err(NumericsError::NonScalarLoss(lv.shape().to_vec()));
        }
        let mut grads: Vec<Option<Tensor<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        let mut pgrads = ParamGrads::new(self.params.len());
        grads[loss.0] = Some(Tensor::full(lv.shape(), T::one()));

        for i in (0..=loss.0).rev() {
            let node = &self.nodes[i];
            if !node.requires_grad {
                continue;
            }
            let Some(g) = grads[i].take() else {
                continue;
            };
            if !g.is_finite() {
                return Err(NumericsError::NonFinite {
                    op: node.op.name(),
                    node: i,
                });
            }
            self.backprop(i, &g, &mut grads, &mut pgrads);
            // only leaf variables keep their gradient; intermediates are dropped
            if matches!(node.op, Op::Variable) {
                grads[i] = Some(g);
            }
        }
        Ok(Gradients {
            nodes: grads,
            params: pgrads,
        })
    }

    fn accumulate(&self, grads: &mut [Option<Tensor<T>>], id: NodeId, g: Tensor<T>) {
        if !self.nodes[id.0].requires_grad {
            return;
        }
        match &mut grads[id.0] {
            Some(t) => t.add_assign(&g),
            slot @ None => *slot = Some(g),
        }
    }

    fn grad_like(&self, id: NodeId, data: Vec<T>) -> Tensor<T> {
        let (m, n) = self.dims(id);
        Tensor::matrix(m, n, data).unwrap()
    }

    fn backprop(
        &self,
        i: usize,
        g: &Tensor<T>,
        grads: &mut [Option<Tensor<T>>],
        pgrads: &mut ParamGrads<T>,
    ) {
        let node = &self.nodes[i];
        let out = &node.value;
        let gd = g.data();
        match &node.op {
            Op::Input | Op::Variable => {}
            Op::Param(p) => pgrads.add_dense(*p, g),
            Op::Gather { param, rows } => {
                let cols = out.cols();
                for (k, &r) in rows.iter().enumerate() {
                    pgrads.add_row(*param, cols, r, &gd[k * cols..(k + 1) * cols]);
                }
            }
            Op::GatherMean { param, groups } => {
                let cols = out.cols();
                for (k, grp) in groups.iter().enumerate() {
                    let inv = T::of(1.0 / grp.len() as f64);
                    let row: Vec<T> = gd[k * cols..(k + 1) * cols].iter().map(|&v| v * inv).collect();
                    for &r in grp {
                        pgrads.add_row(*param, cols, r, &row);
                    }
                }
            }
            Op::TakeRows { src, rows } => {
                let (m, n) = self.dims(*src);
                let mut d = vec![T::zero(); m * n];
                for (k, &r) in rows.iter().enumerate() {
                    for (a, b) in d[r * n..(r + 1) * n].iter_mut().zip(&gd[k * n..(k + 1) * n]) {
                        *a += *b;
                    }
                }
                self.accumulate(grads, *src, self.grad_like(*src, d));
            }
            Op::TakeAlongRows { src, idx } => {
                let (m, n) = self.dims(*src);
                let per_row = out.cols();
                let mut d = vec![T::zero(); m * n];
                for (p, &c) in idx.iter().enumerate() {
                    d[(p / per_row) * n + c] += gd[p];
                }
                self.accumulate(grads, *src, self.grad_like(*src, d));
            }
            Op::MatMul(a, b) => {
                let (m, k) = self.dims(*a);
                let n = out.cols();
                if self.nodes[a.0].requires_grad {
                    let da = tensor::matmul_bt(gd, self.data(*b), m, n, k);
                    self.accumulate(grads, *a, self.grad_like(*a, da));
                }
                if self.nodes[b.0].requires_grad {
                    let db = tensor::matmul_at(self.data(*a), gd, m, k, n);
                    self.accumulate(grads, *b, self.grad_like(*b, db));
                }
            }
            Op::MatMulBt(a, b) => {
                let (m, k) = self.dims(*a);
                let n = out.cols();
                if self.nodes[a.0].requires_grad {
                    let da = tensor::matmul(gd, self.data(*b), m, n, k);
                    self.accumulate(grads, *a, self.grad_like(*a, da));
                }
                if self.nodes[b.0].requires_grad {
                    let db = tensor::matmul_at(gd, self.data(*a), m, n, k);
                    self.accumulate(grads, *b, self.grad_like(*b, db));
                }
            }
            Op::Add(a, b) => {
                self.accumulate(grads, *a, g.clone());
                self.accumulate(grads, *b, g.clone());
            }
            Op::Sub(a, b) => {
                self.accumulate(grads, *a, g.clone());
                let neg = gd.iter().map(|&v| -v).collect();
                self.accumulate(grads, *b, self.grad_like(*b, neg));
            }
            Op::Mul(a, b) => {
                let da = gd.iter().zip(self.data(*b)).map(|(&x, &y)| x * y).collect();
                let db = gd.iter().zip(self.data(*a)).map(|(&x, &y)| x * y).collect();
                self.accumulate(grads, *a, self.grad_like(*a, da));
                self.accumulate(grads, *b, self.grad_like(*b, db));
            }
            Op::AddRow(a, r) => {
                self.accumulate(grads, *a, g.clone());
                let n = out.cols();
                let d = col_sums(gd, n);
                self.accumulate(grads, *r, self.grad_like(*r, d));
            }
            Op::MulRow(a, r) => {
                let n = out.cols();
                let rv = self.data(*r);
                let da = gd
                    .chunks(n)
                    .flat_map(|row| row.iter().zip(rv).map(|(&x, &y)| x * y))
                    .collect();
                self.accumulate(grads, *a, self.grad_like(*a, da));
                let prod: Vec<T> = gd.iter().zip(self.data(*a)).map(|(&x, &y)| x * y).collect();
                self.accumulate(grads, *r, self.grad_like(*r, col_sums(&prod, n)));
            }
            Op::Scale(a, s) => {
                let d = gd.iter().map(|&v| v * *s).collect();
                self.accumulate(grads, *a, self.grad_like(*a, d));
            }
            Op::ScaleRows(a, c) => {
                let n = out.cols();
                let d = gd
                    .chunks(n)
                    .zip(c)
                    .flat_map(|(r, &cv)| r.iter().map(move |&x| x * cv))
                    .collect();
                self.accumulate(grads, *a, self.grad_like(*a, d));
            }
            Op::AddScalar(a) => self.accumulate(grads, *a, g.clone()),
            Op::Tanh(a) => {
                let d = gd
                    .iter()
                    .zip(out.data())
                    .map(|(&x, &y)| x * (T::one() - y * y))
                    .collect();
                self.accumulate(grads, *a, self.grad_like(*a, d));
            }
            Op::Sigmoid(a) => {
                let d = gd
                    .iter()
                    .zip(out.data())
                    .map(|(&x, &y)| x * y * (T::one() - y))
                    .collect();
                self.accumulate(grads, *a, self.grad_like(*a, d));
            }
            Op::Relu(a) => {
                let d = gd
                    .iter()
                    .zip(out.data())
                    .map(|(&x, &y)| if y > T::zero() { x } else { T::zero() })
                    .collect();
                self.accumulate(grads, *a, self.grad_like(*a, d));
            }
            Op::Softmax(a) => {
                let n = out.cols();
                let mut d = Vec::with_capacity(gd.len());
                for (gr, yr) in gd.chunks(n).zip(out.data().chunks(n)) {
                    let s: f64 = gr.iter().zip(yr).map(|(x, y)| x.f64() * y.f64()).sum();
                    d.extend(gr.iter().zip(yr).map(|(&x, &y)| T::of(y.f64() * (x.f64() - s))));
                }
                self.accumulate(grads, *a, self.grad_like(*a, d));
            }
            Op::LayerNorm { src, inv_std } => {
                let n = out.cols();
                let mut d = Vec::with_capacity(gd.len());
                for ((gr, yr), inv) in gd.chunks(n).zip(out.data().chunks(n)).zip(inv_std) {
                    let mg = gr.iter().map(|v| v.f64()).sum::<f64>() / n as f64;
                    let mgy = gr.iter().zip(yr).map(|(x, y)| x.f64() * y.f64()).sum::<f64>() / n as f64;
                    d.extend(
                        gr.iter()
                            .zip(yr)
                            .map(|(x, y)| T::of(inv.f64() * (x.f64() - mg - y.f64() * mgy))),
                    );
                }
                self.accumulate(grads, *src, self.grad_like(*src, d));
            }
            Op::MeanRows(a) => {
                let (m, _) = self.dims(*a);
                let inv = T::of(1.0 / m as f64);
                let d = (0..m).flat_map(|_| gd.iter().map(move |&v| v * inv)).collect();
                self.accumulate(grads, *a, self.grad_like(*a, d));
            }
            Op::SumCols(a) => {
                let (_, n) = self.dims(*a);
                let d = gd.iter().flat_map(|&v| std::iter::repeat_n(v, n)).collect();
                self.accumulate(grads, *a, self.grad_like(*a, d));
            }
            Op::SumAll(a) => {
                let (m, n) = self.dims(*a);
                self.accumulate(grads, *a, self.grad_like(*a, vec![gd[0]; m * n]));
            }
            Op::MeanAll(a) => {
                let (m, n) = self.dims(*a);
                let v = gd[0] * T::of(1.0 / (m * n) as f64);
                self.accumulate(grads, *a, self.grad_like(*a, vec![v; m * n]));
            }
            Op::ConcatRows(parts) => {
                let n = out.cols();
                let mut off = 0;
                for &p in parts {
                    let pm = self.dims(p).0;
                    let d = gd[off * n..(off + pm) * n].to_vec();
                    self.accumulate(grads, p, self.grad_like(p, d));
                    off += pm;
                }
            }
            Op::ConcatCols(parts) => {
                let (m, n) = (out.rows(), out.cols());
                let mut off = 0;
                for &p in parts {
                    let pn = self.dims(p).1;
                    let d = (0..m)
                        .flat_map(|r| gd[r * n + off..r * n + off + pn].iter().copied())
                        .collect();
                    self.accumulate(grads, p, self.grad_like(p, d));
                    off += pn;
                }
            }
            Op::SliceRows { src, start } => {
                let (m, n) = self.dims(*src);
                let mut d = vec![T::zero(); m * n];
                d[start * n..start * n + gd.len()].copy_from_slice(gd);
                self.accumulate(grads, *src, self.grad_like(*src, d));
            }
            Op::SliceCols { src, start } => {
                let (m, n) = self.dims(*src);
                let len = out.cols();
                let mut d = vec![T::zero(); m * n];
                for r in 0..m {
                    d[r * n + start..r * n + start + len].copy_from_slice(&gd[r * len..(r + 1) * len]);
                }
                self.accumulate(grads, *src, self.grad_like(*src, d));
            }
            Op::RepeatRows(a) => {
                let n = out.cols();
                self.accumulate(grads, *a, self.grad_like(*a, col_sums(gd, n)));
            }
            Op::RepeatCols(a) => {
                let n = out.cols();
                let d = gd
                    .chunks(n)
                    .map(|r| T::of(r.iter().map(|v| v.f64()).sum()))
                    .collect();
                self.accumulate(grads, *a, self.grad_like(*a, d));
            }
            Op::Attention(s) => self.attention_backward(s, gd, grads),
            Op::LstmCell { gates, c_prev } => {
                let (m, g4) = self.dims(*gates);
                let h = g4 / 4;
                let (gv, cv) = (self.data(*gates), self.data(*c_prev));
                let mut dg = vec![T::zero(); m * g4];
                let mut dcp = vec![T::zero(); m * h];
                for r in 0..m {
                    let gt = &gv[r * g4..(r + 1) * g4];
                    let o = &out.data()[r * 2 * h..(r + 1) * 2 * h];
                    let go = &gd[r * 2 * h..(r + 1) * 2 * h];
                    for j in 0..h {
                        let (si, sf) = (sigmoid(gt[j]), sigmoid(gt[h + j]));
                        let (tg, so) = (gt[2 * h + j].tanh(), sigmoid(gt[3 * h + j]));
                        let c = o[h + j];
                        let tc = c.tanh();
                        let dh = go[j];
                        let dc = go[h + j] + dh * so * (T::one() - tc * tc);
                        let row = &mut dg[r * g4..(r + 1) * g4];
                        row[j] = dc * tg * si * (T::one() - si);
                        row[h + j] = dc * cv[r * h + j] * sf * (T::one() - sf);
                        row[2 * h + j] = dc * si * (T::one() - tg * tg);
                        row[3 * h + j] = dh * tc * so * (T::one() - so);
                        dcp[r * h + j] = dc * sf;
                    }
                }
                self.accumulate(grads, *gates, self.grad_like(*gates, dg));
                self.accumulate(grads, *c_prev, self.grad_like(*c_prev, dcp));
            }
            Op::SoftmaxCe {
                logits,
                targets,
                probs,
            } => {
                let (m, n) = self.dims(*logits);
                let scale = gd[0] * T::of(1.0 / m as f64);
                let mut d: Vec<T> = probs.iter().map(|&p| p * scale).collect();
                for (r, &t) in targets.iter().enumerate() {
                    d[r * n + t] -= scale;
                }
                self.accumulate(grads, *logits, self.grad_like(*logits, d));
            }
        }
    }

    fn attention_backward(&self, s: &AttentionSaved<T>, gd: &[T], grads: &mut [Option<Tensor<T>>]) {
        let (tq, d) = self.dims(s.q);
        let (tk, dv) = self.dims(s.v);
        let heads = s.heads;
        let (dh, dvh) = (d / heads, dv / heads);
        let (qd, kd, vd) = (self.data(s.q), self.data(s.k), self.data(s.v));
        let mut dq = vec![0.0f64; tq * d];
        let mut dk = vec![0.0f64; tk * d];
        let mut dvv = vec![0.0f64; tk * dv];
        let mut dw = vec![0.0f64; tk];
        for h in 0..heads {
            for i in 0..tq {
                let w = &s.weights[(h * tq + i) * tk..(h * tq + i + 1) * tk];
                let gi = &gd[i * dv + h * dvh..i * dv + (h + 1) * dvh];
                for j in 0..tk {
                    let vj = &vd[j * dv + h * dvh..j * dv + (h + 1) * dvh];
                    dw[j] = tensor::dot(gi, vj);
                    let wj = w[j].f64();
                    if wj != 0.0 {
                        for (a, x) in dvv[j * dv + h * dvh..j * dv + (h + 1) * dvh].iter_mut().zip(gi) {
                            *a += wj * x.f64();
                        }
                    }
                }
                let sum: f64 = w.iter().zip(&dw).map(|(a, b)| a.f64() * b).sum();
                for j in 0..tk {
                    let dl = w[j].f64() * (dw[j] - sum) * s.scale;
                    if dl == 0.0 {
                        continue;
                    }
                    let kj = &kd[j * d + h * dh..j * d + (h + 1) * dh];
                    let qi = &qd[i * d + h * dh..i * d + (h + 1) * dh];
                    for (a, x) in dq[i * d + h * dh..i * d + (h + 1) * dh].iter_mut().zip(kj) {
                        *a += dl * x.f64();
                    }
                    for (a, x) in dk[j * d + h * dh..j * d + (h + 1) * dh].iter_mut().zip(qi) {
                        *a += dl * x.f64();
                    }
                }
            }
        }
        let narrow = |v: Vec<f64>| v.into_iter().map(T::of).collect::<Vec<T>>();
        self.accumulate(grads, s.q, self.grad_like(s.q, narrow(dq)));
        self.accumulate(grads, s.k, self.grad_like(s.k, narrow(dk)));
        self.accumulate(grads, s.v, self.grad_like(s.v, narrow(dvv)));
    }
}

fn col_sums<T: Scalar>(data: &[T], n: usize) -> Vec<T> {
    let mut acc = vec![0.0f64; n];
    for row in data.chunks(n) {
        for (a, v) in acc.iter_mut().zip(row) {
            *a += v.f64();
        }
    }
    acc.into_iter().map(T::of).collect()
}

/// Numerically stable softmax of `row` restricted to `valid` entries. If no
/// entry is valid the output is all zeros.
fn softmax_into<T: Scalar>(row: &[T], valid: impl Fn(usize) -> bool, out: &mut [T]) {
    let max = row
        .iter()
        .enumerate()
        .filter(|(j, _)| valid(*j))
        .map(|(_, v)| v.f64())
        .fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        out.iter_mut().for_each(|o| *o = T::zero());
        return;
    }
    let mut z = 0.0f64;
    let mut tmp = vec![0.0f64; row.len()];
    for (j, v) in row.iter().enumerate() {
        if valid(j) {
            tmp[j] = (v.f64() - max).exp();
            z += tmp[j];
        }
    }
    for (o, t) in out.iter_mut().zip(tmp) {
        *o = T::of(t / z);
    }
}

/// Result of a backward pass.
#[derive(Debug)]
pub struct Gradients<T = f32> {
    nodes: Vec<Option<Tensor<T>>>,
    params: ParamGrads<T>,
}

impl<T: Scalar> Gradients<T> {
    /// Gradient w.r.t. a node's value, if it was reached.
    pub fn node(&self, id: NodeId) -> Option<&Tensor<T>> {
        self.nodes.get(id.0).and_then(Option::as_ref)
    }

    pub fn params(&self) -> &ParamGrads<T> {
        &self.params
    }

    pub fn into_params(self) -> ParamGrads<T> {
        self.params
    }
}
