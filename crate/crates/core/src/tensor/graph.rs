use std::sync::Arc;

use super::Tensor;
use crate::error::{Error, Result};
use crate::rng::SeededRng;
use crate::scalar::Real;

/// Added to the target probability inside [`Graph::cross_entropy`].
pub const CE_EPSILON: f64 = 1e-12;

/// Handle to a node recorded on a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op<T> {
    Leaf,
    MatMul(Var, Var),
    Transpose(Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddRow(Var, Var),
    Scale(Var, T),
    AddScalar(Var),
    MulConst(Var, Arc<Vec<T>>),
    Tanh(Var),
    Sigmoid(Var),
    Relu(Var),
    ConcatCols(Vec<Var>),
    ConcatRows(Vec<Var>),
    SliceCols(Var, usize),
    SliceRows(Var, usize),
    GatherRows(Var, Vec<Option<usize>>),
    RepeatRows(Var),
    Reshape(Var),
    MaskedRowSoftmax(Var, Arc<Vec<bool>>),
    MaskedRowMax(Var, Vec<usize>),
    SegmentMaxRows(Var, Vec<usize>),
    SumAll(Var),
    CrossEntropy(Var, usize),
}

impl<T> Op<T> {
    fn name(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::MatMul(..) => "matmul",
            Op::Transpose(..) => "transpose",
            Op::Add(..) => "add",
            Op::Sub(..) => "sub",
            Op::Mul(..) => "mul",
            Op::AddRow(..) => "add_row",
            Op::Scale(..) => "scale",
            Op::AddScalar(..) => "add_scalar",
            Op::MulConst(..) => "mul_const",
            Op::Tanh(..) => "tanh",
            Op::Sigmoid(..) => "sigmoid",
            Op::Relu(..) => "relu",
            Op::ConcatCols(..) => "concat_cols",
            Op::ConcatRows(..) => "concat_rows",
            Op::SliceCols(..) => "slice_cols",
            Op::SliceRows(..) => "slice_rows",
            Op::GatherRows(..) => "gather_rows",
            Op::RepeatRows(..) => "repeat_rows",
            Op::Reshape(..) => "reshape",
            Op::MaskedRowSoftmax(..) => "masked_row_softmax",
            Op::MaskedRowMax(..) => "masked_row_max",
            Op::SegmentMaxRows(..) => "segment_max_rows",
            Op::SumAll(..) => "sum",
            Op::CrossEntropy(..) => "cross_entropy",
        }
    }
}

#[derive(Debug)]
struct Node<T> {
    rows: usize,
    cols: usize,
    value: Arc<Vec<T>>,
    op: Op<T>,
    requires_grad: bool,
}

/// Tape of recorded operations in topological order.
#[derive(Debug, Default)]
pub struct Graph<T> {
    nodes: Vec<Node<T>>,
}

/// Gradients produced by [`Graph::backward`], indexed by node.
#[derive(Debug)]
pub struct Gradients<T> {
    grads: Vec<Option<Vec<T>>>,
}

impl<T> Gradients<T> {
    /// Gradient of the loss with respect to `v`, if `v` requires grad and is
    /// reachable from the loss.
    pub fn get(&self, v: Var) -> Option<&[T]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }
}

impl<T: Real> Graph<T> {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, rows: usize, cols: usize, value: Vec<T>, op: Op<T>, requires_grad: bool) -> Var {
        debug_assert_eq!(rows * cols, value.len());
        self.nodes.push(Node {
            rows,
            cols,
            value: Arc::new(value),
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn node(&self, v: Var) -> &Node<T> {
        &self.nodes[v.0]
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    pub fn shape(&self, v: Var) -> (usize, usize) {
        let n = self.node(v);
        (n.rows, n.cols)
    }

    pub fn value(&self, v: Var) -> &[T] {
        &self.node(v).value
    }

    pub fn scalar(&self, v: Var) -> T {
        self.node(v).value[0]
    }

    /// Copies a node's value out as a standalone tensor.
    pub fn tensor(&self, v: Var) -> Tensor<T> {
        let n = self.node(v);
        Tensor::new(vec![n.rows, n.cols], n.value.to_vec()).expect("node shape is consistent")
    }

    pub fn op_name(&self, v: Var) -> &'static str {
        self.node(v).op.name()
    }

    /// Records a tensor as a leaf, sharing its storage. It participates in
    /// backward iff the tensor requires grad.
    pub fn leaf(&mut self, t: &Tensor<T>) -> Var {
        self.nodes.push(Node {
            rows: t.rows(),
            cols: t.cols(),
            value: t.shared_values(),
            op: Op::Leaf,
            requires_grad: t.requires_grad(),
        });
        Var(self.nodes.len() - 1)
    }

    /// A constant (never differentiated) matrix.
    pub fn constant(&mut self, rows: usize, cols: usize, values: Vec<T>) -> Result<Var> {
        if rows * cols != values.len() || rows == 0 || cols == 0 {
            return Err(Error::dims("constant", &[rows, cols], &[values.len()]));
        }
        Ok(self.push(rows, cols, values, Op::Leaf, false))
    }

    pub fn zeros(&mut self, rows: usize, cols: usize) -> Var {
        self.push(rows, cols, vec![T::zero(); rows * cols], Op::Leaf, false)
    }

    /// First node holding a NaN or infinity, with its op name.
    pub fn first_non_finite(&self) -> Option<(usize, &'static str)> {
        self.nodes
            .iter()
            .enumerate()
            .find(|(_, n)| n.value.iter().any(|x| !x.is_finite()))
            .map(|(i, n)| (i, n.op.name()))
    }

    // ---- linear algebra -------------------------------------------------

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, k) = self.shape(a);
        let (k2, n) = self.shape(b);
        if k != k2 {
            return Err(Error::dims("matmul", &[m, k], &[k2, n]));
        }
        let av = self.value(a);
        let bv = self.value(b);
        let mut out = vec![T::zero(); m * n];
        for i in 0..m {
            let orow = &mut out[i * n..(i + 1) * n];
            for p in 0..k {
                let x = av[i * k + p];
                if x == T::zero() {
                    continue;
                }
                let brow = &bv[p * n..(p + 1) * n];
                for (o, &y) in orow.iter_mut().zip(brow) {
                    *o += x * y;
                }
            }
        }
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(m, n, out, Op::MatMul(a, b), rg))
    }

    pub fn transpose(&mut self, x: Var) -> Var {
        let (r, c) = self.shape(x);
        let out = transpose_vals(self.value(x), r, c);
        let rg = self.rg(x);
        self.push(c, r, out, Op::Transpose(x), rg)
    }

    // ---- element-wise ---------------------------------------------------

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<(usize, usize)> {
        let sa = self.shape(a);
        let sb = self.shape(b);
        if sa != sb {
            return Err(Error::dims(op, &[sa.0, sa.1], &[sb.0, sb.1]));
        }
        Ok(sa)
    }

    fn zip_with(&mut self, op: Op<T>, a: Var, b: Var, f: impl Fn(T, T) -> T) -> Result<Var> {
        let (r, c) = self.same_shape(op.name(), a, b)?;
        let out = self.value(a).iter().zip(self.value(b)).map(|(&x, &y)| f(x, y)).collect();
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(r, c, out, op, rg))
    }

    fn map(&mut self, x: Var, op: Op<T>, f: impl Fn(T) -> T) -> Var {
        let (r, c) = self.shape(x);
        let out = self.value(x).iter().map(|&v| f(v)).collect();
        let rg = self.rg(x);
        self.push(r, c, out, op, rg)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_with(Op::Add(a, b), a, b, |x, y| x + y)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_with(Op::Sub(a, b), a, b, |x, y| x - y)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_with(Op::Mul(a, b), a, b, |x, y| x * y)
    }

    /// `x[m×n] + b[1×n]`, adding `b` to every row.
    pub fn add_row(&mut self, x: Var, b: Var) -> Result<Var> {
        let (m, n) = self.shape(x);
        let sb = self.shape(b);
        if sb != (1, n) {
            return Err(Error::dims("add_row", &[m, n], &[sb.0, sb.1]));
        }
        let bv = self.value(b);
        let out = self
            .value(x)
            .chunks(n)
            .flat_map(|row| row.iter().zip(bv).map(|(&v, &w)| v + w))
            .collect();
        let rg = self.rg(x) || self.rg(b);
        Ok(self.push(m, n, out, Op::AddRow(x, b), rg))
    }

    pub fn scale(&mut self, x: Var, s: T) -> Var {
        self.map(x, Op::Scale(x, s), |v| v * s)
    }

    pub fn add_scalar(&mut self, x: Var, s: T) -> Var {
        self.map(x, Op::AddScalar(x), |v| v + s)
    }

    /// Element-wise product with a constant of the same shape.
    pub fn mul_const(&mut self, x: Var, c: Vec<T>) -> Result<Var> {
        let (r, cols) = self.shape(x);
        if c.len() != r * cols {
            return Err(Error::dims("mul_const", &[r, cols], &[c.len()]));
        }
        let out = self.value(x).iter().zip(&c).map(|(&v, &w)| v * w).collect();
        let rg = self.rg(x);
        Ok(self.push(r, cols, out, Op::MulConst(x, Arc::new(c)), rg))
    }

    /// Zeroes every row whose mask entry is false.
    pub fn mask_rows(&mut self, x: Var, mask: &[bool]) -> Result<Var> {
        let (r, c) = self.shape(x);
        if mask.len() != r {
            return Err(Error::dims("mask_rows", &[r, c], &[mask.len()]));
        }
        if mask.iter().all(|&m| m) {
            return Ok(x);
        }
        let keep = mask
            .iter()
            .flat_map(|&m| std::iter::repeat_n(if m { T::one() } else { T::zero() }, c))
            .collect();
        self.mul_const(x, keep)
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        self.map(x, Op::Tanh(x), |v| v.tanh())
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        self.map(x, Op::Sigmoid(x), sigmoid)
    }

    pub fn relu(&mut self, x: Var) -> Var {
        self.map(x, Op::Relu(x), |v| if v > T::zero() { v } else { T::zero() })
    }

    /// Inverted dropout. Identity (the same node) at inference or rate 0.
    pub fn dropout(&mut self, x: Var, rate: f64, training: bool, rng: &mut SeededRng) -> Result<Var> {
        if !(0.0..1.0).contains(&rate) {
            return Err(Error::Config(format!("dropout rate must be in [0, 1), got {rate}")));
        }
        if !training || rate == 0.0 {
            return Ok(x);
        }
        let keep = T::lit(1.0 / (1.0 - rate));
        let n = self.value(x).len();
        let mask = (0..n).map(|_| if rng.uniform() < rate { T::zero() } else { keep }).collect();
        self.mul_const(x, mask)
    }

    // ---- layout ---------------------------------------------------------

    /// Column-wise concatenation in argument order.
    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let Some(&first) = parts.first() else {
            return Err(Error::Contract("concat_cols of nothing".into()));
        };
        if parts.len() == 1 {
            return Ok(first);
        }
        let m = self.shape(first).0;
        let mut total = 0;
        for &p in parts {
            let (r, c) = self.shape(p);
            if r != m {
                return Err(Error::dims("concat_cols", &[m], &[r, c]));
            }
            total += c;
        }
        let mut out = Vec::with_capacity(m * total);
        for i in 0..m {
            for &p in parts {
                let c = self.shape(p).1;
                out.extend_from_slice(&self.value(p)[i * c..(i + 1) * c]);
            }
        }
        let rg = parts.iter().any(|&p| self.rg(p));
        Ok(self.push(m, total, out, Op::ConcatCols(parts.to_vec()), rg))
    }

    /// Row-wise stacking in argument order.
    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        let Some(&first) = parts.first() else {
            return Err(Error::Contract("concat_rows of nothing".into()));
        };
        if parts.len() == 1 {
            return Ok(first);
        }
        let n = self.shape(first).1;
        let mut rows = 0;
        for &p in parts {
            let (r, c) = self.shape(p);
            if c != n {
                return Err(Error::dims("concat_rows", &[n], &[r, c]));
            }
            rows += r;
        }
        let mut out = Vec::with_capacity(rows * n);
        for &p in parts {
            out.extend_from_slice(self.value(p));
        }
        let rg = parts.iter().any(|&p| self.rg(p));
        Ok(self.push(rows, n, out, Op::ConcatRows(parts.to_vec()), rg))
    }

    pub fn slice_cols(&mut self, x: Var, start: usize, width: usize) -> Result<Var> {
        let (r, c) = self.shape(x);
        if width == 0 || start + width > c {
            return Err(Error::dims("slice_cols", &[r, c], &[start, width]));
        }
        let out = self
            .value(x)
            .chunks(c)
            .flat_map(|row| row[start..start + width].iter().copied())
            .collect();
        let rg = self.rg(x);
        Ok(self.push(r, width, out, Op::SliceCols(x, start), rg))
    }

    pub fn slice_rows(&mut self, x: Var, start: usize, count: usize) -> Result<Var> {
        let (r, c) = self.shape(x);
        if count == 0 || start + count > r {
            return Err(Error::dims("slice_rows", &[r, c], &[start, count]));
        }
        let out = self.value(x)[start * c..(start + count) * c].to_vec();
        let rg = self.rg(x);
        Ok(self.push(count, c, out, Op::SliceRows(x, start), rg))
    }

    /// Row `i` of the output is `table[idx[i]]`, or zeros for `None`.
    pub fn gather_rows(&mut self, table: Var, idx: &[Option<usize>]) -> Result<Var> {
        let (v, d) = self.shape(table);
        if idx.is_empty() {
            return Err(Error::Contract("gather_rows with no indices".into()));
        }
        if let Some(&bad) = idx.iter().flatten().find(|&&i| i >= v) {
            return Err(Error::Index {
                what: "gather_rows table",
                index: bad,
                size: v,
            });
        }
        let tv = self.value(table);
        let mut out = Vec::with_capacity(idx.len() * d);
        for i in idx {
            match *i {
                Some(i) => out.extend_from_slice(&tv[i * d..(i + 1) * d]),
                None => out.extend(std::iter::repeat_n(T::zero(), d)),
            }
        }
        let rg = self.rg(table);
        Ok(self.push(idx.len(), d, out, Op::GatherRows(table, idx.to_vec()), rg))
    }

    /// Stacks `n` copies of a single-row tensor.
    pub fn repeat_rows(&mut self, x: Var, n: usize) -> Result<Var> {
        let (r, c) = self.shape(x);
        if r != 1 || n == 0 {
            return Err(Error::dims("repeat_rows", &[r, c], &[n]));
        }
        let out = self.value(x).repeat(n);
        let rg = self.rg(x);
        Ok(self.push(n, c, out, Op::RepeatRows(x), rg))
    }

    /// Reinterprets the row-major buffer with a new shape.
    pub fn reshape(&mut self, x: Var, rows: usize, cols: usize) -> Result<Var> {
        let (r, c) = self.shape(x);
        if r * c != rows * cols {
            return Err(Error::dims("reshape", &[r, c], &[rows, cols]));
        }
        let out = self.value(x).to_vec();
        let rg = self.rg(x);
        Ok(self.push(rows, cols, out, Op::Reshape(x), rg))
    }

    // ---- reductions and attention primitives ------------------------------

    /// Softmax of each row over its unmasked entries. `mask` is either the
    /// full `m·n` keep-mask or a length-`n` column mask shared by every row.
    /// Masked entries are skipped outright and come out exactly 0.
    pub fn masked_row_softmax(&mut self, x: Var, mask: &[bool]) -> Result<Var> {
        let (m, n) = self.shape(x);
        let mask = &expand_mask("masked_row_softmax", m, n, mask)?[..];
        let xv = self.value(x);
        let mut out = vec![T::zero(); m * n];
        for i in 0..m {
            let row = &xv[i * n..(i + 1) * n];
            let keep = &mask[i * n..(i + 1) * n];
            let max = row
                .iter()
                .zip(keep)
                .filter(|(_, &k)| k)
                .map(|(&v, _)| v)
                .fold(None, |acc: Option<T>, v| Some(acc.map_or(v, |a| a.max(v))))
                .ok_or(Error::DegenerateRow {
                    op: "masked_row_softmax",
                    row: i,
                })?;
            let orow = &mut out[i * n..(i + 1) * n];
            let mut total = T::zero();
            for j in 0..n {
                if keep[j] {
                    let e = (row[j] - max).exp();
                    orow[j] = e;
                    total += e;
                }
            }
            for o in orow.iter_mut() {
                *o /= total;
            }
        }
        let rg = self.rg(x);
        Ok(self.push(m, n, out, Op::MaskedRowSoftmax(x, Arc::new(mask.to_vec())), rg))
    }

    /// Per-row maximum over unmasked entries, as an `m × 1` column. The mask
    /// follows the same rules as [`Graph::masked_row_softmax`].
    pub fn masked_row_max(&mut self, x: Var, mask: &[bool]) -> Result<Var> {
        let (m, n) = self.shape(x);
        let mask = &expand_mask("masked_row_max", m, n, mask)?[..];
        let xv = self.value(x);
        let mut out = Vec::with_capacity(m);
        let mut arg = Vec::with_capacity(m);
        for i in 0..m {
            let mut best: Option<(usize, T)> = None;
            for j in 0..n {
                let v = xv[i * n + j];
                if mask[i * n + j] && best.is_none_or(|(_, b)| v > b) {
                    best = Some((j, v));
                }
            }
            let (j, v) = best.ok_or(Error::DegenerateRow {
                op: "masked_row_max",
                row: i,
            })?;
            out.push(v);
            arg.push(i * n + j);
        }
        let rg = self.rg(x);
        Ok(self.push(m, 1, out, Op::MaskedRowMax(x, arg), rg))
    }

    /// Column-wise max over consecutive groups of `segment` rows:
    /// `[s·k × c] -> [s × c]`.
    pub fn segment_max_rows(&mut self, x: Var, segment: usize) -> Result<Var> {
        let (r, c) = self.shape(x);
        if segment == 0 || r % segment != 0 {
            return Err(Error::dims("segment_max_rows", &[r, c], &[segment]));
        }
        let xv = self.value(x);
        let s = r / segment;
        let mut out = Vec::with_capacity(s * c);
        let mut arg = Vec::with_capacity(s * c);
        for g in 0..s {
            for j in 0..c {
                let mut bi = g * segment;
                for i in g * segment + 1..(g + 1) * segment {
                    if xv[i * c + j] > xv[bi * c + j] {
                        bi = i;
                    }
                }
                out.push(xv[bi * c + j]);
                arg.push(bi * c + j);
            }
        }
        let rg = self.rg(x);
        Ok(self.push(s, c, out, Op::SegmentMaxRows(x, arg), rg))
    }

    /// Sum of all entries as a `1 × 1` scalar.
    pub fn sum(&mut self, x: Var) -> Var {
        let total = self.value(x).iter().copied().sum();
        let rg = self.rg(x);
        self.push(1, 1, vec![total], Op::SumAll(x), rg)
    }

    /// `-ln(probs[target] + ε)` for a single-row distribution. When `probs` is
    /// the output of [`Graph::masked_row_softmax`], backward applies the fused
    /// softmax/cross-entropy rule directly to the softmax input.
    pub fn cross_entropy(&mut self, probs: Var, target: usize) -> Result<Var> {
        let (r, n) = self.shape(probs);
        if r != 1 {
            return Err(Error::dims("cross_entropy", &[r, n], &[1, n]));
        }
        if target >= n {
            return Err(Error::Index {
                what: "cross_entropy target",
                index: target,
                size: n,
            });
        }
        let pv = self.value(probs);
        let total: T = pv.iter().copied().sum();
        if (total - T::one()).abs() > T::lit(1e-6) {
            return Err(Error::Contract(format!(
                "cross_entropy expects a distribution, entries sum to {total}"
            )));
        }
        if let Op::MaskedRowSoftmax(_, mask) = &self.node(probs).op {
            if !mask[target] {
                return Err(Error::Contract(format!("cross_entropy target {target} is a masked position")));
            }
        }
        let loss = -(pv[target] + T::lit(CE_EPSILON)).ln();
        let rg = self.rg(probs);
        Ok(self.push(1, 1, vec![loss], Op::CrossEntropy(probs, target), rg))
    }

    // ---- backward -------------------------------------------------------

    /// Reverse sweep from a scalar loss. Each recorded entry is visited once;
    /// a node feeding several consumers receives the sum of their gradients.
    pub fn backward(&self, loss: Var) -> Result<Gradients<T>> {
        if self.shape(loss) != (1, 1) {
            let (r, c) = self.shape(loss);
            return Err(Error::Contract(format!("backward needs a scalar loss, got shape [{r}, {c}]")));
        }
        let mut grads: Vec<Option<Vec<T>>> = Vec::with_capacity(loss.0 + 1);
        grads.resize_with(loss.0 + 1, || None);
        if !self.rg(loss) {
            return Ok(Gradients { grads });
        }
        grads[loss.0] = Some(vec![T::one()]);
        for id in (0..=loss.0).rev() {
            let Some(g) = grads[id].take() else { continue };
            self.backprop(Var(id), &g, &mut grads);
            grads[id] = Some(g);
        }
        Ok(Gradients { grads })
    }

    fn slot<'a>(&self, grads: &'a mut [Option<Vec<T>>], v: Var) -> Option<&'a mut Vec<T>> {
        let node = self.node(v);
        if !node.requires_grad {
            return None;
        }
        Some(grads[v.0].get_or_insert_with(|| vec![T::zero(); node.rows * node.cols]))
    }

    fn backprop(&self, out: Var, g: &[T], grads: &mut [Option<Vec<T>>]) {
        let node = self.node(out);
        let (rows, cols) = (node.rows, node.cols);
        let y = &node.value;
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (m, k) = self.shape(*a);
                let n = cols;
                let av = self.value(*a);
                let bv = self.value(*b);
                if let Some(ga) = self.slot(grads, *a) {
                    // dA = dC · Bᵀ
                    for i in 0..m {
                        let grow = &g[i * n..(i + 1) * n];
                        for p in 0..k {
                            let brow = &bv[p * n..(p + 1) * n];
                            ga[i * k + p] += grow.iter().zip(brow).map(|(&x, &y)| x * y).sum::<T>();
                        }
                    }
                }
                if let Some(gb) = self.slot(grads, *b) {
                    // dB = Aᵀ · dC
                    for i in 0..m {
                        let grow = &g[i * n..(i + 1) * n];
                        for p in 0..k {
                            let x = av[i * k + p];
                            if x == T::zero() {
                                continue;
                            }
                            for (o, &d) in gb[p * n..(p + 1) * n].iter_mut().zip(grow) {
                                *o += x * d;
                            }
                        }
                    }
                }
            }
            Op::Transpose(x) => {
                if let Some(gx) = self.slot(grads, *x) {
                    let t = transpose_vals(g, rows, cols);
                    add_into(gx, &t);
                }
            }
            Op::Add(a, b) => {
                if let Some(ga) = self.slot(grads, *a) {
                    add_into(ga, g);
                }
                if let Some(gb) = self.slot(grads, *b) {
                    add_into(gb, g);
                }
            }
            Op::Sub(a, b) => {
                if let Some(ga) = self.slot(grads, *a) {
                    add_into(ga, g);
                }
                if let Some(gb) = self.slot(grads, *b) {
                    gb.iter_mut().zip(g).for_each(|(o, &d)| *o -= d);
                }
            }
            Op::Mul(a, b) => {
                let av = self.value(*a);
                let bv = self.value(*b);
                if let Some(ga) = self.slot(grads, *a) {
                    for ((o, &d), &w) in ga.iter_mut().zip(g).zip(bv) {
                        *o += d * w;
                    }
                }
                if let Some(gb) = self.slot(grads, *b) {
                    for ((o, &d), &w) in gb.iter_mut().zip(g).zip(av) {
                        *o += d * w;
                    }
                }
            }
            Op::AddRow(x, b) => {
                if let Some(gx) = self.slot(grads, *x) {
                    add_into(gx, g);
                }
                if let Some(gb) = self.slot(grads, *b) {
                    for row in g.chunks(cols) {
                        add_into(gb, row);
                    }
                }
            }
            Op::Scale(x, s) => {
                if let Some(gx) = self.slot(grads, *x) {
                    gx.iter_mut().zip(g).for_each(|(o, &d)| *o += d * *s);
                }
            }
            Op::AddScalar(x) => {
                if let Some(gx) = self.slot(grads, *x) {
                    add_into(gx, g);
                }
            }
            Op::MulConst(x, c) => {
                if let Some(gx) = self.slot(grads, *x) {
                    for ((o, &d), &w) in gx.iter_mut().zip(g).zip(c.iter()) {
                        *o += d * w;
                    }
                }
            }
            Op::Tanh(x) => {
                if let Some(gx) = self.slot(grads, *x) {
                    for ((o, &d), &t) in gx.iter_mut().zip(g).zip(y.iter()) {
                        *o += d * (T::one() - t * t);
                    }
                }
            }
            Op::Sigmoid(x) => {
                if let Some(gx) = self.slot(grads, *x) {
                    for ((o, &d), &s) in gx.iter_mut().zip(g).zip(y.iter()) {
                        *o += d * s * (T::one() - s);
                    }
                }
            }
            Op::Relu(x) => {
                if let Some(gx) = self.slot(grads, *x) {
                    for ((o, &d), &v) in gx.iter_mut().zip(g).zip(y.iter()) {
                        if v > T::zero() {
                            *o += d;
                        }
                    }
                }
            }
            Op::ConcatCols(parts) => {
                let mut offset = 0;
                for &p in parts {
                    let c = self.shape(p).1;
                    if let Some(gp) = self.slot(grads, p) {
                        for i in 0..rows {
                            add_into(&mut gp[i * c..(i + 1) * c], &g[i * cols + offset..i * cols + offset + c]);
                        }
                    }
                    offset += c;
                }
            }
            Op::ConcatRows(parts) => {
                let mut offset = 0;
                for &p in parts {
                    let len = self.value(p).len();
                    if let Some(gp) = self.slot(grads, p) {
                        add_into(gp, &g[offset..offset + len]);
                    }
                    offset += len;
                }
            }
            Op::SliceCols(x, start) => {
                let c = self.shape(*x).1;
                if let Some(gx) = self.slot(grads, *x) {
                    for i in 0..rows {
                        add_into(&mut gx[i * c + start..i * c + start + cols], &g[i * cols..(i + 1) * cols]);
                    }
                }
            }
            Op::SliceRows(x, start) => {
                if let Some(gx) = self.slot(grads, *x) {
                    add_into(&mut gx[start * cols..(start + rows) * cols], g);
                }
            }
            Op::GatherRows(table, idx) => {
                if let Some(gt) = self.slot(grads, *table) {
                    for (r, i) in idx.iter().enumerate() {
                        if let Some(i) = *i {
                            add_into(&mut gt[i * cols..(i + 1) * cols], &g[r * cols..(r + 1) * cols]);
                        }
                    }
                }
            }
            Op::RepeatRows(x) => {
                if let Some(gx) = self.slot(grads, *x) {
                    for row in g.chunks(cols) {
                        add_into(gx, row);
                    }
                }
            }
            Op::Reshape(x) => {
                if let Some(gx) = self.slot(grads, *x) {
                    add_into(gx, g);
                }
            }
            Op::MaskedRowSoftmax(x, _) => {
                if let Some(gx) = self.slot(grads, *x) {
                    for i in 0..rows {
                        let yr = &y[i * cols..(i + 1) * cols];
                        let gr = &g[i * cols..(i + 1) * cols];
                        let dot: T = yr.iter().zip(gr).map(|(&a, &b)| a * b).sum();
                        for j in 0..cols {
                            gx[i * cols + j] += yr[j] * (gr[j] - dot);
                        }
                    }
                }
            }
            Op::MaskedRowMax(x, arg) | Op::SegmentMaxRows(x, arg) => {
                if let Some(gx) = self.slot(grads, *x) {
                    for (&pos, &d) in arg.iter().zip(g) {
                        gx[pos] += d;
                    }
                }
            }
            Op::SumAll(x) => {
                if let Some(gx) = self.slot(grads, *x) {
                    gx.iter_mut().for_each(|o| *o += g[0]);
                }
            }
            Op::CrossEntropy(p, target) => {
                let pnode = self.node(*p);
                if let Op::MaskedRowSoftmax(logits, _) = &pnode.op {
                    // fused rule: dL/dlogits = probs − onehot(target)
                    if let Some(gl) = self.slot(grads, *logits) {
                        for (j, (o, &q)) in gl.iter_mut().zip(pnode.value.iter()).enumerate() {
                            let hot = if j == *target { T::one() } else { T::zero() };
                            *o += g[0] * (q - hot);
                        }
                    }
                } else if let Some(gp) = self.slot(grads, *p) {
                    let q = pnode.value[*target];
                    gp[*target] -= g[0] / (q + T::lit(CE_EPSILON));
                }
            }
        }
    }
}

fn sigmoid<T: Real>(v: T) -> T {
    if v >= T::zero() {
        T::one() / (T::one() + (-v).exp())
    } else {
        let e = v.exp();
        e / (T::one() + e)
    }
}

fn transpose_vals<T: Copy>(v: &[T], r: usize, c: usize) -> Vec<T> {
    let mut out = Vec::with_capacity(r * c);
    for j in 0..c {
        for i in 0..r {
            out.push(v[i * c + j]);
        }
    }
    out
}

fn add_into<T: Real>(acc: &mut [T], delta: &[T]) {
    for (a, &d) in acc.iter_mut().zip(delta) {
        *a += d;
    }
}

fn expand_mask(op: &'static str, m: usize, n: usize, mask: &[bool]) -> Result<Vec<bool>> {
    if mask.len() == m * n {
        Ok(mask.to_vec())
    } else if mask.len() == n {
        Ok(mask.repeat(m))
    } else {
        Err(Error::dims(op, &[m, n], &[mask.len()]))
    }
}
