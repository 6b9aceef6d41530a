//! Recorded computation with reverse-mode differentiation.
//!
//! A [`Tape`] is a Wengert list: every primitive appends a node holding its
//! forward value and the operation that produced it. Node order is a valid
//! topological order, so [`Tape::backward`] is a single reverse sweep.

use std::sync::Arc;

use rand::Rng;

use super::tensor::{gemm_nn, gemm_nt, gemm_tn, Tensor};
use super::{ParameterStore, TensorError};

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Assignment of rows to groups, used by the per-neighbourhood reductions.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Segments {
    of: Vec<usize>,
    count: usize,
}

impl Segments {
    pub fn new(of: Vec<usize>, count: usize) -> Result<Self, TensorError> {
        if let Some(&bad) = of.iter().find(|&&s| s >= count) {
            return Err(TensorError::Index {
                op: "segments",
                index: bad,
                bound: count,
            });
        }
        Ok(Self { of, count })
    }

    pub fn of(&self) -> &[usize] {
        &self.of
    }

    pub fn count(&self) -> usize {
        self.count
    }

    pub fn len(&self) -> usize {
        self.of.len()
    }

    pub fn is_empty(&self) -> bool {
        self.of.is_empty()
    }

    /// Number of members per segment.
    pub fn sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0; self.count];
        for &s in &self.of {
            sizes[s] += 1;
        }
        sizes
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    MatMulBT(Var, Var),
    Transpose(Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddRow(Var, Var),
    MulCol(Var, Var),
    Scale(Var, f64),
    Relu(Var),
    SoftmaxRows(Var),
    LnClamped(Var, f64),
    ConcatCols(Vec<Var>),
    SliceCols(Var, usize),
    GatherRows(Var, Arc<[usize]>),
    OverwriteRows(Var, Var, Arc<[usize]>),
    RowNorm(Var),
    RowCosine(Var, Var),
    RowDot(Var, Var),
    RowSum(Var),
    SumAll(Var),
    SumSquares(Var),
    ConstMul(Var, Arc<[f64]>),
    SegmentNormalize(Var, Arc<Segments>, Vec<bool>),
    SegmentWeightedSum(Var, Var, Arc<Segments>),
    PickCols(Var, Arc<[usize]>),
    WeightedSum(Var, Arc<[f64]>),
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
    param: Option<String>,
}

/// A recorded computation. Confined to one thread for its lifetime.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
    leaf_grads: Vec<Option<Vec<f64>>>,
}

fn shape2(r: usize, c: usize) -> Vec<usize> {
    vec![r, c]
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
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

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Accumulated gradient of a leaf after one or more backward passes.
    pub fn grad(&self, v: Var) -> Option<&[f64]> {
        self.leaf_grads.get(v.0).and_then(|g| g.as_deref())
    }

    pub fn zero_grads(&mut self) {
        self.leaf_grads.iter_mut().for_each(|g| *g = None);
    }

    /// Leaves that were bound to named parameters, with their variables.
    pub fn params(&self) -> impl Iterator<Item = (&str, Var)> {
        self.nodes
            .iter()
            .enumerate()
            .filter_map(|(i, n)| n.param.as_deref().map(|p| (p, Var(i))))
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
            param: None,
        });
        self.leaf_grads.push(None);
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].requires_grad)
    }

    fn dims(&self, v: Var) -> (usize, usize) {
        self.nodes[v.0].value.dims()
    }

    fn vals(&self, v: Var) -> &[f64] {
        self.nodes[v.0].value.values()
    }

    fn same_dims(&self, op: &'static str, a: Var, b: Var) -> Result<(usize, usize), TensorError> {
        let (da, db) = (self.dims(a), self.dims(b));
        if da != db {
            return Err(TensorError::Shape {
                op,
                left: vec![da.0, da.1],
                right: vec![db.0, db.1],
            });
        }
        Ok(da)
    }

    /// Records a leaf. Its `requires_grad` flag decides whether gradients
    /// are accumulated for it.
    pub fn leaf(&mut self, tensor: Tensor) -> Var {
        let rg = tensor.requires_grad();
        let (r, c) = tensor.dims();
        let shape = if tensor.shape().len() >= 2 { tensor.shape().to_vec() } else { shape2(r, c) };
        let t = Tensor::new(shape, tensor.into_values()).expect("shape preserved");
        self.push(t, Op::Leaf, rg)
    }

    pub fn constant(&mut self, tensor: Tensor) -> Var {
        self.leaf(tensor.with_requires_grad(false))
    }

    /// Binds a named parameter of `store` as a differentiable leaf.
    pub fn param(&mut self, store: &ParameterStore, name: &str) -> Result<Var, TensorError> {
        let t = store
            .get(name)
            .ok_or_else(|| TensorError::UnknownParameter(name.to_string()))?;
        let v = self.leaf(t.clone().with_requires_grad(true));
        self.nodes[v.0].param = Some(name.to_string());
        Ok(v)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        let ((m, k), (k2, n)) = (self.dims(a), self.dims(b));
        if k != k2 {
            return Err(TensorError::Shape {
                op: "matmul",
                left: vec![m, k],
                right: vec![k2, n],
            });
        }
        let mut out = vec![0.0; m * n];
        gemm_nn(self.vals(a), self.vals(b), &mut out, m, k, n);
        let rg = self.rg(&[a, b]);
        Ok(self.push(Tensor::new(shape2(m, n), out)?, Op::MatMul(a, b), rg))
    }

    /// `a * b^T`; the natural form for weights stored as `out x in`.
    pub fn matmul_bt(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        let ((m, k), (n, k2)) = (self.dims(a), self.dims(b));
        if k != k2 {
            return Err(TensorError::Shape {
                op: "matmul_bt",
                left: vec![m, k],
                right: vec![n, k2],
            });
        }
        let mut out = vec![0.0; m * n];
        gemm_nt(self.vals(a), self.vals(b), &mut out, m, k, n);
        let rg = self.rg(&[a, b]);
        Ok(self.push(Tensor::new(shape2(m, n), out)?, Op::MatMulBT(a, b), rg))
    }

    pub fn transpose(&mut self, a: Var) -> Var {
        let (m, n) = self.dims(a);
        let src = self.vals(a);
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            for j in 0..n {
                out[j * m + i] = src[i * n + j];
            }
        }
        let rg = self.rg(&[a]);
        self.push(Tensor::new(shape2(n, m), out).unwrap(), Op::Transpose(a), rg)
    }

    fn zip_with(
        &mut self,
        op_name: &'static str,
        a: Var,
        b: Var,
        f: impl Fn(f64, f64) -> f64,
        op: Op,
    ) -> Result<Var, TensorError> {
        let (m, n) = self.same_dims(op_name, a, b)?;
        let out: Vec<f64> = self.vals(a).iter().zip(self.vals(b)).map(|(&x, &y)| f(x, y)).collect();
        let rg = self.rg(&[a, b]);
        Ok(self.push(Tensor::new(shape2(m, n), out)?, op, rg))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        self.zip_with("add", a, b, |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        self.zip_with("sub", a, b, |x, y| x - y, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        self.zip_with("mul", a, b, |x, y| x * y, Op::Mul(a, b))
    }

    /// Adds the `1 x n` row `row` to every row of `a`.
    pub fn add_row(&mut self, a: Var, row: Var) -> Result<Var, TensorError> {
        let ((m, n), (r, c)) = (self.dims(a), self.dims(row));
        if r != 1 || c != n {
            return Err(TensorError::Shape {
                op: "add_row",
                left: vec![m, n],
                right: vec![r, c],
            });
        }
        let rv = self.vals(row);
        let out: Vec<f64> = self
            .vals(a)
            .chunks(n.max(1))
            .flat_map(|chunk| chunk.iter().zip(rv).map(|(x, y)| x + y))
            .collect();
        let rg = self.rg(&[a, row]);
        Ok(self.push(Tensor::new(shape2(m, n), out)?, Op::AddRow(a, row), rg))
    }

    /// Scales row `i` of `a` by `col[i]`.
    pub fn mul_col(&mut self, a: Var, col: Var) -> Result<Var, TensorError> {
        let ((m, n), (r, c)) = (self.dims(a), self.dims(col));
        if r != m || c != 1 {
            return Err(TensorError::Shape {
                op: "mul_col",
                left: vec![m, n],
                right: vec![r, c],
            });
        }
        let cv = self.vals(col);
        let mut out = self.vals(a).to_vec();
        for i in 0..m {
            out[i * n..(i + 1) * n].iter_mut().for_each(|x| *x *= cv[i]);
        }
        let rg = self.rg(&[a, col]);
        Ok(self.push(Tensor::new(shape2(m, n), out)?, Op::MulCol(a, col), rg))
    }

    pub fn scale(&mut self, a: Var, factor: f64) -> Var {
        let (m, n) = self.dims(a);
        let out = self.vals(a).iter().map(|x| x * factor).collect();
        let rg = self.rg(&[a]);
        self.push(Tensor::new(shape2(m, n), out).unwrap(), Op::Scale(a, factor), rg)
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let (m, n) = self.dims(a);
        let out = self.vals(a).iter().map(|&x| x.max(0.0)).collect();
        let rg = self.rg(&[a]);
        self.push(Tensor::new(shape2(m, n), out).unwrap(), Op::Relu(a), rg)
    }

    /// Softmax over the last axis (each row independently).
    pub fn softmax_rows(&mut self, a: Var) -> Var {
        let (m, n) = self.dims(a);
        let mut out = self.vals(a).to_vec();
        for row in out.chunks_mut(n.max(1)) {
            softmax_in_place(row);
        }
        let rg = self.rg(&[a]);
        self.push(Tensor::new(shape2(m, n), out).unwrap(), Op::SoftmaxRows(a), rg)
    }

    /// Natural log of `max(a, floor)`.
    pub fn ln_clamped(&mut self, a: Var, floor: f64) -> Var {
        let (m, n) = self.dims(a);
        let out = self.vals(a).iter().map(|&x| x.max(floor).ln()).collect();
        let rg = self.rg(&[a]);
        self.push(Tensor::new(shape2(m, n), out).unwrap(), Op::LnClamped(a, floor), rg)
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var, TensorError> {
        let m = parts.first().map(|&p| self.dims(p).0).ok_or(TensorError::Empty("concat_cols"))?;
        let mut total = 0;
        for &p in parts {
            let (r, c) = self.dims(p);
            if r != m {
                return Err(TensorError::Shape {
                    op: "concat_cols",
                    left: vec![m, total],
                    right: vec![r, c],
                });
            }
            total += c;
        }
        let mut out = Vec::with_capacity(m * total);
        for i in 0..m {
            for &p in parts {
                let c = self.dims(p).1;
                out.extend_from_slice(&self.vals(p)[i * c..(i + 1) * c]);
            }
        }
        let rg = self.rg(parts);
        Ok(self.push(Tensor::new(shape2(m, total), out)?, Op::ConcatCols(parts.to_vec()), rg))
    }

    /// Columns `start..end` of `a`.
    pub fn slice_cols(&mut self, a: Var, start: usize, end: usize) -> Result<Var, TensorError> {
        let (m, n) = self.dims(a);
        if start > end || end > n {
            return Err(TensorError::Index {
                op: "slice_cols",
                index: end,
                bound: n,
            });
        }
        let w = end - start;
        let src = self.vals(a);
        let mut out = Vec::with_capacity(m * w);
        for i in 0..m {
            out.extend_from_slice(&src[i * n + start..i * n + end]);
        }
        let rg = self.rg(&[a]);
        Ok(self.push(Tensor::new(shape2(m, w), out)?, Op::SliceCols(a, start), rg))
    }

    pub fn gather_rows(&mut self, a: Var, index: Arc<[usize]>) -> Result<Var, TensorError> {
        let (m, n) = self.dims(a);
        if let Some(&bad) = index.iter().find(|&&i| i >= m) {
            return Err(TensorError::Index {
                op: "gather_rows",
                index: bad,
                bound: m,
            });
        }
        let src = self.vals(a);
        let mut out = Vec::with_capacity(index.len() * n);
        for &i in index.iter() {
            out.extend_from_slice(&src[i * n..(i + 1) * n]);
        }
        let rg = self.rg(&[a]);
        Ok(self.push(Tensor::new(shape2(index.len(), n), out)?, Op::GatherRows(a, index), rg))
    }

    /// Copy of `base` whose rows `index[i]` are replaced by row `i` of `src`.
    /// Indices must be distinct.
    pub fn overwrite_rows(&mut self, base: Var, src: Var, index: Arc<[usize]>) -> Result<Var, TensorError> {
        let ((m, n), (r, c)) = (self.dims(base), self.dims(src));
        if c != n || r != index.len() {
            return Err(TensorError::Shape {
                op: "overwrite_rows",
                left: vec![m, n],
                right: vec![r, c],
            });
        }
        let mut seen = vec![false; m];
        for &i in index.iter() {
            if i >= m || seen[i] {
                return Err(TensorError::Index {
                    op: "overwrite_rows",
                    index: i,
                    bound: m,
                });
            }
            seen[i] = true;
        }
        let mut out = self.vals(base).to_vec();
        let sv = self.vals(src);
        for (k, &i) in index.iter().enumerate() {
            out[i * n..(i + 1) * n].copy_from_slice(&sv[k * n..(k + 1) * n]);
        }
        let rg = self.rg(&[base, src]);
        Ok(self.push(Tensor::new(shape2(m, n), out)?, Op::OverwriteRows(base, src, index), rg))
    }

    /// Euclidean norm of every row, as an `m x 1` column.
    pub fn row_norm(&mut self, a: Var) -> Var {
        let (m, n) = self.dims(a);
        let out = self
            .vals(a)
            .chunks(n.max(1))
            .take(m)
            .map(|r| r.iter().map(|x| x * x).sum::<f64>().sqrt())
            .collect();
        let rg = self.rg(&[a]);
        self.push(Tensor::new(shape2(m, 1), out).unwrap(), Op::RowNorm(a), rg)
    }

    /// Row-wise cosine similarity. A zero row yields similarity 0.
    pub fn row_cosine(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        let (m, n) = self.same_dims("row_cosine", a, b)?;
        let (av, bv) = (self.vals(a), self.vals(b));
        let out = (0..m)
            .map(|i| cosine(&av[i * n..(i + 1) * n], &bv[i * n..(i + 1) * n]))
            .collect();
        let rg = self.rg(&[a, b]);
        Ok(self.push(Tensor::new(shape2(m, 1), out)?, Op::RowCosine(a, b), rg))
    }

    pub fn row_dot(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        let (m, n) = self.same_dims("row_dot", a, b)?;
        let (av, bv) = (self.vals(a), self.vals(b));
        let out = (0..m)
            .map(|i| dot(&av[i * n..(i + 1) * n], &bv[i * n..(i + 1) * n]))
            .collect();
        let rg = self.rg(&[a, b]);
        Ok(self.push(Tensor::new(shape2(m, 1), out)?, Op::RowDot(a, b), rg))
    }

    pub fn row_sum(&mut self, a: Var) -> Var {
        let (m, n) = self.dims(a);
        let out = self.vals(a).chunks(n.max(1)).take(m).map(|r| r.iter().sum()).collect();
        let rg = self.rg(&[a]);
        self.push(Tensor::new(shape2(m, 1), out).unwrap(), Op::RowSum(a), rg)
    }

    pub fn sum_all(&mut self, a: Var) -> Var {
        let s = self.vals(a).iter().sum();
        let rg = self.rg(&[a]);
        self.push(Tensor::scalar(s), Op::SumAll(a), rg)
    }

    pub fn sum_squares(&mut self, a: Var) -> Var {
        let s = self.vals(a).iter().map(|x| x * x).sum();
        let rg = self.rg(&[a]);
        self.push(Tensor::scalar(s), Op::SumSquares(a), rg)
    }

    /// Elementwise product with a constant array (masks, fixed weights).
    pub fn const_mul(&mut self, a: Var, factors: Arc<[f64]>) -> Result<Var, TensorError> {
        let (m, n) = self.dims(a);
        if factors.len() != m * n {
            return Err(TensorError::Shape {
                op: "const_mul",
                left: vec![m, n],
                right: vec![factors.len()],
            });
        }
        let out = self.vals(a).iter().zip(factors.iter()).map(|(x, f)| x * f).collect();
        let rg = self.rg(&[a]);
        Ok(self.push(Tensor::new(shape2(m, n), out)?, Op::ConstMul(a, factors), rg))
    }

    /// Inverted dropout: zero each entry with probability `rate`, scale the
    /// survivors by `1 / (1 - rate)`. A zero rate records nothing.
    pub fn dropout<R: Rng + ?Sized>(&mut self, a: Var, rate: f64, rng: &mut R) -> Result<Var, TensorError> {
        if !(0.0..1.0).contains(&rate) {
            return Err(TensorError::Config(format!("dropout rate {rate} outside [0, 1)")));
        }
        if rate == 0.0 {
            return Ok(a);
        }
        let keep = 1.0 / (1.0 - rate);
        let mask: Arc<[f64]> = (0..self.vals(a).len())
            .map(|_| if rng.random::<f64>() < rate { 0.0 } else { keep })
            .collect();
        self.const_mul(a, mask)
    }

    /// Divides every entry of the column `x` by the sum of its segment.
    /// Segments whose sum is not positive fall back to uniform weights.
    pub fn segment_normalize(&mut self, x: Var, seg: Arc<Segments>) -> Result<Var, TensorError> {
        let (m, n) = self.dims(x);
        if n != 1 || m != seg.len() {
            return Err(TensorError::Shape {
                op: "segment_normalize",
                left: vec![m, n],
                right: vec![seg.len(), 1],
            });
        }
        let xv = self.vals(x);
        let mut sums = vec![0.0; seg.count()];
        for (e, &s) in seg.of().iter().enumerate() {
            sums[s] += xv[e];
        }
        let sizes = seg.sizes();
        let degenerate: Vec<bool> = sums.iter().map(|&s| s.is_nan() || s <= 0.0).collect();
        let out = seg
            .of()
            .iter()
            .enumerate()
            .map(|(e, &s)| if degenerate[s] { 1.0 / sizes[s] as f64 } else { xv[e] / sums[s] })
            .collect();
        let rg = self.rg(&[x]);
        Ok(self.push(Tensor::new(shape2(m, 1), out)?, Op::SegmentNormalize(x, seg, degenerate), rg))
    }

    /// `out[s] = sum over rows e in segment s of weights[e] * messages[e]`.
    pub fn segment_weighted_sum(
        &mut self,
        messages: Var,
        weights: Var,
        seg: Arc<Segments>,
    ) -> Result<Var, TensorError> {
        let ((m, n), (wm, wn)) = (self.dims(messages), self.dims(weights));
        if wm != m || wn != 1 || seg.len() != m {
            return Err(TensorError::Alignment {
                op: "segment_weighted_sum",
                messages: m,
                weights: wm * wn,
                segments: seg.len(),
            });
        }
        let mut out = vec![0.0; seg.count() * n];
        let (mv, wv) = (self.vals(messages), self.vals(weights));
        for (e, &s) in seg.of().iter().enumerate() {
            let w = wv[e];
            for (o, &x) in out[s * n..(s + 1) * n].iter_mut().zip(&mv[e * n..(e + 1) * n]) {
                *o += w * x;
            }
        }
        let rg = self.rg(&[messages, weights]);
        let count = seg.count();
        Ok(self.push(
            Tensor::new(shape2(count, n), out)?,
            Op::SegmentWeightedSum(messages, weights, seg),
            rg,
        ))
    }

    /// Picks column `index[i]` from row `i`, returning an `m x 1` column.
    pub fn pick_cols(&mut self, a: Var, index: Arc<[usize]>) -> Result<Var, TensorError> {
        let (m, n) = self.dims(a);
        if index.len() != m {
            return Err(TensorError::Shape {
                op: "pick_cols",
                left: vec![m, n],
                right: vec![index.len()],
            });
        }
        if let Some(&bad) = index.iter().find(|&&j| j >= n) {
            return Err(TensorError::Index {
                op: "pick_cols",
                index: bad,
                bound: n,
            });
        }
        let av = self.vals(a);
        let out = index.iter().enumerate().map(|(i, &j)| av[i * n + j]).collect();
        let rg = self.rg(&[a]);
        Ok(self.push(Tensor::new(shape2(m, 1), out)?, Op::PickCols(a, index), rg))
    }

    /// `sum_i weights[i] * a[i]` over all entries, as a scalar.
    pub fn weighted_sum(&mut self, a: Var, weights: Arc<[f64]>) -> Result<Var, TensorError> {
        if weights.len() != self.vals(a).len() {
            let (m, n) = self.dims(a);
            return Err(TensorError::Shape {
                op: "weighted_sum",
                left: vec![m, n],
                right: vec![weights.len()],
            });
        }
        let s = self.vals(a).iter().zip(weights.iter()).map(|(x, w)| x * w).sum();
        let rg = self.rg(&[a]);
        Ok(self.push(Tensor::scalar(s), Op::WeightedSum(a, weights), rg))
    }

    /// Reverse sweep from a scalar output. Gradients of leaves that require
    /// them are added to whatever earlier passes accumulated.
    pub fn backward(&mut self, output: Var) -> Result<(), TensorError> {
        let out_val = &self.nodes[output.0].value;
        if out_val.len() != 1 {
            return Err(TensorError::Rank {
                op: "backward",
                shape: out_val.shape().to_vec(),
            });
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; output.0 + 1];
        grads[output.0] = Some(vec![1.0]);

        for i in (0..=output.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            if !node.requires_grad {
                continue;
            }
            if let Op::Leaf = node.op {
                let slot = self.leaf_grads[i].get_or_insert_with(|| vec![0.0; g.len()]);
                slot.iter_mut().zip(&g).for_each(|(s, x)| *s += x);
                continue;
            }
            self.propagate(i, &g, &mut grads);
        }
        Ok(())
    }

    fn propagate(&self, i: usize, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let nodes = &self.nodes;
        let wants = |v: Var| nodes[v.0].requires_grad;
        let dims = |v: Var| nodes[v.0].value.dims();
        let vals = |v: Var| nodes[v.0].value.values();
        let out = nodes[i].value.values();

        fn slot<'a>(grads: &'a mut [Option<Vec<f64>>], v: Var, len: usize) -> &'a mut Vec<f64> {
            grads[v.0].get_or_insert_with(|| vec![0.0; len])
        }

        match &nodes[i].op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let ((m, k), (_, n)) = (dims(*a), dims(*b));
                if wants(*a) {
                    gemm_nt(g, vals(*b), slot(grads, *a, m * k), m, n, k);
                }
                if wants(*b) {
                    gemm_tn(vals(*a), g, slot(grads, *b, k * n), m, k, n);
                }
            }
            Op::MatMulBT(a, b) => {
                let ((m, k), (n, _)) = (dims(*a), dims(*b));
                if wants(*a) {
                    gemm_nn(g, vals(*b), slot(grads, *a, m * k), m, n, k);
                }
                if wants(*b) {
                    gemm_tn(g, vals(*a), slot(grads, *b, n * k), m, n, k);
                }
            }
            Op::Transpose(a) => {
                let (m, n) = dims(*a);
                let s = slot(grads, *a, m * n);
                for r in 0..m {
                    for c in 0..n {
                        s[r * n + c] += g[c * m + r];
                    }
                }
            }
            Op::Add(a, b) | Op::Sub(a, b) => {
                let sign = if matches!(nodes[i].op, Op::Sub(..)) { -1.0 } else { 1.0 };
                if wants(*a) {
                    slot(grads, *a, g.len()).iter_mut().zip(g).for_each(|(s, x)| *s += x);
                }
                if wants(*b) {
                    slot(grads, *b, g.len()).iter_mut().zip(g).for_each(|(s, x)| *s += sign * x);
                }
            }
            Op::Mul(a, b) => {
                if wants(*a) {
                    let bv = vals(*b);
                    let s = slot(grads, *a, g.len());
                    for k in 0..g.len() {
                        s[k] += g[k] * bv[k];
                    }
                }
                if wants(*b) {
                    let av = vals(*a);
                    let s = slot(grads, *b, g.len());
                    for k in 0..g.len() {
                        s[k] += g[k] * av[k];
                    }
                }
            }
            Op::AddRow(a, row) => {
                let (_, n) = dims(*a);
                if wants(*a) {
                    slot(grads, *a, g.len()).iter_mut().zip(g).for_each(|(s, x)| *s += x);
                }
                if wants(*row) {
                    let s = slot(grads, *row, n);
                    for chunk in g.chunks(n.max(1)) {
                        s.iter_mut().zip(chunk).for_each(|(s, x)| *s += x);
                    }
                }
            }
            Op::MulCol(a, col) => {
                let (m, n) = dims(*a);
                if wants(*a) {
                    let cv = vals(*col);
                    let s = slot(grads, *a, m * n);
                    for r in 0..m {
                        for c in 0..n {
                            s[r * n + c] += g[r * n + c] * cv[r];
                        }
                    }
                }
                if wants(*col) {
                    let av = vals(*a);
                    let s = slot(grads, *col, m);
                    for r in 0..m {
                        s[r] += dot(&g[r * n..(r + 1) * n], &av[r * n..(r + 1) * n]);
                    }
                }
            }
            Op::Scale(a, f) => {
                slot(grads, *a, g.len()).iter_mut().zip(g).for_each(|(s, x)| *s += f * x);
            }
            Op::Relu(a) => {
                let av = vals(*a);
                let s = slot(grads, *a, g.len());
                for k in 0..g.len() {
                    if av[k] > 0.0 {
                        s[k] += g[k];
                    }
                }
            }
            Op::SoftmaxRows(a) => {
                let (m, n) = dims(*a);
                let s = slot(grads, *a, m * n);
                for r in 0..m {
                    let y = &out[r * n..(r + 1) * n];
                    let gr = &g[r * n..(r + 1) * n];
                    let inner = dot(y, gr);
                    for c in 0..n {
                        s[r * n + c] += y[c] * (gr[c] - inner);
                    }
                }
            }
            Op::LnClamped(a, floor) => {
                let av = vals(*a);
                let s = slot(grads, *a, g.len());
                for k in 0..g.len() {
                    if av[k] > *floor {
                        s[k] += g[k] / av[k];
                    }
                }
            }
            Op::ConcatCols(parts) => {
                let m = dims(parts[0]).0;
                let total: usize = parts.iter().map(|&p| dims(p).1).sum();
                let mut offset = 0;
                for &p in parts {
                    let c = dims(p).1;
                    if wants(p) {
                        let s = slot(grads, p, m * c);
                        for r in 0..m {
                            for j in 0..c {
                                s[r * c + j] += g[r * total + offset + j];
                            }
                        }
                    }
                    offset += c;
                }
            }
            Op::SliceCols(a, start) => {
                let (m, n) = dims(*a);
                let w = g.len() / m.max(1);
                let s = slot(grads, *a, m * n);
                for r in 0..m {
                    for j in 0..w {
                        s[r * n + start + j] += g[r * w + j];
                    }
                }
            }
            Op::GatherRows(a, index) => {
                let (m, n) = dims(*a);
                let s = slot(grads, *a, m * n);
                for (k, &r) in index.iter().enumerate() {
                    for j in 0..n {
                        s[r * n + j] += g[k * n + j];
                    }
                }
            }
            Op::OverwriteRows(base, src, index) => {
                let (m, n) = dims(*base);
                if wants(*base) {
                    let mut gb = g.to_vec();
                    for &r in index.iter() {
                        gb[r * n..(r + 1) * n].iter_mut().for_each(|x| *x = 0.0);
                    }
                    slot(grads, *base, m * n).iter_mut().zip(&gb).for_each(|(s, x)| *s += x);
                }
                if wants(*src) {
                    let s = slot(grads, *src, index.len() * n);
                    for (k, &r) in index.iter().enumerate() {
                        for j in 0..n {
                            s[k * n + j] += g[r * n + j];
                        }
                    }
                }
            }
            Op::RowNorm(a) => {
                let (m, n) = dims(*a);
                let av = vals(*a);
                let s = slot(grads, *a, m * n);
                for r in 0..m {
                    let norm = out[r];
                    if norm > 0.0 {
                        for j in 0..n {
                            s[r * n + j] += g[r] * av[r * n + j] / norm;
                        }
                    }
                }
            }
            Op::RowCosine(a, b) => {
                let (m, n) = dims(*a);
                let (av, bv) = (vals(*a), vals(*b));
                let mut ga = vec![0.0; m * n];
                let mut gb = vec![0.0; m * n];
                for r in 0..m {
                    let x = &av[r * n..(r + 1) * n];
                    let y = &bv[r * n..(r + 1) * n];
                    let (nx, ny) = (dot(x, x).sqrt(), dot(y, y).sqrt());
                    if nx == 0.0 || ny == 0.0 {
                        continue;
                    }
                    let c = out[r];
                    for j in 0..n {
                        ga[r * n + j] = g[r] * (y[j] / (nx * ny) - c * x[j] / (nx * nx));
                        gb[r * n + j] = g[r] * (x[j] / (nx * ny) - c * y[j] / (ny * ny));
                    }
                }
                if wants(*a) {
                    slot(grads, *a, m * n).iter_mut().zip(&ga).for_each(|(s, x)| *s += x);
                }
                if wants(*b) {
                    slot(grads, *b, m * n).iter_mut().zip(&gb).for_each(|(s, x)| *s += x);
                }
            }
            Op::RowDot(a, b) => {
                let (m, n) = dims(*a);
                if wants(*a) {
                    let bv = vals(*b);
                    let s = slot(grads, *a, m * n);
                    for r in 0..m {
                        for j in 0..n {
                            s[r * n + j] += g[r] * bv[r * n + j];
                        }
                    }
                }
                if wants(*b) {
                    let av = vals(*a);
                    let s = slot(grads, *b, m * n);
                    for r in 0..m {
                        for j in 0..n {
                            s[r * n + j] += g[r] * av[r * n + j];
                        }
                    }
                }
            }
            Op::RowSum(a) => {
                let (m, n) = dims(*a);
                let s = slot(grads, *a, m * n);
                for r in 0..m {
                    s[r * n..(r + 1) * n].iter_mut().for_each(|x| *x += g[r]);
                }
            }
            Op::SumAll(a) => {
                let len = vals(*a).len();
                slot(grads, *a, len).iter_mut().for_each(|x| *x += g[0]);
            }
            Op::SumSquares(a) => {
                let av = vals(*a);
                let s = slot(grads, *a, av.len());
                for k in 0..av.len() {
                    s[k] += 2.0 * av[k] * g[0];
                }
            }
            Op::ConstMul(a, factors) => {
                let s = slot(grads, *a, g.len());
                for k in 0..g.len() {
                    s[k] += g[k] * factors[k];
                }
            }
            Op::SegmentNormalize(x, seg, degenerate) => {
                let xv = vals(*x);
                let mut sums = vec![0.0; seg.count()];
                let mut inner = vec![0.0; seg.count()];
                for (e, &s) in seg.of().iter().enumerate() {
                    sums[s] += xv[e];
                    inner[s] += g[e] * out[e];
                }
                let s = slot(grads, *x, xv.len());
                for (e, &k) in seg.of().iter().enumerate() {
                    if !degenerate[k] {
                        s[e] += (g[e] - inner[k]) / sums[k];
                    }
                }
            }
            Op::SegmentWeightedSum(msgs, weights, seg) => {
                let (m, n) = dims(*msgs);
                if wants(*msgs) {
                    let wv = vals(*weights);
                    let s = slot(grads, *msgs, m * n);
                    for (e, &k) in seg.of().iter().enumerate() {
                        for j in 0..n {
                            s[e * n + j] += wv[e] * g[k * n + j];
                        }
                    }
                }
                if wants(*weights) {
                    let mv = vals(*msgs);
                    let s = slot(grads, *weights, m);
                    for (e, &k) in seg.of().iter().enumerate() {
                        s[e] += dot(&mv[e * n..(e + 1) * n], &g[k * n..(k + 1) * n]);
                    }
                }
            }
            Op::PickCols(a, index) => {
                let (m, n) = dims(*a);
                let s = slot(grads, *a, m * n);
                for (r, &j) in index.iter().enumerate() {
                    s[r * n + j] += g[r];
                }
            }
            Op::WeightedSum(a, weights) => {
                let s = slot(grads, *a, weights.len());
                for k in 0..weights.len() {
                    s[k] += weights[k] * g[0];
                }
            }
        }
    }
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Cosine similarity; 0 when either vector has zero norm.
pub fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let (na, nb) = (dot(a, a).sqrt(), dot(b, b).sqrt());
    if na == 0.0 || nb == 0.0 {
        0.0
    } else {
        dot(a, b) / (na * nb)
    }
}

/// Numerically stable softmax of one row.
pub fn softmax_in_place(row: &mut [f64]) {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut total = 0.0;
    for x in row.iter_mut() {
        *x = (*x - max).exp();
        total += *x;
    }
    for x in row.iter_mut() {
        *x /= total;
    }
}
