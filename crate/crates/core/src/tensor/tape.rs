//! Reverse-mode differentiation over a fixed set of matrix operations.
//!
//! A [`Tape`] records every operation applied to [`Var`] handles during a forward
//! pass. [`Tape::backward`] replays the record in reverse and returns a gradient for
//! every registered parameter. The operation set is closed: anything else (leaky ReLU,
//! elementwise minimum, the contrastive objective) is composed from these primitives
//! so that each primitive can be checked against finite differences in isolation.

use std::sync::Arc;

use crate::error::{Error, Result};
use crate::tensor::{dense::dot, DenseMatrix, SparseMatrix};

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

enum Op {
    Constant,
    Param,
    MatMul(Var, Var),
    Transpose(Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    AddScalar(Var),
    AddRow(Var, Var),
    MulRow(Var, Var),
    MulCol(Var, Var),
    Relu(Var),
    Exp(Var),
    Log(Var),
    Abs(Var),
    SoftmaxRows(Var),
    LayerNorm {
        x: Var,
        normalized: DenseMatrix,
        inv_std: Vec<f64>,
    },
    ConcatCols(Vec<Var>),
    SliceCols {
        x: Var,
        start: usize,
    },
    GatherRows {
        x: Var,
        indices: Vec<usize>,
    },
    SumRows(Var),
    SumAll(Var),
    Cosine {
        a: Var,
        b: Var,
        a_unit: DenseMatrix,
        b_unit: DenseMatrix,
        a_norm: Vec<f64>,
        b_norm: Vec<f64>,
    },
    SparseMul {
        matrix: Arc<SparseMatrix>,
        x: Var,
    },
    EdgeScores {
        src: Var,
        dst: Var,
        pattern: Arc<SparseMatrix>,
    },
    EdgeSoftmax {
        scores: Var,
        pattern: Arc<SparseMatrix>,
    },
    EdgeAggregate {
        weights: Var,
        x: Var,
        pattern: Arc<SparseMatrix>,
    },
}

struct Node {
    value: DenseMatrix,
    op: Op,
}

/// Gradients of a scalar with respect to every parameter registered on the tape,
/// indexed by the parameter id given at registration.
#[derive(Debug, Clone)]
pub struct Gradients {
    grads: Vec<Option<DenseMatrix>>,
}

impl Gradients {
    pub fn get(&self, param_id: usize) -> Option<&DenseMatrix> {
        self.grads.get(param_id).and_then(Option::as_ref)
    }

    pub fn len(&self) -> usize {
        self.grads.len()
    }

    pub fn is_empty(&self) -> bool {
        self.grads.is_empty()
    }

    pub fn into_vec(self) -> Vec<Option<DenseMatrix>> {
        self.grads
    }
}

#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
    params: Vec<(usize, Var)>,
}

fn shape_err(what: &str, a: (usize, usize), b: (usize, usize)) -> Error {
    Error::structural(format!("{what}: incompatible shapes {a:?} and {b:?}"))
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

    fn push(&mut self, value: DenseMatrix, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &DenseMatrix {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> (usize, usize) {
        self.nodes[v.0].value.shape()
    }

    /// Value of a 1×1 node.
    pub fn scalar(&self, v: Var) -> f64 {
        let m = self.value(v);
        debug_assert_eq!(m.shape(), (1, 1));
        m[(0, 0)]
    }

    pub fn constant(&mut self, value: DenseMatrix) -> Var {
        self.push(value, Op::Constant)
    }

    /// Registers a trainable leaf. `param_id` indexes the returned [`Gradients`].
    pub fn param(&mut self, param_id: usize, value: &DenseMatrix) -> Var {
        let v = self.push(value.clone(), Op::Param);
        self.params.push((param_id, v));
        v
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (va, vb) = (self.value(a), self.value(b));
        if va.cols() != vb.rows() {
            return Err(shape_err("matmul", va.shape(), vb.shape()));
        }
        let out = va.matmul_unchecked(vb);
        Ok(self.push(out, Op::MatMul(a, b)))
    }

    pub fn transpose(&mut self, a: Var) -> Var {
        let out = self.value(a).transpose();
        self.push(out, Op::Transpose(a))
    }

    fn same_shape(&self, what: &str, a: Var, b: Var) -> Result<()> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa != sb {
            return Err(shape_err(what, sa, sb));
        }
        Ok(())
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("add", a, b)?;
        let out = self.value(a).zip_map(self.value(b), |x, y| x + y);
        Ok(self.push(out, Op::Add(a, b)))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("sub", a, b)?;
        let out = self.value(a).zip_map(self.value(b), |x, y| x - y);
        Ok(self.push(out, Op::Sub(a, b)))
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("mul", a, b)?;
        let out = self.value(a).zip_map(self.value(b), |x, y| x * y);
        Ok(self.push(out, Op::Mul(a, b)))
    }

    pub fn scale(&mut self, a: Var, factor: f64) -> Var {
        let out = self.value(a).scale(factor);
        self.push(out, Op::Scale(a, factor))
    }

    pub fn add_scalar(&mut self, a: Var, c: f64) -> Var {
        let out = self.value(a).map(|x| x + c);
        self.push(out, Op::AddScalar(a))
    }

    /// `x + b` with a `1×c` row `b` broadcast over the rows of `x`.
    pub fn add_row(&mut self, x: Var, b: Var) -> Result<Var> {
        let (sx, sb) = (self.shape(x), self.shape(b));
        if sb != (1, sx.1) {
            return Err(shape_err("add_row", sx, sb));
        }
        let mut out = self.value(x).clone();
        let bias = self.value(b).data().to_vec();
        for i in 0..sx.0 {
            for (o, &bv) in out.row_mut(i).iter_mut().zip(&bias) {
                *o += bv;
            }
        }
        Ok(self.push(out, Op::AddRow(x, b)))
    }

    /// `x ⊙ g` with a `1×c` row `g` broadcast over the rows of `x`.
    pub fn mul_row(&mut self, x: Var, g: Var) -> Result<Var> {
        let (sx, sg) = (self.shape(x), self.shape(g));
        if sg != (1, sx.1) {
            return Err(shape_err("mul_row", sx, sg));
        }
        let mut out = self.value(x).clone();
        let gain = self.value(g).data().to_vec();
        for i in 0..sx.0 {
            for (o, &gv) in out.row_mut(i).iter_mut().zip(&gain) {
                *o *= gv;
            }
        }
        Ok(self.push(out, Op::MulRow(x, g)))
    }

    /// `x ⊙ w` with an `n×1` column `w` broadcast over the columns of `x`.
    pub fn mul_col(&mut self, x: Var, w: Var) -> Result<Var> {
        let (sx, sw) = (self.shape(x), self.shape(w));
        if sw != (sx.0, 1) {
            return Err(shape_err("mul_col", sx, sw));
        }
        let mut out = self.value(x).clone();
        for i in 0..sx.0 {
            let wi = self.nodes[w.0].value[(i, 0)];
            out.row_mut(i).iter_mut().for_each(|o| *o *= wi);
        }
        Ok(self.push(out, Op::MulCol(x, w)))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let out = self.value(a).map(|x| x.max(0.0));
        self.push(out, Op::Relu(a))
    }

    pub fn exp(&mut self, a: Var) -> Var {
        let out = self.value(a).map(f64::exp);
        self.push(out, Op::Exp(a))
    }

    pub fn log(&mut self, a: Var) -> Var {
        let out = self.value(a).map(f64::ln);
        self.push(out, Op::Log(a))
    }

    pub fn abs(&mut self, a: Var) -> Var {
        let out = self.value(a).map(f64::abs);
        self.push(out, Op::Abs(a))
    }

    /// Row-wise softmax with max subtraction.
    pub fn softmax_rows(&mut self, a: Var) -> Var {
        let x = self.value(a);
        let mut out = x.clone();
        for i in 0..x.rows() {
            softmax_in_place(out.row_mut(i));
        }
        self.push(out, Op::SoftmaxRows(a))
    }

    /// Row-wise standardization `(x − μ)/√(σ² + eps)` without affine parameters.
    pub fn layer_norm(&mut self, a: Var, eps: f64) -> Var {
        let x = self.value(a);
        let (n, c) = x.shape();
        let mut out = x.clone();
        let mut inv_std = Vec::with_capacity(n);
        for i in 0..n {
            let row = out.row_mut(i);
            let mean = row.iter().sum::<f64>() / c as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / c as f64;
            let inv = 1.0 / (var + eps).sqrt();
            row.iter_mut().for_each(|v| *v = (*v - mean) * inv);
            inv_std.push(inv);
        }
        let normalized = out.clone();
        self.push(
            out,
            Op::LayerNorm {
                x: a,
                normalized,
                inv_std,
            },
        )
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let values: Vec<&DenseMatrix> = parts.iter().map(|&p| self.value(p)).collect();
        let out = DenseMatrix::hconcat(&values)?;
        Ok(self.push(out, Op::ConcatCols(parts.to_vec())))
    }

    pub fn slice_cols(&mut self, a: Var, start: usize, len: usize) -> Result<Var> {
        let x = self.value(a);
        if start + len > x.cols() {
            return Err(Error::structural(format!(
                "column slice {start}..{} of a {}-column matrix",
                start + len,
                x.cols()
            )));
        }
        let out = x.slice_cols(start, len);
        Ok(self.push(out, Op::SliceCols { x: a, start }))
    }

    pub fn gather_rows(&mut self, a: Var, indices: &[usize]) -> Result<Var> {
        let x = self.value(a);
        if let Some(&bad) = indices.iter().find(|&&i| i >= x.rows()) {
            return Err(Error::structural(format!(
                "row {bad} out of range for {} rows",
                x.rows()
            )));
        }
        let out = x.select_rows(indices);
        Ok(self.push(
            out,
            Op::GatherRows {
                x: a,
                indices: indices.to_vec(),
            },
        ))
    }

    /// Row sums as an `n×1` column.
    pub fn sum_rows(&mut self, a: Var) -> Var {
        let x = self.value(a);
        let sums: Vec<f64> = (0..x.rows()).map(|i| x.row(i).iter().sum()).collect();
        let out = DenseMatrix::from_vec(x.rows(), 1, sums).expect("row sums are finite");
        self.push(out, Op::SumRows(a))
    }

    pub fn sum_all(&mut self, a: Var) -> Var {
        let s = self.value(a).sum();
        self.push(DenseMatrix::filled(1, 1, s), Op::SumAll(a))
    }

    pub fn mean_all(&mut self, a: Var) -> Var {
        let n = self.value(a).len().max(1) as f64;
        let s = self.sum_all(a);
        self.scale(s, 1.0 / n)
    }

    /// Pairwise cosine similarities between the rows of `a` and `b`; zero rows give 0.
    pub fn cosine_similarity(&mut self, a: Var, b: Var) -> Result<Var> {
        let (va, vb) = (self.value(a), self.value(b));
        if va.cols() != vb.cols() {
            return Err(shape_err("cosine_similarity", va.shape(), vb.shape()));
        }
        let (a_unit, a_norm) = unit_rows(va);
        let (b_unit, b_norm) = unit_rows(vb);
        let out = a_unit.matmul_t(&b_unit);
        Ok(self.push(
            out,
            Op::Cosine {
                a,
                b,
                a_unit,
                b_unit,
                a_norm,
                b_norm,
            },
        ))
    }

    /// `M·x` for a constant sparse `M`.
    pub fn sparse_mul(&mut self, matrix: &Arc<SparseMatrix>, x: Var) -> Result<Var> {
        let out = matrix.mul_dense(self.value(x))?;
        Ok(self.push(
            out,
            Op::SparseMul {
                matrix: Arc::clone(matrix),
                x,
            },
        ))
    }

    /// One score per stored entry `(i, j)` of `pattern`: `src[i] + dst[j]`, as an `nnz×1` column.
    pub fn edge_scores(&mut self, src: Var, dst: Var, pattern: &Arc<SparseMatrix>) -> Result<Var> {
        let (vs, vd) = (self.value(src), self.value(dst));
        if vs.shape() != (pattern.rows(), 1) || vd.shape() != (pattern.cols(), 1) {
            return Err(shape_err("edge_scores", vs.shape(), vd.shape()));
        }
        let mut scores = Vec::with_capacity(pattern.nnz());
        for i in 0..pattern.rows() {
            for (j, _) in pattern.row(i) {
                scores.push(vs[(i, 0)] + vd[(j, 0)]);
            }
        }
        let out = DenseMatrix::from_vec(pattern.nnz(), 1, scores)?;
        Ok(self.push(
            out,
            Op::EdgeScores {
                src,
                dst,
                pattern: Arc::clone(pattern),
            },
        ))
    }

    /// Softmax of per-entry scores within each row of `pattern`.
    pub fn edge_softmax(&mut self, scores: Var, pattern: &Arc<SparseMatrix>) -> Result<Var> {
        let v = self.value(scores);
        if v.shape() != (pattern.nnz(), 1) {
            return Err(shape_err("edge_softmax", v.shape(), (pattern.nnz(), 1)));
        }
        let mut out = v.clone();
        let ptr = pattern.indptr();
        for i in 0..pattern.rows() {
            softmax_in_place(&mut out.data_mut()[ptr[i]..ptr[i + 1]]);
        }
        Ok(self.push(
            out,
            Op::EdgeSoftmax {
                scores,
                pattern: Arc::clone(pattern),
            },
        ))
    }

    /// `out[i] = Σ_k w[k]·x[j_k]` over the stored entries `k = (i, j_k)` of `pattern`.
    pub fn edge_aggregate(&mut self, weights: Var, x: Var, pattern: &Arc<SparseMatrix>) -> Result<Var> {
        let (vw, vx) = (self.value(weights), self.value(x));
        if vw.shape() != (pattern.nnz(), 1) || vx.rows() != pattern.cols() {
            return Err(shape_err("edge_aggregate", vw.shape(), vx.shape()));
        }
        let mut out = DenseMatrix::zeros(pattern.rows(), vx.cols());
        let ptr = pattern.indptr();
        let idx = pattern.indices();
        for i in 0..pattern.rows() {
            let out_row = out.row_mut(i);
            for k in ptr[i]..ptr[i + 1] {
                let w = vw[(k, 0)];
                for (o, &b) in out_row.iter_mut().zip(vx.row(idx[k])) {
                    *o += w * b;
                }
            }
        }
        Ok(self.push(
            out,
            Op::EdgeAggregate {
                weights,
                x,
                pattern: Arc::clone(pattern),
            },
        ))
    }

    /// Gradient of the 1×1 node `output` with respect to every registered parameter.
    pub fn backward(&self, output: Var) -> Result<Gradients> {
        let out_value = self.value(output);
        if out_value.shape() != (1, 1) {
            return Err(Error::structural(format!(
                "backward needs a scalar output, got {:?}",
                out_value.shape()
            )));
        }
        if !out_value[(0, 0)].is_finite() {
            return Err(Error::numerical("backward from a non-finite output"));
        }
        let mut grads: Vec<Option<DenseMatrix>> = vec![None; output.0 + 1];
        grads[output.0] = Some(DenseMatrix::filled(1, 1, 1.0));

        for idx in (0..=output.0).rev() {
            let Some(g) = grads[idx].take() else {
                continue;
            };
            let node = &self.nodes[idx];
            match &node.op {
                Op::Constant => {}
                Op::Param => {
                    grads[idx] = Some(g);
                }
                Op::MatMul(a, b) => {
                    let va = self.value(*a);
                    let vb = self.value(*b);
                    accumulate(&mut grads, *a, g.matmul_t(vb));
                    accumulate(&mut grads, *b, va.t_matmul(&g));
                }
                Op::Transpose(a) => accumulate(&mut grads, *a, g.transpose()),
                Op::Add(a, b) => {
                    accumulate(&mut grads, *a, g.clone());
                    accumulate(&mut grads, *b, g);
                }
                Op::Sub(a, b) => {
                    accumulate(&mut grads, *a, g.clone());
                    accumulate(&mut grads, *b, g.scale(-1.0));
                }
                Op::Mul(a, b) => {
                    let ga = g.zip_map(self.value(*b), |x, y| x * y);
                    let gb = g.zip_map(self.value(*a), |x, y| x * y);
                    accumulate(&mut grads, *a, ga);
                    accumulate(&mut grads, *b, gb);
                }
                Op::Scale(a, f) => accumulate(&mut grads, *a, g.scale(*f)),
                Op::AddScalar(a) => accumulate(&mut grads, *a, g),
                Op::AddRow(x, b) => {
                    let mut gb = DenseMatrix::zeros(1, g.cols());
                    for i in 0..g.rows() {
                        for (o, &v) in gb.row_mut(0).iter_mut().zip(g.row(i)) {
                            *o += v;
                        }
                    }
                    accumulate(&mut grads, *x, g);
                    accumulate(&mut grads, *b, gb);
                }
                Op::MulRow(x, gain) => {
                    let vx = self.value(*x);
                    let vg = self.value(*gain);
                    let mut gx = g.clone();
                    let mut gg = DenseMatrix::zeros(1, g.cols());
                    for i in 0..g.rows() {
                        for j in 0..g.cols() {
                            gx[(i, j)] *= vg[(0, j)];
                            gg[(0, j)] += g[(i, j)] * vx[(i, j)];
                        }
                    }
                    accumulate(&mut grads, *x, gx);
                    accumulate(&mut grads, *gain, gg);
                }
                Op::MulCol(x, w) => {
                    let vx = self.value(*x);
                    let vw = self.value(*w);
                    let mut gx = g.clone();
                    let mut gw = DenseMatrix::zeros(g.rows(), 1);
                    for i in 0..g.rows() {
                        let wi = vw[(i, 0)];
                        gx.row_mut(i).iter_mut().for_each(|v| *v *= wi);
                        gw[(i, 0)] = dot(g.row(i), vx.row(i));
                    }
                    accumulate(&mut grads, *x, gx);
                    accumulate(&mut grads, *w, gw);
                }
                Op::Relu(a) => {
                    let gx = g.zip_map(self.value(*a), |gv, x| if x > 0.0 { gv } else { 0.0 });
                    accumulate(&mut grads, *a, gx);
                }
                Op::Exp(a) => {
                    let gx = g.zip_map(&node.value, |gv, y| gv * y);
                    accumulate(&mut grads, *a, gx);
                }
                Op::Log(a) => {
                    let gx = g.zip_map(self.value(*a), |gv, x| gv / x);
                    accumulate(&mut grads, *a, gx);
                }
                Op::Abs(a) => {
                    let gx = g.zip_map(self.value(*a), |gv, x| gv * x.signum() * (x != 0.0) as u8 as f64);
                    accumulate(&mut grads, *a, gx);
                }
                Op::SoftmaxRows(a) => {
                    let y = &node.value;
                    let mut gx = g.clone();
                    for i in 0..y.rows() {
                        softmax_backward_in_place(gx.row_mut(i), y.row(i));
                    }
                    accumulate(&mut grads, *a, gx);
                }
                Op::LayerNorm { x, normalized, inv_std } => {
                    let c = normalized.cols() as f64;
                    let mut gx = g.clone();
                    for i in 0..normalized.rows() {
                        let xhat = normalized.row(i);
                        let gi = g.row(i);
                        let mean_g = gi.iter().sum::<f64>() / c;
                        let mean_gx = dot(gi, xhat) / c;
                        for (j, o) in gx.row_mut(i).iter_mut().enumerate() {
                            *o = inv_std[i] * (gi[j] - mean_g - xhat[j] * mean_gx);
                        }
                    }
                    accumulate(&mut grads, *x, gx);
                }
                Op::ConcatCols(parts) => {
                    let mut start = 0;
                    for &p in parts {
                        let w = self.value(p).cols();
                        accumulate(&mut grads, p, g.slice_cols(start, w));
                        start += w;
                    }
                }
                Op::SliceCols { x, start } => {
                    let vx = self.value(*x);
                    let mut gx = DenseMatrix::zeros(vx.rows(), vx.cols());
                    for i in 0..g.rows() {
                        gx.row_mut(i)[*start..*start + g.cols()].copy_from_slice(g.row(i));
                    }
                    accumulate(&mut grads, *x, gx);
                }
                Op::GatherRows { x, indices } => {
                    let vx = self.value(*x);
                    let mut gx = DenseMatrix::zeros(vx.rows(), vx.cols());
                    for (r, &src) in indices.iter().enumerate() {
                        for (o, &v) in gx.row_mut(src).iter_mut().zip(g.row(r)) {
                            *o += v;
                        }
                    }
                    accumulate(&mut grads, *x, gx);
                }
                Op::SumRows(a) => {
                    let (n, c) = self.shape(*a);
                    let gx = DenseMatrix::from_fn(n, c, |i, _| g[(i, 0)]);
                    accumulate(&mut grads, *a, gx);
                }
                Op::SumAll(a) => {
                    let (n, c) = self.shape(*a);
                    accumulate(&mut grads, *a, DenseMatrix::filled(n, c, g[(0, 0)]));
                }
                Op::Cosine {
                    a,
                    b,
                    a_unit,
                    b_unit,
                    a_norm,
                    b_norm,
                } => {
                    let g_a_unit = g.matmul_unchecked(b_unit);
                    let g_b_unit = g.t_matmul(a_unit);
                    accumulate(&mut grads, *a, unit_rows_backward(&g_a_unit, a_unit, a_norm));
                    accumulate(&mut grads, *b, unit_rows_backward(&g_b_unit, b_unit, b_norm));
                }
                Op::SparseMul { matrix, x } => {
                    accumulate(&mut grads, *x, matrix.t_mul_dense(&g));
                }
                Op::EdgeScores { src, dst, pattern } => {
                    let mut gs = DenseMatrix::zeros(pattern.rows(), 1);
                    let mut gd = DenseMatrix::zeros(pattern.cols(), 1);
                    let mut k = 0;
                    for i in 0..pattern.rows() {
                        for (j, _) in pattern.row(i) {
                            gs[(i, 0)] += g[(k, 0)];
                            gd[(j, 0)] += g[(k, 0)];
                            k += 1;
                        }
                    }
                    accumulate(&mut grads, *src, gs);
                    accumulate(&mut grads, *dst, gd);
                }
                Op::EdgeSoftmax { scores, pattern } => {
                    let y = &node.value;
                    let mut gx = g.clone();
                    let ptr = pattern.indptr();
                    for i in 0..pattern.rows() {
                        let span = ptr[i]..ptr[i + 1];
                        softmax_backward_in_place(&mut gx.data_mut()[span.clone()], &y.data()[span]);
                    }
                    accumulate(&mut grads, *scores, gx);
                }
                Op::EdgeAggregate { weights, x, pattern } => {
                    let vw = self.value(*weights);
                    let vx = self.value(*x);
                    let mut gw = DenseMatrix::zeros(pattern.nnz(), 1);
                    let mut gx = DenseMatrix::zeros(vx.rows(), vx.cols());
                    let ptr = pattern.indptr();
                    let idx = pattern.indices();
                    for i in 0..pattern.rows() {
                        let gi = g.row(i);
                        for k in ptr[i]..ptr[i + 1] {
                            let j = idx[k];
                            gw[(k, 0)] = dot(gi, vx.row(j));
                            let w = vw[(k, 0)];
                            for (o, &v) in gx.row_mut(j).iter_mut().zip(gi) {
                                *o += w * v;
                            }
                        }
                    }
                    accumulate(&mut grads, *weights, gw);
                    accumulate(&mut grads, *x, gx);
                }
            }
        }

        let n_params = self.params.iter().map(|&(id, _)| id + 1).max().unwrap_or(0);
        let mut out: Vec<Option<DenseMatrix>> = vec![None; n_params];
        for &(id, v) in &self.params {
            let g = match grads.get(v.0).and_then(Option::as_ref) {
                Some(g) => g.clone(),
                None => {
                    let (r, c) = self.shape(v);
                    DenseMatrix::zeros(r, c)
                }
            };
            match &mut out[id] {
                Some(existing) => existing.add_assign(&g),
                slot => *slot = Some(g),
            }
        }
        Ok(Gradients { grads: out })
    }
}

fn accumulate(grads: &mut [Option<DenseMatrix>], v: Var, g: DenseMatrix) {
    match &mut grads[v.0] {
        Some(existing) => existing.add_assign(&g),
        slot => *slot = Some(g),
    }
}

fn softmax_in_place(row: &mut [f64]) {
    if row.is_empty() {
        return;
    }
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut total = 0.0;
    for v in row.iter_mut() {
        *v = (*v - max).exp();
        total += *v;
    }
    row.iter_mut().for_each(|v| *v /= total);
}

/// `g ← y ⊙ (g − ⟨g, y⟩)`.
fn softmax_backward_in_place(g: &mut [f64], y: &[f64]) {
    let inner = dot(g, y);
    for (gv, &yv) in g.iter_mut().zip(y) {
        *gv = yv * (*gv - inner);
    }
}

fn unit_rows(x: &DenseMatrix) -> (DenseMatrix, Vec<f64>) {
    let norms: Vec<f64> = (0..x.rows()).map(|i| dot(x.row(i), x.row(i)).sqrt()).collect();
    let mut unit = x.clone();
    for (i, &n) in norms.iter().enumerate() {
        if n > 0.0 {
            unit.row_mut(i).iter_mut().for_each(|v| *v /= n);
        }
    }
    (unit, norms)
}

/// Chain rule through `u = x/‖x‖`: `dx = (du − u⟨du, u⟩)/‖x‖`, zero for zero rows.
fn unit_rows_backward(g_unit: &DenseMatrix, unit: &DenseMatrix, norms: &[f64]) -> DenseMatrix {
    let mut gx = g_unit.clone();
    for (i, &n) in norms.iter().enumerate() {
        let row = gx.row_mut(i);
        if n > 0.0 {
            let u = unit.row(i);
            let proj = dot(row, u);
            for (o, &uv) in row.iter_mut().zip(u) {
                *o = (*o - uv * proj) / n;
            }
        } else {
            row.iter_mut().for_each(|o| *o = 0.0);
        }
    }
    gx
}

/// Pure softmax of a slice, shared with code that does not need a tape.
pub fn softmax(values: &[f64]) -> Vec<f64> {
    let mut out = values.to_vec();
    softmax_in_place(&mut out);
    out
}
