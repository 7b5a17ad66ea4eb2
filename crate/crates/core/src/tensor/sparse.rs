use crate::error::{Error, Result};
use crate::tensor::DenseMatrix;

/// Compressed sparse row matrix. Column indices are strictly increasing within a row.
#[derive(Clone, Debug, PartialEq)]
pub struct SparseMatrix {
    rows: usize,
    cols: usize,
    indptr: Vec<usize>,
    indices: Vec<usize>,
    values: Vec<f64>,
    symmetric: bool,
}

impl SparseMatrix {
    /// Builds a matrix from `(row, col, value)` triplets. Duplicate coordinates are summed
    /// and explicit zeros are kept, so the sparsity pattern matches the input.
    pub fn from_triplets(
        rows: usize,
        cols: usize,
        triplets: impl IntoIterator<Item = (usize, usize, f64)>,
    ) -> Result<Self> {
        let mut entries: Vec<(usize, usize, f64)> = triplets.into_iter().collect();
        for &(i, j, v) in &entries {
            if i >= rows || j >= cols {
                return Err(Error::structural(format!("entry ({i}, {j}) outside {rows}x{cols}")));
            }
            if !v.is_finite() {
                return Err(Error::numerical(format!("non-finite value at ({i}, {j})")));
            }
        }
        entries.sort_by_key(|&(i, j, _)| (i, j));

        let mut indptr = vec![0usize; rows + 1];
        let mut indices = Vec::with_capacity(entries.len());
        let mut values: Vec<f64> = Vec::with_capacity(entries.len());
        let mut last: Option<(usize, usize)> = None;
        for (i, j, v) in entries {
            if last == Some((i, j)) {
                *values.last_mut().expect("duplicate follows an entry") += v;
                continue;
            }
            indices.push(j);
            values.push(v);
            indptr[i + 1] += 1;
            last = Some((i, j));
        }
        for i in 0..rows {
            indptr[i + 1] += indptr[i];
        }
        let mut m = Self {
            rows,
            cols,
            indptr,
            indices,
            values,
            symmetric: false,
        };
        m.symmetric = m.is_symmetric_within(0.0);
        Ok(m)
    }

    pub fn identity(n: usize) -> Self {
        Self {
            rows: n,
            cols: n,
            indptr: (0..=n).collect(),
            indices: (0..n).collect(),
            values: vec![1.0; n],
            symmetric: true,
        }
    }

    pub fn from_dense(m: &DenseMatrix) -> Self {
        let trips = (0..m.rows())
            .flat_map(|i| (0..m.cols()).map(move |j| (i, j)))
            .filter(|&(i, j)| m[(i, j)] != 0.0)
            .map(|(i, j)| (i, j, m[(i, j)]));
        Self::from_triplets(m.rows(), m.cols(), trips.collect::<Vec<_>>())
            .expect("dense entries are in range and finite")
    }

    #[inline]
    pub fn rows(&self) -> usize {
        self.rows
    }

    #[inline]
    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    pub fn is_square(&self) -> bool {
        self.rows == self.cols
    }

    /// True when the matrix was exactly symmetric at construction.
    pub fn is_symmetric(&self) -> bool {
        self.symmetric
    }

    pub fn indptr(&self) -> &[usize] {
        &self.indptr
    }

    pub fn indices(&self) -> &[usize] {
        &self.indices
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// `(column, value)` pairs of row `i`.
    pub fn row(&self, i: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let span = self.indptr[i]..self.indptr[i + 1];
        self.indices[span.clone()]
            .iter()
            .copied()
            .zip(self.values[span].iter().copied())
    }

    pub fn row_nnz(&self, i: usize) -> usize {
        self.indptr[i + 1] - self.indptr[i]
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        let span = self.indptr[i]..self.indptr[i + 1];
        match self.indices[span.clone()].binary_search(&j) {
            Ok(pos) => self.values[span.start + pos],
            Err(_) => 0.0,
        }
    }

    pub fn is_symmetric_within(&self, tol: f64) -> bool {
        self.is_square() && (0..self.rows).all(|i| self.row(i).all(|(j, v)| (self.get(j, i) - v).abs() <= tol))
    }

    /// Symmetry check with a tolerance; on success the symmetric flag is set.
    pub fn symmetrized_flag(mut self, tol: f64) -> Self {
        self.symmetric = self.is_symmetric_within(tol);
        self
    }

    pub fn mul_vec(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(x.len(), self.cols, "mul_vec dimension mismatch");
        (0..self.rows)
            .map(|i| self.row(i).map(|(j, v)| v * x[j]).sum())
            .collect()
    }

    pub fn mul_dense(&self, x: &DenseMatrix) -> Result<DenseMatrix> {
        if x.rows() != self.cols {
            return Err(Error::structural(format!(
                "sparse {}x{} times dense {}x{}",
                self.rows,
                self.cols,
                x.rows(),
                x.cols()
            )));
        }
        Ok(self.mul_dense_unchecked(x))
    }

    pub(crate) fn mul_dense_unchecked(&self, x: &DenseMatrix) -> DenseMatrix {
        let d = x.cols();
        let mut out = DenseMatrix::zeros(self.rows, d);
        for i in 0..self.rows {
            let out_row = out.row_mut(i);
            for k in self.indptr[i]..self.indptr[i + 1] {
                let v = self.values[k];
                for (o, &b) in out_row.iter_mut().zip(x.row(self.indices[k])) {
                    *o += v * b;
                }
            }
        }
        out
    }

    /// `selfᵀ · x`.
    pub(crate) fn t_mul_dense(&self, x: &DenseMatrix) -> DenseMatrix {
        let d = x.cols();
        let mut out = DenseMatrix::zeros(self.cols, d);
        for i in 0..self.rows {
            let x_row = x.row(i);
            for k in self.indptr[i]..self.indptr[i + 1] {
                let v = self.values[k];
                let out_row = out.row_mut(self.indices[k]);
                for (o, &b) in out_row.iter_mut().zip(x_row) {
                    *o += v * b;
                }
            }
        }
        out
    }

    pub fn to_dense(&self) -> DenseMatrix {
        let mut out = DenseMatrix::zeros(self.rows, self.cols);
        for i in 0..self.rows {
            for (j, v) in self.row(i) {
                out[(i, j)] = v;
            }
        }
        out
    }

    /// Block `self[row_set, col_set]`, re-indexed to the order of the given sets.
    pub fn submatrix(&self, row_set: &[usize], col_set: &[usize]) -> SparseMatrix {
        let mut col_pos = vec![usize::MAX; self.cols];
        for (p, &j) in col_set.iter().enumerate() {
            col_pos[j] = p;
        }
        let mut trips = Vec::new();
        for (pi, &i) in row_set.iter().enumerate() {
            for (j, v) in self.row(i) {
                if col_pos[j] != usize::MAX {
                    trips.push((pi, col_pos[j], v));
                }
            }
        }
        SparseMatrix::from_triplets(row_set.len(), col_set.len(), trips).expect("block entries are in range")
    }

    /// Gershgorin interval `[lo, hi]` containing the spectrum of a symmetric matrix.
    pub fn gershgorin_bounds(&self) -> (f64, f64) {
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        for i in 0..self.rows {
            let mut diag = 0.0;
            let mut radius = 0.0;
            for (j, v) in self.row(i) {
                if j == i {
                    diag = v;
                } else {
                    radius += v.abs();
                }
            }
            lo = lo.min(diag - radius);
            hi = hi.max(diag + radius);
        }
        if self.rows == 0 {
            (0.0, 0.0)
        } else {
            (lo, hi)
        }
    }

    /// Quadratic form `xᵀ·self·x` for a square matrix.
    pub fn quadratic_form(&self, x: &[f64]) -> f64 {
        let y = self.mul_vec(x);
        x.iter().zip(&y).map(|(a, b)| a * b).sum()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn duplicates_sum_and_columns_sorted() {
        let m = SparseMatrix::from_triplets(2, 3, [(0, 2, 1.0), (0, 0, 2.0), (0, 2, 0.5)]).unwrap();
        assert_eq!(m.indices(), &[0, 2]);
        assert_eq!(m.get(0, 2), 1.5);
        assert_eq!(m.get(1, 1), 0.0);
        assert!(!m.is_symmetric());
    }

    #[test]
    fn out_of_range_is_structural() {
        assert!(matches!(
            SparseMatrix::from_triplets(2, 2, [(2, 0, 1.0)]),
            Err(Error::Structural(_))
        ));
    }

    #[test]
    fn products_match_dense() {
        let m = SparseMatrix::from_triplets(3, 3, [(0, 1, 2.0), (1, 0, 2.0), (2, 2, -1.0), (1, 2, 0.5)]).unwrap();
        let x = DenseMatrix::from_fn(3, 2, |i, j| (i as f64) - (j as f64) * 0.5);
        let dense = m.to_dense();
        assert_eq!(m.mul_dense(&x).unwrap(), dense.matmul(&x).unwrap());
        assert_eq!(m.t_mul_dense(&x), dense.transpose().matmul(&x).unwrap());
    }

    #[test]
    fn submatrix_reindexes() {
        let m = SparseMatrix::from_dense(&DenseMatrix::from_fn(4, 4, |i, j| (i * 4 + j) as f64));
        let b = m.submatrix(&[3, 1], &[2, 0]);
        assert_eq!(
            b.to_dense(),
            DenseMatrix::from_rows(&[vec![14.0, 12.0], vec![6.0, 4.0]]).unwrap()
        );
    }
}
