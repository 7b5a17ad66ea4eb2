//! Imputation of inconsistent rows by clamped low-pass filtering, its closed-form limit,
//! and similarity averaging over propagation snapshots.

use crate::error::{Error, Result};
use crate::eval::similarity_matrix;
use crate::mmkg::ConsistencyPartition;
use crate::tensor::{solve_spd, DenseMatrix, SparseMatrix};

/// Default number of propagation iterations.
pub const DEFAULT_ITERATIONS: usize = 2;

/// Features under propagation. Rows flagged `known` are reset to their original values
/// after every step.
#[derive(Clone, Debug)]
pub struct PropagationState {
    x: DenseMatrix,
    original: DenseMatrix,
    known: Vec<bool>,
    iteration: usize,
    snapshots: Vec<DenseMatrix>,
}

impl PropagationState {
    pub fn new(x0: DenseMatrix, known: Vec<bool>) -> Result<Self> {
        if known.len() != x0.rows() {
            return Err(Error::structural(format!(
                "known mask has {} entries for {} rows",
                known.len(),
                x0.rows()
            )));
        }
        Ok(Self {
            original: x0.clone(),
            x: x0,
            known,
            iteration: 0,
            snapshots: Vec::new(),
        })
    }

    pub fn features(&self) -> &DenseMatrix {
        &self.x
    }

    pub fn known(&self) -> &[bool] {
        &self.known
    }

    pub fn iteration(&self) -> usize {
        self.iteration
    }

    /// `X^(1)..X^(iteration)`.
    pub fn snapshots(&self) -> &[DenseMatrix] {
        &self.snapshots
    }

    pub fn into_snapshots(self) -> Vec<DenseMatrix> {
        self.snapshots
    }

    fn clamp_and_record(&mut self, next: DenseMatrix) {
        self.x = next;
        for (i, &k) in self.known.iter().enumerate() {
            if k {
                self.x.row_mut(i).copy_from_slice(self.original.row(i));
            }
        }
        self.iteration += 1;
        self.snapshots.push(self.x.clone());
    }
}

fn check_operator(op: &SparseMatrix, n: usize) -> Result<()> {
    if !op.is_square() || op.rows() != n {
        return Err(Error::structural(format!(
            "{}x{} operator for {n} feature rows",
            op.rows(),
            op.cols()
        )));
    }
    Ok(())
}

/// `X ← Ã·X`, then known rows reset.
pub fn propagation_step(mut state: PropagationState, a_tilde: &SparseMatrix) -> Result<PropagationState> {
    check_operator(a_tilde, state.x.rows())?;
    let next = a_tilde.mul_dense_unchecked(&state.x);
    state.clamp_and_record(next);
    Ok(state)
}

/// Explicit Euler step of size `h` on the energy gradient flow: `X ← X − h·Δ·X`, then
/// known rows reset. `h = 1` reproduces [`propagation_step`] with `Ã = I − Δ`.
pub fn euler_step(mut state: PropagationState, laplacian: &SparseMatrix, h: f64) -> Result<PropagationState> {
    check_operator(laplacian, state.x.rows())?;
    let mut next = state.x.clone();
    next.axpy(-h, &laplacian.mul_dense_unchecked(&state.x));
    state.clamp_and_record(next);
    Ok(state)
}

/// Up to `n_p` propagation steps; stops early once the max-abs change of a step falls
/// below `tol` (when `tol > 0`). Returns the snapshots after each performed step.
pub fn propagate(
    x0: &DenseMatrix,
    a_tilde: &SparseMatrix,
    known: &[bool],
    n_p: usize,
    tol: f64,
) -> Result<Vec<DenseMatrix>> {
    run(x0, known, n_p, tol, |s| propagation_step(s, a_tilde))
}

/// [`propagate`] with Euler steps of size `h` on `Δ`.
pub fn propagate_euler(
    x0: &DenseMatrix,
    laplacian: &SparseMatrix,
    known: &[bool],
    n_p: usize,
    tol: f64,
    h: f64,
) -> Result<Vec<DenseMatrix>> {
    run(x0, known, n_p, tol, |s| euler_step(s, laplacian, h))
}

fn run(
    x0: &DenseMatrix,
    known: &[bool],
    n_p: usize,
    tol: f64,
    mut step: impl FnMut(PropagationState) -> Result<PropagationState>,
) -> Result<Vec<DenseMatrix>> {
    let mut state = PropagationState::new(x0.clone(), known.to_vec())?;
    for _ in 0..n_p {
        let before = state.x.clone();
        state = step(state)?;
        if tol > 0.0 && state.x.max_abs_diff(&before) < tol {
            break;
        }
    }
    Ok(state.into_snapshots())
}

/// A column range of the features with its own clamp mask.
#[derive(Clone, Debug, PartialEq)]
pub struct ColumnBlock {
    pub start: usize,
    pub width: usize,
    pub known: Vec<bool>,
}

/// [`propagate`] applied independently to column blocks. Columns outside every block, and
/// blocks with no free row, stay at their original values. Always returns `n_p` snapshots.
pub fn propagate_blocks(
    x0: &DenseMatrix,
    a_tilde: &SparseMatrix,
    blocks: &[ColumnBlock],
    n_p: usize,
) -> Result<Vec<DenseMatrix>> {
    let mut snapshots = vec![x0.clone(); n_p];
    for b in blocks {
        if b.start + b.width > x0.cols() {
            return Err(Error::structural(format!(
                "column block {}..{} exceeds width {}",
                b.start,
                b.start + b.width,
                x0.cols()
            )));
        }
        if b.known.iter().all(|&k| k) && b.known.len() == x0.rows() {
            continue;
        }
        let part = propagate(&x0.slice_cols(b.start, b.width), a_tilde, &b.known, n_p, 0.0)?;
        for (snap, p) in snapshots.iter_mut().zip(&part) {
            for i in 0..x0.rows() {
                snap.row_mut(i)[b.start..b.start + b.width].copy_from_slice(p.row(i));
            }
        }
    }
    Ok(snapshots)
}

/// Harmonic extension: rows outside `known` solve `Δ_uu·X_u = −Δ_uk·X_k`, the fixed
/// point of clamped propagation. Known rows are copied from `x`.
pub fn harmonic_interpolation(x: &DenseMatrix, laplacian: &SparseMatrix, known: &[bool]) -> Result<DenseMatrix> {
    check_operator(laplacian, x.rows())?;
    if known.len() != x.rows() {
        return Err(Error::structural("known mask length differs from row count"));
    }
    let k: Vec<usize> = (0..x.rows()).filter(|&i| known[i]).collect();
    let u: Vec<usize> = (0..x.rows()).filter(|&i| !known[i]).collect();
    let solved = solve_block(x, laplacian, &u, &[&k])?;
    let mut out = x.clone();
    for (p, &i) in u.iter().enumerate() {
        out.row_mut(i).copy_from_slice(solved.row(p));
    }
    Ok(out)
}

/// Missing-modality rows from the consistent and attribute-sparse rows:
/// `X_o2 = −Δ_o2o2⁻¹·(Δ_o2c·X_c + Δ_o2o1·X_o1)`. Rows follow `partition.missing_modality`.
pub fn closed_form_interpolation(
    x: &DenseMatrix,
    laplacian: &SparseMatrix,
    partition: &ConsistencyPartition,
) -> Result<DenseMatrix> {
    check_operator(laplacian, x.rows())?;
    solve_block(
        x,
        laplacian,
        &partition.missing_modality,
        &[&partition.consistent, &partition.sparse_attributes],
    )
}

fn solve_block(x: &DenseMatrix, laplacian: &SparseMatrix, free: &[usize], fixed: &[&[usize]]) -> Result<DenseMatrix> {
    if free.is_empty() {
        return Ok(DenseMatrix::zeros(0, x.cols()));
    }
    let mut rhs = DenseMatrix::zeros(free.len(), x.cols());
    for set in fixed {
        let block = laplacian.submatrix(free, set);
        rhs.axpy(-1.0, &block.mul_dense_unchecked(&x.select_rows(set)));
    }
    let system = laplacian.submatrix(free, free).to_dense();
    solve_spd(&system, &rhs).map_err(|e| match e {
        Error::NotPositiveDefinite { pivot, value } => Error::numerical(format!(
            "sub-Laplacian of the free rows is singular (pivot {pivot}, value {value:e}); \
             some free component has no clamped boundary, use the self-loop operator \
             or clamp at least one row per component"
        )),
        other => other,
    })
}

/// `Ω = (1/(J+1))·Σ_j cos(X_s^(j), X_t^(j))` over paired snapshot lists, where the caller
/// includes the pre-propagation matrices as `j = 0`.
pub fn averaged_similarity(source: &[DenseMatrix], target: &[DenseMatrix]) -> Result<DenseMatrix> {
    if source.len() != target.len() || source.is_empty() {
        return Err(Error::structural(format!(
            "snapshot counts {} and {} must match and be non-zero",
            source.len(),
            target.len()
        )));
    }
    if source.iter().chain(target).any(|m| m.cols() != source[0].cols()) {
        return Err(Error::structural("snapshots differ in feature width"));
    }
    let mut omega = DenseMatrix::zeros(source[0].rows(), target[0].rows());
    for (s, t) in source.iter().zip(target) {
        omega.add_assign(&similarity_matrix(s, t));
    }
    Ok(omega.scale(1.0 / source.len() as f64))
}
