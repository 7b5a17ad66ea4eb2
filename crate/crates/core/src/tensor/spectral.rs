//! Spectral estimators and the dense SPD solver.
//!
//! Everything here is sized for desk-scale problems: power iteration for the top of a
//! sparse symmetric spectrum, cyclic Jacobi for small dense symmetric matrices, and a
//! Cholesky factorization for the sub-Laplacian systems of harmonic interpolation.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::tensor::{dense::dot, DenseMatrix, SparseMatrix};

/// Seed of the power-iteration start vector.
const POWER_START_SEED: u64 = 0x9e37_79b9_7f4a_7c15;

/// Default iteration cap for power iteration.
pub const POWER_MAX_ITERS: usize = 1000;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LambdaEstimate {
    pub value: f64,
    pub iterations: usize,
    /// False when the iteration cap was hit before the relative change dropped below `tol`.
    pub converged: bool,
}

fn start_vector(n: usize) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(POWER_START_SEED);
    let mut v: Vec<f64> = (0..n).map(|_| rng.random::<f64>() + 0.5).collect();
    let norm = dot(&v, &v).sqrt();
    v.iter_mut().for_each(|x| *x /= norm);
    v
}

/// Power iteration on `apply + shift·I`, returning the Rayleigh quotient minus the shift.
fn power_iterate(n: usize, shift: f64, iters: usize, tol: f64, apply: impl Fn(&[f64]) -> Vec<f64>) -> LambdaEstimate {
    if n == 0 {
        return LambdaEstimate {
            value: 0.0,
            iterations: 0,
            converged: true,
        };
    }
    let mut v = start_vector(n);
    let mut rho_prev = f64::NAN;
    let mut rho = 0.0;
    for k in 1..=iters {
        let mut w = apply(&v);
        for (wi, vi) in w.iter_mut().zip(&v) {
            *wi += shift * vi;
        }
        rho = dot(&v, &w);
        let norm = dot(&w, &w).sqrt();
        if norm == 0.0 {
            return LambdaEstimate {
                value: -shift,
                iterations: k,
                converged: true,
            };
        }
        v = w.into_iter().map(|x| x / norm).collect();
        if (rho - rho_prev).abs() <= tol * rho.abs() {
            return LambdaEstimate {
                value: rho - shift,
                iterations: k,
                converged: true,
            };
        }
        rho_prev = rho;
    }
    LambdaEstimate {
        value: rho - shift,
        iterations: iters,
        converged: false,
    }
}

/// Largest eigenvalue of a symmetric sparse matrix by power iteration.
///
/// The operator is shifted by the negative part of its Gershgorin interval so the
/// dominant eigenvalue is the largest one even for indefinite inputs such as `Ã`.
pub fn lambda_max(matrix: &SparseMatrix, iters: usize, tol: f64) -> Result<LambdaEstimate> {
    if !matrix.is_square() {
        return Err(Error::structural(format!(
            "lambda_max needs a square matrix, got {}x{}",
            matrix.rows(),
            matrix.cols()
        )));
    }
    if !matrix.is_symmetric() && !matrix.is_symmetric_within(1e-12) {
        return Err(Error::structural("lambda_max needs a symmetric matrix"));
    }
    let (lo, _) = matrix.gershgorin_bounds();
    let shift = (-lo).max(0.0);
    Ok(power_iterate(matrix.rows(), shift, iters, tol, |v| matrix.mul_vec(v)))
}

/// Spectral norm `‖X‖₂`, the square root of the top eigenvalue of `XᵀX`.
pub fn spectral_norm(x: &DenseMatrix) -> f64 {
    if x.is_empty() {
        return 0.0;
    }
    let gram = x.t_matmul(x);
    let est = power_iterate(gram.rows(), 0.0, POWER_MAX_ITERS, 1e-14, |v| {
        (0..gram.rows()).map(|i| dot(gram.row(i), v)).collect()
    });
    est.value.max(0.0).sqrt()
}

/// Eigenvalues of a small dense symmetric matrix by cyclic Jacobi rotations, ascending.
pub fn symmetric_eigenvalues(m: &DenseMatrix) -> Result<Vec<f64>> {
    if m.rows() != m.cols() {
        return Err(Error::structural("eigenvalues of a non-square matrix"));
    }
    if !m.is_symmetric(1e-9 * m.max_abs().max(1.0)) {
        return Err(Error::structural("eigenvalues of an asymmetric matrix"));
    }
    let n = m.rows();
    let mut a = m.clone();
    for _sweep in 0..100 {
        let off: f64 = (0..n)
            .flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j)))
            .map(|(i, j)| a[(i, j)] * a[(i, j)])
            .sum();
        let scale: f64 = a.data().iter().map(|v| v * v).sum();
        if off <= 1e-30 * scale.max(f64::MIN_POSITIVE) {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                let apq = a[(p, q)];
                if apq == 0.0 {
                    continue;
                }
                let theta = (a[(q, q)] - a[(p, p)]) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let akp = a[(k, p)];
                    let akq = a[(k, q)];
                    a[(k, p)] = c * akp - s * akq;
                    a[(k, q)] = s * akp + c * akq;
                }
                for k in 0..n {
                    let apk = a[(p, k)];
                    let aqk = a[(q, k)];
                    a[(p, k)] = c * apk - s * aqk;
                    a[(q, k)] = s * apk + c * aqk;
                }
            }
        }
    }
    let mut eig: Vec<f64> = (0..n).map(|i| a[(i, i)]).collect();
    eig.sort_by(f64::total_cmp);
    Ok(eig)
}

/// Squares of the smallest and largest singular values of a square matrix,
/// i.e. the extreme eigenvalues of `WᵀW`.
pub fn singular_value_bounds(w: &DenseMatrix) -> Result<(f64, f64)> {
    if w.rows() != w.cols() {
        return Err(Error::structural(format!(
            "singular value bounds need a square matrix, got {}x{}",
            w.rows(),
            w.cols()
        )));
    }
    if w.is_empty() {
        return Ok((0.0, 0.0));
    }
    let mut gram = w.t_matmul(w);
    // exact symmetry for the rotation sweep
    for i in 0..gram.rows() {
        for j in 0..i {
            let avg = 0.5 * (gram[(i, j)] + gram[(j, i)]);
            gram[(i, j)] = avg;
            gram[(j, i)] = avg;
        }
    }
    let eig = symmetric_eigenvalues(&gram)?;
    Ok((eig[0].max(0.0), eig[eig.len() - 1].max(0.0)))
}

/// Solves `M·X = B` for symmetric positive definite `M` by Cholesky factorization.
pub fn solve_spd(m: &DenseMatrix, b: &DenseMatrix) -> Result<DenseMatrix> {
    let n = m.rows();
    if m.cols() != n {
        return Err(Error::structural("solve_spd needs a square matrix"));
    }
    if b.rows() != n {
        return Err(Error::structural(format!(
            "right-hand side has {} rows, system has {n}",
            b.rows()
        )));
    }
    // pivots at rounding level of the diagonal count as zero
    let max_diag = (0..n).map(|i| m[(i, i)].abs()).fold(0.0, f64::max);
    let floor = 4.0 * n as f64 * f64::EPSILON * max_diag;
    let mut l = DenseMatrix::zeros(n, n);
    for j in 0..n {
        let mut diag = m[(j, j)];
        for k in 0..j {
            diag -= l[(j, k)] * l[(j, k)];
        }
        if !(diag > floor) {
            return Err(Error::NotPositiveDefinite { pivot: j, value: diag });
        }
        let ljj = diag.sqrt();
        l[(j, j)] = ljj;
        for i in j + 1..n {
            let mut s = m[(i, j)];
            for k in 0..j {
                s -= l[(i, k)] * l[(j, k)];
            }
            l[(i, j)] = s / ljj;
        }
    }
    let mut x = b.clone();
    for c in 0..b.cols() {
        // forward: L·y = b
        for i in 0..n {
            let mut s = x[(i, c)];
            for k in 0..i {
                s -= l[(i, k)] * x[(k, c)];
            }
            x[(i, c)] = s / l[(i, i)];
        }
        // backward: Lᵀ·x = y
        for i in (0..n).rev() {
            let mut s = x[(i, c)];
            for k in i + 1..n {
                s -= l[(k, i)] * x[(k, c)];
            }
            x[(i, c)] = s / l[(i, i)];
        }
    }
    Ok(x)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn laplacian_no_loops(n: usize, edges: &[(usize, usize)]) -> SparseMatrix {
        let mut deg = vec![0.0; n];
        for &(a, b) in edges {
            deg[a] += 1.0;
            deg[b] += 1.0;
        }
        let mut trips: Vec<_> = (0..n).map(|i| (i, i, 1.0)).collect();
        for &(a, b) in edges {
            let w = -1.0 / (deg[a] * deg[b] as f64).sqrt();
            trips.push((a, b, w));
            trips.push((b, a, w));
        }
        SparseMatrix::from_triplets(n, n, trips).unwrap()
    }

    #[test]
    fn lambda_max_of_triangle_laplacian() {
        // eigenvalues {0, 1.5, 1.5}
        let l = laplacian_no_loops(3, &[(0, 1), (1, 2), (0, 2)]);
        let est = lambda_max(&l, POWER_MAX_ITERS, 1e-12).unwrap();
        assert!(est.converged);
        assert!((est.value - 1.5).abs() < 1e-9, "{est:?}");
    }

    #[test]
    fn lambda_max_of_path_laplacian() {
        let l = laplacian_no_loops(2, &[(0, 1)]);
        let est = lambda_max(&l, POWER_MAX_ITERS, 1e-12).unwrap();
        assert!((est.value - 2.0).abs() < 1e-9, "{est:?}");
    }

    #[test]
    fn lambda_max_of_identity() {
        let est = lambda_max(&SparseMatrix::identity(5), 10, 1e-12).unwrap();
        assert!((est.value - 1.0).abs() < 1e-12);
    }

    #[test]
    fn lambda_max_rejects_bad_shapes() {
        let rect = SparseMatrix::from_triplets(2, 3, [(0, 0, 1.0)]).unwrap();
        assert!(matches!(lambda_max(&rect, 10, 1e-9), Err(Error::Structural(_))));
        let asym = SparseMatrix::from_triplets(2, 2, [(0, 1, 1.0)]).unwrap();
        assert!(matches!(lambda_max(&asym, 10, 1e-9), Err(Error::Structural(_))));
    }

    #[test]
    fn iteration_cap_is_flagged() {
        let l = laplacian_no_loops(6, &[(0, 1), (1, 2), (2, 3), (3, 4), (4, 5)]);
        let est = lambda_max(&l, 2, 1e-15).unwrap();
        assert!(!est.converged);
        assert_eq!(est.iterations, 2);
    }

    #[test]
    fn diagonal_singular_values() {
        let (lo, hi) = singular_value_bounds(&DenseMatrix::diag(&[2.0, 3.0])).unwrap();
        assert!((lo - 4.0).abs() < 1e-12 && (hi - 9.0).abs() < 1e-12);
        let (lo, hi) = singular_value_bounds(&DenseMatrix::identity(4)).unwrap();
        assert_eq!((lo, hi), (1.0, 1.0));
        assert!(singular_value_bounds(&DenseMatrix::zeros(2, 3)).is_err());
    }

    #[test]
    fn spd_solves() {
        let x = solve_spd(&DenseMatrix::identity(3), &DenseMatrix::filled(3, 2, 7.0)).unwrap();
        assert_eq!(x, DenseMatrix::filled(3, 2, 7.0));
        let m = DenseMatrix::diag(&[2.0, 4.0]);
        let b = DenseMatrix::from_rows(&[vec![2.0], vec![8.0]]).unwrap();
        let x = solve_spd(&m, &b).unwrap();
        assert!(x.max_abs_diff(&DenseMatrix::from_rows(&[vec![1.0], vec![2.0]]).unwrap()) < 1e-15);
    }

    #[test]
    fn indefinite_names_pivot() {
        let m = DenseMatrix::from_rows(&[vec![1.0, 2.0], vec![2.0, 1.0]]).unwrap();
        match solve_spd(&m, &DenseMatrix::zeros(2, 1)) {
            Err(Error::NotPositiveDefinite { pivot, .. }) => assert_eq!(pivot, 1),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn spectral_norm_of_diagonal() {
        let x = DenseMatrix::from_rows(&[vec![3.0, 0.0], vec![0.0, -5.0], vec![0.0, 0.0]]).unwrap();
        assert!((spectral_norm(&x) - 5.0).abs() < 1e-10);
    }
}
