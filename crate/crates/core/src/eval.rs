//! Cosine similarity matrices and ranking metrics (Hits@k, MRR).
//!
//! For a gold pair `(i, i')` the candidates are the target entities of all gold pairs.
//! `rank = 1 + #{j : Ω[i][j] > Ω[i][i']} + #{j < i' : Ω[i][j] = Ω[i][i']}`, so ties are
//! resolved in favour of the smaller candidate index.

use serde::Serialize;

use crate::tensor::DenseMatrix;

/// Tag recorded in reports for the tie policy above.
pub const TIE_POLICY: &str = "lower-index-first";

/// `Ω[i][j] = ⟨x_i, y_j⟩ / (‖x_i‖·‖y_j‖)`; rows with zero norm give 0.
///
/// # Panics
/// If the feature widths differ.
pub fn similarity_matrix(xs: &DenseMatrix, xt: &DenseMatrix) -> DenseMatrix {
    assert_eq!(xs.cols(), xt.cols(), "similarity of different feature widths");
    xs.row_normalized().matmul_t(&xt.row_normalized())
}

/// 1-based rank of `gold` among `candidates` in row `row` of `omega`.
pub fn rank_of(omega: &DenseMatrix, row: usize, gold: usize, candidates: &[usize]) -> usize {
    let s = omega.row(row);
    let g = s[gold];
    1 + candidates
        .iter()
        .filter(|&&j| s[j] > g || (s[j] == g && j < gold))
        .count()
}

fn candidate_columns(gold: &[(usize, usize)]) -> Vec<usize> {
    let mut c: Vec<usize> = gold.iter().map(|&(_, t)| t).collect();
    c.sort_unstable();
    c.dedup();
    c
}

/// Ranks of every gold pair against the gold target columns.
pub fn ranks(omega: &DenseMatrix, gold: &[(usize, usize)]) -> Vec<usize> {
    let candidates = candidate_columns(gold);
    gold.iter().map(|&(i, t)| rank_of(omega, i, t, &candidates)).collect()
}

/// Fraction of gold pairs ranked within the top `k`; 0 for an empty gold set.
pub fn hits_at_k(omega: &DenseMatrix, gold: &[(usize, usize)], k: usize) -> f64 {
    if gold.is_empty() {
        return 0.0;
    }
    let r = ranks(omega, gold);
    r.iter().filter(|&&x| x <= k).count() as f64 / r.len() as f64
}

/// Mean reciprocal rank; 0 for an empty gold set.
pub fn mrr(omega: &DenseMatrix, gold: &[(usize, usize)]) -> f64 {
    if gold.is_empty() {
        return 0.0;
    }
    let r = ranks(omega, gold);
    r.iter().map(|&x| 1.0 / x as f64).sum::<f64>() / r.len() as f64
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct MetricsReport {
    pub hits_at_1: f64,
    pub hits_at_10: f64,
    pub mrr: f64,
    /// `(k, Hits@k)` for every requested `k`.
    pub hits: Vec<(usize, f64)>,
    pub pairs: usize,
    pub tie_policy: &'static str,
}

impl MetricsReport {
    /// Metrics for the given gold pairs with Hits@k at each of `ks` (1 and 10 always included).
    pub fn evaluate(omega: &DenseMatrix, gold: &[(usize, usize)], ks: &[usize]) -> Self {
        let r = ranks(omega, gold);
        let n = r.len().max(1) as f64;
        let hit = |k: usize| r.iter().filter(|&&x| x <= k).count() as f64 / n;
        let mut all: Vec<usize> = ks.iter().copied().chain([1, 10]).filter(|&k| k >= 1).collect();
        all.sort_unstable();
        all.dedup();
        Self {
            hits_at_1: hit(1),
            hits_at_10: hit(10),
            mrr: r.iter().map(|&x| 1.0 / x as f64).sum::<f64>() / n,
            hits: all.into_iter().map(|k| (k, hit(k))).collect(),
            pairs: r.len(),
            tie_policy: TIE_POLICY,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn orthonormal_rows_give_identity() {
        let x = DenseMatrix::identity(3);
        assert_eq!(similarity_matrix(&x, &x), DenseMatrix::identity(3));
    }

    #[test]
    fn scaled_rows_have_similarity_one() {
        let a = DenseMatrix::from_rows(&[vec![1.0, 2.0, -1.0]]).unwrap();
        let b = a.scale(3.5);
        assert!((similarity_matrix(&a, &b)[(0, 0)] - 1.0).abs() < 1e-15);
        let z = DenseMatrix::zeros(1, 3);
        assert_eq!(similarity_matrix(&a, &z)[(0, 0)], 0.0);
    }

    #[test]
    fn hand_ranked_example() {
        let omega = DenseMatrix::from_rows(&[vec![0.9, 0.1], vec![0.8, 0.2]]).unwrap();
        let gold = [(0, 0), (1, 1)];
        assert_eq!(ranks(&omega, &gold), vec![1, 2]);
        assert_eq!(hits_at_k(&omega, &gold, 1), 0.5);
        assert_eq!(hits_at_k(&omega, &gold, 2), 1.0);
        assert_eq!(mrr(&omega, &gold), 0.75);
    }

    #[test]
    fn ties_favour_lower_index() {
        let omega = DenseMatrix::filled(4, 4, 0.3);
        let gold: Vec<(usize, usize)> = (0..4).map(|i| (i, i)).collect();
        assert_eq!(ranks(&omega, &gold), vec![1, 2, 3, 4]);
        assert_eq!(hits_at_k(&omega, &gold, 1), 0.25);
    }

    #[test]
    fn perfect_and_second_place() {
        let id = DenseMatrix::identity(5);
        let gold: Vec<(usize, usize)> = (0..5).map(|i| (i, i)).collect();
        assert_eq!(hits_at_k(&id, &gold, 1), 1.0);
        assert_eq!(mrr(&id, &gold), 1.0);
        let omega = DenseMatrix::from_rows(&[vec![0.5, 0.9], vec![0.9, 0.5]]).unwrap();
        assert_eq!(mrr(&omega, &[(0, 0), (1, 1)]), 0.5);
    }

    #[test]
    fn report_includes_requested_ks() {
        let id = DenseMatrix::identity(3);
        let r = MetricsReport::evaluate(&id, &[(0, 0), (1, 1), (2, 2)], &[5]);
        assert_eq!(r.hits.iter().map(|h| h.0).collect::<Vec<_>>(), vec![1, 5, 10]);
        assert_eq!(r.pairs, 3);
    }
}
