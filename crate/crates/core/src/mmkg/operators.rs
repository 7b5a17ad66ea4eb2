use std::sync::Arc;

use crate::mmkg::Mmkg;
use crate::tensor::SparseMatrix;

/// Normalized adjacency `Ã = D^(−1/2)·A·D^(−1/2)` and Laplacian `Δ = I − Ã`.
#[derive(Clone, Debug)]
pub struct GraphOperators {
    /// Binary symmetric adjacency, with the identity added when `self_loops` is set.
    pub adjacency: Arc<SparseMatrix>,
    /// Degrees used for normalization (row sums of `adjacency`).
    pub degree: Vec<f64>,
    pub normalized: Arc<SparseMatrix>,
    pub laplacian: Arc<SparseMatrix>,
    pub self_loops: bool,
}

impl GraphOperators {
    pub fn node_count(&self) -> usize {
        self.degree.len()
    }

    /// Builds operators straight from an undirected edge list over `n` nodes.
    /// Edge direction, multiplicity and self-edges in the list are ignored.
    pub fn from_edges(n: usize, edges: impl IntoIterator<Item = (usize, usize)>, self_loops: bool) -> Self {
        let mut pairs: Vec<(usize, usize)> = edges
            .into_iter()
            .filter(|(a, b)| a != b)
            .flat_map(|(a, b)| [(a, b), (b, a)])
            .collect();
        if self_loops {
            pairs.extend((0..n).map(|i| (i, i)));
        }
        pairs.sort_unstable();
        pairs.dedup();
        let adjacency = SparseMatrix::from_triplets(n, n, pairs.iter().map(|&(a, b)| (a, b, 1.0)))
            .expect("edge endpoints are node indices");
        let degree: Vec<f64> = (0..n).map(|i| adjacency.row(i).map(|(_, v)| v).sum()).collect();
        let inv_sqrt: Vec<f64> = degree.iter().map(|&d| 1.0 / d.max(1.0).sqrt()).collect();

        let normalized =
            SparseMatrix::from_triplets(n, n, pairs.iter().map(|&(a, b)| (a, b, inv_sqrt[a] * inv_sqrt[b])))
                .expect("same pattern as adjacency");

        let mut lap = Vec::with_capacity(pairs.len() + n);
        lap.extend((0..n).map(|i| (i, i, 1.0)));
        lap.extend(pairs.iter().map(|&(a, b)| (a, b, -(inv_sqrt[a] * inv_sqrt[b]))));
        let laplacian = SparseMatrix::from_triplets(n, n, lap).expect("same pattern as adjacency");

        Self {
            adjacency: Arc::new(adjacency),
            degree,
            normalized: Arc::new(normalized),
            laplacian: Arc::new(laplacian),
            self_loops,
        }
    }
}

/// Operators of the undirected graph underlying `g`'s triples.
///
/// With `self_loops`, `A` becomes `A + I` (so every degree gains one). Without them an
/// isolated node normalizes by `max(degree, 1)` and gets an all-zero row in `Ã`.
pub fn build_operators(g: &Mmkg, self_loops: bool) -> GraphOperators {
    GraphOperators::from_edges(
        g.entity_count(),
        g.triples().iter().map(|t| (t.head, t.tail)),
        self_loops,
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::{symmetric_eigenvalues, DenseMatrix};

    #[test]
    fn path_without_self_loops() {
        let ops = GraphOperators::from_edges(2, [(0, 1)], false);
        let a = DenseMatrix::from_rows(&[vec![0.0, 1.0], vec![1.0, 0.0]]).unwrap();
        assert_eq!(ops.normalized.to_dense(), a);
        let l = DenseMatrix::from_rows(&[vec![1.0, -1.0], vec![-1.0, 1.0]]).unwrap();
        assert_eq!(ops.laplacian.to_dense(), l);
    }

    #[test]
    fn triangle_with_self_loops() {
        let ops = GraphOperators::from_edges(3, [(0, 1), (1, 2), (2, 0)], true);
        let expected = DenseMatrix::filled(3, 3, 1.0 / 3.0);
        assert!(ops.normalized.to_dense().max_abs_diff(&expected) < 1e-15);
        let mut eig = symmetric_eigenvalues(&ops.laplacian.to_dense()).unwrap();
        eig.sort_by(f64::total_cmp);
        for (a, b) in eig.iter().zip([0.0, 1.0, 1.0]) {
            assert!((a - b).abs() < 1e-12, "{eig:?}");
        }
        assert!(ops.normalized.is_symmetric() && ops.laplacian.is_symmetric());
    }

    #[test]
    fn isolated_node() {
        let ops = GraphOperators::from_edges(1, [], false);
        assert_eq!(ops.normalized.to_dense(), DenseMatrix::zeros(1, 1));
        assert_eq!(ops.laplacian.to_dense(), DenseMatrix::identity(1));
    }
}
