use std::collections::BTreeSet;

use crate::encoder::{encode, EncoderConfig, EncoderParams};
use crate::error::Result;
use crate::eval::similarity_matrix;
use crate::tensor::DenseMatrix;
use crate::training::AlignmentTask;

fn argmax(values: impl Iterator<Item = f64>) -> Option<usize> {
    let mut best: Option<(usize, f64)> = None;
    for (i, v) in values.enumerate() {
        if best.is_none_or(|(_, b)| v > b) {
            best = Some((i, v));
        }
    }
    best.map(|(i, _)| i)
}

/// `(row, col)` pairs where each is the other's best match; ties go to the lower index.
/// With `floor`, pairs scoring below it are dropped. The result is a one-to-one matching.
pub fn mutual_nearest_neighbors(omega: &DenseMatrix, floor: Option<f64>) -> Vec<(usize, usize)> {
    if omega.rows() == 0 || omega.cols() == 0 {
        return Vec::new();
    }
    let col_best: Vec<usize> = (0..omega.cols())
        .map(|j| argmax((0..omega.rows()).map(|i| omega.row(i)[j])).expect("non-empty column"))
        .collect();
    (0..omega.rows())
        .filter_map(|i| {
            let j = argmax(omega.row(i).iter().copied())?;
            let keep = col_best[j] == i && floor.is_none_or(|f| omega.row(i)[j] >= f);
            keep.then_some((i, j))
        })
        .collect()
}

/// Pseudo-labels for entities outside `excluded`: mutual nearest neighbours between the
/// unaligned source and target pools under the early-fusion embedding.
pub fn iterative_augment(
    task: &AlignmentTask,
    params: &EncoderParams<DenseMatrix>,
    encoder: &EncoderConfig,
    excluded: &[(usize, usize)],
    floor: Option<f64>,
) -> Result<Vec<(usize, usize)>> {
    let used_s: BTreeSet<usize> = excluded.iter().map(|p| p.0).collect();
    let used_t: BTreeSet<usize> = excluded.iter().map(|p| p.1).collect();
    let pool_s: Vec<usize> = (0..task.n_source).filter(|i| !used_s.contains(i)).collect();
    let pool_t: Vec<usize> = (0..task.n_target).filter(|i| !used_t.contains(i)).collect();
    if pool_s.is_empty() || pool_t.is_empty() {
        return Ok(Vec::new());
    }
    let (_, joint) = encode(params, &task.input, encoder)?;
    let (hs, ht) = task.split_rows(&joint.ori);
    let omega = similarity_matrix(&hs.select_rows(&pool_s), &ht.select_rows(&pool_t));
    Ok(mutual_nearest_neighbors(&omega, floor)
        .into_iter()
        .map(|(i, j)| (pool_s[i], pool_t[j]))
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hand_example() {
        let omega = DenseMatrix::from_rows(&[vec![0.9, 0.8], vec![0.85, 0.1]]).unwrap();
        assert_eq!(mutual_nearest_neighbors(&omega, None), vec![(0, 0)]);
        assert!(mutual_nearest_neighbors(&omega, Some(0.95)).is_empty());
    }

    #[test]
    fn diagonal_dominant() {
        let omega = DenseMatrix::from_fn(5, 5, |i, j| if i == j { 1.0 } else { 0.1 * (i + j) as f64 / 10.0 });
        assert_eq!(
            mutual_nearest_neighbors(&omega, None),
            (0..5).map(|i| (i, i)).collect::<Vec<_>>()
        );
    }

    #[test]
    fn empty_pool() {
        assert!(mutual_nearest_neighbors(&DenseMatrix::zeros(0, 3), None).is_empty());
        assert!(mutual_nearest_neighbors(&DenseMatrix::zeros(3, 0), None).is_empty());
    }
}
