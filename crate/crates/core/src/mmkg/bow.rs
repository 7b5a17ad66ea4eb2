use std::collections::HashMap;
use std::hash::Hash;

use crate::tensor::DenseMatrix;

/// The `size` most frequent tokens across all documents. Equal frequencies are ordered
/// by the token's own ordering, smallest first.
pub fn bow_vocabulary<'a, T, I>(documents: I, size: usize) -> Vec<T>
where
    T: Ord + Hash + Clone + 'a,
    I: IntoIterator<Item = &'a [T]>,
{
    let mut freq: HashMap<T, usize> = HashMap::new();
    for doc in documents {
        for tok in doc {
            *freq.entry(tok.clone()).or_default() += 1;
        }
    }
    let mut ranked: Vec<(T, usize)> = freq.into_iter().collect();
    ranked.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    ranked.truncate(size);
    ranked.into_iter().map(|(t, _)| t).collect()
}

/// Raw counts over `vocabulary`, one row per document, each row L2-normalized
/// (rows without vocabulary hits stay zero).
pub fn bag_of_words<T: Hash + Eq>(documents: &[Vec<T>], vocabulary: &[T]) -> DenseMatrix {
    let index: HashMap<&T, usize> = vocabulary.iter().enumerate().map(|(i, t)| (t, i)).collect();
    let mut out = DenseMatrix::zeros(documents.len(), vocabulary.len());
    for (r, doc) in documents.iter().enumerate() {
        for tok in doc {
            if let Some(&c) = index.get(tok) {
                out[(r, c)] += 1.0;
            }
        }
    }
    out.row_normalized()
}
