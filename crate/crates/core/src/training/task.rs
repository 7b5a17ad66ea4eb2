use std::collections::BTreeMap;
use std::sync::Arc;

use crate::encoder::EncoderInput;
use crate::error::{Error, Result};
use crate::mmkg::{build_operators, GraphOperators, Mmkg, Modality};
use crate::tensor::DenseMatrix;

/// Source and target graphs laid out as one block-diagonal graph: source entities take
/// rows `0..n_source`, target entity `t` takes row `n_source + t`. The encoder runs once
/// over the joint graph so both sides share every weight.
#[derive(Clone, Debug)]
pub struct AlignmentTask {
    pub n_source: usize,
    pub n_target: usize,
    pub source_ops: GraphOperators,
    pub target_ops: GraphOperators,
    /// Operators of the joint graph (no edges cross the two blocks).
    pub joint: GraphOperators,
    pub input: EncoderInput,
}

impl AlignmentTask {
    /// Stacks the feature tables of every requested feature modality; each must exist in
    /// both graphs with the same width.
    pub fn new(source: &Mmkg, target: &Mmkg, modalities: &[Modality], self_loops: bool) -> Result<Self> {
        let (ns, nt) = (source.entity_count(), target.entity_count());
        let source_ops = build_operators(source, self_loops);
        let target_ops = build_operators(target, self_loops);
        let edges = source
            .triples()
            .iter()
            .map(|t| (t.head, t.tail))
            .chain(target.triples().iter().map(|t| (ns + t.head, ns + t.tail)));
        let joint = GraphOperators::from_edges(ns + nt, edges, self_loops);

        let mut features = BTreeMap::new();
        for &m in modalities.iter().filter(|&&m| m != Modality::Graph) {
            let (a, b) = match (source.modality(m), target.modality(m)) {
                (Some(a), Some(b)) => (a, b),
                _ => return Err(Error::structural(format!("modality {m} is missing from one graph"))),
            };
            if a.dim() != b.dim() {
                return Err(Error::structural(format!(
                    "modality {m} has width {} in the source and {} in the target",
                    a.dim(),
                    b.dim()
                )));
            }
            features.insert(m, DenseMatrix::vconcat(&[&a.values, &b.values])?);
        }
        let input = EncoderInput {
            adjacency: Arc::clone(&joint.adjacency),
            features,
        };
        Ok(Self {
            n_source: ns,
            n_target: nt,
            source_ops,
            target_ops,
            joint,
            input,
        })
    }

    pub fn target_row(&self, t: usize) -> usize {
        self.n_source + t
    }

    /// Maps `(source, target)` entity pairs to joint row pairs.
    pub fn joint_pairs(&self, pairs: &[(usize, usize)]) -> Vec<(usize, usize)> {
        pairs.iter().map(|&(s, t)| (s, self.target_row(t))).collect()
    }

    /// Splits a joint embedding table into its source and target blocks.
    pub fn split_rows(&self, x: &DenseMatrix) -> (DenseMatrix, DenseMatrix) {
        let src: Vec<usize> = (0..self.n_source).collect();
        let tgt: Vec<usize> = (self.n_source..self.n_source + self.n_target).collect();
        (x.select_rows(&src), x.select_rows(&tgt))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mmkg::{ModalFeatures, Triple};

    fn graph(n: usize, edges: &[(usize, usize)], fill: f64) -> Mmkg {
        let triples = edges
            .iter()
            .map(|&(head, tail)| Triple {
                head,
                relation: 0,
                tail,
            })
            .collect();
        let features = [(
            Modality::Text,
            ModalFeatures::fully_present(DenseMatrix::filled(n, 2, fill)),
        )]
        .into_iter()
        .collect();
        Mmkg::new(n, triples, features, None).unwrap()
    }

    #[test]
    fn joint_graph_is_block_diagonal() {
        let task = AlignmentTask::new(
            &graph(3, &[(0, 1)], 1.0),
            &graph(2, &[(0, 1)], 2.0),
            &[Modality::Graph, Modality::Text],
            true,
        )
        .unwrap();
        assert_eq!(task.joint.node_count(), 5);
        for i in 0..3 {
            assert!(task.joint.adjacency.row(i).all(|(j, _)| j < 3));
        }
        let x = &task.input.features[&Modality::Text];
        assert_eq!(x.row(2)[0], 1.0);
        assert_eq!(x.row(3)[1], 2.0);
        assert_eq!(task.joint_pairs(&[(2, 1)]), vec![(2, 4)]);
        let (s, t) = task.split_rows(x);
        assert_eq!((s.rows(), t.rows()), (3, 2));
    }

    #[test]
    fn missing_modality_rejected() {
        let a = graph(2, &[], 0.0);
        let b = a.without_modality(Modality::Text);
        assert!(AlignmentTask::new(&a, &b, &[Modality::Text], true).is_err());
        assert!(AlignmentTask::new(&a, &b, &[Modality::Graph], true).is_ok());
    }
}
