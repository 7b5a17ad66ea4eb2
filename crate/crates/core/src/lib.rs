//! Multi-modal entity alignment driven by graph Dirichlet energy.
//!
//! The crate covers the full experiment path: a small numerical substrate with
//! reverse-mode differentiation ([`tensor`]), multi-modal knowledge graph ingestion and
//! synthetic benchmarks ([`mmkg`]), Dirichlet-energy diagnostics and bounds ([`energy`]),
//! the cross-modal encoder ([`encoder`]), contrastive training ([`training`]),
//! gradient-flow imputation of missing semantics ([`propagation`]), ranking metrics
//! ([`eval`]) and the end-to-end experiment driver ([`experiment`]).

#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod encoder;
pub mod energy;
pub mod error;
pub mod eval;
pub mod experiment;
pub mod mmkg;
pub mod propagation;
pub mod tensor;
pub mod training;

pub use error::{Error, Result};
pub use experiment::ExperimentConfig;
pub use mmkg::{Mmkg, Modality, SeedAlignments};
pub use tensor::{DenseMatrix, SparseMatrix};
