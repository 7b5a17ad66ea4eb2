//! Multi-modal entity encoder: graph-attention structure embedding, per-modality linear
//! projections, cross-modal attention with confidence weights, and early/late fusion.

mod checkpoint;
mod forward;
mod params;

use std::collections::BTreeMap;
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::mmkg::Modality;
use crate::tensor::{DenseMatrix, SparseMatrix};

pub use checkpoint::{load_checkpoint, read_checkpoint, save_checkpoint, write_checkpoint};
pub use forward::{
    cross_modal_attention, embed_modality, embed_structure, encode, forward_tape, fuse, modal_confidence,
    AttentionOutput, ForwardVars,
};
pub use params::{AttentionParams, EncoderParams, Projection, StructureParams};

#[derive(Clone, Debug, PartialEq)]
pub struct EncoderConfig {
    /// Shared hidden width `d`.
    pub dim: usize,
    /// Cross-modal attention heads `N_h`; must divide `dim`.
    pub heads: usize,
    pub gat_heads: usize,
    pub gat_layers: usize,
    /// Feed-forward inner width; `None` means `4·dim`.
    pub ffn_dim: Option<usize>,
    pub leaky_slope: f64,
    pub ln_eps: f64,
    /// Active modalities, kept in canonical `g, r, t, v` order.
    pub modalities: Vec<Modality>,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        Self {
            dim: 300,
            heads: 1,
            gat_heads: 2,
            gat_layers: 2,
            ffn_dim: None,
            leaky_slope: 0.2,
            ln_eps: 1e-5,
            modalities: Modality::ALL.to_vec(),
        }
    }
}

impl EncoderConfig {
    pub fn head_dim(&self) -> usize {
        self.dim / self.heads.max(1)
    }

    pub fn ffn_dim(&self) -> usize {
        self.ffn_dim.unwrap_or(4 * self.dim)
    }

    pub fn validate(&self) -> Result<()> {
        if self.dim == 0 || self.heads == 0 || !self.dim.is_multiple_of(self.heads) {
            return Err(Error::Config(format!(
                "dim {} must be a positive multiple of heads {}",
                self.dim, self.heads
            )));
        }
        if self.modalities.is_empty() {
            return Err(Error::Config("at least one modality is required".into()));
        }
        if self.modalities.contains(&Modality::Graph) && (self.gat_heads == 0 || self.gat_layers == 0) {
            return Err(Error::Config(
                "structure encoder needs at least one layer and head".into(),
            ));
        }
        if self.ffn_dim == Some(0) {
            return Err(Error::Config("ffn_dim must be positive".into()));
        }
        Ok(())
    }

    /// Modalities deduplicated and in canonical order.
    pub fn ordered_modalities(&self) -> Vec<Modality> {
        let mut m = self.modalities.clone();
        m.sort_unstable();
        m.dedup();
        m
    }
}

/// Everything that fixes parameter shapes.
#[derive(Clone, Debug, PartialEq)]
pub struct Architecture {
    pub config: EncoderConfig,
    pub entities: usize,
    /// Input width of every feature modality.
    pub input_dims: BTreeMap<Modality, usize>,
}

impl Architecture {
    pub fn new(mut config: EncoderConfig, input: &EncoderInput) -> Result<Self> {
        config.validate()?;
        config.modalities = config.ordered_modalities();
        let mut input_dims = BTreeMap::new();
        for &m in config.modalities.iter().filter(|&&m| m != Modality::Graph) {
            let x = input
                .features
                .get(&m)
                .ok_or_else(|| Error::structural(format!("input lacks modality {m}")))?;
            input_dims.insert(m, x.cols());
        }
        Ok(Self {
            config,
            entities: input.entity_count(),
            input_dims,
        })
    }
}

/// Encoder input: the attention pattern (with self-loops) and one feature table per
/// feature modality, all over the same entity rows.
#[derive(Clone, Debug)]
pub struct EncoderInput {
    pub adjacency: Arc<SparseMatrix>,
    pub features: BTreeMap<Modality, DenseMatrix>,
}

impl EncoderInput {
    pub fn entity_count(&self) -> usize {
        self.adjacency.rows()
    }
}

/// Per-modality embeddings before and after cross-modal attention.
#[derive(Clone, Debug, PartialEq)]
pub struct ModalEmbeddings {
    pub modalities: Vec<Modality>,
    /// `h^m`, `n × d` each.
    pub h: Vec<DenseMatrix>,
    /// `ĥ^ATT_m`.
    pub h_att: Vec<DenseMatrix>,
    /// `[head][query modality]`, each `n × |M|` with rows summing to one.
    pub beta: Vec<Vec<DenseMatrix>>,
    /// `w̃`, `n × |M|` with rows summing to one.
    pub confidence: DenseMatrix,
}

/// Concatenated joint embeddings, `n × |M|·d`.
#[derive(Clone, Debug, PartialEq)]
pub struct JointEmbeddings {
    /// Early fusion of the confidence-weighted `h^m`; the evaluation representation.
    pub ori: DenseMatrix,
    /// Late fusion of the confidence-weighted `ĥ^ATT_m`.
    pub fus: DenseMatrix,
}
