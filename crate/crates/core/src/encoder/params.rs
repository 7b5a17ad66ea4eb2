use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::encoder::Architecture;
use crate::mmkg::Modality;
use crate::tensor::DenseMatrix;

/// Graph-attention structure encoder: per-entity input embeddings, one source and one
/// destination attention vector per layer and head, and a diagonal output transform.
#[derive(Clone, Debug, PartialEq)]
pub struct StructureParams<T> {
    /// `n × d`.
    pub embeddings: T,
    /// `[layer][head]`, each `d × 1`.
    pub attn_src: Vec<Vec<T>>,
    pub attn_dst: Vec<Vec<T>>,
    /// Diagonal of `W_g` as a `1 × d` row.
    pub diag: T,
}

/// Linear projection of one feature modality. `weight` is `d_m × d`, so `h = x·weight + bias`.
#[derive(Clone, Debug, PartialEq)]
pub struct Projection<T> {
    pub weight: T,
    /// `1 × d`.
    pub bias: T,
}

/// Cross-modal attention block with its feed-forward sublayer.
#[derive(Clone, Debug, PartialEq)]
pub struct AttentionParams<T> {
    /// Per head, `d × d_h`.
    pub w_q: Vec<T>,
    pub w_k: Vec<T>,
    pub w_v: Vec<T>,
    /// `d × d`.
    pub w_o: T,
    pub ln1_gamma: T,
    pub ln1_beta: T,
    /// `d × d_in`.
    pub w_1: T,
    pub b_1: T,
    /// `d_in × d`.
    pub w_2: T,
    pub b_2: T,
    pub ln2_gamma: T,
    pub ln2_beta: T,
}

/// Every trainable tensor of the encoder. The type parameter is a matrix for stored
/// parameters or a tape handle during a forward pass.
#[derive(Clone, Debug, PartialEq)]
pub struct EncoderParams<T> {
    pub structure: Option<StructureParams<T>>,
    pub projections: BTreeMap<Modality, Projection<T>>,
    pub attention: AttentionParams<T>,
}

impl<T> EncoderParams<T> {
    /// Parameters with stable names, in the canonical order used for tape ids,
    /// optimizer state and checkpoints.
    pub fn named(&self) -> Vec<(String, &T)> {
        let mut out = Vec::new();
        if let Some(s) = &self.structure {
            out.push(("structure.embeddings".to_string(), &s.embeddings));
            for (l, heads) in s.attn_src.iter().enumerate() {
                for (h, t) in heads.iter().enumerate() {
                    out.push((format!("structure.attn_src.{l}.{h}"), t));
                }
            }
            for (l, heads) in s.attn_dst.iter().enumerate() {
                for (h, t) in heads.iter().enumerate() {
                    out.push((format!("structure.attn_dst.{l}.{h}"), t));
                }
            }
            out.push(("structure.diag".to_string(), &s.diag));
        }
        for (m, p) in &self.projections {
            out.push((format!("proj.{m}.weight"), &p.weight));
            out.push((format!("proj.{m}.bias"), &p.bias));
        }
        let a = &self.attention;
        for (name, list) in [("w_q", &a.w_q), ("w_k", &a.w_k), ("w_v", &a.w_v)] {
            for (i, t) in list.iter().enumerate() {
                out.push((format!("attn.{name}.{i}"), t));
            }
        }
        for (name, t) in [
            ("w_o", &a.w_o),
            ("ln1_gamma", &a.ln1_gamma),
            ("ln1_beta", &a.ln1_beta),
            ("w_1", &a.w_1),
            ("b_1", &a.b_1),
            ("w_2", &a.w_2),
            ("b_2", &a.b_2),
            ("ln2_gamma", &a.ln2_gamma),
            ("ln2_beta", &a.ln2_beta),
        ] {
            out.push((format!("attn.{name}"), t));
        }
        out
    }

    /// Applies `f` to every tensor in canonical order.
    pub fn map<U>(&self, mut f: impl FnMut(&T) -> U) -> EncoderParams<U> {
        let nested = |v: &Vec<Vec<T>>, f: &mut dyn FnMut(&T) -> U| -> Vec<Vec<U>> {
            v.iter().map(|hs| hs.iter().map(&mut *f).collect()).collect()
        };
        let structure = self.structure.as_ref().map(|s| {
            let embeddings = f(&s.embeddings);
            let attn_src = nested(&s.attn_src, &mut f);
            let attn_dst = nested(&s.attn_dst, &mut f);
            StructureParams {
                embeddings,
                attn_src,
                attn_dst,
                diag: f(&s.diag),
            }
        });
        let projections = self
            .projections
            .iter()
            .map(|(&m, p)| {
                let weight = f(&p.weight);
                (
                    m,
                    Projection {
                        weight,
                        bias: f(&p.bias),
                    },
                )
            })
            .collect();
        let a = &self.attention;
        let w_q = a.w_q.iter().map(&mut f).collect();
        let w_k = a.w_k.iter().map(&mut f).collect();
        let w_v = a.w_v.iter().map(&mut f).collect();
        let attention = AttentionParams {
            w_q,
            w_k,
            w_v,
            w_o: f(&a.w_o),
            ln1_gamma: f(&a.ln1_gamma),
            ln1_beta: f(&a.ln1_beta),
            w_1: f(&a.w_1),
            b_1: f(&a.b_1),
            w_2: f(&a.w_2),
            b_2: f(&a.b_2),
            ln2_gamma: f(&a.ln2_gamma),
            ln2_beta: f(&a.ln2_beta),
        };
        EncoderParams {
            structure,
            projections,
            attention,
        }
    }

    /// Rebuilds a parameter set with this one's layout from tensors in canonical order.
    ///
    /// # Panics
    /// If `values` holds fewer tensors than the layout needs.
    pub fn with_values<U>(&self, values: Vec<U>) -> EncoderParams<U> {
        let mut it = values.into_iter();
        let out = self.map(|_| it.next().expect("enough tensors for the layout"));
        assert!(it.next().is_none(), "more tensors than the layout holds");
        out
    }

    /// Mutable tensors in the same order as [`named`](Self::named).
    pub fn tensors_mut(&mut self) -> Vec<&mut T> {
        let mut out: Vec<&mut T> = Vec::new();
        if let Some(s) = &mut self.structure {
            out.push(&mut s.embeddings);
            out.extend(s.attn_src.iter_mut().flatten());
            out.extend(s.attn_dst.iter_mut().flatten());
            out.push(&mut s.diag);
        }
        for p in self.projections.values_mut() {
            out.push(&mut p.weight);
            out.push(&mut p.bias);
        }
        let a = &mut self.attention;
        out.extend(a.w_q.iter_mut());
        out.extend(a.w_k.iter_mut());
        out.extend(a.w_v.iter_mut());
        out.extend([
            &mut a.w_o,
            &mut a.ln1_gamma,
            &mut a.ln1_beta,
            &mut a.w_1,
            &mut a.b_1,
            &mut a.w_2,
            &mut a.b_2,
            &mut a.ln2_gamma,
            &mut a.ln2_beta,
        ]);
        out
    }

    pub fn tensor_count(&self) -> usize {
        self.named().len()
    }
}

impl EncoderParams<DenseMatrix> {
    /// Glorot-uniform weights from `seed`. Layer-norm scales and the structure diagonal
    /// start at one, biases and shifts at zero.
    pub fn init(arch: &Architecture, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let cfg = &arch.config;
        let d = cfg.dim;
        let d_h = cfg.head_dim();
        let d_in = cfg.ffn_dim();
        let mut glorot = |rows: usize, cols: usize| -> DenseMatrix {
            let a = (6.0 / (rows + cols) as f64).sqrt();
            DenseMatrix::from_fn(rows, cols, |_, _| rng.random_range(-a..=a))
        };
        let structure = cfg.modalities.contains(&Modality::Graph).then(|| {
            let embeddings = glorot(arch.entities, d);
            let mut vecs = || -> Vec<Vec<DenseMatrix>> {
                (0..cfg.gat_layers)
                    .map(|_| (0..cfg.gat_heads).map(|_| glorot(d, 1)).collect())
                    .collect()
            };
            let attn_src = vecs();
            let attn_dst = vecs();
            StructureParams {
                embeddings,
                attn_src,
                attn_dst,
                diag: DenseMatrix::filled(1, d, 1.0),
            }
        });
        let mut projections = BTreeMap::new();
        for &m in cfg.modalities.iter().filter(|&&m| m != Modality::Graph) {
            let d_m = arch.input_dims[&m];
            projections.insert(
                m,
                Projection {
                    weight: glorot(d_m, d),
                    bias: DenseMatrix::zeros(1, d),
                },
            );
        }
        let w_q = (0..cfg.heads).map(|_| glorot(d, d_h)).collect();
        let w_k = (0..cfg.heads).map(|_| glorot(d, d_h)).collect();
        let w_v = (0..cfg.heads).map(|_| glorot(d, d_h)).collect();
        let attention = AttentionParams {
            w_q,
            w_k,
            w_v,
            w_o: glorot(d, d),
            ln1_gamma: DenseMatrix::filled(1, d, 1.0),
            ln1_beta: DenseMatrix::zeros(1, d),
            w_1: glorot(d, d_in),
            b_1: DenseMatrix::zeros(1, d_in),
            w_2: glorot(d_in, d),
            b_2: DenseMatrix::zeros(1, d),
            ln2_gamma: DenseMatrix::filled(1, d, 1.0),
            ln2_beta: DenseMatrix::zeros(1, d),
        };
        Self {
            structure,
            projections,
            attention,
        }
    }

    pub fn parameter_count(&self) -> usize {
        self.named().iter().map(|(_, t)| t.len()).sum()
    }

    /// Largest absolute difference over all tensors; `None` when layouts differ.
    pub fn max_abs_diff(&self, other: &Self) -> Option<f64> {
        let (a, b) = (self.named(), other.named());
        if a.len() != b.len() {
            return None;
        }
        let mut worst: f64 = 0.0;
        for ((na, ta), (nb, tb)) in a.iter().zip(&b) {
            if na != nb || ta.shape() != tb.shape() {
                return None;
            }
            worst = worst.max(ta.max_abs_diff(tb));
        }
        Some(worst)
    }
}
