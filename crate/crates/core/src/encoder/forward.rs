use std::sync::Arc;

use crate::encoder::{
    AttentionParams, EncoderConfig, EncoderInput, EncoderParams, JointEmbeddings, ModalEmbeddings, Projection,
    StructureParams,
};
use crate::error::{Error, Result};
use crate::mmkg::Modality;
use crate::tensor::{DenseMatrix, SparseMatrix, Tape, Var};

/// Handles of one forward pass recorded on a tape.
#[derive(Clone, Debug)]
pub struct ForwardVars {
    pub modalities: Vec<Modality>,
    pub h: Vec<Var>,
    pub h_att: Vec<Var>,
    pub beta: Vec<Vec<Var>>,
    pub confidence: Var,
    pub h_ori: Var,
    pub h_fus: Var,
}

impl ForwardVars {
    /// Unweighted concatenation of the pre-attention embeddings.
    pub fn h_concat(&self, tape: &mut Tape) -> Result<Var> {
        tape.concat_cols(&self.h)
    }
}

fn leaky_relu(tape: &mut Tape, x: Var, slope: f64) -> Var {
    let pos = tape.relu(x);
    let flipped = tape.scale(x, -1.0);
    let neg = tape.relu(flipped);
    let neg = tape.scale(neg, slope);
    tape.sub(pos, neg).expect("same shape")
}

fn structure_tape(
    tape: &mut Tape,
    s: &StructureParams<Var>,
    pattern: &Arc<SparseMatrix>,
    cfg: &EncoderConfig,
) -> Result<Var> {
    let mut x = s.embeddings;
    for (src, dst) in s.attn_src.iter().zip(&s.attn_dst) {
        let mut acc: Option<Var> = None;
        for (a_src, a_dst) in src.iter().zip(dst) {
            let ss = tape.matmul(x, *a_src)?;
            let sd = tape.matmul(x, *a_dst)?;
            let e = tape.edge_scores(ss, sd, pattern)?;
            let e = leaky_relu(tape, e, cfg.leaky_slope);
            let alpha = tape.edge_softmax(e, pattern)?;
            let out = tape.edge_aggregate(alpha, x, pattern)?;
            acc = Some(match acc {
                Some(a) => tape.add(a, out)?,
                None => out,
            });
        }
        let mean = tape.scale(acc.expect("at least one head"), 1.0 / src.len() as f64);
        x = tape.relu(mean);
    }
    tape.mul_row(x, s.diag)
}

fn projection_tape(tape: &mut Tape, x: Var, p: &Projection<Var>) -> Result<Var> {
    let y = tape.matmul(x, p.weight)?;
    tape.add_row(y, p.bias)
}

fn layer_norm_affine(tape: &mut Tape, x: Var, gamma: Var, beta: Var, eps: f64) -> Result<Var> {
    let n = tape.layer_norm(x, eps);
    let s = tape.mul_row(n, gamma)?;
    tape.add_row(s, beta)
}

fn attention_tape(tape: &mut Tape, a: &AttentionParams<Var>, h: &[Var], eps: f64) -> Result<(Vec<Var>, Vec<Vec<Var>>)> {
    let k = h.len();
    let heads = a.w_q.len();
    let d_h = tape.shape(a.w_q[0]).1;
    let ones = tape.constant(DenseMatrix::filled(d_h, 1, 1.0));
    let temp = 1.0 / (d_h as f64).sqrt();
    let mut beta = Vec::with_capacity(heads);
    let mut head_out: Vec<Vec<Var>> = vec![Vec::with_capacity(heads); k];
    for i in 0..heads {
        let q: Vec<Var> = h.iter().map(|&x| tape.matmul(x, a.w_q[i])).collect::<Result<_>>()?;
        let kk: Vec<Var> = h.iter().map(|&x| tape.matmul(x, a.w_k[i])).collect::<Result<_>>()?;
        let v: Vec<Var> = h.iter().map(|&x| tape.matmul(x, a.w_v[i])).collect::<Result<_>>()?;
        let mut beta_i = Vec::with_capacity(k);
        for m in 0..k {
            let mut scores = Vec::with_capacity(k);
            for kj in &kk {
                let prod = tape.mul(q[m], *kj)?;
                let dot = tape.matmul(prod, ones)?;
                scores.push(tape.scale(dot, temp));
            }
            let s = tape.concat_cols(&scores)?;
            let b = tape.softmax_rows(s);
            let mut out: Option<Var> = None;
            for (j, vj) in v.iter().enumerate() {
                let w = tape.slice_cols(b, j, 1)?;
                let term = tape.mul_col(*vj, w)?;
                out = Some(match out {
                    Some(o) => tape.add(o, term)?,
                    None => term,
                });
            }
            head_out[m].push(out.expect("at least one modality"));
            beta_i.push(b);
        }
        beta.push(beta_i);
    }
    let mut post = Vec::with_capacity(k);
    for (m, outs) in head_out.iter().enumerate() {
        let cat = if outs.len() == 1 {
            outs[0]
        } else {
            tape.concat_cols(outs)?
        };
        let proj = tape.matmul(cat, a.w_o)?;
        let res = tape.add(proj, h[m])?;
        let z = layer_norm_affine(tape, res, a.ln1_gamma, a.ln1_beta, eps)?;
        let f = tape.matmul(z, a.w_1)?;
        let f = tape.add_row(f, a.b_1)?;
        let f = tape.relu(f);
        let f = tape.matmul(f, a.w_2)?;
        let f = tape.add_row(f, a.b_2)?;
        let res = tape.add(z, f)?;
        post.push(layer_norm_affine(tape, res, a.ln2_gamma, a.ln2_beta, eps)?);
    }
    Ok((post, beta))
}

/// `softmax_j( Σ_heads Σ_m β[m][j] / √(|M|·N_h) )` per entity: the attention each
/// modality receives from all modalities, summed over heads.
fn confidence_tape(tape: &mut Tape, beta: &[Vec<Var>]) -> Result<Var> {
    let heads = beta.len();
    let k = beta[0].len();
    let mut cols = Vec::with_capacity(k);
    for j in 0..k {
        let mut acc: Option<Var> = None;
        for b in beta.iter().flatten() {
            let c = tape.slice_cols(*b, j, 1)?;
            acc = Some(match acc {
                Some(a) => tape.add(a, c)?,
                None => c,
            });
        }
        cols.push(acc.expect("non-empty"));
    }
    let s = tape.concat_cols(&cols)?;
    let s = tape.scale(s, 1.0 / ((k * heads) as f64).sqrt());
    Ok(tape.softmax_rows(s))
}

fn fuse_tape(tape: &mut Tape, h: &[Var], confidence: Var) -> Result<Var> {
    let mut parts = Vec::with_capacity(h.len());
    for (m, &x) in h.iter().enumerate() {
        let w = tape.slice_cols(confidence, m, 1)?;
        parts.push(tape.mul_col(x, w)?);
    }
    tape.concat_cols(&parts)
}

/// Records the full encoder on `tape` for parameters already placed on it.
pub fn forward_tape(
    tape: &mut Tape,
    params: &EncoderParams<Var>,
    input: &EncoderInput,
    cfg: &EncoderConfig,
) -> Result<ForwardVars> {
    let modalities = cfg.ordered_modalities();
    let mut h = Vec::with_capacity(modalities.len());
    for &m in &modalities {
        let v = if m == Modality::Graph {
            let s = params
                .structure
                .as_ref()
                .ok_or_else(|| Error::structural("structure parameters missing"))?;
            structure_tape(tape, s, &input.adjacency, cfg)?
        } else {
            let x = input
                .features
                .get(&m)
                .ok_or_else(|| Error::structural(format!("input lacks modality {m}")))?;
            if x.rows() != input.entity_count() {
                return Err(Error::structural(format!(
                    "modality {m} has {} rows for {} entities",
                    x.rows(),
                    input.entity_count()
                )));
            }
            let p = params
                .projections
                .get(&m)
                .ok_or_else(|| Error::structural(format!("no projection for modality {m}")))?;
            let xv = tape.constant(x.clone());
            projection_tape(tape, xv, p)?
        };
        h.push(v);
    }
    let (h_att, beta) = attention_tape(tape, &params.attention, &h, cfg.ln_eps)?;
    let confidence = confidence_tape(tape, &beta)?;
    let h_ori = fuse_tape(tape, &h, confidence)?;
    let h_fus = fuse_tape(tape, &h_att, confidence)?;
    Ok(ForwardVars {
        modalities,
        h,
        h_att,
        beta,
        confidence,
        h_ori,
        h_fus,
    })
}

/// Forward pass on stored parameters.
pub fn encode(
    params: &EncoderParams<DenseMatrix>,
    input: &EncoderInput,
    cfg: &EncoderConfig,
) -> Result<(ModalEmbeddings, JointEmbeddings)> {
    let mut tape = Tape::new();
    let vars = params.map(|m| tape.constant(m.clone()));
    let f = forward_tape(&mut tape, &vars, input, cfg)?;
    let val = |v: &Var| tape.value(*v).clone();
    Ok((
        ModalEmbeddings {
            modalities: f.modalities.clone(),
            h: f.h.iter().map(val).collect(),
            h_att: f.h_att.iter().map(val).collect(),
            beta: f.beta.iter().map(|b| b.iter().map(val).collect()).collect(),
            confidence: val(&f.confidence),
        },
        JointEmbeddings {
            ori: val(&f.h_ori),
            fus: val(&f.h_fus),
        },
    ))
}

/// Structure embedding `h^g` for the attention pattern `pattern` (self-loops included).
pub fn embed_structure(
    pattern: &Arc<SparseMatrix>,
    params: &StructureParams<DenseMatrix>,
    cfg: &EncoderConfig,
) -> Result<DenseMatrix> {
    if params.embeddings.rows() != pattern.rows() || !pattern.is_square() {
        return Err(Error::structural("structure embeddings do not match the graph"));
    }
    let mut tape = Tape::new();
    let s = StructureParams {
        embeddings: tape.constant(params.embeddings.clone()),
        attn_src: params
            .attn_src
            .iter()
            .map(|l| l.iter().map(|t| tape.constant(t.clone())).collect())
            .collect(),
        attn_dst: params
            .attn_dst
            .iter()
            .map(|l| l.iter().map(|t| tape.constant(t.clone())).collect())
            .collect(),
        diag: tape.constant(params.diag.clone()),
    };
    let out = structure_tape(&mut tape, &s, pattern, cfg)?;
    Ok(tape.value(out).clone())
}

/// `h^m = x^m·W + b` with `W` stored `d_m × d`.
pub fn embed_modality(x: &DenseMatrix, params: &Projection<DenseMatrix>) -> Result<DenseMatrix> {
    if x.cols() != params.weight.rows() {
        return Err(Error::structural(format!(
            "{} input columns for a {}-row projection",
            x.cols(),
            params.weight.rows()
        )));
    }
    let mut tape = Tape::new();
    let xv = tape.constant(x.clone());
    let p = Projection {
        weight: tape.constant(params.weight.clone()),
        bias: tape.constant(params.bias.clone()),
    };
    let out = projection_tape(&mut tape, xv, &p)?;
    Ok(tape.value(out).clone())
}

/// Result of [`cross_modal_attention`].
#[derive(Clone, Debug, PartialEq)]
pub struct AttentionOutput {
    pub h_att: Vec<DenseMatrix>,
    /// `[head][query modality]`, each `n × |M|`.
    pub beta: Vec<Vec<DenseMatrix>>,
}

/// Attention of every entity over its own modality embeddings `h` (one `n × d` matrix
/// per modality), followed by residual layer norms and the feed-forward sublayer.
pub fn cross_modal_attention(
    h: &[DenseMatrix],
    params: &AttentionParams<DenseMatrix>,
    ln_eps: f64,
) -> Result<AttentionOutput> {
    if h.is_empty() || params.w_q.is_empty() {
        return Err(Error::structural("attention needs at least one modality and head"));
    }
    let mut tape = Tape::new();
    let hv: Vec<Var> = h.iter().map(|m| tape.constant(m.clone())).collect();
    let wrapped = EncoderParams {
        structure: None,
        projections: Default::default(),
        attention: params.clone(),
    };
    let a = wrapped.map(|m| tape.constant(m.clone())).attention;
    let (post, beta) = attention_tape(&mut tape, &a, &hv, ln_eps)?;
    Ok(AttentionOutput {
        h_att: post.iter().map(|v| tape.value(*v).clone()).collect(),
        beta: beta
            .iter()
            .map(|b| b.iter().map(|v| tape.value(*v).clone()).collect())
            .collect(),
    })
}

/// Confidence weights `w̃` (`n × |M|`) from attention weights `[head][query]`.
pub fn modal_confidence(beta: &[Vec<DenseMatrix>]) -> Result<DenseMatrix> {
    if beta.is_empty() || beta[0].is_empty() {
        return Err(Error::structural("confidence needs attention weights"));
    }
    let k = beta[0].len();
    if beta.iter().flatten().any(|b| b.cols() != k) || beta.iter().any(|b| b.len() != k) {
        return Err(Error::structural(
            "attention weights must be |M| matrices of width |M| per head",
        ));
    }
    let mut tape = Tape::new();
    let vars: Vec<Vec<Var>> = beta
        .iter()
        .map(|b| b.iter().map(|m| tape.constant(m.clone())).collect())
        .collect();
    let out = confidence_tape(&mut tape, &vars)?;
    Ok(tape.value(out).clone())
}

/// Concatenation over modalities of `w̃^m`-scaled embeddings.
pub fn fuse(h: &[DenseMatrix], confidence: &DenseMatrix) -> Result<DenseMatrix> {
    if confidence.cols() != h.len() {
        return Err(Error::structural(format!(
            "{} confidence columns for {} modalities",
            confidence.cols(),
            h.len()
        )));
    }
    let mut tape = Tape::new();
    let hv: Vec<Var> = h.iter().map(|m| tape.constant(m.clone())).collect();
    let c = tape.constant(confidence.clone());
    let out = fuse_tape(&mut tape, &hv, c)?;
    Ok(tape.value(out).clone())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mmkg::GraphOperators;
    use crate::tensor::softmax;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn rand_mat(rng: &mut ChaCha8Rng, r: usize, c: usize) -> DenseMatrix {
        DenseMatrix::from_fn(r, c, |_, _| rng.random_range(-1.0..1.0))
    }

    fn attention_params(rng: &mut ChaCha8Rng, d: usize, heads: usize) -> AttentionParams<DenseMatrix> {
        let d_h = d / heads;
        AttentionParams {
            w_q: (0..heads).map(|_| rand_mat(rng, d, d_h)).collect(),
            w_k: (0..heads).map(|_| rand_mat(rng, d, d_h)).collect(),
            w_v: (0..heads).map(|_| rand_mat(rng, d, d_h)).collect(),
            w_o: rand_mat(rng, d, d),
            ln1_gamma: rand_mat(rng, 1, d),
            ln1_beta: rand_mat(rng, 1, d),
            w_1: rand_mat(rng, d, 2 * d),
            b_1: rand_mat(rng, 1, 2 * d),
            w_2: rand_mat(rng, 2 * d, d),
            b_2: rand_mat(rng, 1, d),
            ln2_gamma: rand_mat(rng, 1, d),
            ln2_beta: rand_mat(rng, 1, d),
        }
    }

    fn structure(rng: &mut ChaCha8Rng, n: usize, d: usize) -> StructureParams<DenseMatrix> {
        StructureParams {
            embeddings: rand_mat(rng, n, d),
            attn_src: (0..2).map(|_| (0..2).map(|_| rand_mat(rng, d, 1)).collect()).collect(),
            attn_dst: (0..2).map(|_| (0..2).map(|_| rand_mat(rng, d, 1)).collect()).collect(),
            diag: rand_mat(rng, 1, d),
        }
    }

    #[test]
    fn single_node_attention_is_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let ops = GraphOperators::from_edges(1, [], true);
        let p = structure(&mut rng, 1, 3);
        let out = embed_structure(&ops.adjacency, &p, &EncoderConfig::default()).unwrap();
        let expected: Vec<f64> = p
            .embeddings
            .row(0)
            .iter()
            .zip(p.diag.row(0))
            .map(|(x, w)| x.max(0.0) * w)
            .collect();
        assert!(out.row(0).iter().zip(&expected).all(|(a, b)| (a - b).abs() < 1e-15));
    }

    #[test]
    fn disconnected_nodes_are_independent() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let ops = GraphOperators::from_edges(2, [], true);
        let p = structure(&mut rng, 2, 4);
        let out = embed_structure(&ops.adjacency, &p, &EncoderConfig::default()).unwrap();
        let mut q = p.clone();
        q.embeddings.row_mut(1).iter_mut().for_each(|x| *x *= -3.0);
        let out2 = embed_structure(&ops.adjacency, &q, &EncoderConfig::default()).unwrap();
        assert_eq!(out.row(0), out2.row(0));
    }

    #[test]
    fn symmetric_triangle_gives_equal_rows() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let ops = GraphOperators::from_edges(3, [(0, 1), (1, 2), (2, 0)], true);
        let mut p = structure(&mut rng, 3, 4);
        let row = p.embeddings.row(0).to_vec();
        for i in 1..3 {
            p.embeddings.row_mut(i).copy_from_slice(&row);
        }
        let out = embed_structure(&ops.adjacency, &p, &EncoderConfig::default()).unwrap();
        assert!(out.max_abs_diff(&DenseMatrix::from_fn(3, 4, |_, j| out[(0, j)])) < 1e-15);
    }

    #[test]
    fn projection_examples() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let x = rand_mat(&mut rng, 5, 3);
        let id = Projection {
            weight: DenseMatrix::identity(3),
            bias: DenseMatrix::zeros(1, 3),
        };
        assert_eq!(embed_modality(&x, &id).unwrap(), x);
        let p = Projection {
            weight: rand_mat(&mut rng, 3, 2),
            bias: rand_mat(&mut rng, 1, 2),
        };
        let zero = embed_modality(&DenseMatrix::zeros(4, 3), &p).unwrap();
        assert!((0..4).all(|i| zero.row(i) == p.bias.row(0)));
        let got = embed_modality(&x, &p).unwrap();
        for i in 0..5 {
            for j in 0..2 {
                let mut s = 0.0;
                for k in 0..3 {
                    s += x[(i, k)] * p.weight[(k, j)];
                }
                s += p.bias[(0, j)];
                assert!((got[(i, j)] - s).abs() < 1e-12);
            }
        }
        assert!(embed_modality(&DenseMatrix::zeros(1, 4), &p).is_err());
    }

    #[test]
    fn identical_modalities_attend_uniformly() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let a = attention_params(&mut rng, 4, 2);
        let x = rand_mat(&mut rng, 3, 4);
        let out = cross_modal_attention(&[x.clone(), x.clone(), x.clone(), x], &a, 1e-5).unwrap();
        for b in out.beta.iter().flatten() {
            assert!(b.data().iter().all(|v| (v - 0.25).abs() < 1e-15));
        }
    }

    #[test]
    fn zero_query_key_weights_attend_uniformly() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let mut a = attention_params(&mut rng, 4, 1);
        a.w_q[0] = DenseMatrix::zeros(4, 4);
        a.w_k[0] = DenseMatrix::zeros(4, 4);
        let h: Vec<DenseMatrix> = (0..3).map(|_| rand_mat(&mut rng, 5, 4)).collect();
        let out = cross_modal_attention(&h, &a, 1e-5).unwrap();
        for b in &out.beta[0] {
            assert!(b.data().iter().all(|&v| v == 1.0 / 3.0));
        }
    }

    /// Entity-by-entity scalar loops, written without the tape.
    fn scalar_attention(
        h: &[DenseMatrix],
        a: &AttentionParams<DenseMatrix>,
        eps: f64,
    ) -> (Vec<DenseMatrix>, Vec<Vec<DenseMatrix>>) {
        let k = h.len();
        let n = h[0].rows();
        let d = h[0].cols();
        let heads = a.w_q.len();
        let d_h = d / heads;
        let lin = |x: &[f64], w: &DenseMatrix| -> Vec<f64> {
            (0..w.cols())
                .map(|c| (0..x.len()).map(|r| x[r] * w[(r, c)]).sum())
                .collect()
        };
        let ln = |x: &[f64], g: &DenseMatrix, b: &DenseMatrix| -> Vec<f64> {
            let mu = x.iter().sum::<f64>() / x.len() as f64;
            let var = x.iter().map(|v| (v - mu).powi(2)).sum::<f64>() / x.len() as f64;
            x.iter()
                .enumerate()
                .map(|(j, v)| (v - mu) / (var + eps).sqrt() * g[(0, j)] + b[(0, j)])
                .collect()
        };
        let mut post = vec![DenseMatrix::zeros(n, d); k];
        let mut beta = vec![vec![DenseMatrix::zeros(n, k); k]; heads];
        for e in 0..n {
            let mut concat = vec![Vec::new(); k];
            for i in 0..heads {
                let q: Vec<Vec<f64>> = (0..k).map(|m| lin(h[m].row(e), &a.w_q[i])).collect();
                let kk: Vec<Vec<f64>> = (0..k).map(|m| lin(h[m].row(e), &a.w_k[i])).collect();
                let v: Vec<Vec<f64>> = (0..k).map(|m| lin(h[m].row(e), &a.w_v[i])).collect();
                for m in 0..k {
                    let scores: Vec<f64> = (0..k)
                        .map(|j| q[m].iter().zip(&kk[j]).map(|(x, y)| x * y).sum::<f64>() / (d_h as f64).sqrt())
                        .collect();
                    let b = softmax(&scores);
                    for j in 0..k {
                        beta[i][m][(e, j)] = b[j];
                    }
                    let o: Vec<f64> = (0..d_h).map(|c| (0..k).map(|j| b[j] * v[j][c]).sum()).collect();
                    concat[m].extend(o);
                }
            }
            for m in 0..k {
                let proj = lin(&concat[m], &a.w_o);
                let res: Vec<f64> = proj.iter().zip(h[m].row(e)).map(|(x, y)| x + y).collect();
                let z = ln(&res, &a.ln1_gamma, &a.ln1_beta);
                let f1: Vec<f64> = lin(&z, &a.w_1)
                    .iter()
                    .enumerate()
                    .map(|(c, v)| (v + a.b_1[(0, c)]).max(0.0))
                    .collect();
                let f2: Vec<f64> = lin(&f1, &a.w_2)
                    .iter()
                    .enumerate()
                    .map(|(c, v)| v + a.b_2[(0, c)])
                    .collect();
                let res2: Vec<f64> = z.iter().zip(&f2).map(|(x, y)| x + y).collect();
                post[m]
                    .row_mut(e)
                    .copy_from_slice(&ln(&res2, &a.ln2_gamma, &a.ln2_beta));
            }
        }
        (post, beta)
    }

    #[test]
    fn attention_matches_scalar_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for heads in [1, 2] {
            let a = attention_params(&mut rng, 4, heads);
            let h: Vec<DenseMatrix> = (0..3).map(|_| rand_mat(&mut rng, 2, 4)).collect();
            let out = cross_modal_attention(&h, &a, 1e-5).unwrap();
            let (post, beta) = scalar_attention(&h, &a, 1e-5);
            for (x, y) in out.h_att.iter().zip(&post) {
                assert!(x.max_abs_diff(y) < 1e-10, "{}", x.max_abs_diff(y));
            }
            for (x, y) in out.beta.iter().flatten().zip(beta.iter().flatten()) {
                assert!(x.max_abs_diff(y) < 1e-10);
                for r in 0..x.rows() {
                    assert!((x.row(r).iter().sum::<f64>() - 1.0).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn confidence_examples() {
        let uniform = vec![vec![DenseMatrix::filled(2, 4, 0.25); 4]];
        let c = modal_confidence(&uniform).unwrap();
        assert!(c.data().iter().all(|&v| (v - 0.25).abs() < 1e-15));

        // every query attends fully to modality 0: received sums (4, 0, 0, 0)
        let mut one_hot = DenseMatrix::zeros(1, 4);
        one_hot[(0, 0)] = 1.0;
        let c = modal_confidence(&[vec![one_hot; 4]]).unwrap();
        let e2 = 2f64.exp();
        let expected = [e2 / (e2 + 3.0), 1.0 / (e2 + 3.0), 1.0 / (e2 + 3.0), 1.0 / (e2 + 3.0)];
        for (a, b) in c.row(0).iter().zip(expected) {
            assert!((a - b).abs() < 1e-15);
        }
        assert!((c[(0, 0)] - 0.711_235).abs() < 1e-6);
        assert!((c.row(0).iter().sum::<f64>() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn fusion_examples() {
        let h1 = DenseMatrix::from_rows(&[vec![2.0, 0.0]]).unwrap();
        let h2 = DenseMatrix::from_rows(&[vec![0.0, 2.0]]).unwrap();
        let half = DenseMatrix::filled(1, 2, 0.5);
        assert_eq!(
            fuse(&[h1.clone(), h2.clone()], &half).unwrap().row(0),
            &[1.0, 0.0, 0.0, 1.0]
        );
        let one_hot = DenseMatrix::from_rows(&[vec![1.0, 0.0]]).unwrap();
        assert_eq!(fuse(&[h1.clone(), h2], &one_hot).unwrap().row(0), &[2.0, 0.0, 0.0, 0.0]);

        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let h: Vec<DenseMatrix> = (0..3).map(|_| rand_mat(&mut rng, 4, 2)).collect();
        let w = rand_mat(&mut rng, 4, 3);
        let out = fuse(&h, &w).unwrap();
        for (m, hm) in h.iter().enumerate() {
            for i in 0..4 {
                for j in 0..2 {
                    assert!((out[(i, 2 * m + j)] - w[(i, m)] * hm[(i, j)]).abs() < 1e-12);
                }
            }
        }
    }
}
