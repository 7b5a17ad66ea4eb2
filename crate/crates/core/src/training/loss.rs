//! Contrastive alignment losses with in-batch negatives.
//!
//! For a batch of aligned pairs `(i, i')`, the negatives of a source entity `i` are every
//! other source entity of the batch and every target entity except `i'`; target entities
//! are treated symmetrically.

use std::collections::BTreeMap;
use std::sync::Arc;

use serde::Serialize;

use crate::encoder::ForwardVars;
use crate::error::{Error, Result};
use crate::mmkg::Modality;
use crate::tensor::{DenseMatrix, SparseMatrix, Tape, Var};

/// Logit added to excluded entries before the row softmax. Finite so the tape stays finite,
/// large enough that `exp` underflows to exactly zero.
const MASKED: f64 = -1e30;

/// Which terms of the objective are active.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub struct LossTerms {
    /// Task loss on the early-fusion embedding.
    pub task0: bool,
    /// Task loss on the late-fusion embedding.
    pub taskk: bool,
    /// Per-modality losses on the embeddings before cross-modal attention.
    pub modal_km1: bool,
    /// Per-modality losses on the embeddings after cross-modal attention.
    pub modal_k: bool,
}

impl Default for LossTerms {
    fn default() -> Self {
        Self {
            task0: true,
            taskk: true,
            modal_km1: true,
            modal_k: true,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct LossConfig {
    pub temperature: f64,
    /// Compare L2-normalised embeddings (cosine) instead of raw inner products.
    pub normalize: bool,
    /// Use `−φ·log p̄` instead of `−log(φ·p̄)`.
    pub phi_outside: bool,
    pub phi_floor: f64,
    pub terms: LossTerms,
    /// Hinge coefficient on the energy constraint; `None` monitors only.
    pub penalty: Option<f64>,
    pub c_min: f64,
    pub c_max: f64,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            temperature: 0.1,
            normalize: true,
            phi_outside: false,
            phi_floor: 1e-6,
            terms: LossTerms::default(),
            penalty: None,
            c_min: crate::energy::DEFAULT_C_MIN,
            c_max: crate::energy::DEFAULT_C_MAX,
        }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.temperature > 0.0) || !self.temperature.is_finite() {
            return Err(Error::Config(format!(
                "temperature must be positive, got {}",
                self.temperature
            )));
        }
        if !(self.phi_floor > 0.0) {
            return Err(Error::Config("phi floor must be positive".into()));
        }
        if !(self.c_min >= 0.0 && self.c_max >= 0.0) {
            return Err(Error::Config("c_min and c_max must be non-negative".into()));
        }
        if matches!(self.penalty, Some(c) if !(c >= 0.0)) {
            return Err(Error::Config("penalty coefficient must be non-negative".into()));
        }
        Ok(())
    }
}

/// Values of every objective term for one batch.
#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct LossBreakdown {
    pub task0: f64,
    pub taskk: f64,
    pub modal_km1: BTreeMap<Modality, f64>,
    pub modal_k: BTreeMap<Modality, f64>,
    pub penalty: f64,
    pub total: f64,
    /// Pairs whose confidence weight was raised to the floor.
    pub phi_floored: usize,
}

impl LossBreakdown {
    pub fn parts_sum(&self) -> f64 {
        self.task0
            + self.taskk
            + self.modal_km1.values().sum::<f64>()
            + self.modal_k.values().sum::<f64>()
            + self.penalty
    }

    /// Names of the terms that are not finite.
    pub fn non_finite_terms(&self) -> Vec<String> {
        let mut bad = Vec::new();
        let mut check = |name: String, v: f64| {
            if !v.is_finite() {
                bad.push(format!("{name}={v}"));
            }
        };
        check("task0".into(), self.task0);
        check("taskk".into(), self.taskk);
        for (m, &v) in &self.modal_km1 {
            check(format!("modal_km1.{m}"), v);
        }
        for (m, &v) in &self.modal_k {
            check(format!("modal_k.{m}"), v);
        }
        check("penalty".into(), self.penalty);
        bad
    }
}

/// `γ(a,b) = exp(⟨a,b⟩/τ)` and `p = γ(a,pos) / (γ(a,pos) + Σ γ(a,neg))`, evaluated in
/// log-space. Returns 1 when there are no negatives.
pub fn alignment_probability(anchor: &[f64], positive: &[f64], negatives: &[&[f64]], temperature: f64) -> f64 {
    if negatives.is_empty() {
        log::warn!("alignment probability with no negatives; using 1");
        return 1.0;
    }
    let dot = |b: &[f64]| anchor.iter().zip(b).map(|(x, y)| x * y).sum::<f64>() / temperature;
    let pos = dot(positive);
    let logits: Vec<f64> = negatives.iter().map(|n| dot(n)).chain([pos]).collect();
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let z: f64 = logits.iter().map(|l| (l - max).exp()).sum();
    (pos - max).exp() / z
}

/// Loss of one pair from its two directional probabilities and confidence weight.
pub fn pair_loss(p_forward: f64, p_backward: f64, phi: f64, phi_outside: bool) -> f64 {
    let mean = 0.5 * (p_forward + p_backward);
    if phi_outside {
        -phi * mean.ln()
    } else {
        -(phi * mean).ln()
    }
}

fn similarities(tape: &mut Tape, a: Var, b: Var, normalize: bool) -> Result<Var> {
    if normalize {
        tape.cosine_similarity(a, b)
    } else {
        let bt = tape.transpose(b);
        tape.matmul(a, bt)
    }
}

/// `p(i→i')` for every row of `anchors` against the aligned rows of `partners`.
fn directional(tape: &mut Tape, anchors: Var, partners: Var, cfg: &LossConfig) -> Result<Var> {
    let b = tape.shape(anchors).0;
    let cross = similarities(tape, anchors, partners, cfg.normalize)?;
    let own = similarities(tape, anchors, anchors, cfg.normalize)?;
    let logits = tape.concat_cols(&[cross, own])?;
    let logits = tape.scale(logits, 1.0 / cfg.temperature);
    let mask = tape.constant(DenseMatrix::from_fn(
        b,
        2 * b,
        |i, j| if j == b + i { MASKED } else { 0.0 },
    ));
    let logits = tape.add(logits, mask)?;
    let p = tape.softmax_rows(logits);
    let select = tape.constant(DenseMatrix::from_fn(b, 2 * b, |i, j| if j == i { 1.0 } else { 0.0 }));
    let picked = tape.mul(p, select)?;
    Ok(tape.sum_rows(picked))
}

/// Forward and backward alignment probabilities (`b × 1` each) for row-aligned batches.
pub fn probabilities_tape(tape: &mut Tape, source: Var, target: Var, cfg: &LossConfig) -> Result<(Var, Var)> {
    if tape.shape(source) != tape.shape(target) {
        return Err(Error::structural("source and target batches differ in shape"));
    }
    if tape.shape(source).0 == 1 {
        log::warn!("batch of one pair has no negatives; probabilities are 1");
    }
    let fwd = directional(tape, source, target, cfg)?;
    let bwd = directional(tape, target, source, cfg)?;
    Ok((fwd, bwd))
}

/// Value-level wrapper of [`probabilities_tape`].
pub fn batch_probabilities(
    source: &DenseMatrix,
    target: &DenseMatrix,
    cfg: &LossConfig,
) -> Result<(Vec<f64>, Vec<f64>)> {
    let mut tape = Tape::new();
    let s = tape.constant(source.clone());
    let t = tape.constant(target.clone());
    let (f, b) = probabilities_tape(&mut tape, s, t, cfg)?;
    Ok((tape.value(f).data().to_vec(), tape.value(b).data().to_vec()))
}

/// Mean pair loss of a batch. `phi` is a `b × 1` confidence column or `None` for weight 1.
pub fn contrastive_loss_tape(
    tape: &mut Tape,
    source: Var,
    target: Var,
    phi: Option<Var>,
    cfg: &LossConfig,
) -> Result<Var> {
    let (fwd, bwd) = probabilities_tape(tape, source, target, cfg)?;
    let sum = tape.add(fwd, bwd)?;
    let mean = tape.scale(sum, 0.5);
    let per_pair = match phi {
        None => {
            let l = tape.log(mean);
            tape.scale(l, -1.0)
        }
        Some(phi) if cfg.phi_outside => {
            let l = tape.log(mean);
            let w = tape.mul(phi, l)?;
            tape.scale(w, -1.0)
        }
        Some(phi) => {
            let w = tape.mul(phi, mean)?;
            let l = tape.log(w);
            tape.scale(l, -1.0)
        }
    };
    Ok(tape.mean_all(per_pair))
}

/// `min(w̃_i^m, w̃_{i'}^m)` raised to `floor`, both through `(a+b∓|a−b|)/2`.
fn min_confidence(
    tape: &mut Tape,
    confidence: Var,
    column: usize,
    src: &[usize],
    tgt: &[usize],
    floor: f64,
) -> Result<(Var, usize)> {
    let cs = tape.gather_rows(confidence, src)?;
    let a = tape.slice_cols(cs, column, 1)?;
    let ct = tape.gather_rows(confidence, tgt)?;
    let b = tape.slice_cols(ct, column, 1)?;
    let sum = tape.add(a, b)?;
    let diff = tape.sub(a, b)?;
    let gap = tape.abs(diff);
    let min = tape.sub(sum, gap)?;
    let min = tape.scale(min, 0.5);
    let floored = tape.value(min).data().iter().filter(|&&v| v < floor).count();
    let shifted = tape.add_scalar(min, -floor);
    let gap = tape.abs(shifted);
    let max = tape.add(min, gap)?;
    let max = tape.add_scalar(max, floor);
    Ok((tape.scale(max, 0.5), floored))
}

/// `tr(XᵀΔX)` on the tape.
pub fn energy_tape(tape: &mut Tape, x: Var, laplacian: &Arc<SparseMatrix>) -> Result<Var> {
    let lx = tape.sparse_mul(laplacian, x)?;
    let prod = tape.mul(x, lx)?;
    Ok(tape.sum_all(prod))
}

fn hinge(tape: &mut Tape, x: Var) -> Var {
    tape.relu(x)
}

/// Builds the full objective for a batch of joint-row pairs on top of a recorded forward
/// pass. Returns the scalar total and the value of every term.
pub fn total_loss_tape(
    tape: &mut Tape,
    fwd: &ForwardVars,
    pairs: &[(usize, usize)],
    laplacian: &Arc<SparseMatrix>,
    cfg: &LossConfig,
) -> Result<(Var, LossBreakdown)> {
    if pairs.is_empty() {
        return Err(Error::structural("loss of an empty batch"));
    }
    let src: Vec<usize> = pairs.iter().map(|p| p.0).collect();
    let tgt: Vec<usize> = pairs.iter().map(|p| p.1).collect();
    let mut parts: Vec<Var> = Vec::new();
    let mut out = LossBreakdown::default();

    let task = |tape: &mut Tape, h: Var| -> Result<Var> {
        let s = tape.gather_rows(h, &src)?;
        let t = tape.gather_rows(h, &tgt)?;
        contrastive_loss_tape(tape, s, t, None, cfg)
    };
    if cfg.terms.task0 {
        let l = task(tape, fwd.h_ori)?;
        out.task0 = tape.scalar(l);
        parts.push(l);
    }
    if cfg.terms.taskk {
        let l = task(tape, fwd.h_fus)?;
        out.taskk = tape.scalar(l);
        parts.push(l);
    }
    for (col, &m) in fwd.modalities.iter().enumerate() {
        if !(cfg.terms.modal_km1 || cfg.terms.modal_k) {
            break;
        }
        let (phi, floored) = min_confidence(tape, fwd.confidence, col, &src, &tgt, cfg.phi_floor)?;
        out.phi_floored += floored;
        let surfaces = [
            (cfg.terms.modal_km1, fwd.h[col], true),
            (cfg.terms.modal_k, fwd.h_att[col], false),
        ];
        for (on, h, pre) in surfaces {
            if !on {
                continue;
            }
            let s = tape.gather_rows(h, &src)?;
            let t = tape.gather_rows(h, &tgt)?;
            let l = contrastive_loss_tape(tape, s, t, Some(phi), cfg)?;
            let target = if pre { &mut out.modal_km1 } else { &mut out.modal_k };
            target.insert(m, tape.scalar(l));
            parts.push(l);
        }
    }
    if let Some(coef) = cfg.penalty {
        let e0 = energy_tape(tape, fwd.h_ori, laplacian)?;
        let concat = fwd.h_concat(tape)?;
        let ekm1 = energy_tape(tape, concat, laplacian)?;
        let ek = energy_tape(tape, fwd.h_fus, laplacian)?;
        let lo = tape.scale(ekm1, cfg.c_min);
        let lo = tape.sub(lo, ek)?;
        let lo = hinge(tape, lo);
        let hi = tape.scale(e0, cfg.c_max);
        let hi = tape.sub(ek, hi)?;
        let hi = hinge(tape, hi);
        let p = tape.add(lo, hi)?;
        let p = tape.scale(p, coef);
        out.penalty = tape.scalar(p);
        parts.push(p);
    }
    let total = match parts.split_first() {
        None => return Err(Error::Config("every loss term is disabled".into())),
        Some((&first, rest)) => {
            let mut acc = first;
            for &p in rest {
                acc = tape.add(acc, p)?;
            }
            acc
        }
    };
    out.total = tape.scalar(total);
    let bad = out.non_finite_terms();
    if !bad.is_empty() || !out.total.is_finite() {
        return Err(Error::numerical(format!("non-finite loss: {}", bad.join(", "))));
    }
    Ok((total, out))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol
    }

    #[test]
    fn probability_examples() {
        let e1 = [1.0, 0.0, 0.0];
        let e2 = [0.0, 1.0, 0.0];
        let e3 = [0.0, 0.0, 1.0];
        assert!(close(alignment_probability(&e1, &e2, &[&e3], 0.1), 0.5, 1e-15));
        let p = alignment_probability(&e1, &e1, &[&e2], 0.1);
        let want = 10f64.exp() / (10f64.exp() + 1.0);
        assert!(close(p, want, 1e-12));
        assert!(close(p, 0.9999546, 1e-7));
        assert_eq!(alignment_probability(&e1, &e2, &[], 0.1), 1.0);
    }

    #[test]
    #[allow(clippy::approx_constant)]
    fn pair_loss_examples() {
        assert!(close(pair_loss(1.0, 1.0, 1.0, false), 0.0, 1e-15));
        assert!(close(pair_loss(0.5, 0.5, 1.0, false), 0.6931, 1e-4));
        assert!(close(pair_loss(1.0, 1.0, 0.5, false), 0.6931, 1e-4));
        assert!(close(pair_loss(0.5, 0.5, 1.0, true), 2f64.ln(), 1e-15));
    }

    #[test]
    fn batch_matches_scalar_definition() {
        let hs = DenseMatrix::from_rows(&[vec![0.3, -0.2], vec![0.1, 0.4], vec![-0.5, 0.2]]).unwrap();
        let ht = DenseMatrix::from_rows(&[vec![0.2, -0.1], vec![0.3, 0.3], vec![-0.1, 0.6]]).unwrap();
        let cfg = LossConfig {
            normalize: false,
            temperature: 0.5,
            ..LossConfig::default()
        };
        let (fwd, bwd) = batch_probabilities(&hs, &ht, &cfg).unwrap();
        for i in 0..3 {
            let negs: Vec<&[f64]> = (0..3)
                .filter(|&j| j != i)
                .flat_map(|j| [ht.row(j), hs.row(j)])
                .collect();
            let want = alignment_probability(hs.row(i), ht.row(i), &negs, 0.5);
            assert!(close(fwd[i], want, 1e-12), "{} vs {want}", fwd[i]);
            let negs: Vec<&[f64]> = (0..3)
                .filter(|&j| j != i)
                .flat_map(|j| [hs.row(j), ht.row(j)])
                .collect();
            let want = alignment_probability(ht.row(i), hs.row(i), &negs, 0.5);
            assert!(close(bwd[i], want, 1e-12));
        }
    }

    #[test]
    fn single_pair_has_probability_one() {
        let hs = DenseMatrix::from_rows(&[vec![1.0, 2.0]]).unwrap();
        let ht = DenseMatrix::from_rows(&[vec![-3.0, 0.5]]).unwrap();
        let (f, b) = batch_probabilities(&hs, &ht, &LossConfig::default()).unwrap();
        assert_eq!((f[0], b[0]), (1.0, 1.0));
    }

    #[test]
    fn equal_embeddings_give_uniform_probability() {
        let b = 4;
        let h = DenseMatrix::filled(b, 3, 0.7);
        let (f, _) = batch_probabilities(&h, &h, &LossConfig::default()).unwrap();
        for p in f {
            assert!(close(p, 1.0 / (2 * b - 1) as f64, 1e-12));
        }
    }

    #[test]
    fn floor_applies_to_tiny_confidence() {
        let mut tape = Tape::new();
        let conf = tape.constant(DenseMatrix::from_rows(&[vec![0.0, 1.0], vec![0.4, 0.6]]).unwrap());
        let (phi, floored) = min_confidence(&mut tape, conf, 0, &[0], &[1], 1e-6).unwrap();
        assert_eq!(floored, 1);
        assert!(close(tape.scalar(phi), 1e-6, 1e-18));
        let (phi, floored) = min_confidence(&mut tape, conf, 1, &[0], &[1], 1e-6).unwrap();
        assert_eq!(floored, 0);
        assert!(close(tape.scalar(phi), 0.6, 1e-15));
    }
}
