//! Multi-modal knowledge graphs: data model, ingestion, graph operators, consistency
//! partitions, modality masking and synthetic benchmark pairs.

mod bow;
mod io;
mod operators;
mod synthetic;

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::DenseMatrix;

pub use bow::{bag_of_words, bow_vocabulary};
pub use io::{load_alignments, load_mmkg, load_mmkg_dir, write_alignments, write_features, write_mmkg, FeaturePaths};
pub use operators::{build_operators, GraphOperators};
pub use synthetic::{generate_synthetic, SyntheticSpec};

/// The four modalities: structure, relations, text attributes, visual.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Modality {
    #[serde(rename = "g")]
    Graph,
    #[serde(rename = "r")]
    Relation,
    #[serde(rename = "t")]
    Text,
    #[serde(rename = "v")]
    Visual,
}

impl Modality {
    pub const ALL: [Modality; 4] = [Modality::Graph, Modality::Relation, Modality::Text, Modality::Visual];

    /// Modalities backed by a feature table (structure is learned from the graph).
    pub const FEATURE: [Modality; 3] = [Modality::Relation, Modality::Text, Modality::Visual];

    pub fn token(self) -> &'static str {
        match self {
            Modality::Graph => "g",
            Modality::Relation => "r",
            Modality::Text => "t",
            Modality::Visual => "v",
        }
    }
}

impl fmt::Display for Modality {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.token())
    }
}

impl FromStr for Modality {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "g" => Ok(Modality::Graph),
            "r" => Ok(Modality::Relation),
            "t" => Ok(Modality::Text),
            "v" => Ok(Modality::Visual),
            other => Err(Error::structural(format!("unknown modality '{other}'"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Triple {
    pub head: usize,
    pub relation: usize,
    pub tail: usize,
}

/// Feature table of one modality plus its presence mask.
#[derive(Clone, Debug, PartialEq)]
pub struct ModalFeatures {
    pub values: DenseMatrix,
    pub present: Vec<bool>,
}

impl ModalFeatures {
    pub fn new(values: DenseMatrix, present: Vec<bool>) -> Result<Self> {
        if present.len() != values.rows() {
            return Err(Error::structural(format!(
                "mask has {} entries for {} feature rows",
                present.len(),
                values.rows()
            )));
        }
        Ok(Self { values, present })
    }

    pub fn fully_present(values: DenseMatrix) -> Self {
        let present = vec![true; values.rows()];
        Self { values, present }
    }

    pub fn dim(&self) -> usize {
        self.values.cols()
    }

    pub fn present_count(&self) -> usize {
        self.present.iter().filter(|&&p| p).count()
    }
}

/// One multi-modal knowledge graph.
#[derive(Clone, Debug, PartialEq)]
pub struct Mmkg {
    n: usize,
    triples: Vec<Triple>,
    features: BTreeMap<Modality, ModalFeatures>,
    attr_counts: Option<Vec<usize>>,
}

impl Mmkg {
    pub fn new(
        n: usize,
        triples: Vec<Triple>,
        features: BTreeMap<Modality, ModalFeatures>,
        attr_counts: Option<Vec<usize>>,
    ) -> Result<Self> {
        if let Some(t) = triples.iter().find(|t| t.head >= n || t.tail >= n) {
            return Err(Error::structural(format!(
                "triple ({}, {}, {}) references an entity outside 0..{n}",
                t.head, t.relation, t.tail
            )));
        }
        for (m, f) in &features {
            if f.values.rows() != n {
                return Err(Error::structural(format!(
                    "modality {m} has {} rows for {n} entities",
                    f.values.rows()
                )));
            }
        }
        if let Some(c) = &attr_counts {
            if c.len() != n {
                return Err(Error::structural(format!(
                    "{} attribute counts for {n} entities",
                    c.len()
                )));
            }
        }
        Ok(Self {
            n,
            triples,
            features,
            attr_counts,
        })
    }

    pub fn entity_count(&self) -> usize {
        self.n
    }

    pub fn triples(&self) -> &[Triple] {
        &self.triples
    }

    pub fn features(&self) -> &BTreeMap<Modality, ModalFeatures> {
        &self.features
    }

    pub fn modality(&self, m: Modality) -> Option<&ModalFeatures> {
        self.features.get(&m)
    }

    pub fn modalities(&self) -> impl Iterator<Item = Modality> + '_ {
        self.features.keys().copied()
    }

    pub fn attr_counts(&self) -> Option<&[usize]> {
        self.attr_counts.as_deref()
    }

    /// Copy without the given modality's table.
    pub fn without_modality(&self, m: Modality) -> Self {
        let mut out = self.clone();
        out.features.remove(&m);
        out
    }

    /// Entity `i` has every modality table present.
    pub fn is_complete(&self, i: usize) -> bool {
        self.features.values().all(|f| f.present[i])
    }
}

/// Gold entity pairs split into training seeds and held-out test pairs.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct SeedAlignments {
    pub train: Vec<(usize, usize)>,
    pub test: Vec<(usize, usize)>,
}

impl SeedAlignments {
    /// Checks the one-to-one property over the union of both splits.
    pub fn new(train: Vec<(usize, usize)>, test: Vec<(usize, usize)>) -> Result<Self> {
        let s = Self { train, test };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        let mut left = std::collections::HashSet::new();
        let mut right = std::collections::HashSet::new();
        for &(a, b) in self.train.iter().chain(&self.test) {
            if !left.insert(a) {
                return Err(Error::structural(format!("source entity {a} aligned twice")));
            }
            if !right.insert(b) {
                return Err(Error::structural(format!("target entity {b} aligned twice")));
            }
        }
        Ok(())
    }

    pub fn all(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.train.iter().chain(&self.test).copied()
    }

    /// Re-splits all pairs so that the first `⌈ratio·total⌉` pairs after a seeded shuffle
    /// become training seeds.
    pub fn resplit(&self, ratio: f64, seed: u64) -> Self {
        let mut all: Vec<(usize, usize)> = self.all().collect();
        all.sort_unstable();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        all.shuffle(&mut rng);
        let k = ((ratio.clamp(0.0, 1.0) * all.len() as f64).ceil() as usize).min(all.len());
        let test = all.split_off(k);
        Self { train: all, test }
    }
}

/// Split of the entities by semantic consistency.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct ConsistencyPartition {
    /// Full modalities and typical attribute counts.
    pub consistent: Vec<usize>,
    /// Full modalities but an unusually low attribute count.
    pub sparse_attributes: Vec<usize>,
    /// At least one modality wholly absent.
    pub missing_modality: Vec<usize>,
}

impl ConsistencyPartition {
    /// `true` for entities in the consistent set.
    pub fn known_mask(&self, n: usize) -> Vec<bool> {
        let mut mask = vec![false; n];
        for &i in &self.consistent {
            mask[i] = true;
        }
        mask
    }

    /// Entities outside the consistent set, in index order.
    pub fn inconsistent(&self) -> Vec<usize> {
        let mut v: Vec<usize> = self
            .sparse_attributes
            .iter()
            .chain(&self.missing_modality)
            .copied()
            .collect();
        v.sort_unstable();
        v
    }
}

/// Default attribute-count percentile below which an entity counts as attribute-sparse.
pub const DEFAULT_ATTR_PERCENTILE: f64 = 0.25;

/// Splits entities into consistent, attribute-sparse and missing-modality sets.
///
/// The attribute-count threshold is the value at sorted position `⌊p·n⌋`; entities
/// strictly below it are attribute-sparse. Graphs without attribute counts have no
/// attribute-sparse entities.
pub fn partition_entities(g: &Mmkg, attr_count_percentile: f64) -> ConsistencyPartition {
    let n = g.entity_count();
    let threshold = g.attr_counts().and_then(|counts| {
        if counts.is_empty() {
            return None;
        }
        let mut sorted = counts.to_vec();
        sorted.sort_unstable();
        let pos = ((attr_count_percentile * n as f64).floor() as usize).min(n - 1);
        Some(sorted[pos])
    });
    let mut part = ConsistencyPartition::default();
    for i in 0..n {
        if !g.is_complete(i) {
            part.missing_modality.push(i);
        } else if matches!((threshold, g.attr_counts()), (Some(t), Some(c)) if c[i] < t) {
            part.sparse_attributes.push(i);
        } else {
            part.consistent.push(i);
        }
    }
    part
}

/// Masks a modality so that `⌈keep_ratio·n⌉` entities keep it, then re-imputes the
/// dropped rows. Kept entities are chosen by a seeded shuffle among those currently
/// holding the modality, so already-absent rows are never revived.
pub fn apply_modality_mask(g: &Mmkg, modality: Modality, keep_ratio: f64, seed: u64) -> Result<Mmkg> {
    if !(0.0..=1.0).contains(&keep_ratio) {
        return Err(Error::Config(format!("keep ratio {keep_ratio} outside [0, 1]")));
    }
    let Some(table) = g.modality(modality) else {
        return Err(Error::structural(format!("graph has no modality {modality}")));
    };
    let n = g.entity_count();
    let keep = ((keep_ratio * n as f64).ceil() as usize).min(n);
    let mut holders: Vec<usize> = (0..n).filter(|&i| table.present[i]).collect();
    if keep >= holders.len() {
        return Ok(g.clone());
    }
    let mut rng = ChaCha8Rng::seed_from_u64(mix(seed, modality, 0x6d61_736b));
    holders.shuffle(&mut rng);
    let mut present = vec![false; n];
    for &i in &holders[..keep] {
        present[i] = true;
    }
    let mut out = g.clone();
    let f = out.features.get_mut(&modality).expect("checked above");
    f.present = present;
    impute_modality(
        f,
        &mut ChaCha8Rng::seed_from_u64(mix(seed, modality, 0x696d_7075)),
        modality,
    );
    Ok(out)
}

/// Replaces every absent row with a draw from a per-dimension normal distribution fitted
/// to the present rows.
pub fn impute_initial(g: &Mmkg, seed: u64) -> Mmkg {
    let mut out = g.clone();
    for (&m, f) in out.features.iter_mut() {
        let mut rng = ChaCha8Rng::seed_from_u64(mix(seed, m, 0x696d_7075));
        impute_modality(f, &mut rng, m);
    }
    out
}

fn impute_modality(f: &mut ModalFeatures, rng: &mut ChaCha8Rng, m: Modality) {
    let d = f.dim();
    let present: Vec<usize> = (0..f.present.len()).filter(|&i| f.present[i]).collect();
    if present.len() == f.present.len() {
        return;
    }
    if present.is_empty() {
        log::warn!("modality {m} has no present rows; absent rows zero-filled");
        for i in 0..f.present.len() {
            f.values.row_mut(i).fill(0.0);
        }
        return;
    }
    let count = present.len() as f64;
    let mut mean = vec![0.0; d];
    for &i in &present {
        for (s, v) in mean.iter_mut().zip(f.values.row(i)) {
            *s += v;
        }
    }
    mean.iter_mut().for_each(|s| *s /= count);
    let mut var = vec![0.0; d];
    for &i in &present {
        for ((s, v), mu) in var.iter_mut().zip(f.values.row(i)).zip(&mean) {
            *s += (v - mu) * (v - mu);
        }
    }
    let dists: Vec<Normal<f64>> = var
        .iter()
        .zip(&mean)
        .map(|(v, &mu)| Normal::new(mu, (v / count).sqrt()).expect("finite, non-negative std"))
        .collect();
    for i in 0..f.present.len() {
        if f.present[i] {
            continue;
        }
        for (x, dist) in f.values.row_mut(i).iter_mut().zip(&dists) {
            *x = dist.sample(rng);
        }
    }
}

fn mix(seed: u64, m: Modality, salt: u64) -> u64 {
    seed.wrapping_mul(0x9e37_79b9_7f4a_7c15) ^ ((m as u64 + 1) << 32) ^ salt
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toy(n: usize, counts: Option<Vec<usize>>) -> Mmkg {
        let mut features = BTreeMap::new();
        for m in Modality::FEATURE {
            let values = DenseMatrix::from_fn(n, 2, |i, j| (i * 2 + j) as f64);
            features.insert(m, ModalFeatures::fully_present(values));
        }
        Mmkg::new(n, vec![], features, counts).unwrap()
    }

    #[test]
    fn uniform_counts_are_all_consistent() {
        let g = toy(6, Some(vec![3; 6]));
        let p = partition_entities(&g, 0.25);
        assert_eq!(p.consistent, (0..6).collect::<Vec<_>>());
        assert!(p.sparse_attributes.is_empty() && p.missing_modality.is_empty());
    }

    #[test]
    fn low_percentile_counts_are_sparse() {
        let g = toy(10, Some((1..=10).collect()));
        let p = partition_entities(&g, 0.3);
        assert_eq!(p.sparse_attributes, vec![0, 1, 2]);
    }

    #[test]
    fn missing_visual_row_lands_in_missing_set() {
        let mut g = toy(4, None);
        g.features.get_mut(&Modality::Visual).unwrap().present[2] = false;
        let p = partition_entities(&g, 0.25);
        assert_eq!(p.missing_modality, vec![2]);
        assert_eq!(p.consistent, vec![0, 1, 3]);
    }

    #[test]
    fn mask_keeps_exact_count_deterministically() {
        let g = toy(10, None);
        let a = apply_modality_mask(&g, Modality::Text, 0.5, 7).unwrap();
        let b = apply_modality_mask(&g, Modality::Text, 0.5, 7).unwrap();
        assert_eq!(a.modality(Modality::Text).unwrap().present_count(), 5);
        assert_eq!(a, b);
        assert_eq!(apply_modality_mask(&g, Modality::Text, 1.0, 7).unwrap(), g);
        let none = apply_modality_mask(&g, Modality::Text, 0.0, 7).unwrap();
        assert_eq!(none.modality(Modality::Text).unwrap().present_count(), 0);
        assert_eq!(g.modality(Modality::Text).unwrap().present_count(), 10);
    }

    #[test]
    fn mask_of_unknown_modality_is_structural() {
        let g = toy(3, None).without_modality(Modality::Visual);
        assert!(matches!(
            apply_modality_mask(&g, Modality::Visual, 0.5, 1),
            Err(Error::Structural(_))
        ));
    }

    #[test]
    fn constant_present_rows_impute_exactly() {
        let values = DenseMatrix::from_rows(&[vec![1.5, -2.0], vec![1.5, -2.0], vec![0.0, 0.0]]).unwrap();
        let f = ModalFeatures::new(values, vec![true, true, false]).unwrap();
        let g = Mmkg::new(3, vec![], BTreeMap::from([(Modality::Visual, f)]), None).unwrap();
        let out = impute_initial(&g, 3);
        assert_eq!(out.modality(Modality::Visual).unwrap().values.row(2), &[1.5, -2.0]);
    }

    #[test]
    fn imputation_matches_present_distribution() {
        let n = 10_002;
        let mut values = DenseMatrix::zeros(n, 2);
        values.row_mut(1).copy_from_slice(&[2.0, 2.0]);
        let mut present = vec![false; n];
        present[0] = true;
        present[1] = true;
        let f = ModalFeatures::new(values, present).unwrap();
        let g = Mmkg::new(n, vec![], BTreeMap::from([(Modality::Text, f)]), None).unwrap();
        let out = impute_initial(&g, 11);
        let t = out.modality(Modality::Text).unwrap();
        for j in 0..2 {
            let mean: f64 = (2..n).map(|i| t.values[(i, j)]).sum::<f64>() / (n - 2) as f64;
            assert!((mean - 1.0).abs() < 0.05, "{mean}");
        }
        assert_eq!(impute_initial(&g, 11), out);
    }

    #[test]
    fn no_present_rows_zero_fill() {
        let f = ModalFeatures::new(DenseMatrix::filled(2, 3, 4.0), vec![false, false]).unwrap();
        let g = Mmkg::new(2, vec![], BTreeMap::from([(Modality::Text, f)]), None).unwrap();
        assert_eq!(
            impute_initial(&g, 0).modality(Modality::Text).unwrap().values,
            DenseMatrix::zeros(2, 3)
        );
    }

    #[test]
    fn resplit_sizes() {
        let s = SeedAlignments::new((0..10).map(|i| (i, 9 - i)).collect(), vec![]).unwrap();
        let r = s.resplit(0.3, 5);
        assert_eq!(r.train.len(), 3);
        assert_eq!(r.test.len(), 7);
        r.validate().unwrap();
    }

    #[test]
    fn duplicate_alignment_rejected() {
        assert!(SeedAlignments::new(vec![(0, 1)], vec![(0, 2)]).is_err());
    }
}
