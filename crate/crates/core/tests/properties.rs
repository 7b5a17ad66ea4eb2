//! Property tests over random graphs, signals, similarity matrices and batches.

use mmea_core::energy::dirichlet_energy;
use mmea_core::eval::{hits_at_k, mrr, ranks, similarity_matrix};
use mmea_core::mmkg::ConsistencyPartition;
use mmea_core::mmkg::{apply_modality_mask, generate_synthetic, partition_entities, GraphOperators, SyntheticSpec};
use mmea_core::propagation::{
    closed_form_interpolation, harmonic_interpolation, propagate, propagation_step, PropagationState,
};
use mmea_core::training::{batch_probabilities, mutual_nearest_neighbors, LossConfig};
use mmea_core::{DenseMatrix, Modality};
use nalgebra::{DMatrix, SymmetricEigen};
use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> DenseMatrix {
    DenseMatrix::from_fn(rows, cols, |_, _| rng.random_range(-1.0..1.0))
}

/// Connected graph: a random spanning tree plus extra edges.
fn connected(rng: &mut ChaCha8Rng, n: usize, self_loops: bool) -> GraphOperators {
    let mut edges: Vec<(usize, usize)> = (1..n).map(|i| (rng.random_range(0..i), i)).collect();
    for _ in 0..n {
        let (a, b) = (rng.random_range(0..n), rng.random_range(0..n));
        if a != b {
            edges.push((a, b));
        }
    }
    GraphOperators::from_edges(n, edges, self_loops)
}

fn eigenvalues(op: &mmea_core::SparseMatrix) -> Vec<f64> {
    let d = op.to_dense();
    let m = DMatrix::from_row_slice(d.rows(), d.cols(), d.data());
    SymmetricEigen::new(m).eigenvalues.iter().copied().collect()
}

fn random_mask(rng: &mut ChaCha8Rng, n: usize, missing: usize) -> Vec<bool> {
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(rng);
    let mut known = vec![true; n];
    for &i in &idx[..missing.min(n - 1)] {
        known[i] = false;
    }
    known
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn normalized_adjacency_spectrum_in_unit_interval(seed in any::<u64>(), n in 2usize..40, loops in any::<bool>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let ops = connected(&mut rng, n, loops);
        for l in eigenvalues(&ops.normalized) {
            prop_assert!(l.abs() <= 1.0 + 1e-10, "{l}");
        }
        for l in eigenvalues(&ops.laplacian) {
            prop_assert!((-1e-10..2.0 + 1e-10).contains(&l), "{l}");
        }
    }

    #[test]
    fn energy_is_nonnegative_and_quadratic(seed in any::<u64>(), n in 2usize..40, d in 1usize..6, c in -5.0f64..5.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let ops = connected(&mut rng, n, true);
        let x = random(&mut rng, n, d);
        let e = dirichlet_energy(&x, &ops.laplacian).unwrap();
        prop_assert!(e >= -1e-12);
        let scaled = dirichlet_energy(&x.scale(c), &ops.laplacian).unwrap();
        prop_assert!((scaled - c * c * e).abs() <= 1e-9 * (1.0 + scaled.abs()));
    }

    #[test]
    fn filtering_never_raises_energy(seed in any::<u64>(), n in 2usize..40, d in 1usize..6, loops in any::<bool>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let ops = connected(&mut rng, n, loops);
        let x = random(&mut rng, n, d);
        let before = dirichlet_energy(&x, &ops.laplacian).unwrap();
        let after = dirichlet_energy(&ops.normalized.mul_dense(&x).unwrap(), &ops.laplacian).unwrap();
        prop_assert!(after <= before + 1e-9);
    }

    #[test]
    fn propagation_is_linear_and_keeps_boundary(seed in any::<u64>(), n in 3usize..40, d in 1usize..5, a in -3.0f64..3.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let ops = connected(&mut rng, n, true);
        let known = random_mask(&mut rng, n, n / 3);
        let (x, y) = (random(&mut rng, n, d), random(&mut rng, n, d));
        let mut combo = x.scale(a);
        combo.add_assign(&y);
        let px = propagate(&x, &ops.normalized, &known, 3, 0.0).unwrap();
        let py = propagate(&y, &ops.normalized, &known, 3, 0.0).unwrap();
        let pc = propagate(&combo, &ops.normalized, &known, 3, 0.0).unwrap();
        for ((sx, sy), sc) in px.iter().zip(&py).zip(&pc) {
            let mut expect = sx.scale(a);
            expect.add_assign(sy);
            prop_assert!(expect.max_abs_diff(sc) < 1e-10);
            for i in (0..n).filter(|&i| known[i]) {
                prop_assert_eq!(sx.row(i), x.row(i));
            }
        }
    }

    #[test]
    fn propagation_converges_to_harmonic_extension(seed in any::<u64>(), n in 3usize..30, d in 1usize..4) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let ops = connected(&mut rng, n, true);
        let known = random_mask(&mut rng, n, n / 4 + 1);
        let x = random(&mut rng, n, d);
        let mut state = PropagationState::new(x.clone(), known.clone()).unwrap();
        let target = harmonic_interpolation(&x, &ops.laplacian, &known).unwrap();
        for _ in 0..20_000 {
            state = propagation_step(state, &ops.normalized).unwrap();
            if state.features().max_abs_diff(&target) < 1e-6 {
                break;
            }
        }
        prop_assert!(state.features().max_abs_diff(&target) < 1e-6);
        let part = ConsistencyPartition {
            consistent: (0..n).filter(|&i| known[i]).collect(),
            sparse_attributes: vec![],
            missing_modality: (0..n).filter(|&i| !known[i]).collect(),
        };
        let closed = closed_form_interpolation(&x, &ops.laplacian, &part).unwrap();
        prop_assert!(closed.max_abs_diff(&target.select_rows(&part.missing_modality)) < 1e-9);
    }

    #[test]
    fn hits_grow_with_k_and_bound_mrr(seed in any::<u64>(), n in 1usize..30) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let omega = random(&mut rng, n, n);
        let mut targets: Vec<usize> = (0..n).collect();
        targets.shuffle(&mut rng);
        let gold: Vec<(usize, usize)> = targets.into_iter().enumerate().collect();
        let mut last = 0.0;
        for k in 1..=n {
            let h = hits_at_k(&omega, &gold, k);
            prop_assert!(h >= last);
            last = h;
        }
        prop_assert_eq!(last, 1.0);
        let m = mrr(&omega, &gold);
        prop_assert!(m >= hits_at_k(&omega, &gold, 1) && m <= 1.0);
    }

    #[test]
    fn ranks_ignore_column_order(seed in any::<u64>(), n in 1usize..25) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        // distinct scores, so ties cannot depend on index order
        let omega = random(&mut rng, n, n);
        let gold: Vec<(usize, usize)> = (0..n).map(|i| (i, i)).collect();
        let mut perm: Vec<usize> = (0..n).collect();
        perm.shuffle(&mut rng);
        let mut permuted = DenseMatrix::zeros(n, n);
        for i in 0..n {
            for (j, &pj) in perm.iter().enumerate() {
                permuted.row_mut(i)[pj] = omega.row(i)[j];
            }
        }
        let moved: Vec<(usize, usize)> = gold.iter().map(|&(i, t)| (i, perm[t])).collect();
        prop_assert_eq!(ranks(&omega, &gold), ranks(&permuted, &moved));
    }

    #[test]
    fn probabilities_lie_in_unit_interval_and_swap(seed in any::<u64>(), b in 1usize..12, d in 1usize..6, normalize in any::<bool>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (s, t) = (random(&mut rng, b, d), random(&mut rng, b, d));
        let cfg = LossConfig { normalize, ..LossConfig::default() };
        let (f, bw) = batch_probabilities(&s, &t, &cfg).unwrap();
        for p in f.iter().chain(&bw) {
            prop_assert!(*p > 0.0 && *p <= 1.0 + 1e-12, "{p}");
        }
        let (f2, b2) = batch_probabilities(&t, &s, &cfg).unwrap();
        for (x, y) in f.iter().zip(&b2).chain(bw.iter().zip(&f2)) {
            prop_assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn cosine_probabilities_ignore_row_scale(seed in any::<u64>(), b in 1usize..10, d in 1usize..6) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (s, t) = (random(&mut rng, b, d), random(&mut rng, b, d));
        let scales: Vec<f64> = (0..b).map(|_| rng.random_range(0.1..10.0)).collect();
        let scaled = DenseMatrix::from_fn(b, d, |i, j| s.row(i)[j] * scales[i]);
        let cfg = LossConfig::default();
        let (f, bw) = batch_probabilities(&s, &t, &cfg).unwrap();
        let (f2, b2) = batch_probabilities(&scaled, &t, &cfg).unwrap();
        for (x, y) in f.iter().chain(&bw).zip(f2.iter().chain(&b2)) {
            prop_assert!((x - y).abs() < 1e-9);
        }
    }

    #[test]
    fn mutual_neighbours_are_one_to_one(seed in any::<u64>(), rows in 1usize..20, cols in 1usize..20) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let omega = random(&mut rng, rows, cols);
        let pairs = mutual_nearest_neighbors(&omega, None);
        let mut s: Vec<usize> = pairs.iter().map(|p| p.0).collect();
        let mut t: Vec<usize> = pairs.iter().map(|p| p.1).collect();
        s.sort_unstable();
        s.dedup();
        t.sort_unstable();
        t.dedup();
        prop_assert_eq!(s.len(), pairs.len());
        prop_assert_eq!(t.len(), pairs.len());
        // the global maximum is always mutual
        prop_assert!(!pairs.is_empty());
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(8))]

    #[test]
    fn partition_covers_and_masking_moves_to_missing(seed in 0u64..1000, keep in 0.0f64..1.0) {
        let spec = SyntheticSpec { n: 60, seed, ..SyntheticSpec::default() };
        let (g, _, _) = generate_synthetic(&spec).unwrap();
        let masked = apply_modality_mask(&g, Modality::Visual, keep, seed).unwrap();
        let part = partition_entities(&masked, 0.25);
        let mut all: Vec<usize> = part.consistent.iter().chain(&part.sparse_attributes).chain(&part.missing_modality).copied().collect();
        all.sort_unstable();
        prop_assert_eq!(all, (0..60).collect::<Vec<_>>());
        let present = &masked.modality(Modality::Visual).unwrap().present;
        for i in (0..60).filter(|&i| !present[i]) {
            prop_assert!(part.missing_modality.contains(&i));
        }
    }
}

#[test]
fn similarity_of_identical_embeddings_ranks_first() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let x = random(&mut rng, 30, 8);
    let gold: Vec<(usize, usize)> = (0..30).map(|i| (i, i)).collect();
    let omega = similarity_matrix(&x, &x);
    assert_eq!(hits_at_k(&omega, &gold, 1), 1.0);
    assert_eq!(mrr(&omega, &gold), 1.0);
}
