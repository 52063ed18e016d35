use super::*;
use crate::matrixkit::{standardize, RawMatrix};
use approx::assert_abs_diff_eq;
use nalgebra::dmatrix;

fn corr(values: DMatrix<f64>) -> CorrelationMatrix {
    CorrelationMatrix::with_default_labels(values).unwrap()
}

fn equicorrelation(p: usize, rho: f64) -> DMatrix<f64> {
    DMatrix::from_fn(p, p, |i, j| if i == j { 1.0 } else { rho })
}

/// Block-diagonal correlation matrix from (size, rho) specs.
fn block_matrix(blocks: &[(usize, f64)]) -> DMatrix<f64> {
    let p: usize = blocks.iter().map(|(s, _)| s).sum();
    let mut m = DMatrix::identity(p, p);
    let mut offset = 0;
    for &(size, rho) in blocks {
        for i in 0..size {
            for j in 0..size {
                if i != j {
                    m[(offset + i, offset + j)] = rho;
                }
            }
        }
        offset += size;
    }
    m
}

/// Two design-(b)-style 3-variable blocks: entries (1,2) = eta,
/// (1,3) = (2,3) = -eta^4.
fn two_design_b_blocks(eta1: f64, eta2: f64) -> DMatrix<f64> {
    let mut m = DMatrix::identity(6, 6);
    for (b, eta) in [eta1, eta2].into_iter().enumerate() {
        let o = 3 * b;
        let eta4 = eta.powi(4);
        m[(o, o + 1)] = eta;
        m[(o + 1, o)] = eta;
        m[(o, o + 2)] = -eta4;
        m[(o + 2, o)] = -eta4;
        m[(o + 1, o + 2)] = -eta4;
        m[(o + 2, o + 1)] = -eta4;
    }
    m
}

#[test]
fn loading_count_examples() {
    let identity = corr(DMatrix::identity(4, 4));
    assert_eq!(loading_count(&identity, LoadingPolicy::Kaiser).unwrap(), 4);

    let blocks = corr(block_matrix(&[(2, 0.8), (2, 0.8)]));
    assert_eq!(loading_count(&blocks, LoadingPolicy::Kaiser).unwrap(), 2);

    let five = corr(DMatrix::identity(5, 5));
    assert_eq!(loading_count(&five, LoadingPolicy::Fixed(10)).unwrap(), 5);
    assert_eq!(loading_count(&five, LoadingPolicy::All).unwrap(), 5);
}

#[test]
fn exhaustive_split_counts() {
    assert_eq!(exhaustive_splits(2, 6).unwrap().len(), 1);
    let three = exhaustive_splits(3, 6).unwrap();
    assert_eq!(three.len(), 3);
    assert!(three.contains(&(vec![0], vec![1, 2])));
    assert!(three.contains(&(vec![0, 1], vec![2])));
    assert!(three.contains(&(vec![0, 2], vec![1])));
    assert_eq!(exhaustive_splits(5, 6).unwrap().len(), 15);
    assert!(matches!(
        exhaustive_splits(7, 6),
        Err(DivisiveError::ThresholdExceeded { .. })
    ));
}

#[test]
fn exhaustive_splits_are_canonical_and_unique() {
    let splits = exhaustive_splits(5, 6).unwrap();
    let mut lefts: Vec<Vec<usize>> = splits.iter().map(|(l, _)| l.clone()).collect();
    lefts.sort();
    lefts.dedup();
    assert_eq!(lefts.len(), 15);
    for (left, right) in &splits {
        assert_eq!(left[0], 0);
        assert!(!right.is_empty());
        assert_eq!(left.len() + right.len(), 5);
    }
}

#[test]
fn candidate_splits_pair_cluster() {
    let r = equicorrelation(2, 0.4);
    let candidates = candidate_splits(&r, 1).unwrap();
    assert_eq!(candidates.len(), 1);
    assert_eq!(candidates[0].left, vec![0]);
    assert_eq!(candidates[0].right, vec![1]);
}

#[test]
fn candidate_count_respects_bound() {
    let mut state = 3u64;
    let mut next = || {
        state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
        (state >> 11) as f64 / (1u64 << 53) as f64 - 0.5
    };
    let data = DMatrix::from_fn(30, 5, |_, _| next());
    let x = standardize(&RawMatrix::with_default_labels(data).unwrap()).unwrap();
    let candidates = candidate_splits(x.values(), 3).unwrap();
    assert!(candidates.len() <= 3 * 4, "k_i (p_i - 1) bound");
}

#[test]
fn candidate_splits_find_true_blocks() {
    // Exact two-block structure, sizes 2 and 3.
    let r = block_matrix(&[(2, 0.7), (3, 0.6)]);
    let candidates = candidate_splits(&r, 2).unwrap();
    assert!(
        candidates
            .iter()
            .any(|c| c.left == vec![0, 1] && c.right == vec![2, 3, 4]),
        "true block bipartition must appear among candidates"
    );
}

#[test]
fn split_cluster_separates_uncorrelated_blocks() {
    let r = corr(block_matrix(&[(3, 0.6), (2, 0.7)]));
    for kind in SplitDistanceKind::ALL {
        let chosen = split_cluster(
            ClusterInput::Correlation(&r),
            &r,
            kind,
            LoadingPolicy::Kaiser,
            6,
        )
        .unwrap();
        assert_eq!(chosen.left, vec![0, 1, 2]);
        assert_eq!(chosen.right, vec![3, 4]);
        assert_abs_diff_eq!(chosen.distance, 1.0, epsilon = 0.0);
    }
}

#[test]
fn split_cluster_hand_case_single_linkage() {
    // r12 = 0.9, r13 = r23 = 0.1: single linkage splits {3} | {1, 2}
    // at distance 1 - 0.1 = 0.9.
    let r = corr(dmatrix![
        1.0, 0.9, 0.1;
        0.9, 1.0, 0.1;
        0.1, 0.1, 1.0
    ]);
    let chosen = split_cluster(
        ClusterInput::Correlation(&r),
        &r,
        SplitDistanceKind::Single,
        LoadingPolicy::Kaiser,
        6,
    )
    .unwrap();
    assert_eq!(chosen.left, vec![0, 1]);
    assert_eq!(chosen.right, vec![2]);
    assert_abs_diff_eq!(chosen.distance, 0.9, epsilon = 1e-15);
}

/// Brute-force argmax over all bipartitions with the same tie rule,
/// written independently of the candidate machinery.
fn brute_force_best(
    r: &CorrelationMatrix,
    kind: SplitDistanceKind,
) -> (Vec<usize>, Vec<usize>, f64) {
    let p = r.p();
    let mut best: Option<(Vec<usize>, Vec<usize>, f64)> = None;
    for mask in 1..(1usize << (p - 1)) {
        let mut left = vec![0usize];
        let mut right = Vec::new();
        for bit in 0..(p - 1) {
            if mask & (1 << bit) != 0 {
                right.push(bit + 1);
            } else {
                left.push(bit + 1);
            }
        }
        let d = crate::dissimilarity::split_distance_between(r, &left, &right, kind).unwrap();
        let replace = match &best {
            None => true,
            Some((bl, br, bd)) => {
                d > *bd
                    || (d == *bd
                        && (left.len().min(right.len()) > bl.len().min(br.len())
                            || (left.len().min(right.len()) == bl.len().min(br.len())
                                && left < *bl)))
            }
        };
        if replace {
            best = Some((left, right, d));
        }
    }
    best.unwrap()
}

#[test]
fn split_cluster_matches_brute_force_for_small_p() {
    for seed in 0..12u64 {
        let p = 3 + (seed as usize) % 4;
        let mut state = seed.wrapping_mul(0x9e3779b97f4a7c15).wrapping_add(5);
        let mut next = || {
            state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            (state >> 11) as f64 / (1u64 << 53) as f64 - 0.5
        };
        let data = DMatrix::from_fn(p + 12, p, |_, _| next());
        let x = standardize(&RawMatrix::with_default_labels(data).unwrap()).unwrap();
        let r = crate::matrixkit::correlation(&x);
        for kind in SplitDistanceKind::ALL {
            let chosen = split_cluster(
                ClusterInput::Data(&x),
                &r,
                kind,
                LoadingPolicy::Kaiser,
                6,
            )
            .unwrap();
            let (left, right, d) = brute_force_best(&r, kind);
            assert_eq!(chosen.left, left, "kind {kind:?} seed {seed}");
            assert_eq!(chosen.right, right);
            assert_eq!(chosen.distance, d, "argmax distance must match exactly");
        }
    }
}

#[test]
fn hcsvd_two_variables() {
    let r = corr(equicorrelation(2, 0.3));
    let result = hcsvd_correlation(&r, &HcsvdConfig::default()).unwrap();
    assert_eq!(result.tree.splits.len(), 1);
    let d = result.tree.splits[0].distance;
    assert_abs_diff_eq!(d, 0.7, epsilon = 1e-15);
    assert_abs_diff_eq!(result.distances.values()[(0, 1)], d, epsilon = 0.0);
    assert_abs_diff_eq!(result.distances.values()[(1, 0)], d, epsilon = 0.0);
    assert_eq!(result.diagnostics.ultrametric_violations, 0);
}

#[test]
fn hcsvd_identity_has_unit_distances() {
    let r = corr(DMatrix::identity(8, 8));
    let result = hcsvd_correlation(&r, &HcsvdConfig::default()).unwrap();
    for record in &result.tree.splits {
        assert_abs_diff_eq!(record.distance, 1.0, epsilon = 0.0);
    }
    for i in 0..8 {
        for j in 0..8 {
            let expect = if i == j { 0.0 } else { 1.0 };
            assert_abs_diff_eq!(result.distances.values()[(i, j)], expect, epsilon = 0.0);
        }
    }
    assert_eq!(result.diagnostics.ultrametric_violations, 0);
}

#[test]
fn hcsvd_exact_two_blocks_recovers_structure() {
    let r = corr(two_design_b_blocks(0.9, 0.85));
    for kind in SplitDistanceKind::ALL {
        let config = HcsvdConfig {
            kind,
            ..HcsvdConfig::default()
        };
        let result = hcsvd_correlation(&r, &config).unwrap();
        // Root split separates the blocks at the maximum distance.
        let root = &result.tree.splits[0];
        assert_eq!(root.left.members(), &[0, 1, 2]);
        assert_eq!(root.right.members(), &[3, 4, 5]);
        assert_abs_diff_eq!(root.distance, 1.0, epsilon = 0.0);
        // All cross-block distances equal the root distance.
        for i in 0..3 {
            for j in 3..6 {
                assert_abs_diff_eq!(result.distances.values()[(i, j)], 1.0, epsilon = 0.0);
            }
        }
        assert_eq!(result.diagnostics.ultrametric_violations, 0);
        // The cut at 2 clusters is the block partition.
        let cut = cut_tree(&result.tree, 2).unwrap();
        assert_eq!(cut.clusters()[0].members(), &[0, 1, 2]);
        assert_eq!(cut.clusters()[1].members(), &[3, 4, 5]);
    }
}

#[test]
fn cut_tree_extremes() {
    let r = corr(two_design_b_blocks(0.88, 0.82));
    let result = hcsvd_correlation(&r, &HcsvdConfig::default()).unwrap();
    let one = cut_tree(&result.tree, 1).unwrap();
    assert_eq!(one.len(), 1);
    assert_eq!(one.clusters()[0].members(), &[0, 1, 2, 3, 4, 5]);
    let all = cut_tree(&result.tree, 6).unwrap();
    assert_eq!(all.len(), 6);
    assert!(cut_tree(&result.tree, 0).is_err());
    assert!(cut_tree(&result.tree, 7).is_err());
}

#[test]
fn block_recovery_at_block_count() {
    // Four exact blocks; the cut at 4 clusters must be the blocks.
    let blocks = [(3usize, 0.8), (2, 0.7), (4, 0.6), (3, 0.75)];
    let r = corr(block_matrix(&blocks));
    let config = HcsvdConfig {
        policy: LoadingPolicy::Kaiser,
        ..HcsvdConfig::default()
    };
    let result = hcsvd_correlation(&r, &config).unwrap();
    let cut = cut_tree(&result.tree, 4).unwrap();
    let expected = [vec![0usize, 1, 2], vec![3, 4], vec![5, 6, 7, 8], vec![9, 10, 11]];
    for (cluster, members) in cut.clusters().iter().zip(expected.iter()) {
        assert_eq!(cluster.members(), members.as_slice());
    }
}

#[test]
fn distance_matrix_is_schedule_independent() {
    // Noisy data: the invariant holds because disjoint clusters pose
    // identical subproblems whatever the processing order.
    let mut state = 99u64;
    let mut next = || {
        state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
        (state >> 11) as f64 / (1u64 << 53) as f64 - 0.5
    };
    let data = DMatrix::from_fn(40, 9, |_, _| next());
    let x = standardize(&RawMatrix::with_default_labels(data).unwrap()).unwrap();
    let schedules = [Schedule::Fifo, Schedule::Lifo, Schedule::Shuffled(7)];
    let results: Vec<HcsvdResult> = schedules
        .iter()
        .map(|&schedule| {
            hcsvd_data(
                &x,
                &HcsvdConfig {
                    schedule,
                    ..HcsvdConfig::default()
                },
            )
            .unwrap()
        })
        .collect();
    for result in &results[1..] {
        assert_eq!(
            result.distances.values(),
            results[0].distances.values(),
            "distance matrix must not depend on processing order"
        );
        let mut a: Vec<_> = results[0].tree.splits.iter().map(|s| s.parent.clone()).collect();
        let mut b: Vec<_> = result.tree.splits.iter().map(|s| s.parent.clone()).collect();
        a.sort();
        b.sort();
        assert_eq!(a, b, "the set of split clusters must coincide");
    }
}

#[test]
fn partitions_stay_valid_after_every_split() {
    let r = corr(block_matrix(&[(4, 0.5), (3, 0.6)]));
    let result = hcsvd_correlation(&r, &HcsvdConfig::default()).unwrap();
    for k in 1..=7 {
        let cut = cut_tree(&result.tree, k).unwrap();
        assert_eq!(cut.len(), k);
    }
    for record in &result.tree.splits {
        let mut union: Vec<usize> = record
            .left
            .members()
            .iter()
            .chain(record.right.members())
            .copied()
            .collect();
        union.sort_unstable();
        assert_eq!(union, record.parent.members());
    }
}

#[test]
fn reliability_heights_mode() {
    let r = corr(two_design_b_blocks(0.9, 0.85));
    let config = HcsvdConfig {
        height_mode: HeightMode::Reliability,
        ..HcsvdConfig::default()
    };
    let result = hcsvd_correlation(&r, &config).unwrap();
    // Root cluster reliability: 1 - lambda_1(R) / 6.
    let lambda1 = crate::matrixkit::spectral_norm(&r).unwrap();
    assert_abs_diff_eq!(result.tree.heights[0], 1.0 - lambda1 / 6.0, epsilon = 1e-12);
}

#[test]
fn candidate_bound_holds_on_every_split() {
    let mut state = 17u64;
    let mut next = || {
        state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
        (state >> 11) as f64 / (1u64 << 53) as f64 - 0.5
    };
    let data = DMatrix::from_fn(50, 12, |_, _| next());
    let x = standardize(&RawMatrix::with_default_labels(data).unwrap()).unwrap();
    let result = hcsvd_data(&x, &HcsvdConfig::default()).unwrap();
    for stats in &result.tree.stats {
        if stats.loading_count > 0 {
            assert!(stats.candidates_evaluated <= stats.loading_count * (stats.cluster_size - 1));
        }
    }
}

#[test]
fn distance_matrix_reconstructs_separating_splits() {
    let mut state = 55u64;
    let mut next = || {
        state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
        (state >> 11) as f64 / (1u64 << 53) as f64 - 0.5
    };
    let data = DMatrix::from_fn(60, 10, |_, _| next());
    let x = standardize(&RawMatrix::with_default_labels(data).unwrap()).unwrap();
    let result = hcsvd_data(&x, &HcsvdConfig::default()).unwrap();
    // m_kl equals the distance of the split that separates k from l.
    for record in &result.tree.splits {
        for &k in record.left.members() {
            for &l in record.right.members() {
                assert_eq!(result.distances.values()[(k, l)], record.distance);
            }
        }
    }
}
