//! The divisive clustering engine: loading-count selection, candidate
//! generation from sparse loadings, per-cluster split search with an
//! exhaustive route for small clusters, and the full top-down recursion
//! assembling the between-variable distance matrix.

mod tree;

pub use tree::{
    check_ultrametric, cut_tree, Cluster, HeightMode, Partition, SplitRecord, SplitSource,
    SplitStats, SplitTree, UltraDistanceMatrix,
};

use std::collections::BTreeMap;

use nalgebra::DMatrix;
use rayon::prelude::*;
use thiserror::Error;

use crate::dissimilarity::{
    reliability_height, split_distance_between, DissimilarityError, SplitDistanceKind,
};
use crate::matrixkit::{correlation, sym_eigen, CorrelationMatrix, MatrixError, StandardizedMatrix};
use crate::sparse_loadings::{eigenvector_hints, sequence_from_state, DeflationState, SparseError};

/// Cluster sizes above this never fall back to exhaustive enumeration,
/// even when every sparse candidate degenerates.
const FALLBACK_CAP: usize = 14;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum DivisiveError {
    #[error(transparent)]
    Matrix(#[from] MatrixError),
    #[error(transparent)]
    Sparse(#[from] SparseError),
    #[error(transparent)]
    Dissimilarity(#[from] DissimilarityError),
    #[error("cluster size {p_i} exceeds the exhaustive enumeration threshold {threshold}")]
    ThresholdExceeded { p_i: usize, threshold: usize },
    #[error("no valid split candidate for a cluster of {cluster_size} variables")]
    NoValidCandidate { cluster_size: usize },
    #[error("need at least 2 variables, got {p}")]
    TooFewVariables { p: usize },
    #[error("cut at {k} clusters invalid for {p} variables")]
    InvalidCut { k: usize, p: usize },
    #[error("invalid partition: {message}")]
    InvalidPartition { message: String },
    #[error("cluster must be nonempty")]
    EmptyCluster,
}

/// How many sparse loadings to compute per degree of sparsity.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LoadingPolicy {
    /// Number of eigenvalues >= 1 of the cluster correlation matrix.
    Kaiser,
    /// A fixed count, capped at the cluster size.
    Fixed(usize),
    /// All p_i loadings.
    All,
}

/// Order in which splittable clusters are processed. The resulting
/// distance matrix does not depend on it; the schedule exists so tests
/// can assert exactly that.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Schedule {
    Fifo,
    Lifo,
    Shuffled(u64),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HcsvdConfig {
    pub kind: SplitDistanceKind,
    pub policy: LoadingPolicy,
    pub height_mode: HeightMode,
    pub exhaustive_threshold: usize,
    pub schedule: Schedule,
}

impl Default for HcsvdConfig {
    fn default() -> Self {
        HcsvdConfig {
            kind: SplitDistanceKind::Single,
            policy: LoadingPolicy::Kaiser,
            height_mode: HeightMode::SplitDistance,
            exhaustive_threshold: 6,
            schedule: Schedule::Fifo,
        }
    }
}

/// Post-run health report. Violations are recorded, never repaired.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Diagnostics {
    pub ultrametric_violations: usize,
    pub monotone_heights: bool,
}

#[derive(Debug, Clone)]
pub struct HcsvdResult {
    pub tree: SplitTree,
    pub distances: UltraDistanceMatrix,
    pub diagnostics: Diagnostics,
}

/// Number of sparse loadings for a cluster under the given policy.
pub fn loading_count(r_i: &CorrelationMatrix, policy: LoadingPolicy) -> Result<usize, MatrixError> {
    let p_i = r_i.p();
    match policy {
        LoadingPolicy::Kaiser => {
            let eigenvalues = sym_eigen(r_i)?.eigenvalues;
            // The trace is p_i, so at least one eigenvalue reaches 1; the
            // small slack absorbs eigensolver dust on exact fixtures.
            Ok(eigenvalues.iter().filter(|&&l| l >= 1.0 - 1e-10).count().max(1))
        }
        LoadingPolicy::Fixed(k) => Ok(k.clamp(1, p_i)),
        LoadingPolicy::All => Ok(p_i),
    }
}

/// A (left, right) bipartition in local cluster indices.
pub type Bipartition = (Vec<usize>, Vec<usize>);

/// All 2^(p_i - 1) - 1 bipartitions of a cluster of p_i variables, in
/// local indices, each listed once with the side containing index 0 on
/// the left.
pub fn exhaustive_splits(
    p_i: usize,
    threshold: usize,
) -> Result<Vec<Bipartition>, DivisiveError> {
    if p_i > threshold {
        return Err(DivisiveError::ThresholdExceeded { p_i, threshold });
    }
    if p_i < 2 {
        return Err(DivisiveError::TooFewVariables { p: p_i });
    }
    let total = 1usize << (p_i - 1);
    let mut out = Vec::with_capacity(total - 1);
    for mask in 1..total {
        let mut left = vec![0usize];
        let mut right = Vec::new();
        for bit in 0..(p_i - 1) {
            if mask & (1 << bit) != 0 {
                right.push(bit + 1);
            } else {
                left.push(bit + 1);
            }
        }
        out.push((left, right));
    }
    Ok(out)
}

/// A candidate bipartition in local cluster indices.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CandidateSplit {
    pub left: Vec<usize>,
    pub right: Vec<usize>,
    pub source: SplitSource,
}

/// Candidate bipartitions proposed by sparse loadings: for every degree
/// of sparsity s in 1..p_i-1, the supports of the first k_i loadings of
/// the cluster matrix. Duplicates are removed (first (s, rank) wins);
/// loadings with empty or full support are skipped. At most
/// k_i * (p_i - 1) candidates result.
pub fn candidate_splits(
    x_i: &DMatrix<f64>,
    k_i: usize,
) -> Result<Vec<CandidateSplit>, DivisiveError> {
    let p_i = x_i.ncols();
    if p_i < 2 {
        return Err(DivisiveError::TooFewVariables { p: p_i });
    }
    let base_state = DeflationState::new(x_i);
    let hints = eigenvector_hints(&base_state, k_i);
    type RankedSupports = Vec<(usize, Vec<usize>)>;
    let per_degree: Vec<Result<RankedSupports, SparseError>> = (1..p_i)
        .into_par_iter()
        .map(|s| {
            let mut state = base_state.clone();
            let sequence = sequence_from_state(&mut state, k_i, s, &hints)?;
            Ok(sequence
                .loadings
                .into_iter()
                .enumerate()
                .map(|(rank, loading)| (rank + 1, loading.support))
                .collect())
        })
        .collect();

    let mut unique: BTreeMap<Vec<usize>, SplitSource> = BTreeMap::new();
    for (offset, result) in per_degree.into_iter().enumerate() {
        let s = offset + 1;
        for (rank, support) in result? {
            if support.is_empty() || support.len() >= p_i {
                continue;
            }
            let (left, _) = canonical_bipartition(&support, p_i);
            unique
                .entry(left)
                .or_insert(SplitSource::SparseLoading { s, rank });
        }
    }
    Ok(unique
        .into_iter()
        .map(|(left, source)| {
            let right = complement(&left, p_i);
            CandidateSplit {
                left,
                right,
                source,
            }
        })
        .collect())
}

fn canonical_bipartition(support: &[usize], p_i: usize) -> (Vec<usize>, Vec<usize>) {
    let complement_side = complement(support, p_i);
    if support[0] == 0 {
        (support.to_vec(), complement_side)
    } else {
        (complement_side, support.to_vec())
    }
}

fn complement(side: &[usize], p_i: usize) -> Vec<usize> {
    let mut in_side = vec![false; p_i];
    for &i in side {
        in_side[i] = true;
    }
    (0..p_i).filter(|&i| !in_side[i]).collect()
}

/// A chosen split, in local cluster indices, with telemetry.
#[derive(Debug, Clone)]
pub struct ChosenSplit {
    pub left: Vec<usize>,
    pub right: Vec<usize>,
    pub distance: f64,
    pub source: SplitSource,
    pub stats: SplitStats,
}

/// The cluster matrix sparse loadings operate on: the standardized data
/// columns when raw data is available, otherwise the cluster correlation
/// matrix itself (whose eigenvectors coincide with the right singular
/// vectors of the data in the exact case).
#[derive(Debug, Clone, Copy)]
pub enum ClusterInput<'a> {
    Data(&'a StandardizedMatrix),
    Correlation(&'a CorrelationMatrix),
}

impl<'a> ClusterInput<'a> {
    fn p(&self) -> usize {
        match self {
            ClusterInput::Data(x) => x.p(),
            ClusterInput::Correlation(r) => r.p(),
        }
    }

    fn loading_matrix(&self, members: &[usize]) -> DMatrix<f64> {
        match self {
            ClusterInput::Data(x) => x.select_columns(members),
            ClusterInput::Correlation(r) => r.principal_submatrix(members).values().clone(),
        }
    }
}

/// Splits one cluster: evaluates the split distance of every candidate
/// bipartition (exhaustive when the cluster is at most
/// `exhaustive_threshold` wide, sparse-loading candidates otherwise) and
/// returns the argmax. Ties prefer the more balanced split, then the
/// lexicographically smallest left side.
pub fn split_cluster(
    input: ClusterInput<'_>,
    r_i: &CorrelationMatrix,
    kind: SplitDistanceKind,
    policy: LoadingPolicy,
    exhaustive_threshold: usize,
) -> Result<ChosenSplit, DivisiveError> {
    let members: Vec<usize> = (0..input.p()).collect();
    split_cluster_members(&input, &members, r_i, kind, policy, exhaustive_threshold)
}

fn split_cluster_members(
    input: &ClusterInput<'_>,
    members: &[usize],
    r_i: &CorrelationMatrix,
    kind: SplitDistanceKind,
    policy: LoadingPolicy,
    exhaustive_threshold: usize,
) -> Result<ChosenSplit, DivisiveError> {
    let p_i = members.len();
    if p_i < 2 {
        return Err(DivisiveError::TooFewVariables { p: p_i });
    }
    debug_assert_eq!(r_i.p(), p_i);

    let (candidates, loadings_used) = if p_i <= exhaustive_threshold {
        let bipartitions = exhaustive_splits(p_i, exhaustive_threshold)?;
        let candidates = bipartitions
            .into_iter()
            .map(|(left, right)| CandidateSplit {
                left,
                right,
                source: SplitSource::Exhaustive,
            })
            .collect::<Vec<_>>();
        (candidates, 0)
    } else {
        let k_i = loading_count(r_i, policy)?;
        let x_i = input.loading_matrix(members);
        let candidates = candidate_splits(&x_i, k_i)?;
        if candidates.is_empty() {
            if p_i <= FALLBACK_CAP {
                let candidates = exhaustive_splits(p_i, FALLBACK_CAP)?
                    .into_iter()
                    .map(|(left, right)| CandidateSplit {
                        left,
                        right,
                        source: SplitSource::Exhaustive,
                    })
                    .collect::<Vec<_>>();
                (candidates, k_i)
            } else {
                return Err(DivisiveError::NoValidCandidate { cluster_size: p_i });
            }
        } else {
            (candidates, k_i)
        }
    };

    let distances: Vec<Result<f64, DissimilarityError>> = candidates
        .par_iter()
        .map(|c| split_distance_between(r_i, &c.left, &c.right, kind))
        .collect();

    let mut best: Option<(usize, f64)> = None;
    for (idx, distance) in distances.into_iter().enumerate() {
        let distance = distance?;
        let better = match best {
            None => true,
            Some((best_idx, best_distance)) => {
                preferred(&candidates[idx], distance, &candidates[best_idx], best_distance)
            }
        };
        if better {
            best = Some((idx, distance));
        }
    }
    let (idx, distance) = best.ok_or(DivisiveError::NoValidCandidate { cluster_size: p_i })?;
    let chosen = &candidates[idx];
    Ok(ChosenSplit {
        left: chosen.left.clone(),
        right: chosen.right.clone(),
        distance,
        source: chosen.source,
        stats: SplitStats {
            cluster_size: p_i,
            loading_count: loadings_used,
            candidates_evaluated: candidates.len(),
        },
    })
}

/// Total preference order over candidates: larger distance, then larger
/// smaller-side size (more balanced), then lexicographically smaller left
/// side. Applied pairwise over the full candidate list, so the winner is
/// independent of enumeration order.
fn preferred(a: &CandidateSplit, a_distance: f64, b: &CandidateSplit, b_distance: f64) -> bool {
    if a_distance != b_distance {
        return a_distance > b_distance;
    }
    let a_min = a.left.len().min(a.right.len());
    let b_min = b.left.len().min(b.right.len());
    if a_min != b_min {
        return a_min > b_min;
    }
    a.left < b.left
}

/// Runs the full divisive procedure on standardized data.
pub fn hcsvd_data(x: &StandardizedMatrix, config: &HcsvdConfig) -> Result<HcsvdResult, DivisiveError> {
    let r = correlation(x);
    run_engine(ClusterInput::Data(x), &r, config)
}

/// Runs the full divisive procedure on a correlation matrix alone. Sparse
/// loadings are computed from R itself; for noisy inputs this is the
/// documented approximation to the data route.
pub fn hcsvd_correlation(
    r: &CorrelationMatrix,
    config: &HcsvdConfig,
) -> Result<HcsvdResult, DivisiveError> {
    run_engine(ClusterInput::Correlation(r), r, config)
}

fn run_engine(
    input: ClusterInput<'_>,
    r: &CorrelationMatrix,
    config: &HcsvdConfig,
) -> Result<HcsvdResult, DivisiveError> {
    let p = r.p();
    if p < 2 {
        return Err(DivisiveError::TooFewVariables { p });
    }
    let mut m = DMatrix::zeros(p, p);
    let mut queue: Vec<Cluster> = vec![Cluster::from_sorted((0..p).collect())];
    let mut splits: Vec<SplitRecord> = Vec::with_capacity(p - 1);
    let mut heights: Vec<f64> = Vec::with_capacity(p - 1);
    let mut stats: Vec<SplitStats> = Vec::with_capacity(p - 1);
    let mut step = 0u64;

    while let Some(cluster) = take_next(&mut queue, config.schedule, &mut step) {
        let members = cluster.members();
        let r_i = r.principal_submatrix(members);
        let chosen = split_cluster_members(
            &input,
            members,
            &r_i,
            config.kind,
            config.policy,
            config.exhaustive_threshold,
        )?;

        let left = Cluster::from_sorted(chosen.left.iter().map(|&i| members[i]).collect());
        let right = Cluster::from_sorted(chosen.right.iter().map(|&i| members[i]).collect());
        for &k in left.members() {
            for &l in right.members() {
                m[(k, l)] = chosen.distance;
                m[(l, k)] = chosen.distance;
            }
        }
        let height = match config.height_mode {
            HeightMode::SplitDistance => chosen.distance,
            HeightMode::Reliability => reliability_height(&r_i)?,
            HeightMode::Diameter => {
                unreachable!("diameter heights belong to the DIANA baseline")
            }
        };

        if left.len() >= 2 {
            queue.push(left.clone());
        }
        if right.len() >= 2 {
            queue.push(right.clone());
        }
        splits.push(SplitRecord {
            parent: cluster,
            left,
            right,
            distance: chosen.distance,
            source: chosen.source,
        });
        heights.push(height);
        stats.push(chosen.stats);
    }

    let tree = SplitTree {
        labels: r.column_labels().to_vec(),
        splits,
        heights,
        height_mode: config.height_mode,
        stats,
    };
    let distances = UltraDistanceMatrix::from_assembled(m);
    let diagnostics = Diagnostics {
        ultrametric_violations: check_ultrametric(&distances, 1e-12).len(),
        monotone_heights: tree.heights_monotone(),
    };
    Ok(HcsvdResult {
        tree,
        distances,
        diagnostics,
    })
}

/// FIFO by default; the alternatives exist to demonstrate that the
/// distance matrix does not depend on processing order.
fn take_next(queue: &mut Vec<Cluster>, schedule: Schedule, step: &mut u64) -> Option<Cluster> {
    if queue.is_empty() {
        return None;
    }
    let index = match schedule {
        Schedule::Fifo => 0,
        Schedule::Lifo => queue.len() - 1,
        Schedule::Shuffled(seed) => {
            *step += 1;
            let mut z = seed ^ step.wrapping_mul(0x9e37_79b9_7f4a_7c15);
            z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
            z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
            (z ^ (z >> 31)) as usize % queue.len()
        }
    };
    Some(queue.remove(index))
}

#[cfg(test)]
mod tests;
