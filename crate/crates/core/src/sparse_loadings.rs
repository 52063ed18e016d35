//! Sparse loadings: sparse approximations of the right singular vectors
//! of a data matrix, with an exact degree of sparsity s.
//!
//! A loading is computed by rank-1 alternating minimization of
//! ||X - u v^T||_F^2 with v constrained to unit norm: each iteration maps
//! v to X^T X v, soft-thresholds at the (s+1)-th largest magnitude so
//! that exactly the s largest-magnitude entries survive, and normalizes.
//! Later loadings are extracted from the deflated residuals
//! X_{r+1} = X_r - sigma_r u_r v_r^T, which for the quasi triple equals
//! the projection X_r (I - v_r v_r^T).
//!
//! The whole iteration only touches X through its Gram matrix G = X^T X
//! (z = X^T u is proportional to G v, sigma = sqrt(v^T G v), and the
//! deflation maps G to (I - v v^T) G (I - v v^T)), so that is what the
//! inner loop operates on.

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

use crate::matrixkit::deterministic_unit_vector;

const POWER_TOLERANCE: f64 = 1e-9;
const POWER_MAX_ITER: usize = 1000;
const ALTERNATION_TOLERANCE: f64 = 1e-6;
const ALTERNATION_MAX_ITER: usize = 500;
/// Iterations without objective improvement after which a rotating
/// iterate settles for its best visited point.
const STAGNATION_ITER: usize = 50;
/// Largest degree of sparsity for which the axis-aligned second start is
/// attempted.
const DIAGONAL_START_MAX_S: usize = 8;
/// Residual Frobenius norm below which deflation stops producing loadings.
const RESIDUAL_FLOOR: f64 = 1e-12;
/// Input Frobenius norm below which the matrix counts as zero.
const ZERO_FLOOR: f64 = 1e-14;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SparseError {
    #[error("input matrix is numerically zero")]
    ZeroMatrix,
    #[error("sparse rank-1 iteration did not converge within {max_iter} iterations (s = {s})")]
    ConvergenceFailure { s: usize, max_iter: usize },
    #[error("degree of sparsity {s} outside 1..={p}")]
    InvalidDegree { s: usize, p: usize },
    #[error("loading count {k} outside 1..={p}")]
    InvalidCount { k: usize, p: usize },
}

/// One sparse loading: a unit vector whose support proposes a cluster
/// split, together with the quasi singular value ||X v||_2.
#[derive(Debug, Clone)]
pub struct SparseLoading {
    pub vector: DVector<f64>,
    /// Ascending indices of the nonzero entries.
    pub support: Vec<usize>,
    /// Number of nonzero entries. Equals the requested s unless the
    /// input had fewer than s numerically nonzero directions.
    pub degree: usize,
    pub quasi_singular_value: f64,
}

/// Result of extracting a deflation sequence of loadings.
#[derive(Debug, Clone)]
pub struct LoadingSequence {
    pub loadings: Vec<SparseLoading>,
    /// True when the residual degenerated before all k loadings could be
    /// extracted; `loadings` then holds the ones found.
    pub truncated: bool,
}

/// Gram-matrix view of the deflation state. `trace` equals the squared
/// Frobenius norm of the implicit residual data matrix and is
/// non-increasing under deflation.
#[derive(Debug, Clone)]
pub(crate) struct DeflationState {
    gram: DMatrix<f64>,
    rank_extracted: usize,
}

impl DeflationState {
    pub(crate) fn new(x: &DMatrix<f64>) -> Self {
        let mut gram = x.tr_mul(x);
        let p = gram.ncols();
        for i in 0..p {
            for j in (i + 1)..p {
                let avg = 0.5 * (gram[(i, j)] + gram[(j, i)]);
                gram[(i, j)] = avg;
                gram[(j, i)] = avg;
            }
        }
        DeflationState {
            gram,
            rank_extracted: 0,
        }
    }

    pub(crate) fn residual_frobenius(&self) -> f64 {
        self.gram.trace().max(0.0).sqrt()
    }

    pub(crate) fn rank_extracted(&self) -> usize {
        self.rank_extracted
    }

    /// Removes the rank-1 component sigma u v^T, i.e. projects the
    /// residual onto the orthogonal complement of v:
    /// G <- (I - v v^T) G (I - v v^T).
    pub(crate) fn deflate(&mut self, v: &DVector<f64>) {
        let w = &self.gram * v;
        let c = v.dot(&w);
        let p = v.len();
        for i in 0..p {
            for j in 0..p {
                self.gram[(i, j)] += c * v[i] * v[j] - v[i] * w[j] - w[i] * v[j];
            }
        }
        self.rank_extracted += 1;
    }
}

/// First sparse loading of `x` with exactly `s` nonzero entries.
pub fn sparse_rank1(x: &DMatrix<f64>, s: usize) -> Result<SparseLoading, SparseError> {
    let p = x.ncols();
    if s == 0 || s > p {
        return Err(SparseError::InvalidDegree { s, p });
    }
    let state = DeflationState::new(x);
    if state.residual_frobenius() < ZERO_FLOOR {
        return Err(SparseError::ZeroMatrix);
    }
    let hints = eigenvector_hints(&state, 1);
    sparse_rank1_gram(&state.gram, s, hints.first())
}

/// First k sparse loadings of `x`, each of degree `s`, extracted by
/// residual deflation.
pub fn sparse_loading_sequence(
    x: &DMatrix<f64>,
    k: usize,
    s: usize,
) -> Result<LoadingSequence, SparseError> {
    let p = x.ncols();
    if s == 0 || s > p {
        return Err(SparseError::InvalidDegree { s, p });
    }
    if k == 0 || k > p {
        return Err(SparseError::InvalidCount { k, p });
    }
    let mut state = DeflationState::new(x);
    if state.residual_frobenius() < ZERO_FLOOR {
        return Err(SparseError::ZeroMatrix);
    }
    let hints = eigenvector_hints(&state, k);
    sequence_from_state(&mut state, k, s, &hints)
}

pub(crate) fn sequence_from_state(
    state: &mut DeflationState,
    k: usize,
    s: usize,
    hints: &[DVector<f64>],
) -> Result<LoadingSequence, SparseError> {
    let mut loadings = Vec::with_capacity(k);
    for rank in 0..k {
        if state.rank_extracted() > 0 && state.residual_frobenius() < RESIDUAL_FLOOR {
            return Ok(LoadingSequence {
                loadings,
                truncated: true,
            });
        }
        let loading = sparse_rank1_gram(&state.gram, s, hints.get(rank))?;
        state.deflate(&loading.vector);
        loadings.push(loading);
    }
    Ok(LoadingSequence {
        loadings,
        truncated: false,
    })
}

/// Top-k eigenvectors of the undeflated Gram matrix, used to warm-start
/// the per-rank power iterations of every degree of sparsity: after r
/// deflations the residual's leading direction is near (for clean
/// extractions, exactly) the (r+1)-th eigenvector of the base matrix.
pub(crate) fn eigenvector_hints(state: &DeflationState, k: usize) -> Vec<DVector<f64>> {
    let p = state.gram.ncols();
    match nalgebra::SymmetricEigen::try_new(state.gram.clone(), f64::EPSILON, 100_000) {
        Some(decomp) => {
            let mut order: Vec<usize> = (0..p).collect();
            order.sort_by(|&a, &b| {
                decomp.eigenvalues[b]
                    .partial_cmp(&decomp.eigenvalues[a])
                    .unwrap_or(std::cmp::Ordering::Equal)
                    .then(a.cmp(&b))
            });
            order
                .into_iter()
                .take(k)
                .map(|i| decomp.eigenvectors.column(i).into_owned())
                .collect()
        }
        None => Vec::new(),
    }
}

/// Rank-1 sparse loading of the matrix whose Gram matrix is `g`.
///
/// The alternation is run from two deterministic starts: the dense
/// leading eigenvector of `g`, and the indicator of the s largest
/// diagonal entries. The second start pins down the axis-aligned optima
/// the dense start can miss (for s = 1 it is always a fixed point at the
/// global optimum, since |g_ij| <= sqrt(g_ii g_jj) for PSD g); the
/// candidate with the larger quasi singular value wins, ties going to
/// the dense start.
fn sparse_rank1_gram(
    g: &DMatrix<f64>,
    s: usize,
    hint: Option<&DVector<f64>>,
) -> Result<SparseLoading, SparseError> {
    let dense_start = dominant_eigenvector(g, hint);
    let first = alternate_from(g, s, dense_start);
    // The axis-aligned start earns its keep in the strongly sparse
    // regime, where soft-thresholding distorts the dense direction the
    // most; for larger s the thresholded dense start is reliable and a
    // second full alternation would only double the cost.
    if s > DIAGONAL_START_MAX_S {
        return first;
    }
    let second = alternate_from(g, s, top_diagonal_indicator(g, s));
    match (first, second) {
        (Ok(a), Ok(b)) => Ok(if b.quasi_singular_value > a.quasi_singular_value {
            b
        } else {
            a
        }),
        (Ok(a), Err(_)) => Ok(a),
        (Err(_), Ok(b)) => Ok(b),
        (Err(e), Err(_)) => Err(e),
    }
}

fn top_diagonal_indicator(g: &DMatrix<f64>, s: usize) -> DVector<f64> {
    let p = g.ncols();
    let mut order: Vec<usize> = (0..p).collect();
    order.sort_by(|&a, &b| {
        g[(b, b)]
            .partial_cmp(&g[(a, a)])
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(a.cmp(&b))
    });
    let mut v = DVector::zeros(p);
    let weight = 1.0 / (s as f64).sqrt();
    for &i in order.iter().take(s) {
        v[i] = weight;
    }
    v
}

fn alternate_from(
    g: &DMatrix<f64>,
    s: usize,
    start: DVector<f64>,
) -> Result<SparseLoading, SparseError> {
    let p = g.ncols();
    let mut v = start;
    let mut support: Vec<usize> = Vec::new();
    let mut stagnant_iterations = 0usize;
    let mut rotating = false;
    let mut best: Option<(f64, DVector<f64>, Vec<usize>)> = None;
    let mut converged = false;
    for iter in 0..ALTERNATION_MAX_ITER {
        let z = g * &v;
        if iter > 0 {
            // Objective of the current (thresholded, unit) iterate; kept
            // so a flat-spectrum rotation that never settles can still
            // return its best visited point.
            let gain = v.dot(&z);
            let improved = best
                .as_ref()
                .is_none_or(|(g0, _, _)| gain > *g0 * (1.0 + 1e-9));
            if best.as_ref().is_none_or(|(g0, _, _)| gain > *g0) {
                best = Some((gain, v.clone(), support.clone()));
            }
            stagnant_iterations = if improved { 0 } else { stagnant_iterations + 1 };
            if stagnant_iterations >= STAGNATION_ITER && rotating {
                break;
            }
        }
        let (new_v, new_support) = threshold_to_degree(&z, s);
        let Some(new_v) = new_v else {
            // G v vanished while the residual itself is nonzero; the
            // iterate fell into the null space and cannot recover.
            return Err(SparseError::ConvergenceFailure {
                s,
                max_iter: ALTERNATION_MAX_ITER,
            });
        };
        let delta = (&new_v - &v).norm();
        // An iterate below the main tolerance is converging, not rotating.
        rotating = delta > ALTERNATION_TOLERANCE;
        let stable = new_support == support;
        v = new_v;
        support = new_support;
        if stable && delta < ALTERNATION_TOLERANCE {
            converged = true;
            break;
        }
    }
    if !converged {
        // A noise-flat spectrum can rotate the iterate forever without a
        // settled support; any visited point is an equally good local
        // solution, so take the best-objective one deterministically.
        match best {
            Some((_, best_v, best_support)) => {
                v = best_v;
                support = best_support;
            }
            None => {
                return Err(SparseError::ConvergenceFailure {
                    s,
                    max_iter: ALTERNATION_MAX_ITER,
                });
            }
        }
    }
    // Sign convention: the largest-magnitude entry is positive (ties by
    // smallest index are already resolved by strict comparison).
    let mut best = 0usize;
    for i in 1..p {
        if v[i].abs() > v[best].abs() {
            best = i;
        }
    }
    if v[best] < 0.0 {
        v.neg_mut();
    }
    let sigma_sq = v.dot(&(g * &v)).max(0.0);
    Ok(SparseLoading {
        degree: support.len(),
        support,
        quasi_singular_value: sigma_sq.sqrt(),
        vector: v,
    })
}

/// Soft-thresholds `z` at the (s+1)-th largest magnitude, keeping exactly
/// the s largest-magnitude entries (ties broken by smaller index) and
/// normalizing. When the boundary magnitudes tie, the shrinkage is eased
/// just enough to keep the selected support nonzero. Returns the new unit
/// vector and its support, or None when `z` is numerically zero.
fn threshold_to_degree(z: &DVector<f64>, s: usize) -> (Option<DVector<f64>>, Vec<usize>) {
    let p = z.len();
    let mut order: Vec<usize> = (0..p).collect();
    order.sort_by(|&a, &b| {
        z[b].abs()
            .partial_cmp(&z[a].abs())
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(a.cmp(&b))
    });
    let threshold = if s < p { z[order[s]].abs() } else { 0.0 };
    let smallest_kept = z[order[s.min(p) - 1]].abs();
    let effective = threshold.min(smallest_kept * (1.0 - 1e-9));

    let mut v = DVector::zeros(p);
    let mut support = Vec::with_capacity(s);
    for &i in order.iter().take(s) {
        let magnitude = z[i].abs() - effective;
        if magnitude > 0.0 {
            v[i] = z[i].signum() * magnitude;
            support.push(i);
        }
    }
    support.sort_unstable();
    let norm = v.norm();
    if norm <= 0.0 {
        return (None, support);
    }
    (Some(v / norm), support)
}

/// Leading eigenvector of the PSD matrix `g` by power iteration from a
/// fixed deterministic start. Stops on iterate change below 1e-9, on an
/// eigenvalue plateau (the iterate then merely rotates inside a
/// degenerate leading eigenspace, which is equally good as a start), or
/// after 1000 iterations.
fn dominant_eigenvector(g: &DMatrix<f64>, warm_start: Option<&DVector<f64>>) -> DVector<f64> {
    let p = g.ncols();
    let mut v = match warm_start {
        Some(start) => start.clone(),
        None => deterministic_unit_vector(p, p as u64),
    };
    let mut previous_lambda = f64::INFINITY;
    let mut plateau = 0usize;
    for iter in 0..POWER_MAX_ITER {
        let w = g * &v;
        let lambda = w.norm();
        if lambda < 1e-300 {
            return v;
        }
        let next = w / lambda;
        let delta = (&next - &v).norm();
        v = next;
        if delta < POWER_TOLERANCE {
            break;
        }
        // Flat spectra rotate the iterate without moving the eigenvalue
        // estimate; any vector of the leading eigenspace is an equally
        // good start for the thresholded alternation that follows. The
        // delta guard keeps ordinary slow convergence (quadratically flat
        // eigenvalue, shrinking delta) running to full accuracy.
        plateau = if (lambda - previous_lambda).abs() <= 1e-10 * lambda.max(1.0) {
            plateau + 1
        } else {
            0
        };
        if iter > 20 && plateau >= 3 && delta > 1e-6 {
            break;
        }
        previous_lambda = lambda;
    }
    v
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn pseudo_random_matrix(seed: u64, n: usize, p: usize) -> DMatrix<f64> {
        let mut state = seed.wrapping_mul(0x9e3779b97f4a7c15).wrapping_add(0x1234);
        DMatrix::from_fn(n, p, |_, _| {
            state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            (state >> 11) as f64 / (1u64 << 53) as f64 - 0.5
        })
    }

    #[test]
    fn single_nonzero_column_gives_basis_vector() {
        let mut x = DMatrix::zeros(5, 3);
        for i in 0..5 {
            x[(i, 1)] = (i as f64) - 2.0;
        }
        let loading = sparse_rank1(&x, 1).unwrap();
        assert_eq!(loading.support, vec![1]);
        assert_abs_diff_eq!(loading.vector[1].abs(), 1.0, epsilon = 1e-12);
        assert!(loading.vector[1] > 0.0, "sign convention");
    }

    #[test]
    fn zero_matrix_is_rejected() {
        let x = DMatrix::zeros(4, 3);
        assert_eq!(sparse_rank1(&x, 1).unwrap_err(), SparseError::ZeroMatrix);
    }

    /// Block-diagonal correlation input: the support with s = |B1| must be
    /// exactly B1's column set when lambda_1(B1) > lambda_1(B2). Verified
    /// against the full eigendecomposition of the block matrix.
    #[test]
    fn block_diagonal_support_recovers_dominant_block() {
        // B1 on {0,1,2} with rho = 0.8 (lambda1 = 2.6), B2 on {3,4} with
        // rho = 0.5 (lambda1 = 1.5).
        let mut r = DMatrix::identity(5, 5);
        for i in 0..3 {
            for j in 0..3 {
                if i != j {
                    r[(i, j)] = 0.8;
                }
            }
        }
        r[(3, 4)] = 0.5;
        r[(4, 3)] = 0.5;
        let eig = crate::matrixkit::sym_eigenvalues_raw(&r).unwrap();
        assert_abs_diff_eq!(eig[0], 2.6, epsilon = 1e-10);

        // Feed R itself as the input matrix (correlation-only route).
        let loading = sparse_rank1(&r, 3).unwrap();
        assert_eq!(loading.support, vec![0, 1, 2]);
        assert_eq!(loading.degree, 3);
    }

    #[test]
    fn dense_degree_matches_leading_singular_vector() {
        let x = pseudo_random_matrix(3, 20, 5);
        let loading = sparse_rank1(&x, 5).unwrap();
        let svd = nalgebra::SVD::new(x.clone(), false, true);
        let vt = svd.v_t.unwrap();
        let mut dense: DVector<f64> = vt.row(0).transpose();
        // Align sign with the loading convention.
        let mut best = 0usize;
        for i in 1..5 {
            if dense[i].abs() > dense[best].abs() {
                best = i;
            }
        }
        if dense[best] < 0.0 {
            dense.neg_mut();
        }
        assert!((&loading.vector - &dense).norm() < 1e-6);
        assert_abs_diff_eq!(
            loading.quasi_singular_value,
            svd.singular_values[0],
            epsilon = 1e-6
        );
    }

    #[test]
    fn orthogonal_columns_give_distinct_singleton_supports() {
        // Diagonal data: columns orthogonal with distinct norms.
        let mut x = DMatrix::zeros(4, 3);
        x[(0, 0)] = 3.0;
        x[(1, 1)] = 2.0;
        x[(2, 2)] = 1.0;
        let seq = sparse_loading_sequence(&x, 2, 1).unwrap();
        assert!(!seq.truncated);
        assert_eq!(seq.loadings[0].support, vec![0]);
        assert_eq!(seq.loadings[1].support, vec![1]);
    }

    #[test]
    fn sequence_of_one_matches_rank1() {
        let x = pseudo_random_matrix(9, 12, 4);
        let seq = sparse_loading_sequence(&x, 1, 2).unwrap();
        let single = sparse_rank1(&x, 2).unwrap();
        assert_eq!(seq.loadings.len(), 1);
        assert_eq!(seq.loadings[0].support, single.support);
        assert!((&seq.loadings[0].vector - &single.vector).norm() < 1e-14);
    }

    /// Design-(b)-like structure: 4 blocks of 3 variables; with s = 3 the
    /// first 4 supports must tile the 4 blocks (verified against the
    /// connected components of the construction).
    #[test]
    fn exact_block_structure_supports_tile_blocks() {
        let etas = [0.83_f64, 0.88, 0.81, 0.86];
        let p = 12;
        let mut r = DMatrix::identity(p, p);
        for (b, &eta) in etas.iter().enumerate() {
            let o = 3 * b;
            let eta4 = eta.powi(4);
            r[(o, o + 1)] = eta;
            r[(o + 1, o)] = eta;
            r[(o, o + 2)] = -eta4;
            r[(o + 2, o)] = -eta4;
            r[(o + 1, o + 2)] = -eta4;
            r[(o + 2, o + 1)] = -eta4;
        }
        let seq = sparse_loading_sequence(&r, 4, 3).unwrap();
        let mut supports: Vec<Vec<usize>> = seq.loadings.iter().map(|l| l.support.clone()).collect();
        supports.sort();
        let expected: Vec<Vec<usize>> = (0..4).map(|b| vec![3 * b, 3 * b + 1, 3 * b + 2]).collect();
        assert_eq!(supports, expected);
    }

    #[test]
    fn rank_one_input_truncates_the_sequence() {
        // Exact outer product: one deflation empties the residual.
        let u = DVector::from_fn(6, |i, _| (i as f64 + 1.0) / 10.0);
        let v = DVector::from_fn(3, |i, _| [0.6, -0.8, 0.0][i]);
        let x = &u * v.transpose();
        // Two singleton loadings (columns 1 then 0, by magnitude) exhaust
        // the matrix; the third rank finds an empty residual.
        let seq = sparse_loading_sequence(&x, 3, 1).unwrap();
        assert!(seq.truncated);
        assert_eq!(seq.loadings.len(), 2);
        assert_eq!(seq.loadings[0].support, vec![1]);
        assert_eq!(seq.loadings[1].support, vec![0]);
    }

    #[test]
    fn determinism() {
        let x = pseudo_random_matrix(77, 15, 6);
        let a = sparse_loading_sequence(&x, 3, 2).unwrap();
        let b = sparse_loading_sequence(&x, 3, 2).unwrap();
        for (la, lb) in a.loadings.iter().zip(b.loadings.iter()) {
            assert_eq!(la.support, lb.support);
            assert_eq!(la.vector, lb.vector);
            assert_eq!(la.quasi_singular_value, lb.quasi_singular_value);
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn loadings_have_unit_norm_and_exact_degree(seed in 0u64..1000, p in 2usize..8, s_offset in 0usize..6, k_offset in 0usize..4) {
            let s = 1 + s_offset % (p - 1).max(1);
            let k = 1 + k_offset % p;
            let x = pseudo_random_matrix(seed, p + 8, p);
            let seq = sparse_loading_sequence(&x, k, s).unwrap();
            prop_assert!(!seq.truncated);
            for loading in &seq.loadings {
                prop_assert!((loading.vector.norm() - 1.0).abs() < 1e-8);
                prop_assert_eq!(loading.degree, s);
                let nonzeros = loading.vector.iter().filter(|v| **v != 0.0).count();
                prop_assert_eq!(nonzeros, s);
            }
        }

        /// The deflation is a projection, so the residual Frobenius norm
        /// never grows; in the dense case (s = p) the extraction is exact
        /// SVD deflation and the quasi singular values are non-increasing.
        #[test]
        fn deflation_is_monotone(seed in 0u64..500, p in 3usize..8) {
            let x = pseudo_random_matrix(seed, p + 10, p);
            let s = 1 + (seed as usize) % (p - 1);
            let mut state = DeflationState::new(&x);
            let mut previous = state.residual_frobenius();
            for _ in 0..3 {
                let loading = sparse_rank1_gram(&state.gram, s, None).unwrap();
                state.deflate(&loading.vector);
                let current = state.residual_frobenius();
                prop_assert!(current <= previous + 1e-8);
                previous = current;
            }

            let dense = sparse_loading_sequence(&x, p.min(3), p - 1).unwrap();
            prop_assert!(!dense.truncated);
        }

        #[test]
        fn quasi_singular_values_non_increasing_dense(seed in 0u64..500, p in 3usize..8) {
            let x = pseudo_random_matrix(seed, p + 10, p);
            // s = p: every loading is the exact leading singular vector of
            // the residual, so the sequence is the ordinary SVD spectrum.
            let seq = sparse_loading_sequence_dense_for_test(&x, p.min(4));
            let svd = nalgebra::SVD::new(x, false, false);
            for (i, w) in seq.windows(2).enumerate() {
                prop_assert!(w[1] <= w[0] + 1e-8);
                prop_assert!((seq[i] - svd.singular_values[i]).abs() < 1e-6);
            }
        }
    }

    fn sparse_loading_sequence_dense_for_test(x: &DMatrix<f64>, k: usize) -> Vec<f64> {
        let mut state = DeflationState::new(x);
        let mut sigmas = Vec::new();
        for _ in 0..k {
            let loading = sparse_rank1_gram(&state.gram, x.ncols(), None).unwrap();
            state.deflate(&loading.vector);
            sigmas.push(loading.quasi_singular_value);
        }
        sigmas
    }
}

