//! Semidistances between two variable clusters and per-cluster
//! reliability heights.
//!
//! All three distances act on the correlation blocks of a partitioned
//! matrix: R_j and R_j' on the diagonal and the cross block R_jj'
//! between them. Self-distance is defined as 0 for every kind.

use nalgebra::DMatrix;
use thiserror::Error;

use crate::matrixkit::{spectral_norm, CorrelationMatrix, MatrixError};

/// Tolerance on |r| = 1 when rejecting perfectly collinear variable pairs.
pub const COLLINEARITY_TOLERANCE: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum DissimilarityError {
    #[error(
        "perfect collinearity: |r| = {value} between variables {i} and {j}; \
         remove collinear variables before clustering"
    )]
    CollinearityViolation { i: usize, j: usize, value: f64 },
    #[error(transparent)]
    Matrix(#[from] MatrixError),
}

/// Which semidistance scores a candidate split.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum SplitDistanceKind {
    /// 1 - ||R_jj'||_F^2 / (||R_j||_F ||R_j'||_F)
    Rv,
    /// 1 - ||vec(R_jj')||_1 / (p_j p_j')
    Average,
    /// 1 - ||vec(R_jj')||_inf
    Single,
}

impl SplitDistanceKind {
    pub const ALL: [SplitDistanceKind; 3] = [
        SplitDistanceKind::Rv,
        SplitDistanceKind::Average,
        SplitDistanceKind::Single,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            SplitDistanceKind::Rv => "rv",
            SplitDistanceKind::Average => "average",
            SplitDistanceKind::Single => "single",
        }
    }
}

/// The three correlation blocks of one candidate bipartition, extracted
/// from a single parent correlation matrix.
#[derive(Debug, Clone)]
pub struct ClusterPair {
    r_j: CorrelationMatrix,
    r_jprime: CorrelationMatrix,
    cross: DMatrix<f64>,
    /// Original variable indices of the two sides, for error reporting.
    left_indices: Vec<usize>,
    right_indices: Vec<usize>,
}

impl ClusterPair {
    /// Extracts the blocks for the bipartition (left, right) of the
    /// variables of `parent`. Indices are positions in `parent`.
    pub fn from_partition(parent: &CorrelationMatrix, left: &[usize], right: &[usize]) -> Self {
        ClusterPair {
            r_j: parent.principal_submatrix(left),
            r_jprime: parent.principal_submatrix(right),
            cross: parent.cross_block(left, right),
            left_indices: left.to_vec(),
            right_indices: right.to_vec(),
        }
    }

    pub fn r_j(&self) -> &CorrelationMatrix {
        &self.r_j
    }

    pub fn r_jprime(&self) -> &CorrelationMatrix {
        &self.r_jprime
    }

    pub fn cross(&self) -> &DMatrix<f64> {
        &self.cross
    }
}

/// Distance between the two sides of a cluster pair. Symmetric in the
/// sides (bit-exact: cross-block entries are folded in an orientation
/// fixed by the smallest variable index) and in [0, 1] for valid
/// correlation input.
pub fn split_distance(
    pair: &ClusterPair,
    kind: SplitDistanceKind,
) -> Result<f64, DissimilarityError> {
    match kind {
        SplitDistanceKind::Rv => {
            let cross_sq = cross_fold(pair, 0.0, |acc, r| acc + r * r);
            let nj = frobenius(pair.r_j.values());
            let njp = frobenius(pair.r_jprime.values());
            Ok((1.0 - cross_sq / (nj * njp)).clamp(0.0, 1.0))
        }
        SplitDistanceKind::Average => {
            check_collinearity(pair)?;
            let abs_sum = cross_fold(pair, 0.0, |acc, r| acc + r.abs());
            let count = (pair.cross.nrows() * pair.cross.ncols()) as f64;
            Ok((1.0 - abs_sum / count).clamp(0.0, 1.0))
        }
        SplitDistanceKind::Single => {
            check_collinearity(pair)?;
            let max_abs = cross_fold(pair, 0.0_f64, |m, r| m.max(r.abs()));
            Ok((1.0 - max_abs).clamp(0.0, 1.0))
        }
    }
}

/// Folds over the cross block in an order that only depends on which side
/// holds the smallest variable index, so (j, j') and (j', j) accumulate
/// identical floating-point sequences.
fn cross_fold<F: FnMut(f64, f64) -> f64>(pair: &ClusterPair, init: f64, mut f: F) -> f64 {
    let mut acc = init;
    if pair.left_indices[0] < pair.right_indices[0] {
        for col in 0..pair.cross.ncols() {
            for row in 0..pair.cross.nrows() {
                acc = f(acc, pair.cross[(row, col)]);
            }
        }
    } else {
        for row in 0..pair.cross.nrows() {
            for col in 0..pair.cross.ncols() {
                acc = f(acc, pair.cross[(row, col)]);
            }
        }
    }
    acc
}

/// Allocation-free variant of [`split_distance`]: scores the bipartition
/// (left, right) of the variables of `parent` without materializing the
/// blocks. Folds entries in the same canonical order, so it returns
/// bit-identical values.
pub fn split_distance_between(
    parent: &CorrelationMatrix,
    left: &[usize],
    right: &[usize],
    kind: SplitDistanceKind,
) -> Result<f64, DissimilarityError> {
    let values = parent.values();
    // Canonical orientation: rows from the side with the smallest index.
    let (rows, cols) = if left[0] < right[0] {
        (left, right)
    } else {
        (right, left)
    };
    match kind {
        SplitDistanceKind::Rv => {
            let mut cross_sq = 0.0;
            for &c in cols {
                for &r in rows {
                    let v = values[(r, c)];
                    cross_sq += v * v;
                }
            }
            let nj = indexed_frobenius(values, left);
            let njp = indexed_frobenius(values, right);
            Ok((1.0 - cross_sq / (nj * njp)).clamp(0.0, 1.0))
        }
        SplitDistanceKind::Average => {
            check_collinearity_indexed(values, rows, cols)?;
            let mut abs_sum = 0.0;
            for &c in cols {
                for &r in rows {
                    abs_sum += values[(r, c)].abs();
                }
            }
            let count = (left.len() * right.len()) as f64;
            Ok((1.0 - abs_sum / count).clamp(0.0, 1.0))
        }
        SplitDistanceKind::Single => {
            check_collinearity_indexed(values, rows, cols)?;
            let mut max_abs = 0.0_f64;
            for &c in cols {
                for &r in rows {
                    max_abs = max_abs.max(values[(r, c)].abs());
                }
            }
            Ok((1.0 - max_abs).clamp(0.0, 1.0))
        }
    }
}

fn check_collinearity_indexed(
    values: &DMatrix<f64>,
    rows: &[usize],
    cols: &[usize],
) -> Result<(), DissimilarityError> {
    for &r in rows {
        for &c in cols {
            let value = values[(r, c)];
            if value.abs() >= 1.0 - COLLINEARITY_TOLERANCE {
                return Err(DissimilarityError::CollinearityViolation { i: r, j: c, value });
            }
        }
    }
    Ok(())
}

fn indexed_frobenius(values: &DMatrix<f64>, idx: &[usize]) -> f64 {
    let mut sum = 0.0;
    for &b in idx {
        for &a in idx {
            let v = values[(a, b)];
            sum += v * v;
        }
    }
    sum.sqrt()
}

fn check_collinearity(pair: &ClusterPair) -> Result<(), DissimilarityError> {
    for (k, row) in pair.left_indices.iter().enumerate() {
        for (l, col) in pair.right_indices.iter().enumerate() {
            let value = pair.cross[(k, l)];
            if value.abs() >= 1.0 - COLLINEARITY_TOLERANCE {
                return Err(DissimilarityError::CollinearityViolation {
                    i: *row,
                    j: *col,
                    value,
                });
            }
        }
    }
    Ok(())
}

fn frobenius(m: &DMatrix<f64>) -> f64 {
    m.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Reliability height h = 1 - ||R_i||_2 / p_i of a cluster; 0 for a
/// singleton, approaching 1 - 1/p for an uncorrelated cluster.
pub fn reliability_height(r_i: &CorrelationMatrix) -> Result<f64, MatrixError> {
    let p = r_i.p() as f64;
    Ok((1.0 - spectral_norm(r_i)? / p).max(0.0))
}
