//! Dense numerical kernels shared by the whole crate: standardization,
//! correlation, symmetric eigendecomposition, spectral norm, Cholesky
//! factorization and block-structure detection.
//!
//! All matrices are `f64` and small enough (p up to a few thousand) that
//! full dense decompositions are the right tool.

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

/// Tolerance on the smallest eigenvalue when admitting a correlation matrix.
/// Sampled matrices carry floating-point dust below zero.
pub const PSD_TOLERANCE: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum MatrixError {
    #[error("column {index} has zero sample variance")]
    ConstantColumn { index: usize },
    #[error("expected at least 2 rows, got {rows}")]
    TooFewRows { rows: usize },
    #[error("dimension mismatch: {message}")]
    Dimension { message: String },
    #[error("matrix is not symmetric (max |a_ij - a_ji| = {max_asymmetry:.3e})")]
    NotSymmetric { max_asymmetry: f64 },
    #[error("diagonal entry {index} is {value}, expected 1")]
    NotUnitDiagonal { index: usize, value: f64 },
    #[error("entry ({row}, {col}) = {value} lies outside [-1, 1]")]
    EntryOutOfRange { row: usize, col: usize, value: f64 },
    #[error("matrix is not positive semidefinite (min eigenvalue {min_eigenvalue:.3e})")]
    NotPositiveSemidefinite { min_eigenvalue: f64 },
    #[error("matrix is not positive definite (pivot {pivot} at column {index})")]
    NotPositiveDefinite { index: usize, pivot: f64 },
    #[error("eigendecomposition failed to converge")]
    ConvergenceFailure,
}

fn default_labels(p: usize) -> Vec<String> {
    (1..=p).map(|i| format!("V{i}")).collect()
}

/// Raw observation matrix: rows are observations, columns are variables.
#[derive(Debug, Clone)]
pub struct RawMatrix {
    values: DMatrix<f64>,
    column_labels: Vec<String>,
}

impl RawMatrix {
    pub fn new(values: DMatrix<f64>, column_labels: Vec<String>) -> Result<Self, MatrixError> {
        if values.nrows() < 2 {
            return Err(MatrixError::TooFewRows {
                rows: values.nrows(),
            });
        }
        if values.ncols() == 0 {
            return Err(MatrixError::Dimension {
                message: "matrix has no columns".into(),
            });
        }
        if column_labels.len() != values.ncols() {
            return Err(MatrixError::Dimension {
                message: format!(
                    "{} labels for {} columns",
                    column_labels.len(),
                    values.ncols()
                ),
            });
        }
        Ok(Self {
            values,
            column_labels,
        })
    }

    pub fn with_default_labels(values: DMatrix<f64>) -> Result<Self, MatrixError> {
        let p = values.ncols();
        Self::new(values, default_labels(p))
    }

    pub fn values(&self) -> &DMatrix<f64> {
        &self.values
    }

    pub fn column_labels(&self) -> &[String] {
        &self.column_labels
    }

    pub fn n(&self) -> usize {
        self.values.nrows()
    }

    pub fn p(&self) -> usize {
        self.values.ncols()
    }
}

/// Data matrix with zero column means and unit column standard deviations
/// (divisor n-1).
#[derive(Debug, Clone)]
pub struct StandardizedMatrix {
    values: DMatrix<f64>,
    column_labels: Vec<String>,
}

impl StandardizedMatrix {
    /// Validates the standardization invariants (means 0 and standard
    /// deviations 1, each within 1e-10).
    pub fn try_new(
        values: DMatrix<f64>,
        column_labels: Vec<String>,
    ) -> Result<Self, MatrixError> {
        if values.nrows() < 2 {
            return Err(MatrixError::TooFewRows {
                rows: values.nrows(),
            });
        }
        if column_labels.len() != values.ncols() {
            return Err(MatrixError::Dimension {
                message: format!(
                    "{} labels for {} columns",
                    column_labels.len(),
                    values.ncols()
                ),
            });
        }
        let n = values.nrows() as f64;
        for j in 0..values.ncols() {
            let col = values.column(j);
            let mean = col.sum() / n;
            if mean.abs() > 1e-10 {
                return Err(MatrixError::Dimension {
                    message: format!("column {j} has mean {mean:.3e}, expected 0"),
                });
            }
            let sd = (col.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0)).sqrt();
            if (sd - 1.0).abs() > 1e-10 {
                return Err(MatrixError::Dimension {
                    message: format!("column {j} has standard deviation {sd}, expected 1"),
                });
            }
        }
        Ok(Self {
            values,
            column_labels,
        })
    }

    pub(crate) fn from_standardized_parts(
        values: DMatrix<f64>,
        column_labels: Vec<String>,
    ) -> Self {
        Self {
            values,
            column_labels,
        }
    }

    pub fn values(&self) -> &DMatrix<f64> {
        &self.values
    }

    pub fn column_labels(&self) -> &[String] {
        &self.column_labels
    }

    pub fn n(&self) -> usize {
        self.values.nrows()
    }

    pub fn p(&self) -> usize {
        self.values.ncols()
    }

    /// Submatrix containing the given columns, in the given order.
    /// Column subsets of a standardized matrix remain standardized.
    pub fn select_columns(&self, indices: &[usize]) -> DMatrix<f64> {
        self.values.select_columns(indices.iter())
    }
}

/// Symmetric positive-semidefinite matrix with unit diagonal.
#[derive(Debug, Clone)]
pub struct CorrelationMatrix {
    values: DMatrix<f64>,
    column_labels: Vec<String>,
}

impl CorrelationMatrix {
    /// Validates symmetry (1e-12), unit diagonal (1e-12), entry range
    /// (|r| <= 1 + 1e-12) and positive semidefiniteness (min eigenvalue
    /// >= -1e-8).
    pub fn try_new(
        values: DMatrix<f64>,
        column_labels: Vec<String>,
    ) -> Result<Self, MatrixError> {
        if !values.is_square() {
            return Err(MatrixError::Dimension {
                message: format!("correlation matrix is {}x{}", values.nrows(), values.ncols()),
            });
        }
        if values.ncols() == 0 {
            return Err(MatrixError::Dimension {
                message: "matrix has no columns".into(),
            });
        }
        if column_labels.len() != values.ncols() {
            return Err(MatrixError::Dimension {
                message: format!(
                    "{} labels for {} columns",
                    column_labels.len(),
                    values.ncols()
                ),
            });
        }
        let p = values.ncols();
        let mut max_asymmetry = 0.0_f64;
        for i in 0..p {
            for j in (i + 1)..p {
                max_asymmetry = max_asymmetry.max((values[(i, j)] - values[(j, i)]).abs());
            }
        }
        if max_asymmetry > 1e-12 {
            return Err(MatrixError::NotSymmetric { max_asymmetry });
        }
        for i in 0..p {
            if (values[(i, i)] - 1.0).abs() > 1e-12 {
                return Err(MatrixError::NotUnitDiagonal {
                    index: i,
                    value: values[(i, i)],
                });
            }
        }
        for i in 0..p {
            for j in 0..p {
                if values[(i, j)].abs() > 1.0 + 1e-12 {
                    return Err(MatrixError::EntryOutOfRange {
                        row: i,
                        col: j,
                        value: values[(i, j)],
                    });
                }
            }
        }
        let min_eigenvalue = sym_eigenvalues_raw(&values)?
            .last()
            .copied()
            .unwrap_or(0.0);
        if min_eigenvalue < -PSD_TOLERANCE {
            return Err(MatrixError::NotPositiveSemidefinite { min_eigenvalue });
        }
        Ok(Self {
            values,
            column_labels,
        })
    }

    pub fn with_default_labels(values: DMatrix<f64>) -> Result<Self, MatrixError> {
        let p = values.ncols();
        Self::try_new(values, default_labels(p))
    }

    /// Constructor for matrices known valid by construction (principal
    /// submatrices of a validated matrix, exact fixtures). Skips the
    /// O(p^3) eigenvalue check.
    pub(crate) fn from_validated_parts(values: DMatrix<f64>, column_labels: Vec<String>) -> Self {
        Self {
            values,
            column_labels,
        }
    }

    pub fn values(&self) -> &DMatrix<f64> {
        &self.values
    }

    pub fn column_labels(&self) -> &[String] {
        &self.column_labels
    }

    pub fn p(&self) -> usize {
        self.values.ncols()
    }

    /// Principal submatrix on the given variable indices. Principal
    /// submatrices of a PSD matrix with unit diagonal satisfy the same
    /// invariants, so no revalidation is needed.
    pub fn principal_submatrix(&self, indices: &[usize]) -> CorrelationMatrix {
        let values = self.values.select_rows(indices.iter()).select_columns(indices.iter());
        let labels = indices
            .iter()
            .map(|&i| self.column_labels[i].clone())
            .collect();
        Self::from_validated_parts(values, labels)
    }

    /// Rectangular cross block R[rows, cols].
    pub fn cross_block(&self, rows: &[usize], cols: &[usize]) -> DMatrix<f64> {
        self.values.select_rows(rows.iter()).select_columns(cols.iter())
    }
}

/// Centers and scales every column to mean 0 and standard deviation 1
/// (divisor n-1).
pub fn standardize(raw: &RawMatrix) -> Result<StandardizedMatrix, MatrixError> {
    let n = raw.n() as f64;
    let mut values = raw.values.clone();
    for j in 0..raw.p() {
        let mean = values.column(j).sum() / n;
        let var = values
            .column(j)
            .iter()
            .map(|x| (x - mean) * (x - mean))
            .sum::<f64>()
            / (n - 1.0);
        let sd = var.sqrt();
        if sd <= 1e-12 * (1.0 + mean.abs()) {
            return Err(MatrixError::ConstantColumn { index: j });
        }
        for i in 0..raw.n() {
            values[(i, j)] = (values[(i, j)] - mean) / sd;
        }
    }
    Ok(StandardizedMatrix::from_standardized_parts(
        values,
        raw.column_labels.clone(),
    ))
}

/// Sample correlation matrix R = X^T X / (n-1) of a standardized matrix.
pub fn correlation(x: &StandardizedMatrix) -> CorrelationMatrix {
    let n = x.n() as f64;
    let mut r = x.values.tr_mul(&x.values) / (n - 1.0);
    let p = r.ncols();
    // Symmetrize the floating-point dust and pin the diagonal.
    for i in 0..p {
        for j in (i + 1)..p {
            let avg = 0.5 * (r[(i, j)] + r[(j, i)]);
            let clamped = avg.clamp(-1.0, 1.0);
            r[(i, j)] = clamped;
            r[(j, i)] = clamped;
        }
        r[(i, i)] = 1.0;
    }
    CorrelationMatrix::from_validated_parts(r, x.column_labels.clone())
}

/// Eigendecomposition of a symmetric matrix, eigenvalues sorted descending
/// (ties stable by original index), eigenvector columns matching.
#[derive(Debug, Clone)]
pub struct SymEigen {
    pub eigenvalues: Vec<f64>,
    pub eigenvectors: DMatrix<f64>,
}

fn sym_eigen_raw(m: &DMatrix<f64>) -> Result<SymEigen, MatrixError> {
    let p = m.ncols();
    if p == 1 {
        return Ok(SymEigen {
            eigenvalues: vec![m[(0, 0)]],
            eigenvectors: DMatrix::identity(1, 1),
        });
    }
    let decomp = nalgebra::SymmetricEigen::try_new(m.clone(), f64::EPSILON, 100_000)
        .ok_or(MatrixError::ConvergenceFailure)?;
    let mut order: Vec<usize> = (0..p).collect();
    order.sort_by(|&a, &b| {
        decomp.eigenvalues[b]
            .partial_cmp(&decomp.eigenvalues[a])
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(a.cmp(&b))
    });
    let eigenvalues = order.iter().map(|&i| decomp.eigenvalues[i]).collect();
    let eigenvectors = decomp.eigenvectors.select_columns(order.iter());
    Ok(SymEigen {
        eigenvalues,
        eigenvectors,
    })
}

/// Sorted eigenvalues of a symmetric matrix without the eigenvector
/// bookkeeping; used for validity checks on candidate matrices.
pub fn sym_eigenvalues_raw(m: &DMatrix<f64>) -> Result<Vec<f64>, MatrixError> {
    Ok(sym_eigen_raw(m)?.eigenvalues)
}

/// Full symmetric eigendecomposition of a correlation matrix.
pub fn sym_eigen(r: &CorrelationMatrix) -> Result<SymEigen, MatrixError> {
    sym_eigen_raw(&r.values)
}

/// Top-k eigenpairs. The scales here (p up to a few thousand) make the
/// full decomposition cheap, so this slices it.
pub fn sym_eigen_topk(r: &CorrelationMatrix, k: usize) -> Result<SymEigen, MatrixError> {
    let full = sym_eigen(r)?;
    let k = k.min(full.eigenvalues.len());
    Ok(SymEigen {
        eigenvalues: full.eigenvalues[..k].to_vec(),
        eigenvectors: full.eigenvectors.columns(0, k).into_owned(),
    })
}

/// Largest eigenvalue; equals the spectral norm for a PSD symmetric matrix.
pub fn spectral_norm(r: &CorrelationMatrix) -> Result<f64, MatrixError> {
    Ok(sym_eigen_topk(r, 1)?.eigenvalues[0])
}

/// Lower-triangular L with L L^T = R. Fails with the offending pivot when
/// the matrix is not positive definite.
pub fn cholesky(r: &CorrelationMatrix) -> Result<DMatrix<f64>, MatrixError> {
    let p = r.p();
    let a = &r.values;
    let mut l = DMatrix::zeros(p, p);
    for j in 0..p {
        let mut pivot = a[(j, j)];
        for k in 0..j {
            pivot -= l[(j, k)] * l[(j, k)];
        }
        if pivot <= 1e-12 {
            return Err(MatrixError::NotPositiveDefinite { index: j, pivot });
        }
        let diag = pivot.sqrt();
        l[(j, j)] = diag;
        for i in (j + 1)..p {
            let mut s = a[(i, j)];
            for k in 0..j {
                s -= l[(i, k)] * l[(j, k)];
            }
            l[(i, j)] = s / diag;
        }
    }
    Ok(l)
}

/// Connected components of the graph with an edge (i, j) whenever
/// |r_ij| > tol. A result with b components means R is permutable to a
/// block diagonal matrix with b blocks. Components are sorted by smallest
/// member, members ascending.
pub fn is_block_diagonal_under_permutation(r: &CorrelationMatrix, tol: f64) -> Vec<Vec<usize>> {
    let p = r.p();
    let mut component = vec![usize::MAX; p];
    let mut next = 0usize;
    let mut stack = Vec::new();
    for start in 0..p {
        if component[start] != usize::MAX {
            continue;
        }
        component[start] = next;
        stack.push(start);
        while let Some(i) = stack.pop() {
            for j in 0..p {
                if j != i && component[j] == usize::MAX && r.values[(i, j)].abs() > tol {
                    component[j] = next;
                    stack.push(j);
                }
            }
        }
        next += 1;
    }
    let mut groups = vec![Vec::new(); next];
    for (i, &c) in component.iter().enumerate() {
        groups[c].push(i);
    }
    // Discovery order from index 0 upward already sorts groups by their
    // smallest member and members ascending within a group.
    groups
}

/// Deterministic unit vector for iteration starts; a fixed SplitMix64
/// stream so results never depend on ambient randomness.
pub(crate) fn deterministic_unit_vector(p: usize, salt: u64) -> DVector<f64> {
    let mut state = 0x853c_49e6_748f_ea9b_u64 ^ salt;
    let mut v = DVector::zeros(p);
    for i in 0..p {
        state = state.wrapping_add(0x9e37_79b9_7f4a_7c15);
        let mut z = state;
        z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
        z ^= z >> 31;
        // Map to (-0.5, 0.5), bounded away from an all-zero vector.
        v[i] = (z >> 11) as f64 / (1u64 << 53) as f64 - 0.5 + 1e-3;
    }
    let norm = v.norm();
    v / norm
}
