//! HC-SVD: divisive hierarchical clustering of variables.
//!
//! Candidate splits of a variable cluster are proposed by sparse singular
//! vectors of the standardized data matrix, scored by correlation-based
//! semidistances, and assembled into an ultrametric distance matrix and
//! dendrogram. The crate also ships the simulation designs, a DIANA
//! baseline, a brute-force split oracle and ARI-based benchmarking used
//! to evaluate the method.

pub mod baselines;
pub mod dissimilarity;
pub mod divisive;
pub mod export;
pub mod matrixkit;
pub mod simbench;
pub mod sparse_loadings;

pub use dissimilarity::{DissimilarityError, SplitDistanceKind};
pub use divisive::{DivisiveError, HcsvdConfig, HcsvdResult, LoadingPolicy};
pub use matrixkit::{CorrelationMatrix, MatrixError, RawMatrix, StandardizedMatrix};
pub use sparse_loadings::{LoadingSequence, SparseError, SparseLoading};
