//! Python bindings: the clustering entry points, the simulation designs,
//! DIANA and the adjusted Rand index, exposed over plain lists so no
//! array dependency is needed.

use std::collections::BTreeMap;

use nalgebra::DMatrix;
use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;

use hcsvd::baselines::{diana, VariableDistanceMatrix};
use hcsvd::dissimilarity::SplitDistanceKind;
use hcsvd::divisive::{
    check_ultrametric, cut_tree, hcsvd_correlation, hcsvd_data, Diagnostics, HcsvdConfig,
    HeightMode, LoadingPolicy, Partition, SplitTree, UltraDistanceMatrix,
};
use hcsvd::export::{DendrogramDocument, MetadataDoc};
use hcsvd::matrixkit::{correlation, standardize, CorrelationMatrix, RawMatrix};
use hcsvd::simbench::{adjusted_rand_index, sample_mvn, substream_rng, Design, RNG_ID};

fn value_error(e: impl std::fmt::Display) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn rows_to_matrix(rows: &[Vec<f64>]) -> PyResult<DMatrix<f64>> {
    if rows.is_empty() || rows[0].is_empty() {
        return Err(value_error("matrix must be nonempty"));
    }
    let cols = rows[0].len();
    if rows.iter().any(|r| r.len() != cols) {
        return Err(value_error("rows have inconsistent lengths"));
    }
    Ok(DMatrix::from_fn(rows.len(), cols, |i, j| rows[i][j]))
}

fn matrix_to_rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..m.nrows())
        .map(|i| (0..m.ncols()).map(|j| m[(i, j)]).collect())
        .collect()
}

fn labels_or_default(labels: Option<Vec<String>>, p: usize) -> PyResult<Vec<String>> {
    match labels {
        Some(l) if l.len() == p => Ok(l),
        Some(l) => Err(value_error(format!("{} labels for {p} columns", l.len()))),
        None => Ok((1..=p).map(|i| format!("V{i}")).collect()),
    }
}

fn correlation_from_rows(
    rows: &[Vec<f64>],
    labels: Option<Vec<String>>,
) -> PyResult<CorrelationMatrix> {
    let mut values = rows_to_matrix(rows)?;
    let p = values.ncols();
    if values.nrows() != p {
        return Err(value_error("correlation matrix must be square"));
    }
    for i in 0..p {
        for j in (i + 1)..p {
            let delta = (values[(i, j)] - values[(j, i)]).abs();
            if delta > 1e-8 {
                return Err(value_error(format!(
                    "asymmetry {delta:.3e} at ({i}, {j}) exceeds 1e-8"
                )));
            }
            let avg = 0.5 * (values[(i, j)] + values[(j, i)]);
            values[(i, j)] = avg;
            values[(j, i)] = avg;
        }
    }
    CorrelationMatrix::try_new(values, labels_or_default(labels, p)?).map_err(value_error)
}

fn parse_config(
    distance: &str,
    heights: &str,
    loadings: &str,
    exhaustive_threshold: usize,
) -> PyResult<HcsvdConfig> {
    let kind = match distance {
        "rv" => SplitDistanceKind::Rv,
        "average" => SplitDistanceKind::Average,
        "single" => SplitDistanceKind::Single,
        other => return Err(value_error(format!("unknown distance '{other}'"))),
    };
    let height_mode = match heights {
        "split" | "split_distance" => HeightMode::SplitDistance,
        "reliability" => HeightMode::Reliability,
        other => return Err(value_error(format!("unknown height mode '{other}'"))),
    };
    let policy = match loadings {
        "kaiser" => LoadingPolicy::Kaiser,
        "all" => LoadingPolicy::All,
        other => other
            .parse::<usize>()
            .ok()
            .filter(|&k| k >= 1)
            .map(LoadingPolicy::Fixed)
            .ok_or_else(|| value_error(format!("unknown loading policy '{other}'")))?,
    };
    Ok(HcsvdConfig {
        kind,
        policy,
        height_mode,
        exhaustive_threshold,
        ..HcsvdConfig::default()
    })
}

/// A fitted divisive clustering: the split tree plus, for the sparse-SVD
/// engine, the assembled distance matrix and diagnostics.
#[pyclass]
struct Dendrogram {
    tree: SplitTree,
    distances: Option<UltraDistanceMatrix>,
    diagnostics: Option<Diagnostics>,
}

#[pymethods]
impl Dendrogram {
    fn labels(&self) -> Vec<String> {
        self.tree.labels.clone()
    }

    fn heights(&self) -> Vec<f64> {
        self.tree.heights.clone()
    }

    fn height_mode(&self) -> String {
        self.tree.height_mode.name().to_string()
    }

    /// Merge table rows (id, left, right, height, size); leaves carry
    /// negative ids -1..-p, internal nodes positive ids with children
    /// before parents.
    fn merges(&self) -> Vec<(i64, i64, i64, f64, usize)> {
        self.document(None)
            .merges
            .iter()
            .map(|r| (r.id, r.left, r.right, r.height, r.size))
            .collect()
    }

    /// Cluster id per variable at the k-cluster cut.
    fn cut(&self, k: usize) -> PyResult<Vec<usize>> {
        Ok(cut_tree(&self.tree, k).map_err(value_error)?.membership())
    }

    fn distance_matrix(&self) -> Option<Vec<Vec<f64>>> {
        self.distances.as_ref().map(|d| matrix_to_rows(d.values()))
    }

    #[pyo3(signature = (tol=1e-12))]
    fn ultrametric_violations(&self, tol: f64) -> Option<usize> {
        self.distances
            .as_ref()
            .map(|d| check_ultrametric(d, tol).len())
    }

    fn monotone_heights(&self) -> bool {
        self.tree.heights_monotone()
    }

    fn to_newick(&self) -> PyResult<String> {
        let (text, _) = self.document(None).to_newick().map_err(value_error)?;
        Ok(text)
    }

    #[pyo3(signature = (seed=None))]
    fn to_json(&self, seed: Option<u64>) -> String {
        self.document(seed).to_json()
    }
}

impl Dendrogram {
    fn document(&self, seed: Option<u64>) -> DendrogramDocument {
        let diagnostics = self.diagnostics.unwrap_or(Diagnostics {
            ultrametric_violations: 0,
            monotone_heights: self.tree.heights_monotone(),
        });
        DendrogramDocument::from_tree(
            &self.tree,
            diagnostics,
            MetadataDoc {
                version: env!("CARGO_PKG_VERSION").into(),
                rng: RNG_ID.into(),
                seed,
                config: BTreeMap::new(),
            },
        )
    }
}

/// Cluster the columns of a raw data matrix (rows = observations).
#[pyfunction]
#[pyo3(signature = (rows, labels=None, distance="single", heights="split", loadings="kaiser", exhaustive_threshold=6))]
fn cluster_data(
    rows: Vec<Vec<f64>>,
    labels: Option<Vec<String>>,
    distance: &str,
    heights: &str,
    loadings: &str,
    exhaustive_threshold: usize,
) -> PyResult<Dendrogram> {
    let config = parse_config(distance, heights, loadings, exhaustive_threshold)?;
    let values = rows_to_matrix(&rows)?;
    let labels = labels_or_default(labels, values.ncols())?;
    let raw = RawMatrix::new(values, labels).map_err(value_error)?;
    let x = standardize(&raw).map_err(value_error)?;
    let result = hcsvd_data(&x, &config).map_err(value_error)?;
    Ok(Dendrogram {
        tree: result.tree,
        distances: Some(result.distances),
        diagnostics: Some(result.diagnostics),
    })
}

/// Cluster variables given only their correlation matrix.
#[pyfunction]
#[pyo3(signature = (matrix, labels=None, distance="single", heights="split", loadings="kaiser", exhaustive_threshold=6))]
fn cluster_correlation(
    matrix: Vec<Vec<f64>>,
    labels: Option<Vec<String>>,
    distance: &str,
    heights: &str,
    loadings: &str,
    exhaustive_threshold: usize,
) -> PyResult<Dendrogram> {
    let config = parse_config(distance, heights, loadings, exhaustive_threshold)?;
    let r = correlation_from_rows(&matrix, labels)?;
    let result = hcsvd_correlation(&r, &config).map_err(value_error)?;
    Ok(Dendrogram {
        tree: result.tree,
        distances: Some(result.distances),
        diagnostics: Some(result.diagnostics),
    })
}

/// DIANA on the 1 - |r| distance matrix of a correlation matrix.
#[pyfunction]
#[pyo3(signature = (matrix, labels=None))]
fn diana_correlation(matrix: Vec<Vec<f64>>, labels: Option<Vec<String>>) -> PyResult<Dendrogram> {
    let r = correlation_from_rows(&matrix, labels)?;
    let tree = diana(&VariableDistanceMatrix::from_correlation(&r));
    Ok(Dendrogram {
        tree,
        distances: None,
        diagnostics: None,
    })
}

/// Column-standardize a data matrix (mean 0, standard deviation 1,
/// divisor n-1).
#[pyfunction]
fn standardize_matrix(rows: Vec<Vec<f64>>) -> PyResult<Vec<Vec<f64>>> {
    let values = rows_to_matrix(&rows)?;
    let p = values.ncols();
    let raw = RawMatrix::new(values, labels_or_default(None, p)?).map_err(value_error)?;
    Ok(matrix_to_rows(
        standardize(&raw).map_err(value_error)?.values(),
    ))
}

/// Sample correlation matrix of a data matrix.
#[pyfunction]
fn correlation_matrix(rows: Vec<Vec<f64>>) -> PyResult<Vec<Vec<f64>>> {
    let values = rows_to_matrix(&rows)?;
    let p = values.ncols();
    let raw = RawMatrix::new(values, labels_or_default(None, p)?).map_err(value_error)?;
    let x = standardize(&raw).map_err(value_error)?;
    Ok(matrix_to_rows(correlation(&x).values()))
}

/// Adjusted Rand index between two cluster-membership vectors.
#[pyfunction]
fn ari(a: Vec<usize>, b: Vec<usize>) -> PyResult<f64> {
    if a.len() != b.len() {
        return Err(value_error("membership vectors differ in length"));
    }
    let pa = Partition::from_labels(&a).map_err(value_error)?;
    let pb = Partition::from_labels(&b).map_err(value_error)?;
    adjusted_rand_index(&pa, &pb).map_err(value_error)
}

fn design_output(
    design: Design,
    p: usize,
    seed: u64,
) -> PyResult<(Vec<Vec<f64>>, BTreeMap<usize, Vec<usize>>)> {
    let mut rng = substream_rng(seed, 0);
    let (pop, truth) = design.generate(p, &mut rng).map_err(value_error)?;
    let truths = truth
        .partitions
        .iter()
        .map(|(count, partition)| (*count, partition.membership()))
        .collect();
    Ok((matrix_to_rows(pop.values()), truths))
}

/// Population correlation matrix of design (a) plus its ground-truth
/// memberships keyed by cluster count.
#[pyfunction]
fn design_a(p: usize, seed: u64) -> PyResult<(Vec<Vec<f64>>, BTreeMap<usize, Vec<usize>>)> {
    design_output(Design::A, p, seed)
}

/// Population correlation matrix of design (b) plus its ground-truth
/// memberships keyed by cluster count.
#[pyfunction]
fn design_b(p: usize, seed: u64) -> PyResult<(Vec<Vec<f64>>, BTreeMap<usize, Vec<usize>>)> {
    design_output(Design::B, p, seed)
}

/// n multivariate-normal observations with the given population
/// correlation matrix, deterministic in the seed.
#[pyfunction]
fn sample_normal(matrix: Vec<Vec<f64>>, n: usize, seed: u64) -> PyResult<Vec<Vec<f64>>> {
    let pop = correlation_from_rows(&matrix, None)?;
    let mut rng = substream_rng(seed, 1);
    let raw = sample_mvn(&pop, n, &mut rng).map_err(value_error)?;
    Ok(matrix_to_rows(raw.values()))
}

#[pymodule]
fn hcsvd_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<Dendrogram>()?;
    m.add_function(wrap_pyfunction!(cluster_data, m)?)?;
    m.add_function(wrap_pyfunction!(cluster_correlation, m)?)?;
    m.add_function(wrap_pyfunction!(diana_correlation, m)?)?;
    m.add_function(wrap_pyfunction!(standardize_matrix, m)?)?;
    m.add_function(wrap_pyfunction!(correlation_matrix, m)?)?;
    m.add_function(wrap_pyfunction!(ari, m)?)?;
    m.add_function(wrap_pyfunction!(design_a, m)?)?;
    m.add_function(wrap_pyfunction!(design_b, m)?)?;
    m.add_function(wrap_pyfunction!(sample_normal, m)?)?;
    m.add("RNG_ID", RNG_ID)?;
    Ok(())
}
