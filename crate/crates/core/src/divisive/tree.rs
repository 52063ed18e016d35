//! Split trees: the record of a divisive clustering run, the assembled
//! between-variable distance matrix, dendrogram cuts and the ultrametric
//! check.

use std::collections::HashSet;

use nalgebra::DMatrix;

use super::DivisiveError;

/// Nonempty set of variable indices (ascending, unique).
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Cluster(Vec<usize>);

impl Cluster {
    pub fn new(mut members: Vec<usize>) -> Result<Self, DivisiveError> {
        if members.is_empty() {
            return Err(DivisiveError::EmptyCluster);
        }
        members.sort_unstable();
        members.dedup();
        Ok(Cluster(members))
    }

    pub(crate) fn from_sorted(members: Vec<usize>) -> Self {
        debug_assert!(members.windows(2).all(|w| w[0] < w[1]));
        debug_assert!(!members.is_empty());
        Cluster(members)
    }

    pub fn members(&self) -> &[usize] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn min_member(&self) -> usize {
        self.0[0]
    }
}

/// Disjoint clusters covering 0..p.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Partition {
    clusters: Vec<Cluster>,
    p: usize,
}

impl Partition {
    /// Validates disjointness and coverage of 0..p; clusters are stored
    /// sorted by smallest member.
    pub fn new(clusters: Vec<Cluster>, p: usize) -> Result<Self, DivisiveError> {
        let mut seen = vec![false; p];
        for cluster in &clusters {
            for &i in cluster.members() {
                if i >= p || seen[i] {
                    return Err(DivisiveError::InvalidPartition {
                        message: format!("index {i} out of range or duplicated"),
                    });
                }
                seen[i] = true;
            }
        }
        if seen.iter().any(|s| !s) {
            return Err(DivisiveError::InvalidPartition {
                message: "clusters do not cover all variables".into(),
            });
        }
        let mut clusters = clusters;
        clusters.sort_by_key(|c| c.min_member());
        Ok(Partition { clusters, p })
    }

    /// Builds a partition from per-variable cluster labels.
    pub fn from_labels(labels: &[usize]) -> Result<Self, DivisiveError> {
        let mut groups: std::collections::BTreeMap<usize, Vec<usize>> =
            std::collections::BTreeMap::new();
        for (i, &l) in labels.iter().enumerate() {
            groups.entry(l).or_default().push(i);
        }
        let clusters = groups.into_values().map(Cluster::from_sorted).collect();
        Partition::new(clusters, labels.len())
    }

    pub fn clusters(&self) -> &[Cluster] {
        &self.clusters
    }

    pub fn len(&self) -> usize {
        self.clusters.len()
    }

    pub fn is_empty(&self) -> bool {
        self.clusters.is_empty()
    }

    pub fn p(&self) -> usize {
        self.p
    }

    /// Cluster id per variable; ids number the clusters by smallest member.
    pub fn membership(&self) -> Vec<usize> {
        let mut labels = vec![0usize; self.p];
        for (id, cluster) in self.clusters.iter().enumerate() {
            for &i in cluster.members() {
                labels[i] = id;
            }
        }
        labels
    }
}

/// How a winning split was found.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SplitSource {
    /// Proposed by a sparse loading with the given degree of sparsity and
    /// deflation rank (both 1-based).
    SparseLoading { s: usize, rank: usize },
    /// Found by exhaustive enumeration of all bipartitions.
    Exhaustive,
    /// DIANA splinter construction (baseline trees only).
    Diana,
}

/// One applied split: `parent` into `left` and `right` at `distance`.
#[derive(Debug, Clone, PartialEq)]
pub struct SplitRecord {
    pub parent: Cluster,
    pub left: Cluster,
    pub right: Cluster,
    pub distance: f64,
    pub source: SplitSource,
}

/// Candidate-count telemetry for one split.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SplitStats {
    pub cluster_size: usize,
    /// Loadings per degree of sparsity (0 for exhaustive splits).
    pub loading_count: usize,
    /// Unique bipartitions whose distance was evaluated.
    pub candidates_evaluated: usize,
}

/// What the dendrogram heights mean.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HeightMode {
    /// Height of a cluster is the distance between its two splits.
    SplitDistance,
    /// Height is the reliability 1 - ||R_i||_2 / p_i of the cluster.
    Reliability,
    /// Height is the cluster diameter (DIANA baseline trees).
    Diameter,
}

impl HeightMode {
    pub fn name(&self) -> &'static str {
        match self {
            HeightMode::SplitDistance => "split_distance",
            HeightMode::Reliability => "reliability",
            HeightMode::Diameter => "diameter",
        }
    }
}

/// Binary split tree over p variables: p-1 split records in creation
/// order (root split first) with per-split heights.
#[derive(Debug, Clone)]
pub struct SplitTree {
    pub labels: Vec<String>,
    pub splits: Vec<SplitRecord>,
    /// Height of the parent cluster of each split, aligned with `splits`.
    pub heights: Vec<f64>,
    pub height_mode: HeightMode,
    pub stats: Vec<SplitStats>,
}

impl SplitTree {
    pub fn p(&self) -> usize {
        self.labels.len()
    }

    /// True when no child split sits higher than the split that created
    /// its cluster (within 1e-12).
    pub fn heights_monotone(&self) -> bool {
        let mut created_at: std::collections::HashMap<&[usize], f64> =
            std::collections::HashMap::new();
        for (record, &height) in self.splits.iter().zip(self.heights.iter()) {
            if let Some(&parent_height) = created_at.get(record.parent.members()) {
                if height > parent_height + 1e-12 {
                    return false;
                }
            }
            created_at.insert(record.left.members(), height);
            created_at.insert(record.right.members(), height);
        }
        true
    }
}

/// Partition into k clusters by the dendrogram cut: splits are applied in
/// descending height (creation order on ties), each only once its parent
/// cluster is present. Under split-distance heights this applies splits
/// in descending distance; for the monotone trees the method produces on
/// correctly recovered structure it equals taking the k-1 highest nodes.
pub fn cut_tree(tree: &SplitTree, k: usize) -> Result<Partition, DivisiveError> {
    let p = tree.p();
    if k == 0 || k > p {
        return Err(DivisiveError::InvalidCut { k, p });
    }
    let root = if let Some(first) = tree.splits.first() {
        first.parent.clone()
    } else {
        // Single-variable tree.
        Cluster::from_sorted((0..p).collect())
    };
    let mut active: HashSet<Cluster> = HashSet::new();
    active.insert(root);

    let mut order: Vec<usize> = (0..tree.splits.len()).collect();
    order.sort_by(|&a, &b| {
        tree.heights[b]
            .partial_cmp(&tree.heights[a])
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(a.cmp(&b))
    });
    let mut used = vec![false; order.len()];
    for _ in 0..(k - 1) {
        let position = order
            .iter()
            .position(|&idx| !used[idx] && active.contains(&tree.splits[idx].parent))
            .expect("a valid split tree always has an applicable split");
        let idx = order[position];
        used[idx] = true;
        let record = &tree.splits[idx];
        active.remove(&record.parent);
        active.insert(record.left.clone());
        active.insert(record.right.clone());
    }
    Partition::new(active.into_iter().collect(), p)
}

/// Between-variable distance matrix assembled by the divisive procedure.
#[derive(Debug, Clone)]
pub struct UltraDistanceMatrix {
    values: DMatrix<f64>,
}

impl UltraDistanceMatrix {
    /// Validates symmetry, zero diagonal and the [0, 1] entry range.
    pub fn new(values: DMatrix<f64>) -> Result<Self, DivisiveError> {
        if !values.is_square() {
            return Err(DivisiveError::InvalidPartition {
                message: "distance matrix must be square".into(),
            });
        }
        let p = values.ncols();
        for i in 0..p {
            if values[(i, i)] != 0.0 {
                return Err(DivisiveError::InvalidPartition {
                    message: format!("nonzero diagonal at {i}"),
                });
            }
            for j in 0..p {
                let v = values[(i, j)];
                if v != values[(j, i)] || !(0.0..=1.0).contains(&v) {
                    return Err(DivisiveError::InvalidPartition {
                        message: format!("invalid distance entry ({i}, {j}) = {v}"),
                    });
                }
            }
        }
        Ok(UltraDistanceMatrix { values })
    }

    pub(crate) fn from_assembled(values: DMatrix<f64>) -> Self {
        UltraDistanceMatrix { values }
    }

    pub fn values(&self) -> &DMatrix<f64> {
        &self.values
    }

    pub fn p(&self) -> usize {
        self.values.ncols()
    }
}

/// All triples (i, l, j) with m_ij > max(m_il, m_lj) + tol; an empty
/// result means the matrix is ultrametric within tol. Triples are
/// reported once per unordered (i, j) pair with i < j.
pub fn check_ultrametric(m: &UltraDistanceMatrix, tol: f64) -> Vec<(usize, usize, usize)> {
    let p = m.p();
    let v = &m.values;
    let mut violations = Vec::new();
    for i in 0..p {
        for j in (i + 1)..p {
            let d = v[(i, j)];
            for l in 0..p {
                if l != i && l != j && d > v[(i, l)].max(v[(l, j)]) + tol {
                    violations.push((i, l, j));
                }
            }
        }
    }
    violations
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::dmatrix;

    #[test]
    fn partition_rejects_overlap_and_gaps() {
        let a = Cluster::new(vec![0, 1]).unwrap();
        let b = Cluster::new(vec![1, 2]).unwrap();
        assert!(Partition::new(vec![a.clone(), b], 3).is_err());
        assert!(Partition::new(vec![a], 3).is_err());
    }

    #[test]
    fn membership_numbers_by_smallest_member() {
        let p = Partition::new(
            vec![
                Cluster::new(vec![2, 3]).unwrap(),
                Cluster::new(vec![0, 1]).unwrap(),
            ],
            4,
        )
        .unwrap();
        assert_eq!(p.membership(), vec![0, 0, 1, 1]);
    }

    #[test]
    fn ultrametric_check_finds_the_known_violation() {
        let m = UltraDistanceMatrix::new(dmatrix![
            0.0, 1.0, 1.0;
            1.0, 0.0, 1.0;
            1.0, 1.0, 0.0
        ])
        .unwrap();
        assert!(check_ultrametric(&m, 1e-12).is_empty());

        // Scaled version of [[0,1,3],[1,0,1],[3,1,0]] to stay in [0,1]:
        // the (0, 2) entry exceeds max over the middle point.
        let m = UltraDistanceMatrix::new(dmatrix![
            0.0, 0.2, 0.9;
            0.2, 0.0, 0.2;
            0.9, 0.2, 0.0
        ])
        .unwrap();
        let violations = check_ultrametric(&m, 1e-12);
        assert_eq!(violations, vec![(0, 1, 2)]);
    }

    #[test]
    fn two_by_two_has_no_triples() {
        let m = UltraDistanceMatrix::new(dmatrix![0.0, 0.4; 0.4, 0.0]).unwrap();
        assert!(check_ultrametric(&m, 0.0).is_empty());
    }
}
