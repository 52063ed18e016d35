//! Reference methods: DIANA divisive clustering adapted to variables,
//! and a full exhaustive-search hierarchy usable as ground truth for the
//! sparse candidate search at tiny p.

use nalgebra::DMatrix;
use thiserror::Error;

use crate::dissimilarity::{split_distance_between, SplitDistanceKind};
use crate::divisive::{
    Cluster, DivisiveError, HeightMode, SplitRecord, SplitSource, SplitStats, SplitTree,
};
use crate::matrixkit::CorrelationMatrix;

/// Hard cap for the exhaustive hierarchy: 2^13 bipartitions per split.
pub const BRUTE_FORCE_MAX_P: usize = 14;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum BaselineError {
    #[error("{p} variables exceed the exhaustive-hierarchy cap of {max}")]
    TooLarge { p: usize, max: usize },
    #[error("invalid distance matrix: {message}")]
    InvalidDistance { message: String },
    #[error(transparent)]
    Divisive(#[from] DivisiveError),
}

/// Distance matrix between variables with d_ij = 1 - |r_ij|.
#[derive(Debug, Clone)]
pub struct VariableDistanceMatrix {
    values: DMatrix<f64>,
    labels: Vec<String>,
}

impl VariableDistanceMatrix {
    pub fn from_correlation(r: &CorrelationMatrix) -> Self {
        let p = r.p();
        let values = DMatrix::from_fn(p, p, |i, j| {
            if i == j {
                0.0
            } else {
                1.0 - r.values()[(i, j)].abs()
            }
        });
        VariableDistanceMatrix {
            values,
            labels: r.column_labels().to_vec(),
        }
    }

    /// Validates symmetry, zero diagonal and the [0, 1] range.
    pub fn new(values: DMatrix<f64>, labels: Vec<String>) -> Result<Self, BaselineError> {
        if !values.is_square() || values.ncols() != labels.len() {
            return Err(BaselineError::InvalidDistance {
                message: "shape mismatch".into(),
            });
        }
        let p = values.ncols();
        for i in 0..p {
            if values[(i, i)] != 0.0 {
                return Err(BaselineError::InvalidDistance {
                    message: format!("nonzero diagonal at {i}"),
                });
            }
            for j in 0..p {
                let v = values[(i, j)];
                if v != values[(j, i)] || !(0.0..=1.0).contains(&v) {
                    return Err(BaselineError::InvalidDistance {
                        message: format!("entry ({i}, {j}) = {v}"),
                    });
                }
            }
        }
        Ok(VariableDistanceMatrix { values, labels })
    }

    pub fn values(&self) -> &DMatrix<f64> {
        &self.values
    }

    pub fn p(&self) -> usize {
        self.values.ncols()
    }
}

/// Classical DIANA (Kaufman-Rousseeuw): repeatedly split the cluster with
/// the largest diameter by seeding a splinter group with the object of
/// maximal average dissimilarity and moving objects while doing so
/// strictly lowers their side's average dissimilarity. Heights are the
/// diameters of the split clusters. Ties always go to the smallest index.
pub fn diana(d: &VariableDistanceMatrix) -> SplitTree {
    let p = d.p();
    let values = &d.values;
    let mut active: Vec<Vec<usize>> = vec![(0..p).collect()];
    let mut splits = Vec::with_capacity(p.saturating_sub(1));
    let mut heights = Vec::with_capacity(p.saturating_sub(1));
    let mut stats = Vec::with_capacity(p.saturating_sub(1));

    while splits.len() + 1 < p {
        // Cluster with the largest diameter; ties by smallest member.
        let mut best: Option<(usize, f64)> = None;
        for (i, c) in active.iter().enumerate() {
            let diam = diameter_of(values, c);
            let better = match best {
                None => true,
                Some((bi, bd)) => diam > bd || (diam == bd && c[0] < active[bi][0]),
            };
            if better {
                best = Some((i, diam));
            }
        }
        let (pos, diameter) = best.expect("a splittable cluster exists until p singletons remain");
        let cluster = active.swap_remove(pos);

        let (splinter, remainder) = splinter_group(values, &cluster);
        let parent = Cluster::new(cluster.clone()).expect("nonempty");
        let (left_vec, right_vec) = if splinter[0] < remainder[0] {
            (splinter, remainder)
        } else {
            (remainder, splinter)
        };
        let left = Cluster::new(left_vec.clone()).expect("nonempty");
        let right = Cluster::new(right_vec.clone()).expect("nonempty");
        splits.push(SplitRecord {
            parent,
            left,
            right,
            distance: diameter,
            source: SplitSource::Diana,
        });
        heights.push(diameter);
        stats.push(SplitStats {
            cluster_size: cluster.len(),
            loading_count: 0,
            candidates_evaluated: 0,
        });
        if left_vec.len() >= 2 {
            active.push(left_vec);
        }
        if right_vec.len() >= 2 {
            active.push(right_vec);
        }
    }

    SplitTree {
        labels: d.labels.clone(),
        splits,
        heights,
        height_mode: HeightMode::Diameter,
        stats,
    }
}

fn diameter_of(values: &DMatrix<f64>, cluster: &[usize]) -> f64 {
    let mut diameter = 0.0_f64;
    for (a, &i) in cluster.iter().enumerate() {
        for &j in cluster.iter().skip(a + 1) {
            diameter = diameter.max(values[(i, j)]);
        }
    }
    diameter
}

/// Seeds the splinter with the object of maximal average dissimilarity,
/// then moves over objects whose average dissimilarity to the splinter is
/// smaller than to the rest of their own side (largest positive
/// difference first, smallest index on ties).
fn splinter_group(values: &DMatrix<f64>, cluster: &[usize]) -> (Vec<usize>, Vec<usize>) {
    let mut remainder: Vec<usize> = cluster.to_vec();
    let seed_pos = remainder
        .iter()
        .enumerate()
        .map(|(pos, &i)| {
            let avg = remainder
                .iter()
                .filter(|&&j| j != i)
                .map(|&j| values[(i, j)])
                .sum::<f64>()
                / (remainder.len() - 1) as f64;
            (pos, avg)
        })
        .fold((0usize, f64::NEG_INFINITY), |best, (pos, avg)| {
            if avg > best.1 {
                (pos, avg)
            } else {
                best
            }
        })
        .0;
    let mut splinter = vec![remainder.remove(seed_pos)];

    while remainder.len() >= 2 {
        let mut best: Option<(usize, f64)> = None;
        for (pos, &i) in remainder.iter().enumerate() {
            let to_rest = remainder
                .iter()
                .filter(|&&j| j != i)
                .map(|&j| values[(i, j)])
                .sum::<f64>()
                / (remainder.len() - 1) as f64;
            let to_splinter =
                splinter.iter().map(|&j| values[(i, j)]).sum::<f64>() / splinter.len() as f64;
            let improvement = to_rest - to_splinter;
            if improvement > 0.0 {
                let better = match best {
                    None => true,
                    Some((best_pos, best_improvement)) => {
                        improvement > best_improvement
                            || (improvement == best_improvement
                                && remainder[pos] < remainder[best_pos])
                    }
                };
                if better {
                    best = Some((pos, improvement));
                }
            }
        }
        match best {
            Some((pos, _)) => splinter.push(remainder.remove(pos)),
            None => break,
        }
    }
    splinter.sort_unstable();
    remainder.sort_unstable();
    (splinter, remainder)
}

/// Full divisive hierarchy where every split is the true argmax over all
/// 2^(p_i - 1) - 1 bipartitions. Written independently of the sparse
/// candidate engine so it can serve as its oracle; uses the same
/// processing order (FIFO) and the same tie rule (balance, then
/// lexicographic left side).
pub fn brute_force_hierarchy(
    r: &CorrelationMatrix,
    kind: SplitDistanceKind,
) -> Result<SplitTree, BaselineError> {
    let p = r.p();
    if p > BRUTE_FORCE_MAX_P {
        return Err(BaselineError::TooLarge {
            p,
            max: BRUTE_FORCE_MAX_P,
        });
    }
    if p < 2 {
        return Err(BaselineError::Divisive(DivisiveError::TooFewVariables { p }));
    }
    let mut queue: Vec<Vec<usize>> = vec![(0..p).collect()];
    let mut splits = Vec::with_capacity(p - 1);
    let mut heights = Vec::with_capacity(p - 1);
    let mut stats = Vec::with_capacity(p - 1);
    while !queue.is_empty() {
        let members = queue.remove(0);
        let p_i = members.len();
        let mut best: Option<(Vec<usize>, Vec<usize>, f64)> = None;
        let mut evaluated = 0usize;
        for mask in 1..(1usize << (p_i - 1)) {
            let mut left = vec![members[0]];
            let mut right = Vec::new();
            for bit in 0..(p_i - 1) {
                if mask & (1 << bit) != 0 {
                    right.push(members[bit + 1]);
                } else {
                    left.push(members[bit + 1]);
                }
            }
            let d = split_distance_between(r, &left, &right, kind)
                .map_err(DivisiveError::from)?;
            evaluated += 1;
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
        let (left, right, distance) = best.expect("p_i >= 2 yields at least one bipartition");
        if left.len() >= 2 {
            queue.push(left.clone());
        }
        if right.len() >= 2 {
            queue.push(right.clone());
        }
        splits.push(SplitRecord {
            parent: Cluster::new(members).expect("nonempty"),
            left: Cluster::new(left).expect("nonempty"),
            right: Cluster::new(right).expect("nonempty"),
            distance,
            source: SplitSource::Exhaustive,
        });
        heights.push(distance);
        stats.push(SplitStats {
            cluster_size: p_i,
            loading_count: 0,
            candidates_evaluated: evaluated,
        });
    }
    Ok(SplitTree {
        labels: r.column_labels().to_vec(),
        splits,
        heights,
        height_mode: HeightMode::SplitDistance,
        stats,
    })
}
