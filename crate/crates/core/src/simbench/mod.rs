//! Simulation designs, multivariate-normal sampling, the adjusted Rand
//! index and the replication benchmark driver.
//!
//! Reproducibility: every random quantity comes from a PCG-64 generator
//! seeded through SplitMix64 substreams. Replication r derives its
//! population generator from substream 2r and its sampling generator
//! from substream 2r + 1, so replications are independent of scheduling
//! and each other.

use std::time::Instant;

use nalgebra::DMatrix;
use rand::{RngExt, SeedableRng};
use rand_distr::{Distribution, StandardNormal};
use rand_pcg::Pcg64;
use rayon::prelude::*;
use thiserror::Error;

use crate::baselines::{diana, VariableDistanceMatrix};
use crate::dissimilarity::SplitDistanceKind;
use crate::divisive::{cut_tree, hcsvd_correlation, hcsvd_data, HcsvdConfig, Partition, SplitTree};
use crate::matrixkit::{
    cholesky, standardize, sym_eigenvalues_raw, CorrelationMatrix, MatrixError, RawMatrix,
};

/// Identifier of the generator and stream-splitting rule, recorded in
/// output metadata.
pub const RNG_ID: &str = "pcg64/splitmix64-substreams";

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SimbenchError {
    #[error("design {design} requires {requirement}, got p = {p}")]
    InvalidDesignSize {
        design: char,
        requirement: &'static str,
        p: usize,
    },
    #[error("population matrix not positive definite after {attempts} resampling attempts")]
    DesignInfeasible { attempts: usize },
    #[error("adjusted Rand index undefined for {p} items")]
    AriUndefined { p: usize },
    #[error("partitions cover {a} and {b} items, expected equal")]
    PartitionMismatch { a: usize, b: usize },
    #[error("replications must be >= 1")]
    NoReplications,
    #[error("n must be >= 2, got {n}")]
    InvalidSampleSize { n: usize },
    #[error(transparent)]
    Matrix(#[from] MatrixError),
}

/// SplitMix64 finalizer.
fn splitmix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Seed of substream `index` of the master `seed`:
/// splitmix64(seed + (index + 1) * golden_gamma).
pub fn substream_seed(seed: u64, index: u64) -> u64 {
    splitmix64(seed.wrapping_add((index + 1).wrapping_mul(0x9e37_79b9_7f4a_7c15)))
}

/// PCG-64 generator for the given substream.
pub fn substream_rng(seed: u64, index: u64) -> Pcg64 {
    Pcg64::seed_from_u64(substream_seed(seed, index))
}

/// Known cluster compositions of a simulation design at each cluster
/// count where the construction pins them down.
#[derive(Debug, Clone)]
pub struct GroundTruth {
    /// (cluster count, partition), counts ascending.
    pub partitions: Vec<(usize, Partition)>,
}

impl GroundTruth {
    pub fn counts(&self) -> Vec<usize> {
        self.partitions.iter().map(|(k, _)| *k).collect()
    }

    pub fn at(&self, count: usize) -> Option<&Partition> {
        self.partitions
            .iter()
            .find(|(k, _)| *k == count)
            .map(|(_, p)| p)
    }
}

const DESIGN_A_BLOCK: usize = 20;
const DESIGN_A_SUBGROUP: usize = 4;
/// Base correlation toward subgroup b (1-based); subgroup 1 has no step.
const DESIGN_A_STEPS: [f64; 4] = [0.8, 0.6, 0.4, 0.2];
const DESIGN_A_WITHIN: f64 = 0.95;
const PD_ATTEMPTS: usize = 100;

/// Design (a): blocks of 20 variables. Each block holds 5 subgroups of 4
/// with within-subgroup correlation 0.95 and a stepwise correlation
/// between subgroups a < b of step(b) + eta, eta ~ U(-0.05, 0.05) drawn
/// once per block and step; the correlation to a subgroup is set by the
/// deeper subgroup index (caterpillar nesting), which pins the cluster
/// compositions at 1x, 2x, 3x and 4x the block count. Resamples eta until
/// the matrix is positive definite.
pub fn design_a_population(
    p: usize,
    rng: &mut Pcg64,
) -> Result<(CorrelationMatrix, GroundTruth), SimbenchError> {
    if p == 0 || p % 100 != 0 {
        return Err(SimbenchError::InvalidDesignSize {
            design: 'a',
            requirement: "p divisible by 100",
            p,
        });
    }
    let blocks = p / DESIGN_A_BLOCK;
    for _ in 0..PD_ATTEMPTS {
        let mut m = DMatrix::identity(p, p);
        for block in 0..blocks {
            let offset = block * DESIGN_A_BLOCK;
            // One eta per step, fresh for every block.
            let etas: Vec<f64> = (0..4).map(|_| rng.random_range(-0.05..0.05)).collect();
            for i in 0..DESIGN_A_BLOCK {
                for j in (i + 1)..DESIGN_A_BLOCK {
                    let sub_i = i / DESIGN_A_SUBGROUP;
                    let sub_j = j / DESIGN_A_SUBGROUP;
                    let value = if sub_i == sub_j {
                        DESIGN_A_WITHIN
                    } else {
                        let deeper = sub_i.max(sub_j); // 1..=4
                        DESIGN_A_STEPS[deeper - 1] + etas[deeper - 1]
                    };
                    m[(offset + i, offset + j)] = value;
                    m[(offset + j, offset + i)] = value;
                }
            }
        }
        let min_eigenvalue = *sym_eigenvalues_raw(&m)?.last().expect("p >= 1");
        if min_eigenvalue > 1e-10 {
            let truth = design_a_truth(p, blocks);
            let matrix = CorrelationMatrix::with_default_labels(m)?;
            return Ok((matrix, truth));
        }
    }
    Err(SimbenchError::DesignInfeasible {
        attempts: PD_ATTEMPTS,
    })
}

fn design_a_truth(p: usize, blocks: usize) -> GroundTruth {
    // Splitting one block into m clusters peels subgroups off the deep
    // end: {1..5-m+1}, {5-m+2}, ..., {5}.
    let mut partitions = Vec::new();
    for m in 1..=4usize {
        let mut labels = vec![0usize; p];
        let mut next = 0usize;
        for block in 0..blocks {
            let offset = block * DESIGN_A_BLOCK;
            let head_subgroups = 5 - m + 1;
            let head = next;
            next += 1;
            let mut tail_ids = Vec::new();
            for _ in head_subgroups..5 {
                tail_ids.push(next);
                next += 1;
            }
            for i in 0..DESIGN_A_BLOCK {
                let sub = i / DESIGN_A_SUBGROUP;
                labels[offset + i] = if sub < head_subgroups {
                    head
                } else {
                    tail_ids[sub - head_subgroups]
                };
            }
        }
        let partition = Partition::from_labels(&labels).expect("construction is a partition");
        partitions.push((blocks * m, partition));
    }
    GroundTruth { partitions }
}

/// Design (b): p/3 blocks of 3 variables; block l is
/// [[1, eta, -eta^4], [eta, 1, -eta^4], [-eta^4, -eta^4, 1]] with
/// eta = eta_l ~ U(0.8, 0.9). Cluster compositions are pinned at p/3
/// (the blocks) and 2p/3 ({1,2} and {3} inside each block).
pub fn design_b_population(
    p: usize,
    rng: &mut Pcg64,
) -> Result<(CorrelationMatrix, GroundTruth), SimbenchError> {
    if p == 0 || p % 3 != 0 {
        return Err(SimbenchError::InvalidDesignSize {
            design: 'b',
            requirement: "p divisible by 3",
            p,
        });
    }
    let blocks = p / 3;
    let mut m = DMatrix::identity(p, p);
    for block in 0..blocks {
        let offset = 3 * block;
        let eta: f64 = rng.random_range(0.8..0.9);
        let eta4 = eta.powi(4);
        m[(offset, offset + 1)] = eta;
        m[(offset + 1, offset)] = eta;
        m[(offset, offset + 2)] = -eta4;
        m[(offset + 2, offset)] = -eta4;
        m[(offset + 1, offset + 2)] = -eta4;
        m[(offset + 2, offset + 1)] = -eta4;
    }
    let min_eigenvalue = *sym_eigenvalues_raw(&m)?.last().expect("p >= 1");
    assert!(
        min_eigenvalue > 1e-10,
        "design (b) blocks are positive definite for eta in (0.8, 0.9); got min eigenvalue {min_eigenvalue}"
    );

    let mut labels_blocks = vec![0usize; p];
    let mut labels_split = vec![0usize; p];
    for block in 0..blocks {
        for i in 0..3 {
            labels_blocks[3 * block + i] = block;
            labels_split[3 * block + i] = if i < 2 { 2 * block } else { 2 * block + 1 };
        }
    }
    let truth = GroundTruth {
        partitions: vec![
            (blocks, Partition::from_labels(&labels_blocks).expect("partition")),
            (2 * blocks, Partition::from_labels(&labels_split).expect("partition")),
        ],
    };
    Ok((CorrelationMatrix::with_default_labels(m)?, truth))
}

/// n i.i.d. rows from N(0, pop): each row is L z with L the Cholesky
/// factor and z standard normal, drawn row-major.
pub fn sample_mvn(
    pop: &CorrelationMatrix,
    n: usize,
    rng: &mut Pcg64,
) -> Result<RawMatrix, SimbenchError> {
    if n < 2 {
        return Err(SimbenchError::InvalidSampleSize { n });
    }
    let p = pop.p();
    let l = cholesky(pop)?;
    let mut values = DMatrix::zeros(n, p);
    let mut z = vec![0.0_f64; p];
    for row in 0..n {
        for slot in z.iter_mut() {
            *slot = StandardNormal.sample(rng);
        }
        for i in 0..p {
            let mut acc = 0.0;
            for j in 0..=i {
                acc += l[(i, j)] * z[j];
            }
            values[(row, i)] = acc;
        }
    }
    Ok(RawMatrix::new(values, pop.column_labels().to_vec())?)
}

fn comb2(n: u64) -> u128 {
    (n as u128) * (n.saturating_sub(1) as u128) / 2
}

/// Hubert-Arabie adjusted Rand index between two partitions of the same
/// items. When the correction denominator vanishes (both partitions
/// trivial) the convention is 1 for identical partitions, 0 otherwise.
pub fn adjusted_rand_index(a: &Partition, b: &Partition) -> Result<f64, SimbenchError> {
    if a.p() != b.p() {
        return Err(SimbenchError::PartitionMismatch { a: a.p(), b: b.p() });
    }
    let p = a.p();
    if p < 2 {
        return Err(SimbenchError::AriUndefined { p });
    }
    let labels_a = a.membership();
    let labels_b = b.membership();
    let ka = a.len();
    let kb = b.len();
    let mut contingency = vec![0u64; ka * kb];
    let mut sum_a = vec![0u64; ka];
    let mut sum_b = vec![0u64; kb];
    for i in 0..p {
        contingency[labels_a[i] * kb + labels_b[i]] += 1;
        sum_a[labels_a[i]] += 1;
        sum_b[labels_b[i]] += 1;
    }
    let index: u128 = contingency.iter().map(|&n| comb2(n)).sum();
    let rows: u128 = sum_a.iter().map(|&n| comb2(n)).sum();
    let cols: u128 = sum_b.iter().map(|&n| comb2(n)).sum();
    let total = comb2(p as u64);
    let expected = rows as f64 * cols as f64 / total as f64;
    let max_index = 0.5 * (rows as f64 + cols as f64);
    let denominator = max_index - expected;
    if denominator.abs() < 1e-12 {
        return Ok(if labels_a == labels_b { 1.0 } else { 0.0 });
    }
    Ok((index as f64 - expected) / denominator)
}

/// Which simulation design to generate.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Design {
    A,
    B,
}

impl Design {
    pub fn name(&self) -> &'static str {
        match self {
            Design::A => "a",
            Design::B => "b",
        }
    }

    pub fn generate(
        &self,
        p: usize,
        rng: &mut Pcg64,
    ) -> Result<(CorrelationMatrix, GroundTruth), SimbenchError> {
        match self {
            Design::A => design_a_population(p, rng),
            Design::B => design_b_population(p, rng),
        }
    }
}

/// One benchmark configuration: design, size, sample size (None runs the
/// methods on the exact population correlation matrix), master seed and
/// replication count.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DesignSpec {
    pub design: Design,
    pub p: usize,
    pub n: Option<usize>,
    pub seed: u64,
    pub replications: usize,
}

impl DesignSpec {
    pub fn validate(&self) -> Result<(), SimbenchError> {
        match self.design {
            Design::A if self.p == 0 || self.p % 100 != 0 => {
                return Err(SimbenchError::InvalidDesignSize {
                    design: 'a',
                    requirement: "p divisible by 100",
                    p: self.p,
                })
            }
            Design::B if self.p == 0 || self.p % 3 != 0 => {
                return Err(SimbenchError::InvalidDesignSize {
                    design: 'b',
                    requirement: "p divisible by 3",
                    p: self.p,
                })
            }
            _ => {}
        }
        if let Some(n) = self.n {
            if n < 2 {
                return Err(SimbenchError::InvalidSampleSize { n });
            }
        }
        if self.replications == 0 {
            return Err(SimbenchError::NoReplications);
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Method {
    HcSvd,
    Diana,
}

impl Method {
    pub fn name(&self) -> &'static str {
        match self {
            Method::HcSvd => "hcsvd",
            Method::Diana => "diana",
        }
    }
}

/// One ARI measurement.
#[derive(Debug, Clone, PartialEq)]
pub struct BenchRow {
    pub replication: usize,
    pub method: Method,
    pub kind: Option<SplitDistanceKind>,
    pub cut_k: usize,
    pub ari: f64,
    /// Wall-clock seconds of the clustering run this row came from.
    pub seconds: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchFailure {
    pub replication: usize,
    pub method: String,
    pub message: String,
}

#[derive(Debug, Clone)]
pub struct BenchResult {
    pub spec: DesignSpec,
    pub rows: Vec<BenchRow>,
    pub failures: Vec<BenchFailure>,
    pub rng_id: &'static str,
}

/// Aggregate of one (method, kind, cut) cell.
#[derive(Debug, Clone, PartialEq)]
pub struct BenchAggregate {
    pub method: Method,
    pub kind: Option<SplitDistanceKind>,
    pub cut_k: usize,
    pub replications: usize,
    pub mean_ari: f64,
    pub sd_ari: f64,
    pub mean_seconds: f64,
}

impl BenchResult {
    pub fn aggregates(&self) -> Vec<BenchAggregate> {
        let mut cells: Vec<(Method, Option<SplitDistanceKind>, usize)> = Vec::new();
        for row in &self.rows {
            let key = (row.method, row.kind, row.cut_k);
            if !cells.contains(&key) {
                cells.push(key);
            }
        }
        cells
            .into_iter()
            .map(|(method, kind, cut_k)| {
                let aris: Vec<f64> = self
                    .rows
                    .iter()
                    .filter(|r| r.method == method && r.kind == kind && r.cut_k == cut_k)
                    .map(|r| r.ari)
                    .collect();
                let secs: Vec<f64> = self
                    .rows
                    .iter()
                    .filter(|r| r.method == method && r.kind == kind && r.cut_k == cut_k)
                    .map(|r| r.seconds)
                    .collect();
                let count = aris.len() as f64;
                let mean_ari = aris.iter().sum::<f64>() / count;
                let variance = if aris.len() > 1 {
                    aris.iter().map(|a| (a - mean_ari) * (a - mean_ari)).sum::<f64>()
                        / (count - 1.0)
                } else {
                    0.0
                };
                BenchAggregate {
                    method,
                    kind,
                    cut_k,
                    replications: aris.len(),
                    mean_ari,
                    sd_ari: variance.sqrt(),
                    mean_seconds: secs.iter().sum::<f64>() / count,
                }
            })
            .collect()
    }
}

/// Runs the replication benchmark: per replication, generate a fresh
/// population (substream 2r), sample data when n is given (substream
/// 2r + 1), run every method, cut at each known cluster count and score
/// against the ground truth. Method failures are recorded per
/// replication, not fatal. Replications run in parallel; all output is
/// deterministic in (spec, seed) apart from the wall-clock columns.
pub fn run_benchmark(
    spec: &DesignSpec,
    methods: &[Method],
    kinds: &[SplitDistanceKind],
) -> Result<BenchResult, SimbenchError> {
    spec.validate()?;
    let per_rep: Vec<(Vec<BenchRow>, Vec<BenchFailure>)> = (0..spec.replications)
        .into_par_iter()
        .map(|rep| run_replication(spec, methods, kinds, rep))
        .collect();
    let mut rows = Vec::new();
    let mut failures = Vec::new();
    for (mut r, mut f) in per_rep {
        rows.append(&mut r);
        failures.append(&mut f);
    }
    Ok(BenchResult {
        spec: *spec,
        rows,
        failures,
        rng_id: RNG_ID,
    })
}

fn run_replication(
    spec: &DesignSpec,
    methods: &[Method],
    kinds: &[SplitDistanceKind],
    rep: usize,
) -> (Vec<BenchRow>, Vec<BenchFailure>) {
    let mut rows = Vec::new();
    let mut failures = Vec::new();
    let mut pop_rng = substream_rng(spec.seed, 2 * rep as u64);
    let (pop, truth) = match spec.design.generate(spec.p, &mut pop_rng) {
        Ok(out) => out,
        Err(e) => {
            failures.push(BenchFailure {
                replication: rep,
                method: "generator".into(),
                message: e.to_string(),
            });
            return (rows, failures);
        }
    };
    let data = match spec.n {
        Some(n) => {
            let mut data_rng = substream_rng(spec.seed, 2 * rep as u64 + 1);
            match sample_mvn(&pop, n, &mut data_rng).and_then(|raw| Ok(standardize(&raw)?)) {
                Ok(x) => Some(x),
                Err(e) => {
                    failures.push(BenchFailure {
                        replication: rep,
                        method: "sampler".into(),
                        message: e.to_string(),
                    });
                    return (rows, failures);
                }
            }
        }
        None => None,
    };

    for &method in methods {
        match method {
            Method::HcSvd => {
                for &kind in kinds {
                    let config = HcsvdConfig {
                        kind,
                        ..HcsvdConfig::default()
                    };
                    let start = Instant::now();
                    let result = match &data {
                        Some(x) => hcsvd_data(x, &config),
                        None => hcsvd_correlation(&pop, &config),
                    };
                    let seconds = start.elapsed().as_secs_f64();
                    match result {
                        Ok(out) => score_tree(
                            &out.tree,
                            &truth,
                            rep,
                            method,
                            Some(kind),
                            seconds,
                            &mut rows,
                            &mut failures,
                        ),
                        Err(e) => failures.push(BenchFailure {
                            replication: rep,
                            method: format!("hcsvd-{}", kind.name()),
                            message: e.to_string(),
                        }),
                    }
                }
            }
            Method::Diana => {
                let start = Instant::now();
                let distance = match &data {
                    Some(x) => {
                        VariableDistanceMatrix::from_correlation(&crate::matrixkit::correlation(x))
                    }
                    None => VariableDistanceMatrix::from_correlation(&pop),
                };
                let tree = diana(&distance);
                let seconds = start.elapsed().as_secs_f64();
                score_tree(
                    &tree, &truth, rep, method, None, seconds, &mut rows, &mut failures,
                );
            }
        }
    }
    (rows, failures)
}

#[allow(clippy::too_many_arguments)]
fn score_tree(
    tree: &SplitTree,
    truth: &GroundTruth,
    rep: usize,
    method: Method,
    kind: Option<SplitDistanceKind>,
    seconds: f64,
    rows: &mut Vec<BenchRow>,
    failures: &mut Vec<BenchFailure>,
) {
    for (count, expected) in &truth.partitions {
        let outcome = cut_tree(tree, *count)
            .map_err(|e| e.to_string())
            .and_then(|cut| adjusted_rand_index(&cut, expected).map_err(|e| e.to_string()));
        match outcome {
            Ok(ari) => rows.push(BenchRow {
                replication: rep,
                method,
                kind,
                cut_k: *count,
                ari,
                seconds,
            }),
            Err(message) => failures.push(BenchFailure {
                replication: rep,
                method: format!(
                    "{}{}",
                    method.name(),
                    kind.map(|k| format!("-{}", k.name())).unwrap_or_default()
                ),
                message,
            }),
        }
    }
}

#[cfg(test)]
mod tests;
