//! Command-line interface: `cluster`, `simulate`, `bench` and `ari`.
//!
//! Exit codes: 0 success, 2 malformed input or invalid configuration,
//! 3 collinearity violation, 4 internal convergence failure.

mod io;

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use hcsvd::dissimilarity::SplitDistanceKind;
use hcsvd::divisive::{
    cut_tree, hcsvd_correlation, hcsvd_data, DivisiveError, HcsvdConfig, HeightMode,
    LoadingPolicy, Partition,
};
use hcsvd::export::{DendrogramDocument, MetadataDoc};
use hcsvd::matrixkit::standardize;
use hcsvd::simbench::{
    run_benchmark, sample_mvn, substream_rng, BenchResult, Design, DesignSpec, Method, RNG_ID,
};
use hcsvd::{DissimilarityError, MatrixError, SparseError};

const VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Parser)]
#[command(name = "hcsvd", version, about = "Divisive hierarchical clustering of variables")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Cluster the variables of a data or correlation CSV.
    Cluster(ClusterArgs),
    /// Generate a simulation design: population matrix, optional sample,
    /// ground-truth partitions.
    Simulate(SimulateArgs),
    /// Run the replication benchmark described by a spec file.
    Bench(BenchArgs),
    /// Adjusted Rand index between two partition files.
    Ari(AriArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum DistanceArg {
    Rv,
    Average,
    Single,
}

impl DistanceArg {
    fn kind(self) -> SplitDistanceKind {
        match self {
            DistanceArg::Rv => SplitDistanceKind::Rv,
            DistanceArg::Average => SplitDistanceKind::Average,
            DistanceArg::Single => SplitDistanceKind::Single,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum HeightsArg {
    Split,
    Reliability,
}

#[derive(Clone, Copy, ValueEnum)]
enum FormatArg {
    Json,
    Newick,
    Csv,
}

#[derive(Clone, Copy, ValueEnum)]
enum DesignArg {
    A,
    B,
}

#[derive(Args)]
struct ClusterArgs {
    /// Input CSV: observations x variables, or a correlation matrix with --corr.
    input: PathBuf,
    /// Treat the input as a correlation matrix.
    #[arg(long)]
    corr: bool,
    #[arg(long, value_enum, default_value = "single")]
    distance: DistanceArg,
    #[arg(long, value_enum, default_value = "split")]
    heights: HeightsArg,
    /// Loadings per degree of sparsity: kaiser, all, or a fixed count.
    #[arg(long, default_value = "kaiser")]
    loadings: String,
    #[arg(long, default_value_t = 6)]
    exhaustive_threshold: usize,
    /// Cluster counts to cut at, e.g. --cut 6 or --cut 5,10.
    #[arg(long, value_delimiter = ',')]
    cut: Vec<usize>,
    #[arg(long, value_enum, default_value = "json")]
    format: FormatArg,
    /// Worker threads (0 = all cores).
    #[arg(long, default_value_t = 0)]
    threads: usize,
    /// Echoed into output metadata; clustering itself is deterministic.
    #[arg(long)]
    seed: Option<u64>,
    /// Output path for the dendrogram (stdout when omitted); cut files
    /// land next to it as <stem>.cut<k>.csv.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct SimulateArgs {
    #[arg(long, value_enum)]
    design: DesignArg,
    #[arg(long)]
    p: usize,
    /// Observations to sample; omit to write only the population matrix.
    #[arg(long)]
    n: Option<usize>,
    #[arg(long)]
    seed: u64,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct BenchArgs {
    /// Benchmark spec file (key = value lines; see README).
    #[arg(long)]
    spec: PathBuf,
    /// Output directory for results.csv and summary.json.
    #[arg(long, default_value = ".")]
    out: PathBuf,
    #[arg(long, default_value_t = 0)]
    threads: usize,
}

#[derive(Args)]
struct AriArgs {
    partition_a: PathBuf,
    partition_b: PathBuf,
}

struct CliError {
    code: u8,
    message: String,
}

impl CliError {
    fn input(message: impl Into<String>) -> Self {
        CliError {
            code: 2,
            message: message.into(),
        }
    }
}

impl From<io::InputError> for CliError {
    fn from(e: io::InputError) -> Self {
        CliError::input(e.0)
    }
}

impl From<DivisiveError> for CliError {
    fn from(e: DivisiveError) -> Self {
        let code = match &e {
            DivisiveError::Dissimilarity(DissimilarityError::CollinearityViolation { .. }) => 3,
            DivisiveError::Sparse(SparseError::ConvergenceFailure { .. })
            | DivisiveError::Matrix(MatrixError::ConvergenceFailure) => 4,
            _ => 2,
        };
        CliError {
            code,
            message: e.to_string(),
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let outcome = match cli.command {
        Command::Cluster(args) => cmd_cluster(args),
        Command::Simulate(args) => cmd_simulate(args),
        Command::Bench(args) => cmd_bench(args),
        Command::Ari(args) => cmd_ari(args),
    };
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", e.message);
            ExitCode::from(e.code)
        }
    }
}

fn set_threads(threads: usize) {
    if threads > 0 {
        // Ignore the error when a global pool already exists (tests).
        let _ = rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build_global();
    }
}

fn parse_loadings(text: &str) -> Result<LoadingPolicy, CliError> {
    match text {
        "kaiser" => Ok(LoadingPolicy::Kaiser),
        "all" => Ok(LoadingPolicy::All),
        other => other
            .parse::<usize>()
            .ok()
            .filter(|&k| k >= 1)
            .map(LoadingPolicy::Fixed)
            .ok_or_else(|| {
                CliError::input(format!(
                    "--loadings must be 'kaiser', 'all' or a positive integer, got '{other}'"
                ))
            }),
    }
}

fn cmd_cluster(args: ClusterArgs) -> Result<(), CliError> {
    set_threads(args.threads);
    let policy = parse_loadings(&args.loadings)?;
    let config = HcsvdConfig {
        kind: args.distance.kind(),
        policy,
        height_mode: match args.heights {
            HeightsArg::Split => HeightMode::SplitDistance,
            HeightsArg::Reliability => HeightMode::Reliability,
        },
        exhaustive_threshold: args.exhaustive_threshold,
        ..HcsvdConfig::default()
    };

    let file = io::read_matrix_csv(&args.input)?;
    let result = if args.corr {
        let r = io::as_correlation_matrix(file, &args.input)?;
        hcsvd_correlation(&r, &config)?
    } else {
        let raw = io::as_raw_matrix(file, &args.input)?;
        let x = standardize(&raw).map_err(|e| CliError::input(e.to_string()))?;
        hcsvd_data(&x, &config)?
    };

    let mut config_echo = BTreeMap::new();
    config_echo.insert("input".into(), args.input.display().to_string());
    config_echo.insert(
        "input_kind".into(),
        if args.corr { "correlation_csv" } else { "data_csv" }.into(),
    );
    config_echo.insert("distance".into(), config.kind.name().into());
    config_echo.insert("heights".into(), config.height_mode.name().into());
    config_echo.insert("loadings".into(), args.loadings.clone());
    config_echo.insert(
        "exhaustive_threshold".into(),
        config.exhaustive_threshold.to_string(),
    );
    config_echo.insert("threads".into(), args.threads.to_string());
    let document = DendrogramDocument::from_tree(
        &result.tree,
        result.diagnostics,
        MetadataDoc {
            version: VERSION.into(),
            rng: RNG_ID.into(),
            seed: args.seed,
            config: config_echo,
        },
    );

    let (body, clamp_warning) = match args.format {
        FormatArg::Json => (document.to_json(), 0),
        FormatArg::Newick => {
            let (text, clamped) = document
                .to_newick()
                .map_err(|e| CliError::input(e.to_string()))?;
            (text + "\n", clamped)
        }
        FormatArg::Csv => (document.to_csv(), 0),
    };
    match &args.out {
        Some(path) => {
            std::fs::write(path, &body)
                .map_err(|e| CliError::input(format!("cannot write {}: {e}", path.display())))?;
        }
        None => print!("{body}"),
    }

    for &k in &args.cut {
        let partition = cut_tree(&result.tree, k)?;
        let cut_csv = io::partition_to_csv(&result.tree.labels, &partition.membership());
        let path = cut_path(args.out.as_deref(), k);
        std::fs::write(&path, cut_csv)
            .map_err(|e| CliError::input(format!("cannot write {}: {e}", path.display())))?;
    }

    eprintln!(
        "splits: {}; ultrametric violations (tol 1e-12): {}; monotone heights: {}",
        result.tree.splits.len(),
        result.diagnostics.ultrametric_violations,
        result.diagnostics.monotone_heights
    );
    if clamp_warning > 0 {
        eprintln!(
            "warning: clamped {clamp_warning} negative branch lengths in Newick output \
             (non-monotone heights; JSON keeps the raw values)"
        );
    }
    Ok(())
}

fn cut_path(out: Option<&Path>, k: usize) -> PathBuf {
    match out {
        Some(path) => {
            let stem = path
                .file_stem()
                .map(|s| s.to_string_lossy().to_string())
                .unwrap_or_else(|| "dendrogram".into());
            path.with_file_name(format!("{stem}.cut{k}.csv"))
        }
        None => PathBuf::from(format!("cut{k}.csv")),
    }
}

fn cmd_simulate(args: SimulateArgs) -> Result<(), CliError> {
    let design = match args.design {
        DesignArg::A => Design::A,
        DesignArg::B => Design::B,
    };
    std::fs::create_dir_all(&args.out)
        .map_err(|e| CliError::input(format!("cannot create {}: {e}", args.out.display())))?;

    let mut pop_rng = substream_rng(args.seed, 0);
    let (pop, truth) = design
        .generate(args.p, &mut pop_rng)
        .map_err(|e| CliError::input(e.to_string()))?;

    let pop_path = args.out.join("population.csv");
    std::fs::write(
        &pop_path,
        io::matrix_to_csv(pop.column_labels(), pop.values()),
    )
    .map_err(|e| CliError::input(format!("cannot write {}: {e}", pop_path.display())))?;
    eprintln!("wrote {}", pop_path.display());

    if let Some(n) = args.n {
        let mut data_rng = substream_rng(args.seed, 1);
        let raw = sample_mvn(&pop, n, &mut data_rng).map_err(|e| CliError::input(e.to_string()))?;
        let data_path = args.out.join("data.csv");
        std::fs::write(
            &data_path,
            io::matrix_to_csv(raw.column_labels(), raw.values()),
        )
        .map_err(|e| CliError::input(format!("cannot write {}: {e}", data_path.display())))?;
        eprintln!("wrote {}", data_path.display());
    }

    for (count, partition) in &truth.partitions {
        let path = args.out.join(format!("truth_{count}.csv"));
        std::fs::write(
            &path,
            io::partition_to_csv(pop.column_labels(), &partition.membership()),
        )
        .map_err(|e| CliError::input(format!("cannot write {}: {e}", path.display())))?;
        eprintln!("wrote {}", path.display());
    }
    Ok(())
}

struct BenchSpecFile {
    spec: DesignSpec,
    methods: Vec<Method>,
    kinds: Vec<SplitDistanceKind>,
}

fn parse_bench_spec(path: &Path) -> Result<BenchSpecFile, CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::input(format!("cannot read {}: {e}", path.display())))?;
    let mut values: BTreeMap<String, String> = BTreeMap::new();
    for (index, line) in text.lines().enumerate() {
        let line = line.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let Some((key, value)) = line.split_once('=') else {
            return Err(CliError::input(format!(
                "{}: line {}: expected 'key = value'",
                path.display(),
                index + 1
            )));
        };
        values.insert(key.trim().to_string(), value.trim().to_string());
    }
    let get = |key: &str| {
        values
            .get(key)
            .ok_or_else(|| CliError::input(format!("{}: missing key '{key}'", path.display())))
    };
    let parse_usize = |key: &str, value: &str| {
        value.parse::<usize>().map_err(|_| {
            CliError::input(format!("{}: key '{key}': invalid integer '{value}'", path.display()))
        })
    };

    let design = match get("design")?.as_str() {
        "a" | "A" => Design::A,
        "b" | "B" => Design::B,
        other => {
            return Err(CliError::input(format!(
                "{}: design must be 'a' or 'b', got '{other}'",
                path.display()
            )))
        }
    };
    let p = parse_usize("p", get("p")?)?;
    let n = match values.get("n") {
        Some(v) => Some(parse_usize("n", v)?),
        None => None,
    };
    let replications = parse_usize("replications", get("replications")?)?;
    let seed = get("seed")?.parse::<u64>().map_err(|_| {
        CliError::input(format!("{}: key 'seed': invalid integer", path.display()))
    })?;
    let kinds = match values.get("kinds") {
        None => SplitDistanceKind::ALL.to_vec(),
        Some(list) => {
            let mut kinds = Vec::new();
            for item in list.split(',') {
                kinds.push(match item.trim() {
                    "rv" => SplitDistanceKind::Rv,
                    "average" => SplitDistanceKind::Average,
                    "single" => SplitDistanceKind::Single,
                    other => {
                        return Err(CliError::input(format!(
                            "{}: unknown distance kind '{other}'",
                            path.display()
                        )))
                    }
                });
            }
            kinds
        }
    };
    let methods = match values.get("methods") {
        None => vec![Method::HcSvd, Method::Diana],
        Some(list) => {
            let mut methods = Vec::new();
            for item in list.split(',') {
                methods.push(match item.trim() {
                    "hcsvd" => Method::HcSvd,
                    "diana" => Method::Diana,
                    other => {
                        return Err(CliError::input(format!(
                            "{}: unknown method '{other}'",
                            path.display()
                        )))
                    }
                });
            }
            methods
        }
    };
    let spec = DesignSpec {
        design,
        p,
        n,
        seed,
        replications,
    };
    spec.validate().map_err(|e| CliError::input(e.to_string()))?;
    Ok(BenchSpecFile {
        spec,
        methods,
        kinds,
    })
}

fn cmd_bench(args: BenchArgs) -> Result<(), CliError> {
    set_threads(args.threads);
    let BenchSpecFile {
        spec,
        methods,
        kinds,
    } = parse_bench_spec(&args.spec)?;
    std::fs::create_dir_all(&args.out)
        .map_err(|e| CliError::input(format!("cannot create {}: {e}", args.out.display())))?;

    let result = run_benchmark(&spec, &methods, &kinds).map_err(|e| CliError::input(e.to_string()))?;
    if !result.failures.is_empty() {
        for failure in &result.failures {
            eprintln!(
                "replication {} ({}): {}",
                failure.replication, failure.method, failure.message
            );
        }
        if result.rows.is_empty() {
            return Err(CliError {
                code: 4,
                message: "all replications failed".into(),
            });
        }
    }

    let csv_path = args.out.join("results.csv");
    std::fs::write(&csv_path, bench_rows_csv(&result))
        .map_err(|e| CliError::input(format!("cannot write {}: {e}", csv_path.display())))?;
    let json_path = args.out.join("summary.json");
    std::fs::write(&json_path, bench_summary_json(&result))
        .map_err(|e| CliError::input(format!("cannot write {}: {e}", json_path.display())))?;
    eprintln!("wrote {}", csv_path.display());
    eprintln!("wrote {}", json_path.display());
    Ok(())
}

fn bench_rows_csv(result: &BenchResult) -> String {
    let mut out = String::from("design,p,n,replication,method,distance_kind,cut_k,ari,seconds\n");
    let n_text = result
        .spec
        .n
        .map(|n| n.to_string())
        .unwrap_or_default();
    for row in &result.rows {
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{},{:.6}\n",
            result.spec.design.name(),
            result.spec.p,
            n_text,
            row.replication,
            row.method.name(),
            row.kind.map(|k| k.name()).unwrap_or(""),
            row.cut_k,
            row.ari,
            row.seconds
        ));
    }
    out
}

fn bench_summary_json(result: &BenchResult) -> String {
    let aggregates: Vec<serde_json::Value> = result
        .aggregates()
        .into_iter()
        .map(|a| {
            serde_json::json!({
                "method": a.method.name(),
                "distance_kind": a.kind.map(|k| k.name()),
                "cut_k": a.cut_k,
                "replications": a.replications,
                "mean_ari": a.mean_ari,
                "sd_ari": a.sd_ari,
                "mean_seconds": a.mean_seconds,
            })
        })
        .collect();
    let failures: Vec<serde_json::Value> = result
        .failures
        .iter()
        .map(|f| {
            serde_json::json!({
                "replication": f.replication,
                "method": f.method,
                "message": f.message,
            })
        })
        .collect();
    let summary = serde_json::json!({
        "schema": "hcsvd-bench/1",
        "version": VERSION,
        "rng": result.rng_id,
        "design": result.spec.design.name(),
        "p": result.spec.p,
        "n": result.spec.n,
        "replications": result.spec.replications,
        "seed": result.spec.seed,
        "aggregates": aggregates,
        "failures": failures,
    });
    serde_json::to_string_pretty(&summary).expect("summary serializes")
}

fn cmd_ari(args: AriArgs) -> Result<(), CliError> {
    let a = io::read_partition_csv(&args.partition_a)?;
    let b = io::read_partition_csv(&args.partition_b)?;
    let mut a_sorted: Vec<&(String, String)> = a.iter().collect();
    let mut b_sorted: Vec<&(String, String)> = b.iter().collect();
    a_sorted.sort_by(|x, y| x.0.cmp(&y.0));
    b_sorted.sort_by(|x, y| x.0.cmp(&y.0));
    let labels_a: Vec<&String> = a_sorted.iter().map(|(v, _)| v).collect();
    let labels_b: Vec<&String> = b_sorted.iter().map(|(v, _)| v).collect();
    if labels_a != labels_b {
        return Err(CliError::input(
            "partition files list different variable sets".to_string(),
        ));
    }
    let to_partition = |rows: &[&(String, String)]| -> Result<Partition, CliError> {
        let mut ids: BTreeMap<&str, usize> = BTreeMap::new();
        let mut labels = Vec::with_capacity(rows.len());
        for (_, cluster) in rows {
            let next = ids.len();
            let id = *ids.entry(cluster.as_str()).or_insert(next);
            labels.push(id);
        }
        Partition::from_labels(&labels).map_err(|e| CliError::input(e.to_string()))
    };
    let pa = to_partition(&a_sorted)?;
    let pb = to_partition(&b_sorted)?;
    let ari = hcsvd::simbench::adjusted_rand_index(&pa, &pb)
        .map_err(|e| CliError::input(e.to_string()))?;
    println!("{ari:.6}");
    Ok(())
}
