//! `lgbm` command line: run each pipeline stage standalone on the documented
//! file formats, or chain everything with `bench`.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use lgbm::bench::{
    replicate_rng, run_scenario, write_manifest, write_results_csv, RngStage, ScenarioConfig,
};
use lgbm::cluster::{cod_cluster, read_partition, tune_alpha, write_partition, Partition};
use lgbm::cooc::{count_cooccurrences, read_cooc, write_cooc};
use lgbm::corpus::{default_alpha, read_sequences, simulate_corpus, write_sequences};
use lgbm::metrics::{f_score, rand_index, relative_error, MatrixNorm, SupportMatrix};
use lgbm::model::{write_model_json, BlockModel};
use lgbm::pmi::{empirical_pmi, read_dense_csv, sppmi, write_dense_csv, SppmiMatrix, DEFAULT_ETA};
use lgbm::precision::{
    clime, estimate_gamma, estimate_omega, refine_q, representative_q, support, tune_lambda,
    ClimeDiagnostics, EstimationMeta, EstimationResult,
};

#[derive(Parser)]
#[command(name = "lgbm", version, about = "Latent graphical block model pipeline")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a ground-truth model and simulate a token corpus from it.
    Simulate(SimulateArgs),
    /// Count windowed co-occurrences over a corpus file.
    Cooc(CoocArgs),
    /// Turn a co-occurrence file into an SPPMI matrix CSV.
    Pmi(PmiArgs),
    /// Recover a code partition from an SPPMI matrix.
    Cluster(ClusterArgs),
    /// Estimate Q, O, Gamma, and Omega from SPPMI plus a partition.
    Estimate(EstimateArgs),
    /// Compare estimates against ground truth and append a metrics row.
    Evaluate(EvaluateArgs),
    /// Run a full scenario config end to end with seeded replicates.
    Bench(BenchArgs),
}

#[derive(Args)]
struct SimulateArgs {
    /// Scenario config JSON.
    #[arg(long)]
    config: PathBuf,
    /// Override the config's master seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Replicate index whose streams to use.
    #[arg(long, default_value_t = 0)]
    replicate: usize,
    /// Output directory for model.json and corpus.txt.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct CoocArgs {
    /// Corpus file: one sequence per line, whitespace-separated 1-based ids.
    #[arg(long)]
    input: PathBuf,
    /// Sparse co-occurrence output file.
    #[arg(long)]
    output: PathBuf,
    /// Window size in positions.
    #[arg(long, default_value_t = 10)]
    window: usize,
    /// Number of codes; inferred from the largest id when omitted.
    #[arg(long)]
    codes: Option<usize>,
}

#[derive(Args)]
struct PmiArgs {
    /// Sparse co-occurrence input file.
    #[arg(long)]
    input: PathBuf,
    /// Dense SPPMI matrix CSV output.
    #[arg(long)]
    output: PathBuf,
    /// Shift/floor threshold.
    #[arg(long, default_value_t = DEFAULT_ETA)]
    eta: f64,
}

#[derive(Args)]
struct ClusterArgs {
    /// Dense SPPMI matrix CSV.
    #[arg(long)]
    input: PathBuf,
    /// Partition CSV output.
    #[arg(long)]
    output: PathBuf,
    /// Fixed threshold; mutually exclusive with --embedding-dim.
    #[arg(long, conflicts_with = "embedding_dim")]
    alpha: Option<f64>,
    /// Tune alpha = c * sqrt(ln d / p) over the multiplier grid.
    #[arg(long)]
    embedding_dim: Option<usize>,
    /// Comma-separated multiplier grid used when tuning.
    #[arg(long, value_delimiter = ',')]
    grid: Option<Vec<f64>>,
    /// Optional CSV trace of the tuning sweep (c, alpha, stability).
    #[arg(long)]
    trace: Option<PathBuf>,
}

#[derive(Args)]
struct EstimateArgs {
    /// Dense SPPMI matrix CSV.
    #[arg(long)]
    sppmi: PathBuf,
    /// Partition CSV.
    #[arg(long)]
    partition: PathBuf,
    /// Output directory for the estimation files.
    #[arg(long)]
    out: PathBuf,
    /// Fixed CLIME lambda; mutually exclusive with --embedding-dim.
    #[arg(long, conflicts_with = "embedding_dim")]
    lambda: Option<f64>,
    /// Tune lambda = c * sqrt(ln d / p) over the multiplier grid.
    #[arg(long)]
    embedding_dim: Option<usize>,
    /// Comma-separated multiplier grid used when tuning.
    #[arg(long, value_delimiter = ',')]
    grid: Option<Vec<f64>>,
    /// Support threshold; defaults to the chosen lambda.
    #[arg(long)]
    tau: Option<f64>,
    /// Floor for the Woodbury diagonal.
    #[arg(long, default_value_t = 1e-8)]
    eps_floor: f64,
    /// Cluster-level covariance construction: averaged | representative.
    #[arg(long, default_value = "averaged")]
    q_mode: String,
}

#[derive(Args)]
struct EvaluateArgs {
    /// Ground-truth partition CSV.
    #[arg(long)]
    true_partition: Option<PathBuf>,
    /// Estimated partition CSV.
    #[arg(long, requires = "true_partition")]
    est_partition: Option<PathBuf>,
    /// Ground-truth matrix CSV (for relative errors).
    #[arg(long)]
    true_matrix: Option<PathBuf>,
    /// Estimated matrix CSV.
    #[arg(long, requires = "true_matrix")]
    est_matrix: Option<PathBuf>,
    /// Ground-truth support CSV (0/1 dense).
    #[arg(long)]
    true_support: Option<PathBuf>,
    /// Estimated support CSV (0/1 dense).
    #[arg(long, requires = "true_support")]
    est_support: Option<PathBuf>,
    /// Metrics CSV to append to (created with a header when missing).
    #[arg(long)]
    output: PathBuf,
    /// Scenario key for the appended row.
    #[arg(long, default_value = "adhoc")]
    scenario: String,
    /// Replicate key for the appended row.
    #[arg(long, default_value_t = 0)]
    replicate: usize,
}

#[derive(Args)]
struct BenchArgs {
    /// Scenario config JSON.
    #[arg(long)]
    config: PathBuf,
    /// Override the config's master seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory for results.csv and manifest.json.
    #[arg(long)]
    out: PathBuf,
    /// Size of the worker pool; defaults to the number of cores.
    #[arg(long)]
    threads: Option<usize>,
}

fn main() -> Result<()> {
    let cli = Cli::parse();
    match cli.command {
        Command::Simulate(args) => cmd_simulate(args),
        Command::Cooc(args) => cmd_cooc(args),
        Command::Pmi(args) => cmd_pmi(args),
        Command::Cluster(args) => cmd_cluster(args),
        Command::Estimate(args) => cmd_estimate(args),
        Command::Evaluate(args) => cmd_evaluate(args),
        Command::Bench(args) => cmd_bench(args),
    }
}

fn cmd_simulate(args: SimulateArgs) -> Result<()> {
    let mut config = ScenarioConfig::from_json_file(&args.config)?;
    if let Some(seed) = args.seed {
        config.seed = seed;
    }
    std::fs::create_dir_all(&args.out)
        .with_context(|| format!("creating {}", args.out.display()))?;

    let spec = config.graph_spec()?;
    let assignment = if config.d % config.k == 0 {
        lgbm::model::Assignment::even(config.d, config.k)?
    } else {
        lgbm::model::Assignment::balanced(config.d, config.k)?
    };
    let mut model_rng = replicate_rng(config.seed, args.replicate, RngStage::Model);
    let graph = spec.generate(config.k, &mut model_rng)?;
    let model = BlockModel::build(graph, assignment, config.gamma.0, config.gamma.1, &mut model_rng)?;
    write_model_json(&args.out.join("model.json"), &model, config.seed)?;

    let mut embed_rng = replicate_rng(config.seed, args.replicate, RngStage::Embeddings);
    let embeddings = model.sample_embeddings(config.p, &mut embed_rng);
    let alpha = default_alpha(config.d, config.p)?;
    let mut corpus_rng = replicate_rng(config.seed, args.replicate, RngStage::Corpus);
    let tokens = simulate_corpus(&embeddings, config.t, alpha, &mut corpus_rng);
    write_sequences(&args.out.join("corpus.txt"), &[tokens])?;
    eprintln!(
        "wrote model.json and corpus.txt ({} tokens) to {}",
        config.t,
        args.out.display()
    );
    Ok(())
}

fn cmd_cooc(args: CoocArgs) -> Result<()> {
    let sequences = read_sequences(&args.input)?;
    let d = match args.codes {
        Some(d) => d,
        None => sequences
            .iter()
            .flat_map(|s| s.iter())
            .map(|&t| t as usize + 1)
            .max()
            .unwrap_or(0),
    };
    if d == 0 {
        bail!("corpus {} contains no tokens; pass --codes", args.input.display());
    }
    let cooc = count_cooccurrences(&sequences, args.window, d)?;
    write_cooc(&args.output, &cooc)?;
    eprintln!(
        "counted {} co-occurrences over {} codes (q = {})",
        cooc.total(),
        d,
        args.window
    );
    Ok(())
}

fn cmd_pmi(args: PmiArgs) -> Result<()> {
    let cooc = read_cooc(&args.input)?;
    let pmi = empirical_pmi(&cooc)?;
    let s = sppmi(&pmi, args.eta)?;
    write_dense_csv(&args.output, &s.values)?;
    eprintln!("wrote {}x{} SPPMI (eta = {})", s.d, s.d, args.eta);
    Ok(())
}

fn load_sppmi(path: &Path) -> Result<SppmiMatrix> {
    let values = read_dense_csv(path)?;
    // Entries are already floored by whatever eta produced the file.
    Ok(SppmiMatrix::from_matrix(values, f64::MIN)?)
}

fn cmd_cluster(args: ClusterArgs) -> Result<()> {
    let s = load_sppmi(&args.input)?;
    let partition = match (args.alpha, args.embedding_dim) {
        (Some(alpha), _) => cod_cluster(&s, alpha)?,
        (None, Some(p)) => {
            let grid = args
                .grid
                .clone()
                .unwrap_or_else(|| (1..=20).map(|i| i as f64 * 0.1).collect());
            let tuned = tune_alpha(&s, p, &grid)?;
            if let Some(trace_path) = &args.trace {
                let mut text = String::from("c,alpha,stability\n");
                for pt in &tuned.trace {
                    text.push_str(&format!("{},{},{}\n", pt.c, pt.alpha, pt.stability));
                }
                std::fs::write(trace_path, text)
                    .with_context(|| format!("writing {}", trace_path.display()))?;
            }
            eprintln!("tuned alpha = {} (c = {})", tuned.alpha, tuned.c);
            tuned.partition
        }
        (None, None) => bail!("pass either --alpha or --embedding-dim"),
    };
    write_partition(&args.output, &partition)?;
    eprintln!(
        "wrote partition with {} clusters over {} codes",
        partition.group_count(),
        partition.d()
    );
    Ok(())
}

fn cmd_estimate(args: EstimateArgs) -> Result<()> {
    let s = load_sppmi(&args.sppmi)?;
    let partition = read_partition(&args.partition)?;
    if partition.d() != s.d {
        bail!(
            "partition covers {} codes but SPPMI has {}",
            partition.d(),
            s.d
        );
    }
    let q_hat = match args.q_mode.as_str() {
        "averaged" => refine_q(&s, &partition)?,
        "representative" => representative_q(&s, &partition)?,
        other => bail!("unknown --q-mode {other:?}; use averaged or representative"),
    };
    let (lambda, o_hat, diagnostics): (f64, _, ClimeDiagnostics) =
        match (args.lambda, args.embedding_dim) {
            (Some(lambda), _) => {
                let (o, diag) = clime(&q_hat, lambda)?;
                (lambda, o, diag)
            }
            (None, Some(p)) => {
                let grid = args
                    .grid
                    .clone()
                    .unwrap_or_else(|| (1..=20).map(|i| i as f64 * 0.1).collect());
                let tuned = tune_lambda(&q_hat, s.d, p, &grid)?;
                eprintln!("tuned lambda = {} (c = {})", tuned.lambda, tuned.c);
                (tuned.lambda, tuned.o_hat, tuned.diagnostics)
            }
            (None, None) => bail!("pass either --lambda or --embedding-dim"),
        };
    let tau = args.tau.unwrap_or(lambda);
    let sup = support(&o_hat, tau)?;
    let gamma_hat = estimate_gamma(&s, &q_hat, &partition)?;
    let omega_hat = estimate_omega(&o_hat, &gamma_hat, &partition, args.eps_floor)?;
    let residuals: Vec<f64> = diagnostics.columns.iter().map(|c| c.residual).collect();
    let objectives: Vec<f64> = diagnostics.columns.iter().map(|c| c.l1).collect();
    let result = EstimationResult {
        partition,
        q_hat,
        o_hat,
        support: sup,
        gamma_hat,
        omega_hat,
        lambda,
        diagnostics,
    };
    let meta = EstimationMeta {
        lambda,
        tau,
        alpha: None,
        seed: None,
        q_mode: args.q_mode.clone(),
        residuals,
        objectives,
    };
    lgbm::precision::write_estimation(&args.out, &result, &meta)?;
    eprintln!("wrote estimation files to {}", args.out.display());
    Ok(())
}

fn load_support(path: &Path) -> Result<SupportMatrix> {
    let m = read_dense_csv(path)?;
    Ok(SupportMatrix::from_threshold(&m, 0.0)?)
}

fn cmd_evaluate(args: EvaluateArgs) -> Result<()> {
    let mut ri = f64::NAN;
    if let (Some(truth), Some(est)) = (&args.true_partition, &args.est_partition) {
        let a: Partition = read_partition(truth)?;
        let b = read_partition(est)?;
        ri = rand_index(&a, &b)?;
    }
    let (mut rel_max, mut rel_frob) = (f64::NAN, f64::NAN);
    if let (Some(truth), Some(est)) = (&args.true_matrix, &args.est_matrix) {
        let a = read_dense_csv(truth)?;
        let b = read_dense_csv(est)?;
        rel_max = relative_error(&b, &a, MatrixNorm::Max)?;
        rel_frob = relative_error(&b, &a, MatrixNorm::Frobenius)?;
    }
    let (mut precision, mut recall, mut f) = (f64::NAN, f64::NAN, f64::NAN);
    if let (Some(truth), Some(est)) = (&args.true_support, &args.est_support) {
        let a = load_support(truth)?;
        let b = load_support(est)?;
        let scored = f_score(&b, &a)?;
        precision = scored.0;
        recall = scored.1;
        f = scored.2;
    }
    if ri.is_nan() && rel_max.is_nan() && precision.is_nan() {
        bail!("nothing to evaluate; pass at least one truth/estimate pair");
    }

    let header = "scenario,replicate,rand_index,rel_err_max,rel_err_frob,precision,recall,f_score";
    let mut body = if args.output.exists() {
        std::fs::read_to_string(&args.output)
            .with_context(|| format!("reading {}", args.output.display()))?
    } else {
        format!("{header}\n")
    };
    body.push_str(&format!(
        "{},{},{},{},{},{},{},{}\n",
        args.scenario, args.replicate, ri, rel_max, rel_frob, precision, recall, f
    ));
    std::fs::write(&args.output, body)
        .with_context(|| format!("writing {}", args.output.display()))?;
    println!("rand_index={ri} rel_err_max={rel_max} rel_err_frob={rel_frob} f_score={f}");
    Ok(())
}

fn cmd_bench(args: BenchArgs) -> Result<()> {
    if let Some(threads) = args.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build_global()
            .context("initializing the worker pool")?;
    }
    let mut config = ScenarioConfig::from_json_file(&args.config)?;
    if let Some(seed) = args.seed {
        config.seed = seed;
    }
    std::fs::create_dir_all(&args.out)
        .with_context(|| format!("creating {}", args.out.display()))?;
    let run = run_scenario(&config)?;
    write_results_csv(&args.out.join("results.csv"), &run)?;
    write_manifest(&args.out.join("manifest.json"), &run.manifest)?;
    eprintln!(
        "scenario {}: {} replicates, mean rand index {}",
        config.scenario,
        run.rows.len(),
        run.mean(|r| r.rand_index)
    );
    if run.failed() {
        for failure in &run.manifest.failures {
            eprintln!("replicate {} failed: {}", failure.replicate, failure.message);
        }
        std::process::exit(1);
    }
    Ok(())
}
