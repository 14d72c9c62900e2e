//! End-to-end scenario runner with seeded reproducibility.
//!
//! A scenario JSON config fully determines the run: every replicate derives
//! its random streams from the master seed and its replicate index (stream
//! id = `replicate * 8 + stage`), so growing `replicates` leaves earlier
//! rows unchanged and replaying a manifest reproduces the results exactly.
//! Wall-clock timings are the one exception: they are measured, not derived.

use std::collections::BTreeMap;
use std::io::{BufWriter, Write};
use std::path::Path;
use std::time::Instant;

use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cluster::{self, Partition};
use crate::cooc::count_cooccurrences;
use crate::corpus::{default_alpha, simulate_corpus};
use crate::error::{Error, Result};
use crate::metrics::{f_score, rand_index, relative_error, MatrixNorm, SupportMatrix};
use crate::model::{Assignment, BlockModel, PrecisionGraph};
use crate::pmi::{empirical_pmi, sppmi, DEFAULT_ETA};
use crate::precision::{estimate_gamma, estimate_omega, refine_q, support, tune_lambda};

/// Graph family generating the cluster-level precision matrix.
#[derive(Debug, Clone, Copy, Serialize, Deserialize, PartialEq)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum GraphSpec {
    Independent { c: f64 },
    ErdosRenyi { prob: f64, c: f64, c1: f64 },
}

impl GraphSpec {
    /// The six graph settings of the benchmark table.
    pub fn from_scenario_id(id: &str) -> Option<GraphSpec> {
        match id {
            "G1" => Some(GraphSpec::Independent { c: 0.5 }),
            "G2" => Some(GraphSpec::Independent { c: 2.0 }),
            "G3" => Some(GraphSpec::ErdosRenyi {
                prob: 0.2,
                c: 0.3,
                c1: 0.2,
            }),
            "G4" => Some(GraphSpec::ErdosRenyi {
                prob: 0.2,
                c: 0.5,
                c1: 0.3,
            }),
            "G5" => Some(GraphSpec::ErdosRenyi {
                prob: 0.05,
                c: 0.3,
                c1: 0.2,
            }),
            "G6" => Some(GraphSpec::ErdosRenyi {
                prob: 0.05,
                c: 0.5,
                c1: 0.3,
            }),
            _ => None,
        }
    }

    pub fn generate<R: rand::Rng + ?Sized>(&self, k: usize, rng: &mut R) -> Result<PrecisionGraph> {
        match *self {
            GraphSpec::Independent { c } => PrecisionGraph::independent(k, c),
            GraphSpec::ErdosRenyi { prob, c, c1 } => {
                PrecisionGraph::erdos_renyi(k, prob, c, c1, rng)
            }
        }
    }
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize, PartialEq, Eq, Default)]
#[serde(rename_all = "snake_case")]
pub enum ClusteringMode {
    #[default]
    Tuned,
    Oracle,
}

fn default_window() -> usize {
    10
}

fn default_eta() -> f64 {
    DEFAULT_ETA
}

fn default_grid() -> Vec<f64> {
    (1..=20).map(|i| i as f64 * 0.1).collect()
}

fn default_eps_floor() -> f64 {
    1e-8
}

fn default_gamma_range() -> (f64, f64) {
    (0.25, 0.5)
}

/// Everything needed to reproduce one scenario.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    /// "G1".."G6", or any other id when `graph` is given explicitly.
    pub scenario: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub graph: Option<GraphSpec>,
    pub d: usize,
    pub p: usize,
    pub k: usize,
    /// Corpus length.
    pub t: usize,
    #[serde(default = "default_window")]
    pub q: usize,
    pub replicates: usize,
    pub seed: u64,
    #[serde(default = "default_eta")]
    pub eta: f64,
    #[serde(default = "default_grid")]
    pub alpha_grid: Vec<f64>,
    #[serde(default = "default_grid")]
    pub lambda_grid: Vec<f64>,
    #[serde(default = "default_eps_floor")]
    pub eps_floor: f64,
    /// Support threshold; defaults to the tuned lambda when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tau: Option<f64>,
    #[serde(default)]
    pub clustering: ClusteringMode,
    /// Uniform range for the idiosyncratic variances.
    #[serde(default = "default_gamma_range")]
    pub gamma: (f64, f64),
}

impl ScenarioConfig {
    pub fn graph_spec(&self) -> Result<GraphSpec> {
        if let Some(spec) = self.graph {
            return Ok(spec);
        }
        GraphSpec::from_scenario_id(&self.scenario).ok_or_else(|| {
            Error::invalid(format!(
                "scenario {:?} is not one of G1..G6 and no explicit graph was given",
                self.scenario
            ))
        })
    }

    pub fn validate(&self) -> Result<()> {
        if self.d == 0 || self.p == 0 || self.k == 0 || self.t == 0 {
            return Err(Error::invalid("d, p, K, and T must all be positive"));
        }
        if self.k > self.d {
            return Err(Error::invalid(format!(
                "K = {} exceeds d = {}",
                self.k, self.d
            )));
        }
        if self.q == 0 {
            return Err(Error::invalid("window q must be >= 1"));
        }
        if self.alpha_grid.is_empty() || self.lambda_grid.is_empty() {
            return Err(Error::invalid("tuning grids must be nonempty"));
        }
        if !(self.eps_floor > 0.0) {
            return Err(Error::invalid("eps_floor must be > 0"));
        }
        if !(0.0 <= self.gamma.0 && self.gamma.0 <= self.gamma.1) {
            return Err(Error::invalid("gamma range must satisfy 0 <= low <= high"));
        }
        self.graph_spec()?;
        default_alpha(self.d, self.p)?;
        Ok(())
    }

    pub fn from_json_file(path: &Path) -> Result<ScenarioConfig> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let config: ScenarioConfig = serde_json::from_str(&text)
            .map_err(|e| Error::parse(path, e.line(), e.to_string()))?;
        config.validate()?;
        Ok(config)
    }
}

/// RNG stages carved out of each replicate's stream space.
#[derive(Debug, Clone, Copy)]
pub enum RngStage {
    Model = 0,
    Embeddings = 1,
    Corpus = 2,
}

const STREAMS_PER_REPLICATE: u64 = 8;

/// Independent ChaCha stream for (seed, replicate, stage).
pub fn replicate_rng(seed: u64, replicate: usize, stage: RngStage) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(replicate as u64 * STREAMS_PER_REPLICATE + stage as u64);
    rng
}

/// One results-table row; metric fields are NaN when undefined (failed
/// replicate, or precision metrics under a mismatched tuned partition).
#[derive(Debug, Clone)]
pub struct ReplicateRow {
    pub scenario: String,
    pub replicate: usize,
    pub d: usize,
    pub p: usize,
    pub k: usize,
    pub t: usize,
    pub alpha: f64,
    pub lambda: f64,
    pub rand_index: f64,
    pub rel_err_max: f64,
    pub rel_err_frob: f64,
    pub precision: f64,
    pub recall: f64,
    pub f_score: f64,
    pub wall_ms: u64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ReplicateFailure {
    pub replicate: usize,
    pub message: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ReplicateStreams {
    pub replicate: usize,
    pub model: u64,
    pub embeddings: u64,
    pub corpus: u64,
}

/// Reproducibility manifest: config echo, stream layout, software version,
/// and measured stage timings (the only non-deterministic content).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunManifest {
    pub version: String,
    pub config: ScenarioConfig,
    pub replicate_streams: Vec<ReplicateStreams>,
    pub timings_ms: BTreeMap<String, u64>,
    pub failures: Vec<ReplicateFailure>,
}

/// Full outcome of a scenario run.
#[derive(Debug, Clone)]
pub struct ScenarioRun {
    pub rows: Vec<ReplicateRow>,
    pub manifest: RunManifest,
}

impl ScenarioRun {
    pub fn failed(&self) -> bool {
        !self.manifest.failures.is_empty()
    }

    /// NaN-aware column mean over replicate rows.
    pub fn mean(&self, field: impl Fn(&ReplicateRow) -> f64) -> f64 {
        nan_aware_mean(self.rows.iter().map(&field))
    }

    /// NaN-aware column median over replicate rows.
    pub fn median(&self, field: impl Fn(&ReplicateRow) -> f64) -> f64 {
        nan_aware_median(self.rows.iter().map(&field))
    }
}

fn nan_aware_mean(values: impl Iterator<Item = f64>) -> f64 {
    let kept: Vec<f64> = values.filter(|v| !v.is_nan()).collect();
    if kept.is_empty() {
        f64::NAN
    } else {
        kept.iter().sum::<f64>() / kept.len() as f64
    }
}

fn nan_aware_median(values: impl Iterator<Item = f64>) -> f64 {
    let mut kept: Vec<f64> = values.filter(|v| !v.is_nan()).collect();
    if kept.is_empty() {
        return f64::NAN;
    }
    kept.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = kept.len();
    if n % 2 == 1 {
        kept[n / 2]
    } else {
        0.5 * (kept[n / 2 - 1] + kept[n / 2])
    }
}

struct StageTimer {
    timings: BTreeMap<String, u64>,
}

impl StageTimer {
    fn new() -> Self {
        StageTimer {
            timings: BTreeMap::new(),
        }
    }

    fn time<T>(&mut self, stage: &str, f: impl FnOnce() -> T) -> T {
        let start = Instant::now();
        let out = f();
        *self.timings.entry(stage.to_string()).or_insert(0) += start.elapsed().as_millis() as u64;
        out
    }

    fn merge(&mut self, other: BTreeMap<String, u64>) {
        for (k, v) in other {
            *self.timings.entry(k).or_insert(0) += v;
        }
    }
}

struct ReplicateOutcome {
    row: ReplicateRow,
    timings: BTreeMap<String, u64>,
    error: Option<String>,
}

/// Run every replicate of a scenario (in parallel; results ordered by
/// replicate index) and aggregate the manifest.
pub fn run_scenario(config: &ScenarioConfig) -> Result<ScenarioRun> {
    config.validate()?;
    let outcomes: Vec<ReplicateOutcome> = (0..config.replicates)
        .into_par_iter()
        .map(|rep| run_replicate(config, rep))
        .collect();

    let mut timer = StageTimer::new();
    let mut rows = Vec::with_capacity(outcomes.len());
    let mut failures = Vec::new();
    for outcome in outcomes {
        if let Some(message) = outcome.error {
            failures.push(ReplicateFailure {
                replicate: outcome.row.replicate,
                message,
            });
        }
        timer.merge(outcome.timings);
        rows.push(outcome.row);
    }
    let replicate_streams = (0..config.replicates)
        .map(|rep| ReplicateStreams {
            replicate: rep,
            model: rep as u64 * STREAMS_PER_REPLICATE + RngStage::Model as u64,
            embeddings: rep as u64 * STREAMS_PER_REPLICATE + RngStage::Embeddings as u64,
            corpus: rep as u64 * STREAMS_PER_REPLICATE + RngStage::Corpus as u64,
        })
        .collect();
    Ok(ScenarioRun {
        rows,
        manifest: RunManifest {
            version: env!("CARGO_PKG_VERSION").to_string(),
            config: config.clone(),
            replicate_streams,
            timings_ms: timer.timings,
            failures,
        },
    })
}

fn nan_row(config: &ScenarioConfig, replicate: usize, wall_ms: u64) -> ReplicateRow {
    ReplicateRow {
        scenario: config.scenario.clone(),
        replicate,
        d: config.d,
        p: config.p,
        k: config.k,
        t: config.t,
        alpha: f64::NAN,
        lambda: f64::NAN,
        rand_index: f64::NAN,
        rel_err_max: f64::NAN,
        rel_err_frob: f64::NAN,
        precision: f64::NAN,
        recall: f64::NAN,
        f_score: f64::NAN,
        wall_ms,
    }
}

fn run_replicate(config: &ScenarioConfig, replicate: usize) -> ReplicateOutcome {
    let started = Instant::now();
    let mut timer = StageTimer::new();
    match run_replicate_inner(config, replicate, &mut timer) {
        Ok(mut row) => {
            row.wall_ms = started.elapsed().as_millis() as u64;
            ReplicateOutcome {
                row,
                timings: timer.timings,
                error: None,
            }
        }
        Err(err) => ReplicateOutcome {
            row: nan_row(config, replicate, started.elapsed().as_millis() as u64),
            timings: timer.timings,
            error: Some(err.to_string()),
        },
    }
}

fn run_replicate_inner(
    config: &ScenarioConfig,
    replicate: usize,
    timer: &mut StageTimer,
) -> Result<ReplicateRow> {
    let spec = config.graph_spec()?;
    let assignment = if config.d % config.k == 0 {
        Assignment::even(config.d, config.k)?
    } else {
        Assignment::balanced(config.d, config.k)?
    };

    let model = timer.time("model", || -> Result<BlockModel> {
        let mut rng = replicate_rng(config.seed, replicate, RngStage::Model);
        let graph = spec.generate(config.k, &mut rng)?;
        BlockModel::build(graph, assignment, config.gamma.0, config.gamma.1, &mut rng)
    })?;

    let embeddings = timer.time("embeddings", || {
        let mut rng = replicate_rng(config.seed, replicate, RngStage::Embeddings);
        model.sample_embeddings(config.p, &mut rng)
    });

    let discourse_alpha = default_alpha(config.d, config.p)?;
    let tokens = timer.time("corpus", || {
        let mut rng = replicate_rng(config.seed, replicate, RngStage::Corpus);
        simulate_corpus(&embeddings, config.t, discourse_alpha, &mut rng)
    });

    let cooc = timer.time("cooc", || {
        count_cooccurrences(std::slice::from_ref(&tokens), config.q, config.d)
    })?;
    let s = timer.time("pmi", || -> Result<_> {
        let pmi = empirical_pmi(&cooc)?;
        sppmi(&pmi, config.eta)
    })?;

    let truth = Partition::from_assignment(&model.assignment);
    let (partition, cod_alpha) = timer.time("cluster", || -> Result<(Partition, f64)> {
        match config.clustering {
            ClusteringMode::Oracle => Ok((truth.clone(), f64::NAN)),
            ClusteringMode::Tuned => {
                let tuned = cluster::tune_alpha(&s, config.p, &config.alpha_grid)?;
                Ok((tuned.partition, tuned.alpha))
            }
        }
    })?;

    let (lambda, o_hat) = timer.time("estimate", || -> Result<(f64, DMatrix<f64>)> {
        let q_hat = refine_q(&s, &partition)?;
        let tuned = tune_lambda(&q_hat, config.d, config.p, &config.lambda_grid)?;
        let gamma_hat = estimate_gamma(&s, &q_hat, &partition)?;
        // Omega is part of the pipeline contract even though the metrics
        // below only consume the cluster-level estimate.
        let _omega = estimate_omega(&tuned.o_hat, &gamma_hat, &partition, config.eps_floor)?;
        Ok((tuned.lambda, tuned.o_hat))
    })?;

    timer.time("metrics", || -> Result<ReplicateRow> {
        let ri = rand_index(&truth, &partition)?;
        let matched = partition.same_grouping(&truth);
        let (rel_max, rel_frob, precision, recall, f) = if matched {
            // Reindex the recovered clusters to the true cluster order.
            let groups_of_truth: Vec<usize> = {
                let mut first_member = vec![0usize; truth.group_count()];
                for i in (0..truth.d()).rev() {
                    first_member[truth.label_of(i)] = i;
                }
                first_member
                    .iter()
                    .map(|&i| partition.label_of(i))
                    .collect()
            };
            let k = truth.group_count();
            let o_cmp = DMatrix::from_fn(k, k, |a, b| {
                o_hat[(groups_of_truth[a], groups_of_truth[b])]
            });
            let o_true = &model.graph.o;
            let tau = config.tau.unwrap_or(lambda);
            let sup_hat = support(&o_cmp, tau)?;
            let sup_true = SupportMatrix::from_threshold(o_true, 0.0)?;
            let (pr, rc, f) = f_score(&sup_hat, &sup_true)?;
            (
                relative_error(&o_cmp, o_true, MatrixNorm::Max)?,
                relative_error(&o_cmp, o_true, MatrixNorm::Frobenius)?,
                pr,
                rc,
                f,
            )
        } else {
            (f64::NAN, f64::NAN, f64::NAN, f64::NAN, f64::NAN)
        };
        Ok(ReplicateRow {
            scenario: config.scenario.clone(),
            replicate,
            d: config.d,
            p: config.p,
            k: config.k,
            t: config.t,
            alpha: cod_alpha,
            lambda,
            rand_index: ri,
            rel_err_max: rel_max,
            rel_err_frob: rel_frob,
            precision,
            recall,
            f_score: f,
            wall_ms: 0,
        })
    })
}

pub const RESULTS_HEADER: &str = "scenario,replicate,d,p,K,T,alpha,lambda,rand_index,\
rel_err_max,rel_err_frob,precision,recall,f_score,wall_ms";

fn write_row(w: &mut impl Write, path: &Path, row: &ReplicateRow, replicate: &str) -> Result<()> {
    writeln!(
        w,
        "{},{},{},{},{},{},{},{},{},{},{},{},{},{},{}",
        row.scenario,
        replicate,
        row.d,
        row.p,
        row.k,
        row.t,
        row.alpha,
        row.lambda,
        row.rand_index,
        row.rel_err_max,
        row.rel_err_frob,
        row.precision,
        row.recall,
        row.f_score,
        row.wall_ms,
    )
    .map_err(|e| Error::io(path, e))
}

/// Write the results CSV: one row per replicate plus `mean` and `median`
/// aggregate rows (when any replicate ran).
pub fn write_results_csv(path: &Path, run: &ScenarioRun) -> Result<()> {
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    writeln!(w, "{RESULTS_HEADER}").map_err(|e| Error::io(path, e))?;
    for row in &run.rows {
        write_row(&mut w, path, row, &row.replicate.to_string())?;
    }
    if !run.rows.is_empty() {
        for (name, agg) in [
            ("mean", aggregate_row(run, nan_aware_mean)),
            ("median", aggregate_row(run, nan_aware_median)),
        ] {
            write_row(&mut w, path, &agg, name)?;
        }
    }
    w.flush().map_err(|e| Error::io(path, e))
}

fn aggregate_row(
    run: &ScenarioRun,
    combine: impl Fn(std::vec::IntoIter<f64>) -> f64,
) -> ReplicateRow {
    let config = &run.manifest.config;
    let collect = |field: fn(&ReplicateRow) -> f64| -> f64 {
        combine(
            run.rows
                .iter()
                .map(field)
                .collect::<Vec<_>>()
                .into_iter(),
        )
    };
    ReplicateRow {
        scenario: config.scenario.clone(),
        replicate: 0,
        d: config.d,
        p: config.p,
        k: config.k,
        t: config.t,
        alpha: collect(|r| r.alpha),
        lambda: collect(|r| r.lambda),
        rand_index: collect(|r| r.rand_index),
        rel_err_max: collect(|r| r.rel_err_max),
        rel_err_frob: collect(|r| r.rel_err_frob),
        precision: collect(|r| r.precision),
        recall: collect(|r| r.recall),
        f_score: collect(|r| r.f_score),
        wall_ms: collect(|r| r.wall_ms as f64).round() as u64,
    }
}

pub fn write_manifest(path: &Path, manifest: &RunManifest) -> Result<()> {
    let json = serde_json::to_string_pretty(manifest)
        .map_err(|e| Error::NumericalFailure(format!("manifest serialization failed: {e}")))?;
    std::fs::write(path, json).map_err(|e| Error::io(path, e))
}

pub fn read_manifest(path: &Path) -> Result<RunManifest> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::parse(path, e.line(), e.to_string()))
}
