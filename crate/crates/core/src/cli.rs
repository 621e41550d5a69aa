//! Command implementations behind the `llo` binary.
//!
//! Every command is a pure function of its input files, flags, and seed;
//! re-running reproduces outputs byte for byte except for wall-time
//! fields. Each command returns the JSON document it wrote so callers and
//! tests can inspect it directly.

use ndarray::{Array1, Array2};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};
use std::time::Instant;

use crate::classify::{misclassification_risk, roc_auc, Classifier, KnnVote};
use crate::dataio::{self, Dataset, LoadOptions, Scaling};
use crate::error::{Error, Result};
use crate::gradient_field::{estimate_at, estimate_field_at, FieldOptions};
use crate::model_select::{
    select_dimension, select_lambda, CvReport, DIMENSION_FOLDS, LAMBDA_FOLDS,
    LAMBDA_GRID_SIZE,
};
use crate::neighbors::{build_index, PointCloud};
use crate::rng::RandomStream;
use crate::subspace::{aggregate_m, eigen_basis, subspace_distance, SubspaceModel};
use crate::synthetic::{generate, ExampleId, SyntheticSpec};

pub const SCHEMA_VERSION: u32 = 1;

/// Environment variable bounding the rayon worker count.
pub const WORKERS_ENV: &str = "LLO_WORKERS";

const TAG_LAMBDA: u64 = 1;
const TAG_FIELD: u64 = 2;
const TAG_DIM: u64 = 3;
const TAG_CLS: u64 = 4;
const TAG_TRAIN: u64 = 5;
const TAG_TEST: u64 = 6;
const TAG_ORACLE_CLS: u64 = 7;
const TAG_FULL_CLS: u64 = 8;

fn write_json<T: Serialize>(value: &T, out: Option<&Path>) -> Result<String> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    match out {
        Some(path) => std::fs::write(path, &text)?,
        None => print!("{text}"),
    }
    Ok(text)
}

#[derive(Debug, Clone, Serialize)]
pub struct Timing {
    pub total_s: f64,
}

// ---------------------------------------------------------------- simulate

#[derive(Debug, Clone)]
pub struct SimulateConfig {
    pub example: u8,
    pub n: usize,
    pub p: usize,
    pub seed: u64,
    pub out: PathBuf,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct OracleSidecar {
    pub schema_version: u32,
    pub example: u8,
    pub n: usize,
    pub p: usize,
    pub seed: u64,
    pub true_d: usize,
    /// Columns spanning the true central subspace.
    pub basis: Vec<Vec<f64>>,
}

/// Sidecar path: the dataset path with its extension replaced by
/// `oracle.json`.
pub fn oracle_sidecar_path(out: &Path) -> PathBuf {
    out.with_extension("oracle.json")
}

pub fn cmd_simulate(cfg: &SimulateConfig) -> Result<String> {
    let example = ExampleId::from_number(cfg.example)?;
    let (dataset, oracle) = generate(&SyntheticSpec {
        example,
        n: cfg.n,
        p: cfg.p,
        seed: cfg.seed,
    })?;
    dataio::write_csv(&dataset, &cfg.out)?;
    let sidecar = OracleSidecar {
        schema_version: SCHEMA_VERSION,
        example: cfg.example,
        n: cfg.n,
        p: cfg.p,
        seed: cfg.seed,
        true_d: oracle.true_d,
        basis: oracle
            .basis
            .columns()
            .into_iter()
            .map(|c| c.to_vec())
            .collect(),
    };
    write_json(&sidecar, Some(&oracle_sidecar_path(&cfg.out)))
}

// ----------------------------------------------------------------- summary

#[derive(Debug, Clone)]
pub struct SummaryConfig {
    pub data: PathBuf,
    pub load: LoadOptions,
}

#[derive(Debug, Serialize)]
struct SummaryReport {
    schema_version: u32,
    data: String,
    n: usize,
    p: usize,
    class0: usize,
    class1: usize,
    dropped_rows: usize,
}

pub fn cmd_summary(cfg: &SummaryConfig) -> Result<String> {
    let (_, report) = dataio::load_csv(&cfg.data, &cfg.load)?;
    let summary = SummaryReport {
        schema_version: SCHEMA_VERSION,
        data: cfg.data.display().to_string(),
        n: report.n,
        p: report.p,
        class0: report.class0,
        class1: report.class1,
        dropped_rows: report.dropped_rows,
    };
    write_json(&summary, None)
}

// ------------------------------------------------------------------- split

#[derive(Debug, Clone)]
pub struct SplitConfig {
    pub data: PathBuf,
    pub load: LoadOptions,
    pub fraction: f64,
    pub seed: u64,
    pub train_out: PathBuf,
    pub test_out: PathBuf,
}

#[derive(Debug, Serialize)]
struct SplitReport {
    schema_version: u32,
    seed: u64,
    fraction: f64,
    n_train: usize,
    n_test: usize,
}

pub fn cmd_split(cfg: &SplitConfig) -> Result<String> {
    let (dataset, _) = dataio::load_csv(&cfg.data, &cfg.load)?;
    let stream = RandomStream::new(cfg.seed);
    let (train, test) = dataio::split(&dataset, cfg.fraction, &stream)?;
    dataio::write_csv(&train, &cfg.train_out)?;
    dataio::write_csv(&test, &cfg.test_out)?;
    let report = SplitReport {
        schema_version: SCHEMA_VERSION,
        seed: cfg.seed,
        fraction: cfg.fraction,
        n_train: train.n(),
        n_test: test.n(),
    };
    write_json(&report, None)
}

// ------------------------------------------------------------------ reduce

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum LambdaMode {
    /// Select by cross-validation at the mean point.
    Auto,
    Fixed(f64),
}

#[derive(Debug, Clone)]
pub struct ReduceConfig {
    pub data: PathBuf,
    pub load: LoadOptions,
    pub k: Option<usize>,
    pub m: Option<usize>,
    pub lambda: LambdaMode,
    pub folds: usize,
    pub grid_size: usize,
    pub seed: u64,
    pub standardize: bool,
    pub model_out: PathBuf,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct ModelFile {
    pub schema_version: u32,
    pub config: ReduceEcho,
    pub model: SubspaceModel,
    pub used_points: usize,
    pub skipped_points: usize,
    pub lambda: f64,
    pub lambda_cv: Option<CvReport<f64>>,
    pub scaling: Option<Scaling>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ReduceEcho {
    pub data: String,
    pub n: usize,
    pub p: usize,
    pub k: usize,
    pub m: usize,
    pub lambda_mode: String,
    pub folds: usize,
    pub grid_size: usize,
    pub seed: u64,
    pub standardize: bool,
}

/// Default neighborhood size: `floor(sqrt(n))`.
pub fn default_k(n: usize) -> usize {
    (n as f64).sqrt().floor() as usize
}

/// Default number of query points: `ceil(n / 4)`.
pub fn default_m(n: usize) -> usize {
    n.div_ceil(4)
}

pub fn cmd_reduce(cfg: &ReduceConfig) -> Result<String> {
    let (raw, _) = dataio::load_csv(&cfg.data, &cfg.load)?;
    let (dataset, scaling) = if cfg.standardize {
        let (ds, sc) = dataio::standardize(&raw)?;
        (ds, Some(sc))
    } else {
        (raw, None)
    };

    let n = dataset.n();
    let k = cfg.k.unwrap_or_else(|| default_k(n));
    let m = cfg.m.unwrap_or_else(|| default_m(n));
    let stream = RandomStream::new(cfg.seed);

    let (lambda, lambda_cv) = match cfg.lambda {
        LambdaMode::Fixed(l) => (l, None),
        LambdaMode::Auto => {
            let report = select_lambda(
                &dataset,
                k,
                cfg.folds,
                cfg.grid_size,
                &stream.child(TAG_LAMBDA),
            )?;
            (report.chosen, Some(report))
        }
    };

    let index = build_index(&PointCloud::new(dataset.covariates.clone())?)?;
    let draws = stream.child(TAG_FIELD).uniform_choice(n, m)?;
    let field = estimate_field_at(&dataset, &index, &draws, k, lambda, &FieldOptions::default())?;
    let skipped_points = field.iter().filter(|e| e.is_skipped()).count();

    let aggregated = aggregate_m(&field)
        .map_err(|_| Error::Numerical("all estimates skipped or zero".into()))?;
    if aggregated.matrix.iter().all(|&v| v == 0.0) {
        return Err(Error::Numerical("all estimates skipped or zero".into()));
    }
    let model = eigen_basis(&aggregated)?;

    let file = ModelFile {
        schema_version: SCHEMA_VERSION,
        config: ReduceEcho {
            data: cfg.data.display().to_string(),
            n,
            p: dataset.p(),
            k,
            m,
            lambda_mode: match cfg.lambda {
                LambdaMode::Auto => "auto".into(),
                LambdaMode::Fixed(_) => "fixed".into(),
            },
            folds: cfg.folds,
            grid_size: cfg.grid_size,
            seed: cfg.seed,
            standardize: cfg.standardize,
        },
        model,
        used_points: aggregated.used_points,
        skipped_points,
        lambda,
        lambda_cv,
        scaling,
    };
    write_json(&file, Some(&cfg.model_out))
}

pub fn read_model(path: &Path) -> Result<ModelFile> {
    let text = std::fs::read_to_string(path)?;
    Ok(serde_json::from_str(&text)?)
}

// -------------------------------------------------------------- select-dim

#[derive(Debug, Clone)]
pub struct SelectDimConfig {
    pub data: PathBuf,
    pub load: LoadOptions,
    pub model: PathBuf,
    pub folds: usize,
    pub k_vote: usize,
    pub seed: u64,
    pub out: Option<PathBuf>,
}

#[derive(Debug, Serialize)]
struct DimReportFile {
    schema_version: u32,
    data: String,
    model: String,
    folds: usize,
    k_vote: usize,
    seed: u64,
    report: CvReport<usize>,
    timing: Timing,
}

pub fn cmd_select_dim(cfg: &SelectDimConfig) -> Result<String> {
    let start = Instant::now();
    let model_file = read_model(&cfg.model)?;
    let (raw, _) = dataio::load_csv(&cfg.data, &cfg.load)?;
    let dataset = match &model_file.scaling {
        Some(sc) => sc.apply(&raw)?,
        None => raw,
    };
    let stream = RandomStream::new(cfg.seed);
    let knn = KnnVote { k_vote: cfg.k_vote };
    let report = select_dimension(
        &dataset,
        &model_file.model,
        cfg.folds,
        &knn,
        &stream.child(TAG_DIM),
    )?;
    let out = DimReportFile {
        schema_version: SCHEMA_VERSION,
        data: cfg.data.display().to_string(),
        model: cfg.model.display().to_string(),
        folds: cfg.folds,
        k_vote: cfg.k_vote,
        seed: cfg.seed,
        report,
        timing: Timing { total_s: start.elapsed().as_secs_f64() },
    };
    write_json(&out, cfg.out.as_deref())
}

// ---------------------------------------------------------------- evaluate

#[derive(Debug, Clone)]
pub struct EvaluateConfig {
    pub train: PathBuf,
    pub test: PathBuf,
    pub load: LoadOptions,
    pub model: PathBuf,
    pub d: usize,
    pub k_vote: usize,
    pub seed: u64,
    pub out: Option<PathBuf>,
}

#[derive(Debug, Serialize)]
struct EvalReportFile {
    schema_version: u32,
    train: String,
    test: String,
    model: String,
    d: usize,
    k_vote: usize,
    seed: u64,
    metrics: EvalMetrics,
    timing: Timing,
}

#[derive(Debug, Serialize)]
struct EvalMetrics {
    misclassification: f64,
    auc: f64,
    n_train: usize,
    n_test: usize,
}

pub fn cmd_evaluate(cfg: &EvaluateConfig) -> Result<String> {
    let start = Instant::now();
    let model_file = read_model(&cfg.model)?;
    let (train_raw, _) = dataio::load_csv(&cfg.train, &cfg.load)?;
    let (test_raw, _) = dataio::load_csv(&cfg.test, &cfg.load)?;
    let (train, test) = match &model_file.scaling {
        Some(sc) => (sc.apply(&train_raw)?, sc.apply(&test_raw)?),
        None => (train_raw, test_raw),
    };
    let stream = RandomStream::new(cfg.seed);
    let (risk, auc) = projected_knn_metrics(
        &train,
        &test,
        &model_file.model.leading(cfg.d)?,
        cfg.k_vote,
        stream.child(TAG_CLS),
    )?;
    let out = EvalReportFile {
        schema_version: SCHEMA_VERSION,
        train: cfg.train.display().to_string(),
        test: cfg.test.display().to_string(),
        model: cfg.model.display().to_string(),
        d: cfg.d,
        k_vote: cfg.k_vote,
        seed: cfg.seed,
        metrics: EvalMetrics {
            misclassification: risk,
            auc,
            n_train: train.n(),
            n_test: test.n(),
        },
        timing: Timing { total_s: start.elapsed().as_secs_f64() },
    };
    write_json(&out, cfg.out.as_deref())
}

/// Train a kNN vote on the projected train set; return (risk, AUC) on the
/// projected test set.
pub fn projected_knn_metrics(
    train: &Dataset,
    test: &Dataset,
    basis: &Array2<f64>,
    k_vote: usize,
    stream: RandomStream,
) -> Result<(f64, f64)> {
    let train_proj = train.covariates.dot(basis);
    let test_proj = test.covariates.dot(basis);
    let knn = KnnVote { k_vote };
    let fitted = knn.fit(train_proj.view(), &train.labels, stream)?;
    let (predicted, scores) = fitted.predict_all(test_proj.view())?;
    let risk = misclassification_risk(&predicted, &test.labels)?;
    let auc = roc_auc(&scores, &test.labels)?;
    Ok((risk, auc))
}

// ----------------------------------------------------------- bench-figures

#[derive(Debug, Clone)]
pub struct FiguresConfig {
    pub example: u8,
    pub n_grid: Vec<usize>,
    pub p: usize,
    pub reps: usize,
    pub seed: u64,
    pub n_test: usize,
    pub k_vote: usize,
    /// Run the per-replication dimension cross-validation.
    pub cv_dim: bool,
    /// Run the oracle-projection and full-covariate baselines.
    pub baselines: bool,
    pub lambda_folds: usize,
    pub lambda_grid_size: usize,
    pub out: Option<PathBuf>,
    pub csv_out: Option<PathBuf>,
}

impl FiguresConfig {
    pub fn desk_scale(example: u8, n_grid: Vec<usize>, p: usize, reps: usize, seed: u64) -> Self {
        FiguresConfig {
            example,
            n_grid,
            p,
            reps,
            seed,
            n_test: 1000,
            k_vote: crate::classify::DEFAULT_K_VOTE,
            cv_dim: true,
            baselines: true,
            lambda_folds: LAMBDA_FOLDS,
            lambda_grid_size: LAMBDA_GRID_SIZE,
            out: None,
            csv_out: None,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct FigureRecord {
    pub rep: usize,
    pub lambda: f64,
    pub distance_pen: f64,
    pub distance_unpen: f64,
    pub risk_pen_true_d: f64,
    pub risk_unpen_true_d: f64,
    pub cv_d: Option<usize>,
    pub risk_pen_cv_d: Option<f64>,
    pub risk_oracle: Option<f64>,
    pub risk_full: Option<f64>,
    pub skipped_pen: usize,
    pub skipped_unpen: usize,
    pub wall_s: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct FigureSummary {
    pub mean_distance_pen: f64,
    pub se_distance_pen: f64,
    pub mean_distance_unpen: f64,
    pub se_distance_unpen: f64,
    pub mean_risk_pen_true_d: f64,
    pub mean_risk_unpen_true_d: f64,
    pub mean_risk_pen_cv_d: Option<f64>,
    pub mean_risk_oracle: Option<f64>,
    pub mean_risk_full: Option<f64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct SizeBlock {
    pub n: usize,
    pub k: usize,
    pub m: usize,
    pub records: Vec<FigureRecord>,
    pub summary: FigureSummary,
}

#[derive(Debug, Serialize)]
pub struct ExperimentReport {
    pub schema_version: u32,
    pub example: u8,
    pub p: usize,
    pub n_grid: Vec<usize>,
    pub reps: usize,
    pub seed: u64,
    pub n_test: usize,
    pub k_vote: usize,
    pub cv_dim: bool,
    pub baselines: bool,
    pub per_n: Vec<SizeBlock>,
    pub timing: Timing,
}

fn mean(values: impl Iterator<Item = f64> + Clone) -> f64 {
    let n = values.clone().count();
    values.sum::<f64>() / n as f64
}

fn standard_error(values: &[f64]) -> f64 {
    if values.len() < 2 {
        return 0.0;
    }
    let m = values.iter().sum::<f64>() / values.len() as f64;
    let var = values.iter().map(|v| (v - m) * (v - m)).sum::<f64>()
        / (values.len() as f64 - 1.0);
    (var / values.len() as f64).sqrt()
}

fn figures_rep(
    cfg: &FiguresConfig,
    example: ExampleId,
    n: usize,
    k: usize,
    m: usize,
    rep: usize,
    rep_stream: &RandomStream,
) -> Result<FigureRecord> {
    let rep_start = Instant::now();
    let (train, oracle) = generate(&SyntheticSpec {
        example,
        n,
        p: cfg.p,
        seed: rep_stream.child(TAG_TRAIN).derive_seed(),
    })?;
    let (test, _) = generate(&SyntheticSpec {
        example,
        n: cfg.n_test,
        p: cfg.p,
        seed: rep_stream.child(TAG_TEST).derive_seed(),
    })?;

    let lambda = select_lambda(
        &train,
        k,
        cfg.lambda_folds,
        cfg.lambda_grid_size,
        &rep_stream.child(TAG_LAMBDA),
    )?
    .chosen;

    let index = build_index(&PointCloud::new(train.covariates.clone())?)?;
    let draws = rep_stream.child(TAG_FIELD).uniform_choice(n, m)?;
    let opts = FieldOptions::default();
    let field_pen = estimate_field_at(&train, &index, &draws, k, lambda, &opts)?;
    let field_unpen = estimate_field_at(&train, &index, &draws, k, 0.0, &opts)?;
    let skipped_pen = field_pen.iter().filter(|e| e.is_skipped()).count();
    let skipped_unpen = field_unpen.iter().filter(|e| e.is_skipped()).count();

    let model_pen = eigen_basis(&aggregate_m(&field_pen)?)?;
    let model_unpen = eigen_basis(&aggregate_m(&field_unpen)?)?;
    let true_d = oracle.true_d;
    let distance_pen =
        subspace_distance(model_pen.leading(true_d)?.view(), oracle.basis.view())?;
    let distance_unpen =
        subspace_distance(model_unpen.leading(true_d)?.view(), oracle.basis.view())?;

    let (risk_pen_true_d, _) = projected_knn_metrics(
        &train,
        &test,
        &model_pen.leading(true_d)?,
        cfg.k_vote,
        rep_stream.child(TAG_CLS).child(0),
    )?;
    let (risk_unpen_true_d, _) = projected_knn_metrics(
        &train,
        &test,
        &model_unpen.leading(true_d)?,
        cfg.k_vote,
        rep_stream.child(TAG_CLS).child(1),
    )?;

    let (cv_d, risk_pen_cv_d) = if cfg.cv_dim {
        let dim_report = select_dimension(
            &train,
            &model_pen,
            DIMENSION_FOLDS,
            &KnnVote { k_vote: cfg.k_vote },
            &rep_stream.child(TAG_DIM),
        )?;
        let d = dim_report.chosen;
        let (risk, _) = projected_knn_metrics(
            &train,
            &test,
            &model_pen.leading(d)?,
            cfg.k_vote,
            rep_stream.child(TAG_CLS).child(2),
        )?;
        (Some(d), Some(risk))
    } else {
        (None, None)
    };

    let (risk_oracle, risk_full) = if cfg.baselines {
        let (oracle_risk, _) = projected_knn_metrics(
            &train,
            &test,
            &oracle.basis,
            cfg.k_vote,
            rep_stream.child(TAG_ORACLE_CLS),
        )?;
        let identity = Array2::eye(cfg.p);
        let (full_risk, _) = projected_knn_metrics(
            &train,
            &test,
            &identity,
            cfg.k_vote,
            rep_stream.child(TAG_FULL_CLS),
        )?;
        (Some(oracle_risk), Some(full_risk))
    } else {
        (None, None)
    };

    Ok(FigureRecord {
        rep,
        lambda,
        distance_pen,
        distance_unpen,
        risk_pen_true_d,
        risk_unpen_true_d,
        cv_d,
        risk_pen_cv_d,
        risk_oracle,
        risk_full,
        skipped_pen,
        skipped_unpen,
        wall_s: rep_start.elapsed().as_secs_f64(),
    })
}

pub fn run_bench_figures(cfg: &FiguresConfig) -> Result<ExperimentReport> {
    let start = Instant::now();
    let example = ExampleId::from_number(cfg.example)?;
    if cfg.reps == 0 {
        return Err(Error::InvalidArgument("reps must be positive".into()));
    }
    if cfg.n_grid.is_empty() {
        return Err(Error::InvalidArgument("n_grid must be nonempty".into()));
    }
    let master = RandomStream::new(cfg.seed);

    let mut per_n = Vec::with_capacity(cfg.n_grid.len());
    for (ni, &n) in cfg.n_grid.iter().enumerate() {
        let k = default_k(n);
        let m = default_m(n);
        let size_stream = master.child(ni as u64);
        let records: Vec<FigureRecord> = (0..cfg.reps)
            .into_par_iter()
            .map(|rep| {
                figures_rep(cfg, example, n, k, m, rep, &size_stream.child(rep as u64))
            })
            .collect::<Result<_>>()?;

        let dist_pen: Vec<f64> = records.iter().map(|r| r.distance_pen).collect();
        let dist_unpen: Vec<f64> = records.iter().map(|r| r.distance_unpen).collect();
        let summary = FigureSummary {
            mean_distance_pen: mean(dist_pen.iter().copied()),
            se_distance_pen: standard_error(&dist_pen),
            mean_distance_unpen: mean(dist_unpen.iter().copied()),
            se_distance_unpen: standard_error(&dist_unpen),
            mean_risk_pen_true_d: mean(records.iter().map(|r| r.risk_pen_true_d)),
            mean_risk_unpen_true_d: mean(records.iter().map(|r| r.risk_unpen_true_d)),
            mean_risk_pen_cv_d: cfg
                .cv_dim
                .then(|| mean(records.iter().map(|r| r.risk_pen_cv_d.unwrap_or(0.0)))),
            mean_risk_oracle: cfg
                .baselines
                .then(|| mean(records.iter().map(|r| r.risk_oracle.unwrap_or(0.0)))),
            mean_risk_full: cfg
                .baselines
                .then(|| mean(records.iter().map(|r| r.risk_full.unwrap_or(0.0)))),
        };
        per_n.push(SizeBlock { n, k, m, records, summary });
    }

    Ok(ExperimentReport {
        schema_version: SCHEMA_VERSION,
        example: cfg.example,
        p: cfg.p,
        n_grid: cfg.n_grid.clone(),
        reps: cfg.reps,
        seed: cfg.seed,
        n_test: cfg.n_test,
        k_vote: cfg.k_vote,
        cv_dim: cfg.cv_dim,
        baselines: cfg.baselines,
        per_n,
        timing: Timing { total_s: start.elapsed().as_secs_f64() },
    })
}

pub fn cmd_bench_figures(cfg: &FiguresConfig) -> Result<String> {
    let report = run_bench_figures(cfg)?;
    if let Some(csv_path) = &cfg.csv_out {
        write_figures_csv(&report, csv_path)?;
    }
    write_json(&report, cfg.out.as_deref())
}

fn write_figures_csv(report: &ExperimentReport, path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record([
        "n",
        "rep",
        "lambda",
        "distance_pen",
        "distance_unpen",
        "risk_pen_true_d",
        "risk_unpen_true_d",
        "cv_d",
        "risk_pen_cv_d",
        "risk_oracle",
        "risk_full",
    ])?;
    let fmt_opt = |v: Option<f64>| v.map(|x| format!("{x}")).unwrap_or_default();
    for block in &report.per_n {
        for r in &block.records {
            w.write_record([
                block.n.to_string(),
                r.rep.to_string(),
                format!("{}", r.lambda),
                format!("{}", r.distance_pen),
                format!("{}", r.distance_unpen),
                format!("{}", r.risk_pen_true_d),
                format!("{}", r.risk_unpen_true_d),
                r.cv_d.map(|d| d.to_string()).unwrap_or_default(),
                fmt_opt(r.risk_pen_cv_d),
                fmt_opt(r.risk_oracle),
                fmt_opt(r.risk_full),
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}

// -------------------------------------------------------------- bench-rate

#[derive(Debug, Clone)]
pub struct RateConfig {
    pub p: usize,
    pub n_grid: Vec<usize>,
    pub reps: usize,
    pub seed: u64,
    pub lambda: f64,
    pub out: Option<PathBuf>,
    pub csv_out: Option<PathBuf>,
}

#[derive(Debug, Clone, Serialize)]
pub struct RatePoint {
    pub n: usize,
    /// Neighborhood size `ceil(n^(4/(p+4)))`.
    pub k: usize,
    pub mean_error: f64,
    pub reps_used: usize,
}

#[derive(Debug, Serialize)]
pub struct RateReport {
    pub schema_version: u32,
    pub p: usize,
    pub n_grid: Vec<usize>,
    pub reps: usize,
    pub seed: u64,
    pub lambda: f64,
    pub points: Vec<RatePoint>,
    /// Log-log slope of mean gradient error against n.
    pub slope: f64,
    pub timing: Timing,
}

/// Rate-optimal neighborhood size for gradient estimation.
pub fn rate_k(n: usize, p: usize) -> usize {
    (n as f64).powf(4.0 / (p as f64 + 4.0)).ceil() as usize
}

pub fn run_bench_rate(cfg: &RateConfig) -> Result<RateReport> {
    let start = Instant::now();
    if cfg.reps == 0 {
        return Err(Error::InvalidArgument("reps must be positive".into()));
    }
    if cfg.n_grid.len() < 2 {
        return Err(Error::InvalidArgument(
            "n_grid needs at least two sizes to fit a slope".into(),
        ));
    }
    let master = RandomStream::new(cfg.seed);

    let mut points = Vec::with_capacity(cfg.n_grid.len());
    for (ni, &n) in cfg.n_grid.iter().enumerate() {
        let k = rate_k(n, cfg.p).min(n);
        let size_stream = master.child(ni as u64);
        let errors: Vec<Option<f64>> = (0..cfg.reps)
            .into_par_iter()
            .map(|rep| -> Result<Option<f64>> {
                let rep_stream = size_stream.child(rep as u64);
                let (data, oracle) = generate(&SyntheticSpec {
                    example: ExampleId::One,
                    n,
                    p: cfg.p,
                    seed: rep_stream.child(TAG_TRAIN).derive_seed(),
                })?;
                let index = build_index(&PointCloud::new(data.covariates.clone())?)?;
                let origin = Array1::zeros(cfg.p);
                let est = estimate_at(&data, &index, origin.view(), k, cfg.lambda)?;
                let truth = oracle.logit_gradient.expect("example 1 has a closed form");
                Ok(est.value().map(|v| {
                    let diff = &v.gradient - &truth;
                    diff.dot(&diff).sqrt()
                }))
            })
            .collect::<Result<_>>()?;
        let used: Vec<f64> = errors.iter().filter_map(|e| *e).collect();
        if used.is_empty() {
            return Err(Error::Numerical(format!(
                "every replication at n = {n} was skipped"
            )));
        }
        points.push(RatePoint {
            n,
            k,
            mean_error: used.iter().sum::<f64>() / used.len() as f64,
            reps_used: used.len(),
        });
    }

    // Least-squares slope in log-log coordinates.
    let xs: Vec<f64> = points.iter().map(|p| (p.n as f64).ln()).collect();
    let ys: Vec<f64> = points.iter().map(|p| p.mean_error.ln()).collect();
    let xbar = xs.iter().sum::<f64>() / xs.len() as f64;
    let ybar = ys.iter().sum::<f64>() / ys.len() as f64;
    let sxx: f64 = xs.iter().map(|x| (x - xbar) * (x - xbar)).sum();
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - xbar) * (y - ybar)).sum();
    let slope = sxy / sxx;

    Ok(RateReport {
        schema_version: SCHEMA_VERSION,
        p: cfg.p,
        n_grid: cfg.n_grid.clone(),
        reps: cfg.reps,
        seed: cfg.seed,
        lambda: cfg.lambda,
        points,
        slope,
        timing: Timing { total_s: start.elapsed().as_secs_f64() },
    })
}

pub fn cmd_bench_rate(cfg: &RateConfig) -> Result<String> {
    let report = run_bench_rate(cfg)?;
    if let Some(csv_path) = &cfg.csv_out {
        let mut w = csv::Writer::from_path(csv_path)?;
        w.write_record(["n", "k", "mean_error", "reps_used"])?;
        for p in &report.points {
            w.write_record([
                p.n.to_string(),
                p.k.to_string(),
                format!("{}", p.mean_error),
                p.reps_used.to_string(),
            ])?;
        }
        w.flush()?;
    }
    write_json(&report, cfg.out.as_deref())
}

/// Build the global worker pool from the `LLO_WORKERS` environment
/// variable, when set. Harmless to call more than once.
pub fn init_workers() {
    if let Ok(raw) = std::env::var(WORKERS_ENV) {
        if let Ok(workers) = raw.parse::<usize>() {
            if workers > 0 {
                let _ = rayon::ThreadPoolBuilder::new()
                    .num_threads(workers)
                    .build_global();
            }
        }
    }
}
