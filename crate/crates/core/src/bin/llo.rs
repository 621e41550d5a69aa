//! Command-line front end for the dimension-reduction pipeline.

use clap::{Args, Parser, Subcommand};
use std::path::PathBuf;

use llo_core::cli::{
    cmd_bench_figures, cmd_bench_rate, cmd_evaluate, cmd_reduce, cmd_select_dim,
    cmd_simulate, cmd_split, cmd_summary, init_workers, EvaluateConfig, FiguresConfig,
    LambdaMode, RateConfig, ReduceConfig, SelectDimConfig, SimulateConfig, SplitConfig,
    SummaryConfig,
};
use llo_core::dataio::{ColumnSpec, LoadOptions};
use llo_core::error::Error;
use llo_core::model_select::{DIMENSION_FOLDS, LAMBDA_FOLDS, LAMBDA_GRID_SIZE};

#[derive(Parser)]
#[command(
    name = "llo",
    version,
    about = "Local logistic gradients: dimension reduction and classification for binary data"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

/// CSV ingestion flags shared by the data-consuming commands.
#[derive(Args, Debug, Clone)]
struct LoadArgs {
    /// Label column, by header name or zero-based index.
    #[arg(long, default_value = "label")]
    label_column: String,
    /// Label value mapped to class 1 (other values map to 0).
    #[arg(long)]
    positive: Option<String>,
    /// The file has no header row.
    #[arg(long)]
    no_header: bool,
    /// Comma-separated columns to drop (names or indices).
    #[arg(long, value_delimiter = ',')]
    drop_columns: Vec<String>,
}

impl LoadArgs {
    fn to_options(&self) -> LoadOptions {
        LoadOptions {
            label_column: ColumnSpec::parse(&self.label_column),
            positive_label: self.positive.clone(),
            has_header: !self.no_header,
            drop_columns: self.drop_columns.iter().map(|s| ColumnSpec::parse(s)).collect(),
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic benchmark dataset and its oracle sidecar.
    Simulate {
        /// Benchmark example id (1..=4).
        #[arg(long)]
        example: u8,
        #[arg(long)]
        n: usize,
        #[arg(long, default_value_t = 8)]
        p: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Output CSV path; the oracle JSON lands next to it.
        #[arg(long)]
        out: PathBuf,
    },
    /// Print a dataset summary (n, p, class balance, dropped rows).
    Summary {
        #[arg(long)]
        data: PathBuf,
        #[command(flatten)]
        load: LoadArgs,
    },
    /// Split a dataset into train and test parts.
    Split {
        #[arg(long)]
        data: PathBuf,
        #[command(flatten)]
        load: LoadArgs,
        #[arg(long, default_value_t = 0.7)]
        fraction: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        train_out: PathBuf,
        #[arg(long)]
        test_out: PathBuf,
    },
    /// Estimate the dimension-reduction subspace and write the model JSON.
    Reduce {
        #[arg(long)]
        data: PathBuf,
        #[command(flatten)]
        load: LoadArgs,
        /// Neighborhood size; defaults to floor(sqrt(n)).
        #[arg(long)]
        k: Option<usize>,
        /// Number of query points; defaults to ceil(n/4).
        #[arg(long)]
        m: Option<usize>,
        /// Penalty level: a number, or "auto" for cross-validation.
        #[arg(long, default_value = "auto")]
        lambda: String,
        #[arg(long, default_value_t = LAMBDA_FOLDS)]
        folds: usize,
        #[arg(long, default_value_t = LAMBDA_GRID_SIZE)]
        grid_size: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Standardize covariates first; the scaling is stored in the model.
        #[arg(long)]
        standardize: bool,
        #[arg(long)]
        model_out: PathBuf,
    },
    /// Select the subspace dimension by cross-validated classifier risk.
    SelectDim {
        #[arg(long)]
        data: PathBuf,
        #[command(flatten)]
        load: LoadArgs,
        #[arg(long)]
        model: PathBuf,
        #[arg(long, default_value_t = DIMENSION_FOLDS)]
        folds: usize,
        #[arg(long, default_value_t = 10)]
        k_vote: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Evaluate the projected kNN classifier on a held-out test set.
    Evaluate {
        #[arg(long)]
        train: PathBuf,
        #[arg(long)]
        test: PathBuf,
        #[command(flatten)]
        load: LoadArgs,
        #[arg(long)]
        model: PathBuf,
        /// Subspace dimension to project onto.
        #[arg(long)]
        d: usize,
        #[arg(long, default_value_t = 10)]
        k_vote: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Replicate the synthetic benchmarks over a grid of sample sizes.
    BenchFigures {
        #[arg(long)]
        example: u8,
        /// Comma-separated sample sizes.
        #[arg(long, value_delimiter = ',')]
        n_grid: Vec<usize>,
        #[arg(long, default_value_t = 8)]
        p: usize,
        #[arg(long, default_value_t = 50)]
        reps: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 1000)]
        n_test: usize,
        #[arg(long, default_value_t = 10)]
        k_vote: usize,
        /// Skip the per-replication dimension cross-validation.
        #[arg(long)]
        no_cv_dim: bool,
        /// Skip the oracle-projection and full-covariate baselines.
        #[arg(long)]
        no_baselines: bool,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Also write the per-replication records as tidy CSV.
        #[arg(long)]
        csv_out: Option<PathBuf>,
    },
    /// Measure the gradient-error decay rate at the rate-optimal k.
    BenchRate {
        #[arg(long, default_value_t = 1)]
        p: usize,
        #[arg(long, value_delimiter = ',')]
        n_grid: Vec<usize>,
        #[arg(long, default_value_t = 100)]
        reps: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 0.0)]
        lambda: f64,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        csv_out: Option<PathBuf>,
    },
}

fn run(cli: Cli) -> Result<(), Error> {
    match cli.command {
        Command::Simulate { example, n, p, seed, out } => {
            cmd_simulate(&SimulateConfig { example, n, p, seed, out })?;
        }
        Command::Summary { data, load } => {
            cmd_summary(&SummaryConfig { data, load: load.to_options() })?;
        }
        Command::Split { data, load, fraction, seed, train_out, test_out } => {
            cmd_split(&SplitConfig {
                data,
                load: load.to_options(),
                fraction,
                seed,
                train_out,
                test_out,
            })?;
        }
        Command::Reduce {
            data,
            load,
            k,
            m,
            lambda,
            folds,
            grid_size,
            seed,
            standardize,
            model_out,
        } => {
            let lambda = if lambda == "auto" {
                LambdaMode::Auto
            } else {
                let value: f64 = lambda.parse().map_err(|_| {
                    Error::InvalidArgument(format!(
                        "--lambda must be a number or \"auto\", got '{lambda}'"
                    ))
                })?;
                LambdaMode::Fixed(value)
            };
            cmd_reduce(&ReduceConfig {
                data,
                load: load.to_options(),
                k,
                m,
                lambda,
                folds,
                grid_size,
                seed,
                standardize,
                model_out,
            })?;
        }
        Command::SelectDim { data, load, model, folds, k_vote, seed, out } => {
            cmd_select_dim(&SelectDimConfig {
                data,
                load: load.to_options(),
                model,
                folds,
                k_vote,
                seed,
                out,
            })?;
        }
        Command::Evaluate { train, test, load, model, d, k_vote, seed, out } => {
            cmd_evaluate(&EvaluateConfig {
                train,
                test,
                load: load.to_options(),
                model,
                d,
                k_vote,
                seed,
                out,
            })?;
        }
        Command::BenchFigures {
            example,
            n_grid,
            p,
            reps,
            seed,
            n_test,
            k_vote,
            no_cv_dim,
            no_baselines,
            out,
            csv_out,
        } => {
            cmd_bench_figures(&FiguresConfig {
                example,
                n_grid,
                p,
                reps,
                seed,
                n_test,
                k_vote,
                cv_dim: !no_cv_dim,
                baselines: !no_baselines,
                lambda_folds: LAMBDA_FOLDS,
                lambda_grid_size: LAMBDA_GRID_SIZE,
                out,
                csv_out,
            })?;
        }
        Command::BenchRate { p, n_grid, reps, seed, lambda, out, csv_out } => {
            cmd_bench_rate(&RateConfig { p, n_grid, reps, seed, lambda, out, csv_out })?;
        }
    }
    Ok(())
}

fn main() {
    init_workers();
    let cli = Cli::parse();
    if let Err(e) = run(cli) {
        eprintln!("error: {e}");
        std::process::exit(e.exit_code());
    }
}
