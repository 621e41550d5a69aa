//! Hyperparameter selection by cross-validation: the penalty level at the
//! mean point, and the subspace dimension through classifier risk.

use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};

use crate::classify::{misclassification_risk, Classifier};
use crate::dataio::Dataset;
use crate::error::{Error, Result};
use crate::local_logistic::{
    expit, fit_penalized, lambda_max, LocalProblem, SolverOptions,
};
use crate::neighbors::{build_index, PointCloud};
use crate::rng::RandomStream;
use crate::subspace::SubspaceModel;

/// Default fold counts: 10 for the penalty level, 5 for the dimension.
pub const LAMBDA_FOLDS: usize = 10;
pub const DIMENSION_FOLDS: usize = 5;
/// Default size and dynamic range of the geometric penalty grid.
pub const LAMBDA_GRID_SIZE: usize = 100;
pub const LAMBDA_MIN_RATIO: f64 = 1e-3;

/// One cross-validation run over a candidate grid.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CvReport<T> {
    /// Candidate values in evaluation order.
    pub grid: Vec<T>,
    /// Mean misclassification across retained folds, one per candidate.
    pub risks: Vec<f64>,
    /// Per-fold risks, `fold_risks[fold][candidate]`.
    pub fold_risks: Vec<Vec<f64>>,
    /// Folds dropped with a warning (single-class neighborhood or
    /// classifier failure).
    pub dropped_folds: Vec<usize>,
    /// The winning candidate: smallest-index minimizer of `risks`.
    pub chosen: T,
}

/// Disjoint fold membership covering `0..n`, sizes differing by at most 1.
fn kfold(n: usize, folds: usize, stream: &RandomStream) -> Vec<Vec<usize>> {
    let perm = stream.shuffle(n);
    let mut out = vec![Vec::with_capacity(n / folds + 1); folds];
    for (i, &idx) in perm.iter().enumerate() {
        out[i % folds].push(idx);
    }
    out
}

/// Geometric grid from `top` down, `size` values spanning `LAMBDA_MIN_RATIO`.
pub fn lambda_grid(top: f64, size: usize) -> Vec<f64> {
    if size <= 1 {
        return vec![top];
    }
    (0..size)
        .map(|i| top * LAMBDA_MIN_RATIO.powf(i as f64 / (size - 1) as f64))
        .collect()
}

/// Select the penalty level by K-fold cross-validation at the mean point.
///
/// For each training fold, the local problem is built over the k nearest
/// neighbors of the covariate mean within that fold; each held-out
/// observation is labeled 1 when its predicted probability
/// `expit(a + b'(x - xbar))` exceeds 1/2. The winning penalty minimizes
/// mean misclassification, with ties resolved toward the larger penalty.
pub fn select_lambda(
    dataset: &Dataset,
    k: usize,
    folds: usize,
    grid_size: usize,
    stream: &RandomStream,
) -> Result<CvReport<f64>> {
    if folds < 2 {
        return Err(Error::InvalidArgument("need at least 2 folds".into()));
    }
    if grid_size == 0 {
        return Err(Error::InvalidArgument("grid_size must be positive".into()));
    }
    let n = dataset.n();
    if k > n {
        return Err(Error::KTooLarge { k, n });
    }
    let (c0, c1) = dataset.class_counts();
    if c0 == 0 || c1 == 0 {
        return Err(Error::ClassMissing {
            class: if c1 == 0 { 1 } else { 0 },
            part: "dataset",
        });
    }

    let xbar = dataset.mean_point();

    // Grid anchored at the full-data neighborhood of the mean point.
    let full_index = build_index(&PointCloud::new(dataset.covariates.clone())?)?;
    let full_problem = local_problem_at(dataset, &full_index, &xbar, k, 0.0)?;
    let top = lambda_max(&full_problem).map_err(|_| {
        Error::Numerical("labels are constant around the mean point".into())
    })?;
    let grid = lambda_grid(top, grid_size);

    let membership = kfold(n, folds, stream);
    let mut fold_risks: Vec<Vec<f64>> = Vec::new();
    let mut dropped_folds = Vec::new();

    for (fold_id, held_out) in membership.iter().enumerate() {
        let train_idx: Vec<usize> = membership
            .iter()
            .enumerate()
            .filter(|&(j, _)| j != fold_id)
            .flat_map(|(_, f)| f.iter().copied())
            .collect();
        let train = dataset.subset(&train_idx);
        let k_fold = k.min(train.n());
        let index = build_index(&PointCloud::new(train.covariates.clone())?)?;
        let base = local_problem_at(&train, &index, &xbar, k_fold, 0.0)?;
        if base.labels().iter().all(|&y| y == base.labels()[0]) {
            dropped_folds.push(fold_id);
            continue;
        }

        let mut risks_for_fold = Vec::with_capacity(grid.len());
        let mut warm: Option<(f64, Array1<f64>)> = None;
        for &lam in &grid {
            let problem = LocalProblem::new(
                base.center().to_owned(),
                base.deltas().clone(),
                base.labels().to_vec(),
                lam,
            )?;
            let opts = SolverOptions { warm_start: warm.take(), ..Default::default() };
            let fit = fit_penalized(&problem, &opts)?;
            warm = Some((fit.intercept, fit.gradient.clone()));

            let predicted: Vec<u8> = held_out
                .iter()
                .map(|&i| {
                    let eta = fit.intercept
                        + dataset
                            .row(i)
                            .iter()
                            .zip(xbar.iter())
                            .zip(fit.gradient.iter())
                            .map(|((x, m), g)| (x - m) * g)
                            .sum::<f64>();
                    (expit(eta) > 0.5) as u8
                })
                .collect();
            let truth: Vec<u8> = held_out.iter().map(|&i| dataset.labels[i]).collect();
            risks_for_fold.push(misclassification_risk(&predicted, &truth)?);
        }
        fold_risks.push(risks_for_fold);
    }

    if fold_risks.is_empty() {
        return Err(Error::Numerical(
            "every cross-validation fold had a single-class neighborhood".into(),
        ));
    }

    let risks = mean_over_folds(&fold_risks, grid.len());
    let chosen_idx = argmin(&risks);
    Ok(CvReport {
        chosen: grid[chosen_idx],
        grid,
        risks,
        fold_risks,
        dropped_folds,
    })
}

/// Select the subspace dimension by K-fold cross-validation of a
/// classifier on the projected covariates. Candidates run over
/// `1..=positive_rank`; ties resolve toward the smaller dimension.
pub fn select_dimension(
    dataset: &Dataset,
    model: &SubspaceModel,
    folds: usize,
    classifier: &dyn Classifier,
    stream: &RandomStream,
) -> Result<CvReport<usize>> {
    if folds < 2 {
        return Err(Error::InvalidArgument("need at least 2 folds".into()));
    }
    if model.basis.nrows() != dataset.p() {
        return Err(Error::DimensionMismatch {
            expected: dataset.p(),
            got: model.basis.nrows(),
        });
    }
    let rank = model.positive_rank();
    if rank == 0 {
        return Err(Error::Numerical("all eigenvalues are zero".into()));
    }
    let grid: Vec<usize> = (1..=rank).collect();

    // Projection onto all the candidate directions at once; candidate d
    // just takes the leading d columns.
    let projected = dataset.covariates.dot(&model.leading(rank)?);

    let n = dataset.n();
    let membership = kfold(n, folds, stream);
    let mut fold_risks = Vec::new();
    let mut dropped_folds = Vec::new();

    for (fold_id, held_out) in membership.iter().enumerate() {
        let train_idx: Vec<usize> = membership
            .iter()
            .enumerate()
            .filter(|&(j, _)| j != fold_id)
            .flat_map(|(_, f)| f.iter().copied())
            .collect();
        let truth: Vec<u8> = held_out.iter().map(|&i| dataset.labels[i]).collect();

        let mut risks_for_fold = Vec::with_capacity(grid.len());
        let mut failed = false;
        for &d in &grid {
            let mut train_x = Array2::zeros((train_idx.len(), d));
            let mut train_y = Vec::with_capacity(train_idx.len());
            for (row, &i) in train_idx.iter().enumerate() {
                train_x
                    .row_mut(row)
                    .assign(&projected.row(i).slice(ndarray::s![..d]));
                train_y.push(dataset.labels[i]);
            }
            let fitted = match classifier.fit(
                train_x.view(),
                &train_y,
                stream.child(fold_id as u64).child(d as u64),
            ) {
                Ok(f) => f,
                Err(_) => {
                    failed = true;
                    break;
                }
            };
            let mut predicted = Vec::with_capacity(held_out.len());
            for &i in held_out {
                let q = projected.row(i);
                match fitted.predict(q.slice(ndarray::s![..d])) {
                    Ok((label, _)) => predicted.push(label),
                    Err(_) => {
                        failed = true;
                        break;
                    }
                }
            }
            if failed {
                break;
            }
            risks_for_fold.push(misclassification_risk(&predicted, &truth)?);
        }
        if failed {
            dropped_folds.push(fold_id);
        } else {
            fold_risks.push(risks_for_fold);
        }
    }

    if fold_risks.is_empty() {
        return Err(Error::Numerical("every cross-validation fold failed".into()));
    }

    let risks = mean_over_folds(&fold_risks, grid.len());
    let chosen_idx = argmin(&risks);
    Ok(CvReport {
        chosen: grid[chosen_idx],
        grid,
        risks,
        fold_risks,
        dropped_folds,
    })
}

fn mean_over_folds(fold_risks: &[Vec<f64>], width: usize) -> Vec<f64> {
    let mut risks = vec![0.0; width];
    for fold in fold_risks {
        for (r, v) in risks.iter_mut().zip(fold) {
            *r += v;
        }
    }
    for r in risks.iter_mut() {
        *r /= fold_risks.len() as f64;
    }
    risks
}

fn argmin(risks: &[f64]) -> usize {
    let mut best = 0;
    for (i, &r) in risks.iter().enumerate() {
        if r < risks[best] {
            best = i;
        }
    }
    best
}

fn local_problem_at(
    dataset: &Dataset,
    index: &crate::neighbors::NeighborIndex,
    x: &Array1<f64>,
    k: usize,
    lambda: f64,
) -> Result<LocalProblem> {
    let neighbors = index.k_nearest(x.view(), k)?;
    let mut deltas = Array2::zeros((k, dataset.p()));
    let mut labels = Vec::with_capacity(k);
    for (row, &i) in neighbors.indices.iter().enumerate() {
        let mut out = deltas.row_mut(row);
        out.assign(&dataset.row(i));
        out -= x;
        labels.push(dataset.labels[i]);
    }
    LocalProblem::new(x.clone(), deltas, labels, lambda)
}
