//! Pointwise logit-gradient estimates over the covariate cloud.
//!
//! At each query point the k nearest neighbors feed a penalized local
//! logistic fit; neighborhoods where either class has fewer than
//! [`MIN_CLASS_COUNT`] representatives are skipped rather than fitted, as
//! are neighborhoods where the solver saturates. The plug-in conditional
//! probability and its gradient follow from the identity
//! `grad pi = pi (1 - pi) grad logit(pi)`.

use ndarray::{Array1, Array2, ArrayView1};
use rayon::prelude::*;

use crate::dataio::Dataset;
use crate::error::{Error, Result};
use crate::local_logistic::{expit, fit_penalized, LocalProblem, SolverOptions};
use crate::neighbors::{build_index, NeighborIndex};
use crate::rng::RandomStream;

/// Minimum per-class representation among the k neighbors.
pub const MIN_CLASS_COUNT: usize = 5;

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum SkipReason {
    /// One class had fewer members than the filter threshold.
    ClassImbalance { class0: usize, class1: usize },
    /// The local fit saturated a coefficient cap.
    DegenerateFit,
}

impl std::fmt::Display for SkipReason {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            SkipReason::ClassImbalance { class0, class1 } => {
                write!(f, "class imbalance ({class0} vs {class1})")
            }
            SkipReason::DegenerateFit => write!(f, "degenerate fit"),
        }
    }
}

/// The solved local quantities at one query point.
#[derive(Debug, Clone)]
pub struct PointGradient {
    /// Estimated local logit value.
    pub intercept: f64,
    /// Estimated local logit gradient.
    pub gradient: Array1<f64>,
    /// Plug-in conditional probability `expit(intercept)`.
    pub pi_hat: f64,
    /// Plug-in probability gradient `pi (1 - pi) * gradient`.
    pub grad_pi_hat: Array1<f64>,
    pub converged: bool,
}

#[derive(Debug, Clone)]
pub enum Outcome {
    Fitted(PointGradient),
    Skipped(SkipReason),
}

/// One gradient estimate, fitted or skipped with a reason.
#[derive(Debug, Clone)]
pub struct GradientEstimate {
    pub center: Array1<f64>,
    pub outcome: Outcome,
}

impl GradientEstimate {
    pub fn fitted(center: Array1<f64>, value: PointGradient) -> Self {
        GradientEstimate { center, outcome: Outcome::Fitted(value) }
    }

    pub fn skipped(center: Array1<f64>, reason: SkipReason) -> Self {
        GradientEstimate { center, outcome: Outcome::Skipped(reason) }
    }

    pub fn is_skipped(&self) -> bool {
        matches!(self.outcome, Outcome::Skipped(_))
    }

    pub fn value(&self) -> Option<&PointGradient> {
        match &self.outcome {
            Outcome::Fitted(v) => Some(v),
            Outcome::Skipped(_) => None,
        }
    }

    pub fn gradient(&self) -> Option<ArrayView1<'_, f64>> {
        self.value().map(|v| v.gradient.view())
    }
}

#[derive(Debug, Clone)]
pub struct FieldOptions {
    pub min_class_count: usize,
    pub solver: SolverOptions,
}

impl Default for FieldOptions {
    fn default() -> Self {
        FieldOptions { min_class_count: MIN_CLASS_COUNT, solver: SolverOptions::default() }
    }
}

/// Estimate the local logit value and gradient at one query point.
pub fn estimate_at(
    dataset: &Dataset,
    index: &NeighborIndex,
    x: ArrayView1<'_, f64>,
    k: usize,
    lambda: f64,
) -> Result<GradientEstimate> {
    estimate_at_opts(dataset, index, x, k, lambda, &FieldOptions::default())
}

pub fn estimate_at_opts(
    dataset: &Dataset,
    index: &NeighborIndex,
    x: ArrayView1<'_, f64>,
    k: usize,
    lambda: f64,
    opts: &FieldOptions,
) -> Result<GradientEstimate> {
    let neighbors = index.k_nearest(x, k)?;
    let class1 = neighbors.indices.iter().filter(|&&i| dataset.labels[i] == 1).count();
    let class0 = k - class1;
    if class0.min(class1) < opts.min_class_count {
        return Ok(GradientEstimate::skipped(
            x.to_owned(),
            SkipReason::ClassImbalance { class0, class1 },
        ));
    }

    let mut deltas = Array2::zeros((k, dataset.p()));
    let mut labels = Vec::with_capacity(k);
    for (row, &i) in neighbors.indices.iter().enumerate() {
        let mut out = deltas.row_mut(row);
        out.assign(&dataset.row(i));
        out -= &x;
        labels.push(dataset.labels[i]);
    }
    let problem = LocalProblem::new(x.to_owned(), deltas, labels, lambda)?;
    let fit = fit_penalized(&problem, &opts.solver)?;
    if fit.degenerate {
        return Ok(GradientEstimate::skipped(x.to_owned(), SkipReason::DegenerateFit));
    }
    let pi_hat = expit(fit.intercept);
    let w = pi_hat * (1.0 - pi_hat);
    let grad_pi_hat = fit.gradient.mapv(|g| w * g);
    Ok(GradientEstimate::fitted(
        x.to_owned(),
        PointGradient {
            intercept: fit.intercept,
            gradient: fit.gradient,
            pi_hat,
            grad_pi_hat,
            converged: fit.converged,
        },
    ))
}

/// Estimate gradients at `m` data points drawn uniformly without
/// replacement. Skipped points are retained with their reason; the output
/// order is the draw order regardless of worker count.
pub fn estimate_field(
    dataset: &Dataset,
    m: usize,
    k: usize,
    lambda: f64,
    stream: &RandomStream,
) -> Result<Vec<GradientEstimate>> {
    let n = dataset.n();
    if m == 0 {
        return Err(Error::InvalidArgument("m must be at least 1".into()));
    }
    if m > n {
        return Err(Error::InvalidArgument(format!("m = {m} exceeds n = {n}")));
    }
    let cloud = crate::neighbors::PointCloud::new(dataset.covariates.clone())?;
    let index = build_index(&cloud)?;
    let draws = stream.uniform_choice(n, m)?;
    estimate_field_at(dataset, &index, &draws, k, lambda, &FieldOptions::default())
}

/// Estimate gradients at an explicit list of data-point indices.
pub fn estimate_field_at(
    dataset: &Dataset,
    index: &NeighborIndex,
    query_indices: &[usize],
    k: usize,
    lambda: f64,
    opts: &FieldOptions,
) -> Result<Vec<GradientEstimate>> {
    query_indices
        .par_iter()
        .map(|&i| estimate_at_opts(dataset, index, dataset.row(i), k, lambda, opts))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::neighbors::PointCloud;
    use crate::synthetic::{generate, ExampleId, SyntheticSpec};
    use ndarray::Array2;

    fn toy_dataset(labels: Vec<u8>) -> (Dataset, NeighborIndex) {
        let n = labels.len();
        let stream = RandomStream::new(50);
        let cov = Array2::from_shape_vec((n, 2), stream.gaussian(2 * n)).unwrap();
        let ds = Dataset::new(cov, labels, None).unwrap();
        let index = build_index(&PointCloud::new(ds.covariates.clone()).unwrap()).unwrap();
        (ds, index)
    }

    #[test]
    fn minority_class_below_threshold_is_skipped() {
        // 4 positives among 20 neighbors: below the threshold of 5.
        let mut labels = vec![0u8; 20];
        for l in labels.iter_mut().take(4) {
            *l = 1;
        }
        let (ds, index) = toy_dataset(labels);
        let est = estimate_at(&ds, &index, ds.row(0), 20, 0.1).unwrap();
        match est.outcome {
            Outcome::Skipped(SkipReason::ClassImbalance { class0, class1 }) => {
                assert_eq!(class0 + class1, 20);
                assert_eq!(class1, 4);
            }
            _ => panic!("expected a class-imbalance skip"),
        }
    }

    #[test]
    fn constant_labels_are_skipped() {
        let (ds, index) = toy_dataset(vec![1u8; 15]);
        let est = estimate_at(&ds, &index, ds.row(0), 15, 0.1).unwrap();
        assert!(est.is_skipped());
    }

    #[test]
    fn raising_the_threshold_never_unskips() {
        let stream = RandomStream::new(51);
        let (ds, _) = generate(&SyntheticSpec {
            example: ExampleId::Two,
            n: 300,
            p: 4,
            seed: stream.derive_seed(),
        })
        .unwrap();
        let index =
            build_index(&PointCloud::new(ds.covariates.clone()).unwrap()).unwrap();
        let k = 30;
        for i in (0..300).step_by(17) {
            let mut was_skipped = false;
            for threshold in [5usize, 7, 9, 12] {
                let opts = FieldOptions {
                    min_class_count: threshold,
                    ..Default::default()
                };
                let est =
                    estimate_at_opts(&ds, &index, ds.row(i), k, 0.05, &opts).unwrap();
                let skipped_now = est.is_skipped();
                assert!(
                    skipped_now || !was_skipped,
                    "point unskipped when threshold rose to {threshold}"
                );
                was_skipped = skipped_now;
            }
        }
    }

    #[test]
    fn plug_in_identity_holds_exactly() {
        let stream = RandomStream::new(52);
        let (ds, _) = generate(&SyntheticSpec {
            example: ExampleId::One,
            n: 400,
            p: 3,
            seed: stream.derive_seed(),
        })
        .unwrap();
        let index =
            build_index(&PointCloud::new(ds.covariates.clone()).unwrap()).unwrap();
        let est = estimate_at(&ds, &index, ds.row(7), 40, 0.02).unwrap();
        let v = est.value().expect("fit expected");
        assert!(v.pi_hat > 0.0 && v.pi_hat < 1.0);
        let w = v.pi_hat * (1.0 - v.pi_hat);
        for j in 0..3 {
            assert_eq!(v.grad_pi_hat[j], w * v.gradient[j]);
        }
    }

    #[test]
    fn field_draws_every_point_when_m_equals_n() {
        let stream = RandomStream::new(53);
        let (ds, _) = generate(&SyntheticSpec {
            example: ExampleId::Two,
            n: 120,
            p: 3,
            seed: stream.derive_seed(),
        })
        .unwrap();
        let field = estimate_field(&ds, 120, 15, 0.1, &stream.child(1)).unwrap();
        assert_eq!(field.len(), 120);
        let mut centers: Vec<Vec<u64>> = field
            .iter()
            .map(|e| e.center.iter().map(|v| v.to_bits()).collect())
            .collect();
        let mut want: Vec<Vec<u64>> = ds
            .covariates
            .rows()
            .into_iter()
            .map(|r| r.iter().map(|v| v.to_bits()).collect())
            .collect();
        centers.sort();
        want.sort();
        assert_eq!(centers, want);
    }

    #[test]
    fn field_is_deterministic_given_the_stream() {
        let stream = RandomStream::new(54);
        let (ds, _) = generate(&SyntheticSpec {
            example: ExampleId::Two,
            n: 200,
            p: 4,
            seed: stream.derive_seed(),
        })
        .unwrap();
        let a = estimate_field(&ds, 50, 14, 0.05, &stream.child(1)).unwrap();
        let b = estimate_field(&ds, 50, 14, 0.05, &stream.child(1)).unwrap();
        assert_eq!(a.len(), b.len());
        for (x, y) in a.iter().zip(&b) {
            assert_eq!(x.center, y.center);
            assert_eq!(x.is_skipped(), y.is_skipped());
            if let (Some(vx), Some(vy)) = (x.value(), y.value()) {
                assert_eq!(vx.intercept, vy.intercept);
                assert_eq!(vx.gradient, vy.gradient);
            }
        }
    }

    #[test]
    fn field_rejects_oversized_m() {
        let (ds, _) = toy_dataset(vec![0, 1, 0, 1, 0, 1]);
        assert!(estimate_field(&ds, 7, 3, 0.0, &RandomStream::new(0)).is_err());
    }

    #[test]
    fn gradient_norms_shrink_with_lambda_when_labels_carry_no_signal() {
        // Labels independent of X: pi constant at 0.6.
        let stream = RandomStream::new(55);
        let n = 250;
        let cov = Array2::from_shape_vec((n, 3), stream.child(0).gaussian(3 * n)).unwrap();
        let us = stream.child(1).uniforms(n);
        let labels: Vec<u8> = us.iter().map(|&u| (u < 0.6) as u8).collect();
        let ds = Dataset::new(cov, labels, None).unwrap();
        let index =
            build_index(&PointCloud::new(ds.covariates.clone()).unwrap()).unwrap();
        let queries: Vec<usize> = (0..n).step_by(10).collect();
        let k = 40;

        // Largest local lambda_max across the queried neighborhoods.
        let mut global_lmax = 0.0f64;
        for &i in &queries {
            let ns = index.k_nearest(ds.row(i), k).unwrap();
            let mut deltas = Array2::zeros((k, 3));
            let mut ls = Vec::new();
            for (row, &idx) in ns.indices.iter().enumerate() {
                let mut out = deltas.row_mut(row);
                out.assign(&ds.row(idx));
                out -= &ds.row(i);
                ls.push(ds.labels[idx]);
            }
            let problem =
                LocalProblem::new(ds.row(i).to_owned(), deltas, ls, 0.0).unwrap();
            if let Ok(lm) = crate::local_logistic::lambda_max(&problem) {
                global_lmax = global_lmax.max(lm);
            }
        }

        let mean_norm = |lambda: f64| -> f64 {
            let field =
                estimate_field_at(&ds, &index, &queries, k, lambda, &FieldOptions::default())
                    .unwrap();
            let mut total = 0.0;
            let mut count = 0;
            for est in &field {
                if let Some(v) = est.value() {
                    total += v.gradient.dot(&v.gradient).sqrt();
                    count += 1;
                }
            }
            total / count.max(1) as f64
        };

        let low = mean_norm(0.0);
        let mid = mean_norm(0.3 * global_lmax);
        let high = mean_norm(global_lmax * 1.001);
        assert!(mid <= low + 1e-9, "mid {mid} vs low {low}");
        assert_eq!(high, 0.0);
    }
}
