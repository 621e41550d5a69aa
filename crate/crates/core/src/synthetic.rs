//! Synthetic benchmark generators with known central subspaces.
//!
//! Covariates are independent standard Gaussians. Each column, the noise,
//! and the label draws come from separate sub-streams of the seed, so
//! adding ambient dimensions never changes the labels or the informative
//! columns.

use ndarray::{Array1, Array2};

use crate::dataio::Dataset;
use crate::error::{Error, Result};
use crate::local_logistic::expit;
use crate::rng::RandomStream;

const STREAM_COVARIATE: u64 = 0;
const STREAM_NOISE: u64 = 1;
const STREAM_LABEL: u64 = 2;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExampleId {
    /// Bernoulli response with success probability `expit(x1 + 1)`.
    One,
    /// `y = 1{ sin(x1) + x2^2 + 0.2 e >= 0 }`.
    Two,
    /// `y = 1{ (x1 + 0.5)(x2 - 0.5)^2 + 0.2 e >= 0 }`.
    Three,
    /// `y = 1{ log(x1^2)(x2^2 + x3) + 0.2 e >= 0 }`.
    Four,
}

impl ExampleId {
    pub fn from_number(id: u8) -> Result<Self> {
        match id {
            1 => Ok(ExampleId::One),
            2 => Ok(ExampleId::Two),
            3 => Ok(ExampleId::Three),
            4 => Ok(ExampleId::Four),
            _ => Err(Error::InvalidArgument(format!("unknown example id {id}"))),
        }
    }

    pub fn number(self) -> u8 {
        match self {
            ExampleId::One => 1,
            ExampleId::Two => 2,
            ExampleId::Three => 3,
            ExampleId::Four => 4,
        }
    }

    /// Dimension of the true central subspace.
    pub fn true_d(self) -> usize {
        match self {
            ExampleId::One => 1,
            ExampleId::Two | ExampleId::Three => 2,
            ExampleId::Four => 3,
        }
    }
}

#[derive(Debug, Clone)]
pub struct SyntheticSpec {
    pub example: ExampleId,
    pub n: usize,
    pub p: usize,
    pub seed: u64,
}

/// The ground truth behind a generated dataset.
#[derive(Debug, Clone)]
pub struct OracleInfo {
    /// Orthonormal columns spanning the true central subspace (the first
    /// `true_d` canonical vectors).
    pub basis: Array2<f64>,
    pub true_d: usize,
    /// Closed-form logit gradient when it is constant (example 1 only).
    pub logit_gradient: Option<Array1<f64>>,
}

/// First `d` canonical basis vectors as columns of a `p x d` matrix.
pub fn canonical_basis(p: usize, d: usize) -> Array2<f64> {
    let mut b = Array2::zeros((p, d));
    for j in 0..d {
        b[(j, j)] = 1.0;
    }
    b
}

pub fn generate(spec: &SyntheticSpec) -> Result<(Dataset, OracleInfo)> {
    let true_d = spec.example.true_d();
    if spec.n == 0 {
        return Err(Error::InvalidArgument("n must be positive".into()));
    }
    if spec.p < true_d {
        return Err(Error::InvalidArgument(format!(
            "p = {} is below the intrinsic dimension {true_d}",
            spec.p
        )));
    }

    let stream = RandomStream::new(spec.seed);
    let mut covariates = Array2::zeros((spec.n, spec.p));
    for j in 0..spec.p {
        let col = stream.child(STREAM_COVARIATE).child(j as u64).gaussian(spec.n);
        covariates.column_mut(j).assign(&Array1::from_vec(col));
    }
    let noise = stream.child(STREAM_NOISE).gaussian(spec.n);

    let labels: Vec<u8> = match spec.example {
        ExampleId::One => {
            let us = stream.child(STREAM_LABEL).uniforms(spec.n);
            (0..spec.n)
                .map(|i| (us[i] < expit(covariates[(i, 0)] + 1.0)) as u8)
                .collect()
        }
        ExampleId::Two => (0..spec.n)
            .map(|i| {
                let t = covariates[(i, 0)].sin()
                    + covariates[(i, 1)].powi(2)
                    + 0.2 * noise[i];
                (t >= 0.0) as u8
            })
            .collect(),
        ExampleId::Three => (0..spec.n)
            .map(|i| {
                let t = (covariates[(i, 0)] + 0.5)
                    * (covariates[(i, 1)] - 0.5).powi(2)
                    + 0.2 * noise[i];
                (t >= 0.0) as u8
            })
            .collect(),
        ExampleId::Four => (0..spec.n)
            .map(|i| {
                // An exact zero draw would send the log to -inf with an
                // indeterminate sign; nudge it to the smallest normal.
                let mut x1 = covariates[(i, 0)];
                if x1 == 0.0 {
                    x1 = f64::MIN_POSITIVE;
                }
                let log_x1_sq = 2.0 * x1.abs().ln();
                let t = log_x1_sq * (covariates[(i, 1)].powi(2) + covariates[(i, 2)])
                    + 0.2 * noise[i];
                (t >= 0.0) as u8
            })
            .collect(),
    };

    let dataset = Dataset::new(covariates, labels, None)?;
    let oracle = OracleInfo {
        basis: canonical_basis(spec.p, true_d),
        true_d,
        logit_gradient: match spec.example {
            ExampleId::One => {
                let mut g = Array1::zeros(spec.p);
                g[0] = 1.0;
                Some(g)
            }
            _ => None,
        },
    };
    Ok((dataset, oracle))
}
