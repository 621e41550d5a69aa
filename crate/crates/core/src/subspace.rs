//! Aggregation of gradient estimates into the outer-product matrix, its
//! eigenbasis, projectors, and the Frobenius distance between subspaces.

use ndarray::{Array1, Array2, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gradient_field::GradientEstimate;

/// Eigenvalues smaller than this fraction of the top eigenvalue are
/// treated as exact zeros; trailing directions carry no information.
const EIGENVALUE_CLAMP: f64 = 1e-12;

/// Average of the outer products of the retained gradient estimates.
#[derive(Debug, Clone)]
pub struct AggregatedMatrix {
    pub matrix: Array2<f64>,
    /// Number of non-skipped estimates behind the average.
    pub used_points: usize,
}

/// `M = (1/m') sum b b'` over the non-skipped estimates; the divisor is the
/// retained count, so the result stays an average of outer products.
pub fn aggregate_m(estimates: &[GradientEstimate]) -> Result<AggregatedMatrix> {
    let mut used = 0usize;
    let mut matrix: Option<Array2<f64>> = None;
    for est in estimates {
        let Some(b) = est.gradient() else { continue };
        let m = matrix.get_or_insert_with(|| Array2::zeros((b.len(), b.len())));
        if m.nrows() != b.len() {
            return Err(Error::DimensionMismatch { expected: m.nrows(), got: b.len() });
        }
        for i in 0..b.len() {
            for j in i..b.len() {
                let v = b[i] * b[j];
                m[(i, j)] += v;
                if j != i {
                    m[(j, i)] += v;
                }
            }
        }
        used += 1;
    }
    let Some(mut matrix) = matrix else {
        return Err(Error::Numerical("all gradient estimates were skipped".into()));
    };
    matrix.mapv_inplace(|v| v / used as f64);
    Ok(AggregatedMatrix { matrix, used_points: used })
}

/// Ordered eigenpairs of the aggregated matrix plus the selected dimension.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SubspaceModel {
    /// Nonincreasing eigenvalues; trailing near-zeros are clamped to 0.
    pub eigenvalues: Vec<f64>,
    /// Orthonormal eigenvector columns, one per eigenvalue.
    #[serde(with = "columns")]
    pub basis: Array2<f64>,
    /// Selected subspace dimension, when one has been chosen.
    pub d: Option<usize>,
}

/// (De)serialize a square matrix as a list of its columns.
mod columns {
    use ndarray::Array2;
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    pub fn serialize<S: Serializer>(m: &Array2<f64>, s: S) -> Result<S::Ok, S::Error> {
        let cols: Vec<Vec<f64>> = m.columns().into_iter().map(|c| c.to_vec()).collect();
        cols.serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Array2<f64>, D::Error> {
        let cols: Vec<Vec<f64>> = Vec::deserialize(d)?;
        let n = cols.len();
        let mut m = Array2::zeros((n, n));
        for (j, col) in cols.iter().enumerate() {
            if col.len() != n {
                return Err(serde::de::Error::custom("basis is not square"));
            }
            for (i, &v) in col.iter().enumerate() {
                m[(i, j)] = v;
            }
        }
        Ok(m)
    }
}

impl SubspaceModel {
    /// Number of strictly positive eigenvalues.
    pub fn positive_rank(&self) -> usize {
        self.eigenvalues.iter().filter(|&&v| v > 0.0).count()
    }

    /// The first `d` basis columns.
    pub fn leading(&self, d: usize) -> Result<Array2<f64>> {
        let p = self.basis.nrows();
        if d == 0 || d > p {
            return Err(Error::InvalidArgument(format!(
                "d = {d} out of range 1..={p}"
            )));
        }
        Ok(self.basis.slice(ndarray::s![.., ..d]).to_owned())
    }

    /// Rank-d orthogonal projector onto the span of the top-d eigenvectors.
    pub fn projector(&self, d: usize) -> Result<Array2<f64>> {
        let b = self.leading(d)?;
        Ok(b.dot(&b.t()))
    }
}

/// Full eigendecomposition of the aggregated matrix, eigenvalues
/// nonincreasing; the selected dimension is left unset.
pub fn eigen_basis(aggregated: &AggregatedMatrix) -> Result<SubspaceModel> {
    let m = &aggregated.matrix;
    if m.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("aggregated matrix"));
    }
    let p = m.nrows();
    if m.ncols() != p {
        return Err(Error::DimensionMismatch { expected: p, got: m.ncols() });
    }
    let scale = m.iter().fold(0.0f64, |acc, v| acc.max(v.abs()));
    for i in 0..p {
        for j in (i + 1)..p {
            if (m[(i, j)] - m[(j, i)]).abs() > 1e-12 * scale.max(1.0) {
                return Err(Error::Numerical("matrix is not symmetric".into()));
            }
        }
    }

    let (mut values, mut vectors) = jacobi_eigen(m);

    // Sort nonincreasing; equal eigenvalues keep the solver's order.
    let mut order: Vec<usize> = (0..p).collect();
    order.sort_by(|&a, &b| values[b].total_cmp(&values[a]));
    values = order.iter().map(|&i| values[i]).collect();
    let mut sorted = Array2::zeros((p, p));
    for (new, &old) in order.iter().enumerate() {
        sorted.column_mut(new).assign(&vectors.column(old));
    }
    vectors = sorted;

    // Deterministic sign: first nonzero coordinate of each column positive.
    for mut col in vectors.columns_mut() {
        if let Some(&lead) = col.iter().find(|v| **v != 0.0) {
            if lead < 0.0 {
                col.mapv_inplace(|v| -v);
            }
        }
    }

    let top = values.first().copied().unwrap_or(0.0).max(0.0);
    for v in values.iter_mut() {
        if *v < EIGENVALUE_CLAMP * top {
            *v = 0.0;
        }
    }

    Ok(SubspaceModel { eigenvalues: values, basis: vectors, d: None })
}

/// Cyclic Jacobi rotations for a symmetric matrix. Deterministic and
/// foolproof for the small dense matrices this crate produces.
fn jacobi_eigen(m: &Array2<f64>) -> (Vec<f64>, Array2<f64>) {
    let p = m.nrows();
    let mut a = m.clone();
    let mut v = Array2::eye(p);

    for _ in 0..100 {
        let mut off = 0.0;
        for i in 0..p {
            for j in (i + 1)..p {
                off += a[(i, j)] * a[(i, j)];
            }
        }
        if off.sqrt() <= 1e-300 || off.sqrt() <= 1e-15 * a.diag().iter().map(|d| d.abs()).fold(0.0, f64::max).max(1e-300) {
            break;
        }
        for i in 0..p {
            for j in (i + 1)..p {
                let apq = a[(i, j)];
                if apq == 0.0 {
                    continue;
                }
                let app = a[(i, i)];
                let aqq = a[(j, j)];
                let theta = (aqq - app) / (2.0 * apq);
                // Smaller-magnitude root for a stable rotation angle.
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                let tau = s / (1.0 + c);

                a[(i, i)] = app - t * apq;
                a[(j, j)] = aqq + t * apq;
                a[(i, j)] = 0.0;
                a[(j, i)] = 0.0;
                for l in 0..p {
                    if l != i && l != j {
                        let ali = a[(l, i)];
                        let alj = a[(l, j)];
                        a[(l, i)] = ali - s * (alj + tau * ali);
                        a[(i, l)] = a[(l, i)];
                        a[(l, j)] = alj + s * (ali - tau * alj);
                        a[(j, l)] = a[(l, j)];
                    }
                }
                for l in 0..p {
                    let vli = v[(l, i)];
                    let vlj = v[(l, j)];
                    v[(l, i)] = vli - s * (vlj + tau * vli);
                    v[(l, j)] = vlj + s * (vli - tau * vlj);
                }
            }
        }
    }

    (a.diag().to_vec(), v)
}

/// Frobenius norm of the difference between the orthogonal projectors of
/// two spans; invariant to the basis chosen within each span.
pub fn subspace_distance(b1: ArrayView2<'_, f64>, b2: ArrayView2<'_, f64>) -> Result<f64> {
    if b1.nrows() != b2.nrows() {
        return Err(Error::DimensionMismatch { expected: b1.nrows(), got: b2.nrows() });
    }
    check_orthonormal(b1)?;
    check_orthonormal(b2)?;
    let diff = b1.dot(&b1.t()) - b2.dot(&b2.t());
    Ok(diff.iter().map(|v| v * v).sum::<f64>().sqrt())
}

fn check_orthonormal(b: ArrayView2<'_, f64>) -> Result<()> {
    let gram = b.t().dot(&b);
    let d = gram.nrows();
    for i in 0..d {
        for j in 0..d {
            let want = if i == j { 1.0 } else { 0.0 };
            if (gram[(i, j)] - want).abs() > 1e-6 {
                return Err(Error::InvalidArgument(
                    "basis columns are not orthonormal".into(),
                ));
            }
        }
    }
    Ok(())
}

/// Gram-Schmidt with random columns; test helper for building orthonormal
/// bases of a given width.
pub fn random_orthonormal(p: usize, d: usize, stream: &crate::rng::RandomStream) -> Array2<f64> {
    let mut b = Array2::zeros((p, d));
    let raw = stream.gaussian(p * d);
    for j in 0..d {
        let mut col = Array1::from_vec(raw[j * p..(j + 1) * p].to_vec());
        for prev in 0..j {
            let proj = b.column(prev).dot(&col);
            let prev_col = b.column(prev).to_owned();
            col.scaled_add(-proj, &prev_col);
        }
        let norm = col.dot(&col).sqrt();
        b.column_mut(j).assign(&col.mapv(|v| v / norm));
    }
    b
}
