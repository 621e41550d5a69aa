//! Majority-vote kNN classification on projected covariates, plus the
//! evaluation metrics used throughout: misclassification risk and the area
//! under the ROC curve.

use ndarray::{ArrayView1, ArrayView2};

use crate::error::{Error, Result};
use crate::neighbors::{build_index, NeighborIndex, PointCloud};
use crate::rng::RandomStream;

/// Default number of voting neighbors.
pub const DEFAULT_K_VOTE: usize = 10;

/// A trainable classifier; the contract Algorithm-style dimension
/// selection runs against.
pub trait Classifier: Sync {
    fn fit(
        &self,
        x: ArrayView2<'_, f64>,
        y: &[u8],
        stream: RandomStream,
    ) -> Result<Box<dyn FittedClassifier>>;
}

pub trait FittedClassifier: Sync + Send {
    /// Predicted label and score (fraction of class-1 votes).
    fn predict(&self, query: ArrayView1<'_, f64>) -> Result<(u8, f64)>;

    fn predict_all(&self, queries: ArrayView2<'_, f64>) -> Result<(Vec<u8>, Vec<f64>)> {
        let mut labels = Vec::with_capacity(queries.nrows());
        let mut scores = Vec::with_capacity(queries.nrows());
        for row in queries.rows() {
            let (l, s) = self.predict(row)?;
            labels.push(l);
            scores.push(s);
        }
        Ok((labels, scores))
    }
}

/// Majority vote among the k nearest training points.
#[derive(Debug, Clone)]
pub struct KnnVote {
    pub k_vote: usize,
}

impl Default for KnnVote {
    fn default() -> Self {
        KnnVote { k_vote: DEFAULT_K_VOTE }
    }
}

impl Classifier for KnnVote {
    fn fit(
        &self,
        x: ArrayView2<'_, f64>,
        y: &[u8],
        stream: RandomStream,
    ) -> Result<Box<dyn FittedClassifier>> {
        Ok(Box::new(KnnClassifier::new(x, y, self.k_vote, stream)?))
    }
}

/// The trained store: projected covariates, labels, and the vote count.
pub struct KnnClassifier {
    index: NeighborIndex,
    labels: Vec<u8>,
    k_vote: usize,
    stream: RandomStream,
}

impl KnnClassifier {
    pub fn new(
        x: ArrayView2<'_, f64>,
        y: &[u8],
        k_vote: usize,
        stream: RandomStream,
    ) -> Result<Self> {
        if k_vote == 0 {
            return Err(Error::InvalidArgument("k_vote must be at least 1".into()));
        }
        if x.nrows() == 0 {
            return Err(Error::EmptyInput("training set"));
        }
        if x.nrows() != y.len() {
            return Err(Error::DimensionMismatch { expected: x.nrows(), got: y.len() });
        }
        let cloud = PointCloud::new(x.to_owned())?;
        Ok(KnnClassifier {
            index: build_index(&cloud)?,
            labels: y.to_vec(),
            k_vote,
            stream,
        })
    }

    pub fn k_vote(&self) -> usize {
        self.k_vote
    }
}

impl FittedClassifier for KnnClassifier {
    fn predict(&self, query: ArrayView1<'_, f64>) -> Result<(u8, f64)> {
        let k = self.k_vote.min(self.index.len());
        let neighbors = self.index.k_nearest(query, k)?;
        let votes1 = neighbors
            .indices
            .iter()
            .filter(|&&i| self.labels[i] == 1)
            .count();
        let score = votes1 as f64 / k as f64;
        let label = match (2 * votes1).cmp(&k) {
            std::cmp::Ordering::Greater => 1,
            std::cmp::Ordering::Less => 0,
            // Exact tie: a coin keyed by the query's bit pattern, so the
            // outcome is reproducible for a given seed and independent of
            // prediction order.
            std::cmp::Ordering::Equal => {
                let mut h = 0u64;
                for v in query.iter() {
                    h = h.rotate_left(11) ^ v.to_bits();
                }
                (self.stream.child(h).uniform() < 0.5) as u8
            }
        };
        Ok((label, score))
    }
}

/// Fraction of disagreeing labels.
pub fn misclassification_risk(predicted: &[u8], truth: &[u8]) -> Result<f64> {
    if predicted.is_empty() {
        return Err(Error::EmptyInput("predictions"));
    }
    if predicted.len() != truth.len() {
        return Err(Error::DimensionMismatch { expected: truth.len(), got: predicted.len() });
    }
    let wrong = predicted.iter().zip(truth).filter(|(a, b)| a != b).count();
    Ok(wrong as f64 / predicted.len() as f64)
}

/// Area under the ROC curve in the rank-statistic form; tied scores
/// contribute one half, matching the trapezoidal area.
pub fn roc_auc(scores: &[f64], truth: &[u8]) -> Result<f64> {
    if scores.len() != truth.len() {
        return Err(Error::DimensionMismatch { expected: truth.len(), got: scores.len() });
    }
    if scores.iter().any(|s| !s.is_finite()) {
        return Err(Error::NonFinite("scores"));
    }
    let n1 = truth.iter().filter(|&&y| y == 1).count();
    let n0 = truth.len() - n1;
    if n0 == 0 || n1 == 0 {
        return Err(Error::ClassMissing {
            class: if n1 == 0 { 1 } else { 0 },
            part: "ROC truth labels",
        });
    }

    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));

    // Midranks over tied score groups; rank sum of the positive class.
    let mut rank_sum_pos = 0.0f64;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j < order.len() && scores[order[j]] == scores[order[i]] {
            j += 1;
        }
        let midrank = (i + 1 + j) as f64 / 2.0;
        for &idx in &order[i..j] {
            if truth[idx] == 1 {
                rank_sum_pos += midrank;
            }
        }
        i = j;
    }
    let n1 = n1 as f64;
    Ok((rank_sum_pos - n1 * (n1 + 1.0) / 2.0) / (n1 * n0 as f64))
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::{array, Array2};

    fn stream() -> RandomStream {
        RandomStream::new(60)
    }

    #[test]
    fn one_neighbor_returns_its_label() {
        let x = array![[0.0, 0.0], [1.0, 1.0], [2.0, 2.0]];
        let y = vec![1, 0, 1];
        let clf = KnnClassifier::new(x.view(), &y, 1, stream()).unwrap();
        for i in 0..3 {
            let (label, score) = clf.predict(x.row(i)).unwrap();
            assert_eq!(label, y[i]);
            assert_eq!(score, y[i] as f64);
        }
    }

    #[test]
    fn three_vote_majority() {
        // Neighbors of the origin carry labels {1, 1, 0}.
        let x = array![[0.1], [0.2], [0.3], [9.0]];
        let y = vec![1, 1, 0, 0];
        let clf = KnnClassifier::new(x.view(), &y, 3, stream()).unwrap();
        let (label, score) = clf.predict(array![0.0].view(), ).unwrap();
        assert_eq!(label, 1);
        assert!((score - 2.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn matches_brute_force_votes() {
        let s = stream();
        let n = 150;
        let x = Array2::from_shape_vec((n, 3), s.child(0).gaussian(3 * n)).unwrap();
        let us = s.child(1).uniforms(n);
        let y: Vec<u8> = us.iter().map(|&u| (u < 0.5) as u8).collect();
        let clf = KnnClassifier::new(x.view(), &y, 7, s.child(2)).unwrap();

        let queries = Array2::from_shape_vec((100, 3), s.child(3).gaussian(300)).unwrap();
        for q in queries.rows() {
            let (_, score) = clf.predict(q).unwrap();
            // Brute-force recomputation of the vote.
            let mut pairs: Vec<(f64, usize)> = (0..n)
                .map(|i| {
                    let d2: f64 = x
                        .row(i)
                        .iter()
                        .zip(q.iter())
                        .map(|(a, b)| (a - b) * (a - b))
                        .sum();
                    (d2, i)
                })
                .collect();
            pairs.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
            let votes = pairs[..7].iter().filter(|&&(_, i)| y[i] == 1).count();
            assert_eq!(score, votes as f64 / 7.0);
        }
    }

    #[test]
    fn tie_break_is_reproducible() {
        let x = array![[0.0], [2.0]];
        let y = vec![0, 1];
        let q = array![1.0];
        let clf = KnnClassifier::new(x.view(), &y, 2, RandomStream::new(1)).unwrap();
        let first = clf.predict(q.view()).unwrap();
        for _ in 0..5 {
            assert_eq!(clf.predict(q.view()).unwrap(), first);
        }
        // Some seed yields the other outcome.
        let mut saw_other = false;
        for seed in 0..50 {
            let c = KnnClassifier::new(x.view(), &y, 2, RandomStream::new(seed)).unwrap();
            if c.predict(q.view()).unwrap().0 != first.0 {
                saw_other = true;
                break;
            }
        }
        assert!(saw_other);
    }

    #[test]
    fn empty_training_set_rejected() {
        let x = Array2::<f64>::zeros((0, 2));
        assert!(KnnClassifier::new(x.view(), &[], 3, stream()).is_err());
    }

    #[test]
    fn risk_trivial_cases() {
        assert_eq!(misclassification_risk(&[1, 0, 1], &[1, 0, 1]).unwrap(), 0.0);
        assert_eq!(misclassification_risk(&[1, 0], &[0, 1]).unwrap(), 1.0);
        assert_eq!(
            misclassification_risk(&[1, 0, 1, 1], &[1, 1, 1, 0]).unwrap(),
            0.5
        );
        assert!(misclassification_risk(&[], &[]).is_err());
    }

    #[test]
    fn auc_trivial_cases() {
        let truth = vec![0, 0, 1, 1];
        assert_eq!(roc_auc(&[0.1, 0.2, 0.8, 0.9], &truth).unwrap(), 1.0);
        assert_eq!(roc_auc(&[0.5, 0.5, 0.5, 0.5], &truth).unwrap(), 0.5);
        assert!(roc_auc(&[0.1, 0.2], &[1, 1]).is_err());
    }

    #[test]
    fn auc_matches_pairwise_comparison() {
        let s = stream().child(10);
        let n = 30;
        // Coarse scores force plenty of ties.
        let scores: Vec<f64> = s
            .child(0)
            .uniforms(n)
            .iter()
            .map(|u| (u * 5.0).floor() / 5.0)
            .collect();
        let us = s.child(1).uniforms(n);
        let truth: Vec<u8> = us.iter().map(|&u| (u < 0.4) as u8).collect();
        if truth.iter().all(|&y| y == truth[0]) {
            return;
        }
        let got = roc_auc(&scores, &truth).unwrap();

        let mut wins = 0.0;
        let mut pairs = 0.0;
        for i in 0..n {
            for j in 0..n {
                if truth[i] == 1 && truth[j] == 0 {
                    pairs += 1.0;
                    if scores[i] > scores[j] {
                        wins += 1.0;
                    } else if scores[i] == scores[j] {
                        wins += 0.5;
                    }
                }
            }
        }
        assert!((got - wins / pairs).abs() < 1e-12);
    }

    #[test]
    fn auc_invariant_under_monotone_transform() {
        let s = stream().child(20);
        let scores = s.child(0).uniforms(40);
        let us = s.child(1).uniforms(40);
        let truth: Vec<u8> = us.iter().map(|&u| (u < 0.5) as u8).collect();
        let base = roc_auc(&scores, &truth).unwrap();
        let squashed: Vec<f64> = scores.iter().map(|&v| (3.0 * v).exp()).collect();
        assert_eq!(roc_auc(&squashed, &truth).unwrap(), base);
    }
}
