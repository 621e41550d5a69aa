//! Exact k-nearest-neighbor search over the covariate cloud.
//!
//! The index is a k-d tree with full backtracking, so every query returns
//! exactly the same answer as a brute-force distance scan. Ties in distance
//! are broken by the smaller original index; the data may contain
//! duplicates, so a deterministic rule is required even though it is a
//! measure-zero event for continuous covariates.

use ndarray::{Array2, ArrayView1};
use std::cmp::Ordering;
use std::collections::BinaryHeap;

use crate::error::{Error, Result};

/// The covariate cloud: n points in p dimensions.
#[derive(Debug, Clone)]
pub struct PointCloud {
    data: Array2<f64>,
}

impl PointCloud {
    pub fn new(data: Array2<f64>) -> Result<Self> {
        if data.nrows() == 0 {
            return Err(Error::EmptyInput("point cloud has no rows"));
        }
        if data.ncols() == 0 {
            return Err(Error::EmptyInput("point cloud has no columns"));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("point cloud"));
        }
        Ok(PointCloud { data })
    }

    pub fn len(&self) -> usize {
        self.data.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.data.nrows() == 0
    }

    pub fn dim(&self) -> usize {
        self.data.ncols()
    }

    pub fn points(&self) -> &Array2<f64> {
        &self.data
    }
}

/// The k nearest points to one query.
#[derive(Debug, Clone, PartialEq)]
pub struct NeighborSet {
    /// Data indices ordered by (distance, index).
    pub indices: Vec<usize>,
    /// Matching nondecreasing Euclidean distances.
    pub distances: Vec<f64>,
    /// Empirical bandwidth: the distance of the k-th neighbor.
    pub bandwidth: f64,
}

enum Node {
    Leaf {
        start: u32,
        end: u32,
    },
    Split {
        axis: u16,
        /// Largest coordinate on `axis` among points in the left subtree.
        lmax: f64,
        /// Smallest coordinate on `axis` among points in the right subtree.
        rmin: f64,
        left: u32,
        right: u32,
    },
}

/// Immutable exact-search index; concurrent read-only queries are safe.
pub struct NeighborIndex {
    data: Vec<f64>,
    n: usize,
    p: usize,
    perm: Vec<u32>,
    nodes: Vec<Node>,
    root: u32,
}

const LEAF_SIZE: usize = 8;

/// Build an exact k-NN index over the cloud.
pub fn build_index(cloud: &PointCloud) -> Result<NeighborIndex> {
    NeighborIndex::build(cloud)
}

impl NeighborIndex {
    pub fn build(cloud: &PointCloud) -> Result<Self> {
        let n = cloud.len();
        let p = cloud.dim();
        let data: Vec<f64> = cloud.points().iter().copied().collect();
        let mut index = NeighborIndex {
            data,
            n,
            p,
            perm: (0..n as u32).collect(),
            nodes: Vec::new(),
            root: 0,
        };
        index.root = index.build_node(0, n);
        Ok(index)
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn dim(&self) -> usize {
        self.p
    }

    fn coord(&self, point: u32, axis: usize) -> f64 {
        self.data[point as usize * self.p + axis]
    }

    fn build_node(&mut self, start: usize, end: usize) -> u32 {
        let len = end - start;
        // Widest-spread axis; a zero spread means all points coincide.
        let mut best_axis = 0;
        let mut best_spread = -1.0;
        for axis in 0..self.p {
            let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
            for &i in &self.perm[start..end] {
                let c = self.coord(i, axis);
                lo = lo.min(c);
                hi = hi.max(c);
            }
            let spread = hi - lo;
            if spread > best_spread {
                best_spread = spread;
                best_axis = axis;
            }
        }
        if len <= LEAF_SIZE || best_spread <= 0.0 {
            self.nodes.push(Node::Leaf { start: start as u32, end: end as u32 });
            return (self.nodes.len() - 1) as u32;
        }

        let mid = len / 2;
        let axis = best_axis;
        let (p, data) = (self.p, &self.data);
        self.perm[start..end].select_nth_unstable_by(mid, |&a, &b| {
            let ca = data[a as usize * p + axis];
            let cb = data[b as usize * p + axis];
            ca.total_cmp(&cb)
        });
        let mut lmax = f64::NEG_INFINITY;
        for &i in &self.perm[start..start + mid] {
            lmax = lmax.max(self.coord(i, axis));
        }
        let mut rmin = f64::INFINITY;
        for &i in &self.perm[start + mid..end] {
            rmin = rmin.min(self.coord(i, axis));
        }

        let left = self.build_node(start, start + mid);
        let right = self.build_node(start + mid, end);
        self.nodes.push(Node::Split { axis: axis as u16, lmax, rmin, left, right });
        (self.nodes.len() - 1) as u32
    }

    fn dist2(&self, point: u32, query: &[f64]) -> f64 {
        let row = &self.data[point as usize * self.p..(point as usize + 1) * self.p];
        row.iter()
            .zip(query)
            .map(|(a, b)| {
                let d = a - b;
                d * d
            })
            .sum()
    }

    fn search(&self, node: u32, query: &[f64], k: usize, heap: &mut BinaryHeap<Candidate>) {
        match self.nodes[node as usize] {
            Node::Leaf { start, end } => {
                for &i in &self.perm[start as usize..end as usize] {
                    let cand = Candidate { dist2: self.dist2(i, query), index: i };
                    if heap.len() < k {
                        heap.push(cand);
                    } else if cand < *heap.peek().expect("heap nonempty") {
                        heap.pop();
                        heap.push(cand);
                    }
                }
            }
            Node::Split { axis, lmax, rmin, left, right } => {
                let q = query[axis as usize];
                // Lower bounds on the squared distance to each side.
                let lb_left = (q - lmax).max(0.0);
                let lb_right = (rmin - q).max(0.0);
                let (near, far, far_bound) = if lb_left <= lb_right {
                    (left, right, lb_right)
                } else {
                    (right, left, lb_left)
                };
                self.search(near, query, k, heap);
                // `<=` keeps equal-distance candidates reachable for the
                // smaller-index tie rule.
                let worst = if heap.len() < k {
                    f64::INFINITY
                } else {
                    heap.peek().expect("heap nonempty").dist2
                };
                if far_bound * far_bound <= worst {
                    self.search(far, query, k, heap);
                }
            }
        }
    }

    /// Exact k nearest neighbors of `x`, ties broken by smaller index.
    pub fn k_nearest(&self, x: ArrayView1<'_, f64>, k: usize) -> Result<NeighborSet> {
        k_nearest(self, x, k)
    }
}

/// Max-heap entry ordered lexicographically by (squared distance, index).
#[derive(Copy, Clone, PartialEq)]
struct Candidate {
    dist2: f64,
    index: u32,
}

impl Eq for Candidate {}

impl Ord for Candidate {
    fn cmp(&self, other: &Self) -> Ordering {
        self.dist2
            .total_cmp(&other.dist2)
            .then(self.index.cmp(&other.index))
    }
}

impl PartialOrd for Candidate {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// Query the index for the k nearest points to `x`.
pub fn k_nearest(index: &NeighborIndex, x: ArrayView1<'_, f64>, k: usize) -> Result<NeighborSet> {
    if k == 0 {
        return Err(Error::InvalidArgument("k must be at least 1".into()));
    }
    if k > index.n {
        return Err(Error::KTooLarge { k, n: index.n });
    }
    if x.len() != index.p {
        return Err(Error::DimensionMismatch { expected: index.p, got: x.len() });
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("query point"));
    }
    let query: Vec<f64> = x.iter().copied().collect();
    let mut heap = BinaryHeap::with_capacity(k + 1);
    index.search(index.root, &query, k, &mut heap);
    let mut found = heap.into_vec();
    found.sort_unstable();
    let indices: Vec<usize> = found.iter().map(|c| c.index as usize).collect();
    let distances: Vec<f64> = found.iter().map(|c| c.dist2.sqrt()).collect();
    let bandwidth = *distances.last().expect("k >= 1");
    Ok(NeighborSet { indices, distances, bandwidth })
}

/// Natural log of the Gamma function (Lanczos approximation, g = 7).
fn ln_gamma(x: f64) -> f64 {
    const COEFFS: [f64; 8] = [
        676.5203681218851,
        -1259.1392167224028,
        771.32342877765313,
        -176.61502916214059,
        12.507343278686905,
        -0.13857109526572012,
        9.9843695780195716e-6,
        1.5056327351493116e-7,
    ];
    // Reflection is not needed for x > 0, which is all this crate uses.
    debug_assert!(x > 0.0);
    let x = x - 1.0;
    let mut acc = 0.99999999999980993;
    for (i, &c) in COEFFS.iter().enumerate() {
        acc += c / (x + i as f64 + 1.0);
    }
    let t = x + 7.5;
    0.5 * (2.0 * std::f64::consts::PI).ln() + (x + 0.5) * t.ln() - t + acc.ln()
}

/// Volume of the Euclidean unit ball in `p` dimensions.
pub fn unit_ball_volume(p: usize) -> f64 {
    let half_p = p as f64 / 2.0;
    (half_p * std::f64::consts::PI.ln() - ln_gamma(half_p + 1.0)).exp()
}

/// Population counterpart of the empirical k-NN bandwidth:
/// `((k/n) / (f V_p))^(1/p)` with `V_p` the unit-ball volume.
pub fn theoretical_bandwidth(k: usize, n: usize, p: usize, density_at_x: f64) -> Result<f64> {
    if k == 0 || n == 0 || p == 0 {
        return Err(Error::InvalidArgument(
            "k, n, and p must all be positive".into(),
        ));
    }
    if !(density_at_x > 0.0) || !density_at_x.is_finite() {
        return Err(Error::InvalidArgument(
            "density_at_x must be positive and finite".into(),
        ));
    }
    let ratio = k as f64 / n as f64 / (density_at_x * unit_ball_volume(p));
    Ok(ratio.powf(1.0 / p as f64))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::RandomStream;
    use ndarray::{array, Array1, Array2};

    fn cloud_from_rows(rows: &[Vec<f64>]) -> PointCloud {
        let p = rows[0].len();
        let flat: Vec<f64> = rows.iter().flatten().copied().collect();
        PointCloud::new(Array2::from_shape_vec((rows.len(), p), flat).unwrap()).unwrap()
    }

    fn random_cloud(n: usize, p: usize, stream: &RandomStream) -> PointCloud {
        let flat = stream.gaussian(n * p);
        PointCloud::new(Array2::from_shape_vec((n, p), flat).unwrap()).unwrap()
    }

    /// Brute-force oracle: sort all (distance, index) pairs and take k.
    fn brute_force(cloud: &PointCloud, x: ArrayView1<'_, f64>, k: usize) -> NeighborSet {
        let mut pairs: Vec<(f64, usize)> = cloud
            .points()
            .rows()
            .into_iter()
            .enumerate()
            .map(|(i, row)| {
                let d2: f64 = row.iter().zip(x.iter()).map(|(a, b)| (a - b) * (a - b)).sum();
                (d2, i)
            })
            .collect();
        pairs.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        pairs.truncate(k);
        let indices = pairs.iter().map(|&(_, i)| i).collect();
        let distances: Vec<f64> = pairs.iter().map(|&(d2, _)| d2.sqrt()).collect();
        let bandwidth = *distances.last().unwrap();
        NeighborSet { indices, distances, bandwidth }
    }

    #[test]
    fn line_queries() {
        let cloud = cloud_from_rows(&[vec![0.0], vec![1.0], vec![2.0], vec![3.0]]);
        let index = build_index(&cloud).unwrap();

        let ns = index.k_nearest(array![0.0].view(), 2).unwrap();
        assert_eq!(ns.indices, vec![0, 1]);
        assert_eq!(ns.bandwidth, 1.0);

        let ns = index.k_nearest(array![1.4].view(), 2).unwrap();
        assert_eq!(ns.indices, vec![1, 2]);
        assert!((ns.bandwidth - 0.6).abs() < 1e-12);
    }

    #[test]
    fn single_point_answers_every_query() {
        let cloud = cloud_from_rows(&[vec![1.0, 2.0]]);
        let index = build_index(&cloud).unwrap();
        for q in [array![0.0, 0.0], array![5.0, -3.0], array![1.0, 2.0]] {
            let ns = index.k_nearest(q.view(), 1).unwrap();
            assert_eq!(ns.indices, vec![0]);
        }
    }

    #[test]
    fn duplicated_points_returned_before_farther_ones() {
        let cloud = cloud_from_rows(&[vec![5.0, 5.0], vec![0.0, 0.0], vec![0.0, 0.0]]);
        let index = build_index(&cloud).unwrap();
        let ns = index.k_nearest(array![0.1, 0.0].view(), 2).unwrap();
        assert_eq!(ns.indices, vec![1, 2]);
    }

    #[test]
    fn tie_broken_by_smaller_index() {
        // Points 0 and 1 are equidistant from the query.
        let cloud = cloud_from_rows(&[vec![1.0], vec![-1.0], vec![10.0]]);
        let index = build_index(&cloud).unwrap();
        let ns = index.k_nearest(array![0.0].view(), 1).unwrap();
        assert_eq!(ns.indices, vec![0]);
        let ns = index.k_nearest(array![0.0].view(), 2).unwrap();
        assert_eq!(ns.indices, vec![0, 1]);
    }

    #[test]
    fn matches_brute_force_on_small_plane() {
        let cloud = cloud_from_rows(&[
            vec![0.0, 0.0],
            vec![1.0, 0.0],
            vec![0.0, 1.0],
            vec![1.0, 1.0],
        ]);
        let index = build_index(&cloud).unwrap();
        let stream = RandomStream::new(11);
        let queries = stream.gaussian(200);
        for q in queries.chunks(2) {
            let x = Array1::from_vec(q.to_vec());
            for k in 1..=4 {
                let got = index.k_nearest(x.view(), k).unwrap();
                let want = brute_force(&cloud, x.view(), k);
                assert_eq!(got, want);
            }
        }
    }

    #[test]
    fn matches_brute_force_in_five_dimensions() {
        let stream = RandomStream::new(7);
        let cloud = random_cloud(200, 5, &stream.child(0));
        let index = build_index(&cloud).unwrap();
        let queries = stream.child(1).gaussian(50 * 5);
        for q in queries.chunks(5) {
            let x = Array1::from_vec(q.to_vec());
            let got = index.k_nearest(x.view(), 10).unwrap();
            let want = brute_force(&cloud, x.view(), 10);
            assert_eq!(got, want);
        }
    }

    #[test]
    fn bandwidth_nondecreasing_in_k() {
        let stream = RandomStream::new(3);
        let cloud = random_cloud(120, 3, &stream.child(0));
        let index = build_index(&cloud).unwrap();
        let x = Array1::from_vec(stream.child(1).gaussian(3));
        let mut prev = 0.0;
        for k in 1..=120 {
            let ns = index.k_nearest(x.view(), k).unwrap();
            assert!(ns.bandwidth >= prev);
            assert_eq!(ns.bandwidth, *ns.distances.last().unwrap());
            prev = ns.bandwidth;
        }
    }

    #[test]
    fn permuting_points_permutes_indices() {
        let stream = RandomStream::new(21);
        let n = 80;
        let cloud = random_cloud(n, 4, &stream.child(0));
        let perm = stream.child(1).shuffle(n);
        let mut permuted = Array2::zeros((n, 4));
        for (new_row, &old_row) in perm.iter().enumerate() {
            permuted.row_mut(new_row).assign(&cloud.points().row(old_row));
        }
        let permuted = PointCloud::new(permuted).unwrap();
        let index_a = build_index(&cloud).unwrap();
        let index_b = build_index(&permuted).unwrap();

        let x = Array1::from_vec(stream.child(2).gaussian(4));
        let a = index_a.k_nearest(x.view(), 12).unwrap();
        let b = index_b.k_nearest(x.view(), 12).unwrap();
        assert_eq!(a.distances, b.distances);
        assert_eq!(a.bandwidth, b.bandwidth);
        // b's indices refer to permuted rows of the same points.
        let mapped: Vec<usize> = b.indices.iter().map(|&i| perm[i]).collect();
        let mut want = a.indices.clone();
        let mut got = mapped;
        want.sort_unstable();
        got.sort_unstable();
        assert_eq!(want, got);
    }

    #[test]
    fn query_errors() {
        let cloud = cloud_from_rows(&[vec![0.0, 0.0], vec![1.0, 1.0]]);
        let index = build_index(&cloud).unwrap();
        assert!(matches!(
            index.k_nearest(array![0.0, 0.0].view(), 3),
            Err(Error::KTooLarge { k: 3, n: 2 })
        ));
        assert!(index.k_nearest(array![f64::NAN, 0.0].view(), 1).is_err());
        assert!(index.k_nearest(array![0.0].view(), 1).is_err());
        assert!(index.k_nearest(array![0.0, 0.0].view(), 0).is_err());
    }

    #[test]
    fn empty_cloud_rejected() {
        assert!(PointCloud::new(Array2::zeros((0, 3))).is_err());
    }

    #[test]
    fn unit_ball_volumes() {
        assert!((unit_ball_volume(1) - 2.0).abs() < 1e-12);
        assert!((unit_ball_volume(2) - std::f64::consts::PI).abs() < 1e-12);
        assert!((unit_ball_volume(3) - 4.0 * std::f64::consts::PI / 3.0).abs() < 1e-12);
    }

    #[test]
    fn theoretical_bandwidth_values() {
        // p = 1: V_1 = 2, so ((k/n)/(f*2))^1.
        let r = theoretical_bandwidth(100, 10_000, 1, 0.5).unwrap();
        assert!((r - 0.01).abs() < 1e-14);
        // k = n, p = 2, f = 1/pi cancels V_2 = pi.
        let r = theoretical_bandwidth(500, 500, 2, 1.0 / std::f64::consts::PI).unwrap();
        assert!((r - 1.0).abs() < 1e-12);
        // p = 3 numeric evaluation against V_3 = 4*pi/3.
        let want = (0.01 * 3.0 / (4.0 * std::f64::consts::PI)).powf(1.0 / 3.0);
        let r = theoretical_bandwidth(100, 10_000, 3, 1.0).unwrap();
        assert!((r - want).abs() < 1e-12);

        assert!(theoretical_bandwidth(0, 10, 1, 1.0).is_err());
        assert!(theoretical_bandwidth(1, 10, 1, 0.0).is_err());
        assert!(theoretical_bandwidth(1, 10, 1, -1.0).is_err());
    }
}
