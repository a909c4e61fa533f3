use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::scalar::Scalar;
use crate::seed::rng_from_seed;

/// Lloyd stops once no centroid moves farther than this.
pub const CONVERGENCE_TOL: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct KMeansModel<T> {
    pub k: usize,
    pub centroids: Matrix<T>,
    pub seed: u64,
    /// Within-cluster sum of squares after each assignment step.
    #[serde(skip)]
    pub inertia_history: Vec<T>,
}

fn sq_dist<T: Scalar>(a: &[T], b: &[T]) -> T {
    a.iter().zip(b).map(|(&x, &y)| (x - y) * (x - y)).sum()
}

/// Index and squared distance of the nearest centroid (lowest index on ties).
fn nearest<T: Scalar>(point: &[T], centroids: &Matrix<T>) -> (usize, T) {
    let mut best = (0, T::infinity());
    for (c, centroid) in centroids.iter_rows().enumerate() {
        let d = sq_dist(point, centroid);
        if d < best.1 {
            best = (c, d);
        }
    }
    best
}

fn plus_plus_init<T: Scalar>(data: &Matrix<T>, k: usize, seed: u64) -> Matrix<T> {
    let mut rng = rng_from_seed(seed);
    let n = data.rows();
    let mut chosen = vec![rng.random_range(0..n)];
    let mut d2: Vec<f64> = data.iter_rows().map(|r| sq_dist(r, data.row(chosen[0])).as_f64()).collect();
    while chosen.len() < k {
        let total: f64 = d2.iter().sum();
        let next = if total > 0.0 {
            let mut target = rng.random_range(0.0..total);
            let mut pick = n - 1;
            for (i, &w) in d2.iter().enumerate() {
                if target < w {
                    pick = i;
                    break;
                }
                target -= w;
            }
            pick
        } else {
            rng.random_range(0..n)
        };
        chosen.push(next);
        for (i, row) in data.iter_rows().enumerate() {
            d2[i] = d2[i].min(sq_dist(row, data.row(next)).as_f64());
        }
    }
    data.select_rows(&chosen)
}

/// k-means++ seeding followed by Lloyd iterations.
///
/// A cluster that loses all its points is moved onto the point farthest
/// from its assigned centroid.
pub fn kmeans_fit<T: Scalar>(data: &Matrix<T>, k: usize, seed: u64, max_iter: usize) -> Result<KMeansModel<T>> {
    let (n, d) = data.shape();
    if k == 0 {
        return Err(Error::Config("k must be ≥ 1".into()));
    }
    if n < k {
        return Err(Error::Data(format!("k-means needs at least k = {k} rows, got {n}")));
    }
    let mut centroids = plus_plus_init(data, k, seed);
    let mut assignment = vec![0usize; n];
    let mut dists = vec![T::zero(); n];
    let mut history = Vec::new();
    let tol = T::lit(CONVERGENCE_TOL);

    for _ in 0..max_iter.max(1) {
        for (i, row) in data.iter_rows().enumerate() {
            let (c, dist) = nearest(row, &centroids);
            assignment[i] = c;
            dists[i] = dist;
        }
        history.push(dists.iter().copied().sum());

        let mut sums = Matrix::zeros(k, d);
        let mut counts = vec![0usize; k];
        for (i, row) in data.iter_rows().enumerate() {
            counts[assignment[i]] += 1;
            for (s, &x) in sums.row_mut(assignment[i]).iter_mut().zip(row) {
                *s += x;
            }
        }
        let mut updated = sums;
        let mut taken: Vec<usize> = Vec::new();
        for c in 0..k {
            if counts[c] > 0 {
                let count = T::from_count(counts[c]);
                updated.row_mut(c).iter_mut().for_each(|s| *s /= count);
            } else {
                let far = (0..n)
                    .filter(|i| !taken.contains(i))
                    .max_by(|&a, &b| dists[a].partial_cmp(&dists[b]).expect("finite").then(b.cmp(&a)))
                    .expect("n ≥ k");
                taken.push(far);
                updated.row_mut(c).copy_from_slice(data.row(far));
            }
        }
        let shift = (0..k)
            .map(|c| sq_dist(updated.row(c), centroids.row(c)).sqrt())
            .fold(T::zero(), T::max);
        centroids = updated;
        if shift < tol {
            break;
        }
    }
    if !centroids.is_finite() {
        return Err(Error::Numeric("k-means produced non-finite centroids".into()));
    }
    Ok(KMeansModel {
        k,
        centroids,
        seed,
        inertia_history: history,
    })
}

/// Euclidean distance to the nearest centroid.
pub fn kmeans_score<T: Scalar>(model: &KMeansModel<T>, query: &Matrix<T>) -> Result<Vec<T>> {
    if query.cols() != model.centroids.cols() {
        return Err(Error::DimensionMismatch {
            expected: model.centroids.cols(),
            found: query.cols(),
        });
    }
    Ok(query.iter_rows().map(|r| nearest(r, &model.centroids).1.sqrt()).collect())
}
