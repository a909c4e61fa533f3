use rand::seq::index::sample;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::scalar::Scalar;
use crate::seed::{rng_from_seed, Rng};

const EULER_GAMMA: f64 = 0.577_215_664_901_532_9;

/// Average path length of an unsuccessful binary-search-tree lookup among
/// `n` keys; normalizes isolation depths.
pub fn average_path_length(n: usize) -> f64 {
    match n {
        0 | 1 => 0.0,
        2 => 1.0,
        _ => {
            let n = n as f64;
            2.0 * ((n - 1.0).ln() + EULER_GAMMA) - 2.0 * (n - 1.0) / n
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", bound = "T: Scalar")]
pub enum Node<T> {
    /// Rows with `x[feature] < split` go left.
    Internal {
        feature: usize,
        split: T,
        left: Box<Node<T>>,
        right: Box<Node<T>>,
    },
    Leaf { size: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct IsolationTree<T> {
    pub root: Node<T>,
}

impl<T: Scalar> IsolationTree<T> {
    /// Grows a tree on `rows`. The result depends only on the multiset of
    /// rows and the random stream, not on the order of `rows`.
    pub fn build(rows: &[&[T]], height_limit: usize, rng: &mut Rng) -> Self {
        Self {
            root: grow(rows.to_vec(), 0, height_limit, rng),
        }
    }

    /// Depth at which `x` lands, plus the expected remaining depth of the
    /// leaf's unresolved points.
    pub fn path_length(&self, x: &[T]) -> f64 {
        let mut node = &self.root;
        let mut depth = 0usize;
        loop {
            match node {
                Node::Internal {
                    feature,
                    split,
                    left,
                    right,
                } => {
                    node = if x[*feature] < *split { left } else { right };
                    depth += 1;
                }
                Node::Leaf { size } => return depth as f64 + average_path_length(*size),
            }
        }
    }

    pub fn height(&self) -> usize {
        fn h<T>(n: &Node<T>) -> usize {
            match n {
                Node::Internal { left, right, .. } => 1 + h(left).max(h(right)),
                Node::Leaf { .. } => 0,
            }
        }
        h(&self.root)
    }
}

fn grow<T: Scalar>(mut rows: Vec<&[T]>, depth: usize, limit: usize, rng: &mut Rng) -> Node<T> {
    if depth >= limit || rows.len() <= 1 {
        return Node::Leaf { size: rows.len() };
    }
    let d = rows[0].len();
    let range = |j: usize| {
        rows.iter().fold((T::infinity(), T::neg_infinity()), |(lo, hi), r| {
            (lo.min(r[j]), hi.max(r[j]))
        })
    };
    let splittable: Vec<usize> = (0..d).filter(|&j| {
        let (lo, hi) = range(j);
        hi > lo
    }).collect();
    if splittable.is_empty() {
        return Node::Leaf { size: rows.len() };
    }
    let feature = splittable[rng.random_range(0..splittable.len())];
    let (lo, hi) = range(feature);
    let u: f64 = rng.random();
    let mut split = lo + T::lit(u) * (hi - lo);
    if split <= lo {
        split = hi;
    }
    let right: Vec<&[T]> = rows.iter().copied().filter(|r| r[feature] >= split).collect();
    rows.retain(|r| r[feature] < split);
    Node::Internal {
        feature,
        split,
        left: Box::new(grow(rows, depth + 1, limit, rng)),
        right: Box::new(grow(right, depth + 1, limit, rng)),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct IsolationForestModel<T> {
    pub n_trees: usize,
    pub subsample_size: usize,
    pub n_features: usize,
    pub trees: Vec<IsolationTree<T>>,
    pub seed: u64,
}

pub fn height_limit(subsample_size: usize) -> usize {
    (subsample_size as f64).log2().ceil() as usize
}

/// Fits `n_trees` trees, each on a fresh subsample of `subsample_size` rows.
/// A subsample larger than the data is clamped to the data size.
pub fn iforest_fit<T: Scalar>(
    data: &Matrix<T>,
    n_trees: usize,
    subsample_size: usize,
    seed: u64,
) -> Result<IsolationForestModel<T>> {
    let n = data.rows();
    if n < 2 {
        return Err(Error::Data(format!("isolation forest needs at least 2 rows, got {n}")));
    }
    if n_trees == 0 {
        return Err(Error::Config("n_trees must be ≥ 1".into()));
    }
    if subsample_size < 2 {
        return Err(Error::Config("subsample size must be ≥ 2".into()));
    }
    let psi = if subsample_size > n {
        log::warn!("isolation forest subsample {subsample_size} exceeds {n} rows; clamping to {n}");
        n
    } else {
        subsample_size
    };
    let limit = height_limit(psi);
    let mut rng = rng_from_seed(seed);
    let trees = (0..n_trees)
        .map(|_| {
            let picked = sample(&mut rng, n, psi);
            let rows: Vec<&[T]> = picked.iter().map(|i| data.row(i)).collect();
            IsolationTree::build(&rows, limit, &mut rng)
        })
        .collect();
    Ok(IsolationForestModel {
        n_trees,
        subsample_size: psi,
        n_features: data.cols(),
        trees,
        seed,
    })
}

impl<T: Scalar> IsolationForestModel<T> {
    pub fn mean_path_length(&self, x: &[T]) -> f64 {
        self.trees.iter().map(|t| t.path_length(x)).sum::<f64>() / self.trees.len() as f64
    }
}

/// `s(x) = 2^(-E[h(x)] / c(psi))`, in `(0, 1]`; higher is more anomalous.
pub fn iforest_score<T: Scalar>(model: &IsolationForestModel<T>, query: &Matrix<T>) -> Result<Vec<T>> {
    if query.cols() != model.n_features {
        return Err(Error::DimensionMismatch {
            expected: model.n_features,
            found: query.cols(),
        });
    }
    let c = average_path_length(model.subsample_size);
    Ok(query
        .iter_rows()
        .map(|r| T::lit(2f64.powf(-model.mean_path_length(r) / c)))
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand_distr::StandardNormal;

    #[test]
    fn normalizer_values() {
        assert_eq!(average_path_length(1), 0.0);
        assert_eq!(average_path_length(2), 1.0);
        let c256 = 2.0 * (255f64.ln() + EULER_GAMMA) - 2.0 * 255.0 / 256.0;
        assert!((average_path_length(256) - c256).abs() < 1e-12);
        assert_eq!(height_limit(256), 8);
        assert_eq!(height_limit(2), 1);
    }

    #[test]
    fn two_points_split_at_root() {
        let data = Matrix::from_rows(&[[0.0, 1.0], [1.0, 3.0]]).unwrap();
        let model = iforest_fit(&data, 1, 2, 4).unwrap();
        let tree = &model.trees[0];
        match &tree.root {
            Node::Internal { left, right, .. } => {
                assert_eq!(**left, Node::Leaf { size: 1 });
                assert_eq!(**right, Node::Leaf { size: 1 });
            }
            leaf => panic!("expected a split, got {leaf:?}"),
        }
        assert_eq!(tree.path_length(data.row(0)), 1.0);
        assert_eq!(tree.path_length(data.row(1)), 1.0);
    }

    #[test]
    fn score_formula_fixed_points() {
        // A single leaf holding psi points gives E[h] = c(psi), score 0.5.
        let model = IsolationForestModel {
            n_trees: 1,
            subsample_size: 16,
            n_features: 1,
            trees: vec![IsolationTree { root: Node::Leaf { size: 16 } }],
            seed: 0,
        };
        assert_eq!(iforest_score(&model, &Matrix::from_rows(&[[3.0]]).unwrap()).unwrap(), vec![0.5]);

        let isolated = IsolationForestModel {
            trees: vec![IsolationTree { root: Node::Leaf { size: 1 } }],
            ..model
        };
        assert_eq!(iforest_score(&isolated, &Matrix::from_rows(&[[3.0]]).unwrap()).unwrap(), vec![1.0]);
        assert!(iforest_score(&isolated, &Matrix::zeros(1, 2)).is_err());
    }

    #[test]
    fn hand_built_tree() {
        // root: x0 < 0.5 ? leaf(1) : (x1 < 2 ? leaf(3) : leaf(4))
        let tree = IsolationTree {
            root: Node::Internal {
                feature: 0,
                split: 0.5,
                left: Box::new(Node::Leaf { size: 1 }),
                right: Box::new(Node::Internal {
                    feature: 1,
                    split: 2.0,
                    left: Box::new(Node::Leaf { size: 3 }),
                    right: Box::new(Node::Leaf { size: 4 }),
                }),
            },
        };
        let c3 = 2.0 * (2f64.ln() + EULER_GAMMA) - 4.0 / 3.0;
        let c4 = 2.0 * (3f64.ln() + EULER_GAMMA) - 1.5;
        assert_eq!(tree.path_length(&[0.0, 9.0]), 1.0);
        assert!((tree.path_length(&[1.0, 0.0]) - (2.0 + c3)).abs() < 1e-12);
        assert!((tree.path_length(&[1.0, 5.0]) - (2.0 + c4)).abs() < 1e-12);

        let model = IsolationForestModel {
            n_trees: 1,
            subsample_size: 8,
            n_features: 2,
            trees: vec![tree],
            seed: 0,
        };
        let s = iforest_score(&model, &Matrix::from_rows(&[[0.0, 9.0], [1.0, 5.0]]).unwrap()).unwrap();
        let c8 = average_path_length(8);
        assert!((s[0] - 2f64.powf(-1.0 / c8)).abs() < 1e-12);
        assert!((s[1] - 2f64.powf(-(2.0 + c4) / c8)).abs() < 1e-12);
    }

    fn cluster_with_outlier() -> Matrix<f64> {
        let mut rng = rng_from_seed(5);
        Matrix::from_fn(256, 3, |i, _| {
            if i == 0 {
                8.0
            } else {
                0.3 * rng.sample::<f64, _>(StandardNormal)
            }
        })
    }

    #[test]
    fn outlier_isolates_early() {
        let data = cluster_with_outlier();
        let model = iforest_fit(&data, 100, 256, 1).unwrap();
        let outlier = model.mean_path_length(data.row(0));
        let cluster = (1..256).map(|i| model.mean_path_length(data.row(i))).sum::<f64>() / 255.0;
        assert!(outlier < cluster, "{outlier} vs {cluster}");
        assert!(model.trees.iter().all(|t| t.height() <= 8));
        let s = iforest_score(&model, &data).unwrap();
        assert!(s.iter().all(|&v| v > 0.0 && v < 1.0));
    }

    #[test]
    fn seeded_and_order_independent() {
        let data = cluster_with_outlier();
        assert_eq!(iforest_fit(&data, 10, 64, 3).unwrap(), iforest_fit(&data, 10, 64, 3).unwrap());

        let rows: Vec<&[f64]> = data.iter_rows().take(64).collect();
        let mut reversed = rows.clone();
        reversed.reverse();
        let a = IsolationTree::build(&rows, 6, &mut rng_from_seed(8));
        let b = IsolationTree::build(&reversed, 6, &mut rng_from_seed(8));
        assert_eq!(a, b);
    }

    #[test]
    fn oversized_subsample_is_clamped() {
        let data = cluster_with_outlier();
        let model = iforest_fit(&data.select_rows(&[0, 1, 2, 3, 4]), 3, 256, 0).unwrap();
        assert_eq!(model.subsample_size, 5);
    }
}
