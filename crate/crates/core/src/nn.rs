//! Fully connected ReLU networks with hand-derived backpropagation and Adam.

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::scalar::Scalar;
use crate::seed::{rng_from_seed, Rng};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    #[default]
    Relu,
}

/// Shape of an encoder and its optional projection head.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MlpSpec {
    /// `[D, d1, ..., E]`: input width through embedding width.
    pub layer_dims: Vec<usize>,
    /// Applied on hidden layers; the output layer is linear.
    #[serde(default)]
    pub activation: Activation,
    /// `[E, p1, ..., P]`, used only while training.
    #[serde(default)]
    pub projection_dims: Option<Vec<usize>>,
}

impl MlpSpec {
    /// `[input_dim, 64, 64, 32]` encoder with a `[32, 32, 16]` projection head.
    pub fn default_for(input_dim: usize) -> Self {
        Self {
            layer_dims: vec![input_dim, 64, 64, 32],
            activation: Activation::Relu,
            projection_dims: Some(vec![32, 32, 16]),
        }
    }

    pub fn validate(&self) -> Result<()> {
        check_dims(&self.layer_dims, "layer_dims")?;
        if let Some(proj) = &self.projection_dims {
            check_dims(proj, "projection_dims")?;
            if proj[0] != self.embedding_dim() {
                return Err(Error::Config(format!(
                    "projection head input {} must equal embedding width {}",
                    proj[0],
                    self.embedding_dim()
                )));
            }
        }
        Ok(())
    }

    pub fn input_dim(&self) -> usize {
        self.layer_dims[0]
    }

    pub fn embedding_dim(&self) -> usize {
        *self.layer_dims.last().expect("validated spec has layers")
    }
}

fn check_dims(dims: &[usize], what: &str) -> Result<()> {
    if dims.len() < 2 {
        return Err(Error::Config(format!("{what} needs at least two entries")));
    }
    if dims.contains(&0) {
        return Err(Error::Config(format!("{what} entries must be ≥ 1")));
    }
    Ok(())
}

/// One affine layer. `weight` is `fan_in x fan_out`, so `out = x W + b`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dense<T> {
    pub weight: Matrix<T>,
    pub bias: Vec<T>,
}

/// A chain of dense layers: ReLU between layers, identity at the output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(into = "MlpRepr<T>", try_from = "MlpRepr<T>", bound = "T: Scalar")]
pub struct Mlp<T> {
    layers: Vec<Dense<T>>,
}

/// On-disk form: per-layer row-major weights and bias vectors.
#[derive(Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
struct MlpRepr<T> {
    dims: Vec<usize>,
    weights: Vec<Vec<T>>,
    biases: Vec<Vec<T>>,
}

impl<T: Scalar> From<Mlp<T>> for MlpRepr<T> {
    fn from(mlp: Mlp<T>) -> Self {
        let dims = mlp.dims();
        let (weights, biases) = mlp
            .layers
            .into_iter()
            .map(|l| (l.weight.into_vec(), l.bias))
            .unzip();
        Self {
            dims,
            weights,
            biases,
        }
    }
}

impl<T: Scalar> TryFrom<MlpRepr<T>> for Mlp<T> {
    type Error = Error;

    fn try_from(repr: MlpRepr<T>) -> Result<Self> {
        check_dims(&repr.dims, "dims")?;
        let n = repr.dims.len() - 1;
        if repr.weights.len() != n || repr.biases.len() != n {
            return Err(Error::Data(format!(
                "network with {} layers has {} weight and {} bias arrays",
                n,
                repr.weights.len(),
                repr.biases.len()
            )));
        }
        let layers = repr
            .weights
            .into_iter()
            .zip(repr.biases)
            .zip(repr.dims.windows(2))
            .map(|((w, b), io)| {
                if b.len() != io[1] {
                    return Err(Error::DimensionMismatch {
                        expected: io[1],
                        found: b.len(),
                    });
                }
                Ok(Dense {
                    weight: Matrix::from_vec(io[0], io[1], w)?,
                    bias: b,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let mlp = Self { layers };
        if !mlp.is_finite() {
            return Err(Error::Data("network parameters contain NaN or Inf".into()));
        }
        Ok(mlp)
    }
}

/// Intermediate values from [`Mlp::forward`] needed by [`Mlp::backward`].
#[derive(Debug, Clone)]
pub struct ForwardCache<T> {
    /// Input to each layer.
    inputs: Vec<Matrix<T>>,
    /// Pre-activation output of each layer.
    pre_activations: Vec<Matrix<T>>,
}

/// Gradients with the same layout as the network, plus the input gradient.
#[derive(Debug, Clone, PartialEq)]
pub struct MlpGrads<T> {
    pub weights: Vec<Matrix<T>>,
    pub biases: Vec<Vec<T>>,
    pub input: Matrix<T>,
}

impl<T: Scalar> MlpGrads<T> {
    /// Adds parameter gradients of `other`; the input gradient is left as is.
    pub fn accumulate(&mut self, other: &Self) -> Result<()> {
        if self.weights.len() != other.weights.len() {
            return Err(Error::DimensionMismatch {
                expected: self.weights.len(),
                found: other.weights.len(),
            });
        }
        for (w, o) in self.weights.iter_mut().zip(&other.weights) {
            if w.shape() != o.shape() {
                return Err(Error::DimensionMismatch {
                    expected: w.as_slice().len(),
                    found: o.as_slice().len(),
                });
            }
            for (a, &b) in w.as_mut_slice().iter_mut().zip(o.as_slice()) {
                *a += b;
            }
        }
        for (b, o) in self.biases.iter_mut().zip(&other.biases) {
            for (a, &g) in b.iter_mut().zip(o) {
                *a += g;
            }
        }
        Ok(())
    }

    /// Parameter gradients in [`Mlp::tensors_mut`] order.
    pub fn tensors(&self) -> Vec<&[T]> {
        self.weights
            .iter()
            .zip(&self.biases)
            .flat_map(|(w, b)| [w.as_slice(), b.as_slice()])
            .collect()
    }
}

impl<T: Scalar> Mlp<T> {
    /// Glorot-uniform weights, zero biases.
    pub fn init(dims: &[usize], rng: &mut Rng) -> Result<Self> {
        check_dims(dims, "dims")?;
        let layers = dims
            .windows(2)
            .map(|io| {
                let (fan_in, fan_out) = (io[0], io[1]);
                let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
                Dense {
                    weight: Matrix::from_fn(fan_in, fan_out, |_, _| {
                        T::lit(rng.random_range(-bound..bound))
                    }),
                    bias: vec![T::zero(); fan_out],
                }
            })
            .collect();
        Ok(Self { layers })
    }

    pub fn from_layers(layers: Vec<Dense<T>>) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::Config("a network needs at least one layer".into()));
        }
        for pair in layers.windows(2) {
            if pair[0].weight.cols() != pair[1].weight.rows() {
                return Err(Error::DimensionMismatch {
                    expected: pair[0].weight.cols(),
                    found: pair[1].weight.rows(),
                });
            }
        }
        for l in &layers {
            if l.bias.len() != l.weight.cols() {
                return Err(Error::DimensionMismatch {
                    expected: l.weight.cols(),
                    found: l.bias.len(),
                });
            }
        }
        Ok(Self { layers })
    }

    pub fn layers(&self) -> &[Dense<T>] {
        &self.layers
    }

    pub fn dims(&self) -> Vec<usize> {
        std::iter::once(self.input_dim())
            .chain(self.layers.iter().map(|l| l.weight.cols()))
            .collect()
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].weight.rows()
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().expect("non-empty").weight.cols()
    }

    pub fn is_finite(&self) -> bool {
        self.layers
            .iter()
            .all(|l| l.weight.is_finite() && l.bias.iter().all(|b| b.is_finite()))
    }

    pub fn num_params(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.weight.as_slice().len() + l.bias.len())
            .sum()
    }

    /// Weight and bias buffers, layer by layer.
    pub fn tensors_mut(&mut self) -> Vec<&mut [T]> {
        self.layers
            .iter_mut()
            .flat_map(|l| [l.weight.as_mut_slice(), l.bias.as_mut_slice()])
            .collect()
    }

    pub fn tensor_sizes(&self) -> Vec<usize> {
        self.layers
            .iter()
            .flat_map(|l| [l.weight.as_slice().len(), l.bias.len()])
            .collect()
    }

    fn affine(layer: &Dense<T>, x: &Matrix<T>) -> Result<Matrix<T>> {
        let mut z = x.matmul(&layer.weight)?;
        for i in 0..z.rows() {
            for (v, &b) in z.row_mut(i).iter_mut().zip(&layer.bias) {
                *v += b;
            }
        }
        Ok(z)
    }

    fn check_input(&self, x: &Matrix<T>) -> Result<()> {
        if x.cols() != self.input_dim() {
            return Err(Error::DimensionMismatch {
                expected: self.input_dim(),
                found: x.cols(),
            });
        }
        Ok(())
    }

    /// Row-wise forward pass; keeps what backward needs.
    pub fn forward(&self, x: &Matrix<T>) -> Result<(Matrix<T>, ForwardCache<T>)> {
        self.check_input(x)?;
        let last = self.layers.len() - 1;
        let mut cache = ForwardCache {
            inputs: Vec::with_capacity(self.layers.len()),
            pre_activations: Vec::with_capacity(self.layers.len()),
        };
        let mut a = x.clone();
        for (l, layer) in self.layers.iter().enumerate() {
            let z = Self::affine(layer, &a)?;
            let next = if l == last { z.clone() } else { z.map(relu) };
            cache.inputs.push(a);
            cache.pre_activations.push(z);
            a = next;
        }
        Ok((a, cache))
    }

    /// Forward pass without a cache.
    pub fn infer(&self, x: &Matrix<T>) -> Result<Matrix<T>> {
        self.check_input(x)?;
        let last = self.layers.len() - 1;
        let mut a = x.clone();
        for (l, layer) in self.layers.iter().enumerate() {
            let z = Self::affine(layer, &a)?;
            a = if l == last { z } else { z.map(relu) };
        }
        Ok(a)
    }

    /// Reverse-mode pass for a loss whose gradient w.r.t. the output is
    /// `upstream`.
    pub fn backward(&self, cache: &ForwardCache<T>, upstream: &Matrix<T>) -> Result<MlpGrads<T>> {
        if cache.inputs.len() != self.layers.len() {
            return Err(Error::DimensionMismatch {
                expected: self.layers.len(),
                found: cache.inputs.len(),
            });
        }
        let n = cache.inputs[0].rows();
        if upstream.shape() != (n, self.output_dim()) {
            return Err(Error::DimensionMismatch {
                expected: n * self.output_dim(),
                found: upstream.rows() * upstream.cols(),
            });
        }
        let last = self.layers.len() - 1;
        let mut weights = Vec::with_capacity(self.layers.len());
        let mut biases = Vec::with_capacity(self.layers.len());
        let mut delta = upstream.clone();
        for l in (0..self.layers.len()).rev() {
            if l != last {
                let z = &cache.pre_activations[l];
                for (g, &zv) in delta.as_mut_slice().iter_mut().zip(z.as_slice()) {
                    if zv <= T::zero() {
                        *g = T::zero();
                    }
                }
            }
            weights.push(cache.inputs[l].tr_matmul(&delta)?);
            let mut db = vec![T::zero(); delta.cols()];
            for row in delta.iter_rows() {
                for (acc, &g) in db.iter_mut().zip(row) {
                    *acc += g;
                }
            }
            biases.push(db);
            delta = delta.matmul_tr(&self.layers[l].weight)?;
        }
        weights.reverse();
        biases.reverse();
        Ok(MlpGrads {
            weights,
            biases,
            input: delta,
        })
    }
}

#[inline]
fn relu<T: Scalar>(x: T) -> T {
    if x > T::zero() {
        x
    } else {
        T::zero()
    }
}

/// Encoder plus optional projection head.
#[derive(Debug, Clone, PartialEq)]
pub struct MlpParams<T> {
    pub encoder: Mlp<T>,
    pub projection: Option<Mlp<T>>,
}

/// Seeded Glorot initialization of everything `spec` describes.
pub fn init_params<T: Scalar>(spec: &MlpSpec, seed: u64) -> Result<MlpParams<T>> {
    spec.validate()?;
    let mut rng = rng_from_seed(seed);
    let encoder = Mlp::init(&spec.layer_dims, &mut rng)?;
    let projection = spec
        .projection_dims
        .as_ref()
        .map(|dims| Mlp::init(dims, &mut rng))
        .transpose()?;
    Ok(MlpParams {
        encoder,
        projection,
    })
}

/// Adam hyperparameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

impl AdamConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = self.lr > 0.0
            && self.lr.is_finite()
            && (0.0..1.0).contains(&self.beta1)
            && (0.0..1.0).contains(&self.beta2)
            && self.eps > 0.0;
        if ok {
            Ok(())
        } else {
            Err(Error::Config(format!("invalid Adam hyperparameters {self:?}")))
        }
    }
}

/// Moment estimates for a fixed list of parameter tensors.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState<T> {
    pub first_moment: Vec<Vec<T>>,
    pub second_moment: Vec<Vec<T>>,
    pub step_count: u64,
    pub config: AdamConfig,
}

impl<T: Scalar> AdamState<T> {
    pub fn new(tensor_sizes: &[usize], config: AdamConfig) -> Self {
        Self {
            first_moment: tensor_sizes.iter().map(|&n| vec![T::zero(); n]).collect(),
            second_moment: tensor_sizes.iter().map(|&n| vec![T::zero(); n]).collect(),
            step_count: 0,
            config,
        }
    }

    /// One bias-corrected Adam update. Refuses non-finite gradients before
    /// touching any parameter.
    pub fn step(&mut self, params: &mut [&mut [T]], grads: &[&[T]]) -> Result<()> {
        if params.len() != self.first_moment.len() || grads.len() != params.len() {
            return Err(Error::DimensionMismatch {
                expected: self.first_moment.len(),
                found: params.len().min(grads.len()),
            });
        }
        for ((p, g), m) in params.iter().zip(grads).zip(&self.first_moment) {
            if p.len() != m.len() || g.len() != m.len() {
                return Err(Error::DimensionMismatch {
                    expected: m.len(),
                    found: p.len().min(g.len()),
                });
            }
        }
        if let Some((t, i)) = grads
            .iter()
            .enumerate()
            .find_map(|(t, g)| g.iter().position(|x| !x.is_finite()).map(|i| (t, i)))
        {
            return Err(Error::Numeric(format!(
                "non-finite gradient in tensor {t} at index {i} (Adam step {})",
                self.step_count + 1
            )));
        }

        self.step_count += 1;
        let c = &self.config;
        let (b1, b2) = (T::lit(c.beta1), T::lit(c.beta2));
        let (one_b1, one_b2) = (T::one() - b1, T::one() - b2);
        let exp = i32::try_from(self.step_count).unwrap_or(i32::MAX);
        let correction1 = T::one() - T::lit(c.beta1.powi(exp));
        let correction2 = T::one() - T::lit(c.beta2.powi(exp));
        let (lr, eps) = (T::lit(c.lr), T::lit(c.eps));

        for (((p, g), m), v) in params
            .iter_mut()
            .zip(grads)
            .zip(&mut self.first_moment)
            .zip(&mut self.second_moment)
        {
            for (((w, &gi), mi), vi) in p.iter_mut().zip(*g).zip(m.iter_mut()).zip(v.iter_mut()) {
                *mi = b1 * *mi + one_b1 * gi;
                *vi = b2 * *vi + one_b2 * gi * gi;
                let m_hat = *mi / correction1;
                let v_hat = *vi / correction2;
                *w -= lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
        if params.iter().any(|p| p.iter().any(|w| !w.is_finite())) {
            return Err(Error::Numeric(format!(
                "parameters became non-finite at Adam step {}",
                self.step_count
            )));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn net(dims: &[usize], seed: u64) -> Mlp<f64> {
        Mlp::init(dims, &mut rng_from_seed(seed)).unwrap()
    }

    #[test]
    fn init_is_seeded_and_glorot_bounded() {
        let spec = MlpSpec {
            layer_dims: vec![4, 8, 2],
            activation: Activation::Relu,
            projection_dims: None,
        };
        let a: MlpParams<f64> = init_params(&spec, 7).unwrap();
        let b: MlpParams<f64> = init_params(&spec, 7).unwrap();
        assert_eq!(a, b);
        let first = &a.encoder.layers()[0];
        let bound = (6.0f64 / 12.0).sqrt();
        assert!(first.weight.as_slice().iter().all(|w| w.abs() <= bound));
        assert!(a.encoder.layers().iter().all(|l| l.bias.iter().all(|&b| b == 0.0)));
    }

    #[test]
    fn spec_validation() {
        let mut spec = MlpSpec::default_for(10);
        assert!(spec.validate().is_ok());
        spec.projection_dims = Some(vec![16, 8]);
        assert!(spec.validate().is_err());
        spec.layer_dims = vec![10];
        assert!(spec.validate().is_err());
        spec.layer_dims = vec![10, 0];
        assert!(spec.validate().is_err());
    }

    #[test]
    fn zero_network_outputs_zero() {
        let mut m = net(&[3, 5, 2], 1);
        for t in m.tensors_mut() {
            t.fill(0.0);
        }
        let x = Matrix::from_fn(4, 3, |i, j| (i + j) as f64);
        assert!(m.infer(&x).unwrap().as_slice().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn identity_layer_passes_input_through() {
        let layer = Dense {
            weight: Matrix::from_rows(&[[1.0, 0.0], [0.0, 1.0]]).unwrap(),
            bias: vec![0.0, 0.0],
        };
        let m = Mlp::from_layers(vec![layer]).unwrap();
        let x = Matrix::from_rows(&[[-1.5, 2.0], [3.0, -0.25]]).unwrap();
        assert_eq!(m.infer(&x).unwrap(), x);
    }

    #[test]
    fn forward_matches_scalar_oracle() {
        let m = net(&[3, 5, 2], 11);
        let weights: Vec<Vec<Vec<f64>>> = m.layers().iter().map(|l| l.weight.to_rows()).collect();
        let biases: Vec<Vec<f64>> = m.layers().iter().map(|l| l.bias.clone()).collect();
        let x = Matrix::from_fn(6, 3, |i, j| ((i * 3 + j) as f64 * 0.37).sin());
        let out = m.infer(&x).unwrap();
        for (i, row) in x.iter_rows().enumerate() {
            let expected = fraud_oracles::mlp_forward(&weights, &biases, row);
            for (a, b) in out.row(i).iter().zip(&expected) {
                assert!((a - b).abs() <= 1e-12);
            }
        }
        let (cached, _) = m.forward(&x).unwrap();
        assert_eq!(cached, out);
        assert!(m.infer(&Matrix::zeros(1, 4)).is_err());
    }

    #[test]
    fn zero_upstream_gives_zero_gradients() {
        let m = net(&[4, 8, 2], 2);
        let x = Matrix::from_fn(5, 4, |i, j| (i as f64 - j as f64) * 0.3);
        let (_, cache) = m.forward(&x).unwrap();
        let g = m.backward(&cache, &Matrix::zeros(5, 2)).unwrap();
        assert!(g.tensors().iter().all(|t| t.iter().all(|&v| v == 0.0)));
        assert!(g.input.as_slice().iter().all(|&v| v == 0.0));
        assert!(m.backward(&cache, &Matrix::zeros(4, 2)).is_err());
    }

    #[test]
    fn single_linear_layer_sum_loss() {
        let m = net(&[3, 2], 5);
        let x = Matrix::from_rows(&[[1.0, 2.0, 3.0], [-1.0, 0.5, 4.0]]).unwrap();
        let (_, cache) = m.forward(&x).unwrap();
        let g = m.backward(&cache, &Matrix::from_fn(2, 2, |_, _| 1.0)).unwrap();
        // dW[p][j] = sum over rows of x[p]; db = batch size.
        for p in 0..3 {
            let col_sum = x.get(0, p) + x.get(1, p);
            assert_eq!(g.weights[0].row(p), &[col_sum, col_sum]);
        }
        assert_eq!(g.biases[0], vec![2.0, 2.0]);
    }

    fn gradient_check(dims: &[usize], seed: u64) -> f64 {
        let m = net(dims, seed);
        let n = 4;
        let x = Matrix::from_fn(n, dims[0], |i, j| ((seed as usize * 13 + i * 7 + j * 3) as f64 * 0.61).sin());
        let target = Matrix::from_fn(n, *dims.last().unwrap(), |i, j| ((i + 2 * j) as f64 * 0.9).cos());
        // loss = 0.5 * sum((out - target)^2)
        let loss = |m: &Mlp<f64>, x: &Matrix<f64>| -> f64 {
            let out = m.infer(x).unwrap();
            out.as_slice().iter().zip(target.as_slice()).map(|(o, t)| 0.5 * (o - t).powi(2)).sum()
        };
        let (out, cache) = m.forward(&x).unwrap();
        let upstream = Matrix::from_fn(n, out.cols(), |i, j| out.get(i, j) - target.get(i, j));
        let grads = m.backward(&cache, &upstream).unwrap();

        let mut worst = 0.0f64;
        let analytic: Vec<Vec<f64>> = grads.tensors().iter().map(|t| t.to_vec()).collect();
        for (t, analytic_t) in analytic.iter().enumerate() {
            let base: Vec<f64> = m.clone().tensors_mut()[t].to_vec();
            let numeric = fraud_oracles::central_difference(
                |theta| {
                    let mut probe = m.clone();
                    probe.tensors_mut()[t].copy_from_slice(theta);
                    loss(&probe, &x)
                },
                &base,
                1e-5,
            );
            worst = worst.max(fraud_oracles::max_relative_error(analytic_t, &numeric));
        }
        let numeric_input = fraud_oracles::central_difference(
            |flat| loss(&m, &Matrix::from_vec(n, dims[0], flat.to_vec()).unwrap()),
            x.as_slice(),
            1e-5,
        );
        worst.max(fraud_oracles::max_relative_error(grads.input.as_slice(), &numeric_input))
    }

    #[test]
    fn backward_matches_finite_differences() {
        for dims in [&[4, 8, 2][..], &[6, 16, 16, 4], &[3, 5, 2]] {
            for seed in 0..5 {
                let err = gradient_check(dims, seed);
                assert!(err < 1e-4, "dims {dims:?} seed {seed}: {err}");
            }
        }
    }

    #[test]
    fn forward_is_row_permutation_equivariant() {
        let m = net(&[4, 8, 3], 3);
        let x = Matrix::from_fn(6, 4, |i, j| ((i * 5 + j) as f64).cos());
        let perm = [3, 0, 5, 1, 4, 2];
        let out = m.infer(&x).unwrap();
        let out_perm = m.infer(&x.select_rows(&perm)).unwrap();
        assert_eq!(out_perm, out.select_rows(&perm));
    }

    #[test]
    fn serialization_round_trips_bit_exactly() {
        let m = net(&[5, 7, 3], 8);
        let json = serde_json::to_string(&m).unwrap();
        let back: Mlp<f64> = serde_json::from_str(&json).unwrap();
        assert_eq!(back, m);
        for (a, b) in back.layers().iter().zip(m.layers()) {
            for (x, y) in a.weight.as_slice().iter().zip(b.weight.as_slice()) {
                assert_eq!(x.to_bits(), y.to_bits());
            }
        }
        let broken = json.replacen("\"dims\":[5,", "\"dims\":[4,", 1);
        assert!(serde_json::from_str::<Mlp<f64>>(&broken).is_err());
    }

    #[test]
    fn adam_first_step_by_hand() {
        let mut w = vec![1.0f64];
        let cfg = AdamConfig {
            lr: 0.1,
            ..AdamConfig::default()
        };
        let mut state = AdamState::new(&[1], cfg);
        state.step(&mut [w.as_mut_slice()], &[&[1.0]]).unwrap();
        // m_hat = 1, v_hat = 1 => w' = 1 - 0.1 / (1 + 1e-8)
        assert!((w[0] - (1.0 - 0.1 / (1.0 + 1e-8))).abs() < 1e-15);
        assert_eq!(state.step_count, 1);
    }

    #[test]
    fn adam_zero_gradient_fixed_point() {
        let mut w = vec![0.5f64, -2.0];
        let mut state = AdamState::new(&[2], AdamConfig::default());
        state.step(&mut [w.as_mut_slice()], &[&[0.0, 0.0]]).unwrap();
        assert_eq!(w, vec![0.5, -2.0]);
    }

    #[test]
    fn adam_rejects_nan() {
        let mut w = vec![0.5f64];
        let mut state = AdamState::new(&[1], AdamConfig::default());
        let err = state.step(&mut [w.as_mut_slice()], &[&[f64::NAN]]).unwrap_err();
        assert!(matches!(err, Error::Numeric(_)));
        assert_eq!(w, vec![0.5]);
        assert_eq!(state.step_count, 0);
    }

    #[test]
    fn adam_minimizes_quadratic() {
        let mut w = vec![3.0f64];
        let cfg = AdamConfig {
            lr: 0.05,
            ..AdamConfig::default()
        };
        let mut state = AdamState::new(&[1], cfg);
        let mut reached = None;
        for step in 1..=500 {
            let g = 2.0 * w[0];
            state.step(&mut [w.as_mut_slice()], &[&[g]]).unwrap();
            if w[0].abs() < 0.1 && reached.is_none() {
                reached = Some(step);
            }
        }
        assert!(reached.is_some(), "w = {}", w[0]);
    }

    #[test]
    fn toy_regression_loss_mostly_decreases() {
        let mut m = net(&[3, 8, 1], 21);
        let x = Matrix::from_fn(32, 3, |i, j| ((i * 3 + j) as f64 * 0.29).sin());
        let y: Vec<f64> = x.iter_rows().map(|r| r[0] - 0.5 * r[1] + 0.25 * r[2]).collect();
        let mut state = AdamState::new(&m.tensor_sizes(), AdamConfig::default());
        let mut losses = Vec::new();
        for _ in 0..101 {
            let (out, cache) = m.forward(&x).unwrap();
            let n = x.rows() as f64;
            losses.push(out.as_slice().iter().zip(&y).map(|(o, t)| (o - t).powi(2)).sum::<f64>() / n);
            let upstream = Matrix::from_fn(32, 1, |i, _| 2.0 * (out.get(i, 0) - y[i]) / n);
            let g = m.backward(&cache, &upstream).unwrap();
            state.step(&mut m.tensors_mut(), &g.tensors()).unwrap();
        }
        let decreasing = losses.windows(2).filter(|w| w[1] < w[0]).count();
        assert!(decreasing >= 95, "{decreasing} of 100 steps decreased");
    }
}
