use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::nn::{AdamConfig, AdamState, Mlp};
use crate::scalar::Scalar;
use crate::seed::{derive_seed, rng_from_seed};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AutoencoderConfig {
    /// Encoder hidden widths between the input and the bottleneck; the
    /// decoder mirrors them.
    pub hidden_dims: Vec<usize>,
    /// Bottleneck width; `None` picks [`default_bottleneck`].
    pub bottleneck: Option<usize>,
    pub epochs: usize,
    pub batch_size: usize,
    #[serde(flatten)]
    pub optimizer: AdamConfig,
    pub seed: u64,
}

impl Default for AutoencoderConfig {
    fn default() -> Self {
        Self {
            hidden_dims: vec![64],
            bottleneck: None,
            epochs: 50,
            batch_size: 128,
            optimizer: AdamConfig::default(),
            seed: 0,
        }
    }
}

/// Half the input width, capped at 32.
pub fn default_bottleneck(input_dim: usize) -> usize {
    (input_dim / 2).clamp(1, 32)
}

impl AutoencoderConfig {
    /// Encoder layer widths `[D, hidden.., bottleneck]`.
    pub fn encoder_dims(&self, input_dim: usize) -> Result<Vec<usize>> {
        let b = self.bottleneck.unwrap_or_else(|| default_bottleneck(input_dim));
        if b == 0 || b >= input_dim {
            return Err(Error::Config(format!(
                "autoencoder bottleneck {b} must be between 1 and input dimension {input_dim} (exclusive)"
            )));
        }
        if self.hidden_dims.contains(&0) {
            return Err(Error::Config("autoencoder hidden widths must be ≥ 1".into()));
        }
        let mut dims = vec![input_dim];
        dims.extend(&self.hidden_dims);
        dims.push(b);
        Ok(dims)
    }

    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be ≥ 1".into()));
        }
        self.optimizer.validate()
    }
}

/// Encoder to a linear bottleneck, decoder back to the input width.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct AutoencoderModel<T> {
    pub encoder: Mlp<T>,
    pub decoder: Mlp<T>,
}

impl<T: Scalar> AutoencoderModel<T> {
    pub fn init(encoder_dims: &[usize], seed: u64) -> Result<Self> {
        let mut rng = rng_from_seed(derive_seed(seed, "init"));
        let encoder = Mlp::init(encoder_dims, &mut rng)?;
        let decoder_dims: Vec<usize> = encoder_dims.iter().rev().copied().collect();
        let decoder = Mlp::init(&decoder_dims, &mut rng)?;
        Ok(Self { encoder, decoder })
    }

    pub fn input_dim(&self) -> usize {
        self.encoder.input_dim()
    }

    pub fn reconstruct(&self, x: &Matrix<T>) -> Result<Matrix<T>> {
        self.decoder.infer(&self.encoder.infer(x)?)
    }

    /// Mean squared error over all entries of `x`, and its gradient for every
    /// parameter tensor in [`Self::tensors_mut`] order.
    pub fn loss_and_grads(&self, x: &Matrix<T>) -> Result<(T, Vec<Vec<T>>)> {
        let (code, enc_cache) = self.encoder.forward(x)?;
        let (recon, dec_cache) = self.decoder.forward(&code)?;
        let count = T::from_count(x.rows() * x.cols());
        let two = T::lit(2.0);
        let mut loss = T::zero();
        let mut upstream = Matrix::zeros(x.rows(), x.cols());
        for ((g, &r), &v) in upstream.as_mut_slice().iter_mut().zip(recon.as_slice()).zip(x.as_slice()) {
            let diff = r - v;
            loss += diff * diff;
            *g = two * diff / count;
        }
        loss /= count;
        let dec = self.decoder.backward(&dec_cache, &upstream)?;
        let enc = self.encoder.backward(&enc_cache, &dec.input)?;
        let grads = enc
            .tensors()
            .into_iter()
            .chain(dec.tensors())
            .map(<[T]>::to_vec)
            .collect();
        Ok((loss, grads))
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut [T]> {
        let mut t = self.encoder.tensors_mut();
        t.extend(self.decoder.tensors_mut());
        t
    }

    pub fn tensor_sizes(&self) -> Vec<usize> {
        let mut s = self.encoder.tensor_sizes();
        s.extend(self.decoder.tensor_sizes());
        s
    }
}

/// Mini-batch Adam on reconstruction MSE. Returns the model and the mean
/// batch loss of each epoch.
pub fn autoencoder_fit<T: Scalar>(data: &Matrix<T>, cfg: &AutoencoderConfig) -> Result<(AutoencoderModel<T>, Vec<f64>)> {
    cfg.validate()?;
    if data.rows() == 0 {
        return Err(Error::Data("autoencoder needs at least one row".into()));
    }
    let dims = cfg.encoder_dims(data.cols())?;
    let mut model = AutoencoderModel::init(&dims, cfg.seed)?;
    let mut adam = AdamState::new(&model.tensor_sizes(), cfg.optimizer);
    let mut rng = rng_from_seed(derive_seed(cfg.seed, "shuffle"));
    let mut order: Vec<usize> = (0..data.rows()).collect();
    let mut history = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        let mut batches = 0usize;
        for (b, chunk) in order.chunks(cfg.batch_size).enumerate() {
            let (loss, grads) = model.loss_and_grads(&data.select_rows(chunk))?;
            if !loss.is_finite() {
                return Err(Error::Numeric(format!(
                    "autoencoder loss is not finite at epoch {} batch {b}",
                    epoch + 1
                )));
            }
            let refs: Vec<&[T]> = grads.iter().map(Vec::as_slice).collect();
            adam.step(&mut model.tensors_mut(), &refs)
                .map_err(|e| Error::Numeric(format!("autoencoder epoch {} batch {b}: {e}", epoch + 1)))?;
            total += loss.as_f64();
            batches += 1;
        }
        history.push(total / batches as f64);
    }
    Ok((model, history))
}

/// Per-row mean squared reconstruction error.
pub fn autoencoder_score<T: Scalar>(model: &AutoencoderModel<T>, query: &Matrix<T>) -> Result<Vec<T>> {
    if query.cols() != model.input_dim() {
        return Err(Error::DimensionMismatch {
            expected: model.input_dim(),
            found: query.cols(),
        });
    }
    let recon = model.reconstruct(query)?;
    let d = T::from_count(query.cols());
    Ok(query
        .iter_rows()
        .zip(recon.iter_rows())
        .map(|(x, r)| x.iter().zip(r).map(|(&a, &b)| (a - b) * (a - b)).sum::<T>() / d)
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng as _;
    use rand_distr::StandardNormal;

    fn gaussian(n: usize, d: usize, seed: u64) -> Matrix<f64> {
        let mut rng = rng_from_seed(seed);
        Matrix::from_fn(n, d, |_, _| rng.sample(StandardNormal))
    }

    #[test]
    fn gradients_match_finite_differences() {
        for seed in 0..3 {
            let x = gaussian(5, 4, seed);
            let mut model = AutoencoderModel::<f64>::init(&[4, 6, 2], seed).unwrap();
            // Nonzero biases keep pre-activations off the ReLU kink at 0.
            let mut rng = rng_from_seed(seed + 100);
            for bias in model.tensors_mut().into_iter().skip(1).step_by(2) {
                bias.iter_mut().for_each(|b| *b = rng.random_range(-0.5..0.5));
            }
            let (_, grads) = model.loss_and_grads(&x).unwrap();
            for (t, analytic) in grads.iter().enumerate() {
                let start = model.tensors_mut()[t].to_vec();
                let mut probe = model.clone();
                let numeric = fraud_oracles::central_difference(
                    |v| {
                        probe.tensors_mut()[t].copy_from_slice(v);
                        probe.loss_and_grads(&x).unwrap().0
                    },
                    &start,
                    1e-6,
                );
                let err = fraud_oracles::max_relative_error(analytic, &numeric);
                assert!(err < 1e-4, "seed {seed} tensor {t}: {err}");
            }
        }
    }

    #[test]
    fn score_matches_row_mse_oracle() {
        let x = gaussian(7, 4, 1);
        let model = AutoencoderModel::<f64>::init(&[4, 5, 2], 3).unwrap();
        let recon = model.reconstruct(&x).unwrap();
        let oracle = fraud_oracles::row_mse(&x.to_rows(), &recon.to_rows());
        for (a, b) in autoencoder_score(&model, &x).unwrap().iter().zip(oracle) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn learns_a_low_rank_subspace() {
        // Rank-2 data in 6 dimensions: a 2-wide bottleneck can reconstruct it.
        let z = gaussian(256, 2, 4);
        let mix = gaussian(2, 6, 5);
        let x = z.matmul(&mix).unwrap();
        let cfg = AutoencoderConfig {
            hidden_dims: vec![16],
            bottleneck: Some(2),
            epochs: 150,
            batch_size: 32,
            optimizer: AdamConfig { lr: 5e-3, ..AdamConfig::default() },
            seed: 2,
        };
        let (model, history) = autoencoder_fit(&x, &cfg).unwrap();
        assert!(history.last().unwrap() < &(0.2 * history[0]), "{history:?}");
        let off = gaussian(8, 6, 6);
        let mean = |v: Vec<f64>| v.iter().sum::<f64>() / v.len() as f64;
        let on_subspace = mean(autoencoder_score(&model, &x).unwrap());
        let off_subspace = mean(autoencoder_score(&model, &off).unwrap());
        assert!(off_subspace > on_subspace, "{off_subspace} vs {on_subspace}");

        let (again, _) = autoencoder_fit(&x, &cfg).unwrap();
        assert_eq!(model, again);
    }

    #[test]
    fn reconstructs_a_line_through_one_unit() {
        let t = gaussian(256, 1, 7);
        let direction = gaussian(1, 5, 8);
        let x = t.matmul(&direction).unwrap();
        let n = x.as_slice().len() as f64;
        let mean = x.as_slice().iter().sum::<f64>() / n;
        let variance = x.as_slice().iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
        let cfg = AutoencoderConfig {
            hidden_dims: vec![16],
            bottleneck: Some(1),
            epochs: 200,
            batch_size: 32,
            optimizer: AdamConfig { lr: 5e-3, ..AdamConfig::default() },
            seed: 1,
        };
        let (model, _) = autoencoder_fit(&x, &cfg).unwrap();
        let scores = autoencoder_score(&model, &x).unwrap();
        let mse = scores.iter().sum::<f64>() / scores.len() as f64;
        assert!(mse < 0.05 * variance, "mse {mse} variance {variance}");
    }

    #[test]
    fn training_beats_the_untrained_model() {
        let z = gaussian(200, 2, 9);
        let x = z.matmul(&gaussian(2, 6, 10)).unwrap();
        let cfg = AutoencoderConfig {
            hidden_dims: vec![16],
            bottleneck: Some(2),
            epochs: 0,
            seed: 3,
            ..AutoencoderConfig::default()
        };
        let mean = |v: Vec<f64>| v.iter().sum::<f64>() / v.len() as f64;
        let (untrained, history) = autoencoder_fit(&x, &cfg).unwrap();
        assert!(history.is_empty());
        let (trained, _) = autoencoder_fit(&x, &AutoencoderConfig { epochs: 50, ..cfg }).unwrap();
        let before = mean(autoencoder_score(&untrained, &x).unwrap());
        let after = mean(autoencoder_score(&trained, &x).unwrap());
        assert!(after < before, "{after} vs {before}");
    }

    #[test]
    fn bottleneck_must_compress() {
        let cfg = AutoencoderConfig {
            bottleneck: Some(4),
            ..AutoencoderConfig::default()
        };
        assert!(matches!(autoencoder_fit(&gaussian(4, 4, 0), &cfg), Err(Error::Config(_))));
        assert_eq!(AutoencoderConfig::default().encoder_dims(10).unwrap(), vec![10, 64, 5]);
        assert!(AutoencoderConfig::default().encoder_dims(1).is_err());
    }

    #[test]
    fn divergence_is_reported() {
        let mut x = gaussian(4, 3, 0);
        x.set(0, 0, f64::NAN);
        let cfg = AutoencoderConfig {
            bottleneck: Some(1),
            epochs: 1,
            ..AutoencoderConfig::default()
        };
        assert!(matches!(autoencoder_fit(&x, &cfg), Err(Error::Numeric(_))));
    }
}
