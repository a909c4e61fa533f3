//! Stochastic two-view augmentation of standardized transaction rows.
//!
//! Each view applies, in order: additive Gaussian noise, a per-row
//! multiplicative jitter on the amount-like columns, and random masking to
//! zero. On standardized features a masked entry equals the column mean.

use rand::{Rng as _, RngCore, SeedableRng};
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::scalar::Scalar;
use crate::seed::Rng;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AugmentConfig {
    /// Standard deviation of additive noise, in standardized units.
    pub noise_std: f64,
    /// Jitter factors are drawn from `[1 - s, 1 + s]`.
    pub scale_jitter: f64,
    /// Per-entry probability of masking to zero.
    pub mask_prob: f64,
    /// Column indices eligible for scale jitter.
    pub amount_features: Vec<usize>,
    pub seed: u64,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        Self {
            noise_std: 0.1,
            scale_jitter: 0.2,
            mask_prob: 0.1,
            amount_features: vec![0],
            seed: 0,
        }
    }
}

impl AugmentConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.noise_std >= 0.0 && self.noise_std.is_finite()) {
            return Err(Error::Config(format!("noise_std must be ≥ 0, got {}", self.noise_std)));
        }
        if !(0.0..1.0).contains(&self.scale_jitter) {
            return Err(Error::Config(format!(
                "scale_jitter must lie in [0, 1), got {}",
                self.scale_jitter
            )));
        }
        if !(0.0..1.0).contains(&self.mask_prob) {
            return Err(Error::Config(format!(
                "mask_prob must lie in [0, 1), got {}",
                self.mask_prob
            )));
        }
        let jitter_off = self.scale_jitter == 0.0 || self.amount_features.is_empty();
        if self.noise_std == 0.0 && jitter_off && self.mask_prob == 0.0 {
            return Err(Error::Config(
                "degenerate augmentation: noise, jitter and masking are all disabled".into(),
            ));
        }
        Ok(())
    }
}

/// Two augmented views of one batch, aligned row for row.
#[derive(Debug, Clone, PartialEq)]
pub struct ViewPair<T> {
    pub view_a: Matrix<T>,
    pub view_b: Matrix<T>,
}

/// Produces two independent augmentations of `batch`.
///
/// One `u64` is drawn from `rng`; the two views then use separate ChaCha
/// streams keyed by it, so their randomness never overlaps.
pub fn make_views<T: Scalar>(batch: &Matrix<T>, cfg: &AugmentConfig, rng: &mut Rng) -> Result<ViewPair<T>> {
    cfg.validate()?;
    if batch.rows() == 0 {
        return Err(Error::Data("cannot augment an empty batch".into()));
    }
    let key = rng.next_u64();
    Ok(ViewPair {
        view_a: augment_view(batch, cfg, &mut view_stream(key, 0))?,
        view_b: augment_view(batch, cfg, &mut view_stream(key, 1))?,
    })
}

fn view_stream(key: u64, stream: u64) -> Rng {
    let mut rng = Rng::seed_from_u64(key);
    rng.set_stream(stream);
    rng
}

fn augment_view<T: Scalar>(batch: &Matrix<T>, cfg: &AugmentConfig, rng: &mut Rng) -> Result<Matrix<T>> {
    let d = batch.cols();
    if let Some(&bad) = cfg.amount_features.iter().find(|&&j| j >= d) {
        return Err(Error::Config(format!(
            "amount feature index {bad} out of range for {d} columns"
        )));
    }
    let mut view = batch.clone();
    let noise_std = T::lit(cfg.noise_std);
    let jitter = cfg.scale_jitter > 0.0 && !cfg.amount_features.is_empty();
    for i in 0..view.rows() {
        let row = view.row_mut(i);
        if cfg.noise_std > 0.0 {
            for x in row.iter_mut() {
                *x += noise_std * T::lit(rng.sample::<f64, _>(StandardNormal));
            }
        }
        if jitter {
            let factor = T::lit(rng.random_range(1.0 - cfg.scale_jitter..=1.0 + cfg.scale_jitter));
            for &j in &cfg.amount_features {
                row[j] *= factor;
            }
        }
        if cfg.mask_prob > 0.0 {
            for x in row.iter_mut() {
                if rng.random_bool(cfg.mask_prob) {
                    *x = T::zero();
                }
            }
        }
    }
    Ok(view)
}

/// Checks that pure additive noise of scale `eps` stays within
/// `3 eps sqrt(2 ln(N D))` of the source, the expected Gaussian maximum
/// with a safety factor of three.
pub fn augmentation_identity_check<T: Scalar>(batch: &Matrix<T>, eps: f64, rng: &mut Rng) -> bool {
    if eps == 0.0 {
        return true;
    }
    let cfg = AugmentConfig {
        noise_std: eps,
        scale_jitter: 0.0,
        mask_prob: 0.0,
        amount_features: Vec::new(),
        seed: 0,
    };
    let Ok(views) = make_views(batch, &cfg, rng) else {
        return false;
    };
    let cells = (batch.rows() * batch.cols()).max(2) as f64;
    let bound = 3.0 * eps * (2.0 * cells.ln()).sqrt();
    views.view_a.max_abs_diff(batch).as_f64() <= bound
        && views.view_b.max_abs_diff(batch).as_f64() <= bound
}
