//! Cosine similarity, the two contrastive objectives, and the training loop.

use std::path::Path;
use std::time::Instant;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::augment::{make_views, AugmentConfig};
use crate::data::{open, write_file};
use crate::error::{Error, Result};
use crate::matrix::{dot, norm, Matrix};
use crate::nn::{init_params, AdamConfig, AdamState, Mlp, MlpSpec};
use crate::scalar::Scalar;
use crate::seed::{derive_seed, rng_from_seed};

/// Cosine similarity clamped to `[-1, 1]`. Zero vectors are an error.
pub fn cosine_sim<T: Scalar>(u: &[T], v: &[T]) -> Result<T> {
    if u.len() != v.len() {
        return Err(Error::DimensionMismatch {
            expected: u.len(),
            found: v.len(),
        });
    }
    let (uu, vv) = (dot(u, u), dot(v, v));
    if uu == T::zero() {
        return Err(Error::ZeroNorm { row: 0 });
    }
    if vv == T::zero() {
        return Err(Error::ZeroNorm { row: 1 });
    }
    Ok((dot(u, v) / (uu * vv).sqrt()).max(-T::one()).min(T::one()))
}

/// Rows scaled to unit length, together with the original norms.
pub(crate) fn normalize_rows<T: Scalar>(h: &Matrix<T>) -> Result<(Matrix<T>, Vec<T>)> {
    let mut unit = h.clone();
    let mut norms = Vec::with_capacity(h.rows());
    for i in 0..h.rows() {
        let n = norm(h.row(i));
        if !(n > T::zero()) || !n.is_finite() {
            return Err(Error::ZeroNorm { row: i });
        }
        unit.row_mut(i).iter_mut().for_each(|x| *x /= n);
        norms.push(n);
    }
    Ok((unit, norms))
}

/// Pulls a gradient w.r.t. unit rows back to the unnormalized rows:
/// `dh = (du - (du . u) u) / |h|`.
fn unnormalize_grad<T: Scalar>(du: &Matrix<T>, unit: &Matrix<T>, norms: &[T]) -> Matrix<T> {
    let mut dh = du.clone();
    for i in 0..du.rows() {
        let u = unit.row(i);
        let radial = dot(du.row(i), u);
        for (g, &ui) in dh.row_mut(i).iter_mut().zip(u) {
            *g = (*g - radial * ui) / norms[i];
        }
    }
    dh
}

/// Loss value with gradients w.r.t. both view embeddings.
#[derive(Debug, Clone)]
pub struct LossOutput<T> {
    pub loss: T,
    pub grad_a: Matrix<T>,
    pub grad_b: Matrix<T>,
}

fn check_pair<T: Scalar>(h_a: &Matrix<T>, h_b: &Matrix<T>, tau: T) -> Result<()> {
    if h_a.shape() != h_b.shape() {
        return Err(Error::DimensionMismatch {
            expected: h_a.rows() * h_a.cols(),
            found: h_b.rows() * h_b.cols(),
        });
    }
    if h_a.rows() < 2 {
        return Err(Error::Data(format!(
            "contrastive loss needs at least 2 rows, got {}",
            h_a.rows()
        )));
    }
    if !(tau > T::zero()) {
        return Err(Error::Config(format!("temperature must be > 0, got {tau}")));
    }
    Ok(())
}

fn log_sum_exp<T: Scalar>(xs: impl Iterator<Item = T> + Clone) -> T {
    let max = xs.clone().fold(T::neg_infinity(), T::max);
    max + xs.map(|x| (x - max).exp()).sum::<T>().ln()
}

/// The objective with the positive-pair denominator:
///
/// `L = mean_i -log( exp(s_i / t) / sum_k exp(s_k / t) )`, `s_k = cos(a_k, b_k)`.
///
/// The denominator ranges over the batch's positive-pair similarities only.
pub fn loss_paper<T: Scalar>(h_a: &Matrix<T>, h_b: &Matrix<T>, tau: T) -> Result<LossOutput<T>> {
    check_pair(h_a, h_b, tau)?;
    let (ua, na) = normalize_rows(h_a)?;
    let (ub, nb) = normalize_rows(h_b)?;
    let n = h_a.rows();
    let count = T::from_count(n);
    let logits: Vec<T> = (0..n).map(|k| dot(ua.row(k), ub.row(k)) / tau).collect();
    let lse = log_sum_exp(logits.iter().copied());
    let loss = lse - logits.iter().copied().sum::<T>() / count;

    let mut dua = Matrix::zeros(n, h_a.cols());
    let mut dub = Matrix::zeros(n, h_a.cols());
    for k in 0..n {
        let ds = ((logits[k] - lse).exp() - T::one() / count) / tau;
        for (g, &b) in dua.row_mut(k).iter_mut().zip(ub.row(k)) {
            *g = ds * b;
        }
        for (g, &a) in dub.row_mut(k).iter_mut().zip(ua.row(k)) {
            *g = ds * a;
        }
    }
    Ok(LossOutput {
        loss,
        grad_a: unnormalize_grad(&dua, &ua, &na),
        grad_b: unnormalize_grad(&dub, &ub, &nb),
    })
}

/// NT-Xent: each of the `2N` views is an anchor, its counterpart the
/// positive, the other `2N - 2` views the negatives; averaged over anchors.
pub fn loss_simclr<T: Scalar>(h_a: &Matrix<T>, h_b: &Matrix<T>, tau: T) -> Result<LossOutput<T>> {
    check_pair(h_a, h_b, tau)?;
    let (n, e) = h_a.shape();
    let two_n = 2 * n;
    let (ua, na) = normalize_rows(h_a)?;
    let (ub, nb) = normalize_rows(h_b)?;
    let mut z = ua.clone().into_vec();
    z.extend_from_slice(ub.as_slice());
    let z = Matrix::from_vec(two_n, e, z)?;
    let logits = z.matmul_tr(&z)?.map(|s| s / tau);

    let scale = T::one() / (tau * T::from_count(two_n));
    let mut loss = T::zero();
    let mut g = Matrix::zeros(two_n, two_n);
    for p in 0..two_n {
        let q = if p < n { p + n } else { p - n };
        let row = logits.row(p);
        let others = row.iter().enumerate().filter(|&(r, _)| r != p).map(|(_, &l)| l);
        let lse = log_sum_exp(others);
        loss += lse - row[q];
        for r in (0..two_n).filter(|&r| r != p) {
            let indicator = if r == q { T::one() } else { T::zero() };
            g.set(p, r, ((row[r] - lse).exp() - indicator) * scale);
        }
    }
    loss /= T::from_count(two_n);

    // S = Z Z^T, so dZ = (G + G^T) Z.
    let sym = Matrix::from_fn(two_n, two_n, |p, r| g.get(p, r) + g.get(r, p));
    let dz = sym.matmul(&z)?;
    let dua = Matrix::from_vec(n, e, dz.as_slice()[..n * e].to_vec())?;
    let dub = Matrix::from_vec(n, e, dz.as_slice()[n * e..].to_vec())?;
    Ok(LossOutput {
        loss,
        grad_a: unnormalize_grad(&dua, &ua, &na),
        grad_b: unnormalize_grad(&dub, &ub, &nb),
    })
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossVariant {
    /// Denominator over positive-pair similarities only.
    Paper,
    /// Canonical NT-Xent.
    #[default]
    Simclr,
}

impl LossVariant {
    pub fn evaluate<T: Scalar>(self, h_a: &Matrix<T>, h_b: &Matrix<T>, tau: T) -> Result<LossOutput<T>> {
        match self {
            LossVariant::Paper => loss_paper(h_a, h_b, tau),
            LossVariant::Simclr => loss_simclr(h_a, h_b, tau),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            LossVariant::Paper => "paper",
            LossVariant::Simclr => "simclr",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ContrastiveConfig {
    pub temperature: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub loss_variant: LossVariant,
    /// Compute the loss on the projection head output rather than on the
    /// encoder output.
    pub use_projection_head: bool,
    #[serde(flatten)]
    pub optimizer: AdamConfig,
    pub seed: u64,
}

impl Default for ContrastiveConfig {
    fn default() -> Self {
        Self {
            temperature: 0.5,
            batch_size: 128,
            epochs: 50,
            loss_variant: LossVariant::Simclr,
            use_projection_head: true,
            optimizer: AdamConfig::default(),
            seed: 0,
        }
    }
}

impl ContrastiveConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.temperature > 0.0 && self.temperature.is_finite()) {
            return Err(Error::Config(format!(
                "temperature must be > 0, got {}",
                self.temperature
            )));
        }
        if self.batch_size < 2 {
            return Err(Error::Config(format!(
                "batch_size must be ≥ 2, got {}",
                self.batch_size
            )));
        }
        self.optimizer.validate()
    }
}

const MODEL_FORMAT_VERSION: u32 = 1;

/// A trained encoder `f`, optionally with the projection head `g` it was
/// trained through. Only `f` is used for scoring.
#[derive(Debug, Clone, PartialEq)]
pub struct EncoderModel<T> {
    pub spec: MlpSpec,
    pub encoder: Mlp<T>,
    pub projection: Option<Mlp<T>>,
    pub loss_variant: LossVariant,
    pub temperature: f64,
}

#[derive(Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
struct ModelFile<T> {
    format_version: u32,
    model_type: String,
    spec: MlpSpec,
    weights: Vec<Vec<T>>,
    biases: Vec<Vec<T>>,
    use_projection_head: bool,
    projection: Option<LayerFile<T>>,
    loss_variant: LossVariant,
    temperature: f64,
}

#[derive(Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
struct LayerFile<T> {
    weights: Vec<Vec<T>>,
    biases: Vec<Vec<T>>,
}

impl<T: Scalar> LayerFile<T> {
    fn from_mlp(mlp: &Mlp<T>) -> Self {
        Self {
            weights: mlp.layers().iter().map(|l| l.weight.as_slice().to_vec()).collect(),
            biases: mlp.layers().iter().map(|l| l.bias.clone()).collect(),
        }
    }

    fn into_mlp(self, dims: &[usize]) -> Result<Mlp<T>> {
        if self.weights.len() + 1 != dims.len() || self.biases.len() + 1 != dims.len() {
            return Err(Error::Data("layer count disagrees with spec".into()));
        }
        let layers = self
            .weights
            .into_iter()
            .zip(self.biases)
            .zip(dims.windows(2))
            .map(|((w, b), io)| {
                Ok(crate::nn::Dense {
                    weight: Matrix::from_vec(io[0], io[1], w)?,
                    bias: b,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let mlp = Mlp::from_layers(layers)?;
        if !mlp.is_finite() {
            return Err(Error::Data("model parameters contain NaN or Inf".into()));
        }
        Ok(mlp)
    }
}

impl<T: Scalar> EncoderModel<T> {
    /// Freshly initialized model for `spec`.
    pub fn init(spec: &MlpSpec, cfg: &ContrastiveConfig) -> Result<Self> {
        let params = init_params::<T>(spec, derive_seed(cfg.seed, "init"))?;
        let projection = if cfg.use_projection_head {
            params.projection
        } else {
            None
        };
        if cfg.use_projection_head && projection.is_none() {
            return Err(Error::Config(
                "use_projection_head is set but the spec has no projection_dims".into(),
            ));
        }
        Ok(Self {
            spec: spec.clone(),
            encoder: params.encoder,
            projection,
            loss_variant: cfg.loss_variant,
            temperature: cfg.temperature,
        })
    }

    pub fn use_projection_head(&self) -> bool {
        self.projection.is_some()
    }

    /// Latent representations `h = f(x)`.
    pub fn embed(&self, x: &Matrix<T>) -> Result<Matrix<T>> {
        self.encoder.infer(x)
    }

    /// Parameter buffers: encoder layers, then projection layers.
    pub fn tensors_mut(&mut self) -> Vec<&mut [T]> {
        let mut t = self.encoder.tensors_mut();
        if let Some(p) = &mut self.projection {
            t.extend(p.tensors_mut());
        }
        t
    }

    pub fn tensor_sizes(&self) -> Vec<usize> {
        let mut s = self.encoder.tensor_sizes();
        if let Some(p) = &self.projection {
            s.extend(p.tensor_sizes());
        }
        s
    }

    /// Loss on one view pair and its gradient for every parameter tensor, in
    /// [`Self::tensors_mut`] order.
    pub fn loss_and_grads(&self, view_a: &Matrix<T>, view_b: &Matrix<T>) -> Result<(T, Vec<Vec<T>>)> {
        let tau = T::lit(self.temperature);
        let (h_a, enc_a) = self.encoder.forward(view_a)?;
        let (h_b, enc_b) = self.encoder.forward(view_b)?;
        let (loss, dh_a, dh_b, proj_grads) = match &self.projection {
            Some(head) => {
                let (z_a, head_a) = head.forward(&h_a)?;
                let (z_b, head_b) = head.forward(&h_b)?;
                let out = self.loss_variant.evaluate(&z_a, &z_b, tau)?;
                let mut ga = head.backward(&head_a, &out.grad_a)?;
                let gb = head.backward(&head_b, &out.grad_b)?;
                ga.accumulate(&gb)?;
                (out.loss, ga.input.clone(), gb.input, Some(ga))
            }
            None => {
                let out = self.loss_variant.evaluate(&h_a, &h_b, tau)?;
                (out.loss, out.grad_a, out.grad_b, None)
            }
        };
        let mut grads = self.encoder.backward(&enc_a, &dh_a)?;
        grads.accumulate(&self.encoder.backward(&enc_b, &dh_b)?)?;
        let mut flat: Vec<Vec<T>> = grads.tensors().into_iter().map(<[T]>::to_vec).collect();
        if let Some(pg) = proj_grads {
            flat.extend(pg.tensors().into_iter().map(<[T]>::to_vec));
        }
        Ok((loss, flat))
    }

    pub fn to_json(&self) -> Result<String> {
        let enc = LayerFile::from_mlp(&self.encoder);
        let file = ModelFile {
            format_version: MODEL_FORMAT_VERSION,
            model_type: "contrastive".into(),
            spec: self.spec.clone(),
            weights: enc.weights,
            biases: enc.biases,
            use_projection_head: self.use_projection_head(),
            projection: self.projection.as_ref().map(LayerFile::from_mlp),
            loss_variant: self.loss_variant,
            temperature: self.temperature,
        };
        Ok(serde_json::to_string_pretty(&file)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let file: ModelFile<T> = serde_json::from_str(text)?;
        if file.format_version != MODEL_FORMAT_VERSION {
            return Err(Error::Data(format!(
                "unsupported model format_version {}",
                file.format_version
            )));
        }
        file.spec.validate()?;
        let encoder = LayerFile {
            weights: file.weights,
            biases: file.biases,
        }
        .into_mlp(&file.spec.layer_dims)?;
        let projection = match (file.use_projection_head, file.projection, &file.spec.projection_dims) {
            (true, Some(p), Some(dims)) => Some(p.into_mlp(dims)?),
            (false, None, _) => None,
            _ => {
                return Err(Error::Data(
                    "projection head fields are inconsistent with use_projection_head".into(),
                ))
            }
        };
        Ok(Self {
            spec: file.spec,
            encoder,
            projection,
            loss_variant: file.loss_variant,
            temperature: file.temperature,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_file(path, self.to_json()?.as_bytes())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let mut text = String::new();
        std::io::Read::read_to_string(&mut open(path)?, &mut text).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }
}

/// Per-epoch training record.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainLog {
    /// Mean batch loss of each completed epoch.
    pub epoch_losses: Vec<f64>,
    pub epoch_seconds: Vec<f64>,
}

impl TrainLog {
    pub fn final_loss(&self) -> Option<f64> {
        self.epoch_losses.last().copied()
    }

    /// CSV with `epoch,loss` and, when `with_timings`, a `seconds` column.
    /// Leave timings out when the file must be reproducible byte for byte.
    pub fn to_csv(&self, with_timings: bool) -> String {
        let mut out = String::from(if with_timings { "epoch,loss,seconds\n" } else { "epoch,loss\n" });
        for (i, loss) in self.epoch_losses.iter().enumerate() {
            if with_timings {
                out.push_str(&format!("{},{},{}\n", i + 1, loss, self.epoch_seconds[i]));
            } else {
                out.push_str(&format!("{},{}\n", i + 1, loss));
            }
        }
        out
    }
}

/// Contrastive training.
///
/// Each epoch visits the rows in a seed-shuffled order, in mini-batches of
/// `batch_size` (a trailing batch is kept if it has at least two rows). Per
/// batch: two augmented views, encoder (and head) forward, loss, backward,
/// one Adam step. Deterministic for fixed seeds.
pub fn train<T: Scalar>(
    data: &Matrix<T>,
    spec: &MlpSpec,
    aug: &AugmentConfig,
    cfg: &ContrastiveConfig,
) -> Result<(EncoderModel<T>, TrainLog)> {
    cfg.validate()?;
    aug.validate()?;
    spec.validate()?;
    if data.cols() != spec.input_dim() {
        return Err(Error::DimensionMismatch {
            expected: spec.input_dim(),
            found: data.cols(),
        });
    }
    if data.rows() < 2 {
        return Err(Error::Data("training needs at least 2 rows".into()));
    }
    let mut model = EncoderModel::<T>::init(spec, cfg)?;
    let mut log = TrainLog::default();
    let mut adam = AdamState::new(&model.tensor_sizes(), cfg.optimizer);
    let mut order_rng = rng_from_seed(derive_seed(cfg.seed, "shuffle"));
    let mut aug_rng = rng_from_seed(aug.seed);
    let mut order: Vec<usize> = (0..data.rows()).collect();

    for epoch in 0..cfg.epochs {
        let started = Instant::now();
        order.shuffle(&mut order_rng);
        let mut total = 0.0;
        let mut batches = 0usize;
        for (b, chunk) in order.chunks(cfg.batch_size).enumerate() {
            if chunk.len() < 2 {
                continue;
            }
            let batch = data.select_rows(chunk);
            let views = make_views(&batch, aug, &mut aug_rng)?;
            let (loss, grads) = model
                .loss_and_grads(&views.view_a, &views.view_b)
                .map_err(|e| match e {
                    Error::ZeroNorm { .. } => Error::Numeric(format!(
                        "embedding collapsed to zero norm at epoch {} batch {b}: {e}",
                        epoch + 1
                    )),
                    other => other,
                })?;
            if !loss.is_finite() {
                return Err(Error::Numeric(format!(
                    "non-finite loss at epoch {} batch {b}",
                    epoch + 1
                )));
            }
            let grad_refs: Vec<&[T]> = grads.iter().map(Vec::as_slice).collect();
            adam.step(&mut model.tensors_mut(), &grad_refs)
                .map_err(|e| Error::Numeric(format!("epoch {} batch {b}: {e}", epoch + 1)))?;
            total += loss.as_f64();
            batches += 1;
        }
        log.epoch_losses.push(total / batches.max(1) as f64);
        log.epoch_seconds.push(started.elapsed().as_secs_f64());
    }
    Ok((model, log))
}
