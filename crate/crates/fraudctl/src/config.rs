use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use fraud_core::augment::AugmentConfig;
use fraud_core::baselines::AutoencoderConfig;
use fraud_core::contrastive::ContrastiveConfig;
use fraud_core::data::{Schema, SynthConfig};
use fraud_core::nn::{Activation, MlpSpec};
use fraud_core::scoring::DecisionRule;
use fraud_core::seed::derive_seed;
use fraud_core::{Error, Result};

/// Where a command reads its rows.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    /// Feature CSV. Defaults to `features.csv` in the output directory,
    /// which is what `gen-synth` writes.
    pub features: Option<PathBuf>,
    /// Label CSV (single `label` column). Only `eval` reads it.
    pub labels: Option<PathBuf>,
    pub schema: Schema,
}

/// Encoder widths after the input layer; the input width comes from the data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EncoderConfig {
    pub hidden_dims: Vec<usize>,
    pub embedding_dim: usize,
    pub projection_dims: Vec<usize>,
    pub activation: Activation,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        Self {
            hidden_dims: vec![64, 64],
            embedding_dim: 32,
            projection_dims: vec![32, 16],
            activation: Activation::Relu,
        }
    }
}

impl EncoderConfig {
    pub fn spec(&self, input_dim: usize, with_projection: bool) -> MlpSpec {
        let mut layer_dims = vec![input_dim];
        layer_dims.extend(&self.hidden_dims);
        layer_dims.push(self.embedding_dim);
        let projection_dims = (with_projection && !self.projection_dims.is_empty()).then(|| {
            let mut p = vec![self.embedding_dim];
            p.extend(&self.projection_dims);
            p
        });
        MlpSpec {
            layer_dims,
            activation: self.activation,
            projection_dims,
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScoreTarget {
    /// The held-out partition, compared against the training embeddings.
    #[default]
    Test,
    /// The training partition against itself, excluding self-pairs.
    Train,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScoringConfig {
    pub rule: String,
    /// Share of scored rows to flag when `threshold` is not fixed.
    pub contamination: f64,
    pub threshold: Option<f64>,
    /// Cap on reference rows; larger training sets are subsampled.
    pub max_reference_size: usize,
    pub target: ScoreTarget,
}

impl Default for ScoringConfig {
    fn default() -> Self {
        Self {
            rule: DecisionRule::default().name().to_string(),
            contamination: 0.1,
            threshold: None,
            max_reference_size: 5000,
            target: ScoreTarget::Test,
        }
    }
}

impl ScoringConfig {
    pub fn decision_rule(&self) -> Result<DecisionRule> {
        self.rule.parse()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct KMeansConfig {
    pub k: usize,
    pub max_iter: usize,
}

impl Default for KMeansConfig {
    fn default() -> Self {
        Self { k: 8, max_iter: 300 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct IForestConfig {
    pub n_trees: usize,
    pub subsample_size: usize,
}

impl Default for IForestConfig {
    fn default() -> Self {
        Self {
            n_trees: 100,
            subsample_size: 256,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BaselinesConfig {
    pub kmeans: KMeansConfig,
    pub iforest: IForestConfig,
    pub autoencoder: AutoencoderConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub master_seed: u64,
    pub output_dir: PathBuf,
    pub standardize: bool,
    pub train_frac: f64,
    pub data: DataConfig,
    pub synthetic: SynthConfig,
    pub augment: AugmentConfig,
    pub encoder: EncoderConfig,
    pub contrastive: ContrastiveConfig,
    pub scoring: ScoringConfig,
    pub baselines: BaselinesConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            master_seed: 0,
            output_dir: PathBuf::from("out"),
            standardize: true,
            train_frac: 0.8,
            data: DataConfig::default(),
            synthetic: SynthConfig::default(),
            augment: AugmentConfig::default(),
            encoder: EncoderConfig::default(),
            contrastive: ContrastiveConfig::default(),
            scoring: ScoringConfig::default(),
            baselines: BaselinesConfig::default(),
        }
    }
}

/// Sections whose `seed` field is filled from `master_seed`.
const SEEDED_SECTIONS: [&str; 4] = ["synthetic", "augment", "contrastive", "baselines.autoencoder"];

impl ExperimentConfig {
    /// Parses TOML, rejecting per-section seeds (they are derived).
    pub fn from_toml(text: &str) -> Result<Self> {
        let value: toml::Table = text.parse().map_err(|e| Error::Config(format!("invalid TOML: {e}")))?;
        for section in SEEDED_SECTIONS {
            let mut node = Some(&value);
            for part in section.split('.') {
                node = node.and_then(|t| t.get(part)).and_then(toml::Value::as_table);
            }
            if node.is_some_and(|t| t.contains_key("seed")) {
                return Err(Error::Config(format!(
                    "[{section}] sets `seed`; component seeds are derived from master_seed"
                )));
            }
        }
        let mut cfg: Self = value
            .try_into()
            .map_err(|e: toml::de::Error| Error::Config(e.message().to_string()))?;
        cfg.derive_seeds();
        Ok(cfg)
    }

    /// Loads `path`; relative paths inside are resolved against its directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read config {}: {e}", path.display())))?;
        let mut cfg = Self::from_toml(&text)?;
        let base = path.parent().unwrap_or(Path::new(""));
        cfg.resolve_paths(base);
        Ok(cfg)
    }

    pub fn resolve_paths(&mut self, base: &Path) {
        let resolve = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        resolve(&mut self.output_dir);
        if let Some(p) = self.data.features.as_mut() {
            resolve(p);
        }
        if let Some(p) = self.data.labels.as_mut() {
            resolve(p);
        }
    }

    pub fn set_master_seed(&mut self, seed: u64) {
        self.master_seed = seed;
        self.derive_seeds();
    }

    fn derive_seeds(&mut self) {
        let m = self.master_seed;
        self.synthetic.seed = derive_seed(m, "synthetic");
        self.augment.seed = derive_seed(m, "augment");
        self.contrastive.seed = derive_seed(m, "contrastive");
        self.baselines.autoencoder.seed = derive_seed(m, "autoencoder");
    }

    pub fn seed_for(&self, component: &str) -> u64 {
        derive_seed(self.master_seed, component)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.train_frac > 0.0 && self.train_frac < 1.0) {
            return Err(Error::Config(format!(
                "train_frac must lie strictly between 0 and 1, got {}",
                self.train_frac
            )));
        }
        self.scoring.decision_rule()?;
        if !(self.scoring.contamination > 0.0 && self.scoring.contamination < 1.0) {
            return Err(Error::Config("scoring.contamination must lie strictly between 0 and 1".into()));
        }
        if self.scoring.threshold.is_some_and(|t| !t.is_finite()) {
            return Err(Error::Config("scoring.threshold must be finite".into()));
        }
        if self.scoring.max_reference_size < 2 {
            return Err(Error::Config("scoring.max_reference_size must be ≥ 2".into()));
        }
        self.augment.validate()?;
        self.contrastive.validate()?;
        self.baselines.autoencoder.validate()?;
        Ok(())
    }

    pub fn features_path(&self) -> PathBuf {
        self.data
            .features
            .clone()
            .unwrap_or_else(|| self.output_dir.join("features.csv"))
    }

    /// Explicit label file, else the `gen-synth` output when the features
    /// also come from there. `None` means labels live in the feature CSV.
    pub fn labels_path(&self) -> Option<PathBuf> {
        match (&self.data.labels, &self.data.features) {
            (Some(p), _) => Some(p.clone()),
            (None, None) => Some(self.output_dir.join("labels.csv")),
            (None, Some(_)) => None,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_document_gives_defaults() {
        let cfg = ExperimentConfig::from_toml("").unwrap();
        assert_eq!(cfg.train_frac, 0.8);
        assert_eq!(cfg.scoring.decision_rule().unwrap(), DecisionRule::LowMean);
        assert_eq!(cfg.augment.seed, derive_seed(0, "augment"));
        cfg.validate().unwrap();
    }

    #[test]
    fn sections_parse() {
        let cfg = ExperimentConfig::from_toml(
            r#"
            master_seed = 7
            [synthetic]
            n_normal = 300
            n_fraud = 30
            [contrastive]
            epochs = 3
            lr = 0.01
            [encoder]
            hidden_dims = [16]
            embedding_dim = 8
            [baselines.kmeans]
            k = 3
            "#,
        )
        .unwrap();
        assert_eq!(cfg.synthetic.n_normal, 300);
        assert_eq!(cfg.contrastive.optimizer.lr, 0.01);
        assert_eq!(cfg.baselines.kmeans.k, 3);
        assert_eq!(cfg.contrastive.seed, derive_seed(7, "contrastive"));
        let spec = cfg.encoder.spec(5, true);
        assert_eq!(spec.layer_dims, vec![5, 16, 8]);
        assert_eq!(spec.projection_dims, Some(vec![8, 32, 16]));
    }

    #[test]
    fn rejects_bad_documents() {
        for doc in ["[augment]\nseed = 3", "bogus = 1", "[scoring]\nrule = \"median\"", "train_frac = 1.5"] {
            let err = ExperimentConfig::from_toml(doc).and_then(|c| c.validate());
            assert!(matches!(err, Err(Error::Config(_))), "{doc}: {err:?}");
        }
    }

    #[test]
    fn paths_resolve_against_config_dir() {
        let mut cfg = ExperimentConfig::from_toml("output_dir = \"run\"\n[data]\nfeatures = \"x.csv\"").unwrap();
        cfg.resolve_paths(Path::new("/tmp/exp"));
        assert_eq!(cfg.output_dir, PathBuf::from("/tmp/exp/run"));
        assert_eq!(cfg.features_path(), PathBuf::from("/tmp/exp/x.csv"));
        assert_eq!(cfg.labels_path(), None);
    }
}
