//! Reference detectors: k-means distance, isolation forest, autoencoder
//! reconstruction error. All score "higher is more anomalous".

pub mod autoencoder;
pub mod iforest;
pub mod kmeans;

use std::path::Path;

use serde::{Deserialize, Serialize};

pub use autoencoder::{autoencoder_fit, autoencoder_score, AutoencoderConfig, AutoencoderModel};
pub use iforest::{iforest_fit, iforest_score, IsolationForestModel};
pub use kmeans::{kmeans_fit, kmeans_score, KMeansModel};

use crate::data::{open, write_file};
use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::scalar::Scalar;

pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BaselineKind {
    Kmeans,
    Iforest,
    Autoencoder,
}

impl BaselineKind {
    pub const ALL: [BaselineKind; 3] = [BaselineKind::Kmeans, BaselineKind::Iforest, BaselineKind::Autoencoder];

    pub fn name(self) -> &'static str {
        match self {
            BaselineKind::Kmeans => "kmeans",
            BaselineKind::Iforest => "iforest",
            BaselineKind::Autoencoder => "autoencoder",
        }
    }
}

impl std::fmt::Display for BaselineKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for BaselineKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "kmeans" => Ok(BaselineKind::Kmeans),
            "iforest" => Ok(BaselineKind::Iforest),
            "autoencoder" => Ok(BaselineKind::Autoencoder),
            "vae" => Err(Error::Config(
                "baseline \"vae\" is not implemented; see the README".into(),
            )),
            other => Err(Error::Config(format!(
                "unknown baseline {other:?}; expected kmeans, iforest or autoencoder"
            ))),
        }
    }
}

/// A fitted baseline, tagged by `model_type` when serialized.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "model_type", rename_all = "snake_case", bound = "T: Scalar")]
pub enum BaselineModel<T> {
    Kmeans(KMeansModel<T>),
    Iforest(IsolationForestModel<T>),
    Autoencoder(AutoencoderModel<T>),
}

#[derive(Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
struct BaselineFile<T> {
    format_version: u32,
    #[serde(flatten)]
    model: BaselineModel<T>,
}

impl<T: Scalar> BaselineModel<T> {
    pub fn kind(&self) -> BaselineKind {
        match self {
            BaselineModel::Kmeans(_) => BaselineKind::Kmeans,
            BaselineModel::Iforest(_) => BaselineKind::Iforest,
            BaselineModel::Autoencoder(_) => BaselineKind::Autoencoder,
        }
    }

    pub fn score(&self, query: &Matrix<T>) -> Result<Vec<T>> {
        match self {
            BaselineModel::Kmeans(m) => kmeans_score(m, query),
            BaselineModel::Iforest(m) => iforest_score(m, query),
            BaselineModel::Autoencoder(m) => autoencoder_score(m, query),
        }
    }

    pub fn to_json(&self) -> Result<String> {
        let file = BaselineFile {
            format_version: FORMAT_VERSION,
            model: self.clone(),
        };
        Ok(serde_json::to_string_pretty(&file)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let file: BaselineFile<T> = serde_json::from_str(text)?;
        if file.format_version != FORMAT_VERSION {
            return Err(Error::Data(format!(
                "unsupported baseline format_version {}",
                file.format_version
            )));
        }
        Ok(file.model)
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

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seed::rng_from_seed;
    use rand::Rng as _;
    use rand_distr::StandardNormal;

    #[test]
    fn round_trip_every_kind() {
        let mut rng = rng_from_seed(0);
        let data: Matrix<f64> = Matrix::from_fn(40, 4, |_, _| rng.sample(StandardNormal));
        let ae_cfg = AutoencoderConfig {
            epochs: 2,
            ..AutoencoderConfig::default()
        };
        let models = [
            BaselineModel::Kmeans(kmeans_fit(&data, 3, 1, 20).unwrap()),
            BaselineModel::Iforest(iforest_fit(&data, 5, 16, 1).unwrap()),
            BaselineModel::Autoencoder(autoencoder_fit(&data, &ae_cfg).unwrap().0),
        ];
        for (model, kind) in models.iter().zip(BaselineKind::ALL) {
            assert_eq!(model.kind(), kind);
            let json = model.to_json().unwrap();
            assert!(json.contains(&format!("\"model_type\": \"{kind}\"")));
            let back = BaselineModel::<f64>::from_json(&json).unwrap();
            assert_eq!(back.score(&data).unwrap(), model.score(&data).unwrap());
        }
    }

    #[test]
    fn parse_kind() {
        assert_eq!("iforest".parse::<BaselineKind>().unwrap(), BaselineKind::Iforest);
        assert!("vae".parse::<BaselineKind>().unwrap_err().to_string().contains("not implemented"));
        assert!("svm".parse::<BaselineKind>().is_err());
    }
}
