//! Ingestion, standardization, splitting and synthetic data generation.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng as _;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::scalar::Scalar;
use crate::seed::rng_from_seed;

/// Ground-truth fraud labels (`0` normal, `1` fraud).
///
/// Labels can be loaded, reordered and written, but their values are only
/// readable inside this crate's evaluation code. Nothing that fits a model
/// accepts a `Labels`, so training cannot depend on them.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Labels(Vec<u8>);

impl Labels {
    pub fn new(values: Vec<u8>) -> Result<Self> {
        if let Some(pos) = values.iter().position(|&v| v > 1) {
            return Err(Error::Data(format!(
                "label at row {pos} is {}; labels must be 0 or 1",
                values[pos]
            )));
        }
        Ok(Self(values))
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// Labels for the given rows, in the given order.
    pub fn select(&self, indices: &[usize]) -> Result<Self> {
        indices
            .iter()
            .map(|&i| {
                self.0.get(i).copied().ok_or_else(|| {
                    Error::Data(format!("label index {i} out of range ({})", self.0.len()))
                })
            })
            .collect::<Result<Vec<_>>>()
            .map(Self)
    }

    pub(crate) fn values(&self) -> &[u8] {
        &self.0
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut out = String::from("label\n");
        for v in &self.0 {
            out.push_str(if *v == 1 { "1\n" } else { "0\n" });
        }
        write_file(path, out.as_bytes())
    }

    pub fn read_csv(path: &Path) -> Result<Self> {
        let mut reader = csv::ReaderBuilder::new()
            .has_headers(true)
            .from_reader(open(path)?);
        let mut values = Vec::new();
        for (row, record) in reader.records().enumerate() {
            let record = record?;
            let field = record.get(0).unwrap_or("").trim();
            values.push(parse_label(field, row)?);
        }
        Self::new(values)
    }
}

fn parse_label(field: &str, row: usize) -> Result<u8> {
    match field.parse::<f64>() {
        Ok(v) if v == 0.0 => Ok(0),
        Ok(v) if v == 1.0 => Ok(1),
        _ => Err(Error::Data(format!(
            "label at row {row} is {field:?}; labels must be 0 or 1"
        ))),
    }
}

pub(crate) fn open(path: &Path) -> Result<File> {
    File::open(path).map_err(|e| Error::io(path, e))
}

pub(crate) fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
    }
    let mut file = File::create(path).map_err(|e| Error::io(path, e))?;
    file.write_all(bytes).map_err(|e| Error::io(path, e))
}

/// What to do with a categorical value that is not in the declared list.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum UnknownCategory {
    #[default]
    Error,
    /// Encode as an all-zero one-hot block.
    Ignore,
}

/// Column roles for [`load_csv`]. Columns not mentioned are numeric.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Schema {
    /// Name of the 0/1 label column, if the file carries one.
    pub label: Option<String>,
    /// Categorical columns and their allowed values. An empty list means the
    /// categories are taken from the file itself (sorted).
    pub categorical: BTreeMap<String, Vec<String>>,
    pub ignore: Vec<String>,
    pub unknown_category: UnknownCategory,
}

/// A parsed transaction table: numeric features (categoricals already one-hot
/// encoded) plus the optional label column held apart from them.
#[derive(Debug, Clone)]
pub struct RawTable<T> {
    pub feature_names: Vec<String>,
    pub features: Matrix<T>,
    pub labels: Option<Labels>,
}

enum Role {
    Numeric,
    Categorical(Vec<String>),
    Label,
    Ignore,
}

/// Reads a comma-separated file with a header row.
///
/// Row order is preserved. Missing values are rejected.
pub fn load_csv<T: Scalar>(path: &Path, schema: &Schema) -> Result<RawTable<T>> {
    let mut text = String::new();
    open(path)?
        .read_to_string(&mut text)
        .map_err(|e| Error::io(path, e))?;
    parse_csv(&text, schema)
}

pub fn parse_csv<T: Scalar>(text: &str, schema: &Schema) -> Result<RawTable<T>> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .from_reader(text.as_bytes());
    let header: Vec<String> = reader.headers()?.iter().map(|h| h.trim().to_string()).collect();
    if header.is_empty() || header.iter().all(String::is_empty) {
        return Err(Error::Data("missing header row".into()));
    }
    for name in schema
        .categorical
        .keys()
        .chain(&schema.ignore)
        .chain(schema.label.iter())
    {
        if !header.contains(name) {
            return Err(Error::Config(format!("schema names unknown column {name:?}")));
        }
    }

    let mut records = Vec::new();
    for record in reader.records() {
        let record = record?;
        let line = record.position().map_or(0, |p| p.line());
        if record.len() != header.len() {
            return Err(Error::RowArity {
                line,
                expected: header.len(),
                found: record.len(),
            });
        }
        let fields: Vec<String> = record.iter().map(|f| f.trim().to_string()).collect();
        if let Some(col) = fields.iter().position(String::is_empty) {
            return Err(Error::Data(format!(
                "missing value in column {:?} at line {line}",
                header[col]
            )));
        }
        records.push((line, fields));
    }

    let roles: Vec<Role> = header
        .iter()
        .enumerate()
        .map(|(col, name)| {
            if schema.label.as_deref() == Some(name.as_str()) {
                Role::Label
            } else if schema.ignore.contains(name) {
                Role::Ignore
            } else if let Some(declared) = schema.categorical.get(name) {
                if declared.is_empty() {
                    let mut seen: Vec<String> =
                        records.iter().map(|(_, f)| f[col].clone()).collect();
                    seen.sort();
                    seen.dedup();
                    Role::Categorical(seen)
                } else {
                    Role::Categorical(declared.clone())
                }
            } else {
                Role::Numeric
            }
        })
        .collect();

    let mut feature_names = Vec::new();
    for (name, role) in header.iter().zip(&roles) {
        match role {
            Role::Numeric => feature_names.push(name.clone()),
            Role::Categorical(cats) => {
                feature_names.extend(cats.iter().map(|c| format!("{name}={c}")))
            }
            Role::Label | Role::Ignore => {}
        }
    }

    let width = feature_names.len();
    let mut data = Vec::with_capacity(records.len() * width);
    let mut labels = Vec::new();
    for (row, (line, fields)) in records.iter().enumerate() {
        for ((field, role), name) in fields.iter().zip(&roles).zip(&header) {
            match role {
                Role::Numeric => {
                    let value: f64 = field.parse().map_err(|_| {
                        Error::Data(format!(
                            "non-numeric value {field:?} in numeric column {name:?} at line {line}"
                        ))
                    })?;
                    if !value.is_finite() {
                        return Err(Error::Data(format!(
                            "non-finite value in column {name:?} at line {line}"
                        )));
                    }
                    data.push(T::lit(value));
                }
                Role::Categorical(cats) => {
                    let hit = cats.iter().position(|c| c == field);
                    if hit.is_none() && schema.unknown_category == UnknownCategory::Error {
                        return Err(Error::Data(format!(
                            "unseen category {field:?} in column {name:?} at line {line}"
                        )));
                    }
                    data.extend((0..cats.len()).map(|k| {
                        if Some(k) == hit {
                            T::one()
                        } else {
                            T::zero()
                        }
                    }));
                }
                Role::Label => labels.push(parse_label(field, row)?),
                Role::Ignore => {}
            }
        }
    }

    Ok(RawTable {
        feature_names,
        features: Matrix::from_vec(records.len(), width, data)?,
        labels: if schema.label.is_some() {
            Some(Labels::new(labels)?)
        } else {
            None
        },
    })
}

/// Writes features with a header row. Numbers use the shortest
/// representation that parses back to the same value.
pub fn write_features_csv<T: Scalar>(path: &Path, names: &[String], data: &Matrix<T>) -> Result<()> {
    if names.len() != data.cols() {
        return Err(Error::DimensionMismatch {
            expected: data.cols(),
            found: names.len(),
        });
    }
    let mut writer = csv::Writer::from_writer(Vec::new());
    writer.write_record(names)?;
    for row in data.iter_rows() {
        writer.write_record(row.iter().map(|v| v.to_string()))?;
    }
    let bytes = writer
        .into_inner()
        .map_err(|e| Error::Data(format!("csv buffer: {e}")))?;
    write_file(path, &bytes)
}

pub fn default_feature_names(n: usize) -> Vec<String> {
    (0..n).map(|j| format!("f{j}")).collect()
}

const PARAMS_FORMAT_VERSION: u32 = 1;

/// Per-feature mean and standard deviation learned from a fitting set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound(deserialize = "T: Scalar"))]
pub struct StandardizationParams<T> {
    pub format_version: u32,
    /// Names of the retained features, in output order.
    pub feature_names: Vec<String>,
    pub means: Vec<T>,
    pub stds: Vec<T>,
    pub dropped_features: Vec<String>,
    /// Width of the matrices this was fitted on.
    pub input_dim: usize,
    /// Input column index of each retained feature.
    pub retained_columns: Vec<usize>,
}

/// Fits per-column mean and population standard deviation.
///
/// Constant columns are dropped and listed in `dropped_features`.
pub fn fit_standardizer<T: Scalar>(
    data: &Matrix<T>,
    names: &[String],
) -> Result<StandardizationParams<T>> {
    let (n, d) = data.shape();
    if names.len() != d {
        return Err(Error::DimensionMismatch {
            expected: d,
            found: names.len(),
        });
    }
    if n < 2 {
        return Err(Error::Data(format!(
            "standardization needs at least 2 rows, got {n}"
        )));
    }
    let count = T::from_count(n);
    let mut params = StandardizationParams {
        format_version: PARAMS_FORMAT_VERSION,
        feature_names: Vec::new(),
        means: Vec::new(),
        stds: Vec::new(),
        dropped_features: Vec::new(),
        input_dim: d,
        retained_columns: Vec::new(),
    };
    for (j, name) in names.iter().enumerate() {
        let column = data.column(j);
        let first = column[0];
        if column.iter().all(|&x| x == first) {
            params.dropped_features.push(name.clone());
            continue;
        }
        let mean = column.iter().copied().sum::<T>() / count;
        let var = column.iter().map(|&x| (x - mean) * (x - mean)).sum::<T>() / count;
        params.feature_names.push(name.clone());
        params.means.push(mean);
        params.stds.push(var.sqrt());
        params.retained_columns.push(j);
    }
    if params.retained_columns.is_empty() {
        return Err(Error::Data(
            "all features are constant; nothing to standardize".into(),
        ));
    }
    Ok(params)
}

impl<T: Scalar> StandardizationParams<T> {
    pub fn output_dim(&self) -> usize {
        self.retained_columns.len()
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_file(path, serde_json::to_string_pretty(self)?.as_bytes())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let params: Self = serde_json::from_reader(open(path)?)?;
        let d = params.retained_columns.len();
        if params.means.len() != d || params.stds.len() != d || params.feature_names.len() != d {
            return Err(Error::Data(format!(
                "{}: inconsistent standardization parameter lengths",
                path.display()
            )));
        }
        if params.stds.iter().any(|s| !(*s > T::zero())) {
            return Err(Error::Data(format!(
                "{}: standard deviations must be positive",
                path.display()
            )));
        }
        Ok(params)
    }
}

/// Applies `(x - mean) / std` to each retained column.
pub fn transform<T: Scalar>(data: &Matrix<T>, params: &StandardizationParams<T>) -> Result<Matrix<T>> {
    if data.cols() != params.input_dim {
        return Err(Error::DimensionMismatch {
            expected: params.input_dim,
            found: data.cols(),
        });
    }
    Ok(Matrix::from_fn(data.rows(), params.output_dim(), |i, k| {
        (data.get(i, params.retained_columns[k]) - params.means[k]) / params.stds[k]
    }))
}

/// Parameters of the labelled Gaussian-mixture generator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    pub n_normal: usize,
    pub n_fraud: usize,
    pub n_features: usize,
    /// Per-feature displacement of each fraud mode's mean.
    pub fraud_shift: f64,
    /// Scale applied to the normal-process draw for fraud samples.
    pub fraud_scale: f64,
    pub n_fraud_modes: usize,
    /// Number of components in the normal mixture.
    pub n_normal_modes: usize,
    /// Standard deviation of the normal component centres.
    pub normal_mode_spread: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            n_normal: 2000,
            n_fraud: 200,
            n_features: 10,
            fraud_shift: 1.5,
            fraud_scale: 0.3,
            n_fraud_modes: 2,
            n_normal_modes: 3,
            normal_mode_spread: 1.0,
            seed: 0,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_fraud < 1 {
            return Err(Error::Config("fraud count must be ≥ 1".into()));
        }
        if self.n_normal < 1 || self.n_features < 1 || self.n_fraud_modes < 1 || self.n_normal_modes < 1 {
            return Err(Error::Config(
                "n_normal, n_features, n_fraud_modes and n_normal_modes must be ≥ 1".into(),
            ));
        }
        if self.n_fraud >= self.n_normal {
            return Err(Error::Config(format!(
                "fraud must be the minority class (n_fraud {} ≥ n_normal {})",
                self.n_fraud, self.n_normal
            )));
        }
        if !self.fraud_shift.is_finite()
            || !(self.fraud_scale > 0.0 && self.fraud_scale.is_finite())
            || !(self.normal_mode_spread >= 0.0 && self.normal_mode_spread.is_finite())
        {
            return Err(Error::Config(
                "fraud_shift must be finite; fraud_scale must be > 0; normal_mode_spread ≥ 0".into(),
            ));
        }
        Ok(())
    }
}

/// Draws `n_normal + n_fraud` labelled rows.
///
/// A normal row is `centre_c + z` for a uniformly chosen mixture component
/// `c` and `z ~ N(0, I)`. A fraud row applies the same process and then maps
/// the draw `x` to `offset_m + fraud_scale * x`, where fraud mode `m` has
/// offset `fraud_shift * s_m` for a random sign vector `s_m`. With
/// `fraud_shift = 0` and `fraud_scale = 1` the two classes coincide in
/// distribution. Rows are returned in a seed-derived random order.
pub fn generate_synthetic<T: Scalar>(cfg: &SynthConfig) -> Result<(Matrix<T>, Labels)> {
    cfg.validate()?;
    let d = cfg.n_features;
    let mut rng = rng_from_seed(cfg.seed);

    let centres: Vec<Vec<f64>> = (0..cfg.n_normal_modes)
        .map(|_| {
            (0..d)
                .map(|_| cfg.normal_mode_spread * rng.sample::<f64, _>(StandardNormal))
                .collect()
        })
        .collect();
    let offsets: Vec<Vec<f64>> = (0..cfg.n_fraud_modes)
        .map(|_| {
            (0..d)
                .map(|_| if rng.random::<bool>() { cfg.fraud_shift } else { -cfg.fraud_shift })
                .collect()
        })
        .collect();

    let total = cfg.n_normal + cfg.n_fraud;
    let mut rows: Vec<Vec<f64>> = Vec::with_capacity(total);
    let mut labels = Vec::with_capacity(total);
    for i in 0..total {
        let centre = &centres[rng.random_range(0..cfg.n_normal_modes)];
        let mut x: Vec<f64> = centre
            .iter()
            .map(|&c| c + rng.sample::<f64, _>(StandardNormal))
            .collect();
        if i >= cfg.n_normal {
            let offset = &offsets[(i - cfg.n_normal) % cfg.n_fraud_modes];
            for (v, &o) in x.iter_mut().zip(offset) {
                *v = o + cfg.fraud_scale * *v;
            }
            labels.push(1);
        } else {
            labels.push(0);
        }
        rows.push(x);
    }

    let mut order: Vec<usize> = (0..total).collect();
    order.shuffle(&mut rng);
    let features = Matrix::from_fn(total, d, |i, j| T::lit(rows[order[i]][j]));
    let labels = order.iter().map(|&i| labels[i]).collect();
    Ok((features, Labels(labels)))
}

/// Row indices of a train/test partition, each sorted ascending.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitIndices {
    pub train: Vec<usize>,
    pub test: Vec<usize>,
}

/// Seeded random partition of `0..n_rows`.
pub fn split_indices(n_rows: usize, train_frac: f64, seed: u64) -> Result<SplitIndices> {
    if !(train_frac > 0.0 && train_frac < 1.0) {
        return Err(Error::Config(format!(
            "train_frac must lie strictly between 0 and 1, got {train_frac}"
        )));
    }
    let n_train = (train_frac * n_rows as f64).round() as usize;
    if n_train == 0 || n_train >= n_rows {
        return Err(Error::Data(format!(
            "train_frac {train_frac} on {n_rows} rows leaves an empty partition"
        )));
    }
    let mut order: Vec<usize> = (0..n_rows).collect();
    order.shuffle(&mut rng_from_seed(seed));
    let mut train = order[..n_train].to_vec();
    let mut test = order[n_train..].to_vec();
    train.sort_unstable();
    test.sort_unstable();
    Ok(SplitIndices { train, test })
}

/// A split of feature rows with their labels (if any) carried alongside.
#[derive(Debug, Clone)]
pub struct Partition<T> {
    pub features: Matrix<T>,
    pub labels: Option<Labels>,
    pub indices: Vec<usize>,
}

pub fn split<T: Scalar>(
    features: &Matrix<T>,
    labels: Option<&Labels>,
    train_frac: f64,
    seed: u64,
) -> Result<(Partition<T>, Partition<T>)> {
    if let Some(labels) = labels {
        if labels.len() != features.rows() {
            return Err(Error::DimensionMismatch {
                expected: features.rows(),
                found: labels.len(),
            });
        }
    }
    let idx = split_indices(features.rows(), train_frac, seed)?;
    let part = |indices: Vec<usize>| -> Result<Partition<T>> {
        Ok(Partition {
            features: features.select_rows(&indices),
            labels: labels.map(|l| l.select(&indices)).transpose()?,
            indices,
        })
    };
    Ok((part(idx.train)?, part(idx.test)?))
}
