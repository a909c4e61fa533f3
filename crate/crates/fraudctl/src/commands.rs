use std::path::{Path, PathBuf};
use std::time::Instant;

use log::info;
use serde::{Deserialize, Serialize};

use fraud_core::baselines::{
    autoencoder_fit, iforest_fit, kmeans_fit, BaselineKind, BaselineModel,
};
use fraud_core::contrastive::{train as train_encoder, EncoderModel};
use fraud_core::data::{
    fit_standardizer, generate_synthetic, load_csv, split_indices, transform, write_features_csv,
    default_feature_names, Labels, SplitIndices, StandardizationParams,
};
use fraud_core::metrics::{comparison_table, export_roc, metrics_report, roc_auc, Flagging, MetricsReport};
use fraud_core::scoring::{choose_threshold, decide, flagged_count, quantile_threshold, score_all, subsample_reference};
use fraud_core::{Error, FeatureMatrix, Result};

use crate::config::{ExperimentConfig, ScoreTarget};
use crate::manifest::RunManifest;

/// Model names in the order the comparison table lists them.
pub const MODELS: [&str; 4] = ["contrastive", "autoencoder", "iforest", "kmeans"];

/// Rule name recorded for baselines, which flag their highest scores.
pub const TOP_SCORES_RULE: &str = "top_contamination";

fn write(out: &Path, name: &str, bytes: &[u8]) -> Result<()> {
    std::fs::create_dir_all(out).map_err(|e| Error::Data(format!("cannot create {}: {e}", out.display())))?;
    let path = out.join(name);
    std::fs::write(&path, bytes).map_err(|e| Error::Data(format!("cannot write {}: {e}", path.display())))
}

fn require(path: &Path, what: &str) -> Result<()> {
    if path.is_file() {
        Ok(())
    } else {
        Err(Error::Data(format!("{what} not found at {}", path.display())))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitFile {
    pub format_version: u32,
    pub n_rows: usize,
    pub train_frac: f64,
    pub seed: u64,
    #[serde(flatten)]
    pub indices: SplitIndices,
}

/// Features, their partition and the standardized training rows.
struct Prepared {
    features: FeatureMatrix,
    split: SplitIndices,
    standardizer: Option<StandardizationParams<f64>>,
    train: FeatureMatrix,
}

impl Prepared {
    fn standardized(&self, rows: &[usize]) -> Result<FeatureMatrix> {
        let raw = self.features.select_rows(rows);
        match &self.standardizer {
            Some(p) => transform(&raw, p),
            None => Ok(raw),
        }
    }
}

fn load_features(cfg: &ExperimentConfig) -> Result<(Vec<String>, FeatureMatrix)> {
    let path = cfg.features_path();
    require(&path, "feature file")?;
    let table = load_csv::<f64>(&path, &cfg.data.schema)?;
    info!("loaded {} rows x {} features from {}", table.features.rows(), table.features.cols(), path.display());
    Ok((table.feature_names, table.features))
}

fn prepare(cfg: &ExperimentConfig) -> Result<Prepared> {
    let (names, features) = load_features(cfg)?;
    let split = split_indices(features.rows(), cfg.train_frac, cfg.seed_for("split"))?;
    let raw_train = features.select_rows(&split.train);
    let standardizer = if cfg.standardize {
        let params = fit_standardizer(&raw_train, &names)?;
        if !params.dropped_features.is_empty() {
            info!("dropped constant features: {:?}", params.dropped_features);
        }
        Some(params)
    } else {
        None
    };
    let train = match &standardizer {
        Some(p) => transform(&raw_train, p)?,
        None => raw_train,
    };
    Ok(Prepared {
        features,
        split,
        standardizer,
        train,
    })
}

fn query_rows(cfg: &ExperimentConfig, split: &SplitIndices) -> Vec<usize> {
    match cfg.scoring.target {
        ScoreTarget::Test => split.test.clone(),
        ScoreTarget::Train => split.train.clone(),
    }
}

pub fn gen_synth(cfg: &ExperimentConfig) -> Result<RunManifest> {
    let started = Instant::now();
    let (features, labels) = generate_synthetic::<f64>(&cfg.synthetic)?;
    let out = &cfg.output_dir;
    let mut manifest = RunManifest::new("gen-synth", cfg);
    write_features_csv(&out.join("features.csv"), &default_feature_names(features.cols()), &features)?;
    labels.write_csv(&out.join("labels.csv"))?;
    manifest.record(out, "features.csv")?;
    manifest.record(out, "labels.csv")?;
    manifest.timings_seconds.insert("total".into(), started.elapsed().as_secs_f64());
    info!("wrote {} rows to {}", features.rows(), out.display());
    manifest.write(out)?;
    Ok(manifest)
}

pub fn train(cfg: &ExperimentConfig) -> Result<RunManifest> {
    cfg.validate()?;
    let started = Instant::now();
    let out = &cfg.output_dir;
    let mut manifest = RunManifest::new("train", cfg);
    let prepared = prepare(cfg)?;

    let split_file = SplitFile {
        format_version: 1,
        n_rows: prepared.features.rows(),
        train_frac: cfg.train_frac,
        seed: cfg.seed_for("split"),
        indices: prepared.split.clone(),
    };
    write(out, "split.json", serde_json::to_string_pretty(&split_file)?.as_bytes())?;
    manifest.record(out, "split.json")?;
    if let Some(params) = &prepared.standardizer {
        params.save(&out.join("standardizer.json"))?;
        manifest.record(out, "standardizer.json")?;
    }

    let spec = cfg.encoder.spec(prepared.train.cols(), cfg.contrastive.use_projection_head);
    info!(
        "training on {} rows, encoder {:?}, {} epochs",
        prepared.train.rows(),
        spec.layer_dims,
        cfg.contrastive.epochs
    );
    let fit_started = Instant::now();
    let (model, log) = train_encoder(&prepared.train, &spec, &cfg.augment, &cfg.contrastive)?;
    manifest.timings_seconds.insert("training".into(), fit_started.elapsed().as_secs_f64());
    manifest.epoch_seconds = log.epoch_seconds.clone();
    if let Some(loss) = log.final_loss() {
        info!("final epoch loss {loss:.6}");
    }
    model.save(&out.join("model.json"))?;
    write(out, "train_log.csv", log.to_csv(false).as_bytes())?;
    manifest.record(out, "model.json")?;
    manifest.record(out, "train_log.csv")?;
    manifest.timings_seconds.insert("total".into(), started.elapsed().as_secs_f64());
    manifest.write(out)?;
    Ok(manifest)
}

/// One row of a `scores_<model>.csv` file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreRow {
    pub sample_index: usize,
    pub mean_sim: Option<f64>,
    pub std_sim: Option<f64>,
    pub score: f64,
    pub is_fraud: u8,
    pub rule: String,
    pub threshold: f64,
}

fn write_scores(out: &Path, name: &str, rows: &[ScoreRow]) -> Result<()> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for row in rows {
        w.serialize(row)?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Data(e.to_string()))?;
    write(out, name, &bytes)
}

pub fn read_scores(path: &Path) -> Result<Vec<ScoreRow>> {
    let file = std::fs::File::open(path).map_err(|e| Error::Data(format!("cannot open {}: {e}", path.display())))?;
    csv::Reader::from_reader(file)
        .deserialize()
        .map(|r| r.map_err(Error::from))
        .collect()
}

fn load_split(cfg: &ExperimentConfig, n_rows: usize) -> Result<SplitIndices> {
    let path = cfg.output_dir.join("split.json");
    require(&path, "split.json (run `train` first)")?;
    let text = std::fs::read_to_string(&path).map_err(|e| Error::Data(format!("{}: {e}", path.display())))?;
    let file: SplitFile = serde_json::from_str(&text)?;
    if file.n_rows != n_rows {
        return Err(Error::Data(format!(
            "split.json covers {} rows but the feature file has {n_rows}",
            file.n_rows
        )));
    }
    Ok(file.indices)
}

pub fn score(cfg: &ExperimentConfig) -> Result<RunManifest> {
    cfg.validate()?;
    let started = Instant::now();
    let out = &cfg.output_dir;
    let mut manifest = RunManifest::new("score", cfg);
    let rule = cfg.scoring.decision_rule()?;

    let (_, features) = load_features(cfg)?;
    let split = load_split(cfg, features.rows())?;
    let standardizer = if cfg.standardize {
        let path = out.join("standardizer.json");
        require(&path, "standardizer.json (run `train` first)")?;
        Some(StandardizationParams::<f64>::load(&path)?)
    } else {
        None
    };
    let model_path = out.join("model.json");
    require(&model_path, "model.json (run `train` first)")?;
    let model = EncoderModel::<f64>::load(&model_path)?;
    let prepared = Prepared {
        train: FeatureMatrix::zeros(0, 0),
        features,
        split,
        standardizer,
    };

    let reference = model.embed(&prepared.standardized(&prepared.split.train)?)?;
    let rows = query_rows(cfg, &prepared.split);
    let stats = match cfg.scoring.target {
        ScoreTarget::Train => {
            if reference.rows() > cfg.scoring.max_reference_size {
                log::warn!("scoring the training set against itself uses all {} rows", reference.rows());
            }
            score_all(&reference, &reference, true)?
        }
        ScoreTarget::Test => {
            let reference =
                subsample_reference(&reference, cfg.scoring.max_reference_size, cfg.seed_for("reference"));
            let query = model.embed(&prepared.standardized(&rows)?)?;
            score_all(&query, &reference, false)?
        }
    };
    let threshold = match cfg.scoring.threshold {
        Some(t) => t,
        None => choose_threshold(&stats, cfg.scoring.contamination, rule)?,
    };
    let scored: Vec<ScoreRow> = rows
        .iter()
        .zip(&stats)
        .map(|(&i, s)| {
            let d = decide(s, threshold, rule);
            ScoreRow {
                sample_index: i,
                mean_sim: Some(s.mean_sim),
                std_sim: Some(s.std_sim),
                score: s.score,
                is_fraud: u8::from(d.is_fraud),
                rule: rule.name().to_string(),
                threshold,
            }
        })
        .collect();
    info!(
        "scored {} rows; {} flagged by {rule} at threshold {threshold}",
        scored.len(),
        scored.iter().filter(|r| r.is_fraud == 1).count()
    );
    write_scores(out, "scores_contrastive.csv", &scored)?;
    manifest.record(out, "scores_contrastive.csv")?;
    manifest.timings_seconds.insert("total".into(), started.elapsed().as_secs_f64());
    manifest.write(out)?;
    Ok(manifest)
}

pub fn baseline(cfg: &ExperimentConfig, which: BaselineKind) -> Result<RunManifest> {
    cfg.validate()?;
    let started = Instant::now();
    let out = &cfg.output_dir;
    let mut manifest = RunManifest::new(&format!("baseline.{which}"), cfg);
    let prepared = prepare(cfg)?;
    let b = &cfg.baselines;

    let fit_started = Instant::now();
    let model = match which {
        BaselineKind::Kmeans => BaselineModel::Kmeans(kmeans_fit(
            &prepared.train,
            b.kmeans.k,
            cfg.seed_for("kmeans"),
            b.kmeans.max_iter,
        )?),
        BaselineKind::Iforest => BaselineModel::Iforest(iforest_fit(
            &prepared.train,
            b.iforest.n_trees,
            b.iforest.subsample_size,
            cfg.seed_for("iforest"),
        )?),
        BaselineKind::Autoencoder => {
            BaselineModel::Autoencoder(autoencoder_fit(&prepared.train, &b.autoencoder)?.0)
        }
    };
    manifest.timings_seconds.insert("fit".into(), fit_started.elapsed().as_secs_f64());

    let rows = query_rows(cfg, &prepared.split);
    let scores = model.score(&prepared.standardized(&rows)?)?;
    let k = flagged_count(cfg.scoring.contamination, scores.len())?;
    let threshold = quantile_threshold(&scores, k, false)?;
    let scored: Vec<ScoreRow> = rows
        .iter()
        .zip(&scores)
        .map(|(&i, &s)| ScoreRow {
            sample_index: i,
            mean_sim: None,
            std_sim: None,
            score: s,
            is_fraud: u8::from(s > threshold),
            rule: TOP_SCORES_RULE.to_string(),
            threshold,
        })
        .collect();

    let model_name = format!("model_{which}.json");
    let scores_name = format!("scores_{which}.csv");
    model.save(&out.join(&model_name))?;
    write_scores(out, &scores_name, &scored)?;
    manifest.record(out, &model_name)?;
    manifest.record(out, &scores_name)?;
    info!("{which}: scored {} rows", scored.len());
    manifest.timings_seconds.insert("total".into(), started.elapsed().as_secs_f64());
    manifest.write(out)?;
    Ok(manifest)
}

fn load_labels(cfg: &ExperimentConfig) -> Result<Labels> {
    match cfg.labels_path() {
        Some(path) => {
            require(&path, "labels file")?;
            Labels::read_csv(&path)
        }
        None => {
            let path = cfg.features_path();
            require(&path, "feature file")?;
            load_csv::<f64>(&path, &cfg.data.schema)?.labels.ok_or_else(|| {
                Error::Data("no labels: set data.labels or data.schema.label to evaluate".into())
            })
        }
    }
}

/// Reports for every `scores_<model>.csv` present, plus the comparison table.
pub fn eval(cfg: &ExperimentConfig) -> Result<(RunManifest, Vec<MetricsReport>, String)> {
    let started = Instant::now();
    let out = &cfg.output_dir;
    let mut manifest = RunManifest::new("eval", cfg);
    let labels = load_labels(cfg)?;

    let mut reports = Vec::new();
    for model in MODELS {
        let path = out.join(format!("scores_{model}.csv"));
        if !path.is_file() {
            continue;
        }
        let rows = read_scores(&path)?;
        if let Some(bad) = rows.iter().find(|r| r.sample_index >= labels.len()) {
            return Err(Error::Data(format!(
                "{}: sample_index {} is outside the {} labels",
                path.display(),
                bad.sample_index,
                labels.len()
            )));
        }
        let idx: Vec<usize> = rows.iter().map(|r| r.sample_index).collect();
        let y = labels.select(&idx)?;
        let scores: Vec<f64> = rows.iter().map(|r| r.score).collect();
        let flags: Vec<bool> = rows.iter().map(|r| r.is_fraud == 1).collect();
        let first = &rows[0];
        let report = metrics_report(
            model,
            &scores,
            &y,
            Flagging {
                is_fraud: &flags,
                threshold: first.threshold,
                rule: &first.rule,
            },
        )?;
        let curve = roc_auc(&scores, &y)?;
        let metrics_name = format!("metrics_{model}.json");
        let roc_name = format!("roc_{model}.csv");
        write(out, &metrics_name, serde_json::to_string_pretty(&report)?.as_bytes())?;
        export_roc(&curve, &out.join(&roc_name))?;
        manifest.record(out, &metrics_name)?;
        manifest.record(out, &roc_name)?;
        reports.push(report);
    }
    if reports.is_empty() {
        return Err(Error::Data(format!("no scores_<model>.csv files in {}", out.display())));
    }
    let table = comparison_table(&reports);
    write(out, "comparison.txt", table.as_bytes())?;
    manifest.record(out, "comparison.txt")?;
    manifest.timings_seconds.insert("total".into(), started.elapsed().as_secs_f64());
    manifest.write(out)?;
    Ok((manifest, reports, table))
}

/// Output directory helper for callers that override it.
pub fn with_output_dir(mut cfg: ExperimentConfig, dir: Option<PathBuf>) -> ExperimentConfig {
    if let Some(dir) = dir {
        cfg.output_dir = dir;
    }
    cfg
}
