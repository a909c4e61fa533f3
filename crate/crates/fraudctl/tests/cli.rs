use std::path::Path;
use std::process::{Command, Output};

fn fraudctl(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_fraudctl"))
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .unwrap()
}

fn write_config(dir: &Path, extra: &str) -> String {
    let path = dir.join("run.toml");
    let text = format!(
        "master_seed = 5\noutput_dir = \"out\"\n\n[synthetic]\nn_normal = 300\nn_fraud = 30\n\n\
         [contrastive]\nepochs = 3\n\n[baselines.autoencoder]\nepochs = 3\n{extra}"
    );
    std::fs::write(&path, text).unwrap();
    path.to_string_lossy().into_owned()
}

fn lines(path: &Path) -> usize {
    std::fs::read_to_string(path).unwrap().lines().count()
}

#[test]
fn full_pipeline_through_the_binary() {
    let tmp = tempfile::tempdir().unwrap();
    let config = write_config(tmp.path(), "");
    for args in [
        vec!["gen-synth", "--config", &config],
        vec!["train", "--config", &config],
        vec!["score", "--config", &config],
        vec!["baseline", "--config", &config, "--which", "kmeans"],
        vec!["baseline", "--config", &config, "--which", "iforest"],
        vec!["baseline", "--config", &config, "--which", "autoencoder"],
    ] {
        let out = fraudctl(&args);
        assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    }
    let out = fraudctl(&["eval", "--config", &config]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let table = String::from_utf8(out.stdout).unwrap();
    for model in ["contrastive", "autoencoder", "iforest", "kmeans"] {
        assert!(table.contains(model), "{table}");
    }

    let dir = tmp.path().join("out");
    assert_eq!(lines(&dir.join("features.csv")), 331);
    assert_eq!(lines(&dir.join("labels.csv")), 331);
    // 20% of 330 rows are held out and scored.
    assert_eq!(lines(&dir.join("scores_contrastive.csv")), 67);
    assert_eq!(lines(&dir.join("scores_kmeans.csv")), 67);
    assert_eq!(lines(&dir.join("train_log.csv")), 4);
    for command in ["gen-synth", "train", "score", "baseline.kmeans", "baseline.iforest", "baseline.autoencoder", "eval"] {
        assert!(dir.join(format!("manifest.{command}.json")).exists(), "{command}");
    }
}

#[test]
fn seed_and_out_flags_override_the_config() {
    let tmp = tempfile::tempdir().unwrap();
    let config = write_config(tmp.path(), "");
    let a = tmp.path().join("a");
    let b = tmp.path().join("b");
    let c = tmp.path().join("c");
    for (dir, seed) in [(&a, "1"), (&b, "1"), (&c, "2")] {
        let out = fraudctl(&["gen-synth", "--config", &config, "--seed", seed, "--out", dir.to_str().unwrap()]);
        assert!(out.status.success());
    }
    let read = |d: &Path| std::fs::read(d.join("features.csv")).unwrap();
    assert_eq!(read(&a), read(&b));
    assert_ne!(read(&a), read(&c));
}

#[test]
fn unimplemented_baseline_is_a_config_error() {
    let tmp = tempfile::tempdir().unwrap();
    let config = write_config(tmp.path(), "");
    let out = fraudctl(&["baseline", "--config", &config, "--which", "vae"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("not implemented"));
}

#[test]
fn section_seeds_are_rejected() {
    let tmp = tempfile::tempdir().unwrap();
    let config = write_config(tmp.path(), "\n[augment]\nseed = 3\n");
    let out = fraudctl(&["gen-synth", "--config", &config]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn scoring_before_training_is_a_data_error() {
    let tmp = tempfile::tempdir().unwrap();
    let config = write_config(tmp.path(), "");
    assert!(fraudctl(&["gen-synth", "--config", &config]).status.success());
    let out = fraudctl(&["score", "--config", &config]);
    assert_eq!(out.status.code(), Some(3), "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn shipped_config_loads() {
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs/default.toml");
    let cfg = fraudctl::config::ExperimentConfig::load(&path).unwrap();
    let synthetic = fraud_core::data::SynthConfig {
        seed: cfg.synthetic.seed,
        ..Default::default()
    };
    assert_eq!(cfg.synthetic, synthetic);
    assert_eq!(cfg.contrastive.epochs, 50);
}
