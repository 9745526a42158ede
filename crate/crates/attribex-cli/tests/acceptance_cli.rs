//! Acceptance: the full command chain on a fixed config is bit-deterministic.

use std::path::{Path, PathBuf};
use std::process::Command;

fn bin() -> &'static str {
    env!("CARGO_BIN_EXE_attribex")
}

fn tmpdir(tag: &str) -> PathBuf {
    let dir = std::env::temp_dir().join(format!(
        "attribex-acc-{tag}-{}-{}",
        std::process::id(),
        std::time::SystemTime::now()
            .duration_since(std::time::UNIX_EPOCH)
            .unwrap()
            .as_nanos()
    ));
    std::fs::create_dir_all(&dir).unwrap();
    dir
}

fn run_chain(config: &Path, run_dir: &Path, threads: &str) {
    for cmd in ["synth", "learn", "detect", "embed", "search", "eval"] {
        let out = Command::new(bin())
            .args([
                "--config",
                config.to_str().unwrap(),
                "--run-dir",
                run_dir.to_str().unwrap(),
                cmd,
            ])
            .env("ATTRIBEX_THREADS", threads)
            .output()
            .expect("binary runs");
        assert!(
            out.status.success(),
            "{cmd} failed: {}",
            String::from_utf8_lossy(&out.stderr)
        );
    }
}

#[test]
fn criterion_10_cli_chain_is_bit_deterministic() {
    let dir = tmpdir("determinism");
    let config = dir.join("config.json");
    // exercises the projector, whitening, power normalization, distractors
    // and the category classifier on top of the plain chain
    std::fs::write(
        &config,
        r#"{
  "n_train_instances": 14,
  "n_test_instances": 6,
  "n_distractor_instances": 4,
  "views_per_instance": 4,
  "dim": 32,
  "view_noise": 0.5,
  "power_alpha": 0.7,
  "pca_dim": 16,
  "whiten": true,
  "k_nn": 8,
  "k": 20,
  "eigen_tol": 1e-6,
  "eigen_max_iter": 20000,
  "seed": 11
}"#,
    )
    .unwrap();

    let run_a = dir.join("run_a");
    let run_b = dir.join("run_b");
    // different thread caps must not change any artifact
    run_chain(&config, &run_a, "1");
    run_chain(&config, &run_b, "4");

    for artifact in [
        "attributes.bin",
        "attributes.json",
        "detectors.bin",
        "detectors.json",
        "category.json",
        "projector.json",
        "rankings.csv",
        "eval_report.json",
        "corpus/features.bin",
        "embeddings/features.bin",
    ] {
        let a = std::fs::read(run_a.join(artifact)).unwrap_or_else(|_| panic!("{artifact} in run_a"));
        let b = std::fs::read(run_b.join(artifact)).unwrap_or_else(|_| panic!("{artifact} in run_b"));
        assert_eq!(a, b, "{artifact} differs between identical runs");
    }
    println!("criterion 10 (bit-identical CLI chain across two runs): PASS");
    std::fs::remove_dir_all(dir).unwrap();
}
