//! Benchmark fixtures shared by the criterion targets.

use icad_core::synthgen::{generate, SynthSpec};
use icad_core::{DatasetHandle, Modality, ModelConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Small model sized for the synthetic generator defaults.
pub fn bench_model_config() -> ModelConfig {
    ModelConfig {
        d_model: 64,
        heads: 4,
        layers: 2,
        log_vocab: icad_core::synthgen::CATALOG_SIZE,
        log_layers: 1,
        ..ModelConfig::default()
    }
}

pub fn task(modality: Modality) -> DatasetHandle {
    generate(&SynthSpec::new(modality, 0, 0))
        .expect("default specs are valid")
        .handle
}

/// Scores with ties and roughly 10% positives.
pub fn metric_instance(n: usize, seed: u64) -> (Vec<f64>, Vec<u8>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let scores = (0..n).map(|_| (rng.random_range(0..1000) as f64) / 1000.0).collect();
    let labels = (0..n).map(|_| u8::from(rng.random_bool(0.1))).collect();
    (scores, labels)
}

pub fn log_lines(n: usize, seed: u64) -> Vec<String> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    const HEADS: [&str; 6] = [
        "open",
        "close",
        "read block",
        "write block",
        "login user",
        "disk full on",
    ];
    (0..n)
        .map(|_| {
            let h = HEADS[rng.random_range(0..HEADS.len())];
            format!(
                "{h} {} from 10.0.{}.{}",
                rng.random_range(0..5000),
                rng.random_range(0..255),
                rng.random_range(0..255)
            )
        })
        .collect()
}
