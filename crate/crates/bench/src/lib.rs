//! Deterministic inputs shared by the benchmarks.

use polytts_core::analysis::TsneConfig;
use polytts_core::dsp::AudioClip;
use polytts_core::model::{toy_config, ModelConfig, Targets, ToyInstance};
use polytts_core::Tensor;

/// Pseudo-random values in `[-1, 1)` from a fixed linear congruential stream.
pub fn noise(n: usize, seed: u64) -> Vec<f64> {
    let mut s = seed
        .wrapping_mul(6364136223846793005)
        .wrapping_add(1442695040888963407);
    (0..n)
        .map(|_| {
            s = s
                .wrapping_mul(6364136223846793005)
                .wrapping_add(1442695040888963407);
            (s >> 11) as f64 / (1u64 << 52) as f64 - 1.0
        })
        .collect()
}

pub fn matrix(rows: usize, cols: usize, seed: u64) -> Tensor<f32> {
    Tensor::from_f64(vec![rows, cols], &noise(rows * cols, seed)).expect("matching shape")
}

/// A harmonic tone at 24 kHz.
pub fn tone(seconds: f64) -> AudioClip {
    let rate = 24_000u32;
    let n = (seconds * rate as f64) as usize;
    let samples = (0..n)
        .map(|i| {
            let t = i as f64 / rate as f64;
            let x: f64 = [220.0, 440.0, 660.0]
                .iter()
                .enumerate()
                .map(|(k, f)| (2.0 * std::f64::consts::PI * f * t).sin() / (k + 1) as f64)
                .sum();
            (0.3 * x) as f32
        })
        .collect();
    AudioClip::new(samples, rate).expect("valid clip")
}

/// Mid-sized model between the toy and full configurations.
pub fn bench_model() -> ModelConfig {
    ModelConfig {
        phoneme_vocab: 246,
        embedding_dim: 32,
        encoder_dim: 32,
        decoder_dim: 64,
        attention_dim: 32,
        speaker_count: 4,
        speaker_dim: 8,
        prenet_dims: vec![64, 32],
        postnet_dim: 32,
        n_mels: 80,
        n_linear: 1025,
        max_decoder_steps: 200,
        ..toy_config()
    }
}

pub fn bench_instance(cfg: &ModelConfig) -> (Vec<usize>, usize, Targets<f32>) {
    let inst = ToyInstance::random(cfg, 20, 80, 3).expect("valid instance");
    let cast = |t: &Tensor<f64>| Tensor::<f32>::from_f64(t.shape().to_vec(), t.data()).unwrap();
    let targets = Targets::new(cast(&inst.targets.mel), cast(&inst.targets.linear)).unwrap();
    (inst.ids, inst.speaker, targets)
}

/// Three separated Gaussian clusters in 16 dimensions.
pub fn clusters(per_cluster: usize) -> Vec<Vec<f64>> {
    let jitter = noise(3 * per_cluster * 16, 9);
    (0..3 * per_cluster)
        .map(|i| {
            (0..16)
                .map(|d| if d == i % 3 { 8.0 } else { 0.0 } + jitter[i * 16 + d])
                .collect()
        })
        .collect()
}

pub fn tsne_config() -> TsneConfig {
    TsneConfig {
        perplexity: 10.0,
        n_iters: 250,
        exaggeration_iters: 50,
        ..TsneConfig::default()
    }
}
