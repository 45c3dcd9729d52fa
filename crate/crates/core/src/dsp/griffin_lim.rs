use std::f64::consts::PI;

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::tensor::Tensor;

use super::stft::{Spectrogram, StftConfig, StftPlan};
use super::{AudioClip, DspError, Result, SAMPLE_RATE};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GriffinLimConfig {
    pub n_iters: usize,
    /// Momentum on the magnitude-projected spectrum; 0 gives the classic
    /// algorithm.
    pub momentum: f64,
    pub seed: u64,
    pub stft: StftConfig,
    pub sample_rate: u32,
}

impl Default for GriffinLimConfig {
    fn default() -> Self {
        GriffinLimConfig {
            n_iters: 60,
            momentum: 0.99,
            seed: 0,
            stft: StftConfig::default(),
            sample_rate: SAMPLE_RATE,
        }
    }
}

#[derive(Clone, Debug)]
pub struct GriffinLimResult {
    pub clip: AudioClip,
    /// Spectral convergence of the signal produced by each iteration.
    pub convergence: Vec<f64>,
}

/// `‖A − M‖ / ‖M‖` over one-sided spectra, weighting interior bins twice so
/// the norm equals the two-sided one. Zero when `M` is all zero.
pub fn spectral_convergence(estimate: &[f64], target: &[f64], bins: usize) -> f64 {
    let (mut num, mut den) = (0.0, 0.0);
    for (i, (a, m)) in estimate.iter().zip(target).enumerate() {
        let k = i % bins;
        let w = if k == 0 || k == bins - 1 { 1.0 } else { 2.0 };
        num += w * (a - m) * (a - m);
        den += w * m * m;
    }
    if den == 0.0 {
        0.0
    } else {
        (num / den).sqrt()
    }
}

/// Reconstructs a waveform from a `[frames, n_fft/2 + 1]` magnitude
/// spectrogram by alternating projections, starting from seeded uniform
/// random phase. The returned clip has `(frames − 1)·hop` samples.
pub fn griffin_lim(mag: &Tensor<f64>, cfg: &GriffinLimConfig) -> Result<GriffinLimResult> {
    if cfg.n_iters == 0 {
        return Err(DspError::Config(
            "griffin-lim needs at least one iteration".into(),
        ));
    }
    let plan = StftPlan::new(cfg.stft)?;
    let bins = cfg.stft.n_bins();
    if mag.ndim() != 2 || mag.cols() != bins {
        return Err(DspError::Config(format!(
            "magnitude shape {:?} does not match {bins} bins",
            mag.shape()
        )));
    }
    if let Some(i) = mag.data().iter().position(|v| v.is_nan()) {
        return Err(DspError::Numeric(format!("NaN magnitude at index {i}")));
    }
    if let Some(i) = mag.data().iter().position(|&v| v < 0.0 || v.is_infinite()) {
        return Err(DspError::Numeric(format!(
            "magnitude {} at index {i} is not a finite nonnegative value",
            mag.data()[i]
        )));
    }
    let frames = mag.rows();
    let target = mag.data();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut spec = Spectrogram {
        frames,
        bins,
        data: target
            .iter()
            .map(|&m| Complex64::from_polar(m, rng.gen_range(0.0..2.0 * PI)))
            .collect(),
    };
    // The estimate is a free signal over the padded span; the returned clip
    // is its interior.
    let len = frames.saturating_sub(1) * cfg.stft.hop;
    let p = cfg.stft.pad();
    let project = |spec: &Spectrogram| {
        let full = plan.synthesize(spec);
        let rebuilt = plan.analyze(&full);
        let signal: Vec<f64> = (0..len)
            .map(|i| full.get(p + i).copied().unwrap_or(0.0))
            .collect();
        let est: Vec<f64> = rebuilt.data.iter().map(|c| c.norm()).collect();
        let err = spectral_convergence(&est, target, bins);
        (signal, rebuilt, err)
    };
    let impose = |rebuilt: &Spectrogram| -> Vec<Complex64> {
        rebuilt
            .data
            .iter()
            .zip(target)
            .map(|(c, &m)| {
                let n = c.norm();
                if n > 0.0 {
                    c * (m / n)
                } else {
                    Complex64::new(m, 0.0)
                }
            })
            .collect()
    };
    // `anchor` is the magnitude-projected spectrum of the current estimate;
    // `spec` may carry momentum. A momentum step whose error exceeds the
    // previous one is replaced by a plain projection from `anchor`, which
    // never increases the error.
    let mut anchor = spec.data.clone();
    let mut convergence: Vec<f64> = Vec::with_capacity(cfg.n_iters);
    let mut signal = Vec::new();
    for _ in 0..cfg.n_iters {
        let (mut sig, mut rebuilt, mut err) = project(&spec);
        if let Some(&prev) = convergence.last() {
            if err > prev {
                spec.data.clone_from(&anchor);
                (sig, rebuilt, err) = project(&spec);
            }
        }
        signal = sig;
        convergence.push(err);
        let next = impose(&rebuilt);
        for ((slot, n), a) in spec.data.iter_mut().zip(&next).zip(&anchor) {
            *slot = n + (n - a) * cfg.momentum;
        }
        anchor = next;
    }
    let samples = signal.iter().map(|&v| v as f32).collect();
    Ok(GriffinLimResult {
        clip: AudioClip::new(samples, cfg.sample_rate)?,
        convergence,
    })
}
