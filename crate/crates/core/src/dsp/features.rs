use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::tensor::Tensor;

use super::mel::{mel_filterbank, MelBank};
use super::stft::{StftConfig, StftPlan};
use super::trim::{trim_silence, TrimConfig};
use super::{AudioClip, DspError, Result, N_MELS, SAMPLE_RATE};

pub const FEATURE_MAGIC: &[u8; 4] = b"PTFP";
pub const FEATURE_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FeatureConfig {
    pub sample_rate: u32,
    pub stft: StftConfig,
    pub n_mels: usize,
    pub fmin: f64,
    pub fmax: f64,
    /// Magnitudes are clamped to this floor before the log.
    pub log_floor: f64,
    /// Silence trimming applied before analysis; `None` disables it.
    pub trim: Option<TrimConfig>,
}

impl Default for FeatureConfig {
    fn default() -> Self {
        FeatureConfig {
            sample_rate: SAMPLE_RATE,
            stft: StftConfig::default(),
            n_mels: N_MELS,
            fmin: 0.0,
            fmax: SAMPLE_RATE as f64 / 2.0,
            log_floor: 1e-5,
            trim: Some(TrimConfig::default()),
        }
    }
}

impl FeatureConfig {
    pub fn frame_shift_ms(&self) -> f32 {
        (self.stft.hop as f64 * 1000.0 / self.sample_rate as f64) as f32
    }

    pub fn frame_length_ms(&self) -> f32 {
        (self.stft.win as f64 * 1000.0 / self.sample_rate as f64) as f32
    }
}

/// Paired log-mel `[T, 80]` and log-linear `[T, n_lin]` spectrograms.
#[derive(Clone, Debug, PartialEq)]
pub struct FeaturePair {
    pub mel: Tensor<f32>,
    pub linear: Tensor<f32>,
    pub frame_shift_ms: f32,
    pub frame_length_ms: f32,
}

impl FeaturePair {
    pub fn new(
        mel: Tensor<f32>,
        linear: Tensor<f32>,
        frame_shift_ms: f32,
        frame_length_ms: f32,
    ) -> Result<Self> {
        if mel.ndim() != 2 || linear.ndim() != 2 {
            return Err(DspError::Config(
                "mel and linear features must be matrices".into(),
            ));
        }
        if mel.cols() != N_MELS {
            return Err(DspError::Config(format!(
                "mel dimension is {}, expected {N_MELS}",
                mel.cols()
            )));
        }
        if mel.rows() != linear.rows() {
            return Err(DspError::Config(format!(
                "mel has {} frames but linear has {}",
                mel.rows(),
                linear.rows()
            )));
        }
        if !mel.is_finite() || !linear.is_finite() {
            return Err(DspError::Numeric("non-finite feature value".into()));
        }
        Ok(FeaturePair {
            mel,
            linear,
            frame_shift_ms,
            frame_length_ms,
        })
    }

    pub fn frames(&self) -> usize {
        self.mel.rows()
    }
}

/// Reusable extractor holding the FFT plan and filterbank.
pub struct FeatureExtractor {
    cfg: FeatureConfig,
    plan: StftPlan,
    bank: MelBank,
}

impl FeatureExtractor {
    pub fn new(cfg: FeatureConfig) -> Result<Self> {
        let plan = StftPlan::new(cfg.stft)?;
        let bank = mel_filterbank(
            cfg.stft.n_fft,
            cfg.n_mels,
            cfg.fmin,
            cfg.fmax,
            cfg.sample_rate,
        )?;
        Ok(FeatureExtractor { cfg, plan, bank })
    }

    pub fn config(&self) -> &FeatureConfig {
        &self.cfg
    }

    pub fn mel_bank(&self) -> &MelBank {
        &self.bank
    }

    /// Unnormalized log features of a clip (trimmed first if configured).
    pub fn extract(&self, clip: &AudioClip) -> Result<FeaturePair> {
        if clip.sample_rate != self.cfg.sample_rate {
            return Err(DspError::Config(format!(
                "clip is {} Hz, features expect {} Hz",
                clip.sample_rate, self.cfg.sample_rate
            )));
        }
        let trimmed;
        let clip = match &self.cfg.trim {
            Some(t) => {
                trimmed = trim_silence(clip, t).map_err(|e| match e {
                    DspError::EmptyClip(d) => {
                        DspError::EmptyFeatures(format!("silent after trimming: {d}"))
                    }
                    other => other,
                })?;
                &trimmed
            }
            None => clip,
        };
        if clip.is_empty() {
            return Err(DspError::EmptyFeatures("clip has no samples".into()));
        }
        let x: Vec<f64> = clip.samples.iter().map(|&s| s as f64).collect();
        let spec = self.plan.analyze(&self.plan.pad_signal(&x)?);
        let floor = self.cfg.log_floor;
        let (frames, bins, n_mels) = (spec.frames, spec.bins, self.cfg.n_mels);
        let mut linear = Vec::with_capacity(frames * bins);
        let mut mel = Vec::with_capacity(frames * n_mels);
        let mut mag = vec![0.0; bins];
        let mut bands = vec![0.0; n_mels];
        for t in 0..frames {
            for (m, c) in mag.iter_mut().zip(spec.frame(t)) {
                *m = c.norm();
            }
            self.bank.apply(&mag, &mut bands);
            linear.extend(mag.iter().map(|&m| m.max(floor).ln() as f32));
            mel.extend(bands.iter().map(|&m| m.max(floor).ln() as f32));
        }
        FeaturePair::new(
            Tensor::new(vec![frames, n_mels], mel).expect("mel shape"),
            Tensor::new(vec![frames, bins], linear).expect("linear shape"),
            self.cfg.frame_shift_ms(),
            self.cfg.frame_length_ms(),
        )
    }
}

/// Unnormalized log features with the default configuration.
pub fn extract_features(clip: &AudioClip) -> Result<FeaturePair> {
    FeatureExtractor::new(FeatureConfig::default())?.extract(clip)
}

/// Corpus-wide min-max statistics mapping log features into `[0, 1]`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct NormStats {
    pub mel_min: f64,
    pub mel_max: f64,
    pub linear_min: f64,
    pub linear_max: f64,
}

fn span(lo: f64, hi: f64) -> f64 {
    if hi > lo {
        hi - lo
    } else {
        1.0
    }
}

impl NormStats {
    pub fn fit<'a>(pairs: impl IntoIterator<Item = &'a FeaturePair>) -> Result<Self> {
        let mut s = NormStats {
            mel_min: f64::INFINITY,
            mel_max: f64::NEG_INFINITY,
            linear_min: f64::INFINITY,
            linear_max: f64::NEG_INFINITY,
        };
        for p in pairs {
            for &v in p.mel.data() {
                s.mel_min = s.mel_min.min(v as f64);
                s.mel_max = s.mel_max.max(v as f64);
            }
            for &v in p.linear.data() {
                s.linear_min = s.linear_min.min(v as f64);
                s.linear_max = s.linear_max.max(v as f64);
            }
        }
        if !s.mel_min.is_finite() || !s.linear_min.is_finite() {
            return Err(DspError::EmptyFeatures(
                "no frames to fit normalization on".into(),
            ));
        }
        Ok(s)
    }

    pub fn normalize_mel(&self, v: f64) -> f64 {
        (v - self.mel_min) / span(self.mel_min, self.mel_max)
    }

    pub fn denormalize_mel(&self, v: f64) -> f64 {
        v * span(self.mel_min, self.mel_max) + self.mel_min
    }

    pub fn normalize_linear(&self, v: f64) -> f64 {
        (v - self.linear_min) / span(self.linear_min, self.linear_max)
    }

    pub fn denormalize_linear(&self, v: f64) -> f64 {
        v * span(self.linear_min, self.linear_max) + self.linear_min
    }

    pub fn normalize(&self, p: &FeaturePair) -> FeaturePair {
        FeaturePair {
            mel: map(&p.mel, |v| self.normalize_mel(v)),
            linear: map(&p.linear, |v| self.normalize_linear(v)),
            ..p.clone()
        }
    }

    pub fn denormalize(&self, p: &FeaturePair) -> FeaturePair {
        FeaturePair {
            mel: map(&p.mel, |v| self.denormalize_mel(v)),
            linear: map(&p.linear, |v| self.denormalize_linear(v)),
            ..p.clone()
        }
    }

    /// Linear magnitudes from a normalized log-linear prediction.
    pub fn linear_magnitude(&self, normalized: &Tensor<f32>) -> Tensor<f64> {
        let data = normalized
            .data()
            .iter()
            .map(|&v| self.denormalize_linear(v as f64).exp())
            .collect();
        Tensor::new(normalized.shape().to_vec(), data).expect("same shape")
    }
}

fn map(t: &Tensor<f32>, f: impl Fn(f64) -> f64) -> Tensor<f32> {
    let data = t.data().iter().map(|&v| f(v as f64) as f32).collect();
    Tensor::new(t.shape().to_vec(), data).expect("same shape")
}

/// Serializes features as `PTFP` little-endian: magic, version, T, mel_dim,
/// lin_dim, then the mel block and the linear block as row-major f32.
pub fn encode_features(p: &FeaturePair) -> Vec<u8> {
    let mut out = Vec::with_capacity(20 + 4 * (p.mel.numel() + p.linear.numel()));
    out.extend_from_slice(FEATURE_MAGIC);
    for v in [
        FEATURE_VERSION,
        p.frames() as u32,
        p.mel.cols() as u32,
        p.linear.cols() as u32,
    ] {
        out.extend_from_slice(&v.to_le_bytes());
    }
    for &v in p.mel.data().iter().chain(p.linear.data()) {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

pub fn decode_features(bytes: &[u8]) -> Result<FeaturePair> {
    if bytes.len() < 20 {
        return Err(DspError::parse(
            "PTFP header",
            format!("needs 20 bytes, got {}", bytes.len()),
        ));
    }
    if &bytes[..4] != FEATURE_MAGIC {
        return Err(DspError::parse("PTFP header", "bad magic"));
    }
    let word =
        |i: usize| u32::from_le_bytes(bytes[4 + 4 * i..8 + 4 * i].try_into().unwrap()) as usize;
    let (version, frames, mel_dim, lin_dim) = (word(0), word(1), word(2), word(3));
    if version != FEATURE_VERSION as usize {
        return Err(DspError::parse(
            "PTFP header",
            format!("unsupported version {version}"),
        ));
    }
    let need = 4 * frames * (mel_dim + lin_dim);
    if bytes.len() - 20 != need {
        return Err(DspError::parse(
            "PTFP body",
            format!(
                "expected {need} bytes for T={frames} mel={mel_dim} lin={lin_dim}, got {}",
                bytes.len() - 20
            ),
        ));
    }
    let floats: Vec<f32> = bytes[20..]
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect();
    let (mel, lin) = floats.split_at(frames * mel_dim);
    let cfg = FeatureConfig::default();
    FeaturePair::new(
        Tensor::new(vec![frames, mel_dim], mel.to_vec()).expect("mel shape"),
        Tensor::new(vec![frames, lin_dim], lin.to_vec()).expect("linear shape"),
        cfg.frame_shift_ms(),
        cfg.frame_length_ms(),
    )
}

pub fn write_feature_file(path: impl AsRef<Path>, p: &FeaturePair) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, encode_features(p)).map_err(|e| DspError::io(path, e))
}

pub fn read_feature_file(path: impl AsRef<Path>) -> Result<FeaturePair> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| DspError::io(path, e))?;
    decode_features(&bytes)
}
