//! Audio I/O and spectral features: 24 kHz PCM16 WAV, STFT, 80-band log-mel
//! and 1025-bin log-linear spectrograms, silence trimming and Griffin-Lim
//! waveform reconstruction.

mod features;
mod griffin_lim;
mod mel;
mod resample;
mod stft;
mod trim;
mod wav;

use std::path::PathBuf;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use features::{
    decode_features, encode_features, extract_features, read_feature_file, write_feature_file,
    FeatureConfig, FeatureExtractor, FeaturePair, NormStats, FEATURE_MAGIC, FEATURE_VERSION,
};
pub use griffin_lim::{griffin_lim, spectral_convergence, GriffinLimConfig, GriffinLimResult};
pub use mel::{hz_to_mel, mel_filterbank, mel_to_hz, MelBank};
pub use resample::resample;
pub use stft::{frame_count, hann_window, istft, stft, Spectrogram, StftConfig};
pub use trim::{trim_silence, TrimConfig};
pub use wav::{decode_wav, encode_wav, read_wav, write_wav};

pub const SAMPLE_RATE: u32 = 24_000;
pub const N_MELS: usize = 80;
pub const N_FFT: usize = 2048;
pub const N_LINEAR: usize = N_FFT / 2 + 1;

#[derive(Debug, Error)]
pub enum DspError {
    #[error("clip of {len} samples is shorter than one {win}-sample window")]
    TooShort { len: usize, win: usize },
    #[error("configuration error: {0}")]
    Config(String),
    #[error("numeric error: {0}")]
    Numeric(String),
    #[error("empty clip: {0}")]
    EmptyClip(String),
    #[error("empty features: {0}")]
    EmptyFeatures(String),
    #[error("parse error in {chunk} chunk: {detail}")]
    Parse { chunk: String, detail: String },
    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl DspError {
    pub(crate) fn parse(chunk: &str, detail: impl Into<String>) -> Self {
        DspError::Parse {
            chunk: chunk.to_string(),
            detail: detail.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        DspError::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T> = std::result::Result<T, DspError>;

/// Mono audio with samples nominally in `[-1, 1]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AudioClip {
    pub samples: Vec<f32>,
    pub sample_rate: u32,
}

impl AudioClip {
    pub fn new(samples: Vec<f32>, sample_rate: u32) -> Result<Self> {
        if sample_rate == 0 {
            return Err(DspError::Config("sample rate must be positive".into()));
        }
        if let Some(i) = samples.iter().position(|x| !x.is_finite()) {
            return Err(DspError::Numeric(format!("non-finite sample at index {i}")));
        }
        Ok(AudioClip {
            samples,
            sample_rate,
        })
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn duration_secs(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate as f64
    }

    pub fn ms_to_samples(&self, ms: f64) -> usize {
        (ms * self.sample_rate as f64 / 1000.0).round() as usize
    }
}
