//! Encoder-decoder acoustic model.
//!
//! Phoneme ids are embedded, encoded by a conv stack and a bidirectional GRU,
//! and attended to by an autoregressive LSTM decoder with additive scoring
//! `e_ij = vᵀ tanh(W s_{i−1} + U m_j + b)`. Three attention variants:
//!
//! - `BASE`: context `c_i = Σ_j α_ij m_j`.
//! - `PECV`: additionally `c′_i = Σ_j α_ij p_j` with the same weights, and
//!   the decoder consumes an affine reduction of `[c_i; c′_i]`.
//! - `RES`: encoder outputs become `h_j + p_j` before scoring.
//!
//! Speaker embeddings from a jointly trained table are concatenated either to
//! the attention memory (`SE_ENC`) or to the prenet output at every decoder
//! step (`SE_DEC`). A conv post-net maps predicted mel frames to the linear
//! spectrogram.

mod checkpoint;
mod gradcheck;
mod network;

use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dsp::{DspError, N_LINEAR, N_MELS};
use crate::frontend::default_inventory;
use crate::tensor::TensorError;

pub use checkpoint::{Checkpoint, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use gradcheck::{
    gradcheck_grid, gradcheck_model, gradcheck_model_with, toy_config, GradCheckGrid,
    GridCellReport, ToyInstance, GRADCHECK_JITTER,
};
pub use network::{
    guided_attention_mask, loss_terms, AttentionStepTrace, AttentionVars, EncodedUtterance,
    EncodedVars, ForwardOptions, FreeRun, LossVars, Model, ParamGroup, Synthesis, Targets,
    TeacherForcedOutput, GUIDE_WIDTH,
};

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("data error: {0}")]
    Data(String),
    #[error("attention memory is empty")]
    EmptyMemory,
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Dsp(#[from] DspError),
    #[error("checkpoint {chunk}: {detail}")]
    Checkpoint { chunk: &'static str, detail: String },
    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

pub type Result<T> = std::result::Result<T, ModelError>;

fn parse_upper<T: for<'de> Deserialize<'de>>(
    s: &str,
    what: &str,
) -> std::result::Result<T, String> {
    serde_json::from_value(serde_json::Value::String(
        s.to_uppercase().replace('-', "_"),
    ))
    .map_err(|_| format!("unknown {what} {s:?}"))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum AttentionVariant {
    Base,
    Pecv,
    Res,
    /// Both the phoneme-embedding context and the residual encoder.
    PecvRes,
}

impl AttentionVariant {
    /// The three variants of the comparison grid.
    pub const GRID: [AttentionVariant; 3] = [
        AttentionVariant::Base,
        AttentionVariant::Pecv,
        AttentionVariant::Res,
    ];

    pub fn uses_pecv(self) -> bool {
        matches!(self, AttentionVariant::Pecv | AttentionVariant::PecvRes)
    }

    pub fn uses_residual(self) -> bool {
        matches!(self, AttentionVariant::Res | AttentionVariant::PecvRes)
    }
}

impl fmt::Display for AttentionVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            AttentionVariant::Base => "BASE",
            AttentionVariant::Pecv => "PECV",
            AttentionVariant::Res => "RES",
            AttentionVariant::PecvRes => "PECV_RES",
        })
    }
}

impl FromStr for AttentionVariant {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        parse_upper(s, "attention variant")
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum SpeakerPlacement {
    None,
    SeEnc,
    SeDec,
}

impl SpeakerPlacement {
    pub const GRID: [SpeakerPlacement; 3] = [
        SpeakerPlacement::None,
        SpeakerPlacement::SeEnc,
        SpeakerPlacement::SeDec,
    ];
}

impl fmt::Display for SpeakerPlacement {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SpeakerPlacement::None => "NONE",
            SpeakerPlacement::SeEnc => "SE_ENC",
            SpeakerPlacement::SeDec => "SE_DEC",
        })
    }
}

impl FromStr for SpeakerPlacement {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        parse_upper(s, "speaker placement")
    }
}

/// Network hyperparameters. Missing JSON fields take the desk-scale defaults.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub phoneme_vocab: usize,
    /// d_p
    pub embedding_dim: usize,
    /// d_h; the bidirectional GRU uses d_h/2 units per direction.
    pub encoder_dim: usize,
    /// d_s
    pub decoder_dim: usize,
    pub attention_dim: usize,
    pub speaker_count: usize,
    /// d_spk. Zero is allowed and makes speaker conditioning a no-op.
    pub speaker_dim: usize,
    pub attention_variant: AttentionVariant,
    pub speaker_placement: SpeakerPlacement,
    /// Frames emitted per decoder step.
    pub reduction_factor: usize,
    pub prenet_dims: Vec<usize>,
    pub prenet_dropout: f64,
    pub encoder_conv_layers: usize,
    pub encoder_kernel: usize,
    pub postnet_dim: usize,
    pub postnet_kernel: usize,
    pub n_mels: usize,
    pub n_linear: usize,
    pub max_decoder_steps: usize,
    /// Seed for parameter initialization.
    pub init_seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            phoneme_vocab: default_inventory().len(),
            embedding_dim: 128,
            encoder_dim: 128,
            decoder_dim: 256,
            attention_dim: 128,
            speaker_count: 4,
            speaker_dim: 16,
            attention_variant: AttentionVariant::Base,
            speaker_placement: SpeakerPlacement::SeDec,
            reduction_factor: 2,
            prenet_dims: vec![128, 64],
            prenet_dropout: 0.5,
            encoder_conv_layers: 2,
            encoder_kernel: 5,
            postnet_dim: 128,
            postnet_kernel: 5,
            n_mels: N_MELS,
            n_linear: N_LINEAR,
            max_decoder_steps: 500,
            init_seed: 0,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let cfg = |m: String| Err(ModelError::Config(m));
        for (name, v) in [
            ("phoneme_vocab", self.phoneme_vocab),
            ("embedding_dim", self.embedding_dim),
            ("encoder_dim", self.encoder_dim),
            ("decoder_dim", self.decoder_dim),
            ("attention_dim", self.attention_dim),
            ("speaker_count", self.speaker_count),
            ("reduction_factor", self.reduction_factor),
            ("encoder_conv_layers", self.encoder_conv_layers),
            ("postnet_dim", self.postnet_dim),
            ("n_mels", self.n_mels),
            ("n_linear", self.n_linear),
            ("max_decoder_steps", self.max_decoder_steps),
        ] {
            if v == 0 {
                return cfg(format!("{name} must be positive"));
            }
        }
        if !self.encoder_dim.is_multiple_of(2) {
            return cfg(format!(
                "encoder_dim {} must be even (bidirectional halves)",
                self.encoder_dim
            ));
        }
        if self.prenet_dims.is_empty() || self.prenet_dims.contains(&0) {
            return cfg(format!(
                "prenet_dims {:?} must be nonempty and positive",
                self.prenet_dims
            ));
        }
        for (name, k) in [
            ("encoder_kernel", self.encoder_kernel),
            ("postnet_kernel", self.postnet_kernel),
        ] {
            if k % 2 == 0 {
                return cfg(format!("{name} {k} must be odd"));
            }
        }
        if !(0.0..1.0).contains(&self.prenet_dropout) {
            return cfg(format!(
                "prenet_dropout {} not in [0, 1)",
                self.prenet_dropout
            ));
        }
        if self.attention_variant.uses_residual() && self.embedding_dim != self.encoder_dim {
            return cfg(format!(
                "{} requires embedding_dim == encoder_dim, got {} and {}",
                self.attention_variant, self.embedding_dim, self.encoder_dim
            ));
        }
        Ok(())
    }

    /// Width of the attention memory (keys and values).
    pub fn memory_dim(&self) -> usize {
        match self.speaker_placement {
            SpeakerPlacement::SeEnc => self.encoder_dim + self.speaker_dim,
            _ => self.encoder_dim,
        }
    }

    /// Width of the context the decoder consumes.
    pub fn context_dim(&self) -> usize {
        if self.attention_variant.uses_pecv() {
            self.encoder_dim
        } else {
            self.memory_dim()
        }
    }

    /// Width of the decoder LSTM input: prenet output, speaker, context.
    pub fn decoder_input_dim(&self) -> usize {
        let spk = match self.speaker_placement {
            SpeakerPlacement::SeDec => self.speaker_dim,
            _ => 0,
        };
        self.prenet_dims.last().copied().unwrap_or(0) + spk + self.context_dim()
    }

    pub fn with_variant(mut self, variant: AttentionVariant, placement: SpeakerPlacement) -> Self {
        self.attention_variant = variant;
        self.speaker_placement = placement;
        self
    }

    pub fn check_speaker(&self, speaker: usize) -> Result<()> {
        if speaker >= self.speaker_count {
            return Err(ModelError::Config(format!(
                "speaker id {speaker} outside valid range 0..{}",
                self.speaker_count
            )));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn residual_needs_matching_dims() {
        let c = ModelConfig {
            embedding_dim: 64,
            attention_variant: AttentionVariant::Res,
            ..ModelConfig::default()
        };
        assert!(matches!(c.validate(), Err(ModelError::Config(_))));
        assert!(c
            .with_variant(AttentionVariant::Pecv, SpeakerPlacement::None)
            .validate()
            .is_ok());
    }

    #[test]
    fn decoder_input_width_with_speaker() {
        let c =
            ModelConfig::default().with_variant(AttentionVariant::Base, SpeakerPlacement::SeDec);
        assert_eq!(c.decoder_input_dim(), 64 + 16 + 128);
        let e = c
            .clone()
            .with_variant(AttentionVariant::Base, SpeakerPlacement::SeEnc);
        assert_eq!(e.memory_dim(), 128 + 16);
        assert_eq!(e.decoder_input_dim(), 64 + 144);
        let p = c.with_variant(AttentionVariant::Pecv, SpeakerPlacement::SeEnc);
        assert_eq!(p.context_dim(), 128);
    }

    #[test]
    fn names_parse_case_insensitively() {
        assert_eq!(
            "se-dec".parse::<SpeakerPlacement>().unwrap(),
            SpeakerPlacement::SeDec
        );
        assert_eq!(
            "PECV".parse::<AttentionVariant>().unwrap(),
            AttentionVariant::Pecv
        );
        assert!("LSA".parse::<AttentionVariant>().is_err());
    }

    #[test]
    fn json_defaults_fill_missing_fields() {
        let c: ModelConfig = serde_json::from_str(r#"{"attention_variant":"RES"}"#).unwrap();
        assert_eq!(c.attention_variant, AttentionVariant::Res);
        assert_eq!(c.encoder_dim, 128);
        assert!(serde_json::from_str::<ModelConfig>(r#"{"bogus":1}"#).is_err());
    }
}
