//! Average-voice-model training regimes, target-speaker adaptation and
//! target-corpus selection.

mod corpus;
mod data;
mod diagnostics;
mod log;
mod regime;
mod trainer;

use std::path::PathBuf;

use thiserror::Error;

use crate::dsp::DspError;
use crate::frontend::{FrontendError, UtteranceLanguage};
use crate::model::ModelError;

pub use corpus::{build_corpus_regime, CorpusProvenance, CorpusSelection};
pub use data::{examples_from_synthetic, feature_path, load_examples, Example, RegimeData};
pub use diagnostics::{attention_diagnostics, AttentionDiagnostics};
pub use log::{CheckpointRecord, LogRecord, StepRecord, TrainingLog};
pub use regime::{Regime, Schedule, TrainingRegime, REGIME_SCHEMA_VERSION};
pub use trainer::{train, train_with, TrainOptions, TrainingOutcome};

#[derive(Debug, Error)]
pub enum TrainingError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("data error: {0}")]
    Data(String),
    #[error("requested {requested} {language} utterances but only {available} are available")]
    InsufficientUtterances {
        language: UtteranceLanguage,
        requested: usize,
        available: usize,
    },
    #[error("non-finite loss at step {step}")]
    NonFinite { step: usize },
    #[error("frozen parameter {name} changed during phase {phase} at step {step}")]
    FrozenChanged {
        name: String,
        phase: u32,
        step: usize,
    },
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Frontend(#[from] FrontendError),
    #[error(transparent)]
    Dsp(#[from] DspError),
    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl TrainingError {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        TrainingError::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T> = std::result::Result<T, TrainingError>;
