use std::path::PathBuf;

use polytts_core::analysis::AnalysisError;
use polytts_core::dsp::DspError;
use polytts_core::frontend::FrontendError;
use polytts_core::model::ModelError;
use polytts_core::synthetic::SyntheticError;
use polytts_core::training::TrainingError;
use polytts_core::TensorError;
use thiserror::Error;

pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_DATA: i32 = 3;
pub const EXIT_NUMERIC: i32 = 4;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("verification failed: {0}")]
    Verification(String),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Training(#[from] TrainingError),
    #[error(transparent)]
    Analysis(#[from] AnalysisError),
    #[error(transparent)]
    Dsp(#[from] DspError),
    #[error(transparent)]
    Frontend(#[from] FrontendError),
    #[error(transparent)]
    Synthetic(#[from] SyntheticError),
    #[error("{context}: {source}")]
    Context {
        context: String,
        #[source]
        source: Box<CliError>,
    },
    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl CliError {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        CliError::Io {
            path: path.into(),
            source,
        }
    }

    pub fn context(context: impl std::fmt::Display, source: CliError) -> Self {
        CliError::Context {
            context: context.to_string(),
            source: Box::new(source),
        }
    }

    /// 2 configuration, 3 data, 4 numeric or verification failure.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => EXIT_CONFIG,
            CliError::Verification(_) => EXIT_NUMERIC,
            CliError::Model(e) => model_code(e),
            CliError::Training(e) => match e {
                TrainingError::Config(_) => EXIT_CONFIG,
                TrainingError::NonFinite { .. } | TrainingError::FrozenChanged { .. } => {
                    EXIT_NUMERIC
                }
                TrainingError::Model(m) => model_code(m),
                TrainingError::Dsp(d) => dsp_code(d),
                TrainingError::Frontend(f) => frontend_code(f),
                TrainingError::Data(_)
                | TrainingError::InsufficientUtterances { .. }
                | TrainingError::Io { .. } => EXIT_DATA,
            },
            CliError::Analysis(e) => match e {
                AnalysisError::Config(_) => EXIT_CONFIG,
                AnalysisError::Degenerate(_) => EXIT_NUMERIC,
                AnalysisError::Model(m) => model_code(m),
                AnalysisError::Data(_) | AnalysisError::Csv { .. } | AnalysisError::Io { .. } => {
                    EXIT_DATA
                }
            },
            CliError::Dsp(e) => dsp_code(e),
            CliError::Frontend(e) => frontend_code(e),
            CliError::Synthetic(e) => match e {
                SyntheticError::Config(_) => EXIT_CONFIG,
                SyntheticError::Frontend(f) => frontend_code(f),
                SyntheticError::Dsp(d) => dsp_code(d),
            },
            CliError::Context { source, .. } => source.exit_code(),
            CliError::Io { .. } => EXIT_DATA,
        }
    }
}

fn model_code(e: &ModelError) -> i32 {
    match e {
        ModelError::Config(_) => EXIT_CONFIG,
        ModelError::Tensor(TensorError::Numeric { .. }) => EXIT_NUMERIC,
        ModelError::Dsp(d) => dsp_code(d),
        _ => EXIT_DATA,
    }
}

fn dsp_code(e: &DspError) -> i32 {
    match e {
        DspError::Config(_) => EXIT_CONFIG,
        DspError::Numeric(_) => EXIT_NUMERIC,
        _ => EXIT_DATA,
    }
}

fn frontend_code(e: &FrontendError) -> i32 {
    match e {
        FrontendError::Config(_) => EXIT_CONFIG,
        _ => EXIT_DATA,
    }
}

pub type Result<T> = std::result::Result<T, CliError>;
