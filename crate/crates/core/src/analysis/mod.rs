//! Phoneme-embedding and encoder-output analysis: dumps, t-SNE, language
//! separation and SVG plots.

mod dump;
mod plot;
mod separation;
mod tsne;

use std::path::PathBuf;

use thiserror::Error;

use crate::model::ModelError;

pub use dump::{dump_embeddings, EmbeddingDump, EmbeddingSource, PointLabel};
pub use plot::{alignment_svg, scatter_svg, write_svg};
pub use separation::{language_separation_score, silhouette};
pub use tsne::{
    calibrate_row, conditional_affinities, knn_purity, tsne, Calibration, TsneConfig, TsneResult,
};

#[derive(Debug, Error)]
pub enum AnalysisError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("data error: {0}")]
    Data(String),
    #[error("degenerate input: {0}")]
    Degenerate(String),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("CSV error in {path}: {source}")]
    Csv {
        path: PathBuf,
        #[source]
        source: csv::Error,
    },
    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

pub type Result<T> = std::result::Result<T, AnalysisError>;
