use std::io::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{Result, TrainingError};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub phase: u32,
    /// Global step index, continuing across phases.
    pub step: usize,
    pub learning_rate: f64,
    pub loss: f64,
    pub mel_loss: f64,
    pub linear_loss: f64,
    pub stop_loss: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub guide_loss: Option<f64>,
    /// Norm of the batch-mean gradient before clipping.
    pub grad_norm: f64,
    pub attention_entropy: f64,
    pub forward_motion: f64,
    /// Gradient norm reaching the target speaker's embedding row, recorded
    /// while that speaker is excluded.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub target_speaker_grad_norm: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckpointRecord {
    pub phase: u32,
    pub step: usize,
    pub hash: String,
    /// Hash of the checkpoint this one was trained from.
    pub parent: Option<String>,
    /// File name inside the training output directory.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub path: Option<PathBuf>,
    /// Hash of the frozen groups at this point, when any are frozen.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub frozen_hash: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LogRecord {
    Step(StepRecord),
    Checkpoint(CheckpointRecord),
}

/// Ordered training events, written as JSON lines.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct TrainingLog {
    pub records: Vec<LogRecord>,
}

impl TrainingLog {
    pub fn steps(&self) -> impl Iterator<Item = &StepRecord> {
        self.records.iter().filter_map(|r| match r {
            LogRecord::Step(s) => Some(s),
            LogRecord::Checkpoint(_) => None,
        })
    }

    pub fn checkpoints(&self) -> impl Iterator<Item = &CheckpointRecord> {
        self.records.iter().filter_map(|r| match r {
            LogRecord::Checkpoint(c) => Some(c),
            LogRecord::Step(_) => None,
        })
    }

    pub fn to_jsonl(&self) -> String {
        let mut s = String::new();
        for r in &self.records {
            s.push_str(&serde_json::to_string(r).expect("log record serializes"));
            s.push('\n');
        }
        s
    }

    pub fn from_jsonl(text: &str) -> Result<Self> {
        let records = text
            .lines()
            .filter(|l| !l.trim().is_empty())
            .enumerate()
            .map(|(i, l)| {
                serde_json::from_str(l)
                    .map_err(|e| TrainingError::Data(format!("log line {}: {e}", i + 1)))
            })
            .collect::<Result<_>>()?;
        Ok(TrainingLog { records })
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut f = std::fs::File::create(path).map_err(|e| TrainingError::io(path, e))?;
        f.write_all(self.to_jsonl().as_bytes())
            .map_err(|e| TrainingError::io(path, e))
    }
}
