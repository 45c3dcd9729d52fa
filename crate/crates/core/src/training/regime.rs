use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::model::{ModelConfig, ParamGroup, SpeakerPlacement};

use super::{Result, TrainingError};

pub const REGIME_SCHEMA_VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Regime {
    /// All data as one speaker, no speaker embedding.
    AvmPooled,
    /// Target speaker data included while learning speaker embeddings.
    AvmSpkEmbIncludeTarget,
    /// AVM without the target speaker, then decoder-side retraining on the
    /// target speaker with encoder and phoneme embeddings frozen.
    AvmExcludeThenRetrain,
}

impl std::fmt::Display for Regime {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Regime::AvmPooled => "AVM_POOLED",
            Regime::AvmSpkEmbIncludeTarget => "AVM_SPK_EMB_INCLUDE_TARGET",
            Regime::AvmExcludeThenRetrain => "AVM_EXCLUDE_THEN_RETRAIN",
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Schedule {
    pub steps: usize,
    pub learning_rate: f64,
    /// Learning rate halves every this many steps; `None` keeps it constant.
    pub lr_half_life: Option<usize>,
    pub batch_size: usize,
    pub teacher_forcing: f64,
    pub grad_clip: f64,
    /// Weight of the diagonal attention penalty (0 disables it).
    pub guided_attention: f64,
    pub seed: u64,
    /// Also write a checkpoint every this many steps.
    pub checkpoint_every: Option<usize>,
    /// Hash frozen groups after every step instead of only at phase ends.
    pub verify_frozen_each_step: bool,
}

impl Default for Schedule {
    fn default() -> Self {
        Schedule {
            steps: 1000,
            learning_rate: 1e-3,
            lr_half_life: Some(20_000),
            batch_size: 8,
            teacher_forcing: 1.0,
            grad_clip: 1.0,
            guided_attention: 0.0,
            seed: 0,
            checkpoint_every: None,
            verify_frozen_each_step: cfg!(debug_assertions),
        }
    }
}

impl Schedule {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(TrainingError::Config("batch_size must be positive".into()));
        }
        if !(self.learning_rate > 0.0) || !(self.grad_clip > 0.0) {
            return Err(TrainingError::Config(
                "learning_rate and grad_clip must be positive".into(),
            ));
        }
        if !(0.0..=1.0).contains(&self.teacher_forcing) {
            return Err(TrainingError::Config(format!(
                "teacher_forcing {} not in [0, 1]",
                self.teacher_forcing
            )));
        }
        if !(self.guided_attention >= 0.0) {
            return Err(TrainingError::Config(
                "guided_attention must be nonnegative".into(),
            ));
        }
        if self.lr_half_life == Some(0) || self.checkpoint_every == Some(0) {
            return Err(TrainingError::Config(
                "lr_half_life and checkpoint_every must be positive".into(),
            ));
        }
        Ok(())
    }

    pub fn lr_at(&self, step: usize) -> f64 {
        match self.lr_half_life {
            Some(h) => self.learning_rate * 0.5f64.powf(step as f64 / h as f64),
            None => self.learning_rate,
        }
    }
}

/// Versioned regime file: data, model and schedule for one experiment.
/// Relative paths are resolved against the file's directory.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainingRegime {
    pub schema_version: u32,
    pub regime: Regime,
    pub target_speaker: usize,
    /// Multi-speaker AVM data.
    pub avm_manifests: Vec<PathBuf>,
    /// Target-speaker set; absent means AVM-only training.
    #[serde(default)]
    pub target_manifest: Option<PathBuf>,
    /// Directory of cached `<utterance id>.ptfp` feature files.
    pub features_dir: PathBuf,
    #[serde(default)]
    pub model: ModelConfig,
    #[serde(default)]
    pub schedule: Schedule,
    /// Phase-2 schedule of the retrain regime; defaults to `schedule`.
    #[serde(default)]
    pub retrain_schedule: Option<Schedule>,
    /// Frozen groups: phase 2 of the retrain regime (default phoneme
    /// embedding and encoder), or the single phase of the others (default
    /// none).
    #[serde(default)]
    pub freeze: Option<Vec<ParamGroup>>,
}

impl TrainingRegime {
    pub fn from_json(text: &str) -> Result<Self> {
        let r: TrainingRegime = serde_json::from_str(text)
            .map_err(|e| TrainingError::Config(format!("regime file: {e}")))?;
        if r.schema_version != REGIME_SCHEMA_VERSION {
            return Err(TrainingError::Config(format!(
                "regime schema version {} (supported: {REGIME_SCHEMA_VERSION})",
                r.schema_version
            )));
        }
        Ok(r)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| TrainingError::io(path, e))?;
        let mut r = TrainingRegime::from_json(&text)?;
        r.resolve_paths(path.parent().unwrap_or(Path::new(".")));
        Ok(r)
    }

    pub fn resolve_paths(&mut self, base: &Path) {
        for p in &mut self.avm_manifests {
            *p = base.join(&*p);
        }
        if let Some(t) = &mut self.target_manifest {
            *t = base.join(&*t);
        }
        self.features_dir = base.join(&self.features_dir);
    }

    /// Model config with the regime's overrides applied.
    pub fn effective_model(&self) -> ModelConfig {
        let mut m = self.model.clone();
        if self.regime == Regime::AvmPooled {
            m.speaker_placement = SpeakerPlacement::None;
        }
        m
    }

    pub fn phase_freeze(&self, phase: u32) -> Vec<ParamGroup> {
        match (self.regime, phase) {
            (Regime::AvmExcludeThenRetrain, 1) => Vec::new(),
            (Regime::AvmExcludeThenRetrain, _) => self
                .freeze
                .clone()
                .unwrap_or_else(|| vec![ParamGroup::PhonemeEmbedding, ParamGroup::Encoder]),
            _ => self.freeze.clone().unwrap_or_default(),
        }
    }

    pub fn phase_schedule(&self, phase: u32) -> &Schedule {
        match phase {
            1 => &self.schedule,
            _ => self.retrain_schedule.as_ref().unwrap_or(&self.schedule),
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.effective_model().validate()?;
        self.schedule.validate()?;
        if let Some(s) = &self.retrain_schedule {
            s.validate()?;
        }
        let model = self.effective_model();
        if self.regime != Regime::AvmPooled && self.target_speaker >= model.speaker_count {
            return Err(TrainingError::Config(format!(
                "target speaker {} outside valid range 0..{}",
                self.target_speaker, model.speaker_count
            )));
        }
        for phase in [1, 2] {
            for g in self.phase_freeze(phase) {
                if g == ParamGroup::SpeakerTable
                    && model.speaker_placement == SpeakerPlacement::None
                {
                    return Err(TrainingError::Config(format!(
                        "freeze group {} does not exist without speaker conditioning",
                        g.prefix()
                    )));
                }
            }
        }
        Ok(())
    }
}
