use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::tensor::gradcheck::{central_difference, GradCheckReport};
use crate::tensor::{Tape, Tensor};

use super::{
    AttentionVariant, ForwardOptions, Model, ModelConfig, ModelError, Result, SpeakerPlacement,
    Targets,
};

/// Small dimensions for finite-difference checks and fast tests.
pub fn toy_config() -> ModelConfig {
    ModelConfig {
        phoneme_vocab: 12,
        embedding_dim: 4,
        encoder_dim: 4,
        decoder_dim: 6,
        attention_dim: 4,
        speaker_count: 2,
        speaker_dim: 3,
        attention_variant: AttentionVariant::Base,
        speaker_placement: SpeakerPlacement::None,
        reduction_factor: 2,
        prenet_dims: vec![5, 4],
        prenet_dropout: 0.0,
        encoder_conv_layers: 2,
        encoder_kernel: 3,
        postnet_dim: 4,
        postnet_kernel: 3,
        n_mels: 3,
        n_linear: 5,
        max_decoder_steps: 10,
        init_seed: 7,
    }
}

/// Random utterance with uniform `(0, 1)` targets.
#[derive(Clone, Debug)]
pub struct ToyInstance {
    pub ids: Vec<usize>,
    pub speaker: usize,
    pub targets: Targets<f64>,
}

impl ToyInstance {
    /// `phonemes` ids ending in EOS, drawn from the non-special range when
    /// the vocabulary has one.
    pub fn random(cfg: &ModelConfig, phonemes: usize, frames: usize, seed: u64) -> Result<Self> {
        if phonemes == 0 || frames == 0 {
            return Err(ModelError::Config(
                "toy instance needs phonemes and frames".into(),
            ));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let lo = if cfg.phoneme_vocab > 4 { 4 } else { 0 };
        let mut ids: Vec<usize> = (1..phonemes)
            .map(|_| rng.gen_range(lo..cfg.phoneme_vocab))
            .collect();
        ids.push(1.min(cfg.phoneme_vocab - 1));
        let mut fill =
            |n: usize| -> Vec<f64> { (0..n).map(|_| rng.gen_range(0.05..0.95)).collect() };
        let mel = Tensor::new(vec![frames, cfg.n_mels], fill(frames * cfg.n_mels))?;
        let linear = Tensor::new(vec![frames, cfg.n_linear], fill(frames * cfg.n_linear))?;
        let speaker = seed as usize % cfg.speaker_count;
        Ok(ToyInstance {
            ids,
            speaker,
            targets: Targets::new(mel, linear)?,
        })
    }
}

pub const GRADCHECK_JITTER: f64 = 0.05;

/// Compares backprop gradients of the teacher-forced loss with central
/// differences, in 64-bit. Parameters are first jittered by up to
/// [`GRADCHECK_JITTER`] so that zero-initialised biases do not put ReLUs
/// exactly on their kink. With `max_coords`, each parameter contributes up
/// to that many coordinates with nonzero analytic gradient plus a few
/// arbitrary ones; otherwise every coordinate is checked.
pub fn gradcheck_model(
    cfg: &ModelConfig,
    inst: &ToyInstance,
    h: f64,
    max_coords: Option<usize>,
    seed: u64,
) -> Result<GradCheckReport> {
    gradcheck_model_with(cfg, inst, h, max_coords, seed, &ForwardOptions::default())
}

/// [`gradcheck_model`] under explicit forward options. Dropout must be off
/// for the finite differences to be meaningful.
pub fn gradcheck_model_with(
    cfg: &ModelConfig,
    inst: &ToyInstance,
    h: f64,
    max_coords: Option<usize>,
    seed: u64,
    opts: &ForwardOptions,
) -> Result<GradCheckReport> {
    let opts = ForwardOptions {
        training: false,
        ..*opts
    };
    let mut model: Model<f64> = Model::new(cfg.clone())?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let ids: Vec<_> = model.params().ids().collect();
    for &id in &ids {
        for v in model.params_mut().get_mut(id).data_mut() {
            *v += rng.gen_range(-GRADCHECK_JITTER..GRADCHECK_JITTER);
        }
    }
    let mut tape = Tape::new();
    let p = model.bind(&mut tape, |_| true);
    let out = model.forward_teacher_forced(
        &mut tape,
        &p,
        &inst.ids,
        inst.speaker,
        &inst.targets,
        &opts,
    )?;
    tape.backward(out.loss.total)?;
    let grads = p.grads(&tape);
    drop(tape);

    let mut report = GradCheckReport::default();
    for (id, grad) in ids.into_iter().zip(grads) {
        let name = model.params().name(id).to_string();
        let n = model.params().get(id).numel();
        let grad = grad.unwrap_or_else(|| vec![0.0; n]);
        let coords: Vec<usize> = match max_coords {
            Some(k) if n > k => {
                let live: Vec<usize> = (0..n).filter(|&i| grad[i] != 0.0).collect();
                let mut pick: Vec<usize> = sample(&mut rng, live.len(), k.min(live.len()))
                    .into_iter()
                    .map(|i| live[i])
                    .collect();
                pick.extend(sample(&mut rng, n, k.min(4)));
                pick.sort_unstable();
                pick.dedup();
                pick
            }
            _ => (0..n).collect(),
        };
        for k in coords {
            let orig = model.params().get(id).data()[k];
            let numeric = central_difference(h, |d| {
                model.params_mut().get_mut(id).data_mut()[k] = orig + d;
                model.evaluate_loss_with(&inst.ids, inst.speaker, &inst.targets, &opts)
            });
            model.params_mut().get_mut(id).data_mut()[k] = orig;
            report.push(&name, k, grad[k], numeric?);
        }
    }
    Ok(report)
}

/// Variant × placement grid of end-to-end checks.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GradCheckGrid {
    pub base: ModelConfig,
    pub variants: Vec<AttentionVariant>,
    pub placements: Vec<SpeakerPlacement>,
    pub phonemes: usize,
    pub frames: usize,
    pub step: f64,
    pub tolerance: f64,
    pub max_coords_per_param: Option<usize>,
    pub seed: u64,
}

impl Default for GradCheckGrid {
    fn default() -> Self {
        GradCheckGrid {
            base: toy_config(),
            variants: AttentionVariant::GRID.to_vec(),
            placements: SpeakerPlacement::GRID.to_vec(),
            phonemes: 3,
            frames: 4,
            step: 1e-6,
            tolerance: 1e-3,
            max_coords_per_param: None,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct GridCellReport {
    pub variant: AttentionVariant,
    pub placement: SpeakerPlacement,
    pub coords: usize,
    pub max_rel_err: f64,
    pub passed: bool,
    #[serde(skip)]
    pub report: GradCheckReport,
}

/// Runs every grid cell, in parallel, returning cells in grid order.
pub fn gradcheck_grid(grid: &GradCheckGrid) -> Result<Vec<GridCellReport>> {
    let cells: Vec<(AttentionVariant, SpeakerPlacement)> = grid
        .variants
        .iter()
        .flat_map(|&v| grid.placements.iter().map(move |&p| (v, p)))
        .collect();
    cells
        .par_iter()
        .map(|&(variant, placement)| {
            let cfg = grid.base.clone().with_variant(variant, placement);
            let inst = ToyInstance::random(&cfg, grid.phonemes, grid.frames, grid.seed)?;
            let report =
                gradcheck_model(&cfg, &inst, grid.step, grid.max_coords_per_param, grid.seed)?;
            Ok(GridCellReport {
                variant,
                placement,
                coords: report.entries.len(),
                max_rel_err: report.max_rel_err(),
                passed: report.passes(grid.tolerance),
                report,
            })
        })
        .collect()
}
