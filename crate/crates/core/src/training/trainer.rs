use std::path::PathBuf;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use sha2::{Digest, Sha256};

use crate::dsp::NormStats;
use crate::model::{Checkpoint, ForwardOptions, Model, ParamGroup, Targets};
use crate::tensor::nn::stable_hash;
use crate::tensor::optim::{clip_global_norm, Adam, AdamConfig};
use crate::tensor::{Real, Tape, Tensor};

use super::diagnostics::attention_diagnostics;
use super::log::{CheckpointRecord, LogRecord, StepRecord, TrainingLog};
use super::regime::{Regime, Schedule, TrainingRegime};
use super::{Example, RegimeData, Result, TrainingError};

#[derive(Clone, Debug, Default)]
pub struct TrainOptions {
    /// Where phase checkpoints are written, if anywhere.
    pub out_dir: Option<PathBuf>,
    /// Worker threads for per-utterance gradients; `None` uses the global
    /// pool. Results do not depend on the thread count.
    pub threads: Option<usize>,
}

#[derive(Clone, Debug)]
pub struct TrainingOutcome {
    pub checkpoint: Checkpoint,
    /// Checkpoint at the end of each phase that ran, in order.
    pub phase_checkpoints: Vec<Checkpoint>,
    pub log: TrainingLog,
    pub norm: NormStats,
}

struct PhaseExample<F: Real> {
    ids: Vec<usize>,
    speaker: usize,
    targets: Targets<F>,
}

struct Phase<'a> {
    number: u32,
    examples: Vec<(&'a Example, usize)>,
    schedule: &'a Schedule,
    freeze: Vec<ParamGroup>,
    monitor_speaker: Option<usize>,
}

struct ExampleGrad<F> {
    losses: [f64; 5],
    grads: Vec<Option<Vec<F>>>,
    entropy: f64,
    forward_motion: f64,
}

/// 32-bit training.
pub fn train(regime: &TrainingRegime, data: &RegimeData) -> Result<TrainingOutcome> {
    train_with::<f32>(regime, data, &TrainOptions::default())
}

fn frozen_hash<F: Real>(model: &Model<F>, freeze: &[ParamGroup]) -> Option<String> {
    if freeze.is_empty() {
        return None;
    }
    let mut h = Sha256::new();
    for (_, name, t) in model.params().iter() {
        if ParamGroup::of(name).is_some_and(|g| freeze.contains(&g)) {
            h.update(name.as_bytes());
            for v in t.data() {
                h.update(v.as_f64().to_le_bytes());
            }
        }
    }
    Some(hex::encode(h.finalize()))
}

fn check_frozen<F: Real>(
    model: &Model<F>,
    phase: u32,
    step: usize,
    snapshot: &[(usize, Tensor<F>)],
) -> Result<()> {
    for (i, t) in snapshot {
        let id = model.params().ids().nth(*i).expect("param index");
        if model.params().get(id) != t {
            return Err(TrainingError::FrozenChanged {
                name: model.params().name(id).to_string(),
                phase,
                step,
            });
        }
    }
    Ok(())
}

fn example_grad<F: Real>(
    model: &Model<F>,
    ex: &PhaseExample<F>,
    freeze: &[ParamGroup],
    opts: ForwardOptions,
) -> Result<ExampleGrad<F>> {
    let mut tape = Tape::new();
    let p = model.bind(&mut tape, |name| {
        ParamGroup::of(name).is_some_and(|g| !freeze.contains(&g))
    });
    let out =
        model.forward_teacher_forced(&mut tape, &p, &ex.ids, ex.speaker, &ex.targets, &opts)?;
    let l = out.loss;
    let v = |x| tape.value(x).data()[0].as_f64();
    let losses = [
        v(l.total),
        v(l.mel),
        v(l.linear),
        v(l.stop),
        l.guide.map_or(0.0, v),
    ];
    tape.backward(l.total)
        .map_err(crate::model::ModelError::from)?;
    let d = attention_diagnostics(&out.traces);
    Ok(ExampleGrad {
        losses,
        grads: p.grads(&tape),
        entropy: d.entropy,
        forward_motion: d.forward_motion,
    })
}

struct PhaseContext<'a> {
    norm: &'a NormStats,
    out_dir: Option<&'a std::path::Path>,
    pool: Option<&'a rayon::ThreadPool>,
}

fn run_phase<F: Real>(
    model: &mut Model<F>,
    phase: &Phase<'_>,
    ctx: &PhaseContext<'_>,
    step0: usize,
    parent: &mut String,
    log: &mut TrainingLog,
) -> Result<usize> {
    let norm = ctx.norm;
    let pool = ctx.pool;
    let sched = phase.schedule;
    let examples: Vec<PhaseExample<F>> = phase
        .examples
        .iter()
        .map(|&(e, speaker)| {
            Ok(PhaseExample {
                ids: e.ids.clone(),
                speaker,
                targets: Targets::from_features(&norm.normalize(&e.features))?,
            })
        })
        .collect::<Result<_>>()?;
    let frozen: Vec<(usize, Tensor<F>)> = model
        .params()
        .iter()
        .enumerate()
        .filter(|(_, (_, name, _))| ParamGroup::of(name).is_some_and(|g| phase.freeze.contains(&g)))
        .map(|(i, (_, _, t))| (i, t.clone()))
        .collect();
    let mut adam = Adam::new(AdamConfig::default(), model.params());
    let mut rng = ChaCha8Rng::seed_from_u64(sched.seed ^ stable_hash(&phase.number.to_le_bytes()));
    let mut order: Vec<usize> = (0..examples.len()).collect();
    let mut cursor = order.len();
    let speaker_param = model.speaker_param();
    let spk_dim = model.config().speaker_dim;

    for s in 0..sched.steps {
        let step = step0 + s;
        let mut batch = Vec::with_capacity(sched.batch_size);
        while batch.len() < sched.batch_size {
            if cursor == order.len() {
                order.shuffle(&mut rng);
                cursor = 0;
            }
            batch.push(order[cursor]);
            cursor += 1;
        }
        let work = |(slot, &ix): (usize, &usize)| {
            let opts = ForwardOptions {
                training: true,
                teacher_forcing: sched.teacher_forcing,
                seed: sched.seed
                    ^ stable_hash(format!("{}:{step}:{slot}", phase.number).as_bytes()),
                guided_attention: sched.guided_attention,
            };
            example_grad(model, &examples[ix], &phase.freeze, opts)
        };
        let results: Vec<Result<ExampleGrad<F>>> = match pool {
            Some(p) => p.install(|| batch.par_iter().enumerate().map(work).collect()),
            None => batch.par_iter().enumerate().map(work).collect(),
        };
        let mut losses = [0.0; 5];
        let mut entropy = 0.0;
        let mut motion = 0.0;
        let mut grads: Vec<Option<Vec<F>>> = vec![None; model.params().len()];
        for r in results {
            let r = r?;
            for (a, b) in losses.iter_mut().zip(r.losses) {
                *a += b;
            }
            entropy += r.entropy;
            motion += r.forward_motion;
            for (acc, g) in grads.iter_mut().zip(r.grads) {
                match (acc.as_mut(), g) {
                    (Some(a), Some(g)) => a.iter_mut().zip(&g).for_each(|(x, y)| *x += *y),
                    (None, Some(g)) => *acc = Some(g),
                    (_, None) => {}
                }
            }
        }
        let b = batch.len() as f64;
        let scale = F::of(1.0 / b);
        for g in grads.iter_mut().flatten() {
            g.iter_mut().for_each(|x| *x *= scale);
        }
        losses.iter_mut().for_each(|l| *l /= b);
        if !losses[0].is_finite() {
            return Err(TrainingError::NonFinite { step });
        }
        let target_speaker_grad_norm = match (phase.monitor_speaker, speaker_param) {
            (Some(t), Some(id)) => Some(match &grads[id.index()] {
                Some(g) => g[t * spk_dim..(t + 1) * spk_dim]
                    .iter()
                    .map(|x| x.as_f64().powi(2))
                    .sum::<f64>()
                    .sqrt(),
                None => 0.0,
            }),
            _ => None,
        };
        let grad_norm = clip_global_norm(&mut grads, sched.grad_clip);
        let lr = sched.lr_at(s);
        adam.step(model.params_mut(), &grads, lr);
        log.records.push(LogRecord::Step(StepRecord {
            phase: phase.number,
            step,
            learning_rate: lr,
            loss: losses[0],
            mel_loss: losses[1],
            linear_loss: losses[2],
            stop_loss: losses[3],
            guide_loss: (sched.guided_attention > 0.0).then_some(losses[4]),
            grad_norm,
            attention_entropy: entropy / b,
            forward_motion: motion / b,
            target_speaker_grad_norm,
        }));
        if (s + 1) % (sched.steps / 10).max(1) == 0 {
            log::info!(
                "phase {} step {}/{}: loss {:.4} (mel {:.4}, linear {:.4}, stop {:.4})",
                phase.number,
                s + 1,
                sched.steps,
                losses[0],
                losses[1],
                losses[2],
                losses[3]
            );
        }
        if sched.verify_frozen_each_step {
            check_frozen(model, phase.number, step, &frozen)?;
        }
        if let (Some(every), Some(dir)) = (sched.checkpoint_every, ctx.out_dir) {
            if (s + 1) % every == 0 && s + 1 < sched.steps {
                let ck = Checkpoint::from_model(model, Some(*norm));
                let name = PathBuf::from(format!("step{}.ptck", step + 1));
                let hash = ck.save(dir.join(&name))?;
                log.records.push(LogRecord::Checkpoint(CheckpointRecord {
                    phase: phase.number,
                    step: step + 1,
                    hash: hash.clone(),
                    parent: Some(std::mem::replace(parent, hash)),
                    path: Some(name),
                    frozen_hash: frozen_hash(model, &phase.freeze),
                }));
            }
        }
    }
    check_frozen(model, phase.number, step0 + sched.steps, &frozen)?;
    Ok(step0 + sched.steps)
}

/// Runs every phase of `regime` at precision `F`.
pub fn train_with<F: Real>(
    regime: &TrainingRegime,
    data: &RegimeData,
    opts: &TrainOptions,
) -> Result<TrainingOutcome> {
    regime.validate()?;
    let target = regime.target_speaker;
    if regime.regime == Regime::AvmExcludeThenRetrain {
        let leaked: Vec<&str> = data
            .avm
            .iter()
            .filter(|e| e.speaker == target)
            .map(|e| e.utterance_id.as_str())
            .collect();
        if !leaked.is_empty() {
            return Err(TrainingError::Config(format!(
                "target speaker {target} appears in the exclusion-phase data ({} utterances, first {})",
                leaked.len(),
                leaked[0]
            )));
        }
    }
    if regime.regime != Regime::AvmPooled {
        if let Some(e) = data.target.iter().find(|e| e.speaker != target) {
            return Err(TrainingError::Data(format!(
                "target set utterance {} belongs to speaker {}, not {target}",
                e.utterance_id, e.speaker
            )));
        }
    }
    let config = regime.effective_model();
    let norm = data.norm_stats()?;
    let mut model: Model<F> = Model::new(config)?;

    let pooled = |e: &'_ Example| -> usize {
        if regime.regime == Regime::AvmPooled {
            0
        } else {
            e.speaker
        }
    };
    let all: Vec<(&Example, usize)> = data
        .avm
        .iter()
        .chain(&data.target)
        .map(|e| (e, pooled(e)))
        .collect();
    let phases = match regime.regime {
        Regime::AvmPooled | Regime::AvmSpkEmbIncludeTarget => vec![Phase {
            number: 1,
            examples: all,
            schedule: regime.phase_schedule(1),
            freeze: regime.phase_freeze(1),
            monitor_speaker: None,
        }],
        Regime::AvmExcludeThenRetrain => vec![
            Phase {
                number: 1,
                examples: data.avm.iter().map(|e| (e, e.speaker)).collect(),
                schedule: regime.phase_schedule(1),
                freeze: regime.phase_freeze(1),
                monitor_speaker: Some(target),
            },
            Phase {
                number: 2,
                examples: data.target.iter().map(|e| (e, e.speaker)).collect(),
                schedule: regime.phase_schedule(2),
                freeze: regime.phase_freeze(2),
                monitor_speaker: None,
            },
        ],
    };

    let pool = match opts.threads {
        Some(n) => Some(
            rayon::ThreadPoolBuilder::new()
                .num_threads(n.max(1))
                .build()
                .map_err(|e| TrainingError::Config(format!("thread pool: {e}")))?,
        ),
        None => None,
    };
    if let Some(dir) = &opts.out_dir {
        std::fs::create_dir_all(dir).map_err(|e| TrainingError::io(dir, e))?;
    }

    let mut log = TrainingLog::default();
    let init = Checkpoint::from_model(&model, Some(norm));
    let mut parent = init.hash();
    log.records.push(LogRecord::Checkpoint(CheckpointRecord {
        phase: 0,
        step: 0,
        hash: parent.clone(),
        parent: None,
        path: None,
        frozen_hash: None,
    }));
    let mut step = 0;
    let mut phase_checkpoints = Vec::new();
    for phase in &phases {
        if phase.examples.is_empty() {
            if phase.schedule.steps > 0 && phase.number == 1 {
                return Err(TrainingError::Data(format!(
                    "phase {} has no training data",
                    phase.number
                )));
            }
            log::warn!("phase {} has no data; skipped", phase.number);
            continue;
        }
        log::info!(
            "phase {}: {} utterances, {} steps, frozen {:?}",
            phase.number,
            phase.examples.len(),
            phase.schedule.steps,
            phase.freeze
        );
        let ctx = PhaseContext {
            norm: &norm,
            out_dir: opts.out_dir.as_deref(),
            pool: pool.as_ref(),
        };
        step = run_phase(&mut model, phase, &ctx, step, &mut parent, &mut log)?;
        let ck = Checkpoint::from_model(&model, Some(norm));
        let path = match &opts.out_dir {
            Some(dir) => {
                let name = PathBuf::from(format!("phase{}.ptck", phase.number));
                ck.save(dir.join(&name))?;
                Some(name)
            }
            None => None,
        };
        let hash = ck.hash();
        log.records.push(LogRecord::Checkpoint(CheckpointRecord {
            phase: phase.number,
            step,
            hash: hash.clone(),
            parent: Some(parent),
            path,
            frozen_hash: frozen_hash(&model, &phase.freeze),
        }));
        parent = hash;
        phase_checkpoints.push(ck);
    }
    let checkpoint = phase_checkpoints.last().cloned().unwrap_or(init);
    Ok(TrainingOutcome {
        checkpoint,
        phase_checkpoints,
        log,
        norm,
    })
}
