use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dsp::{griffin_lim, AudioClip, FeaturePair, GriffinLimConfig, NormStats};
use crate::tensor::nn::{
    init_uniform, run_recurrent, Bound, Conv1d, Linear, ParamId, ParamStore, RecurrentCell,
    RecurrentKind, RecurrentState,
};
use crate::tensor::{Real, Tape, Tensor, Var};

use super::{ModelConfig, ModelError, Result, SpeakerPlacement};

/// Uniform init range for the phoneme and speaker lookup tables.
const TABLE_INIT: f64 = 0.5;
/// Prenet biases start off the ReLU kink that the all-zero go-frame hits.
const PRENET_BIAS_INIT: f64 = 0.1;

/// Parameter groups addressed by freeze masks. Every parameter name starts
/// with exactly one group prefix.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ParamGroup {
    PhonemeEmbedding,
    SpeakerTable,
    Encoder,
    Attention,
    Decoder,
    Postnet,
}

impl ParamGroup {
    pub const ALL: [ParamGroup; 6] = [
        ParamGroup::PhonemeEmbedding,
        ParamGroup::SpeakerTable,
        ParamGroup::Encoder,
        ParamGroup::Attention,
        ParamGroup::Decoder,
        ParamGroup::Postnet,
    ];

    pub fn prefix(self) -> &'static str {
        match self {
            ParamGroup::PhonemeEmbedding => "phoneme_embedding",
            ParamGroup::SpeakerTable => "speaker_table",
            ParamGroup::Encoder => "encoder",
            ParamGroup::Attention => "attention",
            ParamGroup::Decoder => "decoder",
            ParamGroup::Postnet => "postnet",
        }
    }

    pub fn of(name: &str) -> Option<ParamGroup> {
        ParamGroup::ALL.into_iter().find(|g| {
            let p = g.prefix();
            name == p
                || name
                    .strip_prefix(p)
                    .is_some_and(|rest| rest.starts_with('.'))
        })
    }
}

#[derive(Clone, Debug)]
struct Layers {
    embedding: ParamId,
    speakers: Option<ParamId>,
    convs: Vec<Conv1d>,
    gru_fwd: RecurrentCell,
    gru_bwd: RecurrentCell,
    att_query: ParamId,
    att_memory: ParamId,
    att_bias: ParamId,
    att_score: ParamId,
    reduce: Option<Linear>,
    prenet: Vec<Linear>,
    lstm: RecurrentCell,
    frame_proj: Linear,
    stop_proj: Linear,
    post_conv: Conv1d,
    post_linear: Linear,
}

impl Layers {
    fn build<F: Real>(store: &mut ParamStore<F>, c: &ModelConfig) -> Self {
        let seed = c.init_seed;
        let table = |store: &mut ParamStore<F>, name: &str, rows: usize, cols: usize| {
            store.add(name, init_uniform(seed, name, &[rows, cols], TABLE_INIT))
        };
        let embedding = table(store, "phoneme_embedding", c.phoneme_vocab, c.embedding_dim);
        let speakers = (c.speaker_placement != SpeakerPlacement::None)
            .then(|| table(store, "speaker_table", c.speaker_count, c.speaker_dim));

        let mut convs = Vec::new();
        let mut width = c.embedding_dim;
        for i in 0..c.encoder_conv_layers {
            let name = format!("encoder.conv{i}");
            convs.push(Conv1d::new(
                store,
                &name,
                width,
                c.encoder_dim,
                c.encoder_kernel,
                seed,
            ));
            width = c.encoder_dim;
        }
        let half = c.encoder_dim / 2;
        let gru_fwd = RecurrentCell::new(
            store,
            "encoder.gru_fwd",
            RecurrentKind::Gru,
            width,
            half,
            seed,
        );
        let gru_bwd = RecurrentCell::new(
            store,
            "encoder.gru_bwd",
            RecurrentKind::Gru,
            width,
            half,
            seed,
        );

        let d_mem = c.memory_dim();
        let d_att = c.attention_dim;
        let glorot = crate::tensor::nn::glorot_limit;
        let weight = |store: &mut ParamStore<F>, name: &str, rows: usize, cols: usize| {
            store.add(
                name,
                init_uniform(seed, name, &[rows, cols], glorot(rows, cols)),
            )
        };
        let att_query = weight(store, "attention.query", c.decoder_dim, d_att);
        let att_memory = weight(store, "attention.memory", d_mem, d_att);
        let att_bias = store.add("attention.bias", Tensor::zeros(vec![d_att]));
        let att_score = weight(store, "attention.score", d_att, 1);
        let reduce = c.attention_variant.uses_pecv().then(|| {
            Linear::new(
                store,
                "attention.reduce",
                d_mem + c.embedding_dim,
                c.encoder_dim,
                seed,
            )
        });

        let mut prenet = Vec::new();
        let mut width = c.n_mels;
        for (i, &d) in c.prenet_dims.iter().enumerate() {
            let layer = Linear::new(store, &format!("decoder.prenet{i}"), width, d, seed);
            store
                .get_mut(layer.bias)
                .data_mut()
                .fill(F::of(PRENET_BIAS_INIT));
            prenet.push(layer);
            width = d;
        }
        let lstm = RecurrentCell::new(
            store,
            "decoder.lstm",
            RecurrentKind::Lstm,
            c.decoder_input_dim(),
            c.decoder_dim,
            seed,
        );
        let out_in = c.decoder_dim + c.context_dim();
        let frame_proj = Linear::new(
            store,
            "decoder.frame_proj",
            out_in,
            c.reduction_factor * c.n_mels,
            seed,
        );
        let stop_proj = Linear::new(store, "decoder.stop_proj", out_in, 1, seed);
        let post_conv = Conv1d::new(
            store,
            "postnet.conv",
            c.n_mels,
            c.postnet_dim,
            c.postnet_kernel,
            seed,
        );
        let post_linear = Linear::new(store, "postnet.linear", c.postnet_dim, c.n_linear, seed);
        Layers {
            embedding,
            speakers,
            convs,
            gru_fwd,
            gru_bwd,
            att_query,
            att_memory,
            att_bias,
            att_score,
            reduce,
            prenet,
            lstm,
            frame_proj,
            stop_proj,
            post_conv,
            post_linear,
        }
    }
}

/// Spectrogram targets for one utterance, in normalized units.
#[derive(Clone, Debug, PartialEq)]
pub struct Targets<F: Real> {
    /// `[T_frames, n_mels]`
    pub mel: Tensor<F>,
    /// `[T_frames, n_linear]`
    pub linear: Tensor<F>,
}

impl<F: Real> Targets<F> {
    pub fn new(mel: Tensor<F>, linear: Tensor<F>) -> Result<Self> {
        if mel.ndim() != 2 || linear.ndim() != 2 || mel.rows() != linear.rows() {
            return Err(ModelError::Data(format!(
                "target shapes {:?} and {:?} disagree",
                mel.shape(),
                linear.shape()
            )));
        }
        if mel.rows() == 0 {
            return Err(ModelError::Data("utterance has zero frames".into()));
        }
        Ok(Targets { mel, linear })
    }

    pub fn from_features(f: &FeaturePair) -> Result<Self> {
        Targets::new(f.mel.cast(), f.linear.cast())
    }

    pub fn frames(&self) -> usize {
        self.mel.rows()
    }

    fn check(&self, c: &ModelConfig) -> Result<()> {
        if self.mel.cols() != c.n_mels || self.linear.cols() != c.n_linear {
            return Err(ModelError::Data(format!(
                "targets have {} mel / {} linear bins, model expects {} / {}",
                self.mel.cols(),
                self.linear.cols(),
                c.n_mels,
                c.n_linear
            )));
        }
        Ok(())
    }
}

/// Encoder tape handles for one utterance.
#[derive(Clone, Copy, Debug)]
pub struct EncodedVars {
    /// p: `[T, d_p]`
    pub embeddings: Var,
    /// h: `[T, d_h]`, residual already added for RES.
    pub outputs: Var,
    /// Attention memory: h, with the speaker embedding appended for SE_ENC.
    pub memory: Var,
    /// `memory·U + b`, precomputed once per utterance.
    pub keys: Var,
    /// `[1, d_spk]` speaker row, when the model has a speaker table.
    pub speaker: Option<Var>,
}

/// Encoder values for one utterance.
#[derive(Clone, Debug, PartialEq)]
pub struct EncodedUtterance<F: Real> {
    pub embeddings: Tensor<F>,
    pub outputs: Tensor<F>,
    pub memory: Tensor<F>,
}

#[derive(Clone, Copy, Debug)]
pub struct AttentionVars {
    /// `[1, T]`
    pub scores: Var,
    /// `[1, T]`
    pub weights: Var,
    /// `[1, d_mem]`
    pub context: Var,
    /// `[1, d_p]`, PECV variants only.
    pub pecv: Option<Var>,
    /// `[1, d_ctx]`, what the decoder consumes.
    pub combined: Var,
}

/// Values of one attention step.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AttentionStepTrace {
    pub scores: Vec<f64>,
    pub weights: Vec<f64>,
    pub context: Vec<f64>,
    pub pecv: Option<Vec<f64>>,
    pub combined: Vec<f64>,
}

impl AttentionStepTrace {
    fn capture<F: Real>(tape: &Tape<F>, a: &AttentionVars) -> Self {
        let v = |x: Var| tape.value(x).to_f64_vec();
        AttentionStepTrace {
            scores: v(a.scores),
            weights: v(a.weights),
            context: v(a.context),
            pecv: a.pecv.map(v),
            combined: v(a.combined),
        }
    }

    /// Index of the largest weight (first on ties).
    pub fn argmax(&self) -> usize {
        let mut best = 0;
        for (j, &w) in self.weights.iter().enumerate() {
            if w > self.weights[best] {
                best = j;
            }
        }
        best
    }
}

#[derive(Clone, Copy, Debug)]
pub struct ForwardOptions {
    /// Enables prenet dropout.
    pub training: bool,
    /// Probability of feeding the ground-truth previous frame.
    pub teacher_forcing: f64,
    /// Seed for dropout masks and teacher-forcing draws.
    pub seed: u64,
    /// Weight of the diagonal attention penalty; zero leaves the loss as
    /// the plain reconstruction objective.
    pub guided_attention: f64,
}

impl Default for ForwardOptions {
    fn default() -> Self {
        ForwardOptions {
            training: false,
            teacher_forcing: 1.0,
            seed: 0,
            guided_attention: 0.0,
        }
    }
}

#[derive(Clone, Copy, Debug)]
pub struct LossVars {
    pub total: Var,
    pub mel: Var,
    pub linear: Var,
    pub stop: Var,
    /// Diagonal attention penalty, when enabled.
    pub guide: Option<Var>,
}

#[derive(Clone, Debug)]
pub struct TeacherForcedOutput {
    /// `[T_frames, n_mels]`
    pub mel: Var,
    /// `[T_frames, n_linear]`
    pub linear: Var,
    /// `[steps, 1]`
    pub stop_logits: Var,
    pub loss: LossVars,
    pub traces: Vec<AttentionStepTrace>,
    pub encoded: EncodedVars,
    pub steps: usize,
}

#[derive(Clone, Debug)]
pub struct FreeRun<F: Real> {
    /// `[steps·r, n_mels]`
    pub mel: Tensor<F>,
    /// `[steps·r, n_linear]`
    pub linear: Tensor<F>,
    pub traces: Vec<AttentionStepTrace>,
    pub stop_probs: Vec<f64>,
    /// Decoding ended at the step cap rather than on the stop token.
    pub hit_max_steps: bool,
}

impl<F: Real> FreeRun<F> {
    pub fn steps(&self) -> usize {
        self.traces.len()
    }
}

#[derive(Clone, Debug)]
pub struct Synthesis<F: Real> {
    pub run: FreeRun<F>,
    pub audio: AudioClip,
    pub convergence: Vec<f64>,
}

/// L1 mel + L1 linear + BCE stop, equally weighted. The stop target is one
/// on the last decoder step only.
pub fn loss_terms<F: Real>(
    tape: &mut Tape<F>,
    mel: Var,
    linear: Var,
    stop_logits: Var,
    targets: &Targets<F>,
) -> Result<LossVars> {
    let mel_t = tape.constant(targets.mel.clone());
    let lin_t = tape.constant(targets.linear.clone());
    let steps = tape.shape(stop_logits)[0];
    let mut stop = Tensor::zeros(vec![steps, 1]);
    if let Some(last) = stop.data_mut().last_mut() {
        *last = F::one();
    }
    let stop_t = tape.constant(stop);
    let mel = tape.l1_loss(mel, mel_t)?;
    let linear = tape.l1_loss(linear, lin_t)?;
    let stop = tape.bce_with_logits(stop_logits, stop_t)?;
    let spec = tape.add(mel, linear)?;
    let total = tape.add(spec, stop)?;
    Ok(LossVars {
        total,
        mel,
        linear,
        stop,
        guide: None,
    })
}

/// Width of the diagonal band in [`guided_attention_mask`], in normalized
/// time units.
pub const GUIDE_WIDTH: f64 = 0.2;

/// `W[n, t] = 1 − exp(−(t/T − n/N)² / 2g²)`: zero on the diagonal, near one
/// far from it.
pub fn guided_attention_mask<F: Real>(steps: usize, positions: usize) -> Tensor<F> {
    let mut w = Tensor::zeros(vec![steps, positions]);
    let g2 = 2.0 * GUIDE_WIDTH * GUIDE_WIDTH;
    for n in 0..steps {
        for t in 0..positions {
            let d = t as f64 / positions as f64 - n as f64 / steps as f64;
            w.data_mut()[n * positions + t] = F::of(1.0 - (-d * d / g2).exp());
        }
    }
    w
}

struct StepVars {
    frames: Var,
    stop: Var,
    state: RecurrentState,
    attention: AttentionVars,
}

/// Network parameters plus the layer wiring for a [`ModelConfig`].
#[derive(Clone, Debug)]
pub struct Model<F: Real> {
    config: ModelConfig,
    params: ParamStore<F>,
    layers: Layers,
}

impl<F: Real> Model<F> {
    pub fn new(config: ModelConfig) -> Result<Self> {
        config.validate()?;
        let mut params = ParamStore::new();
        let layers = Layers::build(&mut params, &config);
        Ok(Model {
            config,
            params,
            layers,
        })
    }

    /// Adopts `params` after checking names and shapes against `config`.
    /// Order in `params` does not matter.
    pub fn from_params(config: ModelConfig, params: ParamStore<F>) -> Result<Self> {
        let mut model = Model::new(config)?;
        if params.len() != model.params.len() {
            let extra: Vec<&str> = params
                .iter()
                .map(|(_, n, _)| n)
                .filter(|n| model.params.id(n).is_none())
                .collect();
            return Err(ModelError::Config(format!(
                "expected {} parameters, got {} (unexpected: {extra:?})",
                model.params.len(),
                params.len()
            )));
        }
        let ids: Vec<ParamId> = model.params.ids().collect();
        for id in ids {
            let name = model.params.name(id).to_string();
            let src = params
                .by_name(&name)
                .ok_or_else(|| ModelError::Config(format!("missing parameter {name}")))?;
            let dst = model.params.get_mut(id);
            if src.shape() != dst.shape() {
                return Err(ModelError::Config(format!(
                    "parameter {name} has shape {:?}, config implies {:?}",
                    src.shape(),
                    dst.shape()
                )));
            }
            *dst = src.clone();
        }
        Ok(model)
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamStore<F> {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore<F> {
        &mut self.params
    }

    pub fn cast<G: Real>(&self) -> Model<G> {
        Model {
            config: self.config.clone(),
            params: self.params.cast(),
            layers: self.layers.clone(),
        }
    }

    pub fn embedding_param(&self) -> ParamId {
        self.layers.embedding
    }

    pub fn speaker_param(&self) -> Option<ParamId> {
        self.layers.speakers
    }

    /// Binds every parameter; `trainable` decides which track gradients.
    pub fn bind(&self, tape: &mut Tape<F>, trainable: impl Fn(&str) -> bool) -> Bound {
        self.params.bind(tape, trainable)
    }

    pub fn encode_vars(
        &self,
        tape: &mut Tape<F>,
        p: &Bound,
        ids: &[usize],
        speaker: usize,
    ) -> Result<EncodedVars> {
        let c = &self.config;
        let l = &self.layers;
        if ids.is_empty() {
            return Err(ModelError::EmptyMemory);
        }
        if let Some(&bad) = ids.iter().find(|&&i| i >= c.phoneme_vocab) {
            return Err(ModelError::Data(format!(
                "phoneme id {bad} outside vocabulary of {}",
                c.phoneme_vocab
            )));
        }
        c.check_speaker(speaker)?;
        let embeddings = tape.embedding_lookup(p[l.embedding], ids)?;
        let mut x = embeddings;
        for conv in &l.convs {
            x = conv.forward(tape, p, x)?;
            x = tape.relu(x);
        }
        let fwd = run_recurrent(&l.gru_fwd, tape, p, x, false)?;
        let bwd = run_recurrent(&l.gru_bwd, tape, p, x, true)?;
        let mut outputs = tape.concat(&[fwd, bwd], 1)?;
        if c.attention_variant.uses_residual() {
            outputs = tape.add(outputs, embeddings)?;
        }
        let speaker = match l.speakers {
            Some(table) => Some(tape.embedding_lookup(p[table], &[speaker])?),
            None => None,
        };
        let memory = match (c.speaker_placement, speaker) {
            (SpeakerPlacement::SeEnc, Some(s)) => {
                let rows = tape.repeat_rows(s, ids.len())?;
                tape.concat(&[outputs, rows], 1)?
            }
            _ => outputs,
        };
        let keys = tape.matmul(memory, p[l.att_memory])?;
        let keys = tape.add_bias(keys, p[l.att_bias])?;
        Ok(EncodedVars {
            embeddings,
            outputs,
            memory,
            keys,
            speaker,
        })
    }

    /// Encoder values without gradient tracking.
    pub fn encode(&self, ids: &[usize], speaker: usize) -> Result<EncodedUtterance<F>> {
        let mut tape = Tape::new();
        let p = self.bind(&mut tape, |_| false);
        let e = self.encode_vars(&mut tape, &p, ids, speaker)?;
        Ok(EncodedUtterance {
            embeddings: tape.value(e.embeddings).clone(),
            outputs: tape.value(e.outputs).clone(),
            memory: tape.value(e.memory).clone(),
        })
    }

    /// One attention step from the previous decoder state `s_prev: [1, d_s]`.
    pub fn attend(
        &self,
        tape: &mut Tape<F>,
        p: &Bound,
        enc: &EncodedVars,
        s_prev: Var,
    ) -> Result<AttentionVars> {
        let l = &self.layers;
        let t_len = tape.shape(enc.keys)[0];
        if t_len == 0 {
            return Err(ModelError::EmptyMemory);
        }
        let q = tape.matmul(s_prev, p[l.att_query])?;
        let q = tape.reshape(q, vec![self.config.attention_dim])?;
        let pre = tape.add_bias(enc.keys, q)?;
        let act = tape.tanh(pre);
        let e = tape.matmul(act, p[l.att_score])?;
        let scores = tape.reshape(e, vec![1, t_len])?;
        let weights = tape.softmax(scores, 1)?;
        let (context, pecv, combined) = self.apply_weights(tape, p, enc, weights)?;
        Ok(AttentionVars {
            scores,
            weights,
            context,
            pecv,
            combined,
        })
    }

    /// Contexts for given weights `[1, T]`: `(c, c′, C)`.
    pub fn apply_weights(
        &self,
        tape: &mut Tape<F>,
        p: &Bound,
        enc: &EncodedVars,
        weights: Var,
    ) -> Result<(Var, Option<Var>, Var)> {
        let context = tape.matmul(weights, enc.memory)?;
        match &self.layers.reduce {
            Some(reduce) => {
                let pecv = tape.matmul(weights, enc.embeddings)?;
                let both = tape.concat(&[context, pecv], 1)?;
                let combined = reduce.forward(tape, p, both)?;
                Ok((context, Some(pecv), combined))
            }
            None => Ok((context, None, context)),
        }
    }

    fn decoder_step(
        &self,
        tape: &mut Tape<F>,
        p: &Bound,
        enc: &EncodedVars,
        prev_frame: Var,
        state: RecurrentState,
        mut dropout: Option<&mut ChaCha8Rng>,
    ) -> Result<StepVars> {
        let c = &self.config;
        let l = &self.layers;
        let attention = self.attend(tape, p, enc, state.output())?;
        let mut x = prev_frame;
        for layer in &l.prenet {
            x = layer.forward(tape, p, x)?;
            x = tape.relu(x);
            if let Some(rng) = dropout.as_deref_mut() {
                x = tape.dropout(x, c.prenet_dropout, rng)?;
            }
        }
        let mut parts = vec![x];
        if let (SpeakerPlacement::SeDec, Some(s)) = (c.speaker_placement, enc.speaker) {
            parts.push(s);
        }
        parts.push(attention.combined);
        let input = tape.concat(&parts, 1)?;
        let (s, state) = l.lstm.step(tape, p, input, state)?;
        let out = tape.concat(&[s, attention.combined], 1)?;
        let frames = l.frame_proj.forward(tape, p, out)?;
        let frames = tape.reshape(frames, vec![c.reduction_factor, c.n_mels])?;
        let stop = l.stop_proj.forward(tape, p, out)?;
        Ok(StepVars {
            frames,
            stop,
            state,
            attention,
        })
    }

    /// Mel `[T, n_mels]` to linear `[T, n_linear]`.
    pub fn postnet(&self, tape: &mut Tape<F>, p: &Bound, mel: Var) -> Result<Var> {
        let h = self.layers.post_conv.forward(tape, p, mel)?;
        let h = tape.tanh(h);
        Ok(self.layers.post_linear.forward(tape, p, h)?)
    }

    /// Full unrolled pass with ground-truth frame feedback. Step 0 sees a zero
    /// go-frame; step `i` sees the last target frame of group `i − 1`.
    /// Predictions are cut to the target length.
    pub fn forward_teacher_forced(
        &self,
        tape: &mut Tape<F>,
        p: &Bound,
        ids: &[usize],
        speaker: usize,
        targets: &Targets<F>,
        opts: &ForwardOptions,
    ) -> Result<TeacherForcedOutput> {
        let c = &self.config;
        targets.check(c)?;
        let t_frames = targets.frames();
        let r = c.reduction_factor;
        let steps = t_frames.div_ceil(r);
        let encoded = self.encode_vars(tape, p, ids, speaker)?;
        let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
        let mel_truth = tape.constant(targets.mel.clone());
        let mut prev = tape.constant(Tensor::zeros(vec![1, c.n_mels]));
        let mut state = self.layers.lstm.zero_state(tape);
        let mut groups = Vec::with_capacity(steps);
        let mut stops = Vec::with_capacity(steps);
        let mut traces = Vec::with_capacity(steps);
        let mut alignment = Vec::with_capacity(steps);
        for i in 0..steps {
            let dropout = if opts.training { Some(&mut rng) } else { None };
            let step = self.decoder_step(tape, p, &encoded, prev, state, dropout)?;
            traces.push(AttentionStepTrace::capture(tape, &step.attention));
            alignment.push(step.attention.weights);
            state = step.state;
            groups.push(step.frames);
            stops.push(step.stop);
            if i + 1 < steps {
                let truth = opts.teacher_forcing >= 1.0 || rng.gen::<f64>() < opts.teacher_forcing;
                prev = if truth {
                    tape.narrow(mel_truth, 0, (i + 1) * r - 1, 1)?
                } else {
                    tape.narrow(step.frames, 0, r - 1, 1)?
                };
            }
        }
        let all = tape.concat(&groups, 0)?;
        let mel = tape.narrow(all, 0, 0, t_frames)?;
        let linear = self.postnet(tape, p, mel)?;
        let stop_logits = tape.concat(&stops, 0)?;
        let mut loss = loss_terms(tape, mel, linear, stop_logits, targets)?;
        if opts.guided_attention > 0.0 {
            let a = tape.concat(&alignment, 0)?;
            let mask = tape.constant(guided_attention_mask(steps, ids.len()));
            let penalized = tape.mul(a, mask)?;
            let mean = tape.mean(penalized);
            let guide = tape.scale(mean, opts.guided_attention);
            loss.total = tape.add(loss.total, guide)?;
            loss.guide = Some(guide);
        }
        Ok(TeacherForcedOutput {
            mel,
            linear,
            stop_logits,
            loss,
            traces,
            encoded,
            steps,
        })
    }

    /// Teacher-forced total loss without dropout, as a plain number.
    pub fn evaluate_loss(
        &self,
        ids: &[usize],
        speaker: usize,
        targets: &Targets<F>,
    ) -> Result<f64> {
        self.evaluate_loss_with(ids, speaker, targets, &ForwardOptions::default())
    }

    pub fn evaluate_loss_with(
        &self,
        ids: &[usize],
        speaker: usize,
        targets: &Targets<F>,
        opts: &ForwardOptions,
    ) -> Result<f64> {
        let mut tape = Tape::new();
        let p = self.bind(&mut tape, |_| false);
        let out = self.forward_teacher_forced(&mut tape, &p, ids, speaker, targets, opts)?;
        Ok(tape.value(out.loss.total).data()[0].as_f64())
    }

    /// Autoregressive decoding on the model's own output until the stop
    /// probability exceeds 0.5 or `max_steps` (default: the config cap).
    pub fn decode_free_running(
        &self,
        ids: &[usize],
        speaker: usize,
        max_steps: Option<usize>,
    ) -> Result<FreeRun<F>> {
        let c = &self.config;
        let cap = max_steps.unwrap_or(c.max_decoder_steps);
        let mut tape = Tape::new();
        let p = self.bind(&mut tape, |_| false);
        let enc = self.encode_vars(&mut tape, &p, ids, speaker)?;
        let mut prev = tape.constant(Tensor::zeros(vec![1, c.n_mels]));
        let mut state = self.layers.lstm.zero_state(&mut tape);
        let mut groups = Vec::new();
        let mut traces = Vec::new();
        let mut stop_probs = Vec::new();
        let mut stopped = false;
        while groups.len() < cap {
            let step = self.decoder_step(&mut tape, &p, &enc, prev, state, None)?;
            traces.push(AttentionStepTrace::capture(&tape, &step.attention));
            let logit = tape.value(step.stop).data()[0].as_f64();
            let prob = 1.0 / (1.0 + (-logit).exp());
            stop_probs.push(prob);
            state = step.state;
            groups.push(step.frames);
            prev = tape.narrow(step.frames, 0, c.reduction_factor - 1, 1)?;
            if prob > 0.5 {
                stopped = true;
                break;
            }
        }
        if !stopped {
            log::warn!("decoder reached the {cap}-step cap without emitting stop");
        }
        let mel = tape.concat(&groups, 0)?;
        let linear = self.postnet(&mut tape, &p, mel)?;
        Ok(FreeRun {
            mel: tape.value(mel).clone(),
            linear: tape.value(linear).clone(),
            traces,
            stop_probs,
            hit_max_steps: !stopped,
        })
    }

    /// Free-running decode followed by Griffin-Lim on the predicted linear
    /// spectrogram. Without `norm`, predictions are taken as log magnitudes.
    pub fn synthesize(
        &self,
        ids: &[usize],
        speaker: usize,
        norm: Option<&NormStats>,
        gl: &GriffinLimConfig,
    ) -> Result<Synthesis<F>> {
        if self.config.n_linear != gl.stft.n_bins() {
            return Err(ModelError::Config(format!(
                "model predicts {} linear bins, Griffin-Lim STFT has {}",
                self.config.n_linear,
                gl.stft.n_bins()
            )));
        }
        let run = self.decode_free_running(ids, speaker, None)?;
        let linear: Tensor<f32> = run.linear.cast();
        let mag = match norm {
            Some(n) => n.linear_magnitude(&linear),
            None => {
                let data = linear.data().iter().map(|&v| (v as f64).exp()).collect();
                Tensor::new(linear.shape().to_vec(), data)?
            }
        };
        let out = griffin_lim(&mag, gl)?;
        Ok(Synthesis {
            run,
            audio: out.clip,
            convergence: out.convergence,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{AttentionVariant, ModelConfig};

    fn tiny(variant: AttentionVariant, placement: SpeakerPlacement) -> ModelConfig {
        ModelConfig {
            phoneme_vocab: 10,
            embedding_dim: 6,
            encoder_dim: 6,
            decoder_dim: 8,
            attention_dim: 5,
            speaker_count: 3,
            speaker_dim: 2,
            attention_variant: variant,
            speaker_placement: placement,
            reduction_factor: 2,
            prenet_dims: vec![7, 5],
            prenet_dropout: 0.0,
            encoder_conv_layers: 2,
            encoder_kernel: 3,
            postnet_dim: 4,
            postnet_kernel: 3,
            n_mels: 3,
            n_linear: 5,
            max_decoder_steps: 7,
            init_seed: 3,
        }
    }

    fn targets(frames: usize) -> Targets<f64> {
        let mel = (0..frames * 3)
            .map(|i| (i as f64 * 0.37).sin().abs())
            .collect();
        let lin = (0..frames * 5)
            .map(|i| (i as f64 * 0.11).cos().abs())
            .collect();
        Targets::new(
            Tensor::new(vec![frames, 3], mel).unwrap(),
            Tensor::new(vec![frames, 5], lin).unwrap(),
        )
        .unwrap()
    }

    #[test]
    fn every_parameter_has_a_group() {
        for placement in SpeakerPlacement::GRID {
            let m: Model<f32> = Model::new(tiny(AttentionVariant::Pecv, placement)).unwrap();
            for (_, name, _) in m.params().iter() {
                assert!(ParamGroup::of(name).is_some(), "{name}");
            }
        }
        assert_eq!(ParamGroup::of("encoderx.w"), None);
    }

    #[test]
    fn shapes_and_trace_count() {
        let m: Model<f64> =
            Model::new(tiny(AttentionVariant::Pecv, SpeakerPlacement::SeDec)).unwrap();
        let mut tape = Tape::new();
        let p = m.bind(&mut tape, |_| true);
        let t = targets(5);
        let out = m
            .forward_teacher_forced(
                &mut tape,
                &p,
                &[4, 5, 6, 1],
                1,
                &t,
                &ForwardOptions::default(),
            )
            .unwrap();
        assert_eq!(tape.shape(out.mel), [5, 3]);
        assert_eq!(tape.shape(out.linear), [5, 5]);
        assert_eq!(out.steps, 3);
        assert_eq!(out.traces.len(), 3);
        for tr in &out.traces {
            assert_eq!(tr.weights.len(), 4);
            assert_eq!(tr.pecv.as_ref().unwrap().len(), 6);
            assert_eq!(tr.combined.len(), 6);
        }
    }

    #[test]
    fn pecv_absent_without_the_variant() {
        let m: Model<f64> =
            Model::new(tiny(AttentionVariant::Res, SpeakerPlacement::SeEnc)).unwrap();
        let mut tape = Tape::new();
        let p = m.bind(&mut tape, |_| false);
        let out = m
            .forward_teacher_forced(
                &mut tape,
                &p,
                &[4, 1],
                0,
                &targets(2),
                &ForwardOptions::default(),
            )
            .unwrap();
        assert!(out.traces.iter().all(|t| t.pecv.is_none()));
        assert_eq!(tape.shape(out.encoded.memory), [2, 8]);
    }

    #[test]
    fn oracle_prediction_has_zero_spectral_loss() {
        let t = targets(4);
        let mut tape = Tape::new();
        let mel = tape.constant(t.mel.clone());
        let lin = tape.constant(t.linear.clone());
        let stop = tape.constant(Tensor::new(vec![2, 1], vec![-60.0, 60.0]).unwrap());
        let l = loss_terms(&mut tape, mel, lin, stop, &t).unwrap();
        assert_eq!(tape.value(l.mel).data()[0], 0.0);
        assert_eq!(tape.value(l.linear).data()[0], 0.0);
        assert!(tape.value(l.total).data()[0] < 1e-20);
    }

    #[test]
    fn untrained_model_stops_at_cap() {
        let mut m: Model<f32> =
            Model::new(tiny(AttentionVariant::Base, SpeakerPlacement::None)).unwrap();
        let stop_bias = m.params().id("decoder.stop_proj.bias").unwrap();
        m.params_mut().get_mut(stop_bias).data_mut()[0] = -50.0;
        let run = m.decode_free_running(&[4, 5, 1], 0, None).unwrap();
        assert!(run.hit_max_steps);
        assert_eq!(run.steps(), 7);
        assert_eq!(run.mel.shape(), [14, 3]);
    }

    #[test]
    fn invalid_speaker_names_range() {
        let m: Model<f32> =
            Model::new(tiny(AttentionVariant::Base, SpeakerPlacement::SeDec)).unwrap();
        let err = m.encode(&[4, 1], 3).unwrap_err().to_string();
        assert!(err.contains("0..3"), "{err}");
    }

    #[test]
    fn zero_frames_is_a_data_error() {
        let r = Targets::<f32>::new(Tensor::zeros(vec![0, 3]), Tensor::zeros(vec![0, 5]));
        assert!(matches!(r, Err(ModelError::Data(_))));
    }

    #[test]
    fn from_params_rejects_wrong_shapes() {
        let c = tiny(AttentionVariant::Base, SpeakerPlacement::SeDec);
        let m: Model<f32> = Model::new(c.clone()).unwrap();
        let other: Model<f32> = Model::new(ModelConfig {
            decoder_dim: 9,
            ..c.clone()
        })
        .unwrap();
        assert!(Model::from_params(c.clone(), other.params().clone()).is_err());
        let back = Model::from_params(c, m.params().clone()).unwrap();
        assert_eq!(back.params(), m.params());
    }
}
