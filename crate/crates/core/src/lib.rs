#![allow(clippy::neg_cmp_op_on_partial_ord)]

//! Mixed-lingual (Mandarin + English) encoder-decoder text-to-speech.
//!
//! Modules, bottom-up:
//! - [`tensor`]: reverse-mode autodiff engine, layers, Adam.
//! - [`dsp`]: WAV I/O, STFT, mel features, silence trimming, Griffin-Lim.
//! - [`frontend`]: language-tagged phoneme inventory, phoneme strings, manifests.
//! - [`model`]: encoder, attention variants, speaker conditioning, decoder.
//! - [`training`]: average-voice training regimes and corpus selection.
//! - [`analysis`]: embedding dumps, t-SNE, language separation, SVG plots.
//! - [`synthetic`]: deterministic two-language toy corpus generator.

pub mod analysis;
pub mod dsp;
pub mod frontend;
pub mod model;
pub mod synthetic;
pub mod tensor;
pub mod training;

pub use tensor::{Real, Tape, Tensor, TensorError, Var};
