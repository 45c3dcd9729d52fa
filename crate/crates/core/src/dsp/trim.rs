use serde::{Deserialize, Serialize};

use super::{AudioClip, DspError, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrimConfig {
    /// Activity threshold in dB relative to full scale.
    pub threshold_db: f64,
    /// Trailing silence kept after the last active sample.
    pub tail_ms: f64,
    /// Length of the RMS analysis frames.
    pub frame_ms: f64,
}

impl Default for TrimConfig {
    fn default() -> Self {
        TrimConfig {
            threshold_db: -40.0,
            tail_ms: 200.0,
            frame_ms: 12.5,
        }
    }
}

/// Removes leading silence and shortens trailing silence to `tail_ms`.
///
/// Activity is located on frame RMS, then refined to the first and last
/// samples whose magnitude reaches the threshold inside the boundary
/// frames. A trailing region already shorter than `tail_ms` is kept as is.
pub fn trim_silence(clip: &AudioClip, cfg: &TrimConfig) -> Result<AudioClip> {
    if !(cfg.tail_ms >= 0.0) {
        return Err(DspError::Config(format!(
            "tail_ms must be >= 0, got {}",
            cfg.tail_ms
        )));
    }
    let x = &clip.samples;
    let thresh = 10f64.powf(cfg.threshold_db / 20.0);
    let frame = clip.ms_to_samples(cfg.frame_ms).max(1);
    let active: Vec<usize> = x
        .chunks(frame)
        .enumerate()
        .filter(|(_, c)| {
            let e: f64 = c.iter().map(|&s| (s as f64) * (s as f64)).sum();
            (e / c.len() as f64).sqrt() >= thresh
        })
        .map(|(i, _)| i)
        .collect();
    let (Some(&first), Some(&last)) = (active.first(), active.last()) else {
        return Err(DspError::EmptyClip(format!(
            "{} samples, none above {} dBFS",
            x.len(),
            cfg.threshold_db
        )));
    };
    let loud = |i: &usize| (x[*i] as f64).abs() >= thresh;
    let f0 = first * frame;
    let start = (f0..(f0 + frame).min(x.len())).find(loud).unwrap_or(f0);
    let l0 = last * frame;
    let l1 = (l0 + frame).min(x.len());
    let end = (l0..l1).rev().find(loud).map_or(l1, |i| i + 1);
    let tail = clip.ms_to_samples(cfg.tail_ms).min(x.len() - end);
    AudioClip::new(x[start..end + tail].to_vec(), clip.sample_rate)
}
