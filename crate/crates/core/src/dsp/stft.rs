use std::f64::consts::PI;
use std::sync::Arc;

use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use super::{AudioClip, DspError, Result};

/// Frame geometry in samples. Frames are `win` samples long, Hann-windowed
/// and zero-padded to `n_fft`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct StftConfig {
    pub n_fft: usize,
    pub hop: usize,
    pub win: usize,
}

impl Default for StftConfig {
    /// 50 ms window, 12.5 ms hop at 24 kHz.
    fn default() -> Self {
        StftConfig {
            n_fft: 2048,
            hop: 300,
            win: 1200,
        }
    }
}

impl StftConfig {
    pub fn validate(&self) -> Result<()> {
        if self.hop == 0 || self.hop > self.win || self.win > self.n_fft {
            return Err(DspError::Config(format!(
                "need 0 < hop <= win <= n_fft, got hop={} win={} n_fft={}",
                self.hop, self.win, self.n_fft
            )));
        }
        Ok(())
    }

    pub fn n_bins(&self) -> usize {
        self.n_fft / 2 + 1
    }

    pub fn pad(&self) -> usize {
        self.win / 2
    }

    /// Length of the padded signal spanned by `frames` frames.
    pub fn span(&self, frames: usize) -> usize {
        if frames == 0 {
            0
        } else {
            (frames - 1) * self.hop + self.win
        }
    }
}

/// Number of centered frames for a clip of `len` samples.
pub fn frame_count(len: usize, cfg: &StftConfig) -> usize {
    1 + (len + 2 * cfg.pad() - cfg.win) / cfg.hop
}

/// Periodic Hann window.
pub fn hann_window(win: usize) -> Vec<f64> {
    (0..win)
        .map(|n| 0.5 - 0.5 * (2.0 * PI * n as f64 / win as f64).cos())
        .collect()
}

/// One-sided complex spectrogram, row-major `[frames, bins]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Spectrogram {
    pub frames: usize,
    pub bins: usize,
    pub data: Vec<Complex64>,
}

impl Spectrogram {
    pub fn at(&self, t: usize, k: usize) -> Complex64 {
        self.data[t * self.bins + k]
    }

    pub fn frame(&self, t: usize) -> &[Complex64] {
        &self.data[t * self.bins..(t + 1) * self.bins]
    }

    pub fn magnitude(&self) -> Vec<f64> {
        self.data.iter().map(|c| c.norm()).collect()
    }
}

pub(crate) struct StftPlan {
    pub cfg: StftConfig,
    window: Vec<f64>,
    forward: Arc<dyn Fft<f64>>,
    inverse: Arc<dyn Fft<f64>>,
}

impl StftPlan {
    pub fn new(cfg: StftConfig) -> Result<Self> {
        cfg.validate()?;
        let mut planner = FftPlanner::new();
        Ok(StftPlan {
            cfg,
            window: hann_window(cfg.win),
            forward: planner.plan_fft_forward(cfg.n_fft),
            inverse: planner.plan_fft_inverse(cfg.n_fft),
        })
    }

    /// Reflect-pads by `win/2` on each side.
    pub fn pad_signal(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() < self.cfg.win {
            return Err(DspError::TooShort {
                len: x.len(),
                win: self.cfg.win,
            });
        }
        let p = self.cfg.pad();
        let n = x.len();
        let mut out = Vec::with_capacity(n + 2 * p);
        out.extend((0..p).map(|i| x[p - i]));
        out.extend_from_slice(x);
        out.extend((0..p).map(|i| x[n - 2 - i]));
        Ok(out)
    }

    /// Frames an already padded signal, one frame every `hop` samples.
    pub fn analyze(&self, padded: &[f64]) -> Spectrogram {
        let cfg = &self.cfg;
        let frames = if padded.len() < cfg.win {
            0
        } else {
            1 + (padded.len() - cfg.win) / cfg.hop
        };
        let bins = cfg.n_bins();
        let mut data = Vec::with_capacity(frames * bins);
        let mut buf = vec![Complex64::default(); cfg.n_fft];
        let mut scratch = vec![Complex64::default(); self.forward.get_inplace_scratch_len()];
        for t in 0..frames {
            let seg = &padded[t * cfg.hop..t * cfg.hop + cfg.win];
            for (i, slot) in buf.iter_mut().enumerate() {
                *slot = if i < cfg.win {
                    Complex64::new(seg[i] * self.window[i], 0.0)
                } else {
                    Complex64::default()
                };
            }
            self.forward.process_with_scratch(&mut buf, &mut scratch);
            data.extend_from_slice(&buf[..bins]);
        }
        Spectrogram { frames, bins, data }
    }

    /// Overlap-adds `w·IFFT(frame)` and `w²` over the padded span.
    fn overlap_add(&self, spec: &Spectrogram) -> (Vec<f64>, Vec<f64>) {
        let cfg = &self.cfg;
        let n = cfg.n_fft;
        let len = cfg.span(spec.frames);
        let mut out = vec![0.0; len];
        let mut wsum = vec![0.0; len];
        let mut buf = vec![Complex64::default(); n];
        let mut scratch = vec![Complex64::default(); self.inverse.get_inplace_scratch_len()];
        for t in 0..spec.frames {
            let row = spec.frame(t);
            buf[..spec.bins].copy_from_slice(row);
            for k in 1..n - spec.bins + 1 {
                buf[n - k] = row[k].conj();
            }
            self.inverse.process_with_scratch(&mut buf, &mut scratch);
            let off = t * cfg.hop;
            for i in 0..cfg.win {
                let w = self.window[i];
                out[off + i] += w * buf[i].re / n as f64;
                wsum[off + i] += w * w;
            }
        }
        (out, wsum)
    }

    /// Least-squares inverse over the full padded span, treating every
    /// padded sample as free. Samples with zero window energy are zero.
    pub fn synthesize(&self, spec: &Spectrogram) -> Vec<f64> {
        let (mut out, wsum) = self.overlap_add(spec);
        for (x, w) in out.iter_mut().zip(&wsum) {
            *x = if *w > 1e-10 { *x / w } else { 0.0 };
        }
        out
    }
}

/// Centered STFT with reflect padding and a periodic Hann window.
pub fn stft(clip: &AudioClip, cfg: &StftConfig) -> Result<Spectrogram> {
    let plan = StftPlan::new(*cfg)?;
    let x: Vec<f64> = clip.samples.iter().map(|&s| s as f64).collect();
    Ok(plan.analyze(&plan.pad_signal(&x)?))
}

/// Inverse of [`stft`], cropped to `len` samples (zero-extended if the
/// frames do not cover `len`).
pub fn istft(spec: &Spectrogram, cfg: &StftConfig, len: usize) -> Result<Vec<f64>> {
    let plan = StftPlan::new(*cfg)?;
    if spec.bins != cfg.n_bins() {
        return Err(DspError::Config(format!(
            "spectrogram has {} bins, config expects {}",
            spec.bins,
            cfg.n_bins()
        )));
    }
    let full = plan.synthesize(spec);
    let p = cfg.pad();
    Ok((0..len)
        .map(|i| full.get(p + i).copied().unwrap_or(0.0))
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tone(freq: f64, secs: f64) -> AudioClip {
        let n = (24_000.0 * secs) as usize;
        let s = (0..n)
            .map(|i| (2.0 * PI * freq * i as f64 / 24_000.0).sin() as f32 * 0.5)
            .collect();
        AudioClip::new(s, 24_000).unwrap()
    }

    #[test]
    fn zero_signal_has_zero_magnitude() {
        let clip = AudioClip::new(vec![0.0; 5000], 24_000).unwrap();
        let spec = stft(&clip, &StftConfig::default()).unwrap();
        assert!(spec.magnitude().iter().all(|&m| m == 0.0));
    }

    #[test]
    fn tone_peaks_at_analytic_bin() {
        let spec = stft(&tone(440.0, 0.5), &StftConfig::default()).unwrap();
        let want = (440.0f64 * 2048.0 / 24_000.0).round() as usize;
        assert_eq!(want, 38);
        // frames that reach into the reflected padding see a phase flip
        for t in 2..spec.frames - 2 {
            let mag: Vec<f64> = spec.frame(t).iter().map(|c| c.norm()).collect();
            let arg = (0..mag.len())
                .max_by(|&a, &b| mag[a].total_cmp(&mag[b]))
                .unwrap();
            assert_eq!(arg, want, "frame {t}");
        }
    }

    #[test]
    fn too_short_clip_is_rejected() {
        let clip = AudioClip::new(vec![0.1; 1199], 24_000).unwrap();
        assert!(matches!(
            stft(&clip, &StftConfig::default()),
            Err(DspError::TooShort {
                len: 1199,
                win: 1200
            })
        ));
    }

    #[test]
    fn istft_inverts_stft() {
        let clip = tone(300.0, 0.3);
        let cfg = StftConfig::default();
        let spec = stft(&clip, &cfg).unwrap();
        let back = istft(&spec, &cfg, clip.len()).unwrap();
        for (a, b) in clip.samples.iter().zip(&back) {
            assert!((*a as f64 - b).abs() < 1e-9);
        }
    }

    #[test]
    fn invalid_geometry_is_config_error() {
        let cfg = StftConfig {
            n_fft: 512,
            hop: 128,
            win: 1024,
        };
        assert!(matches!(cfg.validate(), Err(DspError::Config(_))));
    }
}
