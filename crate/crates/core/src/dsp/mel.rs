use crate::tensor::Tensor;

use super::{DspError, Result};

pub fn hz_to_mel(f: f64) -> f64 {
    2595.0 * (1.0 + f / 700.0).log10()
}

pub fn mel_to_hz(m: f64) -> f64 {
    700.0 * (10f64.powf(m / 2595.0) - 1.0)
}

/// Triangular mel filterbank, `[n_mels, n_fft/2 + 1]`.
#[derive(Clone, Debug)]
pub struct MelBank {
    pub weights: Tensor<f64>,
    pub centers_hz: Vec<f64>,
}

impl MelBank {
    pub fn n_mels(&self) -> usize {
        self.weights.rows()
    }

    pub fn n_bins(&self) -> usize {
        self.weights.cols()
    }

    /// `out[m] = Σ_k W[m, k] · spectrum[k]`.
    pub fn apply(&self, spectrum: &[f64], out: &mut [f64]) {
        let bins = self.n_bins();
        for (m, o) in out.iter_mut().enumerate() {
            let row = &self.weights.data()[m * bins..(m + 1) * bins];
            *o = row.iter().zip(spectrum).map(|(w, s)| w * s).sum();
        }
    }
}

/// Filters have edges equally spaced in mel between `fmin` and `fmax`; each
/// triangle has peak `2 / (upper - lower)` so it integrates to one over Hz.
pub fn mel_filterbank(
    n_fft: usize,
    n_mels: usize,
    fmin: f64,
    fmax: f64,
    sample_rate: u32,
) -> Result<MelBank> {
    let nyquist = sample_rate as f64 / 2.0;
    if n_fft < 2 || n_mels == 0 {
        return Err(DspError::Config(format!(
            "need n_fft >= 2 and n_mels >= 1, got {n_fft} and {n_mels}"
        )));
    }
    if !(fmin >= 0.0 && fmin < fmax && fmax <= nyquist) {
        return Err(DspError::Config(format!(
            "need 0 <= fmin < fmax <= {nyquist}, got fmin={fmin} fmax={fmax}"
        )));
    }
    let bins = n_fft / 2 + 1;
    let (lo, hi) = (hz_to_mel(fmin), hz_to_mel(fmax));
    let edges: Vec<f64> = (0..n_mels + 2)
        .map(|i| mel_to_hz(lo + (hi - lo) * i as f64 / (n_mels + 1) as f64))
        .collect();
    let bin_hz = sample_rate as f64 / n_fft as f64;
    let mut w = vec![0.0; n_mels * bins];
    for m in 0..n_mels {
        let (l, c, u) = (edges[m], edges[m + 1], edges[m + 2]);
        let norm = 2.0 / (u - l);
        for k in 0..bins {
            let f = k as f64 * bin_hz;
            let tri = ((f - l) / (c - l)).min((u - f) / (u - c));
            if tri > 0.0 {
                w[m * bins + k] = tri * norm;
            }
        }
        if w[m * bins..(m + 1) * bins].iter().all(|&v| v == 0.0) {
            return Err(DspError::Config(format!(
                "mel filter {m} ({l:.1}-{u:.1} Hz) covers no FFT bin; n_mels={n_mels} is too large for n_fft={n_fft}"
            )));
        }
    }
    Ok(MelBank {
        weights: Tensor::new(vec![n_mels, bins], w).expect("shape matches"),
        centers_hz: edges[1..=n_mels].to_vec(),
    })
}
