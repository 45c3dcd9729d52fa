use std::f64::consts::PI;

use super::{DspError, Result};

/// Zero crossings of the sinc kernel on each side of the center.
const HALF_TAPS: usize = 16;
const ROLLOFF: f64 = 0.95;

fn gcd(a: u32, b: u32) -> u32 {
    if b == 0 {
        a
    } else {
        gcd(b, a % b)
    }
}

fn sinc(x: f64) -> f64 {
    if x.abs() < 1e-12 {
        1.0
    } else {
        (PI * x).sin() / (PI * x)
    }
}

/// Rational polyphase resampler with a Hann-windowed sinc low-pass.
///
/// For conversion by `L/M` the filter has `L` phases; output sample `j`
/// uses phase `(j·M) mod L` centered on input sample `⌊j·M/L⌋`. Every phase
/// is normalized to unit DC gain. Output length is `⌈n·L/M⌉`.
pub fn resample(input: &[f32], from: u32, to: u32) -> Result<Vec<f32>> {
    if from == 0 || to == 0 {
        return Err(DspError::Config("sample rates must be positive".into()));
    }
    if from == to {
        return Ok(input.to_vec());
    }
    let g = gcd(from, to);
    let (up, down) = ((to / g) as usize, (from / g) as usize);
    // cutoff in cycles per input sample
    let cutoff = 0.5 * ROLLOFF * (up as f64 / down as f64).min(1.0);
    let reach = (HALF_TAPS as f64 / (2.0 * cutoff)).ceil() as isize;
    let width = (2 * reach + 1) as usize;

    let phases: Vec<Vec<f64>> = (0..up)
        .map(|p| {
            let frac = p as f64 / up as f64;
            let mut taps: Vec<f64> = (0..width)
                .map(|i| {
                    let tau = (i as isize - reach) as f64 - frac;
                    let w = 0.5 + 0.5 * (PI * tau / (reach as f64 + 1.0)).cos();
                    2.0 * cutoff * sinc(2.0 * cutoff * tau) * w
                })
                .collect();
            let s: f64 = taps.iter().sum();
            taps.iter_mut().for_each(|t| *t /= s);
            taps
        })
        .collect();

    let n_out = (input.len() * up).div_ceil(down);
    let mut out = Vec::with_capacity(n_out);
    for j in 0..n_out {
        let pos = j * down;
        let (base, phase) = ((pos / up) as isize, pos % up);
        let taps = &phases[phase];
        let mut acc = 0.0;
        for (i, &h) in taps.iter().enumerate() {
            let k = base + i as isize - reach;
            if k >= 0 && (k as usize) < input.len() {
                acc += h * input[k as usize] as f64;
            }
        }
        out.push(acc as f32);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_rate_is_passthrough() {
        let x = vec![0.1, 0.2, -0.3];
        assert_eq!(resample(&x, 24_000, 24_000).unwrap(), x);
    }

    #[test]
    fn upsampling_preserves_low_tone() {
        let n = 2400;
        let x: Vec<f32> = (0..n)
            .map(|i| (2.0 * PI * 500.0 * i as f64 / 16_000.0).sin() as f32 * 0.5)
            .collect();
        let y = resample(&x, 16_000, 24_000).unwrap();
        assert_eq!(y.len(), 3600);
        for (j, &v) in y.iter().enumerate().skip(200).take(3200) {
            let want = 0.5 * (2.0 * PI * 500.0 * j as f64 / 24_000.0).sin();
            assert!((v as f64 - want).abs() < 5e-3, "sample {j}: {v} vs {want}");
        }
    }
}
