use std::path::Path;

use super::{resample, AudioClip, DspError, Result};

const PCM: u16 = 1;

/// Parses a PCM 16-bit mono RIFF/WAVE byte buffer.
pub fn decode_wav(bytes: &[u8]) -> Result<AudioClip> {
    if bytes.len() < 12 {
        return Err(DspError::parse(
            "RIFF",
            format!("header needs 12 bytes, file has {}", bytes.len()),
        ));
    }
    if &bytes[0..4] != b"RIFF" {
        return Err(DspError::parse("RIFF", "missing RIFF magic"));
    }
    if &bytes[8..12] != b"WAVE" {
        return Err(DspError::parse("RIFF", "form type is not WAVE"));
    }
    let mut pos = 12;
    let mut format: Option<(u16, u16, u32, u16)> = None;
    while pos + 8 <= bytes.len() {
        let id = &bytes[pos..pos + 4];
        let name = String::from_utf8_lossy(id).into_owned();
        let size = u32::from_le_bytes(bytes[pos + 4..pos + 8].try_into().unwrap()) as usize;
        let body_start = pos + 8;
        match id {
            b"fmt " => {
                if size < 16 || body_start + 16 > bytes.len() {
                    return Err(DspError::parse(
                        "fmt ",
                        format!("chunk of {size} bytes is truncated"),
                    ));
                }
                let b = &bytes[body_start..];
                let audio_format = u16::from_le_bytes([b[0], b[1]]);
                let channels = u16::from_le_bytes([b[2], b[3]]);
                let rate = u32::from_le_bytes([b[4], b[5], b[6], b[7]]);
                let bits = u16::from_le_bytes([b[14], b[15]]);
                format = Some((audio_format, channels, rate, bits));
            }
            b"data" => {
                let (audio_format, channels, rate, bits) =
                    format.ok_or_else(|| DspError::parse("data", "data chunk before fmt chunk"))?;
                if audio_format != PCM {
                    return Err(DspError::parse(
                        "fmt ",
                        format!("unsupported encoding {audio_format}, need PCM (1)"),
                    ));
                }
                if channels != 1 {
                    return Err(DspError::parse(
                        "fmt ",
                        format!("{channels} channels, need mono"),
                    ));
                }
                if bits != 16 {
                    return Err(DspError::parse(
                        "fmt ",
                        format!("{bits}-bit samples, need 16-bit"),
                    ));
                }
                if body_start + size > bytes.len() {
                    return Err(DspError::parse(
                        "data",
                        format!(
                            "declares {size} bytes but only {} remain",
                            bytes.len() - body_start
                        ),
                    ));
                }
                if !size.is_multiple_of(2) {
                    return Err(DspError::parse("data", "odd byte count for 16-bit samples"));
                }
                let samples = bytes[body_start..body_start + size]
                    .chunks_exact(2)
                    .map(|c| i16::from_le_bytes([c[0], c[1]]) as f32 / 32768.0)
                    .collect();
                return AudioClip::new(samples, rate);
            }
            _ => {}
        }
        if body_start + size > bytes.len() {
            return Err(DspError::parse(&name, "chunk extends past end of file"));
        }
        pos = body_start + size + (size & 1);
    }
    Err(DspError::parse("data", "no data chunk found"))
}

/// Encodes a clip as PCM 16-bit mono WAV. Samples are clamped to `[-1, 1)`.
pub fn encode_wav(clip: &AudioClip) -> Vec<u8> {
    let data_len = clip.samples.len() * 2;
    let mut out = Vec::with_capacity(44 + data_len);
    out.extend_from_slice(b"RIFF");
    out.extend_from_slice(&((36 + data_len) as u32).to_le_bytes());
    out.extend_from_slice(b"WAVE");
    out.extend_from_slice(b"fmt ");
    out.extend_from_slice(&16u32.to_le_bytes());
    out.extend_from_slice(&PCM.to_le_bytes());
    out.extend_from_slice(&1u16.to_le_bytes());
    out.extend_from_slice(&clip.sample_rate.to_le_bytes());
    out.extend_from_slice(&(clip.sample_rate * 2).to_le_bytes());
    out.extend_from_slice(&2u16.to_le_bytes());
    out.extend_from_slice(&16u16.to_le_bytes());
    out.extend_from_slice(b"data");
    out.extend_from_slice(&(data_len as u32).to_le_bytes());
    for &s in &clip.samples {
        let q = (s as f64 * 32768.0).round().clamp(-32768.0, 32767.0) as i16;
        out.extend_from_slice(&q.to_le_bytes());
    }
    out
}

/// Reads a WAV file; when `target_rate` is given and differs from the file's
/// rate, the audio is resampled.
pub fn read_wav(path: impl AsRef<Path>, target_rate: Option<u32>) -> Result<AudioClip> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| DspError::io(path, e))?;
    let clip = decode_wav(&bytes)?;
    match target_rate {
        Some(rate) if rate != clip.sample_rate => {
            let samples = resample(&clip.samples, clip.sample_rate, rate)?;
            AudioClip::new(samples, rate)
        }
        _ => Ok(clip),
    }
}

pub fn write_wav(path: impl AsRef<Path>, clip: &AudioClip) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, encode_wav(clip)).map_err(|e| DspError::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn truncated_file_is_a_parse_error() {
        let clip = AudioClip::new(vec![0.25; 100], 24_000).unwrap();
        let bytes = encode_wav(&clip);
        for cut in [0, 5, 11, 30, 50, bytes.len() - 1] {
            let err = decode_wav(&bytes[..cut]).unwrap_err();
            assert!(matches!(err, DspError::Parse { .. }), "cut {cut}: {err}");
        }
    }

    #[test]
    fn stereo_is_rejected_naming_fmt_chunk() {
        let clip = AudioClip::new(vec![0.0; 4], 24_000).unwrap();
        let mut bytes = encode_wav(&clip);
        bytes[22] = 2;
        match decode_wav(&bytes) {
            Err(DspError::Parse { chunk, .. }) => assert_eq!(chunk, "fmt "),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn unknown_chunks_are_skipped() {
        let clip = AudioClip::new(vec![0.5, -0.5, 0.0], 16_000).unwrap();
        let plain = encode_wav(&clip);
        let mut bytes = plain[..36].to_vec();
        bytes.extend_from_slice(b"LIST");
        bytes.extend_from_slice(&3u32.to_le_bytes());
        bytes.extend_from_slice(&[1, 2, 3, 0]);
        bytes.extend_from_slice(&plain[36..]);
        assert_eq!(decode_wav(&bytes).unwrap(), clip);
    }
}
