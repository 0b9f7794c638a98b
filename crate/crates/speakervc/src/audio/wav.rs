//! Minimal RIFF/WAVE codec. Only 16-bit PCM mono little-endian files are
//! accepted; everything else is an unsupported-format error.

use std::fs;
use std::path::Path;

use super::Waveform;
use crate::error::{Error, Result};

const PCM_SCALE: f32 = 32767.0;

/// Load a 16-bit PCM mono WAV file.
pub fn load_wav(path: impl AsRef<Path>) -> Result<Waveform> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_wav(&bytes)
}

/// Save as 16-bit PCM mono WAV. Samples are clipped to [-1, 1] before
/// quantization.
pub fn save_wav(path: impl AsRef<Path>, wave: &Waveform) -> Result<()> {
    let path = path.as_ref();
    if wave.is_empty() {
        return Err(Error::EmptyAudio);
    }
    let bytes = encode_wav(wave);
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

fn encode_wav(wave: &Waveform) -> Vec<u8> {
    let n = wave.len();
    let data_len = (n * 2) as u32;
    let mut out = Vec::with_capacity(44 + n * 2);
    out.extend_from_slice(b"RIFF");
    out.extend_from_slice(&(36 + data_len).to_le_bytes());
    out.extend_from_slice(b"WAVE");
    out.extend_from_slice(b"fmt ");
    out.extend_from_slice(&16u32.to_le_bytes());
    out.extend_from_slice(&1u16.to_le_bytes()); // PCM
    out.extend_from_slice(&1u16.to_le_bytes()); // mono
    out.extend_from_slice(&wave.sample_rate_hz().to_le_bytes());
    out.extend_from_slice(&(wave.sample_rate_hz() * 2).to_le_bytes()); // byte rate
    out.extend_from_slice(&2u16.to_le_bytes()); // block align
    out.extend_from_slice(&16u16.to_le_bytes()); // bits per sample
    out.extend_from_slice(b"data");
    out.extend_from_slice(&data_len.to_le_bytes());
    for &s in wave.samples() {
        let q = (s.clamp(-1.0, 1.0) * PCM_SCALE).round() as i16;
        out.extend_from_slice(&q.to_le_bytes());
    }
    out
}

fn decode_wav(bytes: &[u8]) -> Result<Waveform> {
    if bytes.len() < 12 || &bytes[0..4] != b"RIFF" || &bytes[8..12] != b"WAVE" {
        return Err(Error::UnsupportedFormat("not a RIFF/WAVE file".into()));
    }
    let mut pos = 12;
    let mut fmt: Option<(u16, u16, u32, u16)> = None;
    let mut data: Option<&[u8]> = None;
    while pos + 8 <= bytes.len() {
        let id = &bytes[pos..pos + 4];
        let size = u32::from_le_bytes(bytes[pos + 4..pos + 8].try_into().unwrap()) as usize;
        let body_end = (pos + 8 + size).min(bytes.len());
        let body = &bytes[pos + 8..body_end];
        match id {
            b"fmt " => {
                if body.len() < 16 {
                    return Err(Error::UnsupportedFormat("truncated fmt chunk".into()));
                }
                let audio_format = u16::from_le_bytes(body[0..2].try_into().unwrap());
                let channels = u16::from_le_bytes(body[2..4].try_into().unwrap());
                let sample_rate = u32::from_le_bytes(body[4..8].try_into().unwrap());
                let bits = u16::from_le_bytes(body[14..16].try_into().unwrap());
                fmt = Some((audio_format, channels, sample_rate, bits));
            }
            b"data" => data = Some(body),
            _ => {}
        }
        // chunks are word-aligned
        pos = pos + 8 + size + (size & 1);
    }
    let (audio_format, channels, sample_rate, bits) =
        fmt.ok_or_else(|| Error::UnsupportedFormat("missing fmt chunk".into()))?;
    if audio_format != 1 {
        return Err(Error::UnsupportedFormat(format!(
            "unsupported format: audio format {audio_format}, expected PCM"
        )));
    }
    if channels != 1 {
        return Err(Error::UnsupportedFormat(format!(
            "unsupported format: {channels} channels, expected mono"
        )));
    }
    if bits != 16 {
        return Err(Error::UnsupportedFormat(format!(
            "unsupported format: {bits}-bit samples, expected 16"
        )));
    }
    let data = data.ok_or_else(|| Error::UnsupportedFormat("missing data chunk".into()))?;
    if data.is_empty() {
        return Err(Error::EmptyAudio);
    }
    let samples: Vec<f32> = data
        .chunks_exact(2)
        .map(|b| i16::from_le_bytes([b[0], b[1]]) as f32 / PCM_SCALE)
        .collect();
    Waveform::new(samples, sample_rate)
}
