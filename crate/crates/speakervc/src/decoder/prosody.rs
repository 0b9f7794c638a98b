//! Prosody targets: per-frame log-f0 (0 sentinel on unvoiced frames) and
//! log energy, aligned to the decoder mel grid, plus the harmonic
//! template used to inject pitch into the decoder.

use crate::audio::{analyze_voicing, mel_spectrogram, MelConfig, MelFilterbank, Waveform};
use crate::error::Result;
use crate::nn::Mat;

/// Frames with a smoothed voicing peak below this carry the unvoiced
/// sentinel.
pub const VOICED_THRESHOLD: f64 = 0.3;

/// Per-frame pitch and energy supervision.
#[derive(Debug, Clone)]
pub struct ProsodyTargets {
    /// ln(f0) per frame; exactly 0.0 on unvoiced frames.
    pub pitch: Vec<f32>,
    /// ln(total mel energy) per frame.
    pub energy: Vec<f32>,
}

impl ProsodyTargets {
    pub fn len(&self) -> usize {
        self.pitch.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pitch.is_empty()
    }

    pub fn slice(&self, start: usize, end: usize) -> ProsodyTargets {
        ProsodyTargets {
            pitch: self.pitch[start..end].to_vec(),
            energy: self.energy[start..end].to_vec(),
        }
    }

    pub fn voiced_fraction(&self) -> f64 {
        if self.pitch.is_empty() {
            return 0.0;
        }
        self.pitch.iter().filter(|&&p| p > 0.0).count() as f64 / self.pitch.len() as f64
    }
}

/// Extract pitch (autocorrelation tracker, 60-400 Hz band) and energy
/// (mel frame sums) aligned to `cfg`'s frame grid.
pub fn extract_prosody_targets(wave: &Waveform, cfg: &MelConfig) -> Result<ProsodyTargets> {
    let mel = mel_spectrogram(wave, cfg)?;
    let n_frames = mel.n_frames();
    let va = analyze_voicing(wave, cfg.hop_length);
    let mut pitch = vec![0.0f32; n_frames];
    for t in 0..n_frames {
        if t < va.smoothed_peaks.len()
            && va.active[t]
            && va.smoothed_peaks[t] >= VOICED_THRESHOLD
            && va.f0_hz[t] > 0.0
        {
            pitch[t] = (va.f0_hz[t].ln()) as f32;
        }
    }
    let energy: Vec<f32> = mel
        .frame_energies()
        .iter()
        .map(|&e| (e.max(1e-12)).ln() as f32)
        .collect();
    Ok(ProsodyTargets { pitch, energy })
}

/// Mel-band response to a unit-amplitude harmonic comb at `f0_hz`,
/// normalized to peak 1. Gives the decoder an explicit pitch-to-spectrum
/// prior so voicing survives inversion.
pub fn harmonic_template(f0_hz: f64, fb: &MelFilterbank, cfg: &MelConfig, out: &mut [f32]) {
    out.iter_mut().for_each(|v| *v = 0.0);
    if f0_hz < 20.0 {
        return;
    }
    let mut h = f0_hz;
    while h < cfg.fmax {
        for (j, o) in out.iter_mut().enumerate() {
            *o += fb.band_response(j, h) as f32;
        }
        h += f0_hz;
    }
    let peak = out.iter().cloned().fold(0.0f32, f32::max);
    if peak > 0.0 {
        out.iter_mut().for_each(|v| *v /= peak);
    }
}

/// Assemble the decoder's prosody feature rows: [pitch_norm, voiced flag,
/// energy_norm, harmonic template].
pub fn prosody_features(
    pitch: &[f32],
    energy: &[f32],
    fb: &MelFilterbank,
    cfg: &MelConfig,
) -> Mat {
    let t_len = pitch.len();
    let dim = 3 + cfg.n_mels;
    let mut out = Mat::zeros(t_len, dim);
    let mut template = vec![0.0f32; cfg.n_mels];
    for t in 0..t_len {
        let row = out.row_mut(t);
        let voiced = pitch[t] > 0.0;
        row[0] = if voiced { (pitch[t] - 5.0) * 2.0 } else { 0.0 };
        row[1] = if voiced { 1.0 } else { 0.0 };
        row[2] = (energy[t] + 1.0) * 0.25;
        if voiced {
            harmonic_template(pitch[t].exp() as f64, fb, cfg, &mut template);
            row[3..].copy_from_slice(&template);
        }
    }
    out
}
