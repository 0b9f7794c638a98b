//! Waveform I/O and signal analysis: WAV codec, mel spectrograms under
//! multiple parameterizations, whisperization, SNR estimation and
//! mel-to-waveform inversion.

mod invert;
mod lpc;
mod mel;
mod resample;
mod snr;
mod voicing;
mod wav;
mod whisper;

pub use invert::invert_mel;
pub use mel::{hann as hann_window, mel_spectrogram, MelConfig, MelFilterbank, MelSpectrogram};
pub use resample::resample;
pub use snr::estimate_snr;
pub use voicing::{analyze_voicing, voiced_fraction, voicing_score, VoicingAnalysis};
pub use wav::{load_wav, save_wav};
pub use whisper::whisperize;

use crate::error::{Error, Result};

/// Mono PCM audio with its sample rate. The universal I/O currency of the
/// pipeline; samples are nominally in [-1, 1].
#[derive(Debug, Clone, PartialEq)]
pub struct Waveform {
    samples: Vec<f32>,
    sample_rate_hz: u32,
}

impl Waveform {
    pub fn new(samples: Vec<f32>, sample_rate_hz: u32) -> Result<Self> {
        if sample_rate_hz == 0 {
            return Err(Error::InvalidArgument("sample rate must be > 0".into()));
        }
        if samples.iter().any(|s| !s.is_finite()) {
            return Err(Error::InvalidArgument(
                "waveform contains non-finite samples".into(),
            ));
        }
        Ok(Waveform {
            samples,
            sample_rate_hz,
        })
    }

    /// All-zero waveform of `n` samples.
    pub fn silence(n: usize, sample_rate_hz: u32) -> Self {
        Waveform {
            samples: vec![0.0; n],
            sample_rate_hz,
        }
    }

    pub fn samples(&self) -> &[f32] {
        &self.samples
    }

    pub fn sample_rate_hz(&self) -> u32 {
        self.sample_rate_hz
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn duration_s(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate_hz as f64
    }

    /// Sub-waveform covering `range` (clamped to the signal length).
    pub fn slice(&self, start: usize, end: usize) -> Waveform {
        let end = end.min(self.samples.len());
        let start = start.min(end);
        Waveform {
            samples: self.samples[start..end].to_vec(),
            sample_rate_hz: self.sample_rate_hz,
        }
    }

    pub fn rms(&self) -> f64 {
        if self.samples.is_empty() {
            return 0.0;
        }
        let e: f64 = self.samples.iter().map(|&s| (s as f64) * (s as f64)).sum();
        (e / self.samples.len() as f64).sqrt()
    }

    pub(crate) fn require_duration(&self, need_s: f64) -> Result<()> {
        if self.duration_s() < need_s {
            return Err(Error::TooShort {
                need_s,
                got_s: self.duration_s(),
            });
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_non_finite_samples() {
        assert!(Waveform::new(vec![0.0, f32::NAN], 16000).is_err());
        assert!(Waveform::new(vec![0.0, 0.5], 0).is_err());
    }

    #[test]
    fn duration_follows_length() {
        let w = Waveform::silence(24000, 24000);
        assert!((w.duration_s() - 1.0).abs() < 1e-12);
    }
}
