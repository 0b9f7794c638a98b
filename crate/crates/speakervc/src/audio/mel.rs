//! Log-mel spectrogram analysis. Two built-in parameterizations coexist:
//! `MelConfig::decoder()` (24 kHz, hop 240) feeds the decoders, and
//! `MelConfig::speaker()` (16 kHz, hop 160) feeds the speaker encoder; the
//! mel adaptor exists to translate between them.

use rustfft::{num_complex::Complex, FftPlanner};
use serde::{Deserialize, Serialize};

use super::Waveform;
use crate::error::{Error, Result};

/// Natural-log energy floor shared by the built-in parameterizations.
pub const LOG_FLOOR: f64 = -11.512925464970229; // ln(1e-5)

/// Mel analysis parameterization.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MelConfig {
    pub sample_rate_hz: u32,
    pub n_fft: usize,
    pub win_length: usize,
    pub hop_length: usize,
    pub n_mels: usize,
    pub fmin: f64,
    pub fmax: f64,
    pub log_floor: f64,
}

impl MelConfig {
    /// Decoder-side analysis: 24 kHz, 10 ms hop.
    pub fn decoder() -> Self {
        MelConfig {
            sample_rate_hz: 24000,
            n_fft: 1024,
            win_length: 1024,
            hop_length: 240,
            n_mels: 80,
            fmin: 0.0,
            fmax: 12000.0,
            log_floor: LOG_FLOOR,
        }
    }

    /// Speaker-encoder-side analysis: 16 kHz, 10 ms hop.
    pub fn speaker() -> Self {
        MelConfig {
            sample_rate_hz: 16000,
            n_fft: 512,
            win_length: 400,
            hop_length: 160,
            n_mels: 40,
            fmin: 20.0,
            fmax: 7600.0,
            log_floor: LOG_FLOOR,
        }
    }

    /// Content-frontend analysis: 24 kHz, 10 ms hop, 40 bands for cepstra.
    pub fn frontend() -> Self {
        MelConfig {
            sample_rate_hz: 24000,
            n_fft: 1024,
            win_length: 1024,
            hop_length: 240,
            n_mels: 40,
            fmin: 40.0,
            fmax: 11000.0,
            log_floor: LOG_FLOOR,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_mels < 1 {
            return Err(Error::Config("n_mels must be >= 1".into()));
        }
        if !(self.hop_length <= self.win_length && self.win_length <= self.n_fft) {
            return Err(Error::Config(format!(
                "need hop <= win <= n_fft, got {} / {} / {}",
                self.hop_length, self.win_length, self.n_fft
            )));
        }
        if self.hop_length == 0 {
            return Err(Error::Config("hop_length must be > 0".into()));
        }
        let nyquist = self.sample_rate_hz as f64 / 2.0;
        if !(0.0 <= self.fmin && self.fmin < self.fmax && self.fmax <= nyquist) {
            return Err(Error::Config(format!(
                "need 0 <= fmin < fmax <= {nyquist}, got {} / {}",
                self.fmin, self.fmax
            )));
        }
        Ok(())
    }

    /// Frames per second.
    pub fn frame_rate_hz(&self) -> f64 {
        self.sample_rate_hz as f64 / self.hop_length as f64
    }

    pub fn hop_seconds(&self) -> f64 {
        self.hop_length as f64 / self.sample_rate_hz as f64
    }

    /// Frame count for an `n`-sample signal under the center-padded
    /// convention: ceil(n / hop).
    pub fn frames_for_len(&self, n: usize) -> usize {
        n.div_ceil(self.hop_length)
    }
}

/// Log-mel frame matrix bound to the parameterization that produced it.
#[derive(Debug, Clone, PartialEq)]
pub struct MelSpectrogram {
    values: Vec<f32>, // row-major, frames x n_mels
    n_frames: usize,
    config: MelConfig,
}

impl MelSpectrogram {
    pub fn from_values(values: Vec<f32>, n_frames: usize, config: MelConfig) -> Result<Self> {
        if values.len() != n_frames * config.n_mels {
            return Err(Error::DimMismatch(format!(
                "mel values: expected {} x {}, got {} elements",
                n_frames,
                config.n_mels,
                values.len()
            )));
        }
        Ok(MelSpectrogram {
            values,
            n_frames,
            config,
        })
    }

    pub fn n_frames(&self) -> usize {
        self.n_frames
    }

    pub fn n_mels(&self) -> usize {
        self.config.n_mels
    }

    pub fn config(&self) -> &MelConfig {
        &self.config
    }

    pub fn frame(&self, t: usize) -> &[f32] {
        let m = self.config.n_mels;
        &self.values[t * m..(t + 1) * m]
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }

    /// Per-frame total linear energy (sum over bands of exp(value)).
    pub fn frame_energies(&self) -> Vec<f64> {
        (0..self.n_frames)
            .map(|t| self.frame(t).iter().map(|&v| (v as f64).exp()).sum())
            .collect()
    }

    /// Crop to frame range [start, end).
    pub fn slice_frames(&self, start: usize, end: usize) -> MelSpectrogram {
        let m = self.config.n_mels;
        let end = end.min(self.n_frames);
        let start = start.min(end);
        MelSpectrogram {
            values: self.values[start * m..end * m].to_vec(),
            n_frames: end - start,
            config: self.config.clone(),
        }
    }
}

/// Triangular mel filterbank (HTK mel scale, unit peak), with band edges
/// retained so callers can evaluate the continuous response of a band.
#[derive(Debug, Clone)]
pub struct MelFilterbank {
    weights: Vec<f64>, // n_mels x n_bins
    n_bins: usize,
    edges: Vec<(f64, f64, f64)>, // (f_lo, f_center, f_hi) per band, Hz
}

fn hz_to_mel(f: f64) -> f64 {
    2595.0 * (1.0 + f / 700.0).log10()
}

fn mel_to_hz(m: f64) -> f64 {
    700.0 * (10f64.powf(m / 2595.0) - 1.0)
}

impl MelFilterbank {
    pub fn new(cfg: &MelConfig) -> Self {
        let n_bins = cfg.n_fft / 2 + 1;
        let mel_lo = hz_to_mel(cfg.fmin);
        let mel_hi = hz_to_mel(cfg.fmax);
        let points: Vec<f64> = (0..cfg.n_mels + 2)
            .map(|i| mel_to_hz(mel_lo + (mel_hi - mel_lo) * i as f64 / (cfg.n_mels + 1) as f64))
            .collect();
        let bin_hz = cfg.sample_rate_hz as f64 / cfg.n_fft as f64;
        let mut weights = vec![0.0; cfg.n_mels * n_bins];
        let mut edges = Vec::with_capacity(cfg.n_mels);
        for j in 0..cfg.n_mels {
            let (lo, center, hi) = (points[j], points[j + 1], points[j + 2]);
            edges.push((lo, center, hi));
            for k in 0..n_bins {
                let f = k as f64 * bin_hz;
                weights[j * n_bins + k] = triangle(f, lo, center, hi);
            }
        }
        MelFilterbank {
            weights,
            n_bins,
            edges,
        }
    }

    pub fn n_bins(&self) -> usize {
        self.n_bins
    }

    pub fn band_weights(&self, j: usize) -> &[f64] {
        &self.weights[j * self.n_bins..(j + 1) * self.n_bins]
    }

    /// Center frequencies of all bands, Hz.
    pub fn center_frequencies(&self) -> Vec<f64> {
        self.edges.iter().map(|&(_, c, _)| c).collect()
    }

    /// Continuous response of band `j` at frequency `f` (unit peak).
    pub fn band_response(&self, j: usize, f: f64) -> f64 {
        let (lo, c, hi) = self.edges[j];
        triangle(f, lo, c, hi)
    }

    /// Apply to a power spectrum, yielding per-band linear energies.
    pub fn apply(&self, power: &[f64], out: &mut [f64]) {
        for (j, o) in out.iter_mut().enumerate() {
            let row = self.band_weights(j);
            *o = row.iter().zip(power).map(|(w, p)| w * p).sum();
        }
    }
}

fn triangle(f: f64, lo: f64, center: f64, hi: f64) -> f64 {
    if f <= lo || f >= hi {
        0.0
    } else if f <= center {
        (f - lo) / (center - lo)
    } else {
        (hi - f) / (hi - center)
    }
}

/// Mirror-reflect an index into [0, n) (no edge repetition).
pub(crate) fn reflect_index(i: isize, n: usize) -> usize {
    debug_assert!(n > 0);
    if n == 1 {
        return 0;
    }
    let period = 2 * (n as isize - 1);
    let mut j = i.rem_euclid(period);
    if j >= n as isize {
        j = period - j;
    }
    j as usize
}

/// Periodic Hann window of length `n`.
pub fn hann(n: usize) -> Vec<f64> {
    (0..n)
        .map(|i| 0.5 - 0.5 * (std::f64::consts::TAU * i as f64 / n as f64).cos())
        .collect()
}

/// Frame-wise STFT power spectra under the center-padded convention.
/// Returns (power, n_frames) with `n_frames = ceil(len / hop)` rows of
/// `n_fft/2 + 1` bins.
pub(crate) fn stft_power(wave: &[f32], cfg: &MelConfig) -> (Vec<f64>, usize) {
    let n = wave.len();
    let n_frames = cfg.frames_for_len(n);
    let n_bins = cfg.n_fft / 2 + 1;
    let window = hann(cfg.win_length);
    let offset = (cfg.n_fft - cfg.win_length) / 2;
    let half = (cfg.n_fft / 2) as isize;

    let mut planner = FftPlanner::<f64>::new();
    let fft = planner.plan_fft_forward(cfg.n_fft);
    let mut buf = vec![Complex::new(0.0, 0.0); cfg.n_fft];
    let mut power = vec![0.0f64; n_frames * n_bins];

    for t in 0..n_frames {
        buf.iter_mut().for_each(|c| *c = Complex::new(0.0, 0.0));
        let center = (t * cfg.hop_length) as isize;
        for i in 0..cfg.win_length {
            let src = center - half + (offset + i) as isize;
            let s = wave[reflect_index(src, n)] as f64;
            buf[offset + i] = Complex::new(s * window[i], 0.0);
        }
        fft.process(&mut buf);
        for k in 0..n_bins {
            power[t * n_bins + k] = buf[k].norm_sqr();
        }
    }
    (power, n_frames)
}

/// Compute the log-mel spectrogram of `wave` under `cfg`.
pub fn mel_spectrogram(wave: &Waveform, cfg: &MelConfig) -> Result<MelSpectrogram> {
    cfg.validate()?;
    if wave.sample_rate_hz() != cfg.sample_rate_hz {
        return Err(Error::SampleRateMismatch {
            expected: cfg.sample_rate_hz,
            got: wave.sample_rate_hz(),
        });
    }
    if wave.len() < cfg.hop_length {
        return Err(Error::TooShort {
            need_s: cfg.hop_length as f64 / cfg.sample_rate_hz as f64,
            got_s: wave.duration_s(),
        });
    }
    let fb = MelFilterbank::new(cfg);
    mel_from_power(wave.samples(), cfg, &fb)
}

pub(crate) fn mel_from_power(
    samples: &[f32],
    cfg: &MelConfig,
    fb: &MelFilterbank,
) -> Result<MelSpectrogram> {
    let (power, n_frames) = stft_power(samples, cfg);
    let n_bins = fb.n_bins();
    let mut values = vec![0.0f32; n_frames * cfg.n_mels];
    let mut band = vec![0.0f64; cfg.n_mels];
    for t in 0..n_frames {
        fb.apply(&power[t * n_bins..(t + 1) * n_bins], &mut band);
        for j in 0..cfg.n_mels {
            values[t * cfg.n_mels + j] = band[j].max(0.0).ln().max(cfg.log_floor) as f32;
        }
    }
    MelSpectrogram::from_values(values, n_frames, cfg.clone())
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::TAU;

    fn tone(freq: f64, sr: u32, n: usize) -> Waveform {
        let samples = (0..n)
            .map(|i| (0.5 * (TAU * freq * i as f64 / sr as f64).sin()) as f32)
            .collect();
        Waveform::new(samples, sr).unwrap()
    }

    #[test]
    fn one_second_at_hop_240_gives_100_frames() {
        let cfg = MelConfig::decoder();
        let w = tone(440.0, 24000, 24000);
        let m = mel_spectrogram(&w, &cfg).unwrap();
        assert_eq!(m.n_frames(), 100);
        assert_eq!(m.n_mels(), 80);
    }

    #[test]
    fn silence_is_all_floor() {
        let cfg = MelConfig::decoder();
        let w = Waveform::silence(24000, 24000);
        let m = mel_spectrogram(&w, &cfg).unwrap();
        assert!(m.values().iter().all(|&v| v == cfg.log_floor as f32));
    }

    #[test]
    fn tone_at_band_center_peaks_in_that_band() {
        let cfg = MelConfig::decoder();
        let fb = MelFilterbank::new(&cfg);
        let centers = fb.center_frequencies();
        for &j in &[10usize, 30, 55, 80 - 5] {
            let w = tone(centers[j], 24000, 24000);
            let m = mel_spectrogram(&w, &cfg).unwrap();
            let mid = m.frame(m.n_frames() / 2);
            let argmax = mid
                .iter()
                .enumerate()
                .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
                .unwrap()
                .0;
            assert_eq!(argmax, j, "band {j}, center {:.1} Hz", centers[j]);
        }
    }

    #[test]
    fn sample_rate_mismatch_errors() {
        let cfg = MelConfig::decoder();
        let w = tone(440.0, 16000, 16000);
        assert!(matches!(
            mel_spectrogram(&w, &cfg),
            Err(crate::error::Error::SampleRateMismatch { .. })
        ));
    }

    #[test]
    fn shorter_than_one_hop_errors() {
        let cfg = MelConfig::decoder();
        let w = Waveform::silence(cfg.hop_length - 1, 24000);
        assert!(matches!(
            mel_spectrogram(&w, &cfg),
            Err(crate::error::Error::TooShort { .. })
        ));
    }

    #[test]
    fn frame_count_formula_exhaustive_small_cases() {
        let cfg = MelConfig {
            sample_rate_hz: 800,
            n_fft: 64,
            win_length: 64,
            hop_length: 16,
            n_mels: 4,
            fmin: 0.0,
            fmax: 400.0,
            log_floor: LOG_FLOOR,
        };
        for n in cfg.hop_length..=10 * cfg.hop_length {
            let w = Waveform::silence(n, 800);
            let m = mel_spectrogram(&w, &cfg).unwrap();
            assert_eq!(m.n_frames(), n.div_ceil(16), "n = {n}");
        }
    }

    #[test]
    fn shift_by_whole_hops_shifts_frames() {
        let cfg = MelConfig::decoder();
        let n = 24000;
        // deterministic pseudo-random signal
        let mut state = 0x12345678u64;
        let samples: Vec<f32> = (0..n)
            .map(|_| {
                state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
                ((state >> 33) as f32 / (1u64 << 31) as f32) - 1.0
            })
            .map(|s| s * 0.5)
            .collect();
        let w = Waveform::new(samples.clone(), 24000).unwrap();
        let k = 3usize;
        let mut delayed = vec![0.0f32; k * cfg.hop_length];
        delayed.extend_from_slice(&samples);
        let wd = Waveform::new(delayed, 24000).unwrap();
        let m0 = mel_spectrogram(&w, &cfg).unwrap();
        let m1 = mel_spectrogram(&wd, &cfg).unwrap();
        // interior frames: windows that touch neither edge padding nor the
        // prepended zeros
        let guard = cfg.n_fft / cfg.hop_length + 2;
        for t in guard..(m0.n_frames() - guard) {
            let a = m0.frame(t);
            let b = m1.frame(t + k);
            for (x, y) in a.iter().zip(b) {
                assert!((x - y).abs() < 1e-6, "frame {t}: {x} vs {y}");
            }
        }
    }

    #[test]
    fn reflect_index_mirrors() {
        assert_eq!(reflect_index(-1, 5), 1);
        assert_eq!(reflect_index(-2, 5), 2);
        assert_eq!(reflect_index(5, 5), 3);
        assert_eq!(reflect_index(6, 5), 2);
        assert_eq!(reflect_index(0, 1), 0);
        assert_eq!(reflect_index(-7, 1), 0);
    }
}
