//! Energy-based SNR estimation for training-data filtering. Frames are
//! 25 ms; speech frames sit above the 60th energy percentile, noise frames
//! below the 20th. A speech/noise ratio gate declares "no speech" for
//! stationary signals.

use super::Waveform;
use crate::error::{Error, Result};

pub const SNR_FLOOR_DB: f64 = -20.0;
pub const SNR_CEIL_DB: f64 = 60.0;

/// Minimum mean-power ratio between speech and noise frames for the
/// detector to accept that speech is present at all.
const ACTIVITY_RATIO: f64 = 4.0;

/// Estimate the signal-to-noise ratio in dB, clamped to [-20, 60].
pub fn estimate_snr(wave: &Waveform) -> Result<f64> {
    wave.require_duration(0.5)?;
    let frame = (wave.sample_rate_hz() as usize) / 40; // 25 ms
    let powers: Vec<f64> = wave
        .samples()
        .chunks(frame)
        .filter(|c| c.len() == frame)
        .map(|c| c.iter().map(|&s| (s as f64) * (s as f64)).sum::<f64>() / frame as f64)
        .collect();
    if powers.len() < 5 {
        return Err(Error::TooShort {
            need_s: 0.5,
            got_s: wave.duration_s(),
        });
    }
    let mut sorted = powers.clone();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let pct = |p: f64| -> f64 {
        let idx = ((p / 100.0) * (sorted.len() - 1) as f64).round() as usize;
        sorted[idx]
    };
    let p60 = pct(60.0);
    let p20 = pct(20.0);
    let speech: Vec<f64> = powers.iter().copied().filter(|&p| p >= p60).collect();
    let noise: Vec<f64> = powers.iter().copied().filter(|&p| p <= p20).collect();
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len().max(1) as f64;
    let p_speech_raw = mean(&speech);
    let p_noise = mean(&noise);

    if p_speech_raw <= 1e-12 {
        return Ok(SNR_FLOOR_DB); // all silent
    }
    if p_noise <= 1e-12 {
        return Ok(SNR_CEIL_DB); // clean signal against digital silence
    }
    if p_speech_raw / p_noise < ACTIVITY_RATIO {
        return Ok(SNR_FLOOR_DB); // stationary: no detectable speech activity
    }
    let p_signal = (p_speech_raw - p_noise).max(1e-12);
    Ok((10.0 * (p_signal / p_noise).log10()).clamp(SNR_FLOOR_DB, SNR_CEIL_DB))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::testsig::{voiced_vowel, white_noise};

    /// Speech-band tone bursts at `ratio` times the power of a continuous
    /// noise floor.
    fn burst_mixture(ratio: f64, seconds: f64, sr: u32) -> Waveform {
        let noise = white_noise(1.0, seconds, sr, 11);
        let noise_power: f64 = noise
            .samples()
            .iter()
            .map(|&s| (s as f64) * (s as f64))
            .sum::<f64>()
            / noise.len() as f64;
        let tone_amp = (2.0 * ratio * noise_power).sqrt(); // sine power = a^2/2
        let n = noise.len();
        let mut samples: Vec<f32> = noise.samples().to_vec();
        // 200 ms on / 200 ms off bursts
        let burst = (0.2 * sr as f64) as usize;
        let mut i = 0;
        let mut on = true;
        let mut k = 0usize;
        while i < n {
            if on {
                let s = (std::f64::consts::TAU * 1000.0 * k as f64 / sr as f64).sin() * tone_amp;
                samples[i] += s as f32;
                k += 1;
            }
            i += 1;
            if i % burst == 0 {
                on = !on;
                k = 0;
            }
        }
        Waveform::new(samples, sr).unwrap()
    }

    #[test]
    fn recovers_constructed_mixture_snr() {
        let w = burst_mixture(10.0, 2.0, 24000);
        let snr = estimate_snr(&w).unwrap();
        assert!((snr - 10.0).abs() <= 1.0, "snr = {snr}");
    }

    #[test]
    fn clean_vowel_hits_the_ceiling() {
        let w = voiced_vowel(130.0, 1.5, 24000, 5);
        assert_eq!(estimate_snr(&w).unwrap(), SNR_CEIL_DB);
    }

    #[test]
    fn stationary_noise_hits_the_floor() {
        let w = white_noise(0.3, 1.5, 24000, 6);
        assert_eq!(estimate_snr(&w).unwrap(), SNR_FLOOR_DB);
    }

    #[test]
    fn all_silent_hits_the_floor() {
        let w = Waveform::silence(24000, 24000);
        assert_eq!(estimate_snr(&w).unwrap(), SNR_FLOOR_DB);
    }

    #[test]
    fn too_short_errors() {
        let w = Waveform::silence(2000, 24000);
        assert!(matches!(estimate_snr(&w), Err(Error::TooShort { .. })));
    }
}
