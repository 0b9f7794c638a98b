//! Rational resampling between the two built-in rates (24 kHz and 16 kHz)
//! with a windowed-sinc polyphase filter. Other conversions are out of
//! scope.

use super::Waveform;
use crate::error::{Error, Result};

/// Resample between 24 kHz and 16 kHz (either direction). Returns the
/// input unchanged if the rate already matches.
pub fn resample(wave: &Waveform, target_hz: u32) -> Result<Waveform> {
    let src = wave.sample_rate_hz();
    if src == target_hz {
        return Ok(wave.clone());
    }
    let (l, m) = match (src, target_hz) {
        (24000, 16000) => (2usize, 3usize),
        (16000, 24000) => (3, 2),
        _ => {
            return Err(Error::UnsupportedFormat(format!(
                "resampling {src} Hz -> {target_hz} Hz is not supported"
            )))
        }
    };
    let taps = design_lowpass(l, m);
    let half = taps.len() / 2;
    let n_in = wave.len();
    let n_up = n_in * l;
    let n_out = n_up / m;
    let x = wave.samples();
    let mut out = Vec::with_capacity(n_out);
    for j in 0..n_out {
        let center = j * m; // position in upsampled grid
        let mut acc = 0.0f64;
        // only every l-th upsampled position is nonzero
        let lo = center.saturating_sub(half);
        let hi = (center + half).min(n_up.saturating_sub(1));
        let mut pos = lo.div_ceil(l) * l;
        while pos <= hi {
            let tap_idx = (center + half) - pos;
            if tap_idx < taps.len() {
                acc += x[pos / l] as f64 * taps[tap_idx];
            }
            pos += l;
        }
        out.push((acc * l as f64) as f32);
    }
    Waveform::new(out, target_hz)
}

/// Hann-windowed sinc lowpass with cutoff pi / max(L, M) in the upsampled
/// domain.
fn design_lowpass(l: usize, m: usize) -> Vec<f64> {
    let cutoff = 1.0 / l.max(m) as f64; // as a fraction of Nyquist
    let zeros = 16usize;
    let half = zeros * l.max(m);
    let n = 2 * half + 1;
    let mut taps = vec![0.0f64; n];
    for (i, t) in taps.iter_mut().enumerate() {
        let k = i as f64 - half as f64;
        let sinc = if k == 0.0 {
            cutoff
        } else {
            (std::f64::consts::PI * k * cutoff).sin() / (std::f64::consts::PI * k)
        };
        let w = 0.5 + 0.5 * (std::f64::consts::PI * k / half as f64).cos();
        *t = sinc * w;
    }
    taps
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::TAU;

    fn tone(freq: f64, sr: u32, seconds: f64) -> Waveform {
        let n = (seconds * sr as f64) as usize;
        Waveform::new(
            (0..n)
                .map(|i| (0.5 * (TAU * freq * i as f64 / sr as f64).sin()) as f32)
                .collect(),
            sr,
        )
        .unwrap()
    }

    fn dominant_freq(w: &Waveform) -> f64 {
        use rustfft::{num_complex::Complex, FftPlanner};
        let n = 4096.min(w.len());
        let mut planner = FftPlanner::<f64>::new();
        let fft = planner.plan_fft_forward(n);
        let start = w.len() / 2 - n / 2;
        let mut buf: Vec<Complex<f64>> = w.samples()[start..start + n]
            .iter()
            .map(|&s| Complex::new(s as f64, 0.0))
            .collect();
        fft.process(&mut buf);
        let k = (1..n / 2)
            .max_by(|&a, &b| buf[a].norm().partial_cmp(&buf[b].norm()).unwrap())
            .unwrap();
        k as f64 * w.sample_rate_hz() as f64 / n as f64
    }

    #[test]
    fn tone_survives_downsampling() {
        let w = tone(1000.0, 24000, 1.0);
        let r = resample(&w, 16000).unwrap();
        assert_eq!(r.sample_rate_hz(), 16000);
        assert_eq!(r.len(), 16000);
        let f = dominant_freq(&r);
        assert!((f - 1000.0).abs() < 10.0, "dominant = {f}");
    }

    #[test]
    fn tone_survives_upsampling() {
        let w = tone(2000.0, 16000, 1.0);
        let r = resample(&w, 24000).unwrap();
        assert_eq!(r.len(), 24000);
        let f = dominant_freq(&r);
        assert!((f - 2000.0).abs() < 10.0, "dominant = {f}");
    }

    #[test]
    fn unsupported_pair_errors() {
        let w = tone(440.0, 22050, 0.1);
        assert!(resample(&w, 16000).is_err());
    }
}
