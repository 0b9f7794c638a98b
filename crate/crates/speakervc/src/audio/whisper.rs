//! Whisperization: replace periodic excitation with noise while keeping
//! the spectral envelope. Frame-wise LPC (order 16) envelope extraction,
//! resynthesis with energy-matched white-noise excitation, Hann
//! overlap-add at 50%.

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::mel::hann;
use super::Waveform;
use crate::error::{Error, Result};

const LPC_ORDER: usize = 16;
/// Pole bandwidth expansion: a_k <- GAMMA^k a_k. Widens resonances enough
/// that noise excitation carries no pitch-band autocorrelation.
const GAMMA: f64 = 0.93;
/// Gaussian lag-window width (Hz). Blurs harmonic fine structure out of
/// the autocorrelation so the LPC fits the envelope, not pitch lines.
const LAG_WINDOW_HZ: f64 = 130.0;

/// Convert to whispered speech of the same length and sample rate.
pub fn whisperize(wave: &Waveform) -> Result<Waveform> {
    if wave.is_empty() {
        return Err(Error::EmptyAudio);
    }
    let sr = wave.sample_rate_hz();
    let n = wave.len();
    let frame = ((sr as usize) / 40).max(64) & !1; // 25 ms, even
    let hop = frame / 2;
    let window = hann(frame);
    let n_frames = n.div_ceil(hop);

    let mut out = vec![0.0f64; n + frame];
    let mut rng = ChaCha8Rng::seed_from_u64(0x77_68_69_73_70); // fixed: pure function

    let mut x = vec![0.0f64; frame];
    let mut noise = vec![0.0f64; frame];
    let mut synth = vec![0.0f64; frame];
    for t in 0..n_frames {
        let start = t * hop;
        for i in 0..frame {
            x[i] = if start + i < n { wave.samples()[start + i] as f64 } else { 0.0 };
        }
        let energy: f64 = x.iter().map(|v| v * v).sum();
        // draw noise unconditionally so output is independent of content
        for v in noise.iter_mut() {
            *v = rng.random_range(-1.0..1.0);
        }
        if energy <= 1e-12 {
            continue; // silence stays silence
        }
        // autocorrelation of the windowed frame
        let mut xw = vec![0.0f64; frame];
        for i in 0..frame {
            xw[i] = x[i] * window[i];
        }
        let mut r = [0.0f64; LPC_ORDER + 1];
        for (k, rk) in r.iter_mut().enumerate() {
            *rk = (0..frame - k).map(|i| xw[i] * xw[i + k]).sum();
        }
        if r[0] <= 0.0 {
            continue;
        }
        // lag window plus white-noise correction
        let lw = std::f64::consts::TAU * LAG_WINDOW_HZ / sr as f64;
        for (k, rk) in r.iter_mut().enumerate().skip(1) {
            *rk *= (-0.5 * (lw * k as f64).powi(2)).exp();
        }
        r[0] *= 1.0001;
        let a = levinson(&r);
        // bandwidth expansion
        let mut ae = [0.0f64; LPC_ORDER];
        let mut g = GAMMA;
        for k in 0..LPC_ORDER {
            ae[k] = a[k] * g;
            g *= GAMMA;
        }
        // all-pole resynthesis from noise: y[n] = e[n] + sum_k a_k y[n-k]
        for i in 0..frame {
            let mut y = noise[i];
            for (k, &c) in ae.iter().enumerate() {
                if i > k {
                    y += c * synth[i - k - 1];
                }
            }
            synth[i] = y;
        }
        let e_out: f64 = synth.iter().map(|v| v * v).sum();
        if e_out <= 0.0 {
            continue;
        }
        let scale = (energy / e_out).sqrt();
        for i in 0..frame {
            out[start + i] += synth[i] * scale * window[i];
        }
    }

    let samples: Vec<f32> = out[..n].iter().map(|&v| v as f32).collect();
    Waveform::new(samples, sr)
}

/// Levinson-Durbin recursion; returns LPC coefficients a[1..=order] such
/// that the prediction is sum_k a_k x[n-k].
fn levinson(r: &[f64; LPC_ORDER + 1]) -> [f64; LPC_ORDER] {
    let mut a = [0.0f64; LPC_ORDER];
    let mut err = r[0];
    for i in 0..LPC_ORDER {
        let mut acc = r[i + 1];
        for j in 0..i {
            acc -= a[j] * r[i - j];
        }
        if err.abs() < 1e-20 {
            break;
        }
        let k = acc / err;
        let mut new_a = a;
        new_a[i] = k;
        for j in 0..i {
            new_a[j] = a[j] - k * a[i - 1 - j];
        }
        a = new_a;
        err *= 1.0 - k * k;
        if err <= 0.0 {
            break;
        }
    }
    a
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::audio::voicing::voicing_score;
    use crate::testsig::voiced_vowel;

    #[test]
    fn removes_voicing_from_synthetic_vowel() {
        let w = voiced_vowel(120.0, 1.2, 24000, 1);
        assert!(voicing_score(&w) > 0.5, "fixture must be voiced");
        let wh = whisperize(&w).unwrap();
        assert_eq!(wh.len(), w.len());
        assert_eq!(wh.sample_rate_hz(), w.sample_rate_hz());
        let score = voicing_score(&wh);
        assert!(score < 0.3, "whisper voicing score = {score}");
    }

    #[test]
    fn silence_stays_silent() {
        let w = Waveform::silence(24000, 24000);
        let wh = whisperize(&w).unwrap();
        let peak = wh.samples().iter().fold(0.0f32, |m, &s| m.max(s.abs()));
        assert!(peak < 1e-4, "peak = {peak}"); // below -80 dBFS
    }

    #[test]
    fn idempotent_under_the_voicing_oracle() {
        let w = voiced_vowel(150.0, 1.0, 24000, 2);
        let w1 = whisperize(&w).unwrap();
        let w2 = whisperize(&w1).unwrap();
        assert!(voicing_score(&w2) < 0.3);
        assert_eq!(w2.len(), w.len());
    }

    #[test]
    fn empty_input_errors() {
        let w = Waveform::silence(0, 24000);
        assert!(matches!(whisperize(&w), Err(Error::EmptyAudio)));
    }

    #[test]
    fn preserves_spectral_envelope() {
        let w = voiced_vowel(110.0, 1.0, 24000, 3);
        let wh = whisperize(&w).unwrap();
        let corr = crate::testsig::envelope_correlation(&w, &wh);
        assert!(corr >= 0.8, "envelope correlation = {corr}");
    }
}
