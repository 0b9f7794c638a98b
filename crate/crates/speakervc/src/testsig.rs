//! Synthetic test signals and measurement helpers shared by the unit
//! tests, the acceptance suite and the runnable examples. Kept separate
//! from the corpus generator so fixtures stay independent of the code
//! they exercise.

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rustfft::{num_complex::Complex, FftPlanner};

use crate::audio::Waveform;

/// Two-pole resonator (formant filter).
struct Resonator {
    b1: f64,
    b2: f64,
    gain: f64,
    y1: f64,
    y2: f64,
}

impl Resonator {
    fn new(freq_hz: f64, bandwidth_hz: f64, sr: f64) -> Self {
        let r = (-std::f64::consts::PI * bandwidth_hz / sr).exp();
        let theta = std::f64::consts::TAU * freq_hz / sr;
        let b1 = 2.0 * r * theta.cos();
        let b2 = -r * r;
        let gain = (1.0 - r) * (1.0 - 2.0 * r * (2.0 * theta).cos() + r * r).sqrt();
        Resonator {
            b1,
            b2,
            gain,
            y1: 0.0,
            y2: 0.0,
        }
    }

    fn step(&mut self, x: f64) -> f64 {
        let y = self.gain * x + self.b1 * self.y1 + self.b2 * self.y2;
        self.y2 = self.y1;
        self.y1 = y;
        y
    }
}

/// Pulse-train-excited formant filter: a steady voiced vowel with 60 ms of
/// leading/trailing silence. `seed` varies the formant set slightly.
pub fn voiced_vowel(f0_hz: f64, seconds: f64, sr: u32, seed: u64) -> Waveform {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let formants = [
        700.0 + rng.random_range(-60.0..60.0),
        1220.0 + rng.random_range(-80.0..80.0),
        2600.0 + rng.random_range(-100.0..100.0),
        3400.0 + rng.random_range(-100.0..100.0),
    ];
    let bandwidths = [90.0, 110.0, 160.0, 200.0];
    vowel_with_formants(f0_hz, &formants, &bandwidths, seconds, sr)
}

/// Voiced vowel with explicit formants; silence padding at the edges.
pub fn vowel_with_formants(
    f0_hz: f64,
    formants: &[f64],
    bandwidths: &[f64],
    seconds: f64,
    sr: u32,
) -> Waveform {
    let srf = sr as f64;
    let n = (seconds * srf) as usize;
    // generous silence padding so energy-percentile detectors see noise frames
    let pad = (0.15 * seconds * srf) as usize;
    let voiced_len = n.saturating_sub(2 * pad);
    let mut filters: Vec<Resonator> = formants
        .iter()
        .zip(bandwidths)
        .map(|(&f, &b)| Resonator::new(f, b, srf))
        .collect();
    let mut out = vec![0.0f64; n];
    let mut phase = 1.0f64; // emit a pulse immediately
    for i in 0..voiced_len {
        phase += f0_hz / srf;
        let mut x = 0.0;
        if phase >= 1.0 {
            phase -= 1.0;
            x = 1.0;
        }
        let mut y = x;
        for f in filters.iter_mut() {
            y = f.step(y);
        }
        out[pad + i] = y;
    }
    normalize_rms(&mut out, 0.12);
    Waveform::new(out.iter().map(|&v| v as f32).collect(), sr).unwrap()
}

/// Seeded uniform white noise in [-amp, amp].
pub fn white_noise(amp: f64, seconds: f64, sr: u32, seed: u64) -> Waveform {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = (seconds * sr as f64) as usize;
    let samples: Vec<f32> = (0..n)
        .map(|_| (rng.random_range(-1.0..1.0) * amp) as f32)
        .collect();
    Waveform::new(samples, sr).unwrap()
}

fn normalize_rms(x: &mut [f64], target: f64) {
    let e: f64 = x.iter().map(|v| v * v).sum();
    if e <= 0.0 {
        return;
    }
    let rms = (e / x.len() as f64).sqrt();
    let g = target / rms;
    for v in x.iter_mut() {
        *v *= g;
    }
}

/// Mean Pearson correlation of cepstrally smoothed log-spectral envelopes
/// between two equal-rate signals, taken over frames where `a` is active.
/// Independent oracle for envelope preservation.
pub fn envelope_correlation(a: &Waveform, b: &Waveform) -> f64 {
    assert_eq!(a.sample_rate_hz(), b.sample_rate_hz());
    let n_fft = 1024usize;
    let hop = 512usize;
    let q = 20usize; // cepstral truncation order
    let n = a.len().min(b.len());
    if n < n_fft {
        return 0.0;
    }
    let mut planner = FftPlanner::<f64>::new();
    let fwd = planner.plan_fft_forward(n_fft);
    let inv = planner.plan_fft_inverse(n_fft);
    let window = crate::audio::hann_window(n_fft);

    let env = |s: &[f32], start: usize| -> Vec<f64> {
        let mut buf: Vec<Complex<f64>> = (0..n_fft)
            .map(|i| Complex::new(s[start + i] as f64 * window[i], 0.0))
            .collect();
        fwd.process(&mut buf);
        let mut logmag: Vec<Complex<f64>> = buf
            .iter()
            .map(|c| Complex::new((c.norm() + 1e-12).ln(), 0.0))
            .collect();
        inv.process(&mut logmag);
        // truncate the cepstrum (keep low quefrencies, symmetric)
        for (i, c) in logmag.iter_mut().enumerate() {
            *c = *c / n_fft as f64;
            let mirror = n_fft - i;
            if i > q && mirror > q {
                *c = Complex::new(0.0, 0.0);
            }
        }
        fwd.process(&mut logmag);
        logmag[..n_fft / 2 + 1].iter().map(|c| c.re).collect()
    };

    let mut sum = 0.0;
    let mut count = 0usize;
    let mut start = 0;
    while start + n_fft <= n {
        let frame_rms: f64 = a.samples()[start..start + n_fft]
            .iter()
            .map(|&s| (s as f64) * (s as f64))
            .sum::<f64>()
            .sqrt()
            / (n_fft as f64).sqrt();
        if frame_rms > 1e-3 {
            let ea = env(a.samples(), start);
            let eb = env(b.samples(), start);
            sum += pearson(&ea, &eb);
            count += 1;
        }
        start += hop;
    }
    if count == 0 {
        0.0
    } else {
        sum / count as f64
    }
}

fn pearson(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let mut num = 0.0;
    let mut dx = 0.0;
    let mut dy = 0.0;
    for (a, b) in x.iter().zip(y) {
        num += (a - mx) * (b - my);
        dx += (a - mx) * (a - mx);
        dy += (b - my) * (b - my);
    }
    if dx <= 0.0 || dy <= 0.0 {
        0.0
    } else {
        num / (dx * dy).sqrt()
    }
}
