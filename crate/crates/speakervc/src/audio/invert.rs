//! Mel-to-waveform inversion: least-squares filterbank inversion followed
//! by Griffin-Lim phase reconstruction. Stands in for a neural vocoder.

use rustfft::{num_complex::Complex, FftPlanner};

use super::mel::{hann, MelFilterbank, MelSpectrogram};
use super::Waveform;
use crate::error::{Error, Result};

/// Invert a log-mel spectrogram to a waveform. Output has exactly
/// `frames * hop_length` samples at the config's sample rate.
pub fn invert_mel(mel: &MelSpectrogram, iterations: usize) -> Result<Waveform> {
    if iterations < 1 {
        return Err(Error::InvalidArgument("iterations must be >= 1".into()));
    }
    let cfg = mel.config().clone();
    let n_out = mel.n_frames() * cfg.hop_length;
    let floor = cfg.log_floor as f32;
    if mel.values().iter().all(|&v| v <= floor + 1e-6) {
        return Ok(Waveform::silence(n_out, cfg.sample_rate_hz));
    }

    let fb = MelFilterbank::new(&cfg);
    let n_bins = fb.n_bins();
    let n_frames = mel.n_frames();

    // nonnegative least-squares mel inversion via multiplicative updates:
    // p <- p * (M^T e) / (M^T M p)
    let mut magnitude = vec![0.0f64; n_frames * n_bins];
    let mut energies = vec![0.0f64; cfg.n_mels];
    let mut numer = vec![0.0f64; n_bins];
    let mut p = vec![0.0f64; n_bins];
    let mut band = vec![0.0f64; cfg.n_mels];
    let mut denom = vec![0.0f64; n_bins];
    for t in 0..n_frames {
        for (j, e) in energies.iter_mut().enumerate() {
            *e = (mel.frame(t)[j] as f64).exp();
        }
        // numer = M^T e, also the initial guess
        for k in 0..n_bins {
            let mut s = 0.0;
            for j in 0..cfg.n_mels {
                s += fb.band_weights(j)[k] * energies[j];
            }
            numer[k] = s;
            p[k] = s;
        }
        for _ in 0..60 {
            fb.apply(&p, &mut band);
            for k in 0..n_bins {
                let mut s = 0.0;
                for j in 0..cfg.n_mels {
                    s += fb.band_weights(j)[k] * band[j];
                }
                denom[k] = s;
            }
            for k in 0..n_bins {
                if denom[k] > 1e-300 {
                    p[k] *= numer[k] / denom[k];
                }
            }
        }
        for k in 0..n_bins {
            magnitude[t * n_bins + k] = p[k].max(0.0).sqrt();
        }
    }

    // Griffin-Lim with momentum acceleration, zero initial phase
    let momentum = 0.99f64;
    let mut planner = FftPlanner::<f64>::new();
    let fwd = planner.plan_fft_forward(cfg.n_fft);
    let inv = planner.plan_fft_inverse(cfg.n_fft);
    let window = hann(cfg.win_length);
    let offset = (cfg.n_fft - cfg.win_length) / 2;
    let pad = cfg.n_fft / 2;
    let padded_len = n_out + cfg.n_fft;

    let mut phases = vec![0.0f64; n_frames * n_bins];
    let mut signal = vec![0.0f64; padded_len];
    let mut d_prev: Option<Vec<Complex<f64>>> = None;
    for it in 0..iterations {
        istft(
            &magnitude, &phases, n_frames, n_bins, &cfg, &window, offset, &inv, &mut signal,
        );
        // re-analyze; phases come from the consistency projection plus an
        // over-relaxation step on the complex spectra
        let mut d = vec![Complex::new(0.0, 0.0); n_frames * n_bins];
        let mut buf = vec![Complex::new(0.0, 0.0); cfg.n_fft];
        for t in 0..n_frames {
            buf.iter_mut().for_each(|c| *c = Complex::new(0.0, 0.0));
            let start = t * cfg.hop_length;
            for i in 0..cfg.win_length {
                buf[offset + i] = Complex::new(signal[start + offset + i] * window[i], 0.0);
            }
            fwd.process(&mut buf);
            d[t * n_bins..(t + 1) * n_bins].copy_from_slice(&buf[..n_bins]);
        }
        for (i, phase) in phases.iter_mut().enumerate() {
            let accel = match (&d_prev, it) {
                (Some(prev), _) => d[i] + (d[i] - prev[i]) * momentum,
                (None, _) => d[i],
            };
            if accel.norm_sqr() > 0.0 {
                *phase = accel.arg();
            }
        }
        d_prev = Some(d);
    }
    istft(
        &magnitude, &phases, n_frames, n_bins, &cfg, &window, offset, &inv, &mut signal,
    );

    let samples: Vec<f32> = (0..n_out).map(|i| signal[i + pad] as f32).collect();
    Waveform::new(samples, cfg.sample_rate_hz)
}

#[allow(clippy::too_many_arguments)]
fn istft(
    magnitude: &[f64],
    phases: &[f64],
    n_frames: usize,
    n_bins: usize,
    cfg: &super::MelConfig,
    window: &[f64],
    offset: usize,
    inv: &std::sync::Arc<dyn rustfft::Fft<f64>>,
    out: &mut [f64],
) {
    out.iter_mut().for_each(|v| *v = 0.0);
    let mut wsum = vec![0.0f64; out.len()];
    let mut buf = vec![Complex::new(0.0, 0.0); cfg.n_fft];
    for t in 0..n_frames {
        for k in 0..n_bins {
            let m = magnitude[t * n_bins + k];
            let p = phases[t * n_bins + k];
            buf[k] = Complex::from_polar(m, p);
        }
        // hermitian symmetry for a real signal
        for k in n_bins..cfg.n_fft {
            buf[k] = buf[cfg.n_fft - k].conj();
        }
        inv.process(&mut buf);
        let start = t * cfg.hop_length;
        for i in 0..cfg.win_length {
            let v = buf[offset + i].re / cfg.n_fft as f64;
            out[start + offset + i] += v * window[i];
            wsum[start + offset + i] += window[i] * window[i];
        }
    }
    for (v, w) in out.iter_mut().zip(&wsum) {
        if *w > 1e-9 {
            *v /= *w;
        }
    }
}
