//! Voicing analysis: normalized autocorrelation peaks of the
//! spectrally-whitened signal in the 60-400 Hz pitch band (SIFT style).
//! Whitening through a lag-windowed LPC inverse filter keeps pulse trains
//! periodic while flattening shaped noise, so the peak statistic has a
//! low chance floor. Serves as the pitch tracker for prosody targets and
//! as the oracle behind the whisperization contract.

use super::lpc::{inverse_filter, lag_windowed_lpc};
use super::Waveform;

const WHITEN_ORDER: usize = 12;
const WHITEN_LAG_WINDOW_HZ: f64 = 150.0;

/// Pitch search band, Hz.
pub const F0_MIN_HZ: f64 = 60.0;
pub const F0_MAX_HZ: f64 = 400.0;

/// Frames below this RMS never count as active (about -80 dBFS).
const ACTIVE_RMS_FLOOR: f64 = 1e-4;

/// Per-frame voicing analysis at a fixed hop.
#[derive(Debug, Clone)]
pub struct VoicingAnalysis {
    /// Peak normalized autocorrelation in the pitch lag band, per frame.
    pub peaks: Vec<f64>,
    /// Median-smoothed peak track; robust against single-frame chance
    /// correlations in noise.
    pub smoothed_peaks: Vec<f64>,
    /// Estimated f0 (Hz) per frame; meaningful where `peaks` is high.
    pub f0_hz: Vec<f64>,
    /// Frames with enough energy to be analyzed at all.
    pub active: Vec<bool>,
    pub hop: usize,
}

/// Analyze voicing frame-by-frame with frame starts at `t * hop`.
/// Correlation support is 50 ms with mean removal.
pub fn analyze_voicing(wave: &Waveform, hop: usize) -> VoicingAnalysis {
    let sr = wave.sample_rate_hz() as f64;
    let n = wave.len();
    let samples = wave.samples();
    let lag_min = (sr / F0_MAX_HZ).floor() as usize;
    let lag_max = (sr / F0_MIN_HZ).ceil() as usize;
    let win = (sr / 20.0) as usize; // 50 ms correlation support
    let n_frames = if n == 0 { 0 } else { n.div_ceil(hop) };

    let mut peaks = vec![0.0; n_frames];
    let mut f0 = vec![0.0; n_frames];
    let mut active = vec![false; n_frames];

    // global frame RMS scale for the relative activity threshold
    let mut max_rms = 0.0f64;
    let mut frame_rms = vec![0.0f64; n_frames];
    for t in 0..n_frames {
        let start = t * hop;
        let end = (start + win).min(n);
        if end <= start {
            continue;
        }
        let e: f64 = samples[start..end]
            .iter()
            .map(|&s| (s as f64) * (s as f64))
            .sum();
        let rms = (e / (end - start) as f64).sqrt();
        frame_rms[t] = rms;
        max_rms = max_rms.max(rms);
    }
    let thresh = ACTIVE_RMS_FLOOR.max(0.02 * max_rms);

    let mut x = vec![0.0f64; win + lag_max];
    for t in 0..n_frames {
        if frame_rms[t] <= thresh {
            continue;
        }
        let start = t * hop;
        let avail = n - start;
        // full correlation support is required; tail frames only lose the
        // longest lags
        if avail < win + lag_min {
            continue;
        }
        let span = (win + lag_max).min(avail);
        let mean: f64 = samples[start..start + span]
            .iter()
            .map(|&s| s as f64)
            .sum::<f64>()
            / span as f64;
        for i in 0..span {
            x[i] = samples[start + i] as f64 - mean;
        }
        let e0: f64 = x[..win].iter().map(|v| v * v).sum();
        if e0 <= 0.0 {
            continue;
        }
        // onsets/offsets produce spurious envelope correlation; require the
        // two halves of the span to carry comparable energy
        let e_head: f64 = x[..span / 2].iter().map(|v| v * v).sum();
        let e_tail: f64 = x[span / 2..span].iter().map(|v| v * v).sum();
        let (hi, lo) = if e_head > e_tail {
            (e_head, e_tail)
        } else {
            (e_tail, e_head)
        };
        if lo <= 0.0 || hi / lo > 6.0 {
            continue;
        }
        active[t] = true;
        // whiten, then correlate the residual
        let coeffs = lag_windowed_lpc(&x[..span], WHITEN_ORDER, WHITEN_LAG_WINDOW_HZ, sr);
        let e = inverse_filter(&x[..span], &coeffs);
        let e0: f64 = e[..win].iter().map(|v| v * v).sum();
        if e0 <= 0.0 {
            active[t] = false;
            continue;
        }
        let mut best = 0.0f64;
        let mut best_lag = lag_min;
        let lag_hi = lag_max.min(span - win);
        let mut ncc_at = vec![0.0f64; lag_hi + 1 - lag_min];
        for lag in lag_min..=lag_hi {
            let mut num = 0.0f64;
            let mut e1 = 0.0f64;
            for i in 0..win {
                let a = e[i];
                let b = e[i + lag];
                num += a * b;
                e1 += b * b;
            }
            let denom = (e0 * e1).sqrt();
            let ncc = if denom > 0.0 { num / denom } else { 0.0 };
            ncc_at[lag - lag_min] = ncc;
            if ncc > best {
                best = ncc;
                best_lag = lag;
            }
        }
        peaks[t] = best;
        // parabolic refinement of the lag for the f0 estimate
        let mut lag_ref = best_lag as f64;
        let idx = best_lag - lag_min;
        if idx > 0 && idx + 1 < ncc_at.len() {
            let (ym, y0, yp) = (ncc_at[idx - 1], ncc_at[idx], ncc_at[idx + 1]);
            let denom = ym - 2.0 * y0 + yp;
            if denom.abs() > 1e-12 {
                lag_ref += 0.5 * (ym - yp) / denom;
            }
        }
        if lag_ref > 0.0 {
            f0[t] = sr / lag_ref;
        }
    }

    let smoothed_peaks = median_smooth(&peaks, &active, 2);

    VoicingAnalysis {
        peaks,
        smoothed_peaks,
        f0_hz: f0,
        active,
        hop,
    }
}

/// Median filter over the active-frame peak track; inactive frames keep 0.
fn median_smooth(peaks: &[f64], active: &[bool], radius: usize) -> Vec<f64> {
    let n = peaks.len();
    let mut out = vec![0.0; n];
    for t in 0..n {
        if !active[t] {
            continue;
        }
        let lo = t.saturating_sub(radius);
        let hi = (t + radius + 1).min(n);
        let mut vals: Vec<f64> = (lo..hi).filter(|&u| active[u]).map(|u| peaks[u]).collect();
        vals.sort_by(|a, b| a.partial_cmp(b).unwrap());
        out[t] = vals[vals.len() / 2];
    }
    out
}

/// Maximum (median-smoothed) normalized autocorrelation peak in the pitch
/// band over voiced regions; 0 if nothing is active. Values below 0.3 mean
/// no region carries periodic excitation.
pub fn voicing_score(wave: &Waveform) -> f64 {
    if wave.is_empty() {
        return 0.0;
    }
    let hop = (wave.sample_rate_hz() as usize) / 100;
    let va = analyze_voicing(wave, hop.max(1));
    va.smoothed_peaks
        .iter()
        .zip(&va.active)
        .filter(|(_, &a)| a)
        .map(|(&p, _)| p)
        .fold(0.0, f64::max)
}

/// Fraction of active frames whose smoothed voicing peak exceeds
/// `threshold`.
pub fn voiced_fraction(wave: &Waveform, threshold: f64) -> f64 {
    let hop = (wave.sample_rate_hz() as usize) / 100;
    let va = analyze_voicing(wave, hop.max(1));
    let active: Vec<f64> = va
        .smoothed_peaks
        .iter()
        .zip(&va.active)
        .filter(|(_, &a)| a)
        .map(|(&p, _)| p)
        .collect();
    if active.is_empty() {
        return 0.0;
    }
    active.iter().filter(|&&p| p > threshold).count() as f64 / active.len() as f64
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pulse_train_is_strongly_voiced() {
        // 120 Hz glottal-style excitation: period of exactly 200 samples
        let sr = 24000u32;
        let samples: Vec<f32> = (0..sr as usize)
            .map(|i| if i % 200 == 0 { 0.8 } else { 0.0 })
            .collect();
        let w = Waveform::new(samples, sr).unwrap();
        assert!(voicing_score(&w) > 0.8, "score {}", voicing_score(&w));
        let va = analyze_voicing(&w, 240);
        let voiced: Vec<f64> = va
            .f0_hz
            .iter()
            .zip(&va.peaks)
            .filter(|(_, &p)| p > 0.5)
            .map(|(&f, _)| f)
            .collect();
        let mut sorted = voiced.clone();
        sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let median = sorted[sorted.len() / 2];
        assert!((median - 120.0).abs() < 2.0, "median f0 = {median}");
    }

    #[test]
    fn silence_scores_zero() {
        let w = Waveform::silence(24000, 24000);
        assert_eq!(voicing_score(&w), 0.0);
    }

    #[test]
    fn white_noise_scores_low() {
        let w = crate::testsig::white_noise(0.3, 1.0, 24000, 42);
        let score = voicing_score(&w);
        assert!(score < 0.3, "white noise voicing score = {score}");
    }
}
