//! Shared linear-prediction helpers: Levinson-Durbin, lag-windowed
//! autocorrelation analysis and inverse filtering.

/// Levinson-Durbin recursion on autocorrelation `r` (length order+1).
/// Returns coefficients a[1..=order] of the predictor x̂[n] = Σ a_k x[n-k].
pub(crate) fn levinson(r: &[f64]) -> Vec<f64> {
    let order = r.len() - 1;
    let mut a = vec![0.0f64; order];
    let mut err = r[0];
    for i in 0..order {
        let mut acc = r[i + 1];
        for j in 0..i {
            acc -= a[j] * r[i - j];
        }
        if err.abs() < 1e-20 {
            break;
        }
        let k = acc / err;
        let prev = a.clone();
        a[i] = k;
        for j in 0..i {
            a[j] = prev[j] - k * prev[i - 1 - j];
        }
        err *= 1.0 - k * k;
        if err <= 0.0 {
            break;
        }
    }
    a
}

/// LPC of `x` with a Gaussian lag window of width `lag_window_hz`, which
/// restricts the fit to the spectral envelope rather than harmonic fine
/// structure. Returns a[1..=order]; empty signal energy yields zeros.
pub(crate) fn lag_windowed_lpc(x: &[f64], order: usize, lag_window_hz: f64, sr: f64) -> Vec<f64> {
    let n = x.len();
    let mut r = vec![0.0f64; order + 1];
    for (k, rk) in r.iter_mut().enumerate() {
        *rk = (0..n - k).map(|i| x[i] * x[i + k]).sum();
    }
    if r[0] <= 0.0 {
        return vec![0.0; order];
    }
    let lw = std::f64::consts::TAU * lag_window_hz / sr;
    for (k, rk) in r.iter_mut().enumerate().skip(1) {
        *rk *= (-0.5 * (lw * k as f64).powi(2)).exp();
    }
    r[0] *= 1.0001;
    levinson(&r)
}

/// Inverse (whitening) filter: e[n] = x[n] - Σ a_k x[n-k].
pub(crate) fn inverse_filter(x: &[f64], a: &[f64]) -> Vec<f64> {
    let mut e = vec![0.0f64; x.len()];
    for i in 0..x.len() {
        let mut v = x[i];
        for (k, &c) in a.iter().enumerate() {
            if i > k {
                v -= c * x[i - k - 1];
            }
        }
        e[i] = v;
    }
    e
}
