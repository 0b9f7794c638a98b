//! Mel adaptor: a trained 3-layer TDNN that converts mel spectrograms
//! from the decoder parameterization to the speaker-encoder
//! parameterization (with a fixed fractional frame-rate resampling
//! stage), so the speaker loss can score decoder outputs during training
//! without vocoding. Frozen after pretraining.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

use rand::seq::SliceRandom;
use rand::Rng;

use crate::audio::{load_wav, mel_spectrogram, resample, MelConfig, MelFilterbank, MelSpectrogram};
use crate::data::Manifest;
use crate::error::{Error, Result};
use crate::nn::{l1_loss, Adam, Conv1d, Mat, Param};

const CHANNELS: usize = 48;
// affine wrappers keep the net in a +-1-ish range on both sides
const IN_SHIFT: f32 = 4.0;
const IN_SCALE: f32 = 0.125;
const OUT_SCALE: f32 = 8.0;
const OUT_SHIFT: f32 = -4.0;

/// Trained mel-to-mel converter bound to its source and destination
/// parameterizations.
#[derive(Debug, Clone)]
pub struct MelAdaptorModel {
    conv1: Conv1d,
    conv2: Conv1d,
    conv3: Conv1d,
    pub src_config: MelConfig,
    pub dst_config: MelConfig,
    identity: bool,
}

pub struct AdaptorCache {
    x_in: Mat,
    resampled: Mat,
    y1: Mat,
    y2: Mat,
    y3: Mat,
    out_rows: usize,
}

#[derive(Debug, Clone, Default)]
pub struct AdaptorTrainLog {
    pub loss_per_epoch: Vec<f64>,
}

impl MelAdaptorModel {
    pub fn seeded(src: MelConfig, dst: MelConfig, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        MelAdaptorModel {
            conv1: Conv1d::seeded(CHANNELS, src.n_mels, 5, 1, true, &mut rng),
            conv2: Conv1d::seeded(CHANNELS, CHANNELS, 3, 1, true, &mut rng),
            conv3: Conv1d::seeded(dst.n_mels, CHANNELS, 3, 1, false, &mut rng),
            src_config: src,
            dst_config: dst,
            identity: false,
        }
    }

    /// Identity bypass for equal parameterizations.
    pub fn identity(cfg: MelConfig) -> Self {
        let mut model = Self::seeded(cfg.clone(), cfg, 0);
        model.identity = true;
        model
    }

    pub fn is_identity(&self) -> bool {
        self.identity
    }

    /// Frame-count ratio src -> dst.
    pub fn frame_ratio(&self) -> f64 {
        self.src_config.hop_seconds() / self.dst_config.hop_seconds()
    }

    /// Forward over a raw frame matrix (frames x src n_mels). Returns the
    /// output matrix and the cache for backprop.
    pub fn forward_mat(&self, mel: &Mat) -> (Mat, AdaptorCache) {
        let mut x_in = mel.clone();
        x_in.data
            .iter_mut()
            .for_each(|v| *v = (*v + IN_SHIFT) * IN_SCALE);
        let resampled = resample_frames(&x_in, self.frame_ratio());
        let y1 = self.conv1.forward(&resampled);
        let y2 = self.conv2.forward(&y1);
        let y3 = self.conv3.forward(&y2);
        let floor = self.dst_config.log_floor as f32;
        let mut out = y3.clone();
        out.data
            .iter_mut()
            .for_each(|v| *v = (*v * OUT_SCALE + OUT_SHIFT).max(floor));
        let out_rows = out.rows;
        (
            out,
            AdaptorCache {
                x_in,
                resampled,
                y1,
                y2,
                y3,
                out_rows,
            },
        )
    }

    /// Backprop d(loss)/d(output) to d(loss)/d(input mel); parameter
    /// gradients accumulate (freeze by never stepping).
    pub fn backward_mat(&mut self, cache: &AdaptorCache, d_out: &Mat, out: &Mat) -> Mat {
        let floor = self.dst_config.log_floor as f32;
        let mut d_y3 = d_out.clone();
        for (i, v) in d_y3.data.iter_mut().enumerate() {
            // no gradient through the clamp at the floor
            if out.data[i] <= floor {
                *v = 0.0;
            } else {
                *v *= OUT_SCALE;
            }
        }
        let d_y2 = self.conv3.backward(&cache.y2, &cache.y3, &d_y3);
        let d_y1 = self.conv2.backward(&cache.y1, &cache.y2, &d_y2);
        let d_res = self.conv1.backward(&cache.resampled, &cache.y1, &d_y1);
        let mut d_in = resample_frames_backward(&d_res, cache.x_in.rows, self.frame_ratio());
        let _ = cache.out_rows;
        d_in.data.iter_mut().for_each(|v| *v *= IN_SCALE);
        d_in
    }

    /// Convert a mel spectrogram between the bound parameterizations.
    pub fn adapt(&self, mel: &MelSpectrogram) -> Result<MelSpectrogram> {
        if *mel.config() != self.src_config {
            return Err(Error::Config(
                "mel config does not match the adaptor's source config".into(),
            ));
        }
        if self.identity {
            return Ok(mel.clone());
        }
        let mat = Mat::from_vec(mel.n_frames(), mel.n_mels(), mel.values().to_vec());
        let (out, _) = self.forward_mat(&mat);
        MelSpectrogram::from_values(out.data, out.rows, self.dst_config.clone())
    }

    pub fn params(&self) -> Vec<&Param> {
        let mut v = Vec::new();
        v.extend(self.conv1.params());
        v.extend(self.conv2.params());
        v.extend(self.conv3.params());
        v
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param> {
        let mut v = Vec::new();
        v.extend(self.conv1.params_mut());
        v.extend(self.conv2.params_mut());
        v.extend(self.conv3.params_mut());
        v
    }

    pub fn zero_grads(&mut self) {
        for p in self.params_mut() {
            p.zero_grad();
        }
    }

    /// SHA-256 over the parameter bytes; the freeze contract is that this
    /// hash never changes across decoder training.
    pub fn param_hash(&self) -> String {
        let mut hasher = Sha256::new();
        for p in self.params() {
            for v in &p.w {
                hasher.update(v.to_le_bytes());
            }
        }
        let digest = hasher.finalize();
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }
}

/// Linear interpolation of the frame axis to round(rows * ratio) rows.
fn resample_frames(x: &Mat, ratio: f64) -> Mat {
    if (ratio - 1.0).abs() < 1e-12 {
        return x.clone();
    }
    let out_rows = ((x.rows as f64) * ratio).round().max(1.0) as usize;
    let mut out = Mat::zeros(out_rows, x.cols);
    for t in 0..out_rows {
        let pos = t as f64 / ratio;
        let lo = pos.floor() as usize;
        let hi = (lo + 1).min(x.rows - 1);
        let frac = (pos - lo as f64) as f32;
        let lo = lo.min(x.rows - 1);
        for j in 0..x.cols {
            out.row_mut(t)[j] = x.row(lo)[j] * (1.0 - frac) + x.row(hi)[j] * frac;
        }
    }
    out
}

/// Adjoint of `resample_frames`.
fn resample_frames_backward(d_out: &Mat, in_rows: usize, ratio: f64) -> Mat {
    if (ratio - 1.0).abs() < 1e-12 {
        return d_out.clone();
    }
    let mut d_in = Mat::zeros(in_rows, d_out.cols);
    for t in 0..d_out.rows {
        let pos = t as f64 / ratio;
        let lo = pos.floor() as usize;
        let hi = (lo + 1).min(in_rows - 1);
        let frac = (pos - lo as f64) as f32;
        let lo = lo.min(in_rows - 1);
        for j in 0..d_out.cols {
            let d = d_out.row(t)[j];
            d_in.row_mut(lo)[j] += d * (1.0 - frac);
            d_in.row_mut(hi)[j] += d * frac;
        }
    }
    d_in
}

/// Extract the aligned (src mel, dst mel) pair of one waveform file.
fn training_pair(
    path: &std::path::Path,
    src: &MelConfig,
    dst: &MelConfig,
) -> Result<(Mat, Mat)> {
    let wave = load_wav(path)?;
    let mel_src = mel_spectrogram(&wave, src)?;
    let wave_dst = resample(&wave, dst.sample_rate_hz)?;
    let mel_dst = mel_spectrogram(&wave_dst, dst)?;
    let src_mat = Mat::from_vec(mel_src.n_frames(), src.n_mels, mel_src.values().to_vec());
    let dst_mat = Mat::from_vec(mel_dst.n_frames(), dst.n_mels, mel_dst.values().to_vec());
    Ok((src_mat, dst_mat))
}

/// Pretrain the adaptor with per-bin L1 against directly extracted
/// destination mels.
pub fn train_mel_adaptor(
    manifest: &Manifest,
    src: &MelConfig,
    dst: &MelConfig,
    epochs: usize,
    seed: u64,
) -> Result<(MelAdaptorModel, AdaptorTrainLog)> {
    if src == dst {
        return Err(Error::Config(
            "source and destination configs are identical; use the identity bypass".into(),
        ));
    }
    if manifest.is_empty() {
        return Err(Error::Train("empty manifest".into()));
    }
    let mut pairs = Vec::with_capacity(manifest.len());
    for rec in &manifest.records {
        pairs.push(training_pair(&rec.path, src, dst)?);
    }

    let mut model = MelAdaptorModel::seeded(src.clone(), dst.clone(), seed);
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xada9);
    let mut opt = Adam::new(2e-3);
    let mut log = AdaptorTrainLog::default();
    let mut order: Vec<usize> = (0..pairs.len()).collect();
    let crop = 150usize;

    for epoch in 0..epochs {
        opt.lr = if epoch * 3 >= epochs * 2 { 5e-4 } else { 2e-3 };
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0f64;
        for chunk in order.chunks(4) {
            for &idx in chunk {
                let (src_mel, dst_mel) = &pairs[idx];
                let frames = src_mel.rows.min(dst_mel.rows);
                let take = crop.min(frames);
                let start = if frames > take {
                    rng.random_range(0..frames - take)
                } else {
                    0
                };
                let src_crop = slice_rows(src_mel, start, start + take);
                let dst_crop = slice_rows(dst_mel, start, start + take);
                let (out, cache) = model.forward_mat(&src_crop);
                let rows = out.rows.min(dst_crop.rows);
                let out_c = slice_rows(&out, 0, rows);
                let dst_c = slice_rows(&dst_crop, 0, rows);
                let (loss, d_out) = l1_loss(&out_c, &dst_c);
                epoch_loss += loss;
                let mut d_full = Mat::zeros(out.rows, out.cols);
                d_full.data[..d_out.data.len()].copy_from_slice(&d_out.data);
                model.backward_mat(&cache, &d_full, &out);
            }
            opt.step(&mut model.params_mut());
        }
        log.loss_per_epoch.push(epoch_loss / pairs.len() as f64);
    }

    Ok((model, log))
}

fn slice_rows(m: &Mat, start: usize, end: usize) -> Mat {
    let end = end.min(m.rows);
    let start = start.min(end);
    Mat::from_vec(
        end - start,
        m.cols,
        m.data[start * m.cols..end * m.cols].to_vec(),
    )
}

/// Independent baseline: frame-rate linear interpolation plus a mel-basis
/// least-squares remap in the linear energy domain.
pub struct MelRemapBaseline {
    remap: Vec<f64>, // dst_mels x src_mels
    src: MelConfig,
    dst: MelConfig,
}

impl MelRemapBaseline {
    pub fn new(src: &MelConfig, dst: &MelConfig) -> Self {
        let fb_src = MelFilterbank::new(src);
        let fb_dst = MelFilterbank::new(dst);
        let grid = 4096usize;
        let f_hi = dst.fmax.min(src.fmax);
        // A: src responses on the grid, B: dst responses
        let mut a = vec![0.0f64; src.n_mels * grid];
        let mut b = vec![0.0f64; dst.n_mels * grid];
        for g in 0..grid {
            let f = f_hi * (g as f64 + 0.5) / grid as f64;
            for j in 0..src.n_mels {
                a[j * grid + g] = fb_src.band_response(j, f);
            }
            for j in 0..dst.n_mels {
                b[j * grid + g] = fb_dst.band_response(j, f);
            }
        }
        // solve R (A A^T) = B A^T row by row via Cholesky
        let n = src.n_mels;
        let mut gram = vec![0.0f64; n * n];
        for i in 0..n {
            for j in i..n {
                let mut s = 0.0;
                for g in 0..grid {
                    s += a[i * grid + g] * a[j * grid + g];
                }
                gram[i * n + j] = s;
                gram[j * n + i] = s;
            }
        }
        for i in 0..n {
            gram[i * n + i] += 1e-6;
        }
        let chol = cholesky(&gram, n);
        let mut remap = vec![0.0f64; dst.n_mels * n];
        let mut rhs = vec![0.0f64; n];
        let mut x = vec![0.0f64; n];
        for r in 0..dst.n_mels {
            for (i, rh) in rhs.iter_mut().enumerate() {
                let mut s = 0.0;
                for g in 0..grid {
                    s += b[r * grid + g] * a[i * grid + g];
                }
                *rh = s;
            }
            chol_solve(&chol, &rhs, &mut x, n);
            remap[r * n..(r + 1) * n].copy_from_slice(&x);
        }
        MelRemapBaseline {
            remap,
            src: src.clone(),
            dst: dst.clone(),
        }
    }

    pub fn apply(&self, mel: &MelSpectrogram) -> Result<MelSpectrogram> {
        if *mel.config() != self.src {
            return Err(Error::Config("baseline: source config mismatch".into()));
        }
        let ratio = self.src.hop_seconds() / self.dst.hop_seconds();
        let mat = Mat::from_vec(mel.n_frames(), mel.n_mels(), mel.values().to_vec());
        let resampled = resample_frames(&mat, ratio);
        let n = self.src.n_mels;
        let mut out = Mat::zeros(resampled.rows, self.dst.n_mels);
        for t in 0..resampled.rows {
            let energies: Vec<f64> = resampled
                .row(t)
                .iter()
                .map(|&v| (v as f64).exp())
                .collect();
            for r in 0..self.dst.n_mels {
                let mut s = 0.0;
                for (j, &e) in energies.iter().enumerate() {
                    s += self.remap[r * n + j] * e;
                }
                out.row_mut(t)[r] = s.max(0.0).ln().max(self.dst.log_floor) as f32;
            }
        }
        MelSpectrogram::from_values(out.data, out.rows, self.dst.clone())
    }
}

fn cholesky(a: &[f64], n: usize) -> Vec<f64> {
    let mut l = vec![0.0f64; n * n];
    for i in 0..n {
        for j in 0..=i {
            let mut s = a[i * n + j];
            for k in 0..j {
                s -= l[i * n + k] * l[j * n + k];
            }
            if i == j {
                l[i * n + i] = s.max(1e-12).sqrt();
            } else {
                l[i * n + j] = s / l[j * n + j];
            }
        }
    }
    l
}

fn chol_solve(l: &[f64], b: &[f64], x: &mut [f64], n: usize) {
    for i in 0..n {
        let mut s = b[i];
        for k in 0..i {
            s -= l[i * n + k] * x[k];
        }
        x[i] = s / l[i * n + i];
    }
    for i in (0..n).rev() {
        let mut s = x[i];
        for k in i + 1..n {
            s -= l[k * n + i] * x[k];
        }
        x[i] = s / l[i * n + i];
    }
}

/// Mean per-bin L1 between an adapted mel and the directly extracted
/// destination mel over a manifest (evaluation helper).
pub fn heldout_l1<F>(manifest: &Manifest, src: &MelConfig, dst: &MelConfig, f: F) -> Result<f64>
where
    F: Fn(&MelSpectrogram) -> Result<MelSpectrogram>,
{
    let mut total = 0.0f64;
    let mut count = 0usize;
    for rec in &manifest.records {
        let wave = load_wav(&rec.path)?;
        let mel_src = mel_spectrogram(&wave, src)?;
        let wave_dst = resample(&wave, dst.sample_rate_hz)?;
        let mel_dst = mel_spectrogram(&wave_dst, dst)?;
        let adapted = f(&mel_src)?;
        let frames = adapted.n_frames().min(mel_dst.n_frames());
        for t in 0..frames {
            for (a, b) in adapted.frame(t).iter().zip(mel_dst.frame(t)) {
                total += (a - b).abs() as f64;
                count += 1;
            }
        }
    }
    Ok(total / count.max(1) as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::generate_toy_corpus;

    #[test]
    fn identity_bypass_returns_input_unchanged() {
        let cfg = MelConfig::decoder();
        let adaptor = MelAdaptorModel::identity(cfg.clone());
        let mel = MelSpectrogram::from_values(
            vec![-3.0f32; 20 * cfg.n_mels],
            20,
            cfg,
        )
        .unwrap();
        let out = adaptor.adapt(&mel).unwrap();
        assert_eq!(out, mel);
    }

    #[test]
    fn config_mismatch_errors() {
        let adaptor = MelAdaptorModel::seeded(MelConfig::decoder(), MelConfig::speaker(), 1);
        let cfg = MelConfig::speaker();
        let mel =
            MelSpectrogram::from_values(vec![-3.0f32; 10 * cfg.n_mels], 10, cfg).unwrap();
        assert!(adaptor.adapt(&mel).is_err());
    }

    #[test]
    fn identical_configs_refuse_training() {
        let m = Manifest::default();
        assert!(
            train_mel_adaptor(&m, &MelConfig::decoder(), &MelConfig::decoder(), 1, 1).is_err()
        );
    }

    #[test]
    fn ten_ms_to_ten_ms_preserves_frame_count() {
        let adaptor = MelAdaptorModel::seeded(MelConfig::decoder(), MelConfig::speaker(), 2);
        assert!((adaptor.frame_ratio() - 1.0).abs() < 1e-12);
        let cfg = MelConfig::decoder();
        let mel =
            MelSpectrogram::from_values(vec![-2.0f32; 100 * cfg.n_mels], 100, cfg).unwrap();
        let out = adaptor.adapt(&mel).unwrap();
        assert_eq!(out.n_frames(), 100);
        assert_eq!(out.n_mels(), 40);
        let floor = MelConfig::speaker().log_floor as f32;
        assert!(out.values().iter().all(|&v| v >= floor));
    }

    #[test]
    fn frame_resampling_round_trips_shape() {
        let x = Mat::from_vec(100, 2, (0..200).map(|i| i as f32).collect());
        let y = resample_frames(&x, 1.5);
        assert_eq!(y.rows, 150);
        let z = resample_frames(&x, 2.0 / 3.0);
        assert_eq!(z.rows, 67);
    }

    #[test]
    fn zero_epochs_keeps_init_and_same_seed_reproduces() {
        let dir = tempfile::tempdir().unwrap();
        let m = generate_toy_corpus(2, 2, 31, dir.path()).unwrap();
        let (a0, _) =
            train_mel_adaptor(&m, &MelConfig::decoder(), &MelConfig::speaker(), 0, 5).unwrap();
        let fresh = MelAdaptorModel::seeded(MelConfig::decoder(), MelConfig::speaker(), 5);
        assert_eq!(a0.param_hash(), fresh.param_hash());
        let (a1, _) =
            train_mel_adaptor(&m, &MelConfig::decoder(), &MelConfig::speaker(), 2, 5).unwrap();
        let (a2, _) =
            train_mel_adaptor(&m, &MelConfig::decoder(), &MelConfig::speaker(), 2, 5).unwrap();
        assert_eq!(a1.param_hash(), a2.param_hash());
        assert_ne!(a1.param_hash(), a0.param_hash());
    }

    /// Finite-difference check of the full adaptor backward (through the
    /// affine wrappers and floor clamp).
    #[test]
    fn input_gradient_matches_finite_differences() {
        use rand::Rng;
        let mut model = MelAdaptorModel::seeded(MelConfig::decoder(), MelConfig::speaker(), 7);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mel = Mat::from_vec(
            12,
            80,
            (0..12 * 80).map(|_| rng.random_range(-8.0..2.0)).collect(),
        );
        let weight = Mat::from_vec(
            12,
            40,
            (0..12 * 40).map(|_| rng.random_range(-1.0..1.0)).collect(),
        );
        let loss_of = |m: &Mat| -> f32 {
            let (out, _) = model.forward_mat(m);
            out.data
                .iter()
                .zip(&weight.data)
                .map(|(a, b)| a * b)
                .sum()
        };
        let (out, cache) = model.forward_mat(&mel);
        let mut m2 = model.clone();
        let d_in = m2.backward_mat(&cache, &weight, &out);
        let h = 1e-2f32;
        for i in (0..mel.data.len()).step_by(131) {
            let mut p = mel.clone();
            p.data[i] += h;
            let mut m = mel.clone();
            m.data[i] -= h;
            let numeric = (loss_of(&p) - loss_of(&m)) / (2.0 * h);
            let diff = (numeric - d_in.data[i]).abs();
            assert!(
                diff <= 5e-2 * numeric.abs().max(0.2),
                "idx {i}: numeric {numeric} analytic {}",
                d_in.data[i]
            );
        }
    }

    #[test]
    fn trained_adaptor_beats_interpolation_baseline() {
        let dir = tempfile::tempdir().unwrap();
        let train = generate_toy_corpus(4, 4, 33, dir.path().join("train")).unwrap();
        let held = generate_toy_corpus(2, 2, 77, dir.path().join("held")).unwrap();
        let src = MelConfig::decoder();
        let dst = MelConfig::speaker();
        let (model, log) = train_mel_adaptor(&train, &src, &dst, 20, 3).unwrap();
        assert!(log.loss_per_epoch.first().unwrap() > log.loss_per_epoch.last().unwrap());
        let baseline = MelRemapBaseline::new(&src, &dst);
        let model_err = heldout_l1(&held, &src, &dst, |m| model.adapt(m)).unwrap();
        let base_err = heldout_l1(&held, &src, &dst, |m| baseline.apply(m)).unwrap();
        assert!(
            model_err <= 0.5 * base_err,
            "model {model_err} vs baseline {base_err}"
        );
    }
}
