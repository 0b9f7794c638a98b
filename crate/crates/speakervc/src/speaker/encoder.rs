//! Speaker encoder: three dilated TDNN layers over 16 kHz log-mel frames,
//! statistics pooling (mean || stddev), and a linear embedding head. A
//! classifier head over the training speakers is kept for pretraining and
//! ignored at inference. The mel path is differentiable end to end so the
//! speaker loss can reach a decoder through it.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::SpeakerEmbedding;
use crate::audio::{mel_spectrogram, resample, MelConfig, MelSpectrogram, Waveform};
use crate::error::{Error, Result};
use crate::nn::{Conv1d, Dense, Mat, Param, StatsPool};

pub const EMBEDDING_DIM: usize = 64;
const CHANNELS: usize = 48;
const MEL_SCALE: f32 = 0.25;

/// Trained speaker encoder; input is speaker-side (16 kHz) log-mel.
#[derive(Debug, Clone)]
pub struct SpeakerEncoderModel {
    pub conv1: Conv1d,
    pub conv2: Conv1d,
    pub conv3: Conv1d,
    pub emb: Dense,
    pub classifier: Dense,
    pub speaker_labels: Vec<String>,
    pub mel_config: MelConfig,
}

/// Cached forward activations for the differentiable path.
pub struct EncoderCache {
    pub normed: Mat,
    pub y1: Mat,
    pub y2: Mat,
    pub y3: Mat,
    pub pooled: Vec<f32>,
    pub raw_emb: Vec<f32>,
    pub raw_norm: f64,
}

impl SpeakerEncoderModel {
    pub fn seeded(n_speakers: usize, seed: u64) -> Self {
        let cfg = MelConfig::speaker();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        SpeakerEncoderModel {
            conv1: Conv1d::seeded(CHANNELS, cfg.n_mels, 5, 1, true, &mut rng),
            conv2: Conv1d::seeded(CHANNELS, CHANNELS, 3, 2, true, &mut rng),
            conv3: Conv1d::seeded(CHANNELS, CHANNELS, 3, 3, true, &mut rng),
            emb: Dense::seeded(EMBEDDING_DIM, 2 * CHANNELS, &mut rng),
            classifier: Dense::seeded(n_speakers, EMBEDDING_DIM, &mut rng),
            speaker_labels: Vec::new(),
            mel_config: cfg,
        }
    }

    /// Mel input normalization: subtract the utterance mean log energy
    /// (level invariance: a uniform log-mel shift cancels exactly) and
    /// rescale to a well-conditioned range. Per-channel statistics stay
    /// intact; the long-term average spectrum carries speaker identity.
    fn normalize(mel: &Mat) -> Mat {
        let mean =
            mel.data.iter().map(|&v| v as f64).sum::<f64>() / mel.data.len().max(1) as f64;
        let mut out = mel.clone();
        out.data
            .iter_mut()
            .for_each(|v| *v = (*v - mean as f32) * MEL_SCALE);
        out
    }

    fn mel_as_mat(mel: &MelSpectrogram) -> Mat {
        Mat::from_vec(mel.n_frames(), mel.n_mels(), mel.values().to_vec())
    }

    /// Forward pass from a 16 kHz mel matrix; returns the raw (pre-norm)
    /// embedding and the cache needed for backprop.
    pub fn forward_mel(&self, mel: &Mat) -> (Vec<f32>, EncoderCache) {
        let normed = Self::normalize(mel);
        let y1 = self.conv1.forward(&normed);
        let y2 = self.conv2.forward(&y1);
        let y3 = self.conv3.forward(&y2);
        let pooled = StatsPool::forward(&y3);
        let raw_emb = self.emb.forward_vec(&pooled);
        let raw_norm = raw_emb
            .iter()
            .map(|&v| (v as f64) * (v as f64))
            .sum::<f64>()
            .sqrt();
        (
            raw_emb.clone(),
            EncoderCache {
                normed,
                y1,
                y2,
                y3,
                pooled,
                raw_emb,
                raw_norm,
            },
        )
    }

    /// Unit-norm embedding from the cached forward pass.
    pub fn embedding_from_cache(cache: &EncoderCache) -> Result<SpeakerEmbedding> {
        SpeakerEmbedding::from_raw(cache.raw_emb.clone())
    }

    /// Backprop d(loss)/d(normalized embedding) through the whole stack,
    /// returning d(loss)/d(mel input). Parameter gradients accumulate in
    /// this model (freeze by never stepping them).
    pub fn backward_mel(&mut self, cache: &EncoderCache, d_unit_emb: &[f32]) -> Mat {
        // through L2 normalization: e = r/|r|; dr = (d - (d.e)e)/|r|
        let norm = cache.raw_norm.max(1e-12) as f32;
        let unit: Vec<f32> = cache.raw_emb.iter().map(|&v| v / norm).collect();
        let proj: f32 = d_unit_emb.iter().zip(&unit).map(|(a, b)| a * b).sum();
        let d_raw: Vec<f32> = d_unit_emb
            .iter()
            .zip(&unit)
            .map(|(d, u)| (d - proj * u) / norm)
            .collect();
        self.backward_raw(cache, &d_raw)
    }

    /// Backprop from the raw (pre-normalization) embedding.
    pub fn backward_raw(&mut self, cache: &EncoderCache, d_raw: &[f32]) -> Mat {
        let pooled_mat = Mat::from_vec(1, cache.pooled.len(), cache.pooled.clone());
        let d_emb_mat = Mat::from_vec(1, d_raw.len(), d_raw.to_vec());
        let d_pooled = self.emb.backward(&pooled_mat, &d_emb_mat);
        let d_y3 = StatsPool::backward(&cache.y3, &cache.pooled, d_pooled.row(0));
        let d_y2 = self.conv3.backward(&cache.y2, &cache.y3, &d_y3);
        let d_y1 = self.conv2.backward(&cache.y1, &cache.y2, &d_y2);
        let d_normed = self.conv1.backward(&cache.normed, &cache.y1, &d_y1);
        // through scaling and mean subtraction
        let mean =
            d_normed.data.iter().map(|&v| v as f64).sum::<f64>() / d_normed.data.len() as f64;
        let mut d_mel = d_normed;
        d_mel
            .data
            .iter_mut()
            .for_each(|v| *v = (*v - mean as f32) * MEL_SCALE);
        d_mel
    }

    /// Prepare a waveform for the encoder: resample to 16 kHz and take the
    /// speaker-side mel.
    pub fn prepare_mel(&self, wave: &Waveform) -> Result<Mat> {
        let wave16 = resample(wave, self.mel_config.sample_rate_hz)?;
        let mel = mel_spectrogram(&wave16, &self.mel_config)?;
        Ok(Self::mel_as_mat(&mel))
    }

    /// Extract the unit-norm speaker embedding of a waveform.
    pub fn embed(&self, wave: &Waveform) -> Result<SpeakerEmbedding> {
        wave.require_duration(0.5)?;
        let mel = self.prepare_mel(wave)?;
        let (_, cache) = self.forward_mel(&mel);
        Self::embedding_from_cache(&cache)
    }

    /// Embed an already-extracted speaker-side mel matrix.
    pub fn embed_mel(&self, mel: &Mat) -> Result<SpeakerEmbedding> {
        if mel.rows < 10 {
            return Err(Error::TooShort {
                need_s: 0.1,
                got_s: mel.rows as f64 * self.mel_config.hop_seconds(),
            });
        }
        let (_, cache) = self.forward_mel(mel);
        Self::embedding_from_cache(&cache)
    }

    /// Classifier logits for a mel crop (training path).
    pub fn classify(&self, mel: &Mat) -> (Mat, EncoderCache) {
        let (raw, cache) = self.forward_mel(mel);
        let logits = Mat::from_vec(1, self.classifier.w.rows, self.classifier.forward_vec(&raw));
        (logits, cache)
    }

    pub fn n_classes(&self) -> usize {
        self.classifier.w.rows
    }

    pub fn params(&self) -> Vec<&Param> {
        let mut v = Vec::new();
        v.extend(self.conv1.params());
        v.extend(self.conv2.params());
        v.extend(self.conv3.params());
        v.extend(self.emb.params());
        v.extend(self.classifier.params());
        v
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param> {
        let mut v = Vec::new();
        v.extend(self.conv1.params_mut());
        v.extend(self.conv2.params_mut());
        v.extend(self.conv3.params_mut());
        v.extend(self.emb.params_mut());
        v.extend(self.classifier.params_mut());
        v
    }

    pub fn zero_grads(&mut self) {
        for p in self.params_mut() {
            p.zero_grad();
        }
    }

    /// SHA-256 over the parameter bytes (freeze contract).
    pub fn param_hash(&self) -> String {
        use sha2::{Digest, Sha256};
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

#[cfg(test)]
mod tests {
    use super::*;
    use crate::testsig::voiced_vowel;

    #[test]
    fn embedding_is_unit_norm_and_deterministic() {
        let model = SpeakerEncoderModel::seeded(4, 1);
        let w = voiced_vowel(150.0, 1.0, 24000, 1);
        let e1 = model.embed(&w).unwrap();
        let e2 = model.embed(&w).unwrap();
        assert_eq!(e1.vector(), e2.vector());
        assert!((e1.cosine(&e1) - 1.0).abs() < 1e-6);
    }

    #[test]
    fn too_short_input_errors() {
        let model = SpeakerEncoderModel::seeded(4, 1);
        let w = Waveform::silence(4000, 24000);
        assert!(matches!(model.embed(&w), Err(Error::TooShort { .. })));
    }

    #[test]
    fn amplitude_scaling_leaves_embedding_nearly_unchanged() {
        let model = SpeakerEncoderModel::seeded(4, 2);
        let w = voiced_vowel(130.0, 1.0, 24000, 5);
        let half = Waveform::new(
            w.samples().iter().map(|&s| s * 0.5).collect(),
            w.sample_rate_hz(),
        )
        .unwrap();
        let double = Waveform::new(
            w.samples().iter().map(|&s| (s * 2.0).clamp(-1.0, 1.0)).collect(),
            w.sample_rate_hz(),
        )
        .unwrap();
        let e = model.embed(&w).unwrap();
        let eh = model.embed(&half).unwrap();
        let ed = model.embed(&double).unwrap();
        assert!(e.cosine(&eh) >= 0.99, "half: {}", e.cosine(&eh));
        assert!(e.cosine(&ed) >= 0.99, "double: {}", e.cosine(&ed));
    }

    /// The chain through normalization, pooling and convs must match
    /// finite differences on the mel input.
    #[test]
    fn mel_gradient_matches_finite_differences() {
        let mut model = SpeakerEncoderModel::seeded(3, 3);
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        use rand::Rng;
        let mel = Mat::from_vec(
            20,
            model.mel_config.n_mels,
            (0..20 * model.mel_config.n_mels)
                .map(|_| rng.random_range(-2.0..2.0))
                .collect(),
        );
        let d_emb: Vec<f32> = (0..EMBEDDING_DIM)
            .map(|_| rng.random_range(-1.0..1.0))
            .collect();
        let loss_of = |m: &Mat| -> f32 {
            let (raw, cache) = model.forward_mel(m);
            let _ = raw;
            let norm = cache.raw_norm.max(1e-12) as f32;
            cache
                .raw_emb
                .iter()
                .zip(&d_emb)
                .map(|(v, d)| v / norm * d)
                .sum()
        };
        let (_, cache) = model.forward_mel(&mel);
        let mut m2 = model.clone();
        let d_mel = m2.backward_mel(&cache, &d_emb);
        let h = 1e-2f32;
        for i in (0..mel.data.len()).step_by(97) {
            let mut p = mel.clone();
            p.data[i] += h;
            let mut m = mel.clone();
            m.data[i] -= h;
            let numeric = (loss_of(&p) - loss_of(&m)) / (2.0 * h);
            let diff = (numeric - d_mel.data[i]).abs();
            assert!(
                diff <= 3e-2 * numeric.abs().max(0.05),
                "idx {i}: numeric {numeric} analytic {}",
                d_mel.data[i]
            );
        }
    }
}
