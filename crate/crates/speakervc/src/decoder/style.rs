//! Acoustic style encoder: a small convolutional stack with temporal mean
//! pooling that turns a mel fragment into an utterance-level style
//! vector.

use rand_chacha::ChaCha8Rng;

use crate::audio::MelSpectrogram;
use crate::error::{Error, Result};
use crate::nn::{Conv1d, Dense, Mat, Param};

pub const STYLE_DIM: usize = 32;
const CHANNELS: usize = 48;
const MEL_SCALE: f32 = 0.25;

/// Utterance-level acoustic style vector.
#[derive(Debug, Clone, PartialEq)]
pub struct StyleVector {
    pub vector: Vec<f32>,
}

impl StyleVector {
    pub fn cosine(&self, other: &StyleVector) -> f64 {
        let dot: f64 = self
            .vector
            .iter()
            .zip(&other.vector)
            .map(|(a, b)| (*a as f64) * (*b as f64))
            .sum();
        let na: f64 = self.vector.iter().map(|&v| (v as f64) * (v as f64)).sum();
        let nb: f64 = other.vector.iter().map(|&v| (v as f64) * (v as f64)).sum();
        if na <= 0.0 || nb <= 0.0 {
            return 0.0;
        }
        dot / (na * nb).sqrt()
    }
}

#[derive(Debug, Clone)]
pub struct StyleEncoder {
    conv1: Conv1d,
    conv2: Conv1d,
    head: Dense,
}

pub struct StyleCache {
    normed: Mat,
    y1: Mat,
    y2: Mat,
    pooled: Vec<f32>,
}

impl StyleEncoder {
    pub fn seeded(n_mels: usize, rng: &mut ChaCha8Rng) -> Self {
        StyleEncoder {
            conv1: Conv1d::seeded(CHANNELS, n_mels, 5, 1, true, rng),
            conv2: Conv1d::seeded(CHANNELS, CHANNELS, 3, 1, true, rng),
            head: Dense::seeded(STYLE_DIM, CHANNELS, rng),
        }
    }

    fn normalize(mel: &Mat) -> Mat {
        let mean =
            mel.data.iter().map(|&v| v as f64).sum::<f64>() / mel.data.len().max(1) as f64;
        let mut out = mel.clone();
        out.data
            .iter_mut()
            .for_each(|v| *v = (*v - mean as f32) * MEL_SCALE);
        out
    }

    pub fn forward_mat(&self, mel: &Mat) -> (StyleVector, StyleCache) {
        let normed = Self::normalize(mel);
        let y1 = self.conv1.forward(&normed);
        let y2 = self.conv2.forward(&y1);
        // temporal mean pooling
        let t_len = y2.rows.max(1) as f32;
        let mut pooled = vec![0.0f32; y2.cols];
        for t in 0..y2.rows {
            for (j, p) in pooled.iter_mut().enumerate() {
                *p += y2.row(t)[j];
            }
        }
        pooled.iter_mut().for_each(|v| *v /= t_len);
        let vector = self.head.forward_vec(&pooled);
        (
            StyleVector { vector },
            StyleCache {
                normed,
                y1,
                y2,
                pooled,
            },
        )
    }

    /// Backprop d(loss)/d(style vector); parameter gradients accumulate,
    /// the mel-input gradient is discarded (style inputs are ground truth).
    pub fn backward(&mut self, cache: &StyleCache, d_style: &[f32]) {
        let pooled_mat = Mat::from_vec(1, cache.pooled.len(), cache.pooled.clone());
        let d_vec = Mat::from_vec(1, d_style.len(), d_style.to_vec());
        let d_pooled = self.head.backward(&pooled_mat, &d_vec);
        let t_len = cache.y2.rows.max(1) as f32;
        let mut d_y2 = Mat::zeros(cache.y2.rows, cache.y2.cols);
        for t in 0..cache.y2.rows {
            for j in 0..cache.y2.cols {
                d_y2.row_mut(t)[j] = d_pooled.row(0)[j] / t_len;
            }
        }
        let d_y1 = self.conv2.backward(&cache.y1, &cache.y2, &d_y2);
        let _ = self.conv1.backward(&cache.normed, &cache.y1, &d_y1);
    }

    /// Encode a mel fragment (at least 10 frames).
    pub fn encode(&self, mel: &MelSpectrogram) -> Result<StyleVector> {
        if mel.n_frames() < 10 {
            return Err(Error::TooShort {
                need_s: 10.0 * mel.config().hop_seconds(),
                got_s: mel.n_frames() as f64 * mel.config().hop_seconds(),
            });
        }
        let mat = Mat::from_vec(mel.n_frames(), mel.n_mels(), mel.values().to_vec());
        Ok(self.forward_mat(&mat).0)
    }

    pub fn params(&self) -> Vec<&Param> {
        let mut v = Vec::new();
        v.extend(self.conv1.params());
        v.extend(self.conv2.params());
        v.extend(self.head.params());
        v
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param> {
        let mut v = Vec::new();
        v.extend(self.conv1.params_mut());
        v.extend(self.conv2.params_mut());
        v.extend(self.head.params_mut());
        v
    }
}
