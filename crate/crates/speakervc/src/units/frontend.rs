//! Content frontend: 13 liftered mel cepstra (c1..c13, c0 excluded) and
//! delta features. Frames align 1:1 with the decoder's 10 ms mel grid;
//! every frame depends on a bounded local context, which keeps the
//! features streamable.

use crate::audio::{mel_spectrogram, MelConfig, Waveform};
use crate::error::{Error, Result};
use crate::nn::Mat;

pub const N_CEPSTRA: usize = 13;
pub const FRONTEND_DIM: usize = 2 * N_CEPSTRA;

/// Frame-level content features at the decoder frame rate.
#[derive(Debug, Clone)]
pub struct FrontendFeatures {
    /// frames x 26 (13 cepstra + 13 deltas).
    pub values: Mat,
    pub frame_rate_hz: f64,
}

impl FrontendFeatures {
    pub fn n_frames(&self) -> usize {
        self.values.rows
    }

    /// Crop to frame range [start, end).
    pub fn slice_frames(&self, start: usize, end: usize) -> FrontendFeatures {
        let end = end.min(self.values.rows);
        let start = start.min(end);
        let cols = self.values.cols;
        FrontendFeatures {
            values: Mat::from_vec(
                end - start,
                cols,
                self.values.data[start * cols..end * cols].to_vec(),
            ),
            frame_rate_hz: self.frame_rate_hz,
        }
    }
}

/// Extract content features from a 24 kHz waveform.
pub fn extract_frontend(wave: &Waveform) -> Result<FrontendFeatures> {
    let cfg = MelConfig::frontend();
    if wave.len() < 2 * cfg.hop_length {
        return Err(Error::TooShort {
            need_s: 2.0 * cfg.hop_length as f64 / cfg.sample_rate_hz as f64,
            got_s: wave.duration_s(),
        });
    }
    let mel = mel_spectrogram(wave, &cfg)?;
    let t_len = mel.n_frames();
    let n_mels = cfg.n_mels;

    // DCT-II of the log-mel rows; keep c1..c13 (c0 carries loudness/tilt)
    let mut cep = Mat::zeros(t_len, N_CEPSTRA);
    let basis: Vec<f64> = (0..N_CEPSTRA)
        .flat_map(|q| {
            (0..n_mels).map(move |j| {
                (std::f64::consts::PI * (q + 1) as f64 * (j as f64 + 0.5) / n_mels as f64).cos()
            })
        })
        .collect();
    for t in 0..t_len {
        let frame = mel.frame(t);
        for q in 0..N_CEPSTRA {
            let mut acc = 0.0f64;
            for (j, &v) in frame.iter().enumerate() {
                acc += v as f64 * basis[q * n_mels + j];
            }
            cep.row_mut(t)[q] = (acc / n_mels as f64) as f32;
        }
    }



    // delta features: +-2 frame regression with edge clamping
    let mut values = Mat::zeros(t_len, FRONTEND_DIM);
    let clamp = |t: isize| -> usize { t.clamp(0, t_len as isize - 1) as usize };
    for t in 0..t_len {
        let row = values.row_mut(t);
        row[..N_CEPSTRA].copy_from_slice(cep.row(t));
        for q in 0..N_CEPSTRA {
            let mut num = 0.0f32;
            for d in 1..=2i32 {
                let plus = cep.row(clamp(t as isize + d as isize))[q];
                let minus = cep.row(clamp(t as isize - d as isize))[q];
                num += d as f32 * (plus - minus);
            }
            row[N_CEPSTRA + q] = num / 10.0; // 2 * (1^2 + 2^2)
        }
    }

    Ok(FrontendFeatures {
        values,
        frame_rate_hz: cfg.frame_rate_hz(),
    })
}
