//! Speaker identity: embedding network (dilated TDNN stack + statistics
//! pooling), its classification pretraining, and the cosine speaker loss
//! used to fine-tune decoders.

mod encoder;
mod loss;
mod train;

pub use encoder::{SpeakerEncoderModel, EMBEDDING_DIM};
pub use loss::cosine_speaker_loss;
pub use train::{classification_accuracy, train_speaker_encoder, SpeakerTrainLog};

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use crate::error::{Error, Result};

/// Unit-norm speaker identity vector.
#[derive(Debug, Clone, PartialEq)]
pub struct SpeakerEmbedding {
    vector: Vec<f32>,
}

impl SpeakerEmbedding {
    /// Normalize `raw` to unit L2 norm.
    pub fn from_raw(raw: Vec<f32>) -> Result<Self> {
        let norm = (raw.iter().map(|&v| (v as f64) * (v as f64)).sum::<f64>()).sqrt();
        if norm <= 1e-12 {
            return Err(Error::InvalidArgument(
                "zero-norm speaker embedding".into(),
            ));
        }
        let vector = raw.iter().map(|&v| (v as f64 / norm) as f32).collect();
        Ok(SpeakerEmbedding { vector })
    }

    pub fn vector(&self) -> &[f32] {
        &self.vector
    }

    pub fn dim(&self) -> usize {
        self.vector.len()
    }

    pub fn cosine(&self, other: &SpeakerEmbedding) -> f64 {
        self.vector
            .iter()
            .zip(&other.vector)
            .map(|(a, b)| (*a as f64) * (*b as f64))
            .sum()
    }

    pub fn as_f64(&self) -> Vec<f64> {
        self.vector.iter().map(|&v| v as f64).collect()
    }
}

/// Write an embedding as a one-line dimension header followed by raw
/// little-endian f32 values.
pub fn save_embedding(path: impl AsRef<Path>, emb: &SpeakerEmbedding) -> Result<()> {
    let path = path.as_ref();
    let mut bytes = format!("{}\n", emb.dim()).into_bytes();
    for v in emb.vector() {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(&bytes).map_err(|e| Error::io(path, e))
}

pub fn load_embedding(path: impl AsRef<Path>) -> Result<SpeakerEmbedding> {
    let path = path.as_ref();
    let mut bytes = Vec::new();
    fs::File::open(path)
        .and_then(|mut f| f.read_to_end(&mut bytes))
        .map_err(|e| Error::io(path, e))?;
    let nl = bytes
        .iter()
        .position(|&b| b == b'\n')
        .ok_or_else(|| Error::UnsupportedFormat("embedding file has no header".into()))?;
    let dim: usize = std::str::from_utf8(&bytes[..nl])
        .ok()
        .and_then(|s| s.trim().parse().ok())
        .ok_or_else(|| Error::UnsupportedFormat("bad embedding header".into()))?;
    let body = &bytes[nl + 1..];
    if body.len() != dim * 4 {
        return Err(Error::UnsupportedFormat(format!(
            "embedding body: expected {} bytes, got {}",
            dim * 4,
            body.len()
        )));
    }
    let vector: Vec<f32> = body
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect();
    // already normalized on save; renormalize defensively is not needed,
    // construct directly
    Ok(SpeakerEmbedding { vector })
}
