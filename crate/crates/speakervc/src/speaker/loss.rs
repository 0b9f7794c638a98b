//! Cosine speaker loss over batches of reference (X) and generated (Y)
//! embeddings, with the analytic gradient wrt Y. Inputs need not be
//! pre-normalized; the loss normalizes internally.

use crate::error::{Error, Result};

/// loss = (1/N) * sum_i (1 - X_i . Y_i / (|X_i| |Y_i|)), in [0, 2].
/// Returns (loss, dL/dY).
pub fn cosine_speaker_loss(x: &[Vec<f64>], y: &[Vec<f64>]) -> Result<(f64, Vec<Vec<f64>>)> {
    if x.len() != y.len() {
        return Err(Error::DimMismatch(format!(
            "batch sizes differ: {} vs {}",
            x.len(),
            y.len()
        )));
    }
    if x.is_empty() {
        return Err(Error::InvalidArgument("empty batch".into()));
    }
    let n = x.len() as f64;
    let mut loss = 0.0f64;
    let mut grads = Vec::with_capacity(y.len());
    for (i, (xi, yi)) in x.iter().zip(y).enumerate() {
        if xi.len() != yi.len() {
            return Err(Error::DimMismatch(format!(
                "pair {i}: dims {} vs {}",
                xi.len(),
                yi.len()
            )));
        }
        let nx = xi.iter().map(|v| v * v).sum::<f64>().sqrt();
        let ny = yi.iter().map(|v| v * v).sum::<f64>().sqrt();
        if nx <= 1e-12 || ny <= 1e-12 {
            return Err(Error::InvalidArgument(format!(
                "pair {i}: zero-norm embedding"
            )));
        }
        let dot: f64 = xi.iter().zip(yi).map(|(a, b)| a * b).sum();
        let cos = dot / (nx * ny);
        loss += 1.0 - cos;
        // d(1 - cos)/dY = -(X/(|X||Y|) - cos * Y/|Y|^2)
        let g: Vec<f64> = xi
            .iter()
            .zip(yi)
            .map(|(a, b)| -(a / (nx * ny) - cos * b / (ny * ny)) / n)
            .collect();
        grads.push(g);
    }
    Ok((loss / n, grads))
}
