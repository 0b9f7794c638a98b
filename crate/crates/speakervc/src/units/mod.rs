//! Speaker-stripped content representation: cepstral frontend features,
//! k-means discrete units and the trained linear projection that yields
//! soft units (per-frame cluster logits).

mod frontend;
mod kmeans;
mod projection;

pub use frontend::{extract_frontend, FrontendFeatures, FRONTEND_DIM};
pub use kmeans::{assign_units, fit_kmeans, inertia, KmeansReport, UnitCodebook};
pub use projection::{extract_soft_units, train_unit_projection, ProjectionTrainLog, UnitProjection};

use crate::nn::Mat;

/// Per-frame cluster logits plus the discrete assignments they
/// approximate.
#[derive(Debug, Clone)]
pub struct SoftUnits {
    /// frames x k logits from the trained projection.
    pub logits: Mat,
    /// Nearest-centroid assignment per frame.
    pub discrete: Vec<u32>,
}

impl SoftUnits {
    pub fn n_frames(&self) -> usize {
        self.logits.rows
    }

    pub fn k(&self) -> usize {
        self.logits.cols
    }

    /// Fraction of frames where argmax(logits) equals the discrete unit.
    pub fn argmax_agreement(&self) -> f64 {
        crate::nn::argmax_accuracy(&self.logits, &self.discrete)
    }
}
