//! Linear projection from frontend features to cluster logits, trained
//! with cross-entropy against the k-means assignments. The frontend (the
//! backbone stand-in) is never touched. Projection logits are the soft
//! units consumed by every decoder.

use rand::seq::SliceRandom;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::frontend::FrontendFeatures;
use super::kmeans::{assign_units, UnitCodebook};
use super::SoftUnits;
use crate::error::{Error, Result};
use crate::nn::{argmax_accuracy, softmax_cross_entropy, Adam, Dense, Mat};

/// Trained linear map d_f -> k.
#[derive(Debug, Clone)]
pub struct UnitProjection {
    pub layer: Dense,
}

impl UnitProjection {
    pub fn k(&self) -> usize {
        self.layer.w.rows
    }

    pub fn in_dim(&self) -> usize {
        self.layer.w.cols
    }
}

/// Per-epoch training diagnostics.
#[derive(Debug, Clone, Default)]
pub struct ProjectionTrainLog {
    pub loss_per_epoch: Vec<f64>,
    pub accuracy_per_epoch: Vec<f64>,
}

/// Train the projection on (features, discrete unit) pairs.
pub fn train_unit_projection(
    pairs: &[(&FrontendFeatures, &[u32])],
    k: usize,
    epochs: usize,
    seed: u64,
) -> Result<(UnitProjection, ProjectionTrainLog)> {
    if pairs.is_empty() {
        return Err(Error::Train("empty projection training set".into()));
    }
    let dim = pairs[0].0.values.cols;
    let mut frames: Vec<(&[f32], u32)> = Vec::new();
    for (f, units) in pairs {
        if f.values.rows != units.len() {
            return Err(Error::DimMismatch(
                "feature frames and unit labels differ in length".into(),
            ));
        }
        for t in 0..f.values.rows {
            frames.push((f.values.row(t), units[t]));
        }
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut layer = Dense::seeded(k, dim, &mut rng);
    let mut opt = Adam::new(0.05);
    let mut log = ProjectionTrainLog::default();
    let batch = 256usize;
    let mut order: Vec<usize> = (0..frames.len()).collect();

    for _ in 0..epochs {
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0f64;
        let mut batches = 0usize;
        for chunk in order.chunks(batch) {
            let mut x = Mat::zeros(chunk.len(), dim);
            let mut labels = Vec::with_capacity(chunk.len());
            for (i, &idx) in chunk.iter().enumerate() {
                x.row_mut(i).copy_from_slice(frames[idx].0);
                labels.push(frames[idx].1);
            }
            let logits = layer.forward(&x);
            let (loss, dlogits) = softmax_cross_entropy(&logits, &labels);
            layer.backward(&x, &dlogits);
            opt.step(&mut layer.params_mut());
            epoch_loss += loss;
            batches += 1;
        }
        log.loss_per_epoch.push(epoch_loss / batches.max(1) as f64);
        // full-set accuracy
        let mut x = Mat::zeros(frames.len(), dim);
        let mut labels = Vec::with_capacity(frames.len());
        for (i, (row, label)) in frames.iter().enumerate() {
            x.row_mut(i).copy_from_slice(row);
            labels.push(*label);
        }
        log.accuracy_per_epoch
            .push(argmax_accuracy(&layer.forward(&x), &labels));
    }

    Ok((UnitProjection { layer }, log))
}

/// Project features to soft units, carrying the discrete assignment
/// alongside.
pub fn extract_soft_units(
    features: &FrontendFeatures,
    projection: &UnitProjection,
    codebook: &UnitCodebook,
) -> Result<SoftUnits> {
    if features.values.cols != projection.in_dim() {
        return Err(Error::DimMismatch(format!(
            "features have dim {}, projection expects {}",
            features.values.cols,
            projection.in_dim()
        )));
    }
    let discrete = assign_units(features, codebook)?;
    let logits = projection.layer.forward(&features.values);
    Ok(SoftUnits { logits, discrete })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::units::fit_kmeans;

    fn toy_features(n: usize, seed: u64) -> Vec<FrontendFeatures> {
        (0..n)
            .map(|i| {
                let w = crate::testsig::voiced_vowel(
                    100.0 + 17.0 * i as f64,
                    1.0,
                    24000,
                    seed + i as u64,
                );
                crate::units::extract_frontend(&w).unwrap()
            })
            .collect()
    }

    #[test]
    fn training_reaches_high_agreement() {
        // about 10k frames
        let feats = toy_features(100, 50);
        let k = 16;
        let (cb, _) = fit_kmeans(&feats, k, 1).unwrap();
        let unit_seqs: Vec<Vec<u32>> = feats
            .iter()
            .map(|f| crate::units::assign_units(f, &cb).unwrap())
            .collect();
        let pairs: Vec<(&FrontendFeatures, &[u32])> = feats
            .iter()
            .zip(&unit_seqs)
            .map(|(f, u)| (f, u.as_slice()))
            .collect();
        let (proj, log) = train_unit_projection(&pairs, k, 20, 2).unwrap();
        let final_acc = *log.accuracy_per_epoch.last().unwrap();
        assert!(final_acc >= 0.90, "accuracy {final_acc}");
        let soft = extract_soft_units(&feats[0], &proj, &cb).unwrap();
        assert_eq!(soft.logits.rows, feats[0].values.rows);
        assert_eq!(soft.logits.cols, k);
        assert_eq!(soft.discrete.len(), feats[0].values.rows);
    }

    #[test]
    fn zero_epochs_keeps_initialization() {
        let feats = toy_features(4, 60);
        let (cb, _) = fit_kmeans(&feats, 4, 1).unwrap();
        let units: Vec<Vec<u32>> = feats
            .iter()
            .map(|f| crate::units::assign_units(f, &cb).unwrap())
            .collect();
        let pairs: Vec<(&FrontendFeatures, &[u32])> = feats
            .iter()
            .zip(&units)
            .map(|(f, u)| (f, u.as_slice()))
            .collect();
        let (p0, _) = train_unit_projection(&pairs, 4, 0, 9).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let fresh = Dense::seeded(4, 26, &mut rng);
        assert_eq!(p0.layer.w.w, fresh.w.w);
    }

    #[test]
    fn same_seed_gives_identical_parameters() {
        let feats = toy_features(4, 70);
        let (cb, _) = fit_kmeans(&feats, 4, 1).unwrap();
        let units: Vec<Vec<u32>> = feats
            .iter()
            .map(|f| crate::units::assign_units(f, &cb).unwrap())
            .collect();
        let pairs: Vec<(&FrontendFeatures, &[u32])> = feats
            .iter()
            .zip(&units)
            .map(|(f, u)| (f, u.as_slice()))
            .collect();
        let (p1, _) = train_unit_projection(&pairs, 4, 5, 3).unwrap();
        let (p2, _) = train_unit_projection(&pairs, 4, 5, 3).unwrap();
        assert_eq!(p1.layer.w.w, p2.layer.w.w);
        assert_eq!(p1.layer.b.w, p2.layer.b.w);
    }

    #[test]
    fn empty_training_set_errors() {
        assert!(train_unit_projection(&[], 4, 5, 1).is_err());
    }
}
