//! K-means over frontend frames: k-means++ seeding, Lloyd iterations to a
//! movement tolerance, deterministic given the seed.

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::frontend::FrontendFeatures;
use crate::error::{Error, Result};
use crate::nn::Mat;

/// Discrete unit codebook.
#[derive(Debug, Clone)]
pub struct UnitCodebook {
    /// k x d centroid matrix.
    pub centroids: Mat,
}

impl UnitCodebook {
    pub fn k(&self) -> usize {
        self.centroids.rows
    }

    pub fn dim(&self) -> usize {
        self.centroids.cols
    }
}

/// Per-iteration fitting diagnostics.
#[derive(Debug, Clone, Default)]
pub struct KmeansReport {
    pub inertia_per_iter: Vec<f64>,
    pub iterations: usize,
}

fn sq_dist(a: &[f32], b: &[f32]) -> f64 {
    let mut acc = 0.0f64;
    for (x, y) in a.iter().zip(b) {
        let d = (*x - *y) as f64;
        acc += d * d;
    }
    acc
}

/// Fit a codebook with k-means++ init and Lloyd iterations (movement
/// tolerance 1e-6, at most 100 iterations).
pub fn fit_kmeans(
    features: &[FrontendFeatures],
    k: usize,
    seed: u64,
) -> Result<(UnitCodebook, KmeansReport)> {
    if k < 2 {
        return Err(Error::InvalidArgument("k must be >= 2".into()));
    }
    let dim = features
        .first()
        .map(|f| f.values.cols)
        .ok_or_else(|| Error::InvalidArgument("no features given".into()))?;
    let frames: Vec<&[f32]> = features
        .iter()
        .flat_map(|f| (0..f.values.rows).map(move |t| f.values.row(t)))
        .collect();
    if frames.len() < 10 * k {
        return Err(Error::Train(format!(
            "k-means needs at least {} frames for k = {k}, got {}",
            10 * k,
            frames.len()
        )));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    // k-means++ seeding
    let mut centroids = Mat::zeros(k, dim);
    let first = rng.random_range(0..frames.len());
    centroids.row_mut(0).copy_from_slice(frames[first]);
    let mut d2: Vec<f64> = frames
        .iter()
        .map(|f| sq_dist(f, centroids.row(0)))
        .collect();
    for c in 1..k {
        let total: f64 = d2.iter().sum();
        let pick = if total <= 0.0 {
            rng.random_range(0..frames.len())
        } else {
            let mut target = rng.random_range(0.0..total);
            let mut idx = 0;
            for (i, &w) in d2.iter().enumerate() {
                target -= w;
                if target <= 0.0 {
                    idx = i;
                    break;
                }
            }
            idx
        };
        centroids.row_mut(c).copy_from_slice(frames[pick]);
        for (i, f) in frames.iter().enumerate() {
            let d = sq_dist(f, centroids.row(c));
            if d < d2[i] {
                d2[i] = d;
            }
        }
    }

    let mut report = KmeansReport::default();
    let mut assign = vec![0usize; frames.len()];
    let mut prev_inertia = f64::INFINITY;
    for iter in 0..100 {
        // assignment step
        let mut inertia = 0.0f64;
        for (i, f) in frames.iter().enumerate() {
            let mut best = 0usize;
            let mut best_d = f64::INFINITY;
            for c in 0..k {
                let d = sq_dist(f, centroids.row(c));
                if d < best_d {
                    best_d = d;
                    best = c;
                }
            }
            assign[i] = best;
            inertia += best_d;
        }
        debug_assert!(
            inertia <= prev_inertia + 1e-9 * prev_inertia.abs().max(1.0),
            "inertia must not increase: {prev_inertia} -> {inertia}"
        );
        prev_inertia = inertia;
        report.inertia_per_iter.push(inertia);
        report.iterations = iter + 1;

        // update step
        let mut sums = vec![0.0f64; k * dim];
        let mut counts = vec![0usize; k];
        for (i, f) in frames.iter().enumerate() {
            counts[assign[i]] += 1;
            let row = &mut sums[assign[i] * dim..(assign[i] + 1) * dim];
            for (s, &v) in row.iter_mut().zip(*f) {
                *s += v as f64;
            }
        }
        let mut movement = 0.0f64;
        for c in 0..k {
            if counts[c] == 0 {
                // re-seed an empty cluster with the point farthest from its
                // centroid (deterministic scan)
                let far = (0..frames.len())
                    .max_by(|&a, &b| {
                        sq_dist(frames[a], centroids.row(assign[a]))
                            .partial_cmp(&sq_dist(frames[b], centroids.row(assign[b])))
                            .unwrap()
                    })
                    .unwrap();
                let old = centroids.row(c).to_vec();
                centroids.row_mut(c).copy_from_slice(frames[far]);
                movement += sq_dist(&old, centroids.row(c)).sqrt();
                continue;
            }
            let row = &sums[c * dim..(c + 1) * dim];
            let old = centroids.row(c).to_vec();
            for (j, v) in centroids.row_mut(c).iter_mut().enumerate() {
                *v = (row[j] / counts[c] as f64) as f32;
            }
            movement += sq_dist(&old, centroids.row(c)).sqrt();
        }
        if movement < 1e-6 {
            break;
        }
    }

    Ok((UnitCodebook { centroids }, report))
}

/// Nearest-centroid assignment; ties break toward the lowest index.
pub fn assign_units(features: &FrontendFeatures, codebook: &UnitCodebook) -> Result<Vec<u32>> {
    if features.values.cols != codebook.dim() {
        return Err(Error::DimMismatch(format!(
            "features have dim {}, codebook {}",
            features.values.cols,
            codebook.dim()
        )));
    }
    let mut out = Vec::with_capacity(features.values.rows);
    for t in 0..features.values.rows {
        let f = features.values.row(t);
        let mut best = 0u32;
        let mut best_d = f64::INFINITY;
        for c in 0..codebook.k() {
            let d = sq_dist(f, codebook.centroids.row(c));
            if d < best_d {
                best_d = d;
                best = c as u32;
            }
        }
        out.push(best);
    }
    Ok(out)
}

/// Total inertia of features against a codebook (test/benchmark helper).
pub fn inertia(features: &[FrontendFeatures], codebook: &UnitCodebook) -> f64 {
    let mut acc = 0.0f64;
    for f in features {
        for t in 0..f.values.rows {
            let row = f.values.row(t);
            let best = (0..codebook.k())
                .map(|c| sq_dist(row, codebook.centroids.row(c)))
                .fold(f64::INFINITY, f64::min);
            acc += best;
        }
    }
    acc
}
