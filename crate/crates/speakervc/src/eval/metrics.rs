//! EER and DET computation. The equal error rate is the crossing of the
//! false-accept and false-reject curves over the sorted score thresholds,
//! with linear interpolation in rate space between bracketing thresholds
//! (so it is exactly invariant under strictly increasing score
//! transforms).

use super::TrialLabel;
use crate::error::{Error, Result};

/// (FAR, FRR) at each candidate threshold, ascending. The convention is
/// accept iff score >= threshold; a sentinel above the maximum score
/// closes the curve at (0, 1).
fn rate_curve(scores: &[f64], labels: &[TrialLabel]) -> Result<(Vec<f64>, Vec<f64>, Vec<f64>)> {
    if scores.len() != labels.len() {
        return Err(Error::DimMismatch(
            "scores and labels differ in length".into(),
        ));
    }
    let n_target = labels.iter().filter(|l| **l == TrialLabel::Target).count();
    let n_nontarget = labels.len() - n_target;
    if n_target == 0 || n_nontarget == 0 {
        return Err(Error::Protocol(
            "need at least one target and one nontarget trial".into(),
        ));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].partial_cmp(&scores[b]).unwrap());

    // distinct thresholds, ascending, plus a sentinel above the max
    let mut thresholds: Vec<f64> = Vec::with_capacity(scores.len() + 1);
    for &i in &order {
        if thresholds.last() != Some(&scores[i]) {
            thresholds.push(scores[i]);
        }
    }
    let max = *thresholds.last().unwrap();
    thresholds.push(max + 1.0 + max.abs());

    // counting pass: for ascending thresholds, FAR(t) = #{nontarget >= t},
    // FRR(t) = #{target < t}
    let mut fars = Vec::with_capacity(thresholds.len());
    let mut frrs = Vec::with_capacity(thresholds.len());
    let mut idx = 0usize; // scores below the current threshold, via `order`
    let mut targets_below = 0usize;
    let mut nontargets_below = 0usize;
    for &t in &thresholds {
        while idx < order.len() && scores[order[idx]] < t {
            match labels[order[idx]] {
                TrialLabel::Target => targets_below += 1,
                TrialLabel::Nontarget => nontargets_below += 1,
            }
            idx += 1;
        }
        fars.push((n_nontarget - nontargets_below) as f64 / n_nontarget as f64);
        frrs.push(targets_below as f64 / n_target as f64);
    }
    Ok((thresholds, fars, frrs))
}

/// Equal error rate and the threshold at which it is attained.
pub fn compute_eer(scores: &[f64], labels: &[TrialLabel]) -> Result<(f64, f64)> {
    let (thresholds, fars, frrs) = rate_curve(scores, labels)?;
    // g(t) = FAR - FRR is non-increasing; find the sign change
    for i in 0..thresholds.len() {
        let g = fars[i] - frrs[i];
        if g == 0.0 {
            return Ok((fars[i], thresholds[i]));
        }
        if g < 0.0 {
            if i == 0 {
                return Ok((fars[0].max(frrs[0]).min(fars[0]).max(0.0), thresholds[0]));
            }
            // interpolate between i-1 (g > 0) and i (g < 0) in rate space
            let (f1, r1) = (fars[i - 1], frrs[i - 1]);
            let (f2, r2) = (fars[i], frrs[i]);
            let denom = (f1 - r1) + (r2 - f2);
            let alpha = if denom.abs() < 1e-300 {
                0.5
            } else {
                (f1 - r1) / denom
            };
            let eer = f1 + alpha * (f2 - f1);
            let thr = thresholds[i - 1] + alpha * (thresholds[i] - thresholds[i - 1]);
            return Ok((eer, thr));
        }
    }
    // curve never crossed: separable with FAR hitting 0 before FRR rises
    let last = thresholds.len() - 1;
    Ok((fars[last].max(frrs[last]), thresholds[last]))
}

/// DET curve data: one (FAR, FRR) point per distinct threshold.
pub fn det_points(scores: &[f64], labels: &[TrialLabel]) -> Result<Vec<(f64, f64)>> {
    let (_, fars, frrs) = rate_curve(scores, labels)?;
    Ok(fars.into_iter().zip(frrs).collect())
}
