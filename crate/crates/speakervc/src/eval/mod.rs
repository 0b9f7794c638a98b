//! Verification-style evaluation: trial protocols over the five
//! conditions, cosine scoring with the artifact's own speaker encoder,
//! EER with linear ROC interpolation, DET data and report emission.

mod metrics;
mod protocol;
mod scoring;

pub use metrics::{compute_eer, det_points};
pub use protocol::{build_protocol, ConversionTask, Protocol, ProtocolKind, Trial, TrialLabel};
pub use scoring::{score_trials, speaker_similarity};

use std::path::Path;

use serde::Serialize;

use crate::error::{Error, Result};

/// Evaluation report; serialized as JSON. Contains no wall-clock fields,
/// so reruns with identical inputs are byte-identical.
#[derive(Debug, Clone, Serialize)]
pub struct EvalReport {
    pub protocol_kind: String,
    pub backend: String,
    pub n_target: usize,
    pub n_nontarget: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub eer: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub threshold: Option<f64>,
    pub mean_target_similarity: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mean_nontarget_similarity: Option<f64>,
}

impl EvalReport {
    /// Assemble from scored trials. EER appears only when both classes
    /// are present.
    pub fn from_scores(
        kind: &str,
        backend: &str,
        scores: &[f64],
        labels: &[TrialLabel],
    ) -> Result<Self> {
        if scores.len() != labels.len() {
            return Err(Error::DimMismatch(
                "scores and labels differ in length".into(),
            ));
        }
        let targets: Vec<f64> = scores
            .iter()
            .zip(labels)
            .filter(|(_, l)| **l == TrialLabel::Target)
            .map(|(s, _)| *s)
            .collect();
        let nontargets: Vec<f64> = scores
            .iter()
            .zip(labels)
            .filter(|(_, l)| **l == TrialLabel::Nontarget)
            .map(|(s, _)| *s)
            .collect();
        let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len().max(1) as f64;
        let (eer, threshold) = if !targets.is_empty() && !nontargets.is_empty() {
            let (e, t) = compute_eer(scores, labels)?;
            (Some(e), Some(t))
        } else {
            (None, None)
        };
        Ok(EvalReport {
            protocol_kind: kind.to_string(),
            backend: backend.to_string(),
            n_target: targets.len(),
            n_nontarget: nontargets.len(),
            eer,
            threshold,
            mean_target_similarity: mean(&targets),
            mean_nontarget_similarity: if nontargets.is_empty() {
                None
            } else {
                Some(mean(&nontargets))
            },
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let text = serde_json::to_string_pretty(self)
            .map_err(|e| Error::Protocol(format!("serialize report: {e}")))?;
        std::fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
    }
}

/// Write scores one-per-line, aligned with the protocol.
pub fn save_scores(path: impl AsRef<Path>, scores: &[f64]) -> Result<()> {
    let path = path.as_ref();
    let mut text = String::new();
    for s in scores {
        text.push_str(&format!("{s:.9}\n"));
    }
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn load_scores(path: impl AsRef<Path>) -> Result<Vec<f64>> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| {
            l.trim()
                .parse::<f64>()
                .map_err(|e| Error::Protocol(format!("bad score line {l:?}: {e}")))
        })
        .collect()
}
