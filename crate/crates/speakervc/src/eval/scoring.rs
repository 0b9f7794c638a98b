//! Trial scoring: cosine similarity of speaker embeddings, with per-file
//! embedding caching. The scoring backend is the artifact's own speaker
//! encoder.

use std::collections::BTreeMap;
use std::path::PathBuf;

use rayon::prelude::*;

use super::protocol::Trial;
use crate::audio::{load_wav, Waveform};
use crate::error::{Error, Result};
use crate::speaker::{SpeakerEmbedding, SpeakerEncoderModel};

/// Cosine similarity of the two waveforms' speaker embeddings, in [-1, 1].
pub fn speaker_similarity(
    a: &Waveform,
    b: &Waveform,
    encoder: &SpeakerEncoderModel,
) -> Result<f64> {
    let ea = encoder.embed(a)?;
    let eb = encoder.embed(b)?;
    Ok(ea.cosine(&eb))
}

/// Score every trial (cosine of enrollment and test embeddings), order
/// preserved. Embeddings are computed once per distinct file.
pub fn score_trials(trials: &[Trial], encoder: &SpeakerEncoderModel) -> Result<Vec<f64>> {
    let mut paths: Vec<PathBuf> = Vec::new();
    for t in trials {
        paths.push(t.enroll_path.clone());
        paths.push(t.test_path.clone());
    }
    paths.sort();
    paths.dedup();

    let embeddings: Result<Vec<(PathBuf, SpeakerEmbedding)>> = paths
        .par_iter()
        .map(|p| {
            let wave = load_wav(p)?;
            let emb = encoder.embed(&wave)?;
            Ok((p.clone(), emb))
        })
        .collect();
    let cache: BTreeMap<PathBuf, SpeakerEmbedding> = embeddings?.into_iter().collect();

    trials
        .iter()
        .enumerate()
        .map(|(i, t)| {
            let enroll = cache.get(&t.enroll_path).ok_or_else(|| {
                Error::Protocol(format!("trial {i}: missing enrollment embedding"))
            })?;
            let test = cache
                .get(&t.test_path)
                .ok_or_else(|| Error::Protocol(format!("trial {i}: missing test embedding")))?;
            Ok(enroll.cosine(test))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::audio::save_wav;
    use crate::eval::protocol::TrialLabel;
    use crate::testsig::voiced_vowel;

    #[test]
    fn identical_file_under_two_names_scores_one() {
        let dir = tempfile::tempdir().unwrap();
        let w = voiced_vowel(220.0, 1.0, 24000, 1);
        let a = dir.path().join("a.wav");
        let b = dir.path().join("b.wav");
        save_wav(&a, &w).unwrap();
        std::fs::copy(&a, &b).unwrap();
        let encoder = SpeakerEncoderModel::seeded(2, 1);
        let trials = vec![Trial {
            enroll_utt: "a".into(),
            enroll_path: a,
            test_utt: "b".into(),
            test_path: b,
            label: TrialLabel::Target,
        }];
        let scores = score_trials(&trials, &encoder).unwrap();
        assert!((scores[0] - 1.0).abs() < 1e-6, "score = {}", scores[0]);
    }

    #[test]
    fn missing_audio_names_the_trial() {
        let encoder = SpeakerEncoderModel::seeded(2, 1);
        let trials = vec![Trial {
            enroll_utt: "x".into(),
            enroll_path: PathBuf::from("/nonexistent/x.wav"),
            test_utt: "y".into(),
            test_path: PathBuf::from("/nonexistent/y.wav"),
            label: TrialLabel::Target,
        }];
        assert!(score_trials(&trials, &encoder).is_err());
    }

    #[test]
    fn self_similarity_is_one() {
        let encoder = SpeakerEncoderModel::seeded(2, 2);
        let w = voiced_vowel(230.0, 1.0, 24000, 2);
        let s = speaker_similarity(&w, &w, &encoder).unwrap();
        assert!((s - 1.0).abs() < 1e-6);
    }
}
