//! Trial protocol construction for the five evaluation conditions.
//! Conversion-based kinds emit both the trial list and the conversion
//! tasks that must be run to produce the test audio.

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{Domain, Manifest, UtteranceRecord};
use crate::error::{Error, Result};

/// Test-utterance length filter for the similarity conditions, seconds
/// (closed interval).
pub const SIM_MIN_S: f64 = 4.0;
pub const SIM_MAX_S: f64 = 10.0;
/// Reference clip length for the similarity conditions.
pub const SIM_REF_CLIP_S: f64 = 3.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum TrialLabel {
    Target,
    Nontarget,
}

impl fmt::Display for TrialLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TrialLabel::Target => write!(f, "target"),
            TrialLabel::Nontarget => write!(f, "nontarget"),
        }
    }
}

/// One enrollment/test pair. Enrollment is always voiced original audio.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Trial {
    pub enroll_utt: String,
    pub enroll_path: PathBuf,
    pub test_utt: String,
    pub test_path: PathBuf,
    pub label: TrialLabel,
}

/// A conversion that must be produced before scoring.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ConversionTask {
    pub source_utt: String,
    pub source_path: PathBuf,
    pub reference_utt: String,
    pub reference_path: PathBuf,
    /// Crop of the reference (start_s, len_s) when the protocol asks for
    /// a clip rather than the full sample.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub reference_crop: Option<(f64, f64)>,
    pub target_speaker: String,
    pub out_name: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProtocolKind {
    /// Whisper-to-speech, converted toward the source's own speaker.
    W2sSame,
    /// Whisper-to-speech toward another speaker.
    W2sCross,
    /// Voiced source toward another speaker.
    S2sCross,
    /// Similarity against the original of a same-speaker reference clip.
    SimCrossSentence,
    /// Similarity against the original of another speaker's clip.
    SimCrossSpeaker,
}

impl ProtocolKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            ProtocolKind::W2sSame => "w2s_same",
            ProtocolKind::W2sCross => "w2s_cross",
            ProtocolKind::S2sCross => "s2s_cross",
            ProtocolKind::SimCrossSentence => "sim_cross_sentence",
            ProtocolKind::SimCrossSpeaker => "sim_cross_speaker",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "w2s_same" => Ok(ProtocolKind::W2sSame),
            "w2s_cross" => Ok(ProtocolKind::W2sCross),
            "s2s_cross" => Ok(ProtocolKind::S2sCross),
            "sim_cross_sentence" => Ok(ProtocolKind::SimCrossSentence),
            "sim_cross_speaker" => Ok(ProtocolKind::SimCrossSpeaker),
            other => Err(Error::InvalidArgument(format!(
                "unknown protocol kind {other}"
            ))),
        }
    }

    pub fn needs_whispered(&self) -> bool {
        matches!(self, ProtocolKind::W2sSame | ProtocolKind::W2sCross)
    }
}

/// A complete protocol: trials plus the conversions they depend on.
#[derive(Debug, Clone)]
pub struct Protocol {
    pub kind: ProtocolKind,
    pub trials: Vec<Trial>,
    pub conversions: Vec<ConversionTask>,
}

impl Protocol {
    pub fn n_target(&self) -> usize {
        self.trials
            .iter()
            .filter(|t| t.label == TrialLabel::Target)
            .count()
    }

    pub fn n_nontarget(&self) -> usize {
        self.trials.len() - self.n_target()
    }

    /// One line per trial: `<enroll_path> <test_path> <target|nontarget>`.
    pub fn save_trials(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut text = String::new();
        for t in &self.trials {
            text.push_str(&format!(
                "{} {} {}\n",
                t.enroll_path.display(),
                t.test_path.display(),
                t.label
            ));
        }
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    /// Load a trial list saved by `save_trials` (utterance ids are not
    /// recoverable from the text form; paths and labels are).
    pub fn load_trials(path: impl AsRef<Path>) -> Result<Vec<Trial>> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut trials = Vec::new();
        for (i, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let parts: Vec<&str> = line.split_whitespace().collect();
            if parts.len() != 3 {
                return Err(Error::Protocol(format!(
                    "{}:{}: expected `<enroll> <test> <label>`",
                    path.display(),
                    i + 1
                )));
            }
            let label = match parts[2] {
                "target" => TrialLabel::Target,
                "nontarget" => TrialLabel::Nontarget,
                other => {
                    return Err(Error::Protocol(format!(
                        "{}:{}: unknown label {other}",
                        path.display(),
                        i + 1
                    )))
                }
            };
            trials.push(Trial {
                enroll_utt: String::new(),
                enroll_path: PathBuf::from(parts[0]),
                test_utt: String::new(),
                test_path: PathBuf::from(parts[1]),
                label,
            });
        }
        Ok(trials)
    }

    pub fn save_conversions(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut out = Vec::new();
        for c in &self.conversions {
            serde_json::to_writer(&mut out, c)
                .map_err(|e| Error::Protocol(format!("serialize conversion: {e}")))?;
            out.push(b'\n');
        }
        std::fs::write(path, out).map_err(|e| Error::io(path, e))
    }

    pub fn load_conversions(path: impl AsRef<Path>) -> Result<Vec<ConversionTask>> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        text.lines()
            .filter(|l| !l.trim().is_empty())
            .map(|l| {
                serde_json::from_str(l).map_err(|e| Error::Protocol(format!("bad task line: {e}")))
            })
            .collect()
    }
}

/// Build a protocol over a voiced manifest (plus the whispered manifest
/// for whisper-to-speech kinds). Conversion outputs are referenced under
/// `conversions_dir`. Up to `nontargets_per_trial` nontarget enrollments
/// accompany every target trial.
pub fn build_protocol(
    voiced: &Manifest,
    whispered: Option<&Manifest>,
    kind: ProtocolKind,
    conversions_dir: impl AsRef<Path>,
    seed: u64,
) -> Result<Protocol> {
    let conversions_dir = conversions_dir.as_ref();
    let speakers = voiced.speakers();
    if speakers.len() < 2 {
        return Err(Error::Protocol(
            "protocol construction needs at least 2 speakers".into(),
        ));
    }
    for rec in &voiced.records {
        if rec.domain != Domain::Voiced {
            return Err(Error::Protocol(format!(
                "voiced manifest contains non-voiced record {}",
                rec.utt_id
            )));
        }
    }
    if kind.needs_whispered() {
        let w = whispered.ok_or_else(|| {
            Error::Protocol("this protocol kind requires a whispered manifest".into())
        })?;
        if w.records.iter().any(|r| r.domain != Domain::Whispered) {
            return Err(Error::Protocol(
                "whispered manifest contains non-whispered records".into(),
            ));
        }
        if w.is_empty() {
            return Err(Error::Protocol("whispered manifest is empty".into()));
        }
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x9201_0ca1);
    let by_speaker: BTreeMap<String, Vec<&UtteranceRecord>> = speakers
        .iter()
        .map(|s| (s.clone(), voiced.of_speaker(s)))
        .collect();

    let mut trials = Vec::new();
    let mut conversions = Vec::new();
    let nontargets_per_trial = 3usize;

    let mut push_conversion_trials = |source: &UtteranceRecord,
                                      target_speaker: &str,
                                      reference: &UtteranceRecord,
                                      reference_crop: Option<(f64, f64)>,
                                      rng: &mut ChaCha8Rng,
                                      trials: &mut Vec<Trial>,
                                      conversions: &mut Vec<ConversionTask>| {
        let out_name = format!("{}__to__{}.wav", source.utt_id, target_speaker);
        let test_path = conversions_dir.join(&out_name);
        conversions.push(ConversionTask {
            source_utt: source.utt_id.clone(),
            source_path: source.path.clone(),
            reference_utt: reference.utt_id.clone(),
            reference_path: reference.path.clone(),
            reference_crop,
            target_speaker: target_speaker.to_string(),
            out_name: out_name.clone(),
        });
        // target trial: enrollment from the claimed speaker, avoiding the
        // conversion reference where possible
        let pool = &by_speaker[target_speaker];
        let enroll_candidates: Vec<&&UtteranceRecord> = pool
            .iter()
            .filter(|r| r.utt_id != reference.utt_id)
            .collect();
        let enroll = if enroll_candidates.is_empty() {
            pool[rng.random_range(0..pool.len())]
        } else {
            enroll_candidates[rng.random_range(0..enroll_candidates.len())]
        };
        trials.push(Trial {
            enroll_utt: enroll.utt_id.clone(),
            enroll_path: enroll.path.clone(),
            test_utt: out_name.clone(),
            test_path: test_path.clone(),
            label: TrialLabel::Target,
        });
        // nontarget trials: enrollments of other speakers
        let mut others: Vec<&String> = by_speaker
            .keys()
            .filter(|s| s.as_str() != target_speaker)
            .collect();
        others.shuffle(rng);
        for other in others.into_iter().take(nontargets_per_trial) {
            let pool = &by_speaker[other];
            let enroll = pool[rng.random_range(0..pool.len())];
            trials.push(Trial {
                enroll_utt: enroll.utt_id.clone(),
                enroll_path: enroll.path.clone(),
                test_utt: out_name.clone(),
                test_path: test_path.clone(),
                label: TrialLabel::Nontarget,
            });
        }
    };

    match kind {
        ProtocolKind::W2sSame | ProtocolKind::W2sCross => {
            let whispered = whispered.unwrap();
            for source in &whispered.records {
                let target_speaker = match kind {
                    ProtocolKind::W2sSame => source.speaker_id.clone(),
                    _ => {
                        let others: Vec<&String> = speakers
                            .iter()
                            .filter(|s| *s != &source.speaker_id)
                            .collect();
                        others[rng.random_range(0..others.len())].clone()
                    }
                };
                let pool = &by_speaker[&target_speaker];
                // reference must not be the source's own voiced sibling
                let sibling = source.utt_id.strip_suffix("_whisp").unwrap_or("");
                let candidates: Vec<&&UtteranceRecord> =
                    pool.iter().filter(|r| r.utt_id != sibling).collect();
                if candidates.is_empty() {
                    continue;
                }
                let reference = candidates[rng.random_range(0..candidates.len())];
                push_conversion_trials(
                    source,
                    &target_speaker,
                    reference,
                    None,
                    &mut rng,
                    &mut trials,
                    &mut conversions,
                );
            }
        }
        ProtocolKind::S2sCross => {
            for source in &voiced.records {
                let others: Vec<&String> = speakers
                    .iter()
                    .filter(|s| *s != &source.speaker_id)
                    .collect();
                let target_speaker = others[rng.random_range(0..others.len())].clone();
                let pool = &by_speaker[&target_speaker];
                let reference = pool[rng.random_range(0..pool.len())];
                push_conversion_trials(
                    source,
                    &target_speaker,
                    reference,
                    None,
                    &mut rng,
                    &mut trials,
                    &mut conversions,
                );
            }
        }
        ProtocolKind::SimCrossSentence | ProtocolKind::SimCrossSpeaker => {
            for source in &voiced.records {
                if source.duration_s < SIM_MIN_S || source.duration_s > SIM_MAX_S {
                    continue;
                }
                let reference = match kind {
                    ProtocolKind::SimCrossSentence => {
                        let pool = &by_speaker[&source.speaker_id];
                        let candidates: Vec<&&UtteranceRecord> = pool
                            .iter()
                            .filter(|r| r.utt_id != source.utt_id)
                            .collect();
                        if candidates.is_empty() {
                            continue;
                        }
                        *candidates[rng.random_range(0..candidates.len())]
                    }
                    _ => {
                        let others: Vec<&String> = speakers
                            .iter()
                            .filter(|s| *s != &source.speaker_id)
                            .collect();
                        let spk = others[rng.random_range(0..others.len())];
                        let pool = &by_speaker[spk];
                        pool[rng.random_range(0..pool.len())]
                    }
                };
                let crop_start = if reference.duration_s > SIM_REF_CLIP_S {
                    rng.random_range(0.0..reference.duration_s - SIM_REF_CLIP_S)
                } else {
                    0.0
                };
                let out_name = format!(
                    "{}__to__{}.wav",
                    source.utt_id, reference.speaker_id
                );
                let test_path = conversions_dir.join(&out_name);
                conversions.push(ConversionTask {
                    source_utt: source.utt_id.clone(),
                    source_path: source.path.clone(),
                    reference_utt: reference.utt_id.clone(),
                    reference_path: reference.path.clone(),
                    reference_crop: Some((crop_start, SIM_REF_CLIP_S)),
                    target_speaker: reference.speaker_id.clone(),
                    out_name: out_name.clone(),
                });
                // similarity is computed against the reference original
                trials.push(Trial {
                    enroll_utt: reference.utt_id.clone(),
                    enroll_path: reference.path.clone(),
                    test_utt: out_name,
                    test_path,
                    label: TrialLabel::Target,
                });
            }
            if trials.is_empty() {
                return Err(Error::Protocol(format!(
                    "no test utterances between {SIM_MIN_S} and {SIM_MAX_S} seconds"
                )));
            }
        }
    }

    Ok(Protocol {
        kind,
        trials,
        conversions,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn record(utt: &str, spk: &str, dur: f64, domain: Domain) -> UtteranceRecord {
        UtteranceRecord {
            utt_id: utt.into(),
            speaker_id: spk.into(),
            path: PathBuf::from(format!("/audio/{utt}.wav")),
            duration_s: dur,
            domain,
            snr_db: Some(30.0),
            text_id: "txt".into(),
        }
    }

    fn toy_manifests() -> (Manifest, Manifest) {
        let mut voiced = Vec::new();
        let mut whisp = Vec::new();
        for s in 0..4 {
            for u in 0..3 {
                let id = format!("spk{s:03}_{u:03}");
                voiced.push(record(&id, &format!("spk{s:03}"), 3.0, Domain::Voiced));
                whisp.push(record(
                    &format!("{id}_whisp"),
                    &format!("spk{s:03}"),
                    3.0,
                    Domain::Whispered,
                ));
            }
        }
        (
            Manifest::new(voiced).unwrap(),
            Manifest::new(whisp).unwrap(),
        )
    }

    #[test]
    fn s2s_cross_covers_every_speaker_and_never_self_pairs() {
        let (voiced, _) = toy_manifests();
        let p = build_protocol(&voiced, None, ProtocolKind::S2sCross, "/conv", 1).unwrap();
        assert_eq!(p.conversions.len(), voiced.len());
        for c in &p.conversions {
            let src_spk = c.source_utt.split('_').next().unwrap();
            assert_ne!(src_spk, c.target_speaker, "self-conversion in s2s_cross");
        }
        for t in &p.trials {
            assert_ne!(t.enroll_path, t.test_path);
        }
        // every speaker appears as an enrollment and as a conversion target
        let targets: std::collections::BTreeSet<String> =
            p.conversions.iter().map(|c| c.target_speaker.clone()).collect();
        assert_eq!(targets.len(), 4);
        assert!(p.n_target() > 0 && p.n_nontarget() > 0);
    }

    #[test]
    fn w2s_same_converts_toward_own_speaker() {
        let (voiced, whisp) = toy_manifests();
        let p = build_protocol(&voiced, Some(&whisp), ProtocolKind::W2sSame, "/conv", 2).unwrap();
        assert_eq!(p.conversions.len(), whisp.len());
        for c in &p.conversions {
            let src_spk = c.source_utt.split('_').next().unwrap();
            assert_eq!(src_spk, c.target_speaker);
            assert!(c.source_utt.ends_with("_whisp"));
            // reference is never the source's own sibling
            assert_ne!(
                format!("{}_whisp", c.reference_utt),
                c.source_utt,
                "reference is the source's sibling"
            );
        }
    }

    #[test]
    fn w2s_kinds_require_the_whispered_manifest() {
        let (voiced, _) = toy_manifests();
        assert!(build_protocol(&voiced, None, ProtocolKind::W2sSame, "/conv", 1).is_err());
    }

    #[test]
    fn sim_length_filter_is_a_closed_interval() {
        let mut records = Vec::new();
        for (i, dur) in [3.9, 4.0, 10.0, 10.1].iter().enumerate() {
            records.push(record(&format!("a{i}"), "spkA", *dur, Domain::Voiced));
        }
        records.push(record("b0", "spkB", 5.0, Domain::Voiced));
        records.push(record("a9", "spkA", 5.0, Domain::Voiced));
        let m = Manifest::new(records).unwrap();
        let p = build_protocol(&m, None, ProtocolKind::SimCrossSentence, "/conv", 3).unwrap();
        let sources: Vec<&str> = p.conversions.iter().map(|c| c.source_utt.as_str()).collect();
        assert!(sources.contains(&"a1"), "4.0 s must enter");
        assert!(sources.contains(&"a2"), "10.0 s must enter");
        assert!(!sources.contains(&"a0"), "3.9 s must not enter");
        assert!(!sources.contains(&"a3"), "10.1 s must not enter");
        for c in &p.conversions {
            let (start, len) = c.reference_crop.unwrap();
            assert!((len - 3.0).abs() < 1e-9);
            assert!(start >= 0.0);
        }
    }

    #[test]
    fn construction_is_deterministic_given_seed() {
        let (voiced, whisp) = toy_manifests();
        let a = build_protocol(&voiced, Some(&whisp), ProtocolKind::W2sCross, "/c", 9).unwrap();
        let b = build_protocol(&voiced, Some(&whisp), ProtocolKind::W2sCross, "/c", 9).unwrap();
        let fmt = |p: &Protocol| {
            p.trials
                .iter()
                .map(|t| format!("{}|{}|{}", t.enroll_utt, t.test_utt, t.label))
                .collect::<Vec<_>>()
                .join("\n")
        };
        assert_eq!(fmt(&a), fmt(&b));
        // every w2s test side originates from a whispered record
        for c in &a.conversions {
            assert!(c.source_utt.ends_with("_whisp"));
        }
    }

    #[test]
    fn single_speaker_errors() {
        let m = Manifest::new(vec![
            record("x0", "spkA", 3.0, Domain::Voiced),
            record("x1", "spkA", 3.0, Domain::Voiced),
        ])
        .unwrap();
        assert!(build_protocol(&m, None, ProtocolKind::S2sCross, "/c", 1).is_err());
    }

    #[test]
    fn trials_round_trip_through_the_text_format() {
        let (voiced, _) = toy_manifests();
        let p = build_protocol(&voiced, None, ProtocolKind::S2sCross, "/conv", 4).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("protocol.txt");
        p.save_trials(&path).unwrap();
        let back = Protocol::load_trials(&path).unwrap();
        assert_eq!(back.len(), p.trials.len());
        for (a, b) in p.trials.iter().zip(&back) {
            assert_eq!(a.enroll_path, b.enroll_path);
            assert_eq!(a.test_path, b.test_path);
            assert_eq!(a.label, b.label);
        }
    }
}
