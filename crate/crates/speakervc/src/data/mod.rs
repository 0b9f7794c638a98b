//! Synthetic corpus generation, JSON-lines manifests, SNR/duration
//! filtering and whisper augmentation of training data.

mod synth;

pub use synth::{
    generate_toy_corpus, render_utterance, speaker_spec, utterance_plan, SegmentKind,
    SynthSpeakerSpec, UtterancePlan,
};

use std::collections::BTreeSet;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::audio::{estimate_snr, load_wav, save_wav, whisperize};
use crate::error::{Error, Result};

/// Which excitation domain an utterance belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Domain {
    Voiced,
    Whispered,
}

/// One corpus entry; the manifest is the artifact's stand-in for dataset
/// membership.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct UtteranceRecord {
    pub utt_id: String,
    pub speaker_id: String,
    pub path: PathBuf,
    pub duration_s: f64,
    pub domain: Domain,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub snr_db: Option<f64>,
    pub text_id: String,
}

/// Ordered collection of utterance records with unique ids.
#[derive(Debug, Clone, Default)]
pub struct Manifest {
    pub records: Vec<UtteranceRecord>,
}

impl Manifest {
    pub fn new(records: Vec<UtteranceRecord>) -> Result<Self> {
        let mut seen = BTreeSet::new();
        for r in &records {
            if !seen.insert(r.utt_id.clone()) {
                return Err(Error::Manifest(format!("duplicate utt_id {}", r.utt_id)));
            }
            if r.duration_s <= 0.0 {
                return Err(Error::Manifest(format!(
                    "utt {} has non-positive duration",
                    r.utt_id
                )));
            }
        }
        Ok(Manifest { records })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut records = Vec::new();
        for (i, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let rec: UtteranceRecord = serde_json::from_str(line).map_err(|e| {
                Error::Manifest(format!("{}:{}: {e}", path.display(), i + 1))
            })?;
            records.push(rec);
        }
        Manifest::new(records)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut out = Vec::new();
        for r in &self.records {
            serde_json::to_writer(&mut out, r)
                .map_err(|e| Error::Manifest(format!("serialize {}: {e}", r.utt_id)))?;
            out.push(b'\n');
        }
        let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
        f.write_all(&out).map_err(|e| Error::io(path, e))
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// Distinct speaker ids, ordered.
    pub fn speakers(&self) -> Vec<String> {
        let set: BTreeSet<String> = self.records.iter().map(|r| r.speaker_id.clone()).collect();
        set.into_iter().collect()
    }

    pub fn by_id(&self, utt_id: &str) -> Option<&UtteranceRecord> {
        self.records.iter().find(|r| r.utt_id == utt_id)
    }

    /// Records of one speaker, in manifest order.
    pub fn of_speaker(&self, speaker_id: &str) -> Vec<&UtteranceRecord> {
        self.records
            .iter()
            .filter(|r| r.speaker_id == speaker_id)
            .collect()
    }
}

/// Keep records with `snr_db >= min_snr_db` and `duration_s >=
/// min_duration_s`, preserving order. Errors if any record is missing its
/// SNR estimate.
pub fn filter_manifest(m: &Manifest, min_snr_db: f64, min_duration_s: f64) -> Result<Manifest> {
    for r in &m.records {
        if r.snr_db.is_none() {
            return Err(Error::Manifest(format!(
                "record {} has no snr_db; run SNR estimation first",
                r.utt_id
            )));
        }
    }
    let records = m
        .records
        .iter()
        .filter(|r| r.snr_db.unwrap() >= min_snr_db && r.duration_s >= min_duration_s)
        .cloned()
        .collect();
    Manifest::new(records)
}

/// Populate `snr_db` on every record by running the SNR estimator over the
/// referenced audio.
pub fn annotate_snr(m: &Manifest) -> Result<Manifest> {
    let records: Result<Vec<UtteranceRecord>> = m
        .records
        .par_iter()
        .map(|r| {
            let wave = load_wav(&r.path)?;
            let snr = estimate_snr(&wave)?;
            let mut rec = r.clone();
            rec.snr_db = Some(snr);
            Ok(rec)
        })
        .collect();
    Manifest::new(records?)
}

/// Emit whisperized copies of every (voiced) record into `out_dir`.
/// Output ids carry the `_whisp` suffix; text ids are preserved so every
/// whispered record keeps a voiced sibling.
pub fn whisper_augment(m: &Manifest, out_dir: impl AsRef<Path>) -> Result<Manifest> {
    let out_dir = out_dir.as_ref();
    for r in &m.records {
        if r.domain == Domain::Whispered {
            return Err(Error::Manifest(format!(
                "record {} is already whispered",
                r.utt_id
            )));
        }
    }
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let records: Result<Vec<UtteranceRecord>> = m
        .records
        .par_iter()
        .map(|r| {
            let wave = load_wav(&r.path)?;
            let wh = whisperize(&wave)?;
            let utt_id = format!("{}_whisp", r.utt_id);
            let path = out_dir.join(format!("{utt_id}.wav"));
            save_wav(&path, &wh)?;
            let snr = estimate_snr(&wh).ok();
            Ok(UtteranceRecord {
                utt_id,
                speaker_id: r.speaker_id.clone(),
                path,
                duration_s: wh.duration_s(),
                domain: Domain::Whispered,
                snr_db: snr,
                text_id: r.text_id.clone(),
            })
        })
        .collect();
    Manifest::new(records?)
}

/// FNV-1a over byte chunks; the stable per-item randomness root used by
/// corpus synthesis so parallel execution cannot change any output byte.
pub fn stable_hash(parts: &[&[u8]]) -> u64 {
    let mut h = 0xcbf29ce484222325u64;
    for p in parts {
        for &b in *p {
            h ^= b as u64;
            h = h.wrapping_mul(0x100000001b3);
        }
        h ^= 0x1f;
        h = h.wrapping_mul(0x100000001b3);
    }
    h
}

#[cfg(test)]
mod tests {
    use super::*;

    fn record(id: &str, snr: Option<f64>, dur: f64) -> UtteranceRecord {
        UtteranceRecord {
            utt_id: id.into(),
            speaker_id: "spk".into(),
            path: PathBuf::from("/dev/null"),
            duration_s: dur,
            domain: Domain::Voiced,
            snr_db: snr,
            text_id: "txt".into(),
        }
    }

    #[test]
    fn filter_keeps_the_boundary() {
        let m = Manifest::new(vec![
            record("a", Some(9.9), 2.0),
            record("b", Some(10.0), 2.0),
        ])
        .unwrap();
        let f = filter_manifest(&m, 10.0, 1.0).unwrap();
        assert_eq!(f.len(), 1);
        assert_eq!(f.records[0].utt_id, "b");
    }

    #[test]
    fn filter_of_empty_is_empty() {
        let m = Manifest::default();
        assert!(filter_manifest(&m, 10.0, 1.0).unwrap().is_empty());
    }

    #[test]
    fn filter_is_identity_when_all_pass() {
        let m = Manifest::new(vec![
            record("a", Some(30.0), 2.0),
            record("b", Some(25.0), 3.0),
        ])
        .unwrap();
        let f = filter_manifest(&m, 10.0, 1.0).unwrap();
        assert_eq!(f.len(), 2);
        let f2 = filter_manifest(&f, 10.0, 1.0).unwrap();
        assert_eq!(f2.len(), 2); // idempotent
    }

    #[test]
    fn filter_names_offending_record() {
        let m = Manifest::new(vec![record("needs_snr", None, 2.0)]).unwrap();
        match filter_manifest(&m, 10.0, 1.0) {
            Err(Error::Manifest(msg)) => assert!(msg.contains("needs_snr")),
            other => panic!("expected manifest error, got {other:?}"),
        }
    }

    #[test]
    fn duplicate_ids_rejected() {
        assert!(Manifest::new(vec![record("x", None, 1.0), record("x", None, 1.0)]).is_err());
    }

    #[test]
    fn manifest_round_trips_as_jsonl() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.jsonl");
        let m = Manifest::new(vec![
            record("a", Some(12.5), 2.0),
            record("b", None, 3.25),
        ])
        .unwrap();
        m.save(&path).unwrap();
        let back = Manifest::load(&path).unwrap();
        assert_eq!(back.len(), 2);
        assert_eq!(back.records[0].snr_db, Some(12.5));
        assert_eq!(back.records[1].snr_db, None);
        assert_eq!(back.records[1].duration_s, 3.25);
    }

    #[test]
    fn stable_hash_distinguishes_part_boundaries() {
        assert_ne!(
            stable_hash(&[b"ab", b"c"]),
            stable_hash(&[b"a", b"bc"])
        );
    }
}
