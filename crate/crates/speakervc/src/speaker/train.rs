//! Speaker-encoder pretraining: cross-entropy speaker classification on
//! random 2-second crops.

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::encoder::SpeakerEncoderModel;
use crate::audio::load_wav;
use crate::data::Manifest;
use crate::error::{Error, Result};
use crate::nn::{softmax_cross_entropy, Adam, Mat};

const CROP_FRAMES: usize = 200; // 2 s at 10 ms

#[derive(Debug, Clone, Default)]
pub struct SpeakerTrainLog {
    pub loss_per_epoch: Vec<f64>,
    pub accuracy_per_epoch: Vec<f64>,
}

/// Train a speaker classifier over the manifest's speakers and return the
/// encoder (classifier head included but unused at inference).
pub fn train_speaker_encoder(
    manifest: &Manifest,
    epochs: usize,
    seed: u64,
) -> Result<(SpeakerEncoderModel, SpeakerTrainLog)> {
    let speakers = manifest.speakers();
    if speakers.len() < 2 {
        return Err(Error::Train(
            "speaker training needs at least 2 speakers".into(),
        ));
    }
    for s in &speakers {
        if manifest.of_speaker(s).len() < 2 {
            return Err(Error::Train(format!(
                "speaker {s} has fewer than 2 utterances"
            )));
        }
    }

    let mut model = SpeakerEncoderModel::seeded(speakers.len(), seed);
    model.speaker_labels = speakers.clone();

    // precompute speaker-side mels
    let mut mels: Vec<(Mat, u32)> = Vec::with_capacity(manifest.len());
    for rec in &manifest.records {
        let wave = load_wav(&rec.path)?;
        let mel = model.prepare_mel(&wave)?;
        let label = speakers.iter().position(|s| *s == rec.speaker_id).unwrap() as u32;
        mels.push((mel, label));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    let mut opt = Adam::new(5e-3);
    let mut log = SpeakerTrainLog::default();
    // two random crops of every utterance per epoch
    let mut order: Vec<usize> = (0..mels.len()).chain(0..mels.len()).collect();
    let batch = 8usize;

    for epoch in 0..epochs {
        // settle the oscillation toward the end
        opt.lr = if epoch * 6 >= epochs * 5 {
            4e-4
        } else if epoch * 3 >= epochs * 2 {
            1.5e-3
        } else {
            5e-3
        };
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0f64;
        let mut hits = 0usize;
        for chunk in order.chunks(batch) {
            for &idx in chunk {
                let (mel, label) = &mels[idx];
                let crop = random_crop(mel, CROP_FRAMES, &mut rng);
                let (logits, cache) = model.classify(&crop);
                let (loss, dlogits) = softmax_cross_entropy(&logits, &[*label]);
                epoch_loss += loss;
                let arg = logits
                    .row(0)
                    .iter()
                    .enumerate()
                    .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
                    .unwrap()
                    .0 as u32;
                if arg == *label {
                    hits += 1;
                }
                // backward: classifier, then the embedding stack;
                // gradients accumulate over the minibatch
                let raw_mat = Mat::from_vec(1, cache.raw_emb.len(), cache.raw_emb.clone());
                let d_raw = model.classifier.backward(&raw_mat, &dlogits);
                model.backward_raw(&cache, d_raw.row(0));
            }
            opt.step(&mut model.params_mut());
        }
        log.loss_per_epoch.push(epoch_loss / order.len() as f64);
        log.accuracy_per_epoch.push(hits as f64 / order.len() as f64);
    }

    Ok((model, log))
}

fn random_crop(mel: &Mat, frames: usize, rng: &mut ChaCha8Rng) -> Mat {
    if mel.rows <= frames {
        return mel.clone();
    }
    let start = rng.random_range(0..mel.rows - frames);
    Mat::from_vec(
        frames,
        mel.cols,
        mel.data[start * mel.cols..(start + frames) * mel.cols].to_vec(),
    )
}

/// Classification accuracy of a trained model over full utterances
/// (diagnostic; used by tests and the chance-level contract).
pub fn classification_accuracy(model: &SpeakerEncoderModel, manifest: &Manifest) -> Result<f64> {
    let speakers = model.speaker_labels.clone();
    let mut hits = 0usize;
    for rec in &manifest.records {
        let wave = load_wav(&rec.path)?;
        let mel = model.prepare_mel(&wave)?;
        let (logits, _) = model.classify(&mel);
        let arg = logits
            .row(0)
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
            .unwrap()
            .0;
        if speakers.get(arg).map(|s| s == &rec.speaker_id) == Some(true) {
            hits += 1;
        }
    }
    Ok(hits as f64 / manifest.len().max(1) as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::generate_toy_corpus;

    #[test]
    fn single_speaker_manifest_errors() {
        let dir = tempfile::tempdir().unwrap();
        let m = generate_toy_corpus(2, 2, 1, dir.path()).unwrap();
        let one = Manifest::new(m.records[..2].to_vec()).unwrap();
        assert!(train_speaker_encoder(&one, 1, 1).is_err());
    }

    #[test]
    fn zero_epochs_is_chance_level() {
        let dir = tempfile::tempdir().unwrap();
        let m = generate_toy_corpus(5, 2, 2, dir.path()).unwrap();
        let (model, log) = train_speaker_encoder(&m, 0, 3).unwrap();
        assert!(log.accuracy_per_epoch.is_empty());
        let acc = classification_accuracy(&model, &m).unwrap();
        // random-init classifier on 5 classes: near 1/5
        assert!(acc <= 0.25 + 0.30, "acc {acc}");
    }

    #[test]
    fn same_seed_reproduces_parameters() {
        let dir = tempfile::tempdir().unwrap();
        let m = generate_toy_corpus(3, 2, 5, dir.path()).unwrap();
        let (m1, _) = train_speaker_encoder(&m, 2, 7).unwrap();
        let (m2, _) = train_speaker_encoder(&m, 2, 7).unwrap();
        for (a, b) in m1.params().iter().zip(m2.params().iter()) {
            assert_eq!(a.w, b.w);
        }
    }

    #[test]
    fn small_corpus_training_separates_speakers() {
        let dir = tempfile::tempdir().unwrap();
        let m = generate_toy_corpus(4, 4, 9, dir.path()).unwrap();
        let (model, _) = train_speaker_encoder(&m, 25, 11).unwrap();
        let final_acc = classification_accuracy(&model, &m).unwrap();
        assert!(final_acc >= 0.8, "training accuracy {final_acc}");
        // same/different speaker separation on the training data itself
        let e: Vec<(String, crate::speaker::SpeakerEmbedding)> = m
            .records
            .iter()
            .map(|r| {
                let w = load_wav(&r.path).unwrap();
                (r.speaker_id.clone(), model.embed(&w).unwrap())
            })
            .collect();
        let mut same = Vec::new();
        let mut diff = Vec::new();
        for i in 0..e.len() {
            for j in i + 1..e.len() {
                let cos = e[i].1.cosine(&e[j].1);
                if e[i].0 == e[j].0 {
                    same.push(cos);
                } else {
                    diff.push(cos);
                }
            }
        }
        let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len().max(1) as f64;
        assert!(
            mean(&same) > mean(&diff),
            "same {} vs diff {}",
            mean(&same),
            mean(&diff)
        );
    }
}
