//! Staged decoder training. Stage 1 minimizes per-bin L1 mel
//! reconstruction on random crops; stage 2 trains the prosody predictors
//! alone; stage 3 adds the cosine speaker loss (through the frozen mel
//! adaptor and speaker encoder) to the reconstruction loss. Whispered
//! records train against their voiced siblings, which is what makes
//! whisper-to-speech conversion work.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::model::DecoderModel;
use super::prosody::{extract_prosody_targets, ProsodyTargets};
use crate::adaptor::MelAdaptorModel;
use crate::audio::{load_wav, mel_spectrogram, Waveform};
use crate::data::{Domain, Manifest};
use crate::error::{Error, Result};
use crate::nn::{l1_loss, Adam, Mat};
use crate::speaker::{cosine_speaker_loss, SpeakerEmbedding, SpeakerEncoderModel};
use crate::units::{extract_frontend, extract_soft_units, SoftUnits, UnitCodebook, UnitProjection};

/// One training pair: content units from the source domain, everything
/// else from the voiced target.
pub struct TrainItem {
    pub utt_id: String,
    pub speaker_id: String,
    pub units: SoftUnits,
    /// frames x n_mels target (decoder parameterization).
    pub target_mel: Mat,
    pub prosody: ProsodyTargets,
    /// Voiced target audio, frame-aligned with `target_mel`.
    pub wave: Waveform,
    pub frames: usize,
}

/// Prepared corpus plus per-item speaker embeddings for conditioning.
pub struct TrainingSet {
    pub items: Vec<TrainItem>,
    pub embeddings: Vec<SpeakerEmbedding>,
    pub by_speaker: BTreeMap<String, Vec<usize>>,
}

/// Training stage plan.
#[derive(Debug, Clone)]
pub struct TrainPlan {
    pub stage: u8,
    pub epochs: usize,
    pub seed: u64,
    pub sl_weight: f64,
    pub crop_max_s: f64,
    pub lr: f32,
}

impl TrainPlan {
    pub fn stage1(epochs: usize, seed: u64) -> Self {
        TrainPlan {
            stage: 1,
            epochs,
            seed,
            sl_weight: 0.0,
            crop_max_s: 4.0,
            lr: 2e-3,
        }
    }

    pub fn stage2(epochs: usize, seed: u64) -> Self {
        TrainPlan {
            stage: 2,
            epochs,
            seed,
            sl_weight: 0.0,
            crop_max_s: 4.0,
            lr: 2e-3,
        }
    }

    pub fn stage3(epochs: usize, seed: u64, sl_weight: f64) -> Self {
        TrainPlan {
            stage: 3,
            epochs,
            seed,
            sl_weight,
            crop_max_s: 4.0,
            lr: 5e-4,
        }
    }
}

/// Per-epoch loss report; `total = l1 + sl_weight * sl` exactly.
#[derive(Debug, Clone, Default, serde::Serialize)]
pub struct EpochStats {
    pub stage: u8,
    pub epoch: usize,
    pub l1: f64,
    pub sl: f64,
    pub pitch: f64,
    pub energy: f64,
    pub total: f64,
}

/// Build the training set: units from each record's own audio, targets
/// from the voiced sibling (for whispered records) or itself.
pub fn prepare_training_set(
    manifest: &Manifest,
    codebook: &UnitCodebook,
    projection: &UnitProjection,
    spk_encoder: &SpeakerEncoderModel,
) -> Result<TrainingSet> {
    let mut items = Vec::new();
    for rec in &manifest.records {
        let source_wave = load_wav(&rec.path)?;
        let target_rec = match rec.domain {
            Domain::Voiced => rec,
            Domain::Whispered => {
                let sibling_id = rec.utt_id.strip_suffix("_whisp").ok_or_else(|| {
                    Error::Manifest(format!(
                        "whispered record {} has no _whisp suffix to derive its sibling",
                        rec.utt_id
                    ))
                })?;
                manifest.by_id(sibling_id).ok_or_else(|| {
                    Error::Manifest(format!(
                        "whispered record {} has no voiced sibling {sibling_id}",
                        rec.utt_id
                    ))
                })?
            }
        };
        let target_wave = if target_rec.utt_id == rec.utt_id {
            source_wave.clone()
        } else {
            load_wav(&target_rec.path)?
        };
        let feats = extract_frontend(&source_wave)?;
        let units = extract_soft_units(&feats, projection, codebook)?;
        let mel_cfg = crate::audio::MelConfig::decoder();
        let mel = mel_spectrogram(&target_wave, &mel_cfg)?;
        let prosody = extract_prosody_targets(&target_wave, &mel_cfg)?;
        let frames = units
            .n_frames()
            .min(mel.n_frames())
            .min(prosody.len());
        if frames < 20 {
            continue;
        }
        let target_mel = Mat::from_vec(
            frames,
            mel.n_mels(),
            mel.values()[..frames * mel.n_mels()].to_vec(),
        );
        let units = SoftUnits {
            logits: Mat::from_vec(
                frames,
                units.logits.cols,
                units.logits.data[..frames * units.logits.cols].to_vec(),
            ),
            discrete: units.discrete[..frames].to_vec(),
        };
        items.push(TrainItem {
            utt_id: rec.utt_id.clone(),
            speaker_id: rec.speaker_id.clone(),
            units,
            target_mel,
            prosody: prosody.slice(0, frames),
            wave: target_wave,
            frames,
        });
    }
    if items.is_empty() {
        return Err(Error::Train("no usable training items".into()));
    }
    let mut embeddings = Vec::with_capacity(items.len());
    for item in &items {
        embeddings.push(spk_encoder.embed(&item.wave)?);
    }
    let mut by_speaker: BTreeMap<String, Vec<usize>> = BTreeMap::new();
    for (i, item) in items.iter().enumerate() {
        by_speaker.entry(item.speaker_id.clone()).or_default().push(i);
    }
    Ok(TrainingSet {
        items,
        embeddings,
        by_speaker,
    })
}

/// Run one training stage. The adaptor and speaker encoder are borrowed
/// mutably for gradient propagation but stay frozen; their parameter
/// hashes are checked before and after.
pub fn train_stage(
    model: &mut DecoderModel,
    plan: &TrainPlan,
    set: &TrainingSet,
    adaptor: &mut MelAdaptorModel,
    spk_encoder: &mut SpeakerEncoderModel,
) -> Result<Vec<EpochStats>> {
    if plan.stage < 1 || plan.stage > 3 {
        return Err(Error::InvalidArgument(format!(
            "unknown training stage {}",
            plan.stage
        )));
    }
    if model.completed_stage + 1 != plan.stage {
        return Err(Error::Checkpoint(format!(
            "stage order violation: stage {} requested but model has completed stage {}",
            plan.stage, model.completed_stage
        )));
    }
    let adaptor_hash = adaptor.param_hash();
    let encoder_hash = spk_encoder.param_hash();

    let stats = match plan.stage {
        2 => prosody_epochs(model, plan, set)?,
        _ => recon_epochs(model, plan, set, adaptor, spk_encoder)?,
    };

    if adaptor.param_hash() != adaptor_hash {
        return Err(Error::Train(
            "frozen-adaptor contract violated: parameters changed during decoder training".into(),
        ));
    }
    if spk_encoder.param_hash() != encoder_hash {
        return Err(Error::Train(
            "frozen-speaker-encoder contract violated: parameters changed during decoder training"
                .into(),
        ));
    }
    model.completed_stage = plan.stage;
    Ok(stats)
}

/// Reconstruction epochs shared by stage 1 (sl_weight = 0) and stage 3.
/// With sl_weight exactly 0 the speaker-loss path is skipped entirely, so
/// the parameter trajectory is identical to plain reconstruction.
pub(crate) fn recon_epochs(
    model: &mut DecoderModel,
    plan: &TrainPlan,
    set: &TrainingSet,
    adaptor: &mut MelAdaptorModel,
    spk_encoder: &mut SpeakerEncoderModel,
) -> Result<Vec<EpochStats>> {
    let mut rng = ChaCha8Rng::seed_from_u64(plan.seed ^ 0xdec0de);
    let mut opt = Adam::new(plan.lr);
    let crop_frames = (plan.crop_max_s * 100.0).round() as usize;
    let mut order: Vec<usize> = (0..set.items.len()).collect();
    let mut stats = Vec::with_capacity(plan.epochs);
    let use_spk = model.cfg.use_speaker_embedding
        || model.cfg.variant == super::model::DecoderVariant::FastSpeech;
    let svc = model.cfg.variant == super::model::DecoderVariant::SpeakerVc;

    for epoch in 0..plan.epochs {
        order.shuffle(&mut rng);
        let mut l1_sum = 0.0f64;
        let mut sl_sum = 0.0f64;
        let mut total_sum = 0.0f64;
        for chunk in order.clone().chunks(4) {
            for &idx in chunk {
                let item = &set.items[idx];
                let take = crop_frames.min(item.frames);
                let start = if item.frames > take {
                    rng.random_range(0..item.frames - take)
                } else {
                    0
                };
                let (units, target, prosody) = crop_item(item, start, start + take);
                let spk = if use_spk {
                    let peers = &set.by_speaker[&item.speaker_id];
                    let pick = peers[rng.random_range(0..peers.len())];
                    Some(set.embeddings[pick].clone())
                } else {
                    None
                };
                // style from the same fragment as the ground truth
                let style_mel = if svc { Some(target.clone()) } else { None };

                let fwd = model.forward(
                    &units,
                    spk.as_ref(),
                    style_mel.as_ref(),
                    None,
                    &prosody,
                )?;
                let (l1, mut d_mel) = l1_loss(&fwd.mel, &target);
                let mut sl = 0.0f64;
                if plan.stage == 3 && plan.sl_weight != 0.0 {
                    let hop = model.cfg.mel.hop_length;
                    let wave_crop = item.wave.slice(start * hop, (start + take) * hop);
                    let ref_mel = spk_encoder.prepare_mel(&wave_crop)?;
                    let (ref_raw, _) = spk_encoder.forward_mel(&ref_mel);
                    let (adapted, a_cache) = adaptor.forward_mat(&fwd.mel);
                    let (gen_raw, e_cache) = spk_encoder.forward_mel(&adapted);
                    let x = vec![ref_raw.iter().map(|&v| v as f64).collect::<Vec<f64>>()];
                    let y = vec![gen_raw.iter().map(|&v| v as f64).collect::<Vec<f64>>()];
                    let (sl_val, d_y) = cosine_speaker_loss(&x, &y)?;
                    sl = sl_val;
                    let d_raw: Vec<f32> = d_y[0].iter().map(|&v| v as f32).collect();
                    let d_adapted = spk_encoder.backward_raw(&e_cache, &d_raw);
                    let d_pred = adaptor.backward_mat(&a_cache, &d_adapted, &adapted);
                    let w = plan.sl_weight as f32;
                    for i in 0..d_mel.data.len() {
                        d_mel.data[i] += w * d_pred.data[i];
                    }
                }
                model.backward(&fwd, &d_mel);
                l1_sum += l1;
                sl_sum += sl;
                total_sum += l1 + plan.sl_weight * sl;
            }
            opt.step(&mut model.body_params_mut());
            // frozen modules accumulate gradients through backprop; wipe
            adaptor.zero_grads();
            spk_encoder.zero_grads();
            for p in model.prosody_params_mut() {
                p.zero_grad();
            }
        }
        let n = set.items.len() as f64;
        stats.push(EpochStats {
            stage: plan.stage,
            epoch,
            l1: l1_sum / n,
            sl: sl_sum / n,
            pitch: 0.0,
            energy: 0.0,
            total: total_sum / n,
        });
    }
    Ok(stats)
}

fn prosody_epochs(
    model: &mut DecoderModel,
    plan: &TrainPlan,
    set: &TrainingSet,
) -> Result<Vec<EpochStats>> {
    let mut rng = ChaCha8Rng::seed_from_u64(plan.seed ^ 0x9105);
    let mut opt = Adam::new(plan.lr);
    let crop_frames = (plan.crop_max_s * 100.0).round() as usize;
    let mut order: Vec<usize> = (0..set.items.len()).collect();
    let mut stats = Vec::with_capacity(plan.epochs);
    let use_spk = model.cfg.use_speaker_embedding
        || model.cfg.variant == super::model::DecoderVariant::FastSpeech;
    let svc = model.cfg.variant == super::model::DecoderVariant::SpeakerVc;

    for epoch in 0..plan.epochs {
        order.shuffle(&mut rng);
        let mut pitch_sum = 0.0f64;
        let mut energy_sum = 0.0f64;
        for chunk in order.clone().chunks(4) {
            for &idx in chunk {
                let item = &set.items[idx];
                let take = crop_frames.min(item.frames);
                let start = if item.frames > take {
                    rng.random_range(0..item.frames - take)
                } else {
                    0
                };
                let (units, target, prosody) = crop_item(item, start, start + take);
                let spk = if use_spk {
                    let peers = &set.by_speaker[&item.speaker_id];
                    let pick = peers[rng.random_range(0..peers.len())];
                    Some(set.embeddings[pick].clone())
                } else {
                    None
                };
                // style vector computed but not trained in this stage
                let style_vec = if svc {
                    Some(
                        model
                            .style_enc
                            .as_ref()
                            .unwrap()
                            .forward_mat(&target)
                            .0,
                    )
                } else {
                    None
                };
                let (pl, el) =
                    model.prosody_step(&units, spk.as_ref(), style_vec.as_ref(), &prosody)?;
                pitch_sum += pl;
                energy_sum += el;
            }
            opt.step(&mut model.prosody_params_mut());
            // everything else stays frozen in stage 2
            for p in model.body_params_mut() {
                p.zero_grad();
            }
        }
        let n = set.items.len() as f64;
        stats.push(EpochStats {
            stage: 2,
            epoch,
            l1: 0.0,
            sl: 0.0,
            pitch: pitch_sum / n,
            energy: energy_sum / n,
            total: (pitch_sum + energy_sum) / n,
        });
    }
    Ok(stats)
}

fn crop_item(item: &TrainItem, start: usize, end: usize) -> (SoftUnits, Mat, ProsodyTargets) {
    let k = item.units.logits.cols;
    let m = item.target_mel.cols;
    let units = SoftUnits {
        logits: Mat::from_vec(
            end - start,
            k,
            item.units.logits.data[start * k..end * k].to_vec(),
        ),
        discrete: item.units.discrete[start..end].to_vec(),
    };
    let target = Mat::from_vec(
        end - start,
        m,
        item.target_mel.data[start * m..end * m].to_vec(),
    );
    (units, target, item.prosody.slice(start, end))
}
