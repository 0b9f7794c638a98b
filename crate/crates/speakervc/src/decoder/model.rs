//! The two mel decoders. Both consume soft units at the decoder frame
//! rate and emit mel frames 1:1 (voice conversion preserves timing; there
//! is no duration model). The FastSpeech-style variant conditions by
//! broadcast-concatenating the speaker embedding to the unit features;
//! the SpeakerVC variant fuses speaker embedding and acoustic style
//! vector through a learned affine modulation of the encoder output.
//! Pitch and energy predictors sit on the conditioned hidden features so
//! predicted prosody follows the target speaker.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

use super::prosody::{prosody_features, ProsodyTargets};
use super::style::{StyleEncoder, StyleVector, STYLE_DIM};
use crate::audio::{MelConfig, MelFilterbank, MelSpectrogram};
use crate::error::{Error, Result};
use crate::nn::{Dense, LstmCache, LstmLayer, Mat, Param};
use crate::speaker::{SpeakerEmbedding, EMBEDDING_DIM};
use crate::units::SoftUnits;

pub const HIDDEN: usize = 64;
const PRED_HIDDEN: usize = 32;
const UNITS_SCALE: f32 = 0.1;
const MEL_OUT_SCALE: f32 = 8.0;
const MEL_OUT_SHIFT: f32 = -4.0;
/// Predicted pitch below ln(60 Hz) counts as unvoiced.
const PITCH_FLOOR: f32 = 4.094344562;

fn median_filter(x: &[f32], radius: usize) -> Vec<f32> {
    let n = x.len();
    let mut out = vec![0.0f32; n];
    for t in 0..n {
        let lo = t.saturating_sub(radius);
        let hi = (t + radius + 1).min(n);
        let mut vals: Vec<f32> = x[lo..hi].to_vec();
        vals.sort_by(|a, b| a.partial_cmp(b).unwrap());
        out[t] = vals[vals.len() / 2];
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DecoderVariant {
    FastSpeech,
    SpeakerVc,
}

impl DecoderVariant {
    pub fn as_str(&self) -> &'static str {
        match self {
            DecoderVariant::FastSpeech => "fastspeech",
            DecoderVariant::SpeakerVc => "speakervc",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "fastspeech" => Ok(DecoderVariant::FastSpeech),
            "speakervc" => Ok(DecoderVariant::SpeakerVc),
            other => Err(Error::InvalidArgument(format!(
                "unknown decoder variant {other}"
            ))),
        }
    }
}

#[derive(Debug, Clone)]
pub struct DecoderConfig {
    pub variant: DecoderVariant,
    pub k_units: usize,
    pub use_speaker_embedding: bool,
    pub mel: MelConfig,
}

impl DecoderConfig {
    pub fn new(variant: DecoderVariant, k_units: usize) -> Self {
        DecoderConfig {
            variant,
            k_units,
            use_speaker_embedding: true,
            mel: MelConfig::decoder(),
        }
    }

    fn input_dim(&self) -> usize {
        match self.variant {
            DecoderVariant::FastSpeech => self.k_units + EMBEDDING_DIM,
            DecoderVariant::SpeakerVc => self.k_units,
        }
    }

    fn cond_dim(&self) -> usize {
        match self.variant {
            DecoderVariant::FastSpeech => 0,
            DecoderVariant::SpeakerVc => {
                STYLE_DIM
                    + if self.use_speaker_embedding {
                        EMBEDDING_DIM
                    } else {
                        0
                    }
            }
        }
    }
}

#[derive(Debug, Clone)]
struct Predictor {
    lstm: LstmLayer,
    head: Dense,
}

impl Predictor {
    fn seeded(rng: &mut ChaCha8Rng) -> Self {
        Predictor {
            lstm: LstmLayer::seeded(PRED_HIDDEN, HIDDEN, rng),
            head: Dense::seeded(1, PRED_HIDDEN, rng),
        }
    }

    fn forward(&self, h: &Mat) -> (Vec<f32>, LstmCache, Mat) {
        let (hid, cache) = self.lstm.forward(h);
        let out = self.head.forward(&hid);
        (out.data.clone(), cache, hid)
    }

    /// L1 regression backward; steps nothing, only accumulates.
    fn backward(&mut self, h: &Mat, cache: &LstmCache, hid: &Mat, d_out: &[f32]) {
        let d_mat = Mat::from_vec(d_out.len(), 1, d_out.to_vec());
        let d_hid = self.head.backward(hid, &d_mat);
        let _ = self.lstm.backward(h, cache, &d_hid);
    }

    fn params(&self) -> Vec<&Param> {
        vec![&self.lstm.wx, &self.lstm.wh, &self.lstm.b, &self.head.w, &self.head.b]
    }

    fn params_mut(&mut self) -> Vec<&mut Param> {
        vec![
            &mut self.lstm.wx,
            &mut self.lstm.wh,
            &mut self.lstm.b,
            &mut self.head.w,
            &mut self.head.b,
        ]
    }
}

/// One mel decoder with its staged-training progress marker.
#[derive(Debug, Clone)]
pub struct DecoderModel {
    pub cfg: DecoderConfig,
    /// Highest completed training stage (0 = untrained).
    pub completed_stage: u8,
    in_proj: Dense,
    encoder: LstmLayer,
    film: Option<Dense>,
    pub style_enc: Option<StyleEncoder>,
    pitch_pred: Predictor,
    energy_pred: Predictor,
    pros_proj: Dense,
    decoder: LstmLayer,
    mel_out: Dense,
    filterbank: MelFilterbank,
}

/// Conditioned encoder activations.
struct Encoded {
    input: Mat,
    h0: Mat,
    enc_cache: LstmCache,
    h_enc: Mat,
    film_scale: Vec<f32>,
    cond: Vec<f32>,
    style_cache: Option<super::style::StyleCache>,
    h1: Mat,
}

/// Caches for one forward pass.
pub struct DecoderForward {
    pub mel: Mat,
    enc: Encoded,
    pros_feat: Mat,
    h2: Mat,
    dec_cache: LstmCache,
    h_dec: Mat,
    out_in: Mat,
}

impl DecoderModel {
    pub fn seeded(cfg: DecoderConfig, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let film = match cfg.variant {
            DecoderVariant::SpeakerVc => Some(Dense::seeded(2 * HIDDEN, cfg.cond_dim(), &mut rng)),
            DecoderVariant::FastSpeech => None,
        };
        let style_enc = match cfg.variant {
            DecoderVariant::SpeakerVc => Some(StyleEncoder::seeded(cfg.mel.n_mels, &mut rng)),
            DecoderVariant::FastSpeech => None,
        };
        let filterbank = MelFilterbank::new(&cfg.mel);
        DecoderModel {
            in_proj: Dense::seeded(HIDDEN, cfg.input_dim(), &mut rng),
            encoder: LstmLayer::seeded(HIDDEN, HIDDEN, &mut rng),
            film,
            style_enc,
            pitch_pred: Predictor::seeded(&mut rng),
            energy_pred: Predictor::seeded(&mut rng),
            pros_proj: Dense::seeded(HIDDEN, 3 + cfg.mel.n_mels, &mut rng),
            decoder: LstmLayer::seeded(HIDDEN, HIDDEN, &mut rng),
            // the output layer sees the prosody features directly so the
            // harmonic comb has a linear path into the mel
            mel_out: Dense::seeded(cfg.mel.n_mels, HIDDEN + 3 + cfg.mel.n_mels, &mut rng),
            cfg,
            completed_stage: 0,
            filterbank,
        }
    }

    pub fn variant(&self) -> DecoderVariant {
        self.cfg.variant
    }

    fn check_conditioning(
        &self,
        spk: Option<&SpeakerEmbedding>,
        style: Option<&StyleVector>,
    ) -> Result<()> {
        match self.cfg.variant {
            DecoderVariant::FastSpeech => {
                if spk.is_none() {
                    return Err(Error::InvalidArgument(
                        "fastspeech decoder requires a speaker embedding".into(),
                    ));
                }
                if style.is_some() {
                    return Err(Error::InvalidArgument(
                        "fastspeech decoder takes no style vector".into(),
                    ));
                }
            }
            DecoderVariant::SpeakerVc => {
                if style.is_none() {
                    return Err(Error::InvalidArgument(
                        "speakervc decoder requires a style vector".into(),
                    ));
                }
                if self.cfg.use_speaker_embedding && spk.is_none() {
                    return Err(Error::InvalidArgument(
                        "this speakervc decoder requires a speaker embedding".into(),
                    ));
                }
                if !self.cfg.use_speaker_embedding && spk.is_some() {
                    return Err(Error::InvalidArgument(
                        "this speakervc decoder was built without the speaker embedding path"
                            .into(),
                    ));
                }
            }
        }
        Ok(())
    }

    /// Conditioned encoder hidden features (shared by the mel path and
    /// the prosody predictors).
    fn encode(
        &self,
        units: &SoftUnits,
        spk: Option<&SpeakerEmbedding>,
        style_mel: Option<&Mat>,
        style_vec: Option<&StyleVector>,
    ) -> Encoded {
        let t_len = units.logits.rows;
        let input_dim = self.cfg.input_dim();
        let mut input = Mat::zeros(t_len, input_dim);
        for t in 0..t_len {
            let row = input.row_mut(t);
            for (j, &v) in units.logits.row(t).iter().enumerate() {
                row[j] = v * UNITS_SCALE;
            }
            if self.cfg.variant == DecoderVariant::FastSpeech {
                let emb = spk.unwrap().vector();
                row[self.cfg.k_units..].copy_from_slice(emb);
            }
        }
        let h0 = self.in_proj.forward(&input);
        let (h_enc, enc_cache) = self.encoder.forward(&h0);

        let mut film_scale = vec![0.0f32; HIDDEN];
        let mut cond = Vec::new();
        let mut style_cache = None;
        let mut h1 = h_enc.clone();
        if self.cfg.variant == DecoderVariant::SpeakerVc {
            if self.cfg.use_speaker_embedding {
                cond.extend_from_slice(spk.unwrap().vector());
            }
            let style = match (style_vec, style_mel) {
                (Some(v), _) => v.clone(),
                (None, Some(mel)) => {
                    let (v, cache) = self.style_enc.as_ref().unwrap().forward_mat(mel);
                    style_cache = Some(cache);
                    v
                }
                (None, None) => unreachable!("conditioning checked earlier"),
            };
            cond.extend_from_slice(&style.vector);
            let film_out = self.film.as_ref().unwrap().forward_vec(&cond);
            film_scale.copy_from_slice(&film_out[..HIDDEN]);
            for t in 0..t_len {
                let row = h1.row_mut(t);
                for j in 0..HIDDEN {
                    row[j] = h_enc.row(t)[j] * (1.0 + film_scale[j]) + film_out[HIDDEN + j];
                }
            }
        }
        Encoded {
            input,
            h0,
            enc_cache,
            h_enc,
            film_scale,
            cond,
            style_cache,
            h1,
        }
    }

    /// Full teacher-forced (or externally supplied prosody) forward pass.
    pub fn forward(
        &self,
        units: &SoftUnits,
        spk: Option<&SpeakerEmbedding>,
        style_mel: Option<&Mat>,
        style_vec: Option<&StyleVector>,
        prosody: &ProsodyTargets,
    ) -> Result<DecoderForward> {
        if style_mel.is_none() {
            self.check_conditioning(spk, style_vec)?;
        } else if self.cfg.variant != DecoderVariant::SpeakerVc {
            return Err(Error::InvalidArgument(
                "style fragments apply only to the speakervc decoder".into(),
            ));
        } else if self.cfg.use_speaker_embedding && spk.is_none() {
            return Err(Error::InvalidArgument(
                "this speakervc decoder requires a speaker embedding".into(),
            ));
        }
        if prosody.len() != units.n_frames() {
            return Err(Error::DimMismatch(format!(
                "units have {} frames but prosody has {}",
                units.n_frames(),
                prosody.len()
            )));
        }
        let enc = self.encode(units, spk, style_mel, style_vec);

        let pros_feat =
            prosody_features(&prosody.pitch, &prosody.energy, &self.filterbank, &self.cfg.mel);
        let p = self.pros_proj.forward(&pros_feat);
        let mut h2 = enc.h1.clone();
        for i in 0..h2.data.len() {
            h2.data[i] += p.data[i];
        }
        let (h_dec, dec_cache) = self.decoder.forward(&h2);
        let mut out_in = Mat::zeros(h_dec.rows, h_dec.cols + pros_feat.cols);
        for t in 0..h_dec.rows {
            let row = out_in.row_mut(t);
            row[..h_dec.cols].copy_from_slice(h_dec.row(t));
            row[h_dec.cols..].copy_from_slice(pros_feat.row(t));
        }
        let raw_out = self.mel_out.forward(&out_in);
        let floor = self.cfg.mel.log_floor as f32;
        let mut mel = raw_out;
        mel.data
            .iter_mut()
            .for_each(|v| *v = (*v * MEL_OUT_SCALE + MEL_OUT_SHIFT).max(floor));

        Ok(DecoderForward {
            mel,
            enc,
            pros_feat,
            h2,
            dec_cache,
            h_dec,
            out_in,
        })
    }

    /// Backward from d(loss)/d(mel); accumulates gradients on the decoder
    /// body (and style encoder). Prosody predictors are untouched.
    pub fn backward(&mut self, fwd: &DecoderForward, d_mel: &Mat) {
        let floor = self.cfg.mel.log_floor as f32;
        let mut d_raw = d_mel.clone();
        for (i, v) in d_raw.data.iter_mut().enumerate() {
            if fwd.mel.data[i] <= floor {
                *v = 0.0;
            } else {
                *v *= MEL_OUT_SCALE;
            }
        }
        let d_out_in = self.mel_out.backward(&fwd.out_in, &d_raw);
        let mut d_hdec = Mat::zeros(fwd.h_dec.rows, fwd.h_dec.cols);
        for t in 0..fwd.h_dec.rows {
            d_hdec
                .row_mut(t)
                .copy_from_slice(&d_out_in.row(t)[..fwd.h_dec.cols]);
        }
        let d_h2 = self.decoder.backward(&fwd.h2, &fwd.dec_cache, &d_hdec);
        // h2 = h1 + pros_proj(feat): gradient splits
        let _ = self.pros_proj.backward(&fwd.pros_feat, &d_h2);
        let d_h1 = d_h2;
        let d_henc = if self.cfg.variant == DecoderVariant::SpeakerVc {
            // h1 = h_enc * (1 + s) + b
            let mut d_scale = vec![0.0f32; HIDDEN];
            let mut d_shift = vec![0.0f32; HIDDEN];
            let mut d_henc = Mat::zeros(d_h1.rows, HIDDEN);
            for t in 0..d_h1.rows {
                for j in 0..HIDDEN {
                    let d = d_h1.row(t)[j];
                    d_scale[j] += d * fwd.enc.h_enc.row(t)[j];
                    d_shift[j] += d;
                    d_henc.row_mut(t)[j] = d * (1.0 + fwd.enc.film_scale[j]);
                }
            }
            let cond_mat = Mat::from_vec(1, fwd.enc.cond.len(), fwd.enc.cond.clone());
            let mut d_film = vec![0.0f32; 2 * HIDDEN];
            d_film[..HIDDEN].copy_from_slice(&d_scale);
            d_film[HIDDEN..].copy_from_slice(&d_shift);
            let d_film_mat = Mat::from_vec(1, 2 * HIDDEN, d_film);
            let d_cond = self.film.as_mut().unwrap().backward(&cond_mat, &d_film_mat);
            // style gradient flows into the style encoder when the style
            // came from a mel fragment
            if let Some(cache) = &fwd.enc.style_cache {
                let spk_len = if self.cfg.use_speaker_embedding {
                    EMBEDDING_DIM
                } else {
                    0
                };
                let d_style = &d_cond.row(0)[spk_len..];
                self.style_enc.as_mut().unwrap().backward(cache, d_style);
            }
            d_henc
        } else {
            d_h1
        };
        let d_h0 = self.encoder.backward(&fwd.enc.h0, &fwd.enc.enc_cache, &d_henc);
        let _ = self.in_proj.backward(&fwd.enc.input, &d_h0);
    }

    /// Prosody prediction over conditioned hidden features.
    pub fn predict_prosody(
        &self,
        units: &SoftUnits,
        spk: Option<&SpeakerEmbedding>,
        style_vec: Option<&StyleVector>,
    ) -> Result<ProsodyTargets> {
        self.check_conditioning(spk, style_vec)?;
        let h1 = self.encode(units, spk, None, style_vec).h1;
        let (pitch_raw, _, _) = self.pitch_pred.forward(&h1);
        let (energy, _, _) = self.energy_pred.forward(&h1);
        // median smoothing plus a slow causal tracker: the rendered comb
        // must hold a near-stationary period for phase reconstruction to
        // lock onto, and a causal smoother keeps streaming parity exact
        // median smoothing plus a slow causal tracker: phase
        // reconstruction needs a near-stationary comb to lock onto, and a
        // causal smoother keeps streaming parity exact
        let smoothed = median_filter(&pitch_raw, 3);
        let mut pitch = vec![0.0f32; smoothed.len()];
        let mut track: Option<f32> = None;
        for (t, &p) in smoothed.iter().enumerate() {
            if p >= PITCH_FLOOR {
                let held = match track {
                    None => p,
                    // limit drift to about 0.2% per frame
                    Some(prev) => prev + (p - prev).clamp(-0.002, 0.002),
                };
                track = Some(held);
                pitch[t] = held;
            }
        }
        Ok(ProsodyTargets { pitch, energy })
    }

    /// Stage-2 prosody training step: L1 on pitch and energy; gradients
    /// accumulate only on the predictors.
    pub fn prosody_step(
        &mut self,
        units: &SoftUnits,
        spk: Option<&SpeakerEmbedding>,
        style_vec: Option<&StyleVector>,
        targets: &ProsodyTargets,
    ) -> Result<(f64, f64)> {
        self.check_conditioning(spk, style_vec)?;
        let h1 = self.encode(units, spk, None, style_vec).h1;
        let (pitch_hat, p_cache, p_hid) = self.pitch_pred.forward(&h1);
        let (energy_hat, e_cache, e_hid) = self.energy_pred.forward(&h1);
        let n = pitch_hat.len().max(1) as f64;
        let mut pitch_loss = 0.0f64;
        let d_pitch: Vec<f32> = pitch_hat
            .iter()
            .zip(&targets.pitch)
            .map(|(a, b)| {
                let d = a - b;
                pitch_loss += (d as f64).abs();
                d.signum() / n as f32
            })
            .collect();
        let mut energy_loss = 0.0f64;
        let d_energy: Vec<f32> = energy_hat
            .iter()
            .zip(&targets.energy)
            .map(|(a, b)| {
                let d = a - b;
                energy_loss += (d as f64).abs();
                d.signum() / n as f32
            })
            .collect();
        self.pitch_pred.backward(&h1, &p_cache, &p_hid, &d_pitch);
        self.energy_pred.backward(&h1, &e_cache, &e_hid, &d_energy);
        Ok((pitch_loss / n, energy_loss / n))
    }

    /// Inference: teacher prosody if given, otherwise predicted.
    pub fn infer(
        &self,
        units: &SoftUnits,
        spk: Option<&SpeakerEmbedding>,
        style_vec: Option<&StyleVector>,
        prosody: Option<&ProsodyTargets>,
    ) -> Result<MelSpectrogram> {
        let prosody = match prosody {
            Some(p) => p.clone(),
            None => self.predict_prosody(units, spk, style_vec)?,
        };
        let fwd = self.forward(units, spk, None, style_vec, &prosody)?;
        MelSpectrogram::from_values(fwd.mel.data.clone(), fwd.mel.rows, self.cfg.mel.clone())
    }

    pub fn body_params_mut(&mut self) -> Vec<&mut Param> {
        let mut v = Vec::new();
        v.extend(self.in_proj.params_mut());
        v.push(&mut self.encoder.wx);
        v.push(&mut self.encoder.wh);
        v.push(&mut self.encoder.b);
        if let Some(f) = &mut self.film {
            v.extend(f.params_mut());
        }
        if let Some(s) = &mut self.style_enc {
            v.extend(s.params_mut());
        }
        v.extend(self.pros_proj.params_mut());
        v.push(&mut self.decoder.wx);
        v.push(&mut self.decoder.wh);
        v.push(&mut self.decoder.b);
        v.extend(self.mel_out.params_mut());
        v
    }

    pub fn prosody_params_mut(&mut self) -> Vec<&mut Param> {
        let mut v = Vec::new();
        v.extend(self.pitch_pred.params_mut());
        v.extend(self.energy_pred.params_mut());
        v
    }

    pub fn params(&self) -> Vec<&Param> {
        let mut v = Vec::new();
        v.extend(self.in_proj.params());
        v.push(&self.encoder.wx);
        v.push(&self.encoder.wh);
        v.push(&self.encoder.b);
        if let Some(f) = &self.film {
            v.extend(f.params());
        }
        if let Some(s) = &self.style_enc {
            v.extend(s.params());
        }
        v.extend(self.pitch_pred.params());
        v.extend(self.energy_pred.params());
        v.extend(self.pros_proj.params());
        v.push(&self.decoder.wx);
        v.push(&self.decoder.wh);
        v.push(&self.decoder.b);
        v.extend(self.mel_out.params());
        v
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param> {
        let mut v = Vec::new();
        v.extend(self.in_proj.params_mut());
        v.push(&mut self.encoder.wx);
        v.push(&mut self.encoder.wh);
        v.push(&mut self.encoder.b);
        if let Some(f) = &mut self.film {
            v.extend(f.params_mut());
        }
        if let Some(s) = &mut self.style_enc {
            v.extend(s.params_mut());
        }
        v.extend(self.pitch_pred.params_mut());
        v.extend(self.energy_pred.params_mut());
        v.extend(self.pros_proj.params_mut());
        v.push(&mut self.decoder.wx);
        v.push(&mut self.decoder.wh);
        v.push(&mut self.decoder.b);
        v.extend(self.mel_out.params_mut());
        v
    }

    pub fn zero_grads(&mut self) {
        for p in self.params_mut() {
            p.zero_grad();
        }
    }

    pub fn param_hash(&self) -> String {
        let mut hasher = Sha256::new();
        for p in self.params() {
            for v in &p.w {
                hasher.update(v.to_le_bytes());
            }
        }
        let digest = hasher.finalize();
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }
}


#[cfg(test)]
mod tests {
    use super::*;
    use crate::speaker::SpeakerEmbedding;

    fn toy_units(frames: usize, k: usize) -> SoftUnits {
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        use rand::Rng;
        SoftUnits {
            logits: Mat::from_vec(
                frames,
                k,
                (0..frames * k).map(|_| rng.random_range(-3.0..3.0)).collect(),
            ),
            discrete: (0..frames).map(|t| (t % k) as u32).collect(),
        }
    }

    fn toy_prosody(frames: usize) -> ProsodyTargets {
        ProsodyTargets {
            pitch: (0..frames)
                .map(|t| if t % 3 == 0 { 0.0 } else { 5.4 })
                .collect(),
            energy: vec![3.0; frames],
        }
    }

    fn toy_emb() -> SpeakerEmbedding {
        let mut v = vec![0.0f32; EMBEDDING_DIM];
        v[0] = 1.0;
        v[3] = -0.5;
        SpeakerEmbedding::from_raw(v).unwrap()
    }

    #[test]
    fn output_frames_match_input_frames() {
        let model = DecoderModel::seeded(DecoderConfig::new(DecoderVariant::FastSpeech, 16), 1);
        let units = toy_units(100, 16);
        let mel = model
            .infer(&units, Some(&toy_emb()), None, Some(&toy_prosody(100)))
            .unwrap();
        assert_eq!(mel.n_frames(), 100);
        assert_eq!(mel.n_mels(), 80);
        assert!(mel
            .values()
            .iter()
            .all(|&v| v >= MelConfig::decoder().log_floor as f32));
    }

    #[test]
    fn inference_is_deterministic() {
        let model = DecoderModel::seeded(DecoderConfig::new(DecoderVariant::FastSpeech, 16), 2);
        let units = toy_units(40, 16);
        let a = model
            .infer(&units, Some(&toy_emb()), None, None)
            .unwrap();
        let b = model
            .infer(&units, Some(&toy_emb()), None, None)
            .unwrap();
        assert_eq!(a.values(), b.values());
    }

    #[test]
    fn conditioning_mismatches_error() {
        let fs = DecoderModel::seeded(DecoderConfig::new(DecoderVariant::FastSpeech, 16), 3);
        let units = toy_units(30, 16);
        let style = StyleVector { vector: vec![0.0; STYLE_DIM] };
        assert!(fs.infer(&units, None, None, None).is_err()); // spk required
        assert!(fs
            .infer(&units, Some(&toy_emb()), Some(&style), None)
            .is_err()); // style not accepted

        let svc = DecoderModel::seeded(DecoderConfig::new(DecoderVariant::SpeakerVc, 16), 4);
        assert!(svc.infer(&units, Some(&toy_emb()), None, None).is_err()); // style required

        let mut cfg = DecoderConfig::new(DecoderVariant::SpeakerVc, 16);
        cfg.use_speaker_embedding = false;
        let svc_noemb = DecoderModel::seeded(cfg, 5);
        assert!(svc_noemb
            .infer(&units, Some(&toy_emb()), Some(&style), None)
            .is_err()); // spk path absent
        assert!(svc_noemb.infer(&units, None, Some(&style), None).is_ok());
    }

    #[test]
    fn teacher_prosody_length_mismatch_errors() {
        let model = DecoderModel::seeded(DecoderConfig::new(DecoderVariant::FastSpeech, 16), 6);
        let units = toy_units(30, 16);
        let bad = toy_prosody(29);
        assert!(model
            .forward(&units, Some(&toy_emb()), None, None, &bad)
            .is_err());
    }

    #[test]
    fn speakervc_output_depends_on_conditioning() {
        let model = DecoderModel::seeded(DecoderConfig::new(DecoderVariant::SpeakerVc, 16), 7);
        let units = toy_units(50, 16);
        let style_a = StyleVector { vector: vec![0.5; STYLE_DIM] };
        let style_b = StyleVector { vector: vec![-0.5; STYLE_DIM] };
        let mut emb_b = vec![0.0f32; EMBEDDING_DIM];
        emb_b[1] = 1.0;
        let a = model
            .infer(&units, Some(&toy_emb()), Some(&style_a), Some(&toy_prosody(50)))
            .unwrap();
        let b = model
            .infer(
                &units,
                Some(&SpeakerEmbedding::from_raw(emb_b).unwrap()),
                Some(&style_b),
                Some(&toy_prosody(50)),
            )
            .unwrap();
        let mean_diff: f64 = a
            .values()
            .iter()
            .zip(b.values())
            .map(|(x, y)| (x - y).abs() as f64)
            .sum::<f64>()
            / a.values().len() as f64;
        assert!(mean_diff > 1e-4, "conditioning had no effect: {mean_diff}");
    }

    #[test]
    fn param_hash_tracks_changes() {
        let mut model = DecoderModel::seeded(DecoderConfig::new(DecoderVariant::FastSpeech, 16), 8);
        let h1 = model.param_hash();
        assert_eq!(h1, model.param_hash());
        model.params_mut()[0].w[0] += 1.0;
        assert_ne!(h1, model.param_hash());
    }
}
