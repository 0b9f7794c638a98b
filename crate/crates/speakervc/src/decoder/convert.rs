//! End-to-end voice conversion: source audio to soft units, reference
//! audio to conditioning, decoder forward with predicted prosody, and
//! mel inversion back to a waveform. Works identically for voiced and
//! whispered sources.

use crate::adaptor::MelAdaptorModel;
use crate::audio::{invert_mel, mel_spectrogram, MelSpectrogram, Waveform};
use crate::error::{Error, Result};
use crate::nn::Mat;
use crate::speaker::{SpeakerEmbedding, SpeakerEncoderModel};
use crate::units::{extract_frontend, extract_soft_units, SoftUnits, UnitCodebook, UnitProjection};

use super::model::{DecoderModel, DecoderVariant};
use super::style::StyleVector;

/// A complete conversion system: content models, conditioning models and
/// one decoder.
pub struct VcSystem {
    pub codebook: UnitCodebook,
    pub projection: UnitProjection,
    pub spk_encoder: SpeakerEncoderModel,
    pub adaptor: MelAdaptorModel,
    pub decoder: DecoderModel,
    pub gl_iterations: usize,
}

impl VcSystem {
    /// Soft units of a source waveform.
    pub fn source_units(&self, source: &Waveform) -> Result<SoftUnits> {
        let feats = extract_frontend(source)?;
        extract_soft_units(&feats, &self.projection, &self.codebook)
    }

    /// Conditioning signals from reference audio.
    pub fn reference_conditioning(
        &self,
        reference: &Waveform,
    ) -> Result<(Option<SpeakerEmbedding>, Option<StyleVector>)> {
        let spk = if self.decoder.cfg.use_speaker_embedding
            || self.decoder.variant() == DecoderVariant::FastSpeech
        {
            Some(self.spk_encoder.embed(reference)?)
        } else {
            None
        };
        let style = if self.decoder.variant() == DecoderVariant::SpeakerVc {
            let mel = mel_spectrogram(reference, &self.decoder.cfg.mel)?;
            Some(self.decoder.style_enc.as_ref().unwrap().encode(&mel)?)
        } else {
            None
        };
        Ok((spk, style))
    }

    /// Decoder mel output for given units and conditioning (predicted
    /// prosody).
    pub fn convert_units(
        &self,
        units: &SoftUnits,
        spk: Option<&SpeakerEmbedding>,
        style: Option<&StyleVector>,
    ) -> Result<MelSpectrogram> {
        self.decoder.infer(units, spk, style, None)
    }

    /// Adapted (speaker-side) mel of a decoder output, for similarity
    /// scoring without vocoding.
    pub fn adapt_mel(&self, mel: &MelSpectrogram) -> Result<MelSpectrogram> {
        self.adaptor.adapt(mel)
    }
}

/// Convert `source` into the voice of `reference`.
pub fn convert(system: &VcSystem, source: &Waveform, reference: &Waveform) -> Result<Waveform> {
    if source.duration_s() < 1.0 {
        return Err(Error::TooShort {
            need_s: 1.0,
            got_s: source.duration_s(),
        });
    }
    if reference.duration_s() < 0.5 {
        return Err(Error::TooShort {
            need_s: 0.5,
            got_s: reference.duration_s(),
        });
    }
    let units = system.source_units(source)?;
    let (spk, style) = system.reference_conditioning(reference)?;
    let mel = system.convert_units(&units, spk.as_ref(), style.as_ref())?;
    invert_mel(&mel, system.gl_iterations.max(1))
}

/// Mel output of a conversion, pre-inversion (used by the streaming
/// parity checks and scoring shortcuts).
pub fn convert_to_mel(
    system: &VcSystem,
    source: &Waveform,
    reference: &Waveform,
) -> Result<(MelSpectrogram, Mat)> {
    let units = system.source_units(source)?;
    let (spk, style) = system.reference_conditioning(reference)?;
    let mel = system.convert_units(&units, spk.as_ref(), style.as_ref())?;
    let mat = Mat::from_vec(mel.n_frames(), mel.n_mels(), mel.values().to_vec());
    Ok((mel, mat))
}
